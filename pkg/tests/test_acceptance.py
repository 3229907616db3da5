"""Acceptance suite: one test per criterion, each logging a single PASS/FAIL line.

Criteria 5, 6 and 8 share one 10-seed ablation on the default synthetic cohort,
run through the command line exactly as a user would. Run alone with

    pytest tests/test_acceptance.py -v
"""

import json
import math
import time

import numpy as np
import pytest

from cckd.cli import main
from cckd.features import load_cohort
from cckd.losses import (ContrastiveBatch, DistillBatch, LossWeights, bce_loss, ckd_loss,
                         combined_loss, info_nce)
from cckd.metrics import ScoredSet, auroc, bootstrap_ci, threshold_diagnostics
from cckd.numerics import MlpSpec, gradient_check, init_mlp, make_rng
from cckd.training import _loss_and_grads, _Parts

N_SEEDS = 10


def _line(log, number, passed, text):
    log(f"ACCEPTANCE {number:<3} {'PASS' if passed else 'FAIL'}  {text}")


def _strip_notes(src, dst):
    lines = []
    for line in src.read_text().splitlines():
        obj = json.loads(line)
        obj["note_emb"] = None
        lines.append(json.dumps(obj))
    dst.write_text("\n".join(lines) + "\n")


@pytest.fixture(scope="module")
def default_data(tmp_path_factory):
    d = tmp_path_factory.mktemp("default_cohort")
    assert main(["gen", "--out", str(d)]) == 0
    return d


@pytest.fixture(scope="module")
def ablation(default_data, tmp_path_factory):
    out = tmp_path_factory.mktemp("ablation")
    t0 = time.perf_counter()
    code = main(["ablate", "--data", str(default_data), "--seeds", str(N_SEEDS), "--n-boot", "1000",
                 "--out", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    means = {row["variant"]: row["auroc"] for row in summary["summary"]}
    reports = [json.loads((out / f"seed_{s}" / "report.json").read_text()) for s in range(N_SEEDS)]
    return {"dir": out, "means": means, "reports": reports, "seconds": elapsed}


# -- 1 ------------------------------------------------------------------------

def test_1_gradient_correctness(acceptance_log):
    t0 = time.perf_counter()
    rng = make_rng(1001)
    w = LossWeights(tau_contrastive=0.2, tau_ckd=0.2, lambda_ckd=0.7, lambda_contrastive=1.3, lambda_bce=0.9,
                    symmetric_infonce=True)
    probe = dict(h=1e-5, n_probes=100)
    errs = {}

    fx, fy = rng.normal(size=(16, 8)), rng.normal(size=(16, 8))
    errs["info_nce"] = gradient_check(
        lambda p: (lambda r: (r[0], [r[1], r[2]]))(info_nce(ContrastiveBatch(p[0], p[1]), w)),
        [fx, fy], rng=make_rng(1), **probe)

    t, s = rng.normal(scale=2, size=128), rng.normal(scale=2, size=128)
    errs["ckd_loss"] = gradient_check(
        lambda p: (lambda r: (r[0], [r[1]]))(ckd_loss(DistillBatch(t, p[0]), w)),
        [s], rng=make_rng(2), **probe)

    z, y = rng.normal(scale=3, size=128), rng.integers(0, 2, size=128).astype(float)
    errs["bce_loss"] = gradient_check(
        lambda p: (lambda r: (r[0], [r[1]]))(bce_loss(p[0], y)), [z], rng=make_rng(3), **probe)

    n = 32
    s2, y2, t2 = rng.normal(size=n), rng.integers(0, 2, size=n).astype(float), rng.normal(scale=2, size=n)
    fx2, fy2 = rng.normal(size=(n, 4)), rng.normal(size=(n, 4))

    def combined(p):
        r = combined_loss(w, student_logits=p[0], labels=y2, teacher_logits=t2, fx=p[1], fy=p[2])
        return r.loss, [r.d_student_logits, r.d_fx, r.d_fy]

    errs["combined_loss"] = gradient_check(combined, [s2, fx2, fy2], rng=make_rng(4), **probe)

    parts = _Parts(init_mlp(MlpSpec((12, 16, 8), "tanh", activate_output=True), make_rng(5)),
                   init_mlp(MlpSpec((8, 1)), make_rng(6)),
                   init_mlp(MlpSpec((8, 4)), make_rng(7)),
                   init_mlp(MlpSpec((6, 4)), make_rng(8)))
    x, notes = rng.normal(size=(n, 12)), rng.normal(size=(n, 6))

    def student(arrays):
        res, grads = _loss_and_grads(parts.with_arrays(arrays), w, x, y2, t2, notes)
        return res.loss, grads

    errs["student_end_to_end"] = gradient_check(student, parts.arrays(), rng=make_rng(9), **probe)
    elapsed = time.perf_counter() - t0

    worst = max(errs.values())
    passed = worst < 1e-4 and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in errs.items())
    _line(acceptance_log, "1", passed,
          f"gradient check, 100 probes, h=1e-5: max rel err {worst:.1e} < 1e-4 ({detail}); "
          f"runtime {elapsed:.1f} s < 30 s")
    assert passed


# -- 2 ------------------------------------------------------------------------

def test_2_infonce_degenerate_oracle(acceptance_log):
    errs = []
    for n in (2, 8, 64):
        v = np.tile(make_rng(n).normal(size=(1, 5)), (n, 1))
        loss, _, _ = info_nce(ContrastiveBatch(v, v), LossWeights())
        errs.append(abs(loss - math.log(n)))
    loss, _, _ = info_nce(ContrastiveBatch(np.eye(2), np.eye(2)), LossWeights(tau_contrastive=1.0))
    err_pair = abs(loss - math.log(1 + math.exp(-1)))
    passed = max(errs) < 1e-9 and err_pair < 1e-9
    _line(acceptance_log, "2", passed,
          f"InfoNCE: |loss - ln N| max {max(errs):.1e} for N in 2,8,64; "
          f"orthonormal N=2 loss {loss:.6f} vs ln(1+e^-1), err {err_pair:.1e} (tol 1e-9)")
    assert passed


# -- 3 ------------------------------------------------------------------------

def test_3_ckd_closed_form(acceptance_log):
    s = np.array([0.0, 2.0])
    w = LossWeights(tau_ckd=1.0, lambda_contrastive=0.0, lambda_bce=0.0)
    loss, _ = ckd_loss(DistillBatch(s, s), w)
    err = abs(loss - math.log(1 + math.exp(-2)))
    rng = make_rng(3)
    res = combined_loss(w, student_logits=rng.normal(size=16), teacher_logits=rng.normal(size=16))
    zero_teacher = res.d_teacher_logits is not None and bool(np.all(res.d_teacher_logits == 0.0))
    passed = err < 1e-9 and zero_teacher
    _line(acceptance_log, "3", passed,
          f"CKD N=2, KL=0, |dlogit|=2: loss {loss:.6f} vs ln(1+e^-2), err {err:.1e} (tol 1e-9); "
          f"teacher-logit gradient identically zero: {zero_teacher}")
    assert passed


# -- 4 ------------------------------------------------------------------------

def _pair_oracle(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


def test_4_auroc_oracle(acceptance_log):
    rng = make_rng(4004)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 201))
        labels = rng.integers(0, 2, size=n)
        labels[:2] = (0, 1)
        probs = rng.uniform(size=n)
        ties = rng.uniform(size=n) < 0.4
        probs[ties] = np.round(probs[ties] * 8) / 8
        worst = max(worst, abs(auroc(ScoredSet(probs, labels)) - _pair_oracle(probs, labels)))
    passed = worst < 1e-12
    _line(acceptance_log, "4", passed,
          f"AUROC vs O(n^2) pair oracle on 1000 tied sets (n<=200): max |diff| {worst:.1e} < 1e-12")
    assert passed


# -- 5 ------------------------------------------------------------------------

def test_5a_teacher_auroc(ablation, acceptance_log):
    v = ablation["means"]["teacher"]
    _line(acceptance_log, "5a", v >= 0.95, f"teacher mean AUROC over {N_SEEDS} seeds {v:.4f} >= 0.95")
    assert v >= 0.95


def test_5b_ehr_only_band(ablation, acceptance_log):
    v = ablation["means"]["ehr_only"]
    passed = 0.60 <= v <= 0.78
    _line(acceptance_log, "5b", passed, f"EHR-only mean AUROC {v:.4f} in [0.60, 0.78]")
    assert passed


def test_5c_cckd_beats_ehr_only(ablation, acceptance_log):
    m = ablation["means"]
    gap = m["cckd_student"] - m["ehr_only"]
    passed = gap >= 0.02
    _line(acceptance_log, "5c", passed,
          f"C-CKD student {m['cckd_student']:.4f} - EHR-only {m['ehr_only']:.4f} = {gap:+.4f} >= +0.02 "
          f"(CKD {m['ckd']:.4f}, Contrastive {m['contrastive']:.4f})")
    assert passed


def test_5d_teacher_beats_structured_variants(ablation, acceptance_log):
    m = ablation["means"]
    best_student = max(v for k, v in m.items() if k != "teacher")
    passed = all(m["teacher"] > v for k, v in m.items() if k != "teacher")
    _line(acceptance_log, "5d", passed,
          f"teacher {m['teacher']:.4f} exceeds every structured-deployment variant (best {best_student:.4f})")
    assert passed


def test_5e_ablation_runtime(ablation, acceptance_log):
    s = ablation["seconds"]
    _line(acceptance_log, "5e", s < 1800, f"{N_SEEDS}-seed ablation runtime {s / 60:.1f} min < 30 min")
    assert s < 1800


# -- 6 ------------------------------------------------------------------------

def _threshold_ok(rows) -> tuple[bool, bool]:
    cov = [r["coverage"] for r in rows]
    monotone = all(a <= b for a, b in zip(cov, cov[1:])) and cov[-1] == 1.0
    identity = all((r["accuracy"] is None and r["covered"] == 0) or
                   (round(r["accuracy"] * r["covered"]) == r["tp"] + r["tn"]
                    and r["covered"] == r["tp"] + r["tn"] + r["fp"] + r["fn"]) for r in rows)
    return monotone, identity


def test_6_threshold_properties(ablation, acceptance_log):
    n_models = 0
    ok_mono = ok_ident = True
    for rep in ablation["reports"]:
        for row in rep["rows"]:
            mono, ident = _threshold_ok(row["eval"]["rows"])
            ok_mono &= mono
            ok_ident &= ident
            n_models += 1
    rng = make_rng(6006)
    for _ in range(2000):
        n = int(rng.integers(2, 300))
        probs = rng.uniform(size=n)
        probs[rng.uniform(size=n) < 0.2] = rng.choice([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9])
        labels = rng.integers(0, 2, size=n)
        rows = [vars(r) for r in threshold_diagnostics(ScoredSet(probs, labels))]
        mono, ident = _threshold_ok(rows)
        ok_mono &= mono
        ok_ident &= ident
    passed = ok_mono and ok_ident
    _line(acceptance_log, "6", passed,
          f"threshold diagnostics on {n_models} evaluated models + 2000 random sets: coverage "
          f"non-decreasing with coverage(0.5)=1: {ok_mono}; accuracy*covered == TP+TN: {ok_ident}")
    assert passed


# -- 7 ------------------------------------------------------------------------

def test_7_determinism(default_data, tmp_path, acceptance_log):
    outs = [tmp_path / "run1", tmp_path / "run2"]
    for out in outs:
        assert main(["ablate", "--data", str(default_data), "--seed", "3", "--out", str(out),
                     "--no-figures"]) == 0
    same_report = (outs[0] / "report.json").read_bytes() == (outs[1] / "report.json").read_bytes()
    rng = make_rng(7)
    s = ScoredSet(rng.uniform(size=500), rng.integers(0, 2, size=500))
    same_ci = bootstrap_ci(s, 1000, seed=11) == bootstrap_ci(s, 1000, seed=11)
    passed = same_report and same_ci
    _line(acceptance_log, "7", passed,
          f"cmd_ablate twice, same config and seed: report.json byte-identical {same_report}; "
          f"bootstrap CI seed-deterministic {same_ci}")
    assert passed


# -- 8 ------------------------------------------------------------------------

def test_8_deployment_purity(ablation, default_data, tmp_path, acceptance_log, capsys):
    noteless = tmp_path / "records.jsonl"
    _strip_notes(default_data / "records.jsonl", noteless)
    assert all(r.note_emb is None for r in load_cohort(noteless, default_data / "codes.jsonl").records)
    models = ablation["dir"] / "seed_0" / "models"
    codes = {}
    for variant in ("cckd_student", "ehr_only", "contrastive", "ckd", "teacher"):
        codes[variant] = main(["eval", "--model", str(models / f"{variant}.json"), "--records", str(noteless),
                               "--codes", str(default_data / "codes.jsonl"), "--n-boot", "50",
                               "--out", str(tmp_path / variant)])
    err = capsys.readouterr().err
    students_ok = all(codes[v] == 0 for v in ("cckd_student", "ehr_only", "contrastive", "ckd"))
    teacher_refused = codes["teacher"] != 0 and "note modality" in err
    passed = students_ok and teacher_refused
    _line(acceptance_log, "8", passed,
          f"all-null note embeddings: student exit codes "
          f"{[codes[v] for v in ('cckd_student', 'ehr_only', 'contrastive', 'ckd')]} (all 0 required); "
          f"teacher refused with exit {codes['teacher']} naming the note modality: {teacher_refused}")
    assert passed


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v"]))
