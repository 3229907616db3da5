import csv
import json
import subprocess
import sys

import pytest

from cckd.cli import main
from cckd.config import load_config

SMALL_CFG = """
[synth]
n_pairs = 40
d_demo = 12
d_note = 8
d_code = 6
n_codes_vocab = 40

[train]
epochs = 3
hidden_dims = 8, 4
proj_dim = 4
batch_size = 16

[run]
n_boot = 20
"""


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    (d / "small.cfg").write_text(SMALL_CFG)
    assert main(["gen", "--config", str(d / "small.cfg"), "--out", str(d / "data")]) == 0
    return d


def _cfg(work):
    return ["--config", str(work / "small.cfg")]


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _strip_notes(src, dst):
    lines = []
    for line in src.read_text().splitlines():
        obj = json.loads(line)
        obj["note_emb"] = None
        lines.append(json.dumps(obj))
    dst.write_text("\n".join(lines) + "\n")


# -- gen ----------------------------------------------------------------------

def test_gen_writes_files_and_config(work):
    for name in ("records.jsonl", "codes.jsonl", "truth.json", "effective.cfg"):
        assert (work / "data" / name).is_file()
    assert load_config(work / "data" / "effective.cfg").synth.n_pairs == 40


def test_gen_is_byte_deterministic_and_seeded(work):
    out = work / "nested" / "again"
    assert main(["gen", *_cfg(work), "--out", str(out)]) == 0
    for name in ("records.jsonl", "codes.jsonl", "truth.json"):
        assert (out / name).read_bytes() == (work / "data" / name).read_bytes()
    assert main(["gen", *_cfg(work), "--seed", "99", "--out", str(work / "s99")]) == 0
    assert (work / "s99" / "records.jsonl").read_bytes() != (work / "data" / "records.jsonl").read_bytes()


# -- train-teacher / distill / eval --------------------------------------------

@pytest.fixture(scope="module")
def trained(work):
    data = str(work / "data")
    assert main(["train-teacher", *_cfg(work), "--data", data, "--out", str(work / "teacher")]) == 0
    assert main(["distill", *_cfg(work), "--data", data, "--variant", "cckd_student",
                 "--teacher-logits", str(work / "teacher" / "teacher_logits.csv"),
                 "--out", str(work / "student")]) == 0
    return work


def test_train_outputs(trained):
    assert (trained / "teacher" / "teacher.json").is_file()
    assert (trained / "teacher" / "effective.cfg").is_file()
    rows = _rows(trained / "teacher" / "teacher_logits.csv")
    assert len(rows) == 64 and set(rows[0]) == {"patient_id", "logit"}
    assert (trained / "student" / "model.json").is_file()
    assert (trained / "student" / "effective.cfg").is_file()


def test_eval_student_on_noteless_records(trained):
    noteless = trained / "noteless"
    noteless.mkdir(exist_ok=True)
    _strip_notes(trained / "data" / "records.jsonl", noteless / "records.jsonl")
    (noteless / "codes.jsonl").write_bytes((trained / "data" / "codes.jsonl").read_bytes())
    args = ["eval", *_cfg(trained), "--model", str(trained / "student" / "model.json"),
            "--records", str(noteless / "records.jsonl")]
    assert main(args + ["--out", str(trained / "ev1")]) == 0
    assert main(args + ["--out", str(trained / "ev2")]) == 0
    for name in ("eval.json", "thresholds.csv", "effective.cfg"):
        assert (trained / "ev1" / name).read_bytes() == (trained / "ev2" / name).read_bytes()
    rep = json.loads((trained / "ev1" / "eval.json").read_text())
    assert rep["n"] == 16 and len(rep["rows"]) == 5
    assert len(_rows(trained / "ev1" / "thresholds.csv")) == 5


def test_eval_teacher_refuses_noteless(trained, capsys):
    noteless = trained / "noteless2"
    noteless.mkdir(exist_ok=True)
    _strip_notes(trained / "data" / "records.jsonl", noteless / "records.jsonl")
    code = main(["eval", *_cfg(trained), "--model", str(trained / "teacher" / "teacher.json"),
                 "--records", str(noteless / "records.jsonl"),
                 "--codes", str(trained / "data" / "codes.jsonl"), "--out", str(trained / "evt")])
    assert code == 2
    assert "note modality" in capsys.readouterr().err


def test_eval_width_mismatch_names_both_widths(trained, tmp_path, capsys):
    other = tmp_path / "wide.cfg"
    other.write_text(SMALL_CFG.replace("d_demo = 12", "d_demo = 15"))
    assert main(["gen", "--config", str(other), "--out", str(tmp_path / "wide")]) == 0
    code = main(["eval", *_cfg(trained), "--model", str(trained / "student" / "model.json"),
                 "--records", str(tmp_path / "wide" / "records.jsonl"), "--out", str(tmp_path / "ev")])
    assert code == 2
    err = capsys.readouterr().err
    assert "18" in err and "21" in err


# -- ablate / report ------------------------------------------------------------

def test_ablate_default_five_rows_and_byte_identical(work):
    data = str(work / "data")
    for out in ("ab1", "ab2"):
        assert main(["ablate", *_cfg(work), "--data", data, "--out", str(work / out)]) == 0
    rows = _rows(work / "ab1" / "report.csv")
    assert [r["variant"] for r in rows] == ["teacher", "cckd_student", "ehr_only", "contrastive", "ckd"]
    assert rows[0]["training_modalities"] == "Notes"
    assert (work / "ab1" / "report.json").read_bytes() == (work / "ab2" / "report.json").read_bytes()
    assert (work / "ab1" / "thresholds.csv").read_bytes() == (work / "ab2" / "thresholds.csv").read_bytes()
    assert len(_rows(work / "ab1" / "thresholds.csv")) == 25
    for name in ("effective.cfg", "figures/auroc.png", "figures/thresholds.png", "models/cckd_student.json"):
        assert (work / "ab1" / name).is_file()


def test_ablate_variant_selection(work):
    assert main(["ablate", *_cfg(work), "--data", str(work / "data"), "--out", str(work / "sel"),
                 "--variants", "teacher,ehr_only", "--no-figures"]) == 0
    assert [r["variant"] for r in _rows(work / "sel" / "report.csv")] == ["teacher", "ehr_only"]
    assert not (work / "sel" / "figures").exists()


def test_ablate_multi_seed_summary_and_report(work):
    data = str(work / "data")
    base = ["ablate", *_cfg(work), "--data", data, "--seeds", "3", "--variants", "teacher,ehr_only"]
    assert main(base + ["--out", str(work / "ms")]) == 0
    assert main(base + ["--out", str(work / "ms_par"), "--parallel-seeds", "2"]) == 0
    rows = _rows(work / "ms" / "report.csv")
    assert len(rows) == 8
    summary = [r for r in rows if r["seed"] == "summary"]
    assert [r["variant"] for r in summary] == ["teacher", "ehr_only"]
    assert all(r["auroc_std"] != "" and r["status"] == "3/3 ok" for r in summary)
    for s in range(3):
        assert (work / "ms" / f"seed_{s}" / "report.json").read_bytes() == \
            (work / "ms_par" / f"seed_{s}" / "report.json").read_bytes()
        assert (work / "ms" / f"seed_{s}" / "effective.cfg").is_file()
    assert (work / "ms" / "summary.json").read_bytes() == (work / "ms_par" / "summary.json").read_bytes()

    assert main(["report", "--run", str(work / "ms"), "--out", str(work / "merged"), "--no-figures"]) == 0
    assert (work / "merged" / "report.csv").read_bytes() == (work / "ms" / "report.csv").read_bytes()
    assert (work / "merged" / "effective.cfg").is_file()


def test_ablate_seed_flag_changes_results(work):
    data = str(work / "data")
    assert main(["ablate", *_cfg(work), "--data", data, "--variants", "ehr_only", "--seed", "5",
                 "--out", str(work / "s5")]) == 0
    rep = json.loads((work / "s5" / "report.json").read_text())
    assert rep["seed"] == 5
    assert load_config(work / "s5" / "effective.cfg").run.seed == 5


# -- exit codes -----------------------------------------------------------------

def test_usage_error_exit_1(capsys):
    with pytest.raises(SystemExit) as info:
        main(["ablate", "--bogus"])
    assert info.value.code == 1


def test_config_error_exit_1(work, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[train]\nlearning_rate = 1\n")
    assert main(["gen", "--config", str(bad), "--out", str(tmp_path / "x")]) == 1
    assert main(["ablate", *_cfg(work), "--data", str(work / "data"), "--variants", "nope",
                 "--out", str(tmp_path / "y")]) == 1


def test_validation_errors_exit_2(work, tmp_path):
    assert main(["ablate", *_cfg(work), "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "a")]) == 2
    (tmp_path / "r.jsonl").write_text("{broken\n")
    assert main(["ablate", *_cfg(work), "--records", str(tmp_path / "r.jsonl"),
                 "--codes", str(work / "data" / "codes.jsonl"), "--out", str(tmp_path / "b")]) == 2


def test_all_variants_failing_exit_3(work, tmp_path):
    _strip_notes(work / "data" / "records.jsonl", tmp_path / "records.jsonl")
    code = main(["ablate", *_cfg(work), "--records", str(tmp_path / "records.jsonl"),
                 "--codes", str(work / "data" / "codes.jsonl"), "--variants", "teacher,ckd",
                 "--out", str(tmp_path / "out")])
    assert code == 3
    rep = json.loads((tmp_path / "out" / "report.json").read_text())
    assert [r["status"] for r in rep["rows"]] == ["failed", "failed"]


def test_env_config_and_module_entry(work, tmp_path):
    env = {"CCKD_CONFIG": str(work / "small.cfg"), "PATH": "", "PYTHONHASHSEED": "0"}
    proc = subprocess.run([sys.executable, "-m", "cckd", "gen", "--out", str(tmp_path / "g")],
                          capture_output=True, text=True, env=env)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "g" / "records.jsonl").read_bytes() == (work / "data" / "records.jsonl").read_bytes()
