"""Command-line entry point.

    cckd gen            --out data/
    cckd train-teacher  --data data/ --out runs/teacher
    cckd distill        --data data/ --teacher-logits runs/teacher/teacher_logits.csv --variant cckd_student --out runs/cckd
    cckd ablate         --data data/ --out runs/ablation [--seeds 10] [--variants teacher,ehr_only]
    cckd eval           --model runs/cckd/model.json --records deploy.jsonl --codes data/codes.jsonl --out runs/eval
    cckd report         --run runs/ablation

Exit codes: 0 success, 1 usage/config error, 2 data validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import plots
from .config import RunConfig, effective_text, load_config, parse_variants
from .errors import CCKDError, ConfigError, ValidationError
from .features import Cohort, load_cohort
from .metrics import threshold_csv
from .synthdata import generate_cohort, split_cohort, write_cohort
from .training import (AblationReport, Variant, evaluate_model, load_model, read_logit_table,
                       run_ablation, save_model, train_student, train_teacher, write_logit_table)

log = logging.getLogger("cckd")

REPORT_COLUMNS = ["seed", "variant", "model", "training_modalities", "deployment_modalities",
                  "auroc", "ci_low", "ci_high", "auroc_std", "status"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _echo_config(cfg: RunConfig, out: Path) -> None:
    _write(out / "effective.cfg", effective_text(cfg))


def _data_paths(args) -> tuple[Path, Path]:
    records = args.records or (args.data / "records.jsonl" if args.data else None)
    codes = args.codes or (args.data / "codes.jsonl" if args.data else None)
    if records is None or codes is None:
        raise ConfigError("give --data DIR or both --records and --codes")
    for p in (records, codes):
        if not Path(p).is_file():
            raise ValidationError(f"data file not found: {p}")
    return Path(records), Path(codes)


def _config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed), run=replace(cfg.run, seed=args.seed))
    else:
        cfg = replace(cfg, train=replace(cfg.train, seed=cfg.run.seed))
    return cfg


# -- commands ------------------------------------------------------------------

def cmd_gen(args) -> int:
    cfg = load_config(args.config)
    synth = cfg.synth if args.seed is None else replace(cfg.synth, seed=args.seed)
    cfg = replace(cfg, synth=synth)
    cohort = split_cohort(generate_cohort(synth), cfg.run.train_fraction, synth.seed)
    out = Path(args.out)
    paths = write_cohort(cohort, out)
    _echo_config(cfg, out)
    n_test = sum(r.split == "test" for r in cohort.records)
    print(f"wrote {len(cohort.records)} records ({n_test} test) to {paths['records']}")
    return 0


def cmd_train_teacher(args) -> int:
    cfg = _config(args)
    cohort = load_cohort(*_data_paths(args))
    model, logits = train_teacher(cohort, cfg.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "teacher.json")
    write_logit_table(logits, out / "teacher_logits.csv")
    _echo_config(cfg, out)
    print(f"teacher trained for {model.meta['epochs_run']} epochs; {len(logits)} logits written")
    return 0


def cmd_distill(args) -> int:
    cfg = _config(args)
    cohort = load_cohort(*_data_paths(args))
    variant = parse_variants(args.variant)[0]
    if variant is Variant.TEACHER:
        raise ConfigError("distill trains student variants; use train-teacher for the teacher")
    logits = read_logit_table(args.teacher_logits) if args.teacher_logits else None
    model = train_student(cohort, logits, variant, cfg.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "model.json")
    _echo_config(cfg, out)
    print(f"{variant.value}: best epoch {model.meta['best_epoch']} of {model.meta['epochs_run']}")
    return 0


def _report_rows(report: AblationReport) -> list[dict]:
    rows = []
    for r in report.rows:
        d = r.to_dict()
        ev = d["eval"] or {}
        rows.append({"seed": report.seed, "variant": d["variant"], "model": d["model"],
                     "training_modalities": d["training_modalities"],
                     "deployment_modalities": d["deployment_modalities"],
                     "auroc": ev.get("auroc"), "ci_low": ev.get("ci_low"), "ci_high": ev.get("ci_high"),
                     "auroc_std": None, "status": d["status"]})
    return rows


def _csv(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                    for c in columns])
    return buf.getvalue()


def _thresholds_csv(report: AblationReport) -> str:
    out = []
    for r in report.rows:
        if r.report is None:
            continue
        text = threshold_csv(r.report.rows, {"seed": report.seed, "variant": r.variant.value})
        out.append(text if not out else text.split("\n", 1)[1])
    return "".join(out)


def _figures(rows: list[dict], series: dict, out: Path) -> None:
    plots.plot_auroc(rows, out / "figures" / "auroc.png")
    if series:
        plots.plot_thresholds(series, out / "figures" / "thresholds.png")


def _write_single(report: AblationReport, models: dict, cfg: RunConfig, out: Path, figures: bool) -> None:
    out.mkdir(parents=True, exist_ok=True)
    _write(out / "report.json", report.to_json() + "\n")
    rows = _report_rows(report)
    _write(out / "report.csv", _csv(rows, REPORT_COLUMNS))
    _write(out / "thresholds.csv", _thresholds_csv(report))
    (out / "models").mkdir(exist_ok=True)
    for name, model in models.items():
        save_model(model, out / "models" / f"{name}.json")
    _echo_config(cfg, out)
    if figures:
        series = {r.variant.display: [vars(t) for t in r.report.rows] for r in report.rows if r.report}
        _figures(rows, series, out)


def _ablate_one(cohort: Cohort, cfg: RunConfig, seed: int):
    train = replace(cfg.train, seed=seed)
    return run_ablation(cohort, train, cfg.run.variants, cfg.run.n_boot)


def _summary_rows(reports: list[AblationReport]) -> list[dict]:
    rows = []
    for v in reports[0].rows:
        vals = [rep.auroc(v.variant) for rep in reports if rep.auroc(v.variant) is not None]
        lows = [rep.row(v.variant).report.ci_low for rep in reports if rep.row(v.variant).report]
        highs = [rep.row(v.variant).report.ci_high for rep in reports if rep.row(v.variant).report]
        rows.append({
            "seed": "summary", "variant": v.variant.value, "model": v.variant.display,
            "training_modalities": v.variant.train_modalities,
            "deployment_modalities": v.variant.deploy_modalities,
            "auroc": statistics.fmean(vals) if vals else None,
            "ci_low": statistics.fmean(lows) if lows else None,
            "ci_high": statistics.fmean(highs) if highs else None,
            "auroc_std": statistics.stdev(vals) if len(vals) > 1 else 0.0 if vals else None,
            "status": f"{len(vals)}/{len(reports)} ok",
        })
    return rows


def _mean_threshold_series(reports: list[AblationReport]) -> dict:
    series = {}
    for v in reports[0].rows:
        per_seed = [rep.row(v.variant).report.rows for rep in reports if rep.row(v.variant).report]
        if not per_seed:
            continue
        merged = []
        for k, row in enumerate(per_seed[0]):
            entry = {"alpha": row.alpha}
            for m in plots.METRICS:
                vals = [getattr(rows[k], m) for rows in per_seed if getattr(rows[k], m) is not None]
                entry[m] = statistics.fmean(vals) if vals else None
            merged.append(entry)
        series[v.variant.display] = merged
    return series


def write_summary(reports: list[AblationReport], cfg: RunConfig | None, out: Path, figures: bool) -> list[dict]:
    per_seed = [row for rep in reports for row in _report_rows(rep)]
    summary = _summary_rows(reports)
    _write(out / "report.csv", _csv(per_seed + summary, REPORT_COLUMNS))
    _write(out / "summary.json", json.dumps({"seeds": [r.seed for r in reports], "summary": summary},
                                            indent=2) + "\n")
    _write(out / "thresholds.csv", "".join(
        t if i == 0 else t.split("\n", 1)[1] for i, t in enumerate(_thresholds_csv(r) for r in reports)))
    if cfg is not None:
        _echo_config(cfg, out)
    if figures:
        _figures(summary, _mean_threshold_series(reports), out)
    return summary


def cmd_ablate(args) -> int:
    cfg = _config(args)
    run = cfg.run
    if args.variants:
        run = replace(run, variants=parse_variants(args.variants))
    if args.seeds is not None:
        run = replace(run, seeds=args.seeds)
    if args.n_boot is not None:
        run = replace(run, n_boot=args.n_boot)
    cfg = replace(cfg, run=run)
    if run.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    cohort = load_cohort(*_data_paths(args))
    out = Path(args.out)
    figures = run.figures and not args.no_figures
    seeds = [run.seed + k for k in range(run.seeds)]

    if run.seeds == 1:
        report, models = _ablate_one(cohort, cfg, seeds[0])
        _write_single(report, models, cfg, out, figures)
        reports = [report]
    else:
        if args.parallel_seeds > 1:
            with ProcessPoolExecutor(max_workers=args.parallel_seeds) as pool:
                results = list(pool.map(_ablate_one, [cohort] * len(seeds), [cfg] * len(seeds), seeds))
        else:
            results = [_ablate_one(cohort, cfg, s) for s in seeds]
        reports = []
        for seed, (report, models) in zip(seeds, results):
            seed_cfg = replace(cfg, train=replace(cfg.train, seed=seed), run=replace(cfg.run, seed=seed, seeds=1))
            _write_single(report, models, seed_cfg, out / f"seed_{seed}", figures=False)
            reports.append(report)
        write_summary(reports, cfg, out, figures)

    for rep in reports:
        cells = ", ".join(f"{r.variant.value}={'FAILED' if r.report is None else f'{r.report.auroc:.3f}'}"
                          for r in rep.rows)
        print(f"seed {rep.seed}: {cells}")
    if all(r.status != "ok" for rep in reports for r in rep.rows):
        print("every variant failed", file=sys.stderr)
        return 3
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    model = load_model(args.model)
    records_path = Path(args.records)
    codes_path = Path(args.codes) if args.codes else records_path.with_name("codes.jsonl")
    for p in (records_path, codes_path):
        if not p.is_file():
            raise ValidationError(f"data file not found: {p}")
    cohort = load_cohort(records_path, codes_path)
    records = cohort.split("test") if not args.all_records else cohort.records
    if not records:
        raise ValidationError("no test-split records to evaluate")
    if model.inputs != "note" and model.input_width != _expected_width(model, cohort):
        raise ValidationError(
            f"feature width mismatch: model expects {model.input_width}, "
            f"cohort provides {_expected_width(model, cohort)}")
    n_boot = args.n_boot if args.n_boot is not None else cfg.run.n_boot
    report = evaluate_model(model, records, cohort.table, n_boot=n_boot, seed=cfg.run.seed)
    out = Path(args.out)
    _write(out / "eval.json", report.to_json() + "\n")
    _write(out / "thresholds.csv", threshold_csv(report.rows, {"variant": model.variant.value}))
    _echo_config(cfg, out)
    print(f"{model.variant.value}: AUROC {report.auroc:.4f} ({report.ci_low:.4f}, {report.ci_high:.4f}) "
          f"on {report.n} records")
    return 0


def _expected_width(model, cohort: Cohort) -> int:
    width = cohort.feature_width
    if model.inputs == "note+structured":
        width += cohort.note_width or 0
    return width


def cmd_report(args) -> int:
    run_dir = Path(args.run)
    paths = sorted(run_dir.glob("seed_*/report.json"), key=lambda p: int(p.parent.name.split("_")[1]))
    if not paths:
        paths = [run_dir / "report.json"] if (run_dir / "report.json").is_file() else []
    if not paths:
        raise ValidationError(f"no report.json files under {run_dir}")
    reports = [AblationReport.from_dict(json.loads(p.read_text())) for p in paths]
    out = Path(args.out) if args.out else run_dir
    summary = write_summary(reports, None, out, not args.no_figures)
    # carry the producing config along; per-seed copies differ only in the seed
    sources = [run_dir / "effective.cfg"] + [p.parent / "effective.cfg" for p in paths]
    source = next((p for p in sources if p.is_file()), None)
    if source is not None and source.resolve() != (out / "effective.cfg").resolve():
        _write(out / "effective.cfg", source.read_text())
    for row in summary:
        auc = "FAILED" if row["auroc"] is None else f"{row['auroc']:.3f} +/- {row['auroc_std']:.3f}"
        print(f"{row['model']:<28} {auc}")
    return 0


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cckd", description="Contrastive + contrastive-distillation training "
                                          "for structured-only deployment.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, data=True):
        sp.add_argument("--config", type=Path, default=None,
                        help="INI config (default: $CCKD_CONFIG or the packaged default.cfg)")
        sp.add_argument("--seed", type=int, default=None, help="override the master seed")
        if data:
            sp.add_argument("--data", type=Path, help="directory holding records.jsonl and codes.jsonl")
            sp.add_argument("--records", type=Path)
            sp.add_argument("--codes", type=Path)

    sp = sub.add_parser("gen", help="generate a synthetic matched case-control cohort")
    common(sp, data=False)
    sp.add_argument("--out", required=True, type=Path)
    sp.set_defaults(func=cmd_gen)

    sp = sub.add_parser("train-teacher", help="train the note teacher and export its logits")
    common(sp)
    sp.add_argument("--out", required=True, type=Path)
    sp.set_defaults(func=cmd_train_teacher)

    sp = sub.add_parser("distill", help="train one structured-only student variant")
    common(sp)
    sp.add_argument("--teacher-logits", type=Path)
    sp.add_argument("--variant", default=Variant.CCKD.value)
    sp.add_argument("--out", required=True, type=Path)
    sp.set_defaults(func=cmd_distill)

    sp = sub.add_parser("ablate", help="teacher + four student variants, evaluated on the test split")
    common(sp)
    sp.add_argument("--out", required=True, type=Path)
    sp.add_argument("--variants", help="comma-separated subset, e.g. teacher,ehr_only")
    sp.add_argument("--seeds", type=int, help="number of consecutive master seeds")
    sp.add_argument("--parallel-seeds", type=int, default=1, help="worker processes for multi-seed runs")
    sp.add_argument("--n-boot", type=int)
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("eval", help="score the test split of a records file with a saved model")
    common(sp, data=False)
    sp.add_argument("--model", required=True, type=Path)
    sp.add_argument("--records", required=True, type=Path)
    sp.add_argument("--codes", type=Path, help="default: codes.jsonl next to the records file")
    sp.add_argument("--all-records", action="store_true", help="score every record, not just split=test")
    sp.add_argument("--n-boot", type=int)
    sp.add_argument("--out", required=True, type=Path)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("report", help="merge per-seed ablation outputs into a summary")
    sp.add_argument("--run", required=True, type=Path)
    sp.add_argument("--out", type=Path)
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CCKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
