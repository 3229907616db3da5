"""AUROC, bootstrap confidence intervals and abstention-threshold diagnostics."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DegenerateSetError, InvalidArgumentError, UndefinedMetricError
from .numerics import make_rng

DEFAULT_ALPHAS = (0.1, 0.2, 0.3, 0.4, 0.5)
MAX_REDRAWS = 100


@dataclass
class ScoredSet:
    probs: np.ndarray
    labels: np.ndarray
    ids: list[str] | None = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels).astype(np.int64)
        if self.probs.ndim != 1 or self.probs.shape != self.labels.shape:
            raise InvalidArgumentError("probs and labels must be equal-length vectors")
        if self.probs.size < 2:
            raise InvalidArgumentError("a scored set needs at least 2 entries")
        if not np.all(np.isin(self.labels, (0, 1))):
            raise InvalidArgumentError("labels must be 0 or 1")
        if self.ids is not None and len(self.ids) != self.probs.size:
            raise InvalidArgumentError("ids length differs from probs")


def _auroc(scores: np.ndarray, labels: np.ndarray) -> float:
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both classes present")
    # Mann-Whitney U from mid-ranks; ties contribute 1/2
    ranks = rankdata(scores)
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auroc(scored: ScoredSet) -> float:
    return _auroc(scored.probs, scored.labels)


def bootstrap_aurocs(scored: ScoredSet, n_boot: int = 1000, seed: int = 0) -> np.ndarray:
    """Per-resample AUROCs; resample ``i`` draws from its own stream ``(seed, i)``."""
    n = scored.probs.size
    out = np.empty(n_boot)
    for i in range(n_boot):
        rng = make_rng(seed, 3, i)
        for _ in range(MAX_REDRAWS + 1):
            idx = rng.integers(0, n, size=n)
            lab = scored.labels[idx]
            if 0 < lab.sum() < n:
                break
        else:
            raise DegenerateSetError(
                f"resample {i}: more than {MAX_REDRAWS} consecutive single-class draws")
        out[i] = _auroc(scored.probs[idx], lab)
    return out


def bootstrap_ci(scored: ScoredSet, n_boot: int = 1000, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float]:
    if n_boot < 1:
        raise InvalidArgumentError("n_boot must be >= 1")
    auroc(scored)  # raises on single-class input
    stats = bootstrap_aurocs(scored, n_boot, seed)
    tail = 100.0 * (1.0 - level) / 2.0
    low, high = np.percentile(stats, [tail, 100.0 - tail])
    return float(low), float(high)


@dataclass
class ThresholdRow:
    alpha: float
    total: int
    covered: int
    tp: int
    tn: int
    fp: int
    fn: int
    coverage: float
    sensitivity: float | None
    specificity: float | None
    ppv: float | None
    npv: float | None
    accuracy: float | None


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


def threshold_row(scored: ScoredSet, alpha: float) -> ThresholdRow:
    """Abstain when ``alpha < p < 1 - alpha``; ties at either bound are covered.

    ``p >= 1 - alpha`` predicts positive and takes precedence, so at alpha = 0.5
    the value p = 0.5 is a positive call.
    """
    p, y = scored.probs, scored.labels
    pos = p >= 1.0 - alpha
    neg = (p <= alpha) & ~pos
    tp = int(np.sum(pos & (y == 1)))
    fp = int(np.sum(pos & (y == 0)))
    tn = int(np.sum(neg & (y == 0)))
    fn = int(np.sum(neg & (y == 1)))
    covered = tp + fp + tn + fn
    total = int(p.size)
    return ThresholdRow(
        alpha=float(alpha), total=total, covered=covered, tp=tp, tn=tn, fp=fp, fn=fn,
        coverage=covered / total,
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        ppv=_ratio(tp, tp + fp),
        npv=_ratio(tn, tn + fn),
        accuracy=_ratio(tp + tn, covered),
    )


def threshold_diagnostics(scored: ScoredSet, alphas: Sequence[float] = DEFAULT_ALPHAS) -> list[ThresholdRow]:
    return [threshold_row(scored, a) for a in alphas]


@dataclass
class EvalReport:
    auroc: float
    ci_low: float
    ci_high: float
    n_boot: int
    seed: int
    n: int
    rows: list[ThresholdRow] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rows"] = [asdict(r) for r in self.rows]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        rows = [ThresholdRow(**r) for r in d.get("rows", [])]
        return cls(d["auroc"], d["ci_low"], d["ci_high"], d["n_boot"], d["seed"], d["n"], rows)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


THRESHOLD_COLUMNS = ["alpha", "coverage", "sensitivity", "specificity", "ppv", "npv", "accuracy",
                     "covered", "total", "tp", "tn", "fp", "fn"]


def threshold_csv(rows: Sequence[ThresholdRow], prefix: dict | None = None) -> str:
    """Flat CSV, one threshold row per line; undefined metrics are empty cells."""
    prefix = prefix or {}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(prefix) + THRESHOLD_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow(list(prefix.values()) + ["" if d[c] is None else repr(d[c]) for c in THRESHOLD_COLUMNS])
    return buf.getvalue()


def evaluate(scored: ScoredSet, n_boot: int = 1000, seed: int = 0,
             alphas: Sequence[float] = DEFAULT_ALPHAS) -> EvalReport:
    value = auroc(scored)
    low, high = bootstrap_ci(scored, n_boot, seed)
    return EvalReport(value, low, high, n_boot, seed, int(scored.probs.size),
                      threshold_diagnostics(scored, alphas))
