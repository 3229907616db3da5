"""Training objectives with analytic gradients.

InfoNCE aligns structured and note embeddings; the contrastive distillation
(CKD) loss pulls each student logit toward its teacher through a Bernoulli KL
positive term while pushing student logits of different patients apart; BCE
supervises the task. ``combined_loss`` mixes them with per-term weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BatchTooSmallError, InvalidArgumentError
from .numerics import l2_normalize_rows, logsumexp


@dataclass(frozen=True)
class LossWeights:
    tau_contrastive: float = 0.1
    tau_ckd: float = 0.1
    lambda_ckd: float = 1.0
    lambda_contrastive: float = 1.0
    lambda_bce: float = 1.0
    eps_clamp: float = 1e-7
    symmetric_infonce: bool = False

    def __post_init__(self):
        if not (self.tau_contrastive > 0 and self.tau_ckd > 0):
            raise InvalidArgumentError("temperatures must be positive")
        if min(self.lambda_ckd, self.lambda_contrastive, self.lambda_bce) < 0:
            raise InvalidArgumentError("loss weights must be non-negative")
        if not 0 < self.eps_clamp <= 0.01:
            raise InvalidArgumentError("eps_clamp must lie in (0, 0.01]")

    @property
    def any_active(self) -> bool:
        return max(self.lambda_ckd, self.lambda_contrastive, self.lambda_bce) > 0


@dataclass
class ContrastiveBatch:
    """Paired row embeddings; row i of ``fx`` and ``fy`` come from the same patient.

    ``fx``/``fy`` are the raw encoder outputs; normalization happens inside the loss.
    """
    fx: np.ndarray
    fy: np.ndarray

    def __post_init__(self):
        self.fx = np.asarray(self.fx, dtype=np.float64)
        self.fy = np.asarray(self.fy, dtype=np.float64)
        if self.fx.shape != self.fy.shape or self.fx.ndim != 2:
            raise InvalidArgumentError(
                f"embedding batches must share a 2-D shape, got {self.fx.shape} and {self.fy.shape}")
        if self.fx.shape[0] < 2:
            raise BatchTooSmallError("contrastive batch needs at least 2 pairs")

    @property
    def n(self) -> int:
        return self.fx.shape[0]


@dataclass
class DistillBatch:
    teacher_logits: np.ndarray
    student_logits: np.ndarray
    eps: float = 1e-7
    pt: np.ndarray = field(init=False, repr=False)
    ps: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.teacher_logits = np.asarray(self.teacher_logits, dtype=np.float64)
        self.student_logits = np.asarray(self.student_logits, dtype=np.float64)
        if self.teacher_logits.shape != self.student_logits.shape or self.student_logits.ndim != 1:
            raise InvalidArgumentError("teacher and student logits must be equal-length vectors")
        if self.student_logits.size < 2:
            raise BatchTooSmallError("distillation batch needs at least 2 patients")
        if not (np.all(np.isfinite(self.teacher_logits)) and np.all(np.isfinite(self.student_logits))):
            raise InvalidArgumentError("logits must be finite")
        self.pt = np.clip(sigmoid(self.teacher_logits), self.eps, 1 - self.eps)
        self.ps = np.clip(sigmoid(self.student_logits), self.eps, 1 - self.eps)

    @property
    def n(self) -> int:
        return self.student_logits.size


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def similarity_matrix(zx: np.ndarray, zy: np.ndarray, tau: float) -> np.ndarray:
    """``S[i, j] = exp(<zx_i, zy_j> / tau)`` for already-normalized rows."""
    if not tau > 0:
        raise InvalidArgumentError(f"temperature must be positive, got {tau}")
    # unit rows: clip the one-ulp overshoot so entries never exceed exp(1/tau)
    dots = np.clip(np.asarray(zx) @ np.asarray(zy).T, -1.0, 1.0)
    return np.exp(dots / tau)


def _infonce_direction(m: np.ndarray) -> tuple[float, np.ndarray]:
    # row-wise cross entropy against the diagonal; returns loss and dL/dm
    n = m.shape[0]
    lse = logsumexp(m, axis=1)
    loss = float(np.mean(lse - np.diag(m)))
    p = np.exp(m - lse[:, None])
    return loss, (p - np.eye(n)) / n


def info_nce(batch: ContrastiveBatch, weights: LossWeights) -> tuple[float, np.ndarray, np.ndarray]:
    """InfoNCE loss and gradients wrt the un-normalized embeddings ``fx`` and ``fy``."""
    tau = weights.tau_contrastive
    zx, nx = l2_normalize_rows(batch.fx)
    zy, ny = l2_normalize_rows(batch.fy)
    m = zx @ zy.T / tau
    loss, dm = _infonce_direction(m)
    if weights.symmetric_infonce:
        loss_c, dm_c = _infonce_direction(m.T)
        loss = 0.5 * (loss + loss_c)
        dm = 0.5 * (dm + dm_c.T)
    dzx = dm @ zy / tau
    dzy = dm.T @ zx / tau
    # Jacobian of v -> v/|v|
    dfx = (dzx - zx * np.sum(zx * dzx, axis=1, keepdims=True)) / nx[:, None]
    dfy = (dzy - zy * np.sum(zy * dzy, axis=1, keepdims=True)) / ny[:, None]
    return loss, dfx, dfy


def bernoulli_kl(pt, ps, eps: float = 1e-7):
    """KL(Bern(pt) || Bern(ps)) in nats, after clamping both to [eps, 1-eps]."""
    pt = np.clip(np.asarray(pt, dtype=np.float64), eps, 1 - eps)
    ps = np.clip(np.asarray(ps, dtype=np.float64), eps, 1 - eps)
    kl = pt * np.log(pt / ps) + (1 - pt) * np.log((1 - pt) / (1 - ps))
    kl = np.maximum(kl, 0.0)
    return float(kl) if kl.ndim == 0 else kl


def ckd_loss(batch: DistillBatch, weights: LossWeights) -> tuple[float, np.ndarray]:
    """Contrastive distillation loss and its gradient wrt the student logits.

    Teacher logits are constants here: no gradient is produced for them.
    """
    tau = weights.tau_ckd
    s = batch.student_logits
    n = batch.n
    pt, ps = batch.pt, batch.ps
    kl = bernoulli_kl(pt, ps, batch.eps)

    diff = s[:, None] - s[None, :]
    logits = -np.abs(diff) / tau
    np.fill_diagonal(logits, -kl / tau)
    lse = logsumexp(logits, axis=1)
    loss = float(np.mean(lse - np.diag(logits)))

    # dL/dlogits: softmax minus one-hot on the diagonal (positive term)
    g = np.exp(logits - lse[:, None])
    np.fill_diagonal(g, np.diag(g) - 1.0)
    g /= n

    # negatives: d(-|s_i - s_j|/tau)/ds_i = -sign(s_i - s_j)/tau, opposite for s_j
    off = g.copy()
    np.fill_diagonal(off, 0.0)
    sgn = np.sign(diff)
    dneg = -(off * sgn).sum(axis=1) / tau + (off * sgn).sum(axis=0) / tau

    # positive: d(-KL/tau)/ds_i, clamped probabilities have zero slope
    raw = sigmoid(s)
    dps = np.where((raw > batch.eps) & (raw < 1 - batch.eps), raw * (1 - raw), 0.0)
    dkl_dps = -pt / ps + (1 - pt) / (1 - ps)
    dpos = np.diag(g) * (-dkl_dps * dps / tau)
    return loss, dneg + dpos


def bce_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on logits, via softplus."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if z.shape != y.shape or z.ndim != 1:
        raise InvalidArgumentError(f"logits {z.shape} and labels {y.shape} must be equal-length vectors")
    n = z.size
    loss = float(np.mean(np.logaddexp(0.0, z) - y * z))
    return loss, (sigmoid(z) - y) / n


@dataclass
class CombinedResult:
    loss: float
    components: dict[str, float]
    d_student_logits: np.ndarray | None
    d_fx: np.ndarray | None
    d_fy: np.ndarray | None
    # teacher logits are fixed inputs; their gradient is identically zero by construction
    d_teacher_logits: np.ndarray | None


def combined_loss(weights: LossWeights, *, student_logits=None, labels=None,
                  teacher_logits=None, fx=None, fy=None) -> CombinedResult:
    """``lambda_ckd * CKD + lambda_contrastive * InfoNCE + lambda_bce * BCE``.

    Terms with zero weight are skipped entirely, so their inputs may be omitted.
    """
    total = 0.0
    comps: dict[str, float] = {}
    d_s = None if student_logits is None else np.zeros(np.shape(student_logits))
    d_fx = d_fy = d_t = None

    if weights.lambda_ckd > 0:
        batch = DistillBatch(teacher_logits, student_logits, weights.eps_clamp)
        l, g = ckd_loss(batch, weights)
        comps["ckd"] = l
        total += weights.lambda_ckd * l
        d_s = d_s + weights.lambda_ckd * g
        d_t = np.zeros_like(batch.teacher_logits)
    if weights.lambda_contrastive > 0:
        l, gx, gy = info_nce(ContrastiveBatch(fx, fy), weights)
        comps["contrastive"] = l
        total += weights.lambda_contrastive * l
        d_fx, d_fy = weights.lambda_contrastive * gx, weights.lambda_contrastive * gy
    if weights.lambda_bce > 0:
        l, g = bce_loss(student_logits, labels)
        comps["bce"] = l
        total += weights.lambda_bce * l
        d_s = d_s + weights.lambda_bce * g
    return CombinedResult(total, comps, d_s, d_fx, d_fy, d_t)
