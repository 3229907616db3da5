"""Teacher and student training, prediction, model files and the ablation runner.

The teacher is an MLP on note embeddings trained with BCE, then frozen; its
per-patient logits on the training split become the distillation targets.
Students are structured-only MLP encoders with a linear classifier, plus (when
the contrastive term is active) a projection head whose output is aligned with
a trainable linear projection of the note embedding.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CCKDError, ConfigError, FeatureWidthError, NumericError, ValidationError
from .features import Cohort, PatientRecord, Standardizer, assemble_matrix, note_matrix
from .losses import LossWeights, bce_loss, combined_loss, sigmoid
from .metrics import EvalReport, ScoredSet, evaluate
from .numerics import (MlpParams, MlpSpec, adam_init, adam_step, init_mlp, make_rng, mlp_backward,
                       mlp_forward)

log = logging.getLogger(__name__)


class Variant(str, Enum):
    TEACHER = "teacher"
    CCKD = "cckd_student"
    CONTRASTIVE = "contrastive"
    CKD = "ckd"
    EHR_ONLY = "ehr_only"

    @property
    def display(self) -> str:
        return VARIANT_TABLE[self][0]

    @property
    def train_modalities(self) -> str:
        return VARIANT_TABLE[self][1]

    @property
    def deploy_modalities(self) -> str:
        return VARIANT_TABLE[self][2]


# display name, training modalities, deployment modalities
VARIANT_TABLE = {
    Variant.TEACHER: ("C-CKD Teacher", "Notes", "Notes"),
    Variant.CCKD: ("C-CKD Student", "Structured EHR + Notes", "Structured EHR"),
    Variant.EHR_ONLY: ("Baseline: EHR Data Only", "Structured EHR", "Structured EHR"),
    Variant.CONTRASTIVE: ("Ablation 1: Contrastive", "Structured EHR + Notes", "Structured EHR"),
    Variant.CKD: ("Ablation 2: CKD", "Structured EHR + Notes", "Structured EHR"),
}
ALL_VARIANTS = tuple(VARIANT_TABLE)
STUDENT_VARIANTS = tuple(v for v in ALL_VARIANTS if v is not Variant.TEACHER)


def variant_weights(variant: Variant, base: LossWeights) -> LossWeights:
    """Zero out the loss terms a variant does not use; magnitudes come from ``base``."""
    if variant is Variant.CCKD:
        return base
    if variant is Variant.CONTRASTIVE:
        return replace(base, lambda_ckd=0.0)
    if variant is Variant.CKD:
        return replace(base, lambda_contrastive=0.0, lambda_bce=0.0)
    return replace(base, lambda_ckd=0.0, lambda_contrastive=0.0, lambda_bce=1.0)


def variant_for_weights(lambda_ckd: float, lambda_contrastive: float) -> Variant:
    """Inverse of the template mapping for the distillation-side weights."""
    if lambda_ckd > 0 and lambda_contrastive > 0:
        return Variant.CCKD
    if lambda_ckd > 0:
        return Variant.CKD
    if lambda_contrastive > 0:
        return Variant.CONTRASTIVE
    return Variant.EHR_ONLY


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 3e-4
    patience: int = 10
    val_fraction: float = 0.1
    seed: int = 0
    hidden_dims: tuple[int, ...] = (128, 64)
    proj_dim: int = 32
    activation: str = "relu"
    teacher_uses_structured: bool = False
    early_stop_on: str = "objective"
    weights: LossWeights = field(default_factory=LossWeights)

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
            raise ConfigError("epochs, batch_size and patience must be >= 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        if not self.hidden_dims or min(self.hidden_dims) < 1 or self.proj_dim < 1:
            raise ConfigError("hidden_dims and proj_dim must be positive")
        if self.early_stop_on not in ("objective", "bce"):
            raise ConfigError("early_stop_on must be 'objective' or 'bce'")


@dataclass
class ClassifierModel:
    """Encoder MLP + linear classifier over a standardized input matrix.

    ``kind`` is ``"teacher"`` or ``"student"``; ``inputs`` names what the model
    reads at deployment: ``"note"``, ``"note+structured"`` or ``"structured"``.
    """
    kind: str
    variant: Variant
    inputs: str
    encoder: MlpParams
    classifier: MlpParams
    standardizer: Standardizer
    projection: MlpParams | None = None
    note_projection: MlpParams | None = None
    note_standardizer: Standardizer | None = None
    meta: dict = field(default_factory=dict)

    @property
    def input_width(self) -> int:
        return self.encoder.spec.layer_dims[0]

    def logits(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.input_width:
            raise FeatureWidthError(
                f"feature width mismatch: model expects {self.input_width}, data has "
                f"{features.shape[-1] if features.ndim else 0}")
        _, h = mlp_forward(self.encoder, self.standardizer.apply(features))
        _, out = mlp_forward(self.classifier, h)
        return out[:, 0]

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "variant": self.variant.value,
            "inputs": self.inputs,
            "encoder": self.encoder.to_dict(),
            "classifier": self.classifier.to_dict(),
            "standardizer": self.standardizer.to_dict(),
            "projection": None if self.projection is None else self.projection.to_dict(),
            "note_projection": None if self.note_projection is None else self.note_projection.to_dict(),
            "note_standardizer": None if self.note_standardizer is None else self.note_standardizer.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        opt = lambda key, f: None if d.get(key) is None else f(d[key])  # noqa: E731
        return cls(
            kind=d["kind"], variant=Variant(d["variant"]), inputs=d["inputs"],
            encoder=MlpParams.from_dict(d["encoder"]),
            classifier=MlpParams.from_dict(d["classifier"]),
            standardizer=Standardizer.from_dict(d["standardizer"]),
            projection=opt("projection", MlpParams.from_dict),
            note_projection=opt("note_projection", MlpParams.from_dict),
            note_standardizer=opt("note_standardizer", Standardizer.from_dict),
            meta=d.get("meta", {}),
        )


TeacherModel = StudentModel = ClassifierModel


def save_model(model: ClassifierModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_model(path) -> ClassifierModel:
    with open(path) as fh:
        return ClassifierModel.from_dict(json.load(fh))


def predict(model: ClassifierModel, features: np.ndarray) -> np.ndarray:
    """Positive-class probabilities for raw (unstandardized) feature rows."""
    return sigmoid(model.logits(features))


def model_features(model: ClassifierModel, records: Sequence[PatientRecord], table) -> np.ndarray:
    """Build the input matrix a model reads at deployment.

    Student models touch only demographics and codes; note embeddings are
    never read, so records with ``note_emb = None`` are fine.
    """
    if model.inputs == "structured":
        return assemble_matrix(records, table)
    try:
        notes = note_matrix(records)
    except ValidationError as exc:
        raise ValidationError(f"{model.kind} model requires the note modality: {exc}") from None
    if model.inputs == "note+structured":
        return np.hstack([notes, assemble_matrix(records, table)])
    return notes


# -- teacher logits -----------------------------------------------------------

def write_logit_table(table: dict[str, float], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["patient_id", "logit"])
        for pid, v in table.items():
            w.writerow([pid, repr(float(v))])


def logit_table_csv(table: dict[str, float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["patient_id", "logit"])
    for pid, v in table.items():
        w.writerow([pid, repr(float(v))])
    return buf.getvalue()


def read_logit_table(path) -> dict[str, float]:
    out: dict[str, float] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["patient_id", "logit"]:
            raise ValidationError(f"{path}: expected header patient_id,logit")
        for row in reader:
            v = float(row["logit"])
            if not np.isfinite(v):
                raise ValidationError(f"{path}: non-finite logit for {row['patient_id']!r}")
            out[row["patient_id"]] = v
    return out


# -- training loop ------------------------------------------------------------

@dataclass
class _Parts:
    encoder: MlpParams
    classifier: MlpParams
    projection: MlpParams | None = None
    note_projection: MlpParams | None = None

    def names(self) -> list[str]:
        return [n for n in ("encoder", "classifier", "projection", "note_projection")
                if getattr(self, n) is not None]

    def arrays(self) -> list[np.ndarray]:
        return [a for n in self.names() for a in getattr(self, n).arrays()]

    def with_arrays(self, arrays: list[np.ndarray]) -> "_Parts":
        out = _Parts(self.encoder, self.classifier, self.projection, self.note_projection)
        i = 0
        for n in self.names():
            p = getattr(self, n)
            k = len(p.arrays())
            setattr(out, n, p.with_arrays(arrays[i:i + k]))
            i += k
        return out


def _loss_and_grads(parts: _Parts, weights: LossWeights, x: np.ndarray, labels: np.ndarray,
                    teacher: np.ndarray | None, notes: np.ndarray | None):
    enc_cache, h = mlp_forward(parts.encoder, x)
    cls_cache, s = mlp_forward(parts.classifier, h)
    kw = dict(student_logits=s[:, 0], labels=labels, teacher_logits=teacher)
    if weights.lambda_contrastive > 0:
        proj_cache, fx = mlp_forward(parts.projection, h)
        note_cache, fy = mlp_forward(parts.note_projection, notes)
        kw.update(fx=fx, fy=fy)
    res = combined_loss(weights, **kw)

    grads = {}
    g_cls = mlp_backward(parts.classifier, cls_cache, res.d_student_logits[:, None])
    dh = g_cls.inputs
    grads["classifier"] = g_cls.arrays()
    if weights.lambda_contrastive > 0:
        g_proj = mlp_backward(parts.projection, proj_cache, res.d_fx)
        g_note = mlp_backward(parts.note_projection, note_cache, res.d_fy)
        dh = dh + g_proj.inputs
        grads["projection"] = g_proj.arrays()
        grads["note_projection"] = g_note.arrays()
    grads["encoder"] = mlp_backward(parts.encoder, enc_cache, dh).arrays()
    return res, [a for n in parts.names() for a in grads[n]]


def _validation_split(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    n_val = int(round(n * frac))
    if n_val == 0:
        return np.arange(n), np.arange(0)
    perm = make_rng(seed, 4).permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


def _val_loss(parts: _Parts, weights: LossWeights, criterion: str, x: np.ndarray, y: np.ndarray,
              teacher: np.ndarray | None, notes: np.ndarray | None) -> float:
    _, h = mlp_forward(parts.encoder, x)
    _, s = mlp_forward(parts.classifier, h)
    if criterion == "bce" or len(y) < 2:
        return bce_loss(s[:, 0], y)[0]
    kw = dict(student_logits=s[:, 0], labels=y, teacher_logits=teacher)
    if weights.lambda_contrastive > 0:
        _, fx = mlp_forward(parts.projection, h)
        _, fy = mlp_forward(parts.note_projection, notes)
        kw.update(fx=fx, fy=fy)
    return combined_loss(weights, **kw).loss


def _fit(parts: _Parts, weights: LossWeights, cfg: TrainConfig, x: np.ndarray, y: np.ndarray,
         teacher: np.ndarray | None, notes: np.ndarray | None) -> tuple[_Parts, dict]:
    """Minibatch Adam with early stopping; returns the best parameters seen.

    The validation criterion is the variant's own objective or plain BCE
    (``cfg.early_stop_on``), scored full-batch on a held-out slice of train.
    """
    in_batch = weights.lambda_ckd > 0 or weights.lambda_contrastive > 0
    if in_batch and cfg.batch_size < 2:
        raise ConfigError("batch_size must be >= 2 when CKD or contrastive losses are active")
    fit_idx, val_idx = _validation_split(len(y), cfg.val_fraction, cfg.seed)
    if in_batch and len(fit_idx) < 2:
        raise ConfigError("fewer than 2 training records left for in-batch losses")

    shuffle_rng = make_rng(cfg.seed, 5)
    arrays = parts.arrays()
    state = adam_init(arrays, lr=cfg.lr)
    best = (np.inf, arrays, 0)
    history = []
    bad_epochs = 0
    for epoch in range(1, cfg.epochs + 1):
        order = fit_idx[shuffle_rng.permutation(len(fit_idx))]
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            b = order[start:start + cfg.batch_size]
            if in_batch and len(b) < 2:
                continue
            current = parts.with_arrays(arrays)
            res, grads = _loss_and_grads(
                current, weights, x[b], y[b],
                None if teacher is None else teacher[b],
                None if notes is None else notes[b])
            if not np.isfinite(res.loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}")
            arrays, state = adam_step(arrays, grads, state)
            total += res.loss * len(b)
            count += len(b)
        train_loss = total / max(count, 1)
        if len(val_idx):
            val = _val_loss(parts.with_arrays(arrays), weights, cfg.early_stop_on, x[val_idx], y[val_idx],
                            None if teacher is None else teacher[val_idx],
                            None if notes is None else notes[val_idx])
        else:
            val = train_loss
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val})
        if val < best[0]:
            best = (val, arrays, epoch)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= cfg.patience:
                break
    log.debug("history %s", history)
    meta = {"epochs_run": len(history), "best_epoch": best[2], "best_val_loss": float(best[0]),
            "final_train_loss": history[-1]["train_loss"]}
    return parts.with_arrays(best[1]), meta


def _encoder_spec(width: int, cfg: TrainConfig) -> MlpSpec:
    return MlpSpec((width, *cfg.hidden_dims), cfg.activation, activate_output=True)


def _head_spec(cfg: TrainConfig, out: int) -> MlpSpec:
    return MlpSpec((cfg.hidden_dims[-1], out))


def train_teacher(cohort: Cohort, cfg: TrainConfig) -> tuple[ClassifierModel, dict[str, float]]:
    """Fit the note teacher with BCE and export logits for every training patient."""
    cfg.validate()
    train = cohort.split("train")
    x = note_matrix(train)
    inputs = "note"
    if cfg.teacher_uses_structured:
        x = np.hstack([x, assemble_matrix(train, cohort.table)])
        inputs = "note+structured"
    y = np.array([r.label for r in train], dtype=np.float64)
    std = Standardizer.fit(x)
    xs = std.apply(x)
    parts = _Parts(init_mlp(_encoder_spec(x.shape[1], cfg), make_rng(cfg.seed, 10)),
                   init_mlp(_head_spec(cfg, 1), make_rng(cfg.seed, 11)))
    weights = LossWeights(lambda_ckd=0.0, lambda_contrastive=0.0, lambda_bce=1.0)
    parts, meta = _fit(parts, weights, cfg, xs, y, None, None)
    model = ClassifierModel("teacher", Variant.TEACHER, inputs, parts.encoder, parts.classifier,
                            std, meta=meta)
    logits = model.logits(x)
    return model, {r.patient_id: float(v) for r, v in zip(train, logits)}


def train_student(cohort: Cohort, teacher_logits: dict[str, float] | None, variant: Variant,
                  cfg: TrainConfig) -> ClassifierModel:
    cfg.validate()
    variant = Variant(variant)
    if variant is Variant.TEACHER:
        raise ConfigError("use train_teacher for the teacher variant")
    weights = variant_weights(variant, cfg.weights)
    if not weights.any_active:
        raise ConfigError(f"variant {variant.value}: every loss weight is zero")
    train = cohort.split("train")
    x = assemble_matrix(train, cohort.table)
    y = np.array([r.label for r in train], dtype=np.float64)
    std = Standardizer.fit(x[:, :cohort.demo_width])
    xs = std.apply(x)

    teacher = None
    if weights.lambda_ckd > 0:
        table = teacher_logits or {}
        missing = [r.patient_id for r in train if r.patient_id not in table]
        if missing:
            raise ValidationError(
                f"teacher logit table misses {len(missing)} training patient(s), e.g. {missing[0]!r}")
        teacher = np.array([table[r.patient_id] for r in train], dtype=np.float64)
        teacher.setflags(write=False)

    notes = note_std = None
    parts = _Parts(init_mlp(_encoder_spec(x.shape[1], cfg), make_rng(cfg.seed, 20)),
                   init_mlp(_head_spec(cfg, 1), make_rng(cfg.seed, 21)))
    if weights.lambda_contrastive > 0:
        raw_notes = note_matrix(train)
        note_std = Standardizer.fit(raw_notes)
        notes = note_std.apply(raw_notes)
        parts.projection = init_mlp(_head_spec(cfg, cfg.proj_dim), make_rng(cfg.seed, 22))
        parts.note_projection = init_mlp(MlpSpec((notes.shape[1], cfg.proj_dim)), make_rng(cfg.seed, 23))

    parts, meta = _fit(parts, weights, cfg, xs, y, teacher, notes)
    meta["loss_weights"] = {k: getattr(weights, k) for k in
                            ("lambda_ckd", "lambda_contrastive", "lambda_bce", "tau_ckd", "tau_contrastive")}
    return ClassifierModel("student", variant, "structured", parts.encoder, parts.classifier, std,
                           projection=parts.projection, note_projection=parts.note_projection,
                           note_standardizer=note_std, meta=meta)


def evaluate_model(model: ClassifierModel, records: Sequence[PatientRecord], table,
                   n_boot: int = 1000, seed: int = 0) -> EvalReport:
    x = model_features(model, records, table)
    probs = predict(model, x)
    return evaluate(ScoredSet(probs, [r.label for r in records], [r.patient_id for r in records]),
                    n_boot=n_boot, seed=seed)


# -- ablation -----------------------------------------------------------------

@dataclass
class AblationRow:
    variant: Variant
    status: str
    report: EvalReport | None = None
    error: str | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "variant": self.variant.value,
            "model": self.variant.display,
            "training_modalities": self.variant.train_modalities,
            "deployment_modalities": self.variant.deploy_modalities,
            "status": self.status,
            "error": self.error,
            "eval": None if self.report is None else self.report.to_dict(),
            "train": self.meta,
        }


@dataclass
class AblationReport:
    seed: int
    rows: list[AblationRow]

    def row(self, variant: Variant) -> AblationRow:
        return next(r for r in self.rows if r.variant is Variant(variant))

    def auroc(self, variant: Variant) -> float | None:
        r = self.row(variant)
        return None if r.report is None else r.report.auroc

    def to_dict(self) -> dict:
        return {"seed": self.seed, "rows": [r.to_dict() for r in self.rows]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "AblationReport":
        rows = [AblationRow(Variant(r["variant"]), r["status"],
                            None if r["eval"] is None else EvalReport.from_dict(r["eval"]),
                            r.get("error"), r.get("train", {})) for r in d["rows"]]
        return cls(d["seed"], rows)


def run_ablation(cohort: Cohort, cfg: TrainConfig, variants: Sequence[Variant] = ALL_VARIANTS,
                 n_boot: int = 1000) -> tuple[AblationReport, dict[str, ClassifierModel]]:
    """Train the teacher once, then every requested student variant with identical seeds.

    A failing variant is recorded in its row and the others continue.
    """
    variants = [Variant(v) for v in variants]
    test = cohort.split("test")
    if not test:
        raise ValidationError("cohort has no test split")
    rows: dict[Variant, AblationRow] = {}
    models: dict[str, ClassifierModel] = {}
    teacher_logits: dict[str, float] | None = None

    needs_teacher = any(v is Variant.TEACHER or variant_weights(v, cfg.weights).lambda_ckd > 0
                        for v in variants)
    if needs_teacher:
        try:
            teacher, teacher_logits = train_teacher(cohort, cfg)
            models[Variant.TEACHER.value] = teacher
            if Variant.TEACHER in variants:
                rows[Variant.TEACHER] = AblationRow(
                    Variant.TEACHER, "ok", evaluate_model(teacher, test, cohort.table, n_boot, cfg.seed),
                    meta=teacher.meta)
        except CCKDError as exc:
            log.warning("teacher failed: %s", exc)
            if Variant.TEACHER in variants:
                rows[Variant.TEACHER] = AblationRow(Variant.TEACHER, "failed", error=str(exc))

    for v in variants:
        if v is Variant.TEACHER:
            continue
        try:
            model = train_student(cohort, teacher_logits, v, cfg)
            models[v.value] = model
            rows[v] = AblationRow(v, "ok", evaluate_model(model, test, cohort.table, n_boot, cfg.seed),
                                  meta=model.meta)
        except CCKDError as exc:
            log.warning("variant %s failed: %s", v.value, exc)
            rows[v] = AblationRow(v, "failed", error=str(exc))
    ordered = [rows[v] for v in ALL_VARIANTS if v in rows]
    return AblationReport(cfg.seed, ordered), models
