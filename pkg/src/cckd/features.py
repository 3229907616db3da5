"""Cohort files and structured feature assembly.

Records and code vectors are JSON Lines. A structured feature vector is the
patient's demographics followed by the mean of the code vectors of their
codes (taken in age order; unknown codes are skipped).
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import FeatureWidthError, ParseError, ValidationError

SPLITS = ("train", "test")


@dataclass
class PatientRecord:
    patient_id: str
    label: int
    split: str
    demo: list[float]
    codes: list[tuple[str, int]]
    note_emb: list[float] | None = None

    def to_json(self) -> str:
        return json.dumps({
            "patient_id": self.patient_id,
            "label": self.label,
            "split": self.split,
            "demo": [float(x) for x in self.demo],
            "codes": [{"code": c, "age_days": int(a)} for c, a in self.codes],
            "note_emb": None if self.note_emb is None else [float(x) for x in self.note_emb],
        })


@dataclass
class CodeVectorTable:
    vectors: dict[str, np.ndarray]

    def __post_init__(self):
        if not self.vectors:
            raise ValidationError("code-vector table is empty")
        widths = {v.shape for v in self.vectors.values()}
        if len(widths) != 1:
            raise ValidationError(f"code vectors have inconsistent widths: {sorted(widths)}")

    @property
    def width(self) -> int:
        return next(iter(self.vectors.values())).shape[0]

    def to_lines(self) -> list[str]:
        return [json.dumps({"code": c, "vec": [float(x) for x in v]}) for c, v in self.vectors.items()]


@dataclass
class Cohort:
    records: list[PatientRecord]
    table: CodeVectorTable
    counts: dict[str, dict[int, int]] = field(default_factory=dict)

    def split(self, name: str) -> list[PatientRecord]:
        return [r for r in self.records if r.split == name]

    @property
    def demo_width(self) -> int:
        return len(self.records[0].demo)

    @property
    def feature_width(self) -> int:
        return self.demo_width + self.table.width

    @property
    def note_width(self) -> int | None:
        for r in self.records:
            if r.note_emb is not None:
                return len(r.note_emb)
        return None


def pool_codes(codes: Sequence[tuple[str, int]], table: CodeVectorTable) -> np.ndarray:
    ordered = sorted(codes, key=lambda c: c[1])  # stable on age ties
    vecs = [table.vectors[c] for c, _ in ordered if c in table.vectors]
    if not vecs:
        return np.zeros(table.width)
    return np.mean(vecs, axis=0)


def assemble_structured(record: PatientRecord, table: CodeVectorTable) -> np.ndarray:
    return np.concatenate([np.asarray(record.demo, dtype=np.float64), pool_codes(record.codes, table)])


def assemble_matrix(records: Sequence[PatientRecord], table: CodeVectorTable) -> np.ndarray:
    return np.vstack([assemble_structured(r, table) for r in records])


@dataclass
class Standardizer:
    """Column z-scoring of the demographic block, fit on training records only."""
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, demo: np.ndarray) -> "Standardizer":
        demo = np.asarray(demo, dtype=np.float64)
        std = demo.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(demo.mean(axis=0), std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        out = np.array(features, dtype=np.float64)
        d = self.mean.size
        out[:, :d] = (out[:, :d] - self.mean) / self.std
        return out

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["std"], dtype=np.float64))


def note_matrix(records: Sequence[PatientRecord]) -> np.ndarray:
    missing = [r.patient_id for r in records if r.note_emb is None]
    if missing:
        raise ValidationError(
            f"note embedding missing for {len(missing)} record(s), e.g. {missing[0]!r}")
    return np.asarray([r.note_emb for r in records], dtype=np.float64)


def _parse_lines(path: Path) -> Iterable[tuple[int, dict]]:
    with open(path) as fh:
        for no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, no, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, no, "expected a JSON object")
            yield no, obj


def _record_from(obj: dict, path: Path, no: int) -> PatientRecord:
    try:
        pid = obj["patient_id"]
        label = obj["label"]
        split = obj["split"]
        demo = obj["demo"]
        codes = [(c["code"], c["age_days"]) for c in obj["codes"]]
        note = obj.get("note_emb")
    except (KeyError, TypeError) as exc:
        raise ParseError(path, no, f"missing or malformed field {exc}") from None
    if not isinstance(pid, str):
        raise ParseError(path, no, "patient_id must be a string")
    if label not in (0, 1) or isinstance(label, bool):
        raise ValidationError(f"patient {pid!r}: label must be 0 or 1, got {label!r}")
    if split not in SPLITS:
        raise ValidationError(f"patient {pid!r}: split must be one of {SPLITS}, got {split!r}")
    for code, age in codes:
        if not isinstance(code, str) or not isinstance(age, int) or age < 0:
            raise ValidationError(f"patient {pid!r}: bad code entry ({code!r}, {age!r})")
    try:
        demo = [float(x) for x in demo]
        note = None if note is None else [float(x) for x in note]
    except (TypeError, ValueError):
        raise ParseError(path, no, "demo and note_emb must be numeric arrays") from None
    if not np.all(np.isfinite(demo)) or (note is not None and not np.all(np.isfinite(note))):
        raise ValidationError(f"patient {pid!r}: non-finite feature values")
    return PatientRecord(pid, int(label), split, demo, codes, note)


def load_records(path) -> list[PatientRecord]:
    path = Path(path)
    records = [_record_from(obj, path, no) for no, obj in _parse_lines(path)]
    if not records:
        raise ValidationError("empty cohort")
    dup = [pid for pid, n in Counter(r.patient_id for r in records).items() if n > 1]
    if dup:
        raise ValidationError(f"duplicate patient_id {dup[0]!r}")
    demo_widths = {len(r.demo) for r in records}
    if len(demo_widths) != 1:
        raise ValidationError(f"inconsistent demographic widths {sorted(demo_widths)}")
    note_widths = {len(r.note_emb) for r in records if r.note_emb is not None}
    if len(note_widths) > 1:
        raise ValidationError(f"inconsistent note embedding widths {sorted(note_widths)}")
    return records


def load_code_table(path) -> CodeVectorTable:
    path = Path(path)
    vectors: dict[str, np.ndarray] = {}
    for no, obj in _parse_lines(path):
        try:
            code, vec = obj["code"], np.asarray(obj["vec"], dtype=np.float64)
        except (KeyError, TypeError, ValueError):
            raise ParseError(path, no, "expected {\"code\": str, \"vec\": [numbers]}") from None
        if vec.ndim != 1 or not np.all(np.isfinite(vec)):
            raise ParseError(path, no, "vec must be a flat array of finite numbers")
        if code in vectors:
            raise ValidationError(f"duplicate code {code!r} in code-vector table")
        vectors[code] = vec
    return CodeVectorTable(vectors)


def load_cohort(records_path, code_table_path) -> Cohort:
    records = load_records(records_path)
    table = load_code_table(code_table_path)
    counts = {s: {0: 0, 1: 0} for s in SPLITS}
    for r in records:
        counts[r.split][r.label] += 1
    return Cohort(records, table, counts)


def write_records(records: Sequence[PatientRecord], path) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def write_code_table(table: CodeVectorTable, path) -> None:
    with open(path, "w") as fh:
        for line in table.to_lines():
            fh.write(line + "\n")


def check_feature_width(expected: int, got: int, what: str = "feature") -> None:
    if expected != got:
        raise FeatureWidthError(f"{what} width mismatch: model expects {expected}, data has {got}")
