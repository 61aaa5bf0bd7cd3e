"""Runtime composition of detectors and SOM, and the evaluation tables."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .detectors import DetectorSet, conditions, matches
from .schema import ATTACK_CLASSES, NORMAL, ConnectionVector, EncodedSet, FeatureSchema
from .som import SomModel, classify_many, find_winner

PREDICTED = (NORMAL,) + ATTACK_CLASSES
UNKNOWN = "unknown"
TRUE_ROWS = PREDICTED + (UNKNOWN,)


@dataclass(frozen=True)
class Verdict:
    decision: str
    attack_class: str | None = None
    winning_neuron: tuple[int, int] | None = None
    matched_detector_count: int = 0

    def __post_init__(self):
        if (self.decision == "anomalous") != (self.attack_class is not None):
            raise ValueError("attack_class must be present exactly when anomalous")

    def line(self, line_no: int) -> str:
        if self.decision == "normal":
            return f"{line_no},normal,-,-,-"
        x, y = self.winning_neuron
        return f"{line_no},anomalous,{self.attack_class},{x},{y}"


def detect(detectors: DetectorSet, cv, schema: FeatureSchema) -> bool:
    return any(matches(d, cv, schema) for d in detectors)


def detector_bounds(detectors, schema: FeatureSchema) -> tuple[np.ndarray, np.ndarray]:
    """Per-detector inclusive ``(lo, hi)`` bounds, one column per field;
    unspecified fields get bounds no value can violate."""
    n_fields = len(schema.features)
    lo = np.full((len(detectors), n_fields), np.iinfo(np.int32).min, dtype=np.int32)
    hi = np.full((len(detectors), n_fields), np.iinfo(np.int32).max, dtype=np.int32)
    for k, d in enumerate(detectors):
        for f, a, b in conditions(d, schema):
            lo[k, f] = a
            hi[k, f] = b
    return lo, hi


def match_counts(detectors, values: np.ndarray, schema: FeatureSchema,
                 chunk: int = 512) -> np.ndarray:
    """Number of detectors matching each row of ``values``."""
    values = np.atleast_2d(np.asarray(values, dtype=np.int32))
    out = np.zeros(values.shape[0], dtype=np.int64)
    if len(detectors) == 0:
        return out
    lo, hi = detector_bounds(detectors, schema)
    for s in range(0, values.shape[0], chunk):
        block = values[s : s + chunk, None, :]
        out[s : s + chunk] = ((block >= lo) & (block <= hi)).all(axis=2).sum(axis=1)
    return out


def detect_matrix(detectors, values: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Per-row detection flags for a matrix of connection values."""
    return match_counts(detectors, values, schema) > 0


def analyze(detectors: DetectorSet, som: SomModel, cv: ConnectionVector,
            schema: FeatureSchema) -> Verdict:
    """Flag with the detectors; only flagged connections reach the SOM."""
    hits = sum(1 for d in detectors if matches(d, cv, schema))
    if hits == 0:
        return Verdict("normal")
    j = find_winner(som, schema.encode_for_som(cv))
    return Verdict("anomalous", som.labels[j], som.coords(j), hits)


def _class_of(label) -> str:
    return label if label in PREDICTED else UNKNOWN


def _rate(num: int, den: int) -> float | None:
    return num / den if den else None


def evaluate_detection(detectors: DetectorSet, test: EncodedSet, schema: FeatureSchema) -> dict:
    """Normal accuracy and per-class detection rates.

    Keys are ``Normal`` and the attack classes; a class without test records
    maps to ``None``.
    """
    flagged = detect_matrix(detectors, test.values, schema)
    classes = np.array([_class_of(lab) for lab in test.labels], dtype=object)
    out = {}
    normal = classes == NORMAL
    out["Normal"] = _rate(int(np.count_nonzero(~flagged & normal)), int(normal.sum()))
    for cls in ATTACK_CLASSES:
        m = classes == cls
        out[cls] = _rate(int(np.count_nonzero(flagged & m)), int(m.sum()))
    return out


def evaluate_classification(som: SomModel, attacks: EncodedSet, schema: FeatureSchema) -> dict:
    """Fraction of each attack class's records the SOM puts in that class.

    Records whose label is not one of the four classes are ignored.
    """
    keep = np.array([lab in ATTACK_CLASSES for lab in attacks.labels], dtype=bool)
    out = {cls: None for cls in ATTACK_CLASSES}
    if not keep.any():
        return out
    sub = attacks.subset(keep)
    predicted = classify_many(som, schema.som_matrix(sub.values))
    for cls in ATTACK_CLASSES:
        idx = [i for i, lab in enumerate(sub.labels) if lab == cls]
        out[cls] = _rate(sum(predicted[i] == cls for i in idx), len(idx))
    return out


def evaluate_overall(detection: dict, classification: dict) -> dict:
    """Detection rate times classification rate per attack class; the
    Normal column is carried over unchanged."""
    out = {"Normal": detection.get("Normal")}
    for cls in ATTACK_CLASSES:
        d, c = detection.get(cls), classification.get(cls)
        out[cls] = None if d is None or c is None else d * c
    return out


@dataclass
class EvaluationReport:
    detection: dict
    classification: dict
    overall: dict
    false_positive_rate: float | None
    confusion: dict
    counts: dict
    unknown_attacks: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "format_version": 1,
            "detection": self.detection,
            "classification": self.classification,
            "overall": self.overall,
            "false_positive_rate": self.false_positive_rate,
            "confusion": self.confusion,
            "counts": self.counts,
            "unknown_attacks": self.unknown_attacks,
            "provenance": self.provenance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    def render(self) -> str:
        return render_report(self)


def evaluate(detectors: DetectorSet, som: SomModel, test: EncodedSet,
             schema: FeatureSchema) -> EvaluationReport:
    """All tables plus the end-to-end confusion matrix.

    Rows of the confusion matrix are true classes (unknown attack names get
    their own row); columns are the pipeline's verdicts.
    """
    detection = evaluate_detection(detectors, test, schema)
    classification = evaluate_classification(som, test, schema)
    overall = evaluate_overall(detection, classification)

    flagged = detect_matrix(detectors, test.values, schema)
    predicted = np.array([NORMAL] * len(test), dtype=object)
    if flagged.any():
        predicted[flagged] = classify_many(som, schema.som_matrix(test.values[flagged]))
    confusion = {row: {col: 0 for col in PREDICTED} for row in TRUE_ROWS}
    for lab, pred in zip(test.labels, predicted):
        confusion[_class_of(lab)][pred] += 1
    counts = Counter(_class_of(lab) for lab in test.labels)
    counts = {row: counts.get(row, 0) for row in TRUE_ROWS}
    counts["total"] = len(test)
    counts["unknown_flagged"] = int(
        sum(1 for lab, f in zip(test.labels, flagged) if _class_of(lab) == UNKNOWN and f)
    )
    fpr = None if detection["Normal"] is None else 1.0 - detection["Normal"]
    unknown = Counter(lab for lab in test.labels if _class_of(lab) == UNKNOWN)
    return EvaluationReport(
        detection, classification, overall, fpr, confusion, counts,
        dict(sorted(unknown.items(), key=lambda kv: str(kv[0]))),
    )


def _pct(v) -> str:
    return "n/a" if v is None else f"{100.0 * v:.2f}%"


def _table(title: str, header: list, rows: list) -> str:
    cells = [header] + rows
    widths = [max(len(str(r[i])) for r in cells) for i in range(len(header))]
    lines = [title]
    for r in cells:
        lines.append("  ".join(str(c).rjust(w) if i else str(c).ljust(w)
                               for i, (c, w) in enumerate(zip(r, widths))))
    return "\n".join(lines)


def render_report(report: EvaluationReport) -> str:
    """Aligned text tables in the column order Normal, DoS, Probe, U2R, R2L."""
    meta = report.provenance.get("labels", {})
    det_row = meta.get("detection", "hybrid")
    cls_row = meta.get("classification", "SOM")
    attacks = list(ATTACK_CLASSES)
    parts = [
        _table("Anomaly detection performance",
               ["Configuration", "Normal"] + attacks,
               [[det_row] + [_pct(report.detection[k]) for k in ["Normal"] + attacks]]),
        _table("Attack classification performance",
               ["Configuration"] + attacks,
               [[cls_row] + [_pct(report.classification[k]) for k in attacks]]),
        _table("Overall detection and classification",
               ["Approach", "Normal"] + attacks,
               [["Hybrid AIS + SOM"] + [_pct(report.overall[k]) for k in ["Normal"] + attacks]]),
        f"False positive rate: {_pct(report.false_positive_rate)}",
        _table("Confusion matrix (rows: true, columns: verdict)",
               ["true \\ verdict"] + list(PREDICTED),
               [[row] + [report.confusion[row][c] for c in PREDICTED] for row in TRUE_ROWS]),
    ]
    if report.unknown_attacks:
        names = ", ".join(f"{k}={v}" for k, v in report.unknown_attacks.items())
        parts.append(f"Unknown attack names: {names}")
    return "\n\n".join(parts) + "\n"
