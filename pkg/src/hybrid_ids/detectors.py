"""Detector genotype, matching rule, and the two detector objectives.

A detector is a flat list of integer genes laid out by the schema: interval
features own a lower-bound and an upper-bound gene, every other feature owns
a single gene.  ``-1`` marks a field as unspecified.  Phenotypically, a
detector is a conjunction of conditions over connection vector fields.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .schema import FORMAT_VERSION, ConnectionVector, FeatureSchema

UNSPECIFIED = -1


@dataclass(frozen=True)
class Detector:
    genes: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "genes", tuple(int(g) for g in self.genes))


def conditions(d: Detector, schema: FeatureSchema) -> list[tuple[int, int, int]]:
    """Specified conditions as ``(field, lo, hi)``; single values have ``lo == hi``."""
    out = []
    for slot in schema.gene_slots:
        lo = d.genes[slot.gene]
        hi = d.genes[slot.gene + 1] if slot.is_interval else lo
        if lo != UNSPECIFIED and hi != UNSPECIFIED:
            out.append((slot.field, lo, hi))
    return out


def _values(cv) -> Sequence[int]:
    return cv.values if isinstance(cv, ConnectionVector) else cv


def matches(d: Detector, cv, schema: FeatureSchema) -> bool:
    """True when ``cv`` satisfies every specified condition of ``d``."""
    v = _values(cv)
    return all(lo <= v[f] <= hi for f, lo, hi in conditions(d, schema))


def matches_matrix(d: Detector, values: np.ndarray, schema: FeatureSchema) -> np.ndarray:
    """Vectorized :func:`matches` over the rows of ``values``."""
    mask = np.ones(values.shape[0], dtype=bool)
    for f, lo, hi in conditions(d, schema):
        col = values[:, f]
        mask &= (col >= lo) & (col <= hi)
    return mask


def count_self_matches(d: Detector, self_values: np.ndarray, schema: FeatureSchema) -> int:
    return int(np.count_nonzero(matches_matrix(d, self_values, schema)))


def generality(d: Detector, schema: FeatureSchema) -> float:
    """Mean per-field coverage: 1 for unspecified, 0 for a fixed value,
    and the covered fraction of bins for an interval."""
    total = 0.0
    slots = schema.gene_slots
    for slot in slots:
        lo = d.genes[slot.gene]
        if lo == UNSPECIFIED:
            total += 1.0
        elif slot.is_interval:
            hi = d.genes[slot.gene + 1]
            total += (hi - lo + 1) / len(slot.legal_values)
    return total / len(slots)


def similarity(d1: Detector, d2: Detector, schema: FeatureSchema) -> float:
    """Phenotypic similarity: per-field equality for single values, Jaccard
    overlap of the inclusive bin ranges for intervals, summed over fields."""
    score = 0.0
    for slot in schema.gene_slots:
        a = d1.genes[slot.gene]
        b = d2.genes[slot.gene]
        if not slot.is_interval:
            score += 1.0 if a == b else 0.0
            continue
        top = len(slot.legal_values) - 1
        lo1, hi1 = (0, top) if a == UNSPECIFIED else (a, d1.genes[slot.gene + 1])
        lo2, hi2 = (0, top) if b == UNSPECIFIED else (b, d2.genes[slot.gene + 1])
        inter = min(hi1, hi2) - max(lo1, lo2) + 1
        if inter > 0:
            score += inter / (max(hi1, hi2) - min(lo1, lo2) + 1)
    return score


def repair_genes(genes: list[int], schema: FeatureSchema) -> list[int]:
    """In-place repair of interval gene pairs; returns ``genes``."""
    for slot in schema.gene_slots:
        if not slot.is_interval:
            continue
        i = slot.gene
        lo, hi = genes[i], genes[i + 1]
        if lo == UNSPECIFIED or hi == UNSPECIFIED:
            genes[i] = genes[i + 1] = UNSPECIFIED
        elif lo > hi:
            genes[i], genes[i + 1] = hi, lo
    return genes


def repair(d: Detector, schema: FeatureSchema) -> Detector:
    """Swap reversed interval bounds and drop half-specified intervals."""
    return Detector(repair_genes(list(d.genes), schema))


def random_detector(schema: FeatureSchema, rng) -> Detector:
    """Each field is unspecified with probability 0.5, otherwise drawn
    uniformly from its legal values (interval bounds drawn independently,
    then ordered)."""
    genes = [UNSPECIFIED] * schema.gene_count
    for slot in schema.gene_slots:
        if rng.random() < 0.5:
            continue
        n = len(slot.legal_values)
        if slot.is_interval:
            a = int(rng.integers(0, n))
            b = int(rng.integers(0, n))
            genes[slot.gene] = slot.legal_values[min(a, b)]
            genes[slot.gene + 1] = slot.legal_values[max(a, b)]
        else:
            genes[slot.gene] = slot.legal_values[int(rng.integers(0, n))]
    return Detector(genes)


def is_valid(d: Detector, schema: FeatureSchema) -> bool:
    if len(d.genes) != schema.gene_count:
        return False
    for slot in schema.gene_slots:
        pair = d.genes[slot.gene : slot.gene + (2 if slot.is_interval else 1)]
        if all(g == UNSPECIFIED for g in pair):
            continue
        if any(g not in slot.legal_values for g in pair):
            return False
        if slot.is_interval and pair[0] > pair[1]:
            return False
    return True


@dataclass
class DetectorSet:
    detectors: list[Detector]
    schema_digest: str
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.detectors)

    def __iter__(self):
        return iter(self.detectors)

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "schema_digest": self.schema_digest,
            "detectors": [{"genes": list(d.genes)} for d in self.detectors],
            "meta": self.meta,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> "DetectorSet":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported detector format_version {doc.get('format_version')!r}")
        return cls(
            [Detector(d["genes"]) for d in doc["detectors"]],
            doc["schema_digest"],
            doc.get("meta", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "DetectorSet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))
