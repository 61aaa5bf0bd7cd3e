"""KDD record parsing, equal-frequency binning and connection encoding.

A :class:`FeatureSchema` fixes the ordered list of connection features used by
both the detectors and the SOM.  It is loaded from a JSON document (the
package ships ``data/default_schema.json``), fitted on training records to
obtain bin edges, and then used to turn raw KDD lines into
:class:`ConnectionVector` objects and real-valued SOM inputs.
"""

from __future__ import annotations

import bisect
import copy
import gzip
import hashlib
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import EmptyDataError, MalformedRecordError

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
KDD_FIELD_COUNT = 41
# 1-based columns holding symbolic values: protocol_type, service, flag.
KDD_SYMBOLIC_COLUMNS = frozenset({2, 3, 4})

NORMAL = "normal"
ATTACK_CLASSES = ("DoS", "Probe", "U2R", "R2L")
PORT_CATEGORIES = tuple(range(1, 10))
DEFAULT_PORT_CATEGORY = 8

BINNED_KINDS = ("binned-integer", "binned-real")
FEATURE_KINDS = BINNED_KINDS + ("categorical", "binary", "port-category")


@dataclass(frozen=True)
class RawRecord:
    features: tuple[str, ...]
    label: str | None = None


@dataclass(frozen=True)
class ConnectionVector:
    """One encoded connection.

    ``label`` is ``"normal"``, one of :data:`ATTACK_CLASSES`, the raw attack
    name when it is missing from the class map, or ``None`` for unlabeled
    traffic.
    """

    values: tuple[int, ...]
    label: str | None = None


def parse_kdd_record(line: str, line_no: int | None = None) -> RawRecord:
    """Parse one comma-separated KDD line.

    A 42nd field is read as the label, with any trailing period removed.

    Raises:
        MalformedRecordError: wrong field count, empty token, or a numeric
            column that is not a non-negative number.
    """
    parts = [p.strip() for p in line.strip().split(",")]
    if len(parts) == KDD_FIELD_COUNT + 1:
        label = parts.pop().rstrip(".")
        if not label:
            raise MalformedRecordError("empty label", line_no)
    elif len(parts) == KDD_FIELD_COUNT:
        label = None
    else:
        raise MalformedRecordError(
            f"expected {KDD_FIELD_COUNT} or {KDD_FIELD_COUNT + 1} fields, got {len(parts)}",
            line_no,
        )
    for col, tok in enumerate(parts, start=1):
        if not tok:
            raise MalformedRecordError(f"empty field in column {col}", line_no)
        if col in KDD_SYMBOLIC_COLUMNS:
            continue
        try:
            v = float(tok)
        except ValueError:
            raise MalformedRecordError(
                f"column {col} is not numeric: {tok!r}", line_no
            ) from None
        if not v >= 0:  # also rejects nan
            raise MalformedRecordError(f"column {col} is negative: {tok!r}", line_no)
    return RawRecord(tuple(parts), label)


def iter_kdd_lines(path: str | Path) -> Iterator[tuple[int, str]]:
    """Yield ``(line_no, line)`` for non-blank lines; ``.gz`` files are decompressed."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            if line.strip():
                yield line_no, line


def read_kdd(path: str | Path, skip_malformed: bool = False) -> tuple[list[RawRecord], int]:
    """Read a KDD file.

    Returns the parsed records and the number of malformed lines skipped.
    With ``skip_malformed=False`` the first malformed line aborts the read.
    """
    records = []
    skipped = 0
    for line_no, line in iter_kdd_lines(path):
        try:
            records.append(parse_kdd_record(line, line_no))
        except MalformedRecordError:
            if not skip_malformed:
                raise
            skipped += 1
    if skipped:
        log.warning("%s: skipped %d malformed records", path, skipped)
    return records, skipped


def fit_bins(values: Iterable[float], bin_count: int) -> list[float]:
    """Equal-frequency bin edges.

    Bins are filled greedily from the smallest value: each cut aims at an
    equal share of the observations not yet assigned, then moves to the
    nearest boundary between two distinct observed values (the later one on a
    tie) so that no run of equal values is split.  Edges sit at midpoints
    between the adjacent distinct values.  When ties swallow a quota, the
    returned list is shorter than ``bin_count - 1``; the effective bin count
    is ``len(edges) + 1``.
    """
    if bin_count < 2:
        raise ValueError("bin_count must be at least 2")
    data = np.sort(np.asarray(list(values), dtype=float))
    n = data.size
    if n == 0:
        raise EmptyDataError("cannot fit bins on an empty value set")
    # positions p (0 < p < n) where data[p-1] != data[p]
    boundaries = np.flatnonzero(data[1:] != data[:-1]) + 1
    edges: list[float] = []
    start = 0
    bins_left = bin_count
    while bins_left > 1:
        candidates = boundaries[boundaries > start]
        if candidates.size == 0:
            break
        target = start + (n - start) / bins_left
        gap = np.abs(candidates - target)
        best = np.flatnonzero(gap == gap.min())[-1]
        cut = int(candidates[best])
        edges.append(float((data[cut - 1] + data[cut]) / 2.0))
        start = cut
        bins_left -= 1
    if len(edges) < bin_count - 1:
        log.debug(
            "too-few-distinct-values: %d bins requested, %d effective",
            bin_count,
            len(edges) + 1,
        )
    return edges


def bin_value(edges: Sequence[float], v: float) -> int:
    """Index of the half-open bin ``[edges[i-1], edges[i])`` containing ``v``."""
    return bisect.bisect_right(edges, v)


@dataclass(frozen=True)
class FeatureDef:
    """One schema feature.

    ``bin_count`` is the configured number of bins; after fitting,
    ``bin_edges`` may describe fewer bins when the training data has too few
    distinct values (see :attr:`effective_bin_count`).
    """

    name: str
    kind: str
    source_index: int
    bin_count: int | None = None
    bin_edges: tuple[float, ...] | None = None
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"{self.name}: unknown feature kind {self.kind!r}")
        if not 1 <= self.source_index <= KDD_FIELD_COUNT:
            raise ValueError(f"{self.name}: source_index out of range")
        if self.is_interval:
            if self.bin_count is None or self.bin_count < 2:
                raise ValueError(f"{self.name}: binned features need bin_count >= 2")
            if self.bin_edges is not None:
                e = self.bin_edges
                if len(e) > self.bin_count - 1:
                    raise ValueError(f"{self.name}: too many bin edges")
                if any(a >= b for a, b in zip(e, e[1:])):
                    raise ValueError(f"{self.name}: bin edges must strictly increase")
        if self.kind == "categorical" and not self.categories:
            raise ValueError(f"{self.name}: categorical features need categories")

    @property
    def is_interval(self) -> bool:
        return self.kind in BINNED_KINDS

    @property
    def fitted(self) -> bool:
        return not self.is_interval or self.bin_edges is not None

    @property
    def effective_bin_count(self) -> int | None:
        if not self.is_interval or self.bin_edges is None:
            return None
        return len(self.bin_edges) + 1

    @property
    def legal_values(self) -> tuple[int, ...]:
        """Values this feature can take in a ConnectionVector."""
        if self.is_interval:
            if self.bin_edges is None:
                raise ValueError(f"{self.name}: schema not fitted")
            return tuple(range(self.effective_bin_count))
        if self.kind == "categorical":
            return tuple(range(len(self.categories)))
        if self.kind == "binary":
            return (0, 1)
        return PORT_CATEGORIES

    @property
    def som_width(self) -> int:
        if self.kind == "categorical":
            return len(self.categories)
        if self.kind == "port-category":
            return len(PORT_CATEGORIES)
        return 1

    def to_json(self) -> dict:
        out = {"name": self.name, "kind": self.kind, "source_index": self.source_index}
        if self.is_interval:
            out["bin_count"] = self.bin_count
            if self.bin_edges is not None:
                out["bin_edges"] = list(self.bin_edges)
                out["effective_bin_count"] = self.effective_bin_count
        if self.categories is not None:
            out["categories"] = list(self.categories)
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureDef":
        edges = doc.get("bin_edges")
        cats = doc.get("categories")
        return cls(
            name=doc["name"],
            kind=doc["kind"],
            source_index=int(doc["source_index"]),
            bin_count=doc.get("bin_count"),
            bin_edges=None if edges is None else tuple(float(x) for x in edges),
            categories=None if cats is None else tuple(cats),
        )


@dataclass(frozen=True)
class GeneSlot:
    """Where one phenotypic field lives on the detector genotype."""

    field: int
    gene: int
    is_interval: bool
    legal_values: tuple[int, ...]


@dataclass
class EncodedSet:
    """A batch of encoded connections, one row per record."""

    values: np.ndarray
    labels: list
    unknown_attacks: Counter = field(default_factory=Counter)

    def __len__(self):
        return self.values.shape[0]

    def subset(self, mask) -> "EncodedSet":
        idx = np.flatnonzero(mask)
        labels = [self.labels[i] for i in idx]
        unknown = Counter(
            lab for lab in labels if lab is not None and not is_known_label(lab)
        )
        return EncodedSet(self.values[idx], labels, unknown)

    def label_mask(self, *wanted: str) -> np.ndarray:
        return np.array([lab in wanted for lab in self.labels], dtype=bool)

    def vectors(self) -> list[ConnectionVector]:
        return [
            ConnectionVector(tuple(int(v) for v in row), lab)
            for row, lab in zip(self.values, self.labels)
        ]


def is_known_label(label: str | None) -> bool:
    return label == NORMAL or label in ATTACK_CLASSES


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple[FeatureDef, ...]
    service_categories: dict
    attack_classes: dict

    def __post_init__(self):
        for token, cat in self.service_categories.items():
            if cat not in PORT_CATEGORIES:
                raise ValueError(f"service {token!r} maps to invalid category {cat}")
        for name, cls in self.attack_classes.items():
            if cls not in ATTACK_CLASSES:
                raise ValueError(f"attack {name!r} maps to unknown class {cls!r}")
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise ValueError("duplicate feature names")

    # -- construction and persistence --------------------------------------

    @classmethod
    def default(cls) -> "FeatureSchema":
        """The unfitted schema shipped with the package."""
        text = resources.files("hybrid_ids").joinpath("data/default_schema.json").read_text()
        return cls.from_json(json.loads(text))

    @classmethod
    def from_json(cls, doc: dict) -> "FeatureSchema":
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported schema format_version {version!r}")
        return cls(
            features=tuple(FeatureDef.from_json(f) for f in doc["features"]),
            service_categories={k: int(v) for k, v in doc["service_categories"].items()},
            attack_classes=dict(doc["attack_classes"]),
        )

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "features": [f.to_json() for f in self.features],
            "service_categories": dict(sorted(self.service_categories.items())),
            "attack_classes": dict(sorted(self.attack_classes.items())),
        }

    @classmethod
    def load(cls, path: str | Path) -> "FeatureSchema":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"

    @property
    def digest(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def fit(self, records: Sequence[RawRecord]) -> "FeatureSchema":
        """Return a copy with bin edges fitted on ``records``."""
        if not records:
            raise EmptyDataError("cannot fit a schema on zero records")
        fitted = []
        for f in self.features:
            if f.is_interval:
                col = f.source_index - 1
                edges = fit_bins((float(r.features[col]) for r in records), f.bin_count)
                if len(edges) < f.bin_count - 1:
                    log.info(
                        "%s: %d bins requested, %d effective (too few distinct values)",
                        f.name,
                        f.bin_count,
                        len(edges) + 1,
                    )
                f = FeatureDef(
                    f.name, f.kind, f.source_index, f.bin_count, tuple(edges), f.categories
                )
            fitted.append(f)
        return FeatureSchema(
            tuple(fitted), dict(self.service_categories), copy.deepcopy(self.attack_classes)
        )

    # -- geometry ------------------------------------------------------------

    @property
    def fitted(self) -> bool:
        return all(f.fitted for f in self.features)

    @property
    def gene_slots(self) -> tuple[GeneSlot, ...]:
        slots = []
        gene = 0
        for i, f in enumerate(self.features):
            slots.append(GeneSlot(i, gene, f.is_interval, f.legal_values))
            gene += 2 if f.is_interval else 1
        return tuple(slots)

    @property
    def gene_count(self) -> int:
        return sum(2 if f.is_interval else 1 for f in self.features)

    @property
    def som_dim(self) -> int:
        return sum(f.som_width for f in self.features)

    # -- encoding ------------------------------------------------------------

    def service_to_port_category(self, service: str) -> int:
        return self.service_categories.get(service, DEFAULT_PORT_CATEGORY)

    def map_label(self, label: str | None) -> str | None:
        if label is None or label == NORMAL:
            return label
        return self.attack_classes.get(label, label)

    def encode_connection(self, raw: RawRecord) -> ConnectionVector:
        """Discretize one parsed record.

        Raises:
            MalformedRecordError: a categorical token outside the schema.
        """
        if not self.fitted:
            raise ValueError("schema must be fitted before encoding")
        values = []
        for f in self.features:
            tok = raw.features[f.source_index - 1]
            if f.is_interval:
                values.append(bin_value(f.bin_edges, float(tok)))
            elif f.kind == "binary":
                values.append(1 if float(tok) > 0 else 0)
            elif f.kind == "categorical":
                try:
                    values.append(f.categories.index(tok))
                except ValueError:
                    raise MalformedRecordError(f"unknown {f.name} {tok!r}") from None
            else:
                values.append(self.service_to_port_category(tok))
        return ConnectionVector(tuple(values), self.map_label(raw.label))

    def encode_many(self, records: Iterable[RawRecord]) -> EncodedSet:
        rows = []
        labels = []
        unknown = Counter()
        for raw in records:
            cv = self.encode_connection(raw)
            rows.append(cv.values)
            labels.append(cv.label)
            if cv.label is not None and not is_known_label(cv.label):
                unknown[cv.label] += 1
        values = np.array(rows, dtype=np.int16).reshape(len(rows), len(self.features))
        return EncodedSet(values, labels, unknown)

    def som_matrix(self, values: np.ndarray) -> np.ndarray:
        """Real-valued SOM inputs for a matrix of connection values.

        Binned features become ``b / (k - 1)``; binary features are copied;
        categorical and port-category features expand to one-hot blocks.
        """
        values = np.atleast_2d(np.asarray(values))
        out = np.zeros((values.shape[0], self.som_dim))
        col = 0
        for i, f in enumerate(self.features):
            v = values[:, i]
            if f.is_interval:
                k = f.effective_bin_count
                out[:, col] = v / (k - 1) if k > 1 else 0.0
            elif f.kind == "binary":
                out[:, col] = v
            else:
                offset = 1 if f.kind == "port-category" else 0
                out[np.arange(len(v)), col + v - offset] = 1.0
            col += f.som_width
        return out

    def encode_for_som(self, cv: ConnectionVector) -> np.ndarray:
        return self.som_matrix(np.array([cv.values]))[0]

    def validate(self, cv: ConnectionVector) -> None:
        if len(cv.values) != len(self.features):
            raise ValueError("connection vector length does not match the schema")
        for f, v in zip(self.features, cv.values):
            if v not in f.legal_values:
                raise ValueError(f"{f.name}: value {v} outside {f.legal_values}")


def service_to_port_category(service: str, schema: FeatureSchema) -> int:
    return schema.service_to_port_category(service)


def encode_connection(raw: RawRecord, schema: FeatureSchema) -> ConnectionVector:
    return schema.encode_connection(raw)


def encode_for_som(cv: ConnectionVector, schema: FeatureSchema) -> np.ndarray:
    return schema.encode_for_som(cv)
