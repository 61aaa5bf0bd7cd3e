"""Square-grid Self-Organising Map with majority labelling and LVQ refinement."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyDataError
from .schema import ATTACK_CLASSES, FORMAT_VERSION

TAU2 = 1000.0
CLASS_ORDER = ATTACK_CLASSES


@dataclass
class SomConfig:
    grid_side: int = 10
    epochs: int = 2000
    eta0: float = 0.1
    sigma0: float | None = None  # None means grid_side
    seed: int = 0
    init_range: tuple[float, float] = (-0.1, 0.1)
    log_base: str = "e"

    def __post_init__(self):
        if self.grid_side < 1:
            raise ValueError("grid_side must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if not 0.0 < self.eta0 < 1.0:
            raise ValueError("eta0 must lie in (0, 1)")
        if self.effective_sigma0 <= 1.0:
            raise ValueError("sigma0 must exceed 1 so that its logarithm is positive")
        if self.log_base not in ("e", "10"):
            raise ValueError("log_base must be 'e' or '10'")
        lo, hi = self.init_range
        if lo > hi:
            raise ValueError("init_range must be (low, high)")

    @property
    def effective_sigma0(self) -> float:
        return float(self.grid_side if self.sigma0 is None else self.sigma0)


@dataclass
class LvqConfig:
    alpha0: float = 0.2
    epochs: int = 10
    halve: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha0 < 1.0:
            raise ValueError("alpha0 must lie in (0, 1)")
        if self.epochs < 1:
            raise ValueError("LVQ epochs must be at least 1")


@dataclass
class SomModel:
    grid_side: int
    weights: np.ndarray
    labels: list | None = None
    schema_digest: str | None = None
    training: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape[0] != self.grid_side**2:
            raise ValueError("weights must hold grid_side**2 vectors")

    @property
    def input_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def n_neurons(self) -> int:
        return self.weights.shape[0]

    @property
    def labelled(self) -> bool:
        return self.labels is not None and all(lab is not None for lab in self.labels)

    def coords(self, j: int) -> tuple[int, int]:
        """Grid position ``(x, y)`` of neuron ``j``."""
        return j % self.grid_side, j // self.grid_side

    def copy(self) -> "SomModel":
        return SomModel(
            self.grid_side,
            self.weights.copy(),
            None if self.labels is None else list(self.labels),
            self.schema_digest,
            json.loads(json.dumps(self.training)),
        )

    def to_json(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "grid_side": self.grid_side,
            "input_dim": self.input_dim,
            "weights": self.weights.tolist(),
            "labels": self.labels,
            "schema_digest": self.schema_digest,
            "training": self.training,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json()) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> "SomModel":
        if doc.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format_version {doc.get('format_version')!r}")
        model = cls(doc["grid_side"], np.array(doc["weights"], dtype=float), doc.get("labels"),
                    doc.get("schema_digest"), doc.get("training", {}))
        if model.input_dim != doc["input_dim"]:
            raise ValueError("input_dim does not match the stored weights")
        return model

    @classmethod
    def load(cls, path: str | Path) -> "SomModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


def grid_positions(grid_side: int) -> np.ndarray:
    j = np.arange(grid_side * grid_side)
    return np.stack([j % grid_side, j // grid_side], axis=1).astype(float)


def grid_sq_distances(grid_side: int) -> np.ndarray:
    pos = grid_positions(grid_side)
    diff = pos[:, None, :] - pos[None, :, :]
    return (diff**2).sum(axis=2)


def init_weights(config: SomConfig, input_dim: int, schema_digest: str | None = None) -> SomModel:
    rng = np.random.default_rng(config.seed)
    lo, hi = config.init_range
    w = rng.uniform(lo, hi, size=(config.grid_side**2, input_dim))
    return SomModel(config.grid_side, w, None, schema_digest)


def find_winner(som: SomModel, x) -> int:
    """Index of the neuron nearest to ``x``; the lowest index wins ties."""
    d = ((som.weights - np.asarray(x, dtype=float)) ** 2).sum(axis=1)
    return int(np.argmin(d))


def find_winners(som: SomModel, xs: np.ndarray, chunk: int = 4096) -> np.ndarray:
    """Vectorized :func:`find_winner` over the rows of ``xs``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    out = np.empty(xs.shape[0], dtype=np.int64)
    w = som.weights
    for s in range(0, xs.shape[0], chunk):
        block = xs[s : s + chunk]
        d = ((block[:, None, :] - w[None, :, :]) ** 2).sum(axis=2)
        out[s : s + chunk] = np.argmin(d, axis=1)
    return out


def neighborhood(d_sq, sigma: float):
    """Gaussian neighbourhood weight for squared grid distance ``d_sq``."""
    return np.exp(-np.asarray(d_sq, dtype=float) / (2.0 * sigma * sigma))


def tau1(sigma0: float, log_base: str = "e") -> float:
    return TAU2 / (math.log(sigma0) if log_base == "e" else math.log10(sigma0))


def sigma_at(epoch: float, sigma0: float, log_base: str = "e") -> float:
    return sigma0 * math.exp(-epoch / tau1(sigma0, log_base))


def eta_at(epoch: float, eta0: float) -> float:
    return eta0 * math.exp(-epoch / TAU2)


def som_update(weights: np.ndarray, x: np.ndarray, winner: int, eta: float, sigma: float,
               d_sq: np.ndarray) -> None:
    """Move every neuron toward ``x`` by ``eta * h``, in place."""
    h = neighborhood(d_sq[winner], sigma)
    weights += (eta * h)[:, None] * (x - weights)


def train(som: SomModel, vectors: np.ndarray, config: SomConfig) -> SomModel:
    """Unsupervised training on attack-only vectors.

    Each epoch presents every vector once in an order reshuffled from the
    seed; the learning rate and neighbourhood width stay fixed within an
    epoch and decay between epochs.
    """
    vectors = np.asarray(vectors, dtype=float)
    if vectors.shape[0] == 0:
        raise EmptyDataError("empty-training-set: SOM training needs attack vectors")
    if vectors.shape[1] != som.input_dim:
        raise ValueError("vector dimensionality does not match the model")
    out = som.copy()
    w = out.weights
    d_sq = grid_sq_distances(out.grid_side)
    rng = np.random.default_rng([config.seed, 1])
    sigma0 = config.effective_sigma0
    for e in range(config.epochs):
        eta = eta_at(e, config.eta0)
        sigma = sigma_at(e, sigma0, config.log_base)
        coef = 2.0 * sigma * sigma
        for n in rng.permutation(vectors.shape[0]):
            x = vectors[n]
            diff = x - w
            winner = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
            h = np.exp(-d_sq[winner] / coef)
            w += (eta * h)[:, None] * diff
    out.labels = None
    cfg = asdict(config)
    cfg["init_range"] = list(config.init_range)
    cfg["sigma0"] = sigma0
    out.training = {**out.training, **cfg, "lvq": None}
    return out


def quantization_error(som: SomModel, vectors: np.ndarray) -> float:
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float))
    if vectors.shape[0] == 0:
        raise EmptyDataError("quantization error of an empty set")
    winners = find_winners(som, vectors)
    return float(np.linalg.norm(vectors - som.weights[winners], axis=1).mean())


def projection_counts(som: SomModel, vectors: np.ndarray, classes) -> np.ndarray:
    """``counts[j, c]``: vectors of class ``CLASS_ORDER[c]`` won by neuron ``j``."""
    counts = np.zeros((som.n_neurons, len(CLASS_ORDER)), dtype=np.int64)
    winners = find_winners(som, vectors)
    for j, cls in zip(winners, classes):
        counts[j, CLASS_ORDER.index(cls)] += 1
    return counts


def label_map(som: SomModel, vectors: np.ndarray, classes) -> SomModel:
    """Label each neuron with the majority class of the vectors it wins.

    Ties go to the earlier class in DoS, Probe, U2R, R2L order.  Neurons that
    win nothing inherit the label of the nearest labelled neuron on the grid
    (lowest index on ties).
    """
    classes = list(classes)
    if not classes:
        raise EmptyDataError("no-labelled-vectors: cannot label the map")
    bad = {c for c in classes if c not in CLASS_ORDER}
    if bad:
        raise ValueError(f"label_map needs attack classes, got {sorted(bad)}")
    counts = projection_counts(som, vectors, classes)
    hit = counts.sum(axis=1) > 0
    labels: list = [None] * som.n_neurons
    for j in np.flatnonzero(hit):
        labels[j] = CLASS_ORDER[int(np.argmax(counts[j]))]
    d_sq = grid_sq_distances(som.grid_side)
    hit_idx = np.flatnonzero(hit)
    for j in np.flatnonzero(~hit):
        nearest = hit_idx[int(np.argmin(d_sq[j, hit_idx]))]
        labels[j] = labels[nearest]
    out = som.copy()
    out.labels = labels
    return out


def lvq_train(som: SomModel, vectors: np.ndarray, classes, config: LvqConfig) -> SomModel:
    """LVQ1 on the winner only: attract on a label match, repel otherwise."""
    if not som.labelled:
        raise ValueError("LVQ needs a labelled map")
    vectors = np.asarray(vectors, dtype=float)
    classes = list(classes)
    out = som.copy()
    w = out.weights
    labels = out.labels
    rng = np.random.default_rng([config.seed, 2])
    alpha = config.alpha0
    for _ in range(config.epochs):
        for n in rng.permutation(vectors.shape[0]):
            x = vectors[n]
            diff = x - w
            winner = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
            if labels[winner] == classes[n]:
                w[winner] += alpha * diff[winner]
            else:
                w[winner] -= alpha * diff[winner]
        if config.halve:
            alpha /= 2.0
    out.training = {**out.training, "lvq": asdict(config)}
    return out


def classify(som: SomModel, x) -> str:
    if not som.labelled:
        raise ValueError("classification needs a labelled map")
    return som.labels[find_winner(som, x)]


def classify_many(som: SomModel, xs: np.ndarray) -> list:
    if not som.labelled:
        raise ValueError("classification needs a labelled map")
    return [som.labels[j] for j in find_winners(som, xs)]
