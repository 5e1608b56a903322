"""Finite codebooks and nearest-codeword consistency scores.

A codebook enumerates, for every label, the valid noiseless signals
(codewords) of that label. A classifier's output label ``j`` is *trusted but
verified* by measuring how far the observed signal sits from the nearest
label-``j`` codeword.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

CODEBOOK_FORMAT_VERSION = 1


class EmptyClassError(ValueError):
    pass


class DimensionError(ValueError):
    pass


@dataclass(frozen=True)
class ConsistencyScore:
    label: int
    distance: float
    codeword_used: np.ndarray | None
    flagged: bool
    threshold: float

    def __post_init__(self):
        # an infinite distance (no feasible codeword) is always flagged
        if self.flagged != (self.distance > self.threshold or math.isinf(self.distance)):
            raise ValueError("flagged must equal distance > threshold")


@dataclass(frozen=True, eq=False)
class Codebook:
    """Codewords stored row-wise with their labels.

    ``r0`` is the claimed half minimum inter-class distance and ``r`` the
    acceptance radius around each codeword; both are validated against the
    stored vectors on construction.
    """

    labels: np.ndarray
    vectors: np.ndarray
    r0: float
    r: float
    num_labels: int = field(default=0)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        vectors = np.atleast_2d(np.asarray(self.vectors, dtype=np.float64))
        if vectors.shape[0] != labels.shape[0]:
            raise DimensionError(f"{labels.shape[0]} labels for {vectors.shape[0]} codewords")
        if labels.size and labels.min() < 0:
            raise ValueError("labels must be non-negative")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("codewords must be finite")
        n_u = self.num_labels or (int(labels.max()) + 1 if labels.size else 0)
        if labels.size and labels.max() >= n_u:
            raise ValueError(f"label {int(labels.max())} outside [0, {n_u})")
        if self.r0 < 0 or self.r < 0:
            raise ValueError("r0 and r must be non-negative")
        if len(np.unique(labels)) >= 2:
            sep = separation_radius_of(labels, vectors)
            if self.r0 > sep * (1 + 1e-12):
                raise ValueError(f"r0={self.r0} exceeds the measured separation radius {sep}")
        if self.r0 > 0 and not self.r < self.r0:
            raise ValueError(f"acceptance radius r={self.r} must be below r0={self.r0}")
        labels.flags.writeable = False
        vectors.flags.writeable = False
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "num_labels", n_u)

    @property
    def dimension(self) -> int:
        return int(self.vectors.shape[1])

    def codewords(self, label: int) -> np.ndarray:
        return self.vectors[self.labels == label]

    @classmethod
    def from_entries(cls, entries: Sequence[tuple[int, Sequence[float]]], r0: float, r: float,
                     num_labels: int = 0) -> "Codebook":
        labels = [lab for lab, _ in entries]
        vectors = [list(vec) for _, vec in entries]
        return cls(np.array(labels), np.array(vectors, dtype=np.float64), r0, r, num_labels)

    def to_json(self) -> str:
        doc = {
            "version": CODEBOOK_FORMAT_VERSION,
            "dimension": self.dimension,
            "r0": self.r0,
            "r": self.r,
            "entries": [
                {"label": int(lab), "vector": [float(v) for v in vec]}
                for lab, vec in zip(self.labels, self.vectors)
            ],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text: str) -> "Codebook":
        doc = json.loads(text)
        if doc.get("version") != CODEBOOK_FORMAT_VERSION:
            raise ValueError(f"unsupported codebook version {doc.get('version')!r}")
        entries = [(e["label"], e["vector"]) for e in doc["entries"]]
        book = cls.from_entries(entries, float(doc["r0"]), float(doc["r"]))
        if book.dimension != doc["dimension"]:
            raise DimensionError(f"declared dimension {doc['dimension']} != stored {book.dimension}")
        return book

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "Codebook":
        return cls.from_json(Path(path).read_text())


def _check_query(codebook: Codebook, label: int, y) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.shape[0] != codebook.dimension:
        raise DimensionError(f"query has length {y.shape[0]}, codebook dimension is {codebook.dimension}")
    members = codebook.codewords(label)
    if members.shape[0] == 0:
        raise EmptyClassError(f"empty class: no codewords for label {label}")
    return y, members


def nearest_codeword(codebook: Codebook, label: int, y) -> tuple[np.ndarray, float]:
    """Exhaustive argmin/min of ``||y - c||`` over the codewords of ``label``.

    Ties resolve to the first codeword in storage order.
    """
    y, members = _check_query(codebook, label, y)
    dists = np.linalg.norm(members - y, axis=1)
    k = int(np.argmin(dists))  # argmin returns the first minimum
    return members[k].copy(), float(dists[k])


def verify_consistency(codebook: Codebook, label: int, y, threshold: float) -> ConsistencyScore:
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    c, d = nearest_codeword(codebook, label, y)
    return ConsistencyScore(label, d, c, d > threshold, threshold)


def generalized_score(
    codebook: Codebook,
    label: int,
    p_fn: Callable[[np.ndarray], np.ndarray],
    ta_fn: Callable[[np.ndarray], np.ndarray],
    y,
    neighborhood_radius: float,
    threshold: float = math.inf,
) -> ConsistencyScore:
    """Distance between ``ta(y)`` and ``ta(c)`` for the best codeword ``c`` of
    ``label`` whose ``p(c)`` lies within ``neighborhood_radius`` of ``p(y)``.

    An empty feasible set yields an infinite, flagged score.
    """
    if neighborhood_radius < 0:
        raise ValueError("neighborhood_radius must be non-negative")
    y, members = _check_query(codebook, label, y)
    py = np.atleast_1d(np.asarray(p_fn(y), dtype=np.float64))
    ty = np.atleast_1d(np.asarray(ta_fn(y), dtype=np.float64))
    best_d, best_c = math.inf, None
    for c in members:
        pc = np.atleast_1d(np.asarray(p_fn(c), dtype=np.float64))
        tc = np.atleast_1d(np.asarray(ta_fn(c), dtype=np.float64))
        if pc.shape != py.shape or tc.shape != ty.shape:
            raise DimensionError("p_fn/ta_fn output shapes differ between query and codeword")
        if np.linalg.norm(pc - py) > neighborhood_radius:
            continue
        d = float(np.linalg.norm(ty - tc))
        if d < best_d:
            best_d, best_c = d, c.copy()
    flagged = best_c is None or best_d > threshold
    return ConsistencyScore(label, best_d, best_c, flagged, threshold)


def separation_radius_of(labels: np.ndarray, vectors: np.ndarray) -> float:
    labels = np.asarray(labels)
    if len(np.unique(labels)) < 2:
        raise ValueError("separation radius needs at least two labels")
    vectors = np.asarray(vectors, dtype=np.float64)
    d = cdist(vectors, vectors)
    d[labels[:, None] == labels[None, :]] = np.inf
    i, j = np.unravel_index(np.argmin(d), d.shape)
    return float(np.linalg.norm(vectors[i] - vectors[j])) / 2.0


def separation_radius(codebook: Codebook) -> float:
    """Half the minimum distance between codewords carrying different labels."""
    return separation_radius_of(codebook.labels, codebook.vectors)


def ideal_classify(codebook: Codebook, y) -> int | None:
    """Label whose acceptance sphere (radius ``r``) contains ``y``, else ``None``."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    dists = np.linalg.norm(codebook.vectors - y, axis=1)
    k = int(np.argmin(dists))
    return int(codebook.labels[k]) if dists[k] <= codebook.r else None
