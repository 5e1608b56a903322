"""Random matrices, sphere sampling and row-space projections.

All randomness goes through ``numpy.random.default_rng`` (PCG64 bit
generator, ziggurat normal transform), so a given seed reproduces the same
draws on every platform numpy supports. Seeds may be an int or a sequence of
ints (e.g. ``(master_seed, trial_index)``).
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

# singular values below RANK_CUTOFF * sigma_max are treated as zero
RANK_CUTOFF = 1e-10


class RankDeficientError(np.linalg.LinAlgError):
    pass


def rng_for(seed) -> np.random.Generator:
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class GaussianMatrix:
    M: int
    N: int
    entries: np.ndarray
    seed: object = None

    @property
    def shape(self) -> tuple[int, int]:
        return (self.M, self.N)


def sample_gaussian_matrix(M: int, N: int, seed) -> GaussianMatrix:
    """M x N matrix with i.i.d. N(0, 1) entries."""
    if M < 1 or N < 1:
        raise ValueError(f"matrix dimensions must be positive, got {M}x{N}")
    entries = rng_for(seed).standard_normal((M, N))
    entries.flags.writeable = False
    return GaussianMatrix(M, N, entries, seed)


def sample_unit_sphere(N: int, seed=None, *, rng: np.random.Generator | None = None) -> np.ndarray:
    """Uniform direction on the unit sphere in R^N via a normalized Gaussian draw."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = rng if rng is not None else rng_for(seed)
    while True:
        g = rng.standard_normal(N)
        norm = np.linalg.norm(g)
        if norm > 0:
            return g / norm


def sample_unit_sphere_batch(count: int, N: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.standard_normal((count, N))
    norms = np.linalg.norm(g, axis=1)
    while np.any(norms == 0):  # probability zero, kept for completeness
        bad = norms == 0
        g[bad] = rng.standard_normal((int(bad.sum()), N))
        norms = np.linalg.norm(g, axis=1)
    return g / norms[:, None]


def singular_values(matrix) -> np.ndarray:
    """Full singular spectrum in descending order."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix has non-finite entries")
    if matrix.size == 0:
        return np.zeros(0)
    return np.linalg.svd(np.atleast_2d(matrix), compute_uv=False)


def _as_array(A) -> np.ndarray:
    return A.entries if isinstance(A, GaussianMatrix) else np.asarray(A, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class RowSpaceProjector:
    """Orthogonal projector onto the row space of ``source``.

    Stored as an orthonormal basis ``V`` (N x rank) of the row space so that
    ``P v = V (V^T v)`` costs O(N * rank); the dense ``P`` is built on demand.
    """

    source: object
    basis: np.ndarray
    singular: np.ndarray

    @classmethod
    def from_matrix(cls, A) -> "RowSpaceProjector":
        arr = _as_array(A)
        if not np.all(np.isfinite(arr)):
            raise ValueError("matrix has non-finite entries")
        _, s, vt = np.linalg.svd(arr, full_matrices=False)
        keep = s > RANK_CUTOFF * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
        basis = vt[keep].T.copy()
        basis.flags.writeable = False
        return cls(A, basis, s)

    @property
    def N(self) -> int:
        return int(self.basis.shape[0])

    @property
    def rank(self) -> int:
        return int(self.basis.shape[1])

    @property
    def full_rank(self) -> bool:
        return self.rank == min(_as_array(self.source).shape)

    @cached_property
    def P(self) -> np.ndarray:
        return self.basis @ self.basis.T

    def pinv(self) -> np.ndarray:
        """Moore-Penrose pseudoinverse of the source with the same rank cutoff."""
        u, s, vt = np.linalg.svd(_as_array(self.source), full_matrices=False)
        keep = s > RANK_CUTOFF * s[0]
        return (vt[keep].T / s[keep]) @ u[:, keep].T


def project_row_space(projector: RowSpaceProjector, v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != projector.N:
        raise ValueError(f"vector length {v.shape[-1]} does not match N={projector.N}")
    return (v @ projector.basis) @ projector.basis.T


def min_norm_preimage_shift(A, x, t, projector: RowSpaceProjector | None = None) -> np.ndarray:
    """Smallest ``w`` with ``A (x + w) = A t``, i.e. ``w = pinv(A) A (t - x)``.

    Raises :class:`RankDeficientError` when ``A`` is not of full row rank.
    """
    arr = _as_array(A)
    projector = projector or RowSpaceProjector.from_matrix(A)
    if projector.rank < arr.shape[0]:
        raise RankDeficientError(
            f"A has numerical rank {projector.rank} < {arr.shape[0]} rows "
            f"(cutoff {RANK_CUTOFF:g} * sigma_max)"
        )
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if x.shape != (arr.shape[1],) or t.shape != (arr.shape[1],):
        raise ValueError("x and t must be vectors of length N")
    w = project_row_space(projector, t - x)
    target = arr @ t
    residual = np.linalg.norm(arr @ (x + w) - target)
    scale = max(np.linalg.norm(target), np.linalg.norm(arr @ x), np.finfo(float).tiny)
    if residual > 1e-8 * scale:
        raise np.linalg.LinAlgError(f"preimage residual {residual:.3e} exceeds tolerance")
    return w


def sphere_boundary_shift(projector: RowSpaceProjector, x, c, r: float) -> np.ndarray:
    """Smallest perturbation whose row-space image lands in the radius-``r``
    ball around ``P c``: ``P (c - x)`` shortened by ``r`` along its own
    direction (zero when ``x`` already projects inside the ball).
    """
    d = project_row_space(projector, np.asarray(c, dtype=np.float64) - np.asarray(x, dtype=np.float64))
    dn = np.linalg.norm(d)
    if dn <= r:
        return np.zeros_like(d)
    return d * (1.0 - r / dn)
