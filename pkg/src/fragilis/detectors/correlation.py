"""Lag-searched normalized cross-correlation.

For every lag ``m`` at which the reference fits entirely inside the observed
sequence, ``rho(m) = <ref, obs[m:m+len(ref)]> / (||ref|| * ||obs[m:m+len(ref)]||)``;
the score is ``max_m |rho(m)|``. Windows of zero energy contribute 0.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import correlate

from .verdict import DetectorVerdict


class ZeroEnergyError(ValueError):
    pass


def lag_correlations(reference, observed) -> np.ndarray:
    ref = np.asarray(reference, dtype=np.float64).ravel()
    obs = np.asarray(observed, dtype=np.float64).ravel()
    if ref.size == 0 or obs.size == 0:
        raise ValueError("sequences must be nonempty")
    if ref.size > obs.size:
        raise ValueError("reference must not be longer than the observed sequence")
    ref_norm = np.linalg.norm(ref)
    if ref_norm == 0:
        raise ZeroEnergyError("zero-energy reference")
    raw = correlate(obs, ref, mode="valid")
    csum = np.concatenate(([0.0], np.cumsum(obs * obs)))
    win = np.sqrt(np.maximum(csum[ref.size:] - csum[:-ref.size], 0.0))
    # cumulative sums can leave tiny residue on silent windows
    silent = win <= 1e-12 * max(np.sqrt(csum[-1]), 1e-300)
    rho = np.zeros_like(raw)
    rho[~silent] = raw[~silent] / (ref_norm * win[~silent])
    return np.clip(rho, -1.0, 1.0)


def correlation_score(reference, observed) -> float:
    return float(np.max(np.abs(lag_correlations(reference, observed))))


def correlation_decide(reference, observed, threshold: float = 0.4, *, class_label: int = -1,
                       sample_id=None) -> DetectorVerdict:
    """Flag when the best correlation falls below ``threshold``."""
    score = correlation_score(reference, observed)
    return DetectorVerdict("correlation", class_label, score, float(threshold), score < threshold, sample_id)
