"""Regularized latent inversion against class-conditional decoders.

For a decoder ``G`` of class ``i`` and a normalized image ``x`` we minimize
``||x - G(z)||^2 + lam * ||z||^2`` over ``z`` with Adam from ``z = 0`` and keep
the iterate whose data term ``||x - G(z)||^2 / dim`` is smallest. Images the
decoder cannot explain score high.

Decoders are trained as the back half of a per-class autoencoder whose latent
code carries the same ``lam * ||z||^2`` penalty, so codes of small norm decode
to typical class members.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import Adam, MlpParams, MlpSpec, NonFiniteError, backward, forward_cache, init_params, minibatches
from .verdict import DetectorVerdict


class ZeroVarianceError(ValueError):
    pass


@dataclass(frozen=True)
class InversionConfig:
    latent_dim: int = 100
    lam: float = 100.0
    learning_rate: float = 0.05
    iterations: int = 2500
    optimizer: str = "adam"
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1 or self.iterations < 1:
            raise ValueError("latent_dim and iterations must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.optimizer != "adam":
            raise ValueError("only the adam optimizer is supported")


@dataclass(frozen=True, eq=False)
class InversionResult:
    z_best: np.ndarray
    mse: float
    best_iteration: int
    trace: np.ndarray | None = None  # running minimum of the data MSE per step


def normalize_image(image) -> np.ndarray:
    """``(x - mean) / std`` with the population standard deviation."""
    x = np.asarray(image, dtype=np.float64).ravel()
    sd = x.std()
    if sd <= 1e-8:
        raise ZeroVarianceError("zero variance: cannot normalize a constant image")
    return (x - x.mean()) / sd


def normalize_batch(images) -> np.ndarray:
    X = np.asarray(images, dtype=np.float64)
    X = X.reshape(X.shape[0], -1)
    sd = X.std(axis=1, keepdims=True)
    if np.any(sd <= 1e-8):
        raise ZeroVarianceError(f"zero variance in row {int(np.flatnonzero(sd.ravel() <= 1e-8)[0])}")
    return (X - X.mean(axis=1, keepdims=True)) / sd


def latent_invert_batch(decoder: MlpParams, images, cfg: InversionConfig, *, keep_trace: bool = False) -> list[InversionResult]:
    """Independent inversions of every row of ``images`` run side by side.

    Each row has its own objective and Adam moments are elementwise, so the
    result per row equals a one-at-a-time run.
    """
    X = np.atleast_2d(np.asarray(images, dtype=np.float64))
    if decoder.spec.n_in != cfg.latent_dim:
        raise ValueError(f"decoder latent width {decoder.spec.n_in} != cfg.latent_dim {cfg.latent_dim}")
    if decoder.spec.n_out != X.shape[1]:
        raise ValueError(f"decoder output width {decoder.spec.n_out} != image size {X.shape[1]}")
    n, dim = X.shape
    z = np.zeros((n, cfg.latent_dim))
    opt = Adam([z.shape], cfg.learning_rate)
    best_mse = np.full(n, np.inf)
    best_z = z.copy()
    best_it = np.zeros(n, dtype=int)
    trace = np.empty((cfg.iterations + 1, n)) if keep_trace else None
    for it in range(cfg.iterations + 1):
        try:
            cache = forward_cache(decoder, z)
        except NonFiniteError as exc:
            raise NonFiniteError(f"inversion diverged at iteration {it}: {exc}") from None
        resid = cache.y - X
        mse = np.sum(resid * resid, axis=1) / dim
        objective = mse * dim + cfg.lam * np.sum(z * z, axis=1)
        if not np.all(np.isfinite(objective)):
            raise NonFiniteError(f"non-finite inversion objective at iteration {it}")
        better = mse < best_mse
        best_mse[better] = mse[better]
        best_z[better] = z[better]
        best_it[better] = it
        if trace is not None:
            trace[it] = best_mse
        if it == cfg.iterations:
            break
        _, _, dz = backward(decoder, cache, 2.0 * resid)
        opt.step([z], [dz + 2.0 * cfg.lam * z])
    return [
        InversionResult(best_z[k].copy(), float(best_mse[k]), int(best_it[k]),
                        None if trace is None else trace[:, k].copy())
        for k in range(n)
    ]


def latent_invert(decoder: MlpParams, image, cfg: InversionConfig, *, keep_trace: bool = False) -> InversionResult:
    return latent_invert_batch(decoder, np.asarray(image, dtype=np.float64).reshape(1, -1), cfg, keep_trace=keep_trace)[0]


def inversion_decide(decoder: MlpParams, image, cfg: InversionConfig, tau: float, *, class_label: int = -1,
                     sample_id=None) -> DetectorVerdict:
    res = latent_invert(decoder, image, cfg)
    return DetectorVerdict("inversion", class_label, res.mse, float(tau), res.mse > tau, sample_id)


# ---------------------------------------------------------------------------
# decoder training


@dataclass(frozen=True)
class DecoderTrainConfig:
    latent_dim: int = 100
    hidden: tuple[int, ...] = (300,)
    lam: float = 100.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 300
    seed: int = 0


def decoder_spec(latent_dim: int, hidden: tuple[int, ...], dim: int) -> MlpSpec:
    return MlpSpec((latent_dim, *hidden, dim), ("tanh",) * len(hidden) + ("linear",), "mse")


def encoder_spec(latent_dim: int, hidden: tuple[int, ...], dim: int) -> MlpSpec:
    return MlpSpec((dim, *reversed(hidden), latent_dim), ("tanh",) * len(hidden) + ("linear",), "mse")


def train_decoder(images, cfg: DecoderTrainConfig, history: list | None = None) -> MlpParams:
    """Autoencoder on normalized images minimizing
    ``||x - D(E(x))||^2 + lam * ||E(x)||^2``; returns ``D``."""
    X = normalize_batch(images)
    dim = X.shape[1]
    enc = init_params(encoder_spec(cfg.latent_dim, cfg.hidden, dim), cfg.seed)
    dec = init_params(decoder_spec(cfg.latent_dim, cfg.hidden, dim), cfg.seed + 1)
    ew, eb = [w.copy() for w in enc.weights], [b.copy() for b in enc.biases]
    dw, db = [w.copy() for w in dec.weights], [b.copy() for b in dec.biases]
    arrays = [a for wb in zip(ew, eb) for a in wb] + [a for wb in zip(dw, db) for a in wb]
    opt = Adam([a.shape for a in arrays], cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    E, D = _View(enc.spec, ew, eb), _View(dec.spec, dw, db)
    for epoch in range(cfg.epochs):
        total = 0.0
        for idx in minibatches(X.shape[0], cfg.batch_size, rng):
            xb = X[idx]
            ce = forward_cache(E, xb)
            z = ce.y
            cd = forward_cache(D, z)
            resid = cd.y - xb
            total += float(np.sum(resid * resid) + cfg.lam * np.sum(z * z))
            gdw, gdb, dz = backward(D, cd, 2.0 * resid)
            gew, geb, _ = backward(E, ce, dz + 2.0 * cfg.lam * z)
            n = len(idx)
            grads = [g / n for pair in zip(gew, geb) for g in pair] + [g / n for pair in zip(gdw, gdb) for g in pair]
            opt.step(arrays, grads)
        if not np.isfinite(total):
            raise NonFiniteError(f"decoder training diverged at epoch {epoch}")
        if history is not None:
            history.append(total / X.shape[0])
    return MlpParams(dec.spec, tuple(dw), tuple(db), cfg.seed + 1)


class _View:
    def __init__(self, spec, ws, bs):
        self.spec, self.weights, self.biases = spec, ws, bs
