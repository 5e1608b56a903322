"""Small dense feedforward networks in numpy: forward pass, backprop, training.

Layer ``k`` computes ``h_k = act_k(h_{k-1} @ W_k.T + b_k)`` with ``W_k`` of
shape (out, in). Batches are row-major ``(n, features)`` arrays.

Losses, per sample:

* ``mse``: ``0.5 * sum((y - t)^2)`` over outputs
* ``cross_entropy``: ``-log p_label`` on a softmax head

Batch losses and parameter gradients are means over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("sigmoid", "tanh", "relu", "softmax", "linear")
LOSSES = ("mse", "cross_entropy")


class NonFiniteError(FloatingPointError):
    pass


class DivergenceError(NonFiniteError):
    pass


@dataclass(frozen=True)
class MlpSpec:
    """``layer_sizes`` lists the input width followed by every layer width;
    ``activations`` has one tag per weight layer."""

    layer_sizes: tuple[int, ...]
    activations: tuple[str, ...]
    loss: str = "mse"

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        acts = tuple(self.activations)
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activations", acts)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError("need an input size and at least one positive layer size")
        if len(acts) != len(sizes) - 1:
            raise ValueError(f"{len(sizes) - 1} layers but {len(acts)} activation tags")
        unknown = set(acts) - set(ACTIVATIONS)
        if unknown:
            raise ValueError(f"unknown activation(s) {sorted(unknown)}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")
        if "softmax" in acts[:-1]:
            raise ValueError("softmax is only allowed on the final layer")
        if (acts[-1] == "softmax") != (self.loss == "cross_entropy"):
            raise ValueError("softmax output and cross_entropy loss must go together")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def to_dict(self) -> dict:
        return {"layer_sizes": list(self.layer_sizes), "activations": list(self.activations), "loss": self.loss}

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["layer_sizes"]), tuple(d["activations"]), d["loss"])


@dataclass(frozen=True, eq=False)
class MlpParams:
    spec: MlpSpec
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    init_seed: int | None = None

    def __post_init__(self):
        ws = tuple(np.asarray(w, dtype=np.float64) for w in self.weights)
        bs = tuple(np.asarray(b, dtype=np.float64) for b in self.biases)
        sizes = self.spec.layer_sizes
        if len(ws) != len(sizes) - 1 or len(bs) != len(ws):
            raise ValueError("parameter count does not match the MlpSpec")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.shape != (sizes[k + 1], sizes[k]) or b.shape != (sizes[k + 1],):
                raise ValueError(
                    f"layer {k}: expected W {(sizes[k + 1], sizes[k])}, b {(sizes[k + 1],)}; "
                    f"got {w.shape}, {b.shape}"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NonFiniteError(f"layer {k} has non-finite parameters")
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for wb in zip(self.weights, self.biases) for a in wb])

    def with_flat(self, vec) -> "MlpParams":
        vec = np.asarray(vec, dtype=np.float64)
        ws, bs, i = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(vec[i:i + w.size].reshape(w.shape))
            i += w.size
            bs.append(vec[i:i + b.size].copy())
            i += b.size
        if i != vec.size:
            raise ValueError("flat vector length does not match parameter count")
        return MlpParams(self.spec, tuple(ws), tuple(bs), self.init_seed)


def init_params(spec: MlpSpec, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    ws, bs = [], []
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        limit = np.sqrt(6.0 / (n_in + n_out))
        ws.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        bs.append(np.zeros(n_out))
    return MlpParams(spec, tuple(ws), tuple(bs), seed)


# ---------------------------------------------------------------------------
# forward / backward


def _act(tag: str, a: np.ndarray) -> np.ndarray:
    if tag == "sigmoid":
        # split form avoids overflow in exp for large |a|
        out = np.empty_like(a)
        pos = a >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
        ea = np.exp(a[~pos])
        out[~pos] = ea / (1.0 + ea)
        return out
    if tag == "tanh":
        return np.tanh(a)
    if tag == "relu":
        return np.maximum(a, 0.0)
    if tag == "softmax":
        z = a - a.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)
    return a.copy()


def _act_grad(tag: str, a: np.ndarray, h: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Chain ``upstream = dL/dh`` through the elementwise activation."""
    if tag == "sigmoid":
        return upstream * h * (1.0 - h)
    if tag == "tanh":
        return upstream * (1.0 - h * h)
    if tag == "relu":
        return upstream * (a > 0)
    if tag == "softmax":
        return h * (upstream - np.sum(upstream * h, axis=-1, keepdims=True))
    return upstream


@dataclass
class ForwardCache:
    inputs: list[np.ndarray] = field(default_factory=list)  # h_{k-1} per layer
    pre: list[np.ndarray] = field(default_factory=list)
    outputs: list[np.ndarray] = field(default_factory=list)

    @property
    def y(self) -> np.ndarray:
        return self.outputs[-1]


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != params.spec.n_in:
        raise ValueError(f"input width {X.shape[-1]} does not match network input {params.spec.n_in}")
    return X, single


def forward_cache(params: MlpParams, X: np.ndarray) -> ForwardCache:
    cache = ForwardCache()
    h = X
    for k, (w, b, tag) in enumerate(zip(params.weights, params.biases, params.spec.activations)):
        a = h @ w.T + b
        out = _act(tag, a)
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"non-finite activation in layer {k}")
        cache.inputs.append(h)
        cache.pre.append(a)
        cache.outputs.append(out)
        h = out
    return cache


def forward(params: MlpParams, x) -> np.ndarray:
    """Network output for a vector or a batch of row vectors."""
    X, single = _as_batch(params, x)
    y = forward_cache(params, X).y
    return y[0] if single else y


def backward(params: MlpParams, cache: ForwardCache, d_out: np.ndarray, *, pre_activation: bool = False):
    """Backpropagate ``d_out`` (dL/dy, or dL/da of the last layer when
    ``pre_activation``) and return ``(grads_W, grads_b, dL/dx)`` summed over the batch.
    """
    gw, gb = [None] * len(params.weights), [None] * len(params.weights)
    delta = d_out
    for k in reversed(range(len(params.weights))):
        tag = params.spec.activations[k]
        if not (pre_activation and k == len(params.weights) - 1):
            delta = _act_grad(tag, cache.pre[k], cache.outputs[k], delta)
        gw[k] = delta.T @ cache.inputs[k]
        gb[k] = delta.sum(axis=0)
        delta = delta @ params.weights[k]
    return gw, gb, delta


def _targets(params: MlpParams, target, n: int) -> np.ndarray:
    t = np.asarray(target)
    if params.spec.loss == "cross_entropy" and t.ndim <= 1 and np.issubdtype(t.dtype, np.integer):
        labels = np.broadcast_to(t.reshape(-1), (n,)) if t.ndim == 0 else t
        if labels.shape != (n,) or labels.min() < 0 or labels.max() >= params.spec.n_out:
            raise ValueError("labels must be integers in [0, n_out), one per sample")
        onehot = np.zeros((n, params.spec.n_out))
        onehot[np.arange(n), labels] = 1.0
        return onehot
    t = np.asarray(target, dtype=np.float64)
    t = t[None, :] if t.ndim == 1 else t
    if t.shape != (n, params.spec.n_out):
        raise ValueError(f"targets of shape {t.shape}, expected {(n, params.spec.n_out)}")
    return t


def _loss_and_delta(params: MlpParams, y: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Per-sample losses and dL/d(output) (or dL/d(pre-activation) for softmax+CE)."""
    if params.spec.loss == "cross_entropy":
        losses = -np.log(np.clip(np.sum(y * t, axis=1), 1e-300, None))
        return losses, y - t, True
    diff = y - t
    return 0.5 * np.sum(diff * diff, axis=1), diff, False


def loss(params: MlpParams, X, T) -> float:
    X, _ = _as_batch(params, X)
    y = forward_cache(params, X).y
    return float(np.mean(_loss_and_delta(params, y, _targets(params, T, X.shape[0]))[0]))


@dataclass(frozen=True)
class Gradients:
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    loss: float

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for wb in zip(self.weights, self.biases) for a in wb])


def grad_params(params: MlpParams, X, T) -> Gradients:
    """Mean loss over the batch and its gradient w.r.t. every weight and bias."""
    X, _ = _as_batch(params, X)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    cache = forward_cache(params, X)
    losses, delta, pre = _loss_and_delta(params, cache.y, _targets(params, T, X.shape[0]))
    gw, gb, _ = backward(params, cache, delta, pre_activation=pre)
    n = X.shape[0]
    return Gradients(tuple(g / n for g in gw), tuple(g / n for g in gb), float(losses.mean()))


def grad_input(params: MlpParams, x, target) -> np.ndarray:
    """Gradient of each sample's own loss w.r.t. its input (same shape as ``x``)."""
    X, single = _as_batch(params, x)
    cache = forward_cache(params, X)
    _, delta, pre = _loss_and_delta(params, cache.y, _targets(params, target, X.shape[0]))
    _, _, dx = backward(params, cache, delta, pre_activation=pre)
    return dx[0] if single else dx


def predict_labels(params: MlpParams, X) -> np.ndarray:
    """Argmax class per row; ties go to the lowest index."""
    y = forward(params, np.atleast_2d(X))
    return np.argmax(y, axis=1)


def evaluate_accuracy(params: MlpParams, X, labels) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    labels = np.asarray(labels).reshape(-1)
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    return float(np.mean(predict_labels(params, X) == labels))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float
    batch_size: int
    epochs: int
    seed: int
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0 < self.learning_rate < 10:
            raise ValueError("learning_rate must lie in (0, 10)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ValueError("invalid Adam hyperparameters")


class Adam:
    """Elementwise Adam over a list of arrays, updated in place."""

    def __init__(self, shapes: Sequence[tuple[int, ...]], lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1 - self.beta1**self.t
        c2 = 1 - self.beta2**self.t
        for p, g, m, v in zip(arrays, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, arrays, grads) -> None:
        for p, g in zip(arrays, grads):
            p -= self.lr * g


def make_optimizer(cfg: TrainConfig, arrays: Sequence[np.ndarray]):
    if cfg.optimizer == "adam":
        return Adam([a.shape for a in arrays], cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    return Sgd(cfg.learning_rate)


def minibatches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def train(spec: MlpSpec, X, T, cfg: TrainConfig, *, init: MlpParams | None = None,
          history: list | None = None, on_epoch: Callable[[int, float], None] | None = None) -> MlpParams:
    """Minibatch training with a per-epoch shuffle drawn from ``cfg.seed``.

    Mean training loss per epoch is appended to ``history`` when given.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("training data must be a nonempty 2-D array")
    params = init or init_params(spec, cfg.seed)
    if params.spec != spec:
        raise ValueError("initial parameters do not match the MlpSpec")
    Tm = _targets(params, T, X.shape[0])
    ws = [w.copy() for w in params.weights]
    bs = [b.copy() for b in params.biases]
    arrays = [a for wb in zip(ws, bs) for a in wb]
    opt = make_optimizer(cfg, arrays)
    rng = np.random.default_rng(cfg.seed)
    for epoch in range(cfg.epochs):
        total, count = 0.0, 0
        for bi, idx in enumerate(minibatches(X.shape[0], cfg.batch_size, rng)):
            cur = _Live(spec, ws, bs)
            try:
                cache = forward_cache(cur, X[idx])
            except NonFiniteError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}, batch {bi}") from None
            losses, delta, pre = _loss_and_delta(cur, cache.y, Tm[idx])
            if not np.all(np.isfinite(losses)):
                raise DivergenceError(f"loss became non-finite at epoch {epoch}, batch {bi}")
            gw, gb, _ = backward(cur, cache, delta, pre_activation=pre)
            n = len(idx)
            opt.step(arrays, [g / n for pair in zip(gw, gb) for g in pair])
            total += float(losses.sum())
            count += n
            if not all(np.all(np.isfinite(a)) for a in arrays):
                raise DivergenceError(f"parameters became non-finite at epoch {epoch}, batch {bi}")
        if history is not None:
            history.append(total / count)
        if on_epoch is not None:
            on_epoch(epoch, total / count)
    return MlpParams(spec, tuple(ws), tuple(bs), params.init_seed)


class _Live:
    """Lightweight mutable view used inside the training loop (skips validation)."""

    def __init__(self, spec, ws, bs):
        self.spec, self.weights, self.biases = spec, ws, bs
