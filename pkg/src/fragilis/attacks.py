"""Adversarial example generation.

FGSM (one step, untargeted), iterated targeted FGSM, and the exact
minimum-norm attack against a linear compressed classifier. Success is always
decided by re-running the classifier on the perturbed input.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data.checkpoint import load_tensors, save_tensors
from .linalg import RowSpaceProjector, project_row_space, sphere_boundary_shift
from .nn import MlpParams, grad_input, predict_labels


class NotCleanError(ValueError):
    """The classifier already mislabels the input."""


class FlatLossError(ValueError):
    pass


@dataclass(frozen=True)
class AttackBudget:
    epsilon_step: float
    iterations: int = 1
    clip_min: float = 0.0
    clip_max: float = 1.0

    def __post_init__(self):
        if self.epsilon_step < 0:
            raise ValueError("epsilon_step must be non-negative")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.clip_min < self.clip_max:
            raise ValueError("clip_min must be below clip_max")


@dataclass(frozen=True, eq=False)
class AdversarialExample:
    original: np.ndarray
    perturbed: np.ndarray
    true_label: int
    target_label: int | None
    success: bool
    perturbation_norm_l2: float
    norm_linf: float
    iterations_used: int = 1

    @classmethod
    def build(cls, original, perturbed, true_label, target_label, success, iterations_used=1):
        delta = np.asarray(perturbed) - np.asarray(original)
        return cls(np.asarray(original), np.asarray(perturbed), int(true_label),
                   None if target_label is None else int(target_label), bool(success),
                   float(np.linalg.norm(delta)), float(np.max(np.abs(delta), initial=0.0)), iterations_used)


def _predict(params: MlpParams, x) -> int:
    return int(predict_labels(params, np.asarray(x)[None, :])[0])


def _require_clean(params: MlpParams, x, true_label: int) -> None:
    pred = _predict(params, x)
    if pred != true_label:
        raise NotCleanError(f"not a clean sample: classifier predicts {pred}, true label {true_label}")


def fgsm(params: MlpParams, x, true_label: int, budget: AttackBudget) -> AdversarialExample:
    """``clip(x + eps * sign(grad_x loss(x, true_label)))``."""
    x = np.asarray(x, dtype=np.float64)
    _require_clean(params, x, true_label)
    g = grad_input(params, x, np.int64(true_label))
    if not np.any(g):
        raise FlatLossError("flat loss: input gradient is zero everywhere")
    adv = np.clip(x + budget.epsilon_step * np.sign(g), budget.clip_min, budget.clip_max)
    return AdversarialExample.build(x, adv, true_label, None, _predict(params, adv) != true_label)


def targeted_fgsm(params: MlpParams, x, true_label: int, target_label: int, budget: AttackBudget) -> AdversarialExample:
    """Iterated descent on the target-class loss with sign steps, stopping at
    the first iterate the classifier assigns to ``target_label``."""
    x = np.asarray(x, dtype=np.float64)
    if target_label == true_label:
        raise ValueError("target label equals the true label")
    _require_clean(params, x, true_label)
    adv, used = x.copy(), 0
    for it in range(budget.iterations):
        g = grad_input(params, adv, np.int64(target_label))
        if not np.any(g):
            if it == 0:
                raise FlatLossError("flat loss: input gradient is zero everywhere")
            break
        adv = np.clip(adv - budget.epsilon_step * np.sign(g), budget.clip_min, budget.clip_max)
        used = it + 1
        if _predict(params, adv) == target_label:
            break
    return AdversarialExample.build(x, adv, true_label, target_label, _predict(params, adv) == target_label, used)


def targeted_fgsm_batch(params: MlpParams, X, true_labels, target_labels, budget: AttackBudget) -> list[AdversarialExample]:
    """Vectorized :func:`targeted_fgsm`; rows already at their target stop moving.

    Rows the classifier does not label with their true class are rejected.
    """
    X = np.asarray(X, dtype=np.float64)
    true_labels = np.asarray(true_labels, dtype=np.int64)
    target_labels = np.asarray(target_labels, dtype=np.int64)
    if np.any(true_labels == target_labels):
        raise ValueError("target label equals the true label")
    pred = predict_labels(params, X)
    if np.any(pred != true_labels):
        bad = int(np.flatnonzero(pred != true_labels)[0])
        raise NotCleanError(f"not a clean sample at row {bad}")
    adv = X.copy()
    used = np.zeros(len(X), dtype=int)
    active = np.ones(len(X), dtype=bool)
    for it in range(budget.iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        g = grad_input(params, adv[idx], target_labels[idx])
        adv[idx] = np.clip(adv[idx] - budget.epsilon_step * np.sign(g), budget.clip_min, budget.clip_max)
        used[idx] = it + 1
        active[idx] = predict_labels(params, adv[idx]) != target_labels[idx]
    final = predict_labels(params, adv)
    return [
        AdversarialExample.build(X[k], adv[k], true_labels[k], target_labels[k], final[k] == target_labels[k], int(used[k]))
        for k in range(len(X))
    ]


def linear_optimal_attack(A, x, c_i, r: float, projector: RowSpaceProjector | None = None) -> AdversarialExample:
    """Minimum-norm ``w`` putting the compressed image of ``x + w`` within ``r``
    of that of ``c_i``; labels are not meaningful here and set to -1/None."""
    x = np.asarray(x, dtype=np.float64)
    projector = projector or RowSpaceProjector.from_matrix(A)
    w = sphere_boundary_shift(projector, x, c_i, r)
    residual = float(np.linalg.norm(project_row_space(projector, x + w - np.asarray(c_i, dtype=np.float64))))
    success = residual <= r + 1e-8
    if not success:
        raise ArithmeticError(f"projected residual {residual:.3e} exceeds r={r}")
    return AdversarialExample(x, x + w, -1, None, success, float(np.linalg.norm(w)),
                              float(np.max(np.abs(w), initial=0.0)))


# ---------------------------------------------------------------------------
# persistence


def save_adversarial_set(directory, examples: Sequence[AdversarialExample], extra: dict | None = None) -> None:
    """``tensors.frgl`` holds stacked originals/perturbed; ``manifest.json`` one entry per item."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    if not examples:
        raise ValueError("no examples to save")
    save_tensors(directory / "tensors.frgl", {
        "original": np.stack([e.original for e in examples]),
        "perturbed": np.stack([e.perturbed for e in examples]),
    })
    items = [
        {"true_label": e.true_label, "target_label": e.target_label, "success": e.success,
         "l2": e.perturbation_norm_l2, "linf": e.norm_linf, "iterations": e.iterations_used}
        for e in examples
    ]
    doc = {"count": len(items), "items": items, **(extra or {})}
    (directory / "manifest.json").write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_adversarial_set(directory) -> list[AdversarialExample]:
    directory = Path(directory)
    tensors, _ = load_tensors(directory / "tensors.frgl")
    doc = json.loads((directory / "manifest.json").read_text())
    items = doc["items"]
    if len(items) != tensors["original"].shape[0]:
        raise ValueError("manifest and tensor counts differ")
    return [
        AdversarialExample(tensors["original"][k], tensors["perturbed"][k], it["true_label"], it["target_label"],
                           it["success"], it["l2"], it["linf"], it.get("iterations", 1))
        for k, it in enumerate(items)
    ]
