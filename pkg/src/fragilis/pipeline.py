"""MNIST workflows shared by the command line and the test-suite.

Adversarial families follow the ``x_{j->i}`` convention: clean test images
of source class ``j`` pushed by targeted FGSM until the classifier says ``i``.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .attacks import AdversarialExample, AttackBudget, targeted_fgsm_batch
from .data.config import AttackSection, ClassifierSection, DataSection, DecoderSection, PredictorSection, RunConfig
from .data.idx import MnistSet, load_mnist_idx
from .detectors.inversion import DecoderTrainConfig, train_decoder
from .detectors.masks import make_mask
from .detectors.pixel import PixelPredictor, train_pixel_predictor
from .nn import MlpParams, MlpSpec, TrainConfig, predict_labels, train


def child_seed(master: int, label: str) -> int:
    """Deterministic 63-bit seed for a named sub-task: blake2b over ``"<master>/<label>"``."""
    digest = hashlib.blake2b(f"{master}/{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def load_mnist(data: DataSection, base_dir=".") -> tuple[MnistSet, MnistSet]:
    from pathlib import Path

    root = Path(data.dir)
    if not root.is_absolute():
        root = Path(base_dir) / root
    train_set = load_mnist_idx(root / data.train_images, root / data.train_labels, "train",
                               strict_counts=data.strict_counts)
    test_set = load_mnist_idx(root / data.test_images, root / data.test_labels, "test",
                              strict_counts=data.strict_counts)
    return train_set, test_set


def classifier_spec(section: ClassifierSection) -> MlpSpec:
    hidden = tuple(section.hidden)
    return MlpSpec((784, *hidden, 10), ("relu",) * len(hidden) + ("softmax",), "cross_entropy")


def train_classifier(train_set: MnistSet, section: ClassifierSection, seed: int,
                     history: list | None = None) -> MlpParams:
    cfg = TrainConfig(section.learning_rate, section.batch_size, section.epochs, seed)
    return train(classifier_spec(section), train_set.flat, train_set.labels, cfg, history=history)


@dataclass(frozen=True, eq=False)
class AdversarialFamily:
    target: int
    sources: np.ndarray  # source class per example
    examples: tuple[AdversarialExample, ...]

    @property
    def perturbed(self) -> np.ndarray:
        return np.stack([e.perturbed for e in self.examples])

    @property
    def success(self) -> np.ndarray:
        return np.array([e.success for e in self.examples])


def clean_indices(clf: MlpParams, test_set: MnistSet) -> np.ndarray:
    return np.flatnonzero(predict_labels(clf, test_set.flat) == test_set.labels)


def build_family(clf: MlpParams, test_set: MnistSet, target: int, per_source: int, section: AttackSection,
                 skip: int = 0) -> AdversarialFamily:
    """Attack ``per_source`` clean images of every class ``j != target`` (taken
    in storage order after skipping ``skip``); keep the successful ones."""
    clean = clean_indices(clf, test_set)
    X, src = [], []
    for j in range(10):
        if j == target:
            continue
        idx = clean[test_set.labels[clean] == j][skip:skip + per_source]
        X.extend(test_set.flat[idx])
        src.extend([j] * len(idx))
    budget = AttackBudget(section.epsilon_step, section.iterations, section.clip_min, section.clip_max)
    examples = targeted_fgsm_batch(clf, np.array(X), src, [target] * len(src), budget)
    keep = [k for k, e in enumerate(examples) if e.success]
    return AdversarialFamily(target, np.array(src)[keep], tuple(examples[k] for k in keep))


def benign_of_class(clf: MlpParams, test_set: MnistSet, label: int, count: int) -> np.ndarray:
    """First ``count`` test images of ``label`` that the classifier labels correctly."""
    clean = clean_indices(clf, test_set)
    idx = clean[test_set.labels[clean] == label][:count]
    return test_set.flat[idx]


def train_predictors(train_set: MnistSet, section: PredictorSection, seed: int) -> dict[int, PixelPredictor]:
    mask = make_mask(section.kind, section.pctg, 28, 28)
    out = {}
    for c in section.classes:
        X = train_set.of_class(c)
        n_hold = max(1, int(round(section.holdout_fraction * X.shape[0])))
        cfg = TrainConfig(section.learning_rate, section.batch_size, section.epochs, child_seed(seed, f"predictor/{c}"))
        out[c] = train_pixel_predictor(c, X[:-n_hold], X[-n_hold:], mask, cfg)
    return out


def train_decoders(train_set: MnistSet, section: DecoderSection, seed: int) -> dict[int, MlpParams]:
    out = {}
    for c in section.classes:
        cfg = DecoderTrainConfig(section.latent_dim, tuple(section.hidden), section.lam, section.learning_rate,
                                 section.batch_size, section.epochs, child_seed(seed, f"decoder/{c}") % 2**31)
        out[c] = train_decoder(train_set.of_class(c), cfg)
    return out
