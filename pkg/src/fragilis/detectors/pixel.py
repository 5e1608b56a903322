"""Class-conditional masked pixel prediction.

Predictor ``i`` learns to fill the hidden pixels of class-``i`` digits from
the visible ones. An input labelled ``i`` whose hidden pixels are predicted
badly (large MSE) is unlikely to really be an ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..nn import MlpParams, MlpSpec, TrainConfig, forward, train
from .masks import MaskPattern
from .verdict import DetectorVerdict

HIDDEN = (300, 300)

# lr 0.002, batch 128, 20 epochs
DEFAULT_TRAIN = dict(learning_rate=0.002, batch_size=128, epochs=20, optimizer="adam")


@dataclass(frozen=True, eq=False)
class PixelPredictor:
    class_label: int
    mask: MaskPattern
    net: MlpParams
    baseline_mse: float

    def __post_init__(self):
        if self.net.spec.n_in != self.mask.n_in or self.net.spec.n_out != self.mask.n_out:
            raise ValueError("network widths do not match the mask partition")
        if self.baseline_mse < 0:
            raise ValueError("baseline_mse must be non-negative")


def predictor_spec(mask: MaskPattern) -> MlpSpec:
    return MlpSpec((mask.n_in, *HIDDEN, mask.n_out), ("sigmoid",) * 3, "mse")


def _flat(mask: MaskPattern, images) -> np.ndarray:
    X = np.asarray(images, dtype=np.float64)
    X = X.reshape(X.shape[0], -1) if X.ndim == 3 else np.atleast_2d(X)
    if X.shape[1] != mask.width * mask.height:
        raise ValueError(f"images have {X.shape[1]} pixels, mask expects {mask.width * mask.height}")
    return X


def predictor_mse_batch(predictor: PixelPredictor, images) -> np.ndarray:
    """Per-image mean squared error over the hidden pixels."""
    X = _flat(predictor.mask, images)
    pred = forward(predictor.net, X[:, predictor.mask.in_indices])
    return np.mean((X[:, predictor.mask.out_indices] - pred) ** 2, axis=1)


def predictor_mse(predictor: PixelPredictor, image) -> float:
    image = np.asarray(image, dtype=np.float64)
    if image.size != predictor.mask.width * predictor.mask.height:
        raise ValueError(f"image has {image.size} pixels, mask expects {predictor.mask.width * predictor.mask.height}")
    return float(predictor_mse_batch(predictor, image.reshape(1, -1))[0])


def train_pixel_predictor(class_label: int, train_images, heldout_images, mask: MaskPattern,
                          cfg: TrainConfig) -> PixelPredictor:
    """Fit visible -> hidden pixels on one class; the baseline is the mean
    hidden-pixel MSE on ``heldout_images`` of the same class."""
    X = _flat(mask, train_images)
    H = _flat(mask, heldout_images)
    if X.shape[0] == 0 or H.shape[0] == 0:
        raise ValueError("need nonempty training and held-out data")
    net = train(predictor_spec(mask), X[:, mask.in_indices], X[:, mask.out_indices], cfg)
    pred = forward(net, H[:, mask.in_indices])
    baseline = float(np.mean((H[:, mask.out_indices] - pred) ** 2))
    return PixelPredictor(int(class_label), mask, net, baseline)


def predictor_decide(predictor: PixelPredictor, image, c: float | None = None, *, tau: float | None = None,
                     sample_id=None) -> DetectorVerdict:
    """Flag when the MSE exceeds ``c * baseline_mse`` (relative mode) or ``tau``
    (absolute mode). Exactly one of ``c`` and ``tau`` must be given."""
    if (c is None) == (tau is None):
        raise ValueError("give exactly one of c (relative) or tau (absolute)")
    if c is not None:
        if c <= 0:
            raise ValueError("c must be positive")
        if predictor.baseline_mse <= 0:
            raise ValueError("relative mode needs a positive baseline MSE")
        threshold = c * predictor.baseline_mse
    else:
        threshold = float(tau)
    mse = predictor_mse(predictor, image)
    return DetectorVerdict(f"pixel-{predictor.mask.kind}", predictor.class_label, mse, threshold,
                           mse > threshold, sample_id)
