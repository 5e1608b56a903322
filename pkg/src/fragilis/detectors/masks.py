"""Pixel partitions for masked prediction.

CSS keeps everything except a centered ``L x L`` square with
``L = ceil(sqrt((1 - pctg) * W * H))``; CRS hides the central ``L`` rows with
``L = ceil((1 - pctg) * H)``. Hidden block offsets are ``floor((H - L) / 2)``
(and ``floor((W - L) / 2)`` for columns).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

KINDS = ("CSS", "CRS")


@dataclass(frozen=True, eq=False)
class MaskPattern:
    kind: str
    pctg: float
    width: int
    height: int
    in_indices: np.ndarray  # visible pixels, ascending flat indices
    out_indices: np.ndarray  # pixels to predict, ascending flat indices

    @property
    def n_in(self) -> int:
        return int(self.in_indices.size)

    @property
    def n_out(self) -> int:
        return int(self.out_indices.size)


def _ceil(v: float) -> int:
    # guard against (1 - pctg) * n landing a hair above an integer
    return math.ceil(round(v, 9))


def hidden_side(kind: str, pctg: float, width: int, height: int) -> int:
    if kind == "CSS":
        return _ceil(math.sqrt(round((1 - pctg) * width * height, 9)))
    if kind == "CRS":
        return _ceil((1 - pctg) * height)
    raise ValueError(f"unknown mask kind {kind!r}; expected CSS or CRS")


def make_mask(kind: str, pctg: float, width: int = 28, height: int = 28) -> MaskPattern:
    if not 0 < pctg < 1:
        raise ValueError(f"pctg must lie in (0, 1), got {pctg}")
    if width < 1 or height < 1:
        raise ValueError("image dimensions must be positive")
    L = hidden_side(kind, pctg, width, height)
    if L > height or (kind == "CSS" and L > width):
        raise ValueError(f"hidden block of side {L} does not fit a {width}x{height} image")
    top = (height - L) // 2
    hidden = np.zeros((height, width), dtype=bool)
    if kind == "CSS":
        left = (width - L) // 2
        hidden[top:top + L, left:left + L] = True
    else:
        hidden[top:top + L, :] = True
    flat = hidden.ravel()
    out_idx = np.flatnonzero(flat)
    in_idx = np.flatnonzero(~flat)
    out_idx.flags.writeable = False
    in_idx.flags.writeable = False
    return MaskPattern(kind, float(pctg), width, height, in_idx, out_idx)
