"""Synthetic text-to-waveform loop with a compressed template recognizer.

* ``synth_encode`` turns a lowercase string into a waveform: every symbol is
  a burst of ``symbol_duration`` samples, a sinusoid at the symbol's carrier
  frequency (times the pitch factor ``v``) modulated by a Gaussian spreading
  sequence seeded from the whole text and the symbol position. Different
  texts are therefore nearly orthogonal, while the same text always yields the
  same samples.
* ``awgn_channel`` adds white Gaussian noise at an exact empirical SNR.
* ``TemplateClassifier`` sees only ``A y`` for a Gaussian ``A`` with very
  few rows and returns the text whose template is closest in that space.
* ``audio_attack`` moves ``A y`` onto a target template with the minimum-norm
  shift and pads the perturbation in the null space of ``A`` up to a fixed
  signal-to-perturbation ratio.
* ``run_correlation_trial`` re-synthesizes the recognized text and scores a
  short chunk of it against the received signal with the lag-searched
  correlation detector.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from ..detectors.correlation import correlation_decide
from ..linalg import GaussianMatrix, RowSpaceProjector, project_row_space, sample_gaussian_matrix, sphere_boundary_shift

ALPHABET = " abcdefghijklmnopqrstuvwxyz"

CORPUS = (
    "it was the best of times",
    "it was the worst of times",
    "it was the age of wisdom",
    "it was the age of foolishness",
    "it was the epoch of belief",
    "it was the epoch of incredulity",
    "it was the season of light",
    "it was the season of darkness",
    "it was the spring of hope",
    "it was the winter of despair",
)
TARGET_TEXT = "he travels the fastest who travels alone"

NOISELESS = "noiseless"


class UnknownSymbolError(ValueError):
    pass


class BudgetExceededError(ValueError):
    pass


@dataclass(frozen=True)
class SyntheticEncoder:
    symbol_duration: int = 4096
    sample_rate: float = 48000.0
    alphabet: str = ALPHABET
    base_freq: float = 200.0
    freq_step: float = 140.0
    nuisance: float = 1.0  # pitch scale v

    def __post_init__(self):
        if self.symbol_duration < 1 or self.sample_rate <= 0:
            raise ValueError("symbol_duration and sample_rate must be positive")
        if len(set(self.alphabet)) != len(self.alphabet):
            raise ValueError("alphabet has repeated symbols")
        top = self.base_freq + self.freq_step * (len(self.alphabet) - 1)
        if top * self.nuisance >= self.sample_rate / 2:
            raise ValueError("highest carrier exceeds the Nyquist frequency")

    @cached_property
    def carrier_map(self) -> dict[str, float]:
        return {s: self.base_freq + self.freq_step * k for k, s in enumerate(self.alphabet)}

    def length(self, text: str) -> int:
        return len(text) * self.symbol_duration

    def encode(self, text: str, v: float | None = None) -> np.ndarray:
        v = self.nuisance if v is None else float(v)
        if v <= 0:
            raise ValueError("pitch factor v must be positive")
        bad = sorted(set(text) - set(self.alphabet))
        if bad:
            raise UnknownSymbolError(f"unknown symbol(s) {bad!r}")
        t = np.arange(self.symbol_duration) / self.sample_rate
        out = np.empty(self.length(text))
        for pos, sym in enumerate(text):
            carrier = np.sin(2 * np.pi * self.carrier_map[sym] * v * t)
            spread = np.random.default_rng(_text_seed(text, pos)).standard_normal(self.symbol_duration)
            out[pos * self.symbol_duration:(pos + 1) * self.symbol_duration] = math.sqrt(2) * carrier * spread
        return out


def _text_seed(text: str, pos: int) -> int:
    digest = hashlib.blake2b(f"{text}\x00{pos}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


DEFAULT_ENCODER = SyntheticEncoder()


def synth_encode(text: str, v: float = 1.0, encoder: SyntheticEncoder = DEFAULT_ENCODER) -> np.ndarray:
    return encoder.encode(text, v)


def pad_to(x: np.ndarray, n: int) -> np.ndarray:
    if x.size > n:
        raise ValueError(f"waveform of {x.size} samples does not fit {n}")
    out = np.zeros(n)
    out[:x.size] = x
    return out


def cosine(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    n = max(a.size, b.size)
    a, b = pad_to(a, n), pad_to(b, n)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# ---------------------------------------------------------------------------
# channel


@dataclass(frozen=True)
class ChannelConfig:
    snr_db: float | str
    seed: int = 0

    def __post_init__(self):
        if self.snr_db != NOISELESS and not (isinstance(self.snr_db, (int, float)) and math.isfinite(self.snr_db)):
            raise ValueError("snr_db must be finite or 'noiseless'")


def snr_db(signal, noise) -> float:
    return 10 * math.log10(float(np.sum(np.square(signal))) / float(np.sum(np.square(noise))))


def awgn_channel(x, cfg: ChannelConfig) -> np.ndarray:
    """``x + n`` with Gaussian ``n`` rescaled so the sample SNR equals ``cfg.snr_db``."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty waveform")
    if cfg.snr_db == NOISELESS:
        return x.copy()
    energy = float(np.sum(x * x))
    if energy == 0:
        raise ValueError("zero-energy signal has no defined SNR")
    n = np.random.default_rng(cfg.seed).standard_normal(x.shape)
    n *= math.sqrt(energy / 10 ** (cfg.snr_db / 10) / float(np.sum(n * n)))
    return x + n


# ---------------------------------------------------------------------------
# compressed recognizer and attack


@dataclass(frozen=True, eq=False)
class TemplateClassifier:
    A: GaussianMatrix
    texts: tuple[str, ...]
    templates: np.ndarray  # (K, N) padded clean waveforms
    encoder: SyntheticEncoder

    @cached_property
    def projector(self) -> RowSpaceProjector:
        return RowSpaceProjector.from_matrix(self.A)

    @cached_property
    def features(self) -> np.ndarray:
        return self.templates @ self.A.entries.T

    @property
    def length(self) -> int:
        return self.A.N

    def classify(self, y) -> int:
        f = self.A.entries @ np.asarray(y, dtype=np.float64)
        return int(np.argmin(np.linalg.norm(self.features - f, axis=1)))

    def template(self, text: str) -> np.ndarray:
        return self.templates[self.texts.index(text)]


def build_template_classifier(texts: Sequence[str] = CORPUS + (TARGET_TEXT,), M: int = 4, seed: int = 0,
                              encoder: SyntheticEncoder = DEFAULT_ENCODER, v: float = 1.0) -> TemplateClassifier:
    texts = tuple(texts)
    if len(set(texts)) != len(texts):
        raise ValueError("texts must be distinct")
    N = max(encoder.length(t) for t in texts)
    templates = np.stack([pad_to(encoder.encode(t, v), N) for t in texts])
    return TemplateClassifier(sample_gaussian_matrix(M, N, seed), texts, templates, encoder)


def audio_attack(clf: TemplateClassifier, y, target_text: str, spr_db: float = 35.0, seed: int = 0) -> np.ndarray:
    """Perturbation ``w`` with ``A (y + w) = A c_target`` and
    ``||y + w||^2 / ||w||^2 = 10^(spr_db / 10)``.

    The row-space part is the minimum-norm shift; the remainder is a
    null-space component orthogonal to ``y`` sized to hit the ratio exactly.
    """
    y = np.asarray(y, dtype=np.float64)
    w0 = sphere_boundary_shift(clf.projector, y, clf.template(target_text), 0.0)
    k2 = 10 ** (spr_db / 10)
    w0n2 = float(w0 @ w0)
    s2 = (float(y @ y) + 2 * float(y @ w0) + w0n2 - k2 * w0n2) / (k2 - 1)
    if s2 < 0:
        raise BudgetExceededError(
            f"minimal attack norm {math.sqrt(w0n2):.4g} exceeds the {spr_db} dB signal-to-perturbation budget"
        )
    u = np.random.default_rng(seed).standard_normal(y.shape)
    u -= project_row_space(clf.projector, u)
    y_null = y - project_row_space(clf.projector, y)
    if y_null @ y_null > 0:
        u -= (u @ y_null) / (y_null @ y_null) * y_null
    return w0 + math.sqrt(s2) * u / np.linalg.norm(u)


@dataclass(frozen=True)
class CorrelationTrial:
    source_text: str
    decoded_text: str
    attacked: bool
    channel_snr_db: float
    spr_db: float | None
    score: float
    flagged: bool


def run_correlation_trial(clf: TemplateClassifier, text: str, *, attacked: bool, seed: int,
                          channel_snr_db: float = 28.0, spr_db: float = 35.0, chunk_fraction: float = 0.1,
                          threshold: float = 0.4, target_text: str = TARGET_TEXT) -> CorrelationTrial:
    """Encode, pass through the channel, optionally attack, recognize, re-encode
    the recognized text and correlate a leading chunk of it with the input."""
    x = pad_to(clf.encoder.encode(text), clf.length)
    noise_seed, attack_seed = np.random.SeedSequence([seed, 0]).generate_state(2)
    y = awgn_channel(x, ChannelConfig(channel_snr_db, int(noise_seed)))
    measured_snr = snr_db(x, y - x)
    spr = None
    if attacked:
        w = audio_attack(clf, y, target_text, spr_db, int(attack_seed))
        y = y + w
        spr = snr_db(y, w)
    decoded = clf.texts[clf.classify(y)]
    recon = clf.encoder.encode(decoded)
    ref = recon[:max(1, int(math.ceil(chunk_fraction * recon.size)))]
    verdict = correlation_decide(ref, y, threshold)
    return CorrelationTrial(text, decoded, attacked, measured_snr, spr, verdict.score, verdict.flagged)
