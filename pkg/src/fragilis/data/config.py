"""Typed run configuration loaded from JSON.

Every section is optional except ``seed``; omitted fields take the defaults
below. Unknown keys and out-of-range values raise :class:`ConfigError`
naming the offending field, before any computation starts.

Example::

    {"seed": 7,
     "data": {"dir": "data/mnist10k"},
     "predictors": {"kind": "CSS", "pctg": 0.95, "classes": [0, 1]},
     "inversion": {"lam": 100}}
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any


class ConfigError(ValueError):
    pass


def _check(cond: bool, name: str, msg: str) -> None:
    if not cond:
        raise ConfigError(f"{name}: {msg}")


def _classes(name: str, classes) -> tuple[int, ...]:
    classes = tuple(int(c) for c in classes)
    _check(len(classes) > 0 and all(0 <= c < 10 for c in classes), name, "classes must be digits 0-9")
    _check(len(set(classes)) == len(classes), name, "classes must be distinct")
    return classes


@dataclass(frozen=True)
class DataSection:
    dir: str = "data/mnist10k"
    train_images: str = "train-images-idx3-ubyte.gz"
    train_labels: str = "train-labels-idx1-ubyte.gz"
    test_images: str = "test-images-idx3-ubyte.gz"
    test_labels: str = "test-labels-idx1-ubyte.gz"
    strict_counts: bool = False


@dataclass(frozen=True)
class ClassifierSection:
    hidden: tuple[int, ...] = (300, 100)
    learning_rate: float = 1e-3
    batch_size: int = 128
    epochs: int = 10

    def validate(self):
        _check(all(h > 0 for h in self.hidden), "classifier.hidden", "sizes must be positive")
        _check(0 < self.learning_rate < 10, "classifier.learning_rate", "must lie in (0, 10)")
        _check(self.batch_size >= 1, "classifier.batch_size", "must be >= 1")
        _check(self.epochs >= 1, "classifier.epochs", "must be >= 1")


@dataclass(frozen=True)
class PredictorSection:
    kind: str = "CSS"
    pctg: float = 0.95
    classes: tuple[int, ...] = (0, 1)
    learning_rate: float = 0.002
    batch_size: int = 128
    epochs: int = 20
    holdout_fraction: float = 0.1

    def validate(self):
        _check(self.kind in ("CSS", "CRS"), "predictors.kind", "must be CSS or CRS")
        _check(0 < self.pctg < 1, "predictors.pctg", f"must lie in (0, 1), got {self.pctg}")
        _classes("predictors.classes", self.classes)
        _check(0 < self.learning_rate < 10, "predictors.learning_rate", "must lie in (0, 10)")
        _check(self.batch_size >= 1, "predictors.batch_size", "must be >= 1")
        _check(self.epochs >= 1, "predictors.epochs", "must be >= 1")
        _check(0 < self.holdout_fraction < 1, "predictors.holdout_fraction", "must lie in (0, 1)")


@dataclass(frozen=True)
class DecoderSection:
    classes: tuple[int, ...] = (0, 1, 9)
    latent_dim: int = 100
    hidden: tuple[int, ...] = (300,)
    lam: float = 100.0
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 300

    def validate(self):
        _classes("decoders.classes", self.classes)
        _check(self.latent_dim >= 1, "decoders.latent_dim", "must be >= 1")
        _check(all(h > 0 for h in self.hidden), "decoders.hidden", "sizes must be positive")
        _check(self.lam >= 0, "decoders.lam", "must be >= 0")
        _check(0 < self.learning_rate < 10, "decoders.learning_rate", "must lie in (0, 10)")
        _check(self.batch_size >= 1 and self.epochs >= 1, "decoders.epochs", "batch_size and epochs must be >= 1")


@dataclass(frozen=True)
class InversionSection:
    lam: float = 100.0
    learning_rate: float = 0.05
    iterations: int = 2500

    def validate(self):
        _check(self.lam >= 0, "inversion.lam", "must be >= 0")
        _check(self.learning_rate > 0, "inversion.learning_rate", "must be positive")
        _check(self.iterations >= 1, "inversion.iterations", "must be >= 1")


@dataclass(frozen=True)
class AttackSection:
    epsilon_step: float = 0.05
    iterations: int = 40
    per_pair: int = 10
    clip_min: float = 0.0
    clip_max: float = 1.0
    targets: tuple[int, ...] = tuple(range(10))

    def validate(self):
        _check(self.epsilon_step >= 0, "attack.epsilon_step", "must be >= 0")
        _check(self.iterations >= 1, "attack.iterations", "must be >= 1")
        _check(self.per_pair >= 1, "attack.per_pair", "must be >= 1")
        _check(self.clip_min < self.clip_max, "attack.clip_min", "must be below clip_max")
        _classes("attack.targets", self.targets)


@dataclass(frozen=True)
class DetectSection:
    detector: str = "pixel"
    classes: tuple[int, ...] = (0, 1)
    threshold: float = 0.1
    benign_per_class: int = 90
    adversarial_per_class: int = 90
    runs: int = 10  # correlation pipeline runs per condition

    def validate(self):
        _check(self.detector in ("pixel", "inversion", "correlation"), "detect.detector",
               "must be pixel, inversion or correlation")
        _classes("detect.classes", self.classes)
        _check(math.isfinite(self.threshold) and self.threshold >= 0, "detect.threshold", "must be finite and >= 0")
        _check(self.benign_per_class >= 1 and self.adversarial_per_class >= 1, "detect.benign_per_class",
               "sample counts must be >= 1")
        _check(1 <= self.runs <= 10, "detect.runs", "must lie in [1, 10]")


@dataclass(frozen=True)
class SweepSection:
    lo: float = 0.05
    hi: float = 0.70
    step: float = 0.05
    polarity: str = "high"
    bins: int = 20

    def validate(self):
        _check(self.step > 0 and self.hi >= self.lo, "sweep.step", "need step > 0 and hi >= lo")
        _check(self.polarity in ("high", "low"), "sweep.polarity", "must be high or low")
        _check(self.bins >= 2, "sweep.bins", "must be >= 2")


@dataclass(frozen=True)
class TheorySection:
    experiment: str = "targeted"
    N: int = 1000
    M: int = 100
    r: float = 0.05
    dist_xc: float = 1.0
    dist_x_c1: float = 0.025
    epsilon: float = 0.2
    trials: int = 500
    l_fraction: float = 0.8
    sphere_samples: int = 10000

    EXPERIMENTS = ("targeted", "untargeted", "robustness", "gap", "ratio", "singular", "concentration")

    def validate(self):
        _check(self.experiment in self.EXPERIMENTS, "theory.experiment", f"must be one of {self.EXPERIMENTS}")
        _check(self.N >= 1 and 1 <= self.M <= self.N, "theory.M", "need 1 <= M <= N")
        _check(self.r >= 0, "theory.r", "must be >= 0")
        _check(self.dist_xc > self.r, "theory.dist_xc", "must exceed r")
        _check(self.dist_x_c1 >= 0, "theory.dist_x_c1", "must be >= 0")
        _check(0 < self.epsilon < 1, "theory.epsilon", "must lie in (0, 1)")
        _check(self.trials >= 1, "theory.trials", "must be >= 1")
        _check(0 < self.l_fraction, "theory.l_fraction", "must be positive")
        _check(self.sphere_samples >= 100, "theory.sphere_samples", "must be >= 100")


@dataclass(frozen=True)
class InputsSection:
    """Artifacts from earlier runs (paths relative to the config file)."""

    classifier: str | None = None
    predictors: str | None = None
    decoders: str | None = None
    adversarial: str | None = None
    verdicts: str | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int
    data: DataSection = field(default_factory=DataSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    predictors: PredictorSection = field(default_factory=PredictorSection)
    decoders: DecoderSection = field(default_factory=DecoderSection)
    inversion: InversionSection = field(default_factory=InversionSection)
    attack: AttackSection = field(default_factory=AttackSection)
    detect: DetectSection = field(default_factory=DetectSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    theory: TheorySection = field(default_factory=TheorySection)
    inputs: InputsSection = field(default_factory=InputsSection)
    base_dir: str = "."

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p


_SECTION_TYPES = {
    "data": DataSection, "classifier": ClassifierSection, "predictors": PredictorSection,
    "decoders": DecoderSection, "inversion": InversionSection, "attack": AttackSection,
    "detect": DetectSection, "sweep": SweepSection, "theory": TheorySection, "inputs": InputsSection,
}


def _build_section(name: str, cls, raw: Any):
    if not isinstance(raw, dict):
        raise ConfigError(f"{name}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(raw) - set(known))
    if unknown:
        raise ConfigError(f"{name}.{unknown[0]}: unknown key")
    kwargs = {}
    for key, value in raw.items():
        default = known[key].default
        if isinstance(default, tuple):
            if not isinstance(value, (list, tuple)):
                raise ConfigError(f"{name}.{key}: expected a list")
            value = tuple(value)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{name}.{key}: expected true/false")
        elif isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{name}.{key}: expected an integer")
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key}: expected a number")
            value = float(value)
        elif isinstance(default, str) or default is None:
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"{name}.{key}: expected a string")
        kwargs[key] = value
    try:
        section = cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None
    if hasattr(section, "validate"):
        section.validate()
    return section


def parse_run_config(doc: dict, base_dir: str = ".") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: expected a JSON object")
    unknown = sorted(set(doc) - set(_SECTION_TYPES) - {"seed"})
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    if "seed" not in doc:
        raise ConfigError("seed: missing (seeds are mandatory)")
    seed = doc["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError("seed: must be an integer in [0, 2^64)")
    sections = {name: _build_section(name, cls, doc.get(name, {})) for name, cls in _SECTION_TYPES.items()}
    return RunConfig(seed=seed, base_dir=str(base_dir), **sections)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    return parse_run_config(doc, str(path.parent))
