from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from fragilis import pipeline
from fragilis.data.config import AttackSection, ClassifierSection, DataSection, DecoderSection, PredictorSection

ROOT = Path(__file__).resolve().parents[1]
MNIST_DIR = ROOT / "data" / "mnist10k"
MASTER_SEED = 20240601


@pytest.fixture(scope="session")
def mnist():
    return pipeline.load_mnist(DataSection(dir=str(MNIST_DIR)))


@pytest.fixture(scope="session")
def classifier(mnist):
    train_set, _ = mnist
    return pipeline.train_classifier(train_set, ClassifierSection(), pipeline.child_seed(MASTER_SEED, "classifier"))


@pytest.fixture(scope="session")
def attack_section():
    return AttackSection()


@pytest.fixture(scope="session")
def families(mnist, classifier, attack_section):
    """Targeted-FGSM families x_{j->i} for every target used by the detectors."""
    _, test_set = mnist
    return {i: pipeline.build_family(classifier, test_set, i, 10, attack_section) for i in (0, 1, 9)}


@pytest.fixture(scope="session")
def predictors(mnist):
    train_set, _ = mnist
    return pipeline.train_predictors(train_set, PredictorSection(classes=(0, 1)),
                                     pipeline.child_seed(MASTER_SEED, "predictors"))


@pytest.fixture(scope="session")
def decoders(mnist):
    train_set, _ = mnist
    return pipeline.train_decoders(train_set, DecoderSection(classes=(0, 1, 9)),
                                   pipeline.child_seed(MASTER_SEED, "decoders"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = []
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in getattr(rep, "nodeid", "") or rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" not in props:
                continue
            lines.append((props["criterion"], "PASS" if rep.passed else "FAIL", props.get("detail", "")))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for crit, status, detail in sorted(lines, key=lambda t: (int(t[0].split(".")[0]), t[0])):
        terminalreporter.write_line(f"[{status}] criterion {crit}: {detail}")
