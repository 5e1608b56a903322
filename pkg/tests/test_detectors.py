import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragilis.detectors.correlation import ZeroEnergyError, correlation_decide, correlation_score, lag_correlations
from fragilis.detectors.inversion import (
    InversionConfig, ZeroVarianceError, inversion_decide, latent_invert, latent_invert_batch, normalize_batch,
    normalize_image,
)
from fragilis.detectors.masks import make_mask
from fragilis.detectors.pixel import (
    PixelPredictor, predictor_decide, predictor_mse, predictor_mse_batch, predictor_spec, train_pixel_predictor,
)
from fragilis.detectors.verdict import DetectorVerdict, read_verdicts_jsonl, write_verdicts_jsonl
from fragilis.nn import MlpParams, MlpSpec, TrainConfig, init_params

# ---------------------------------------------------------------------------
# masks


def test_mask_sizes():
    assert make_mask("CSS", 0.95).n_out == 49
    assert make_mask("CRS", 0.95).n_out == 56
    assert make_mask("CSS", 0.9).n_out == 81
    m = make_mask("CSS", 0.95)
    grid = np.zeros(784, dtype=bool)
    grid[m.out_indices] = True
    rows, cols = np.nonzero(grid.reshape(28, 28))
    assert (rows.min(), cols.min(), rows.max(), cols.max()) == (10, 10, 16, 16)
    crs = np.zeros(784, dtype=bool)
    crs[make_mask("CRS", 0.95).out_indices] = True
    assert sorted(set(np.nonzero(crs.reshape(28, 28))[0])) == [13, 14]


def test_mask_errors():
    with pytest.raises(ValueError):
        make_mask("CSS", 1.2)
    with pytest.raises(ValueError):
        make_mask("XYZ", 0.5)
    with pytest.raises(ValueError):
        make_mask("CSS", 0.01, 4, 28)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["CSS", "CRS"]), st.floats(0.3, 0.99), st.integers(8, 40), st.integers(8, 40))
def test_mask_partition(kind, pctg, w, h):
    try:
        m = make_mask(kind, pctg, w, h)
    except ValueError:
        return
    both = np.concatenate([m.in_indices, m.out_indices])
    assert both.size == w * h
    assert np.array_equal(np.sort(both), np.arange(w * h))


# ---------------------------------------------------------------------------
# pixel predictor


def constant_predictor(mask, value):
    spec = predictor_spec(mask)
    ws = [np.zeros((o, i)) for i, o in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])]
    bs = [np.zeros(o) for o in spec.layer_sizes[1:]]
    bs[-1][:] = math.log(value / (1 - value))
    return PixelPredictor(0, mask, MlpParams(spec, tuple(ws), tuple(bs)), 0.1)


def test_predictor_mse_examples():
    mask = make_mask("CSS", 0.95)
    half = constant_predictor(mask, 0.5)
    assert predictor_mse(half, np.zeros(784)) == pytest.approx(0.25)
    img = np.zeros(784)
    img[mask.out_indices] = 0.5
    assert predictor_mse(half, img) == pytest.approx(0.0, abs=1e-20)
    with pytest.raises(ValueError):
        predictor_mse(half, np.zeros(100))
    np.testing.assert_allclose(predictor_mse_batch(half, np.zeros((3, 28, 28))), 0.25)


def test_predictor_decide_modes():
    mask = make_mask("CSS", 0.95)
    p = PixelPredictor(0, mask, constant_predictor(mask, 0.5).net, 0.25)
    img = np.zeros(784)  # mse 0.25 == baseline
    assert not predictor_decide(p, img, c=1.01).flagged
    assert predictor_decide(p, img, c=1e-9).flagged
    assert predictor_decide(p, img, tau=0.2).flagged
    assert not predictor_decide(p, img, tau=0.3).flagged
    with pytest.raises(ValueError):
        predictor_decide(p, img)


def test_identical_images_are_memorized():
    mask = make_mask("CSS", 0.95)
    img = np.random.default_rng(0).uniform(0, 1, 784)
    X = np.tile(img, (64, 1))
    pred = train_pixel_predictor(3, X, X[:4], mask, TrainConfig(0.002, 16, 30, 0))
    assert pred.baseline_mse <= 1e-3


def test_class_specific_ordering(mnist, classifier, predictors, families):
    from fragilis import pipeline

    _, test_set = mnist
    for c, pred in predictors.items():
        benign = predictor_mse_batch(pred, pipeline.benign_of_class(classifier, test_set, c, 90)).mean()
        fam = families[c]
        scores = predictor_mse_batch(pred, fam.perturbed)
        for j in np.unique(fam.sources):
            assert benign < scores[fam.sources == j].mean()


# ---------------------------------------------------------------------------
# latent inversion


def test_normalize_image():
    np.testing.assert_allclose(normalize_image([0.0, 1.0]), [-1.0, 1.0])
    x = np.random.default_rng(0).uniform(0, 1, 784)
    n = normalize_image(x)
    assert abs(n.mean()) <= 1e-10 and abs(n.std() - 1) <= 1e-10
    np.testing.assert_allclose(normalize_image(n), n, atol=1e-10)
    with pytest.raises(ZeroVarianceError, match="zero variance"):
        normalize_image(np.ones(10))
    np.testing.assert_allclose(normalize_batch(np.stack([x, 2 * x + 1])), np.stack([n, n]), atol=1e-10)


def identity_decoder(dim):
    return MlpParams(MlpSpec((dim, dim), ("linear",)), (np.eye(dim),), (np.zeros(dim),))


def test_identity_decoder_is_inverted_exactly():
    x = normalize_image(np.random.default_rng(1).uniform(0, 1, 16))
    res = latent_invert(identity_decoder(16), x, InversionConfig(16, 0.0, 0.05, 2500))
    assert res.mse <= 1e-6


def test_huge_lambda_pins_latent_to_zero():
    dec = init_params(MlpSpec((4, 8, 10), ("tanh", "linear")), 0)
    x = normalize_image(np.random.default_rng(2).uniform(0, 1, 10))
    pinned = latent_invert(dec, x, InversionConfig(4, 1e8, 0.05, 200))
    free = latent_invert(dec, x, InversionConfig(4, 0.0, 0.05, 200))
    from fragilis.nn import forward

    mse0 = np.sum((x - forward(dec, np.zeros(4))) ** 2) / 10
    # Adam keeps oscillating at step size lr around the origin
    assert np.max(np.abs(pinned.z_best)) <= 0.05 + 1e-9
    assert pinned.mse <= mse0
    assert free.mse < pinned.mse


def test_trace_is_running_minimum_and_batch_matches_single():
    dec = init_params(MlpSpec((5, 12, 20), ("tanh", "linear")), 3)
    X = normalize_batch(np.random.default_rng(4).uniform(0, 1, (3, 20)))
    cfg = InversionConfig(5, 1.0, 0.05, 150)
    batch = latent_invert_batch(dec, X, cfg, keep_trace=True)
    for x, b in zip(X, batch):
        assert np.all(np.diff(b.trace) <= 0)
        assert b.trace[-1] == b.mse
        single = latent_invert(dec, x, cfg)
        assert single.mse == pytest.approx(b.mse, rel=1e-12)
    v = inversion_decide(dec, X[0], cfg, math.inf, class_label=2)
    assert not v.flagged and v.class_label == 2
    assert inversion_decide(dec, X[0], cfg, 0.0).flagged


def test_inversion_shape_checks():
    dec = init_params(MlpSpec((5, 20), ("linear",)), 0)
    with pytest.raises(ValueError):
        latent_invert(dec, np.ones(21), InversionConfig(5))
    with pytest.raises(ValueError):
        latent_invert(dec, np.ones(20), InversionConfig(6))
    with pytest.raises(ValueError):
        InversionConfig(iterations=0)


# ---------------------------------------------------------------------------
# correlation


def test_correlation_examples():
    rng = np.random.default_rng(0)
    ref = rng.standard_normal(500)
    assert correlation_score(ref, ref) == pytest.approx(1.0)
    a = np.array([1.0, 0.0, 1.0, 0.0])
    b = np.array([0.0, 1.0, 0.0, -1.0])
    assert correlation_score(a, b) == 0.0
    assert not correlation_decide(ref, ref, 0.4).flagged
    noise = rng.standard_normal(5000)
    v = correlation_decide(rng.standard_normal(1000), noise, 0.4)
    assert v.flagged and v.score < 0.4
    with pytest.raises(ZeroEnergyError):
        correlation_score(np.zeros(5), ref)
    with pytest.raises(ValueError):
        correlation_score(ref, ref[:10])


def test_correlation_finds_embedded_chunk():
    rng = np.random.default_rng(1)
    sig = rng.standard_normal(3000)
    assert correlation_score(sig[1200:1500], sig) == pytest.approx(1.0)
    assert lag_correlations(sig[:100], sig).shape == (2901,)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 300))
def test_correlation_lag_search(seed, k):
    rng = np.random.default_rng(seed)
    ref = rng.standard_normal(64)
    obs = rng.standard_normal(400)
    # more lags can only raise the maximum
    assert correlation_score(ref, np.concatenate([rng.standard_normal(k), obs])) >= correlation_score(ref, obs) - 1e-12
    planted = np.concatenate([rng.standard_normal(k), ref, rng.standard_normal(50)])
    assert correlation_score(ref, planted) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# verdicts


def test_verdict_jsonl_round_trip(tmp_path):
    vs = [DetectorVerdict("pixel", 0, 0.12, 0.1, True, "ben/0/1"),
          DetectorVerdict("inversion", 9, math.inf, 0.3, True, 7)]
    write_verdicts_jsonl(tmp_path / "v.jsonl", vs)
    assert '"class": 0' in (tmp_path / "v.jsonl").read_text()
    assert read_verdicts_jsonl(tmp_path / "v.jsonl") == vs
