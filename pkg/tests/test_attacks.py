import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fragilis import theory
from fragilis.attacks import (
    AttackBudget, FlatLossError, NotCleanError, fgsm, linear_optimal_attack, load_adversarial_set,
    save_adversarial_set, targeted_fgsm, targeted_fgsm_batch,
)
from fragilis.linalg import RowSpaceProjector, project_row_space, sample_gaussian_matrix, sample_unit_sphere_batch
from fragilis.nn import MlpParams, MlpSpec, init_params, predict_labels


def linear_softmax(W, b):
    W = np.asarray(W, dtype=float)
    return MlpParams(MlpSpec((W.shape[1], W.shape[0]), ("softmax",), "cross_entropy"), (W,), (np.asarray(b, float),))


@pytest.fixture
def toy():
    rng = np.random.default_rng(0)
    return init_params(MlpSpec((6, 12, 3), ("tanh", "softmax"), "cross_entropy"), 4), rng


def clean_point(params, rng, label=None):
    while True:
        x = rng.uniform(0, 1, params.spec.n_in)
        pred = int(predict_labels(params, x)[0])
        if label is None or pred == label:
            return x, pred


def test_budget_validation():
    with pytest.raises(ValueError):
        AttackBudget(0.1, iterations=0)
    with pytest.raises(ValueError):
        AttackBudget(0.1, clip_min=1, clip_max=0)


def test_zero_epsilon_is_identity(toy):
    p, rng = toy
    x, lab = clean_point(p, rng)
    ex = fgsm(p, x, lab, AttackBudget(0.0))
    np.testing.assert_array_equal(ex.perturbed, x)
    assert not ex.success


def test_sign_saturation():
    # loss for label 0 increases with every input coordinate: gradient is strictly positive
    p = linear_softmax([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]], [5.0, 0.0])
    x = np.array([0.2, 0.5, 0.95])
    ex = fgsm(p, x, 0, AttackBudget(0.1))
    np.testing.assert_allclose(ex.perturbed, np.clip(x + 0.1, 0, 1))


def test_preconditions(toy):
    p, rng = toy
    x, lab = clean_point(p, rng)
    with pytest.raises(NotCleanError, match="not a clean sample"):
        fgsm(p, x, (lab + 1) % 3, AttackBudget(0.1))
    with pytest.raises(ValueError):
        targeted_fgsm(p, x, lab, lab, AttackBudget(0.1))
    flat = linear_softmax(np.zeros((2, 3)), [1.0, 0.0])
    with pytest.raises(FlatLossError, match="flat loss"):
        fgsm(flat, np.zeros(3), 0, AttackBudget(0.1))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.5), st.integers(1, 5))
def test_clip_box_always_holds(seed, eps, iters):
    p = init_params(MlpSpec((6, 12, 3), ("tanh", "softmax"), "cross_entropy"), 4)
    rng = np.random.default_rng(seed)
    x, lab = clean_point(p, rng)
    budget = AttackBudget(eps, iters, 0.1, 0.9)
    x = np.clip(x, 0.1, 0.9)
    if int(predict_labels(p, x)[0]) != lab:
        return
    for ex in (fgsm(p, x, lab, budget), targeted_fgsm(p, x, lab, (lab + 1) % 3, budget)):
        assert ex.perturbed.min() >= 0.1 and ex.perturbed.max() <= 0.9
        delta = ex.perturbed - ex.original
        assert ex.perturbation_norm_l2 == pytest.approx(np.linalg.norm(delta))
        assert ex.norm_linf == pytest.approx(np.max(np.abs(delta)))
        # success is what the classifier says about the stored vector
        pred = int(predict_labels(p, ex.perturbed)[0])
        assert ex.success == (pred != lab if ex.target_label is None else pred == ex.target_label)


def test_batch_matches_single(toy):
    p, rng = toy
    xs, labs = zip(*[clean_point(p, rng) for _ in range(6)])
    targets = [(l + 1) % 3 for l in labs]
    budget = AttackBudget(0.05, 10)
    batch = targeted_fgsm_batch(p, np.array(xs), labs, targets, budget)
    for x, l, t, b in zip(xs, labs, targets, batch):
        single = targeted_fgsm(p, x, l, t, budget)
        np.testing.assert_allclose(b.perturbed, single.perturbed, atol=1e-12)
        assert b.success == single.success and b.iterations_used == single.iterations_used


def test_linear_attack_cases():
    A = sample_gaussian_matrix(5, 30, 0)
    rng = np.random.default_rng(1)
    x, c = rng.standard_normal(30), rng.standard_normal(30)
    np.testing.assert_allclose(linear_optimal_attack(A, c, c, 0.2).perturbed, c)
    proj = RowSpaceProjector.from_matrix(A)
    w = linear_optimal_attack(A, x, c, 0.0).perturbed - x
    np.testing.assert_allclose(w, project_row_space(proj, c - x), atol=1e-12)
    ex = linear_optimal_attack(A, x, c, 0.3)
    assert ex.perturbation_norm_l2 == pytest.approx(np.linalg.norm(project_row_space(proj, c - x)) - 0.3)


def test_linear_attack_agrees_with_theory_bit_for_bit():
    cfg = theory.LinearFragilityConfig(N=300, M=30, r=0.05, dist_xc=1.0, epsilon=0.2, trials=8, seed=11)
    recs = theory.targeted_attack_bound_trial(cfg)
    for rec in recs:
        g = theory.trial_geometry(cfg, rec.trial)
        ex = linear_optimal_attack(g.A, g.x, g.ci, cfg.r)
        assert ex.perturbation_norm_l2 == rec.attack_norm


def test_linear_attack_is_minimal():
    A = sample_gaussian_matrix(4, 20, 2)
    proj = RowSpaceProjector.from_matrix(A)
    rng = np.random.default_rng(3)
    x, c, r = rng.standard_normal(20), rng.standard_normal(20), 0.25
    norm = linear_optimal_attack(A, x, c, r, proj).perturbation_norm_l2
    dirs = sample_unit_sphere_batch(10_000, 20, rng)
    lengths = rng.uniform(0, norm - 1e-6, (10_000, 1))
    shifted = x + lengths * dirs - c
    residual = np.linalg.norm(project_row_space(proj, shifted), axis=1)
    assert np.all(residual > r)


def test_adversarial_set_round_trip(tmp_path, toy):
    p, rng = toy
    xs, labs = zip(*[clean_point(p, rng) for _ in range(3)])
    exs = targeted_fgsm_batch(p, np.array(xs), labs, [(l + 1) % 3 for l in labs], AttackBudget(0.05, 5))
    save_adversarial_set(tmp_path / "set", exs, {"target": 1})
    back = load_adversarial_set(tmp_path / "set")
    for a, b in zip(exs, back):
        assert a.perturbed.tobytes() == b.perturbed.tobytes()
        assert (a.true_label, a.target_label, a.success) == (b.true_label, b.target_label, b.success)


def test_mnist_untargeted_success(mnist, classifier):
    _, test_set = mnist
    pred = predict_labels(classifier, test_set.flat)
    idx = np.flatnonzero(pred == test_set.labels)[:1000]
    wins = sum(fgsm(classifier, test_set.flat[k], int(test_set.labels[k]), AttackBudget(0.2)).success for k in idx)
    assert wins / len(idx) >= 0.6


def test_mnist_targeted_success(mnist, classifier):
    _, test_set = mnist
    pred = predict_labels(classifier, test_set.flat)
    X, src, tgt = [], [], []
    for i in range(10):
        k = np.flatnonzero((pred == test_set.labels) & (test_set.labels == i))[0]
        for j in range(10):
            if j != i:
                X.append(test_set.flat[k])
                src.append(i)
                tgt.append(j)
    exs = targeted_fgsm_batch(classifier, np.array(X), src, tgt, AttackBudget(0.05, 40))
    assert np.mean([e.success for e in exs]) >= 0.5
