"""Monte Carlo checks of the compression-fragility bounds.

The linear experiments all share one trial geometry: per trial a Gaussian
``A`` (M x N) is drawn, ``x`` sits at the origin, the wrong-class codeword
``c_i`` lies at distance ``dist_xc`` and the true-class codeword ``c_1`` at
distance ``dist_x_c1`` (both along random directions), and a random
perturbation direction ``o`` is drawn. Trial ``k`` uses the generator seeded
with ``(seed, k)`` so serial and parallel runs see identical draws.

A classifier that only sees ``A y`` labels ``y`` as class ``c`` iff
``||P (y - c)|| <= r`` where ``P`` projects onto the row space of ``A``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import stats

from .linalg import (
    GaussianMatrix,
    RowSpaceProjector,
    project_row_space,
    rng_for,
    sample_unit_sphere,
    sample_unit_sphere_batch,
    singular_values,
    sphere_boundary_shift,
)

MODES = ("no_misclassify_to_i", "stay_in_class_1")


class InfeasibleGeometryError(ValueError):
    pass


@dataclass(frozen=True)
class LinearFragilityConfig:
    N: int
    M: int
    r: float
    dist_xc: float
    epsilon: float
    trials: int
    seed: int
    dist_x_c1: float = 0.0

    def __post_init__(self):
        if self.N < 1 or self.M < 1:
            raise ValueError("N and M must be positive")
        if self.M > self.N:
            raise ValueError(f"M={self.M} must not exceed N={self.N}")
        if self.r < 0 or self.dist_xc <= 0 or self.dist_x_c1 < 0:
            raise ValueError("r, dist_x_c1 must be >= 0 and dist_xc > 0")
        if not self.r < self.dist_xc:
            raise ValueError(f"r={self.r} must be smaller than dist_xc={self.dist_xc}")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.trials < 1:
            raise ValueError("trials must be positive")

    @property
    def compression(self) -> float:
        return self.M / self.N


@dataclass(frozen=True, eq=False)
class TrialGeometry:
    A: GaussianMatrix
    projector: RowSpaceProjector
    x: np.ndarray
    c1: np.ndarray
    ci: np.ndarray
    o: np.ndarray


def trial_geometry(cfg: LinearFragilityConfig, trial: int) -> TrialGeometry:
    rng = rng_for((cfg.seed, trial))
    entries = rng.standard_normal((cfg.M, cfg.N))
    entries.flags.writeable = False
    A = GaussianMatrix(cfg.M, cfg.N, entries, (cfg.seed, trial))
    x = np.zeros(cfg.N)
    ci = cfg.dist_xc * sample_unit_sphere(cfg.N, rng=rng)
    c1 = -cfg.dist_x_c1 * sample_unit_sphere(cfg.N, rng=rng)
    o = sample_unit_sphere(cfg.N, rng=rng)
    return TrialGeometry(A, RowSpaceProjector.from_matrix(A), x, c1, ci, o)


def _geometries(cfg: LinearFragilityConfig) -> Iterable[tuple[int, TrialGeometry]]:
    for k in range(cfg.trials):
        yield k, trial_geometry(cfg, k)


# ---------------------------------------------------------------------------
# closed-form bounds


def targeted_bound(cfg: LinearFragilityConfig) -> float:
    return math.sqrt(1 + cfg.epsilon) * math.sqrt(cfg.compression) * cfg.dist_xc - cfg.r


def untargeted_bound(cfg: LinearFragilityConfig) -> float:
    return cfg.r - math.sqrt(1 - cfg.epsilon) * math.sqrt(cfg.compression) * cfg.dist_x_c1


def random_radius_threshold(cfg: LinearFragilityConfig, mode: str) -> float:
    """Largest random radius the high-probability robustness statement covers."""
    eps, q = cfg.epsilon, cfg.compression
    if mode == "no_misclassify_to_i":
        l = math.sqrt((1 - eps) / (1 + eps)) * cfg.dist_xc - cfg.r / (math.sqrt(1 + eps) * math.sqrt(q))
        if l <= 0:
            raise InfeasibleGeometryError(f"no_misclassify_to_i threshold is non-positive ({l:.4g}) for this geometry")
        return l
    if mode == "stay_in_class_1":
        slack = cfg.r**2 - q * cfg.dist_x_c1**2
        if slack <= 0:
            raise InfeasibleGeometryError(
                f"stay_in_class_1 needs r^2 > (M/N)*||x-c1||^2, got {cfg.r**2:g} <= {q * cfg.dist_x_c1**2:g}"
            )
        return (1 - eps) * math.sqrt(1 / q) * math.sqrt(slack)
    raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")


# ---------------------------------------------------------------------------
# per-trial experiments


@dataclass(frozen=True)
class TargetedRecord:
    trial: int
    attack_norm: float
    projected_distance: float
    bound: float
    satisfied: bool
    reachable: bool  # target sphere image already contains P x


def targeted_attack_bound_trial(cfg: LinearFragilityConfig) -> list[TargetedRecord]:
    bound = targeted_bound(cfg)
    out = []
    for k, g in _geometries(cfg):
        pd = float(np.linalg.norm(project_row_space(g.projector, g.ci - g.x)))
        w = sphere_boundary_shift(g.projector, g.x, g.ci, cfg.r)
        norm = float(np.linalg.norm(w))
        out.append(TargetedRecord(k, norm, pd, bound, norm <= bound, pd <= cfg.r))
    return out


@dataclass(frozen=True)
class UntargetedRecord:
    trial: int
    projected_offset: float  # ||P (x - c1)||
    required_norm: float  # r - ||P (x - c1)||
    bound: float
    satisfied: bool
    exits_class_1: bool


def untargeted_attack_bound_trial(cfg: LinearFragilityConfig, overshoot: float = 1e-9) -> list[UntargetedRecord]:
    """Push ``x`` out of the compressed class-1 ball along ``P (x - c1)``.

    The perturbation has norm ``r - ||P (x - c1)|| + overshoot``; each record
    notes whether that norm respects the closed-form bound and whether the
    perturbed point indeed leaves the ball.
    """
    if cfg.dist_x_c1 >= cfg.r * math.sqrt(1 / cfg.compression):
        raise InfeasibleGeometryError("x must satisfy ||x - c1|| < r * sqrt(N/M)")
    bound = untargeted_bound(cfg)
    out = []
    for k, g in _geometries(cfg):
        u = project_row_space(g.projector, g.x - g.c1)
        un = float(np.linalg.norm(u))
        if un > 0:
            direction = u / un
        else:
            direction = project_row_space(g.projector, g.o)
            direction /= np.linalg.norm(direction)
        required = max(cfg.r - un, 0.0)
        w = (required + overshoot) * direction
        after = float(np.linalg.norm(project_row_space(g.projector, g.x - g.c1 + w)))
        out.append(UntargetedRecord(k, un, required, bound, required <= bound, after > cfg.r))
    return out


@dataclass(frozen=True)
class RobustnessEstimate:
    l: float
    epsilon_hat: float
    trials: int
    mode: str = "stay_in_class_1"

    def __post_init__(self):
        if not 0.0 <= self.epsilon_hat <= 1.0:
            raise ValueError("epsilon_hat must lie in [0, 1]")


@dataclass(frozen=True)
class _Quadratic:
    """``||P (u + l o)||^2 = a + 2 l b + l^2 c`` for one trial."""

    a: float
    b: float
    c: float

    def norm_at(self, l: float) -> float:
        return math.sqrt(max(self.a + 2 * l * self.b + l * l * self.c, 0.0))


def _perturbation_quadratics(cfg: LinearFragilityConfig, mode: str) -> list[_Quadratic]:
    out = []
    for _, g in _geometries(cfg):
        u = g.x - (g.c1 if mode == "stay_in_class_1" else g.ci)
        pu = project_row_space(g.projector, u)
        po = project_row_space(g.projector, g.o)
        out.append(_Quadratic(float(pu @ pu), float(pu @ po), float(po @ po)))
    return out


def _failure_rate(quads: Sequence[_Quadratic], l: float, r: float, mode: str) -> float:
    if mode == "stay_in_class_1":
        fails = sum(q.norm_at(l) > r for q in quads)
    else:
        fails = sum(q.norm_at(l) <= r for q in quads)
    return fails / len(quads)


def _check_mode(cfg: LinearFragilityConfig, mode: str) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if mode == "stay_in_class_1":
        random_radius_threshold(cfg, mode)  # raises on infeasible geometry
    elif random_radius_threshold(cfg, mode) <= 0:
        raise InfeasibleGeometryError(
            "no_misclassify_to_i needs sqrt((1-eps)/(1+eps))*||c_i-x|| > r/(sqrt(1+eps)*sqrt(M/N))"
        )


def random_perturbation_robustness(cfg: LinearFragilityConfig, l: float, mode: str) -> RobustnessEstimate:
    """Empirical failure probability for perturbations uniform on the radius-``l`` sphere.

    ``stay_in_class_1`` fails when the perturbed point leaves the compressed
    class-1 ball; ``no_misclassify_to_i`` fails when it enters the class-i ball.
    """
    if l < 0:
        raise ValueError("l must be non-negative")
    _check_mode(cfg, mode)
    quads = _perturbation_quadratics(cfg, mode)
    return RobustnessEstimate(l, _failure_rate(quads, l, cfg.r, mode), cfg.trials, mode)


@dataclass(frozen=True)
class GapReport:
    N: int
    M: int
    tolerated_radius: float
    tolerated_failure_rate: float
    mean_attack_norm: float
    ratio: float

    @property
    def reference(self) -> float:
        return self.N / self.M


def fragility_gap(cfg: LinearFragilityConfig, max_failure: float = 0.05, grid_points: int = 400) -> GapReport:
    """Largest random radius with failure rate <= ``max_failure`` (stay mode)
    divided by the mean norm of the constructed targeted attack.

    The radius is searched on a uniform grid up to ``sqrt(N/M) * (r + dist_x_c1)``,
    beyond which no trial can stay inside the compressed ball.
    """
    _check_mode(cfg, "stay_in_class_1")
    quads = _perturbation_quadratics(cfg, "stay_in_class_1")
    l_max = math.sqrt(1 / cfg.compression) * (cfg.r + cfg.dist_x_c1)
    tolerated, rate_at = 0.0, 0.0
    for l in np.linspace(0.0, l_max, grid_points + 1):
        rate = _failure_rate(quads, float(l), cfg.r, "stay_in_class_1")
        if rate <= max_failure:
            tolerated, rate_at = float(l), rate
    attacks = targeted_attack_bound_trial(cfg)
    mean_attack = float(np.mean([rec.attack_norm for rec in attacks]))
    ratio = tolerated / mean_attack if mean_attack > 0 else math.inf
    return GapReport(cfg.N, cfg.M, tolerated, rate_at, mean_attack, ratio)


# ---------------------------------------------------------------------------
# nonlinear compression: worst-case vs random sensitivity


@dataclass(frozen=True)
class FragilityRatioReport:
    M: int
    N: int
    sigma_max: float
    mean_random_response: float
    ratio: float
    bound_deterministic: float
    bound_gaussian: float
    delta: float

    def __post_init__(self):
        if not self.mean_random_response > 0:
            raise ValueError("mean random response must be positive")

    @property
    def meets_deterministic_bound(self) -> bool:
        return self.ratio >= self.bound_deterministic - 1e-6

    @property
    def meets_gaussian_bound(self) -> bool:
        return self.ratio >= self.bound_gaussian


def fragility_ratio(jacobian, sphere_samples: int, seed, delta: float = 0.1, chunk: int = 2048) -> FragilityRatioReport:
    """``sigma_max(J) / E_o ||J o||`` with ``o`` uniform on the unit sphere.

    ``bound_gaussian`` is ``(1 - delta) * sqrt((N + M) / M)``, the level a
    Gaussian Jacobian is expected to clear with high probability.
    """
    J = np.asarray(jacobian, dtype=np.float64)
    if J.ndim != 2:
        raise ValueError("jacobian must be a matrix")
    M, N = J.shape
    if M > N:
        raise ValueError(f"expected M <= N, got {M}x{N}")
    if sphere_samples < 100:
        raise ValueError("need at least 100 sphere samples")
    sigma = singular_values(J)
    if sigma[0] == 0:
        raise ValueError("zero Jacobian: ratio undefined")
    rng = rng_for(seed)
    total, done = 0.0, 0
    while done < sphere_samples:
        n = min(chunk, sphere_samples - done)
        o = sample_unit_sphere_batch(n, N, rng)
        total += float(np.linalg.norm(o @ J.T, axis=1).sum())
        done += n
    mean = total / sphere_samples
    return FragilityRatioReport(
        M, N, float(sigma[0]), mean, float(sigma[0]) / mean,
        math.sqrt(N / M), (1 - delta) * math.sqrt((N + M) / M), delta,
    )


def finite_difference_jacobian(h: Callable[[np.ndarray], np.ndarray], x, step: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian of ``h`` at ``x`` (rows: outputs, cols: inputs)."""
    if not 1e-8 < step < 1e-2:
        raise ValueError("step must lie in (1e-8, 1e-2)")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    f0 = np.atleast_1d(np.asarray(h(x), dtype=np.float64))
    if not np.all(np.isfinite(f0)):
        raise ValueError("h(x) is not finite")
    J = np.empty((f0.shape[0], x.shape[0]))
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = step
        fp = np.atleast_1d(np.asarray(h(x + e), dtype=np.float64))
        fm = np.atleast_1d(np.asarray(h(x - e), dtype=np.float64))
        if not (np.all(np.isfinite(fp)) and np.all(np.isfinite(fm))):
            raise ValueError(f"h is not finite around coordinate {j}")
        J[:, j] = (fp - fm) / (2 * step)
    return J


# ---------------------------------------------------------------------------
# concentration and singular-value checks


@dataclass(frozen=True)
class ConcentrationSummary:
    N: int
    M: int
    epsilon: float
    trials: int
    mean: float  # mean of ||P v|| / ||v||
    p_low: float
    p_high: float
    bound_low: float
    bound_high: float

    @property
    def within_bounds(self) -> bool:
        return self.p_low <= 3 * self.bound_low and self.p_high <= 3 * self.bound_high


def projection_ratios(N: int, M: int, trials: int, seed) -> np.ndarray:
    """``||P v|| / ||v||`` for ``trials`` independent (A, v) draws."""
    out = np.empty(trials)
    for k in range(trials):
        rng = rng_for((seed, k))
        A = rng.standard_normal((M, N))
        v = rng.standard_normal(N)
        proj = RowSpaceProjector.from_matrix(A)
        out[k] = np.linalg.norm(project_row_space(proj, v)) / np.linalg.norm(v)
    return out


def concentration_check_pv(N: int, M: int, trials: int, seed, epsilon: float = 0.2) -> ConcentrationSummary:
    if trials < 100:
        raise ValueError("need at least 100 trials")
    ratios = projection_ratios(N, M, trials, seed)
    q = math.sqrt(M / N)
    p_low = float(np.mean(ratios <= math.sqrt(1 - epsilon) * q))
    p_high = float(np.mean(ratios >= math.sqrt(1 + epsilon) * q))
    return ConcentrationSummary(
        N, M, epsilon, trials, float(ratios.mean()), p_low, p_high,
        math.exp(-M * epsilon**2 / 4), math.exp(-M * epsilon**2 / 12),
    )


@dataclass(frozen=True)
class SingularValueRecord:
    seed: int
    sigma_max: float
    sigma_min: float
    within_band: bool


def extreme_singular_values(M: int, N: int, seeds: Sequence[int], band: float = 0.15) -> list[SingularValueRecord]:
    """Extreme singular values of ``F / sqrt(N)`` for Gaussian ``F`` (M x N, M < N),
    compared with ``1 +/- sqrt(M/N)``.
    """
    q = math.sqrt(M / N)
    out = []
    for s in seeds:
        F = rng_for(s).standard_normal((M, N)) / math.sqrt(N)
        sv = singular_values(F)
        hi, lo = float(sv[0]), float(sv[-1])
        ok = abs(hi - (1 + q)) <= band and abs(lo - (1 - q)) <= band
        out.append(SingularValueRecord(int(s), hi, lo, ok))
    return out


def attack_norm_trend(N: int, Ms: Sequence[int], trials: int, seed: int, dist_xc: float = 1.0, r: float = 0.0) -> float:
    """Spearman correlation between M and mean targeted-attack norm."""
    means = []
    for M in Ms:
        cfg = LinearFragilityConfig(N, M, r, dist_xc, 0.2, trials, seed)
        means.append(np.mean([rec.attack_norm for rec in targeted_attack_bound_trial(cfg)]))
    return float(stats.spearmanr(Ms, means).statistic)


# ---------------------------------------------------------------------------
# CSV output


def write_trials_csv(path, records: Sequence, summary: dict) -> None:
    """One row per trial followed by a row whose ``trial`` column is ``summary``.

    Summary values are written into the matching columns; extra summary keys
    are appended as ``key=value`` pairs in a trailing ``notes`` column.
    """
    if not records:
        raise ValueError("no records to write")
    cols = [f.name for f in fields(records[0])]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols + ["notes"])
        for rec in records:
            writer.writerow([_fmt(v) for v in asdict(rec).values()] + [""])
        row = ["summary"] + [_fmt(summary.get(c, "")) for c in cols[1:]]
        extra = ";".join(f"{k}={_fmt(v)}" for k, v in summary.items() if k not in cols)
        writer.writerow(row + [extra])


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
