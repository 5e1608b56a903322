"""Command line entry point: ``fragilis <verb> --config run.json --out DIR``.

Every run directory receives ``manifest.json`` (resolved config, master and
derived seeds, library versions, timestamp), a ``summary.txt`` and the
verb's CSV/JSONL/checkpoint artifacts. Artifacts other than the manifest are
byte-identical across reruns with the same seed.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import platform
import shutil
import sys
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import load_adversarial_set, save_adversarial_set
from .data.checkpoint import load_checkpoint, save_checkpoint
from .data.config import ConfigError, RunConfig, load_run_config
from .data.signals import CORPUS, build_template_classifier, run_correlation_trial
from .detectors.inversion import InversionConfig, latent_invert_batch, normalize_batch
from .detectors.masks import make_mask
from .detectors.pixel import PixelPredictor, predictor_mse_batch
from .detectors.verdict import DetectorVerdict, read_verdicts_jsonl, write_verdicts_jsonl
from .evaluation import (
    balanced_threshold, count_at, histogram, percent, rates, report_table, table_to_csv, table_to_text,
    threshold_grid, threshold_sweep, write_histogram_csv, write_ratepoints_csv,
)
from .nn import evaluate_accuracy
from . import pipeline, theory

VERBS = ("train-classifier", "train-predictors", "train-decoders", "attack", "detect", "verify-theory", "sweep",
         "report")


class RunError(RuntimeError):
    pass


class Run:
    def __init__(self, cfg: RunConfig, out: Path, verb: str):
        self.cfg, self.out, self.verb = cfg, out, verb
        self.seeds: dict[str, int] = {}
        self.summary: list[str] = []

    def seed(self, label: str) -> int:
        s = pipeline.child_seed(self.cfg.seed, f"{self.verb}/{label}")
        self.seeds[label] = s
        return s

    def say(self, line: str) -> None:
        self.summary.append(line)

    def path(self, name: str) -> Path:
        return self.out / name

    def require(self, name: str) -> Path:
        p = self.cfg.resolve(getattr(self.cfg.inputs, name))
        if p is None:
            raise RunError(f"inputs.{name} must point at an earlier run's artifact")
        if not p.exists():
            raise RunError(f"inputs.{name}: {p} does not exist")
        return p


# ---------------------------------------------------------------------------
# verbs


def _train_classifier(run: Run) -> None:
    train_set, test_set = pipeline.load_mnist(run.cfg.data, run.cfg.base_dir)
    history: list[float] = []
    clf = pipeline.train_classifier(train_set, run.cfg.classifier, run.seed("classifier"), history)
    save_checkpoint(clf, run.path("classifier.frgl"))
    with open(run.path("history.csv"), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        w.writerows([k, repr(v)] for k, v in enumerate(history))
    run.say(f"train images: {len(train_set)}, test images: {len(test_set)}")
    run.say(f"test accuracy: {percent(evaluate_accuracy(clf, test_set.flat, test_set.labels))}")


def save_predictor(pred: PixelPredictor, path: Path) -> None:
    save_checkpoint(pred.net, path, meta={"class": pred.class_label, "kind": pred.mask.kind, "pctg": pred.mask.pctg,
                                          "baseline_mse": pred.baseline_mse})


def load_predictor(path: Path) -> PixelPredictor:
    from .data.checkpoint import decode_tensors

    net = load_checkpoint(path)
    meta = decode_tensors(path.read_bytes())[1]["meta"]
    return PixelPredictor(meta["class"], make_mask(meta["kind"], meta["pctg"]), net, meta["baseline_mse"])


def _train_predictors(run: Run) -> None:
    train_set, _ = pipeline.load_mnist(run.cfg.data, run.cfg.base_dir)
    preds = pipeline.train_predictors(train_set, run.cfg.predictors, run.seed("predictors"))
    for c, p in preds.items():
        save_predictor(p, run.path(f"predictor_{c}.frgl"))
        run.say(f"predictor {c}: {p.mask.kind} pctg={p.mask.pctg} N_in={p.mask.n_in} N_out={p.mask.n_out} "
                f"baseline_mse={p.baseline_mse:.4f}")


def _train_decoders(run: Run) -> None:
    train_set, _ = pipeline.load_mnist(run.cfg.data, run.cfg.base_dir)
    decs = pipeline.train_decoders(train_set, run.cfg.decoders, run.seed("decoders"))
    for c, d in decs.items():
        save_checkpoint(d, run.path(f"decoder_{c}.frgl"), meta={"class": c})
        run.say(f"decoder {c}: layers {list(d.spec.layer_sizes)}")


def _attack(run: Run) -> None:
    _, test_set = pipeline.load_mnist(run.cfg.data, run.cfg.base_dir)
    clf = load_checkpoint(run.require("classifier"))
    sec = run.cfg.attack
    for target in sec.targets:
        fam = pipeline.build_family(clf, test_set, target, sec.per_pair, sec)
        if not fam.examples:
            raise RunError(f"no successful attacks towards class {target}")
        save_adversarial_set(run.path(f"target_{target}"), fam.examples, {"target": target})
        attempted = 9 * sec.per_pair
        run.say(f"target {target}: {len(fam.examples)} successful adversarial images "
                f"(requested {attempted}; mean l2 {np.mean([e.perturbation_norm_l2 for e in fam.examples]):.3f})")


def _scores_for_class(run: Run, c: int, clf, test_set, score_fn):
    sec = run.cfg.detect
    benign = pipeline.benign_of_class(clf, test_set, c, sec.benign_per_class)
    adv_dir = run.require("adversarial") / f"target_{c}"
    if not adv_dir.exists():
        raise RunError(f"no adversarial set for class {c} under {adv_dir.parent}")
    adv = [e for e in load_adversarial_set(adv_dir) if e.success][:sec.adversarial_per_class]
    ben_scores = score_fn(c, benign)
    adv_scores = score_fn(c, np.stack([e.perturbed for e in adv]))
    ids_b = [f"ben/{c}/{k}" for k in range(len(benign))]
    ids_a = [f"adv/{e.true_label}->{c}/{k}" for k, e in enumerate(adv)]
    return ben_scores, adv_scores, ids_b, ids_a


def _detect(run: Run) -> None:
    sec = run.cfg.detect
    verdicts: list[DetectorVerdict] = []
    per_class: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    if sec.detector == "correlation":
        clf = build_template_classifier(seed=run.seed("templates"))
        ben, adv = [], []
        for k, text in enumerate(CORPUS[:sec.runs]):
            for attacked, bucket in ((False, ben), (True, adv)):
                t = run_correlation_trial(clf, text, attacked=attacked, seed=run.seed(f"trial/{k}/{int(attacked)}"),
                                          threshold=sec.threshold)
                bucket.append(t.score)
                verdicts.append(DetectorVerdict("correlation", -1, t.score, sec.threshold, t.flagged,
                                                f"adv/{k}->target/0" if attacked else f"ben/{k}/0"))
        per_class[-1] = (np.array(ben), np.array(adv))
        polarity = "low"
    else:
        _, test_set = pipeline.load_mnist(run.cfg.data, run.cfg.base_dir)
        clf = load_checkpoint(run.require("classifier"))
        if sec.detector == "pixel":
            root = run.require("predictors")
            preds = {c: load_predictor(root / f"predictor_{c}.frgl") for c in sec.classes}

            def score(c, X):
                return predictor_mse_batch(preds[c], X)
            name = "pixel"
        else:
            root = run.require("decoders")
            decs = {c: load_checkpoint(root / f"decoder_{c}.frgl") for c in sec.classes}
            inv = run.cfg.inversion
            icfg = InversionConfig(decs[sec.classes[0]].spec.n_in, inv.lam, inv.learning_rate, inv.iterations)

            def score(c, X):
                return np.array([r.mse for r in latent_invert_batch(decs[c], normalize_batch(X), icfg)])
            name = "inversion"
        for c in sec.classes:
            b, a, ib, ia = _scores_for_class(run, c, clf, test_set, score)
            per_class[c] = (b, a)
            verdicts += [DetectorVerdict(name, c, float(s), sec.threshold, bool(s > sec.threshold), i) for s, i in zip(b, ib)]
            verdicts += [DetectorVerdict(name, c, float(s), sec.threshold, bool(s > sec.threshold), i) for s, i in zip(a, ia)]
        polarity = "high"
    write_verdicts_jsonl(run.path("verdicts.jsonl"), verdicts)
    sw = run.cfg.sweep
    grid = threshold_grid(sw.lo, sw.hi, sw.step)
    for c, (b, a) in per_class.items():
        tag = "all" if c < 0 else str(c)
        write_ratepoints_csv(run.path(f"ratepoints_{tag}.csv"), threshold_sweep(b, a, grid, polarity))
        write_histogram_csv(run.path(f"hist_benign_{tag}.csv"), histogram(b, sw.bins))
        write_histogram_csv(run.path(f"hist_adversarial_{tag}.csv"), histogram(a, sw.bins))
        pt = rates(count_at(b, a, sec.threshold, polarity), sec.threshold)
        run.say(f"class {tag}: benign {len(b)} (mean score {b.mean():.4f}), adversarial {len(a)} "
                f"(mean score {a.mean():.4f}); threshold {sec.threshold}: benign acc {percent(pt.benign_acc)}, "
                f"adversarial acc {percent(pt.adv_acc)}")


def _group_verdicts(verdicts):
    groups = defaultdict(lambda: ([], []))
    for v in verdicts:
        kind = str(v.sample_id).split("/")[0]
        if kind not in ("ben", "adv"):
            raise RunError(f"verdict sample_id {v.sample_id!r} is not of the form ben/... or adv/...")
        groups[v.class_label][0 if kind == "ben" else 1].append(v.score)
    return groups


def _sweep(run: Run) -> None:
    verdicts = read_verdicts_jsonl(run.require("verdicts"))
    sw = run.cfg.sweep
    grid = threshold_grid(sw.lo, sw.hi, sw.step)
    for c, (b, a) in sorted(_group_verdicts(verdicts).items()):
        tag = "all" if c < 0 else str(c)
        pts = threshold_sweep(b, a, grid, sw.polarity)
        write_ratepoints_csv(run.path(f"ratepoints_{tag}.csv"), pts)
        best = balanced_threshold(pts)
        run.say(f"class {tag}: balanced threshold {best.threshold:g} -> false alarm {percent(best.false_alarm)}, "
                f"missing {percent(best.missing)}")


def _report(run: Run) -> None:
    verdicts = read_verdicts_jsonl(run.require("verdicts"))
    fam = defaultdict(list)
    for v in verdicts:
        kind, family = str(v.sample_id).split("/")[:2]
        fam[(v.class_label, kind, family)].append(v.score)
    for c in sorted({k[0] for k in fam}):
        tag = "all" if c < 0 else str(c)
        ben = {f"x_{f}": [float(np.mean(s)), len(s)] for (cc, kind, f), s in sorted(fam.items()) if cc == c and kind == "ben"}
        adv = {f"x_{f}": [float(np.mean(s)), len(s)] for (cc, kind, f), s in sorted(fam.items()) if cc == c and kind == "adv"}
        table = report_table(f"class {tag}", ["mean_score", "count"], ben, adv)
        run.path(f"table_{tag}.csv").write_text(table_to_csv(table))
        run.path(f"table_{tag}.txt").write_text(table_to_text(table, 4))
        run.say(table_to_text(table, 4))


def _verify_theory(run: Run) -> None:
    t = run.cfg.theory
    seed = run.seed("theory")
    cfg = theory.LinearFragilityConfig(t.N, t.M, t.r, t.dist_xc, t.epsilon, t.trials, seed, t.dist_x_c1)
    out = run.path("trials.csv")
    if t.experiment == "targeted":
        recs = theory.targeted_attack_bound_trial(cfg)
        frac = float(np.mean([r.satisfied for r in recs]))
        mean = float(np.mean([r.attack_norm for r in recs]))
        ref = np.sqrt(t.M / t.N) * t.dist_xc - t.r
        summary = {"trial": "summary", "attack_norm": mean, "bound": recs[0].bound, "satisfied": frac >= 0.95,
                   "fraction_satisfied": frac, "reference_mean": ref}
        run.say(f"targeted bound satisfied in {frac:.3f} of {t.trials} trials "
                f"({'PASS' if frac >= 0.95 else 'FAIL'} vs 0.95); mean norm {mean:.4f} vs {ref:.4f}")
    elif t.experiment == "untargeted":
        recs = theory.untargeted_attack_bound_trial(cfg)
        frac = float(np.mean([r.satisfied for r in recs]))
        summary = {"trial": "summary", "satisfied": frac >= 0.95, "fraction_satisfied": frac,
                   "fraction_exits": float(np.mean([r.exits_class_1 for r in recs]))}
        run.say(f"untargeted bound satisfied in {frac:.3f} of trials ({'PASS' if frac >= 0.95 else 'FAIL'} vs 0.95)")
    elif t.experiment == "robustness":
        recs = []
        for mode in theory.MODES:
            l = t.l_fraction * theory.random_radius_threshold(cfg, mode)
            recs.append(theory.random_perturbation_robustness(cfg, l, mode))
        summary = {"trial": "summary", "worst_epsilon_hat": max(r.epsilon_hat for r in recs)}
        recs = [_RobustnessRow(k, r.mode, r.l, r.epsilon_hat, r.trials) for k, r in enumerate(recs)]
        for r in recs:
            run.say(f"{r.mode}: l={r.l:.4f} epsilon_hat={r.epsilon_hat:.3f} "
                    f"({'PASS' if r.epsilon_hat <= 0.05 else 'FAIL'} vs 0.05)")
    elif t.experiment == "gap":
        g = theory.fragility_gap(cfg)
        recs = [_GapRow(0, g.tolerated_radius, g.mean_attack_norm, g.ratio, g.reference)]
        summary = {"trial": "summary", "ratio": g.ratio, "passes": g.ratio >= 0.5 * g.reference}
        run.say(f"gap ratio {g.ratio:.2f} vs 0.5*N/M = {0.5 * g.reference:.2f}")
    elif t.experiment == "ratio":
        recs = []
        for k in range(t.trials):
            J = np.random.default_rng([seed, k]).standard_normal((t.M, t.N))
            rep = theory.fragility_ratio(J, t.sphere_samples, [seed, k, 1])
            recs.append(_RatioRow(k, rep.sigma_max, rep.mean_random_response, rep.ratio, rep.bound_deterministic,
                                  rep.bound_gaussian, rep.meets_gaussian_bound))
        frac = float(np.mean([r.meets_gaussian for r in recs]))
        summary = {"trial": "summary", "meets_gaussian": frac}
        run.say(f"ratio >= gaussian bound in {frac:.3f} of {t.trials} matrices")
    elif t.experiment == "singular":
        recs = theory.extreme_singular_values(t.M, t.N, [pipeline.child_seed(seed, f"sv/{k}") for k in range(t.trials)])
        frac = float(np.mean([r.within_band for r in recs]))
        summary = {"trial": "summary", "within_band": frac}
        recs = [_SvRow(k, r.sigma_max, r.sigma_min, r.within_band) for k, r in enumerate(recs)]
        run.say(f"extreme singular values within +-0.15 in {frac:.3f} of seeds")
    else:
        s = theory.concentration_check_pv(t.N, t.M, t.trials, seed, t.epsilon)
        recs = [_ConcRow(0, s.mean, s.p_low, s.p_high, s.bound_low, s.bound_high)]
        summary = {"trial": "summary", "within_bounds": s.within_bounds}
        run.say(f"mean ||Pv||/||v|| = {s.mean:.4f}; tails {s.p_low:.4f}/{s.p_high:.4f} "
                f"vs bounds {s.bound_low:.4f}/{s.bound_high:.4f}")
    theory.write_trials_csv(out, recs, summary)



@dataclass(frozen=True)
class _RobustnessRow:
    trial: int
    mode: str
    l: float
    epsilon_hat: float
    trials: int


@dataclass(frozen=True)
class _GapRow:
    trial: int
    tolerated_radius: float
    mean_attack_norm: float
    ratio: float
    reference: float


@dataclass(frozen=True)
class _RatioRow:
    trial: int
    sigma_max: float
    mean_random_response: float
    ratio: float
    bound_deterministic: float
    bound_gaussian: float
    meets_gaussian: bool


@dataclass(frozen=True)
class _SvRow:
    trial: int
    sigma_max: float
    sigma_min: float
    within_band: bool


@dataclass(frozen=True)
class _ConcRow:
    trial: int
    mean: float
    p_low: float
    p_high: float
    bound_low: float
    bound_high: float


HANDLERS = {
    "train-classifier": _train_classifier,
    "train-predictors": _train_predictors,
    "train-decoders": _train_decoders,
    "attack": _attack,
    "detect": _detect,
    "verify-theory": _verify_theory,
    "sweep": _sweep,
    "report": _report,
}


# ---------------------------------------------------------------------------
# driver


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fragilis", description="Compression-fragility experiments and detectors.")
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--config", required=True, help="JSON run configuration")
    ap.add_argument("--out", required=True, help="run directory to create")
    ap.add_argument("--seed", type=int, default=None, help="override the config's master seed")
    ap.add_argument("--force", action="store_true", help="replace an existing run directory")
    return ap


def _versions() -> dict:
    import scipy

    return {"fragilis": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _thread_limit():
    raw = os.environ.get("FRAGILIS_THREADS")
    if not raw:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    n = int(raw)
    if n < 1:
        raise ConfigError("FRAGILIS_THREADS must be a positive integer")
    return threadpool_limits(limits=n)


def _origin(exc: BaseException) -> str:
    """Innermost package module on the traceback, else the exception's module."""
    module = type(exc).__module__
    tb = exc.__traceback__
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("fragilis."):
            module = name
        tb = tb.tb_next
    return module


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        cfg = load_run_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            print("error [config]: --seed must be in [0, 2^64)", file=sys.stderr)
            return 1
        cfg = RunConfig(**{**{f: getattr(cfg, f) for f in cfg.__dataclass_fields__}, "seed": args.seed})
    if out.exists() and any(out.iterdir()):
        if not args.force:
            print(f"error [cli]: {out} exists; pass --force to replace it", file=sys.stderr)
            return 1
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(cfg, out, args.verb)
    started = datetime.now(timezone.utc).isoformat()
    try:
        with _thread_limit():
            HANDLERS[args.verb](r)
    except Exception as exc:  # every module error is reported, partial output removed
        shutil.rmtree(out, ignore_errors=True)
        module = _origin(exc)
        print(f"error [{module}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    manifest = {
        "verb": args.verb,
        "config": cfg.to_dict(),
        "config_path": str(Path(args.config).resolve()),
        "master_seed": cfg.seed,
        "derived_seeds": r.seeds,
        "seed_derivation": "blake2b-64('<master>/<verb>/<label>') >> 1",
        "versions": _versions(),
        "started": started,
        "finished": datetime.now(timezone.utc).isoformat(),
        "artifacts": sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file()),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    (out / "summary.txt").write_text("\n".join(r.summary) + "\n")
    print("\n".join(r.summary))
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
