"""Replicated experiment harness.

Runs estimator x environment x sweep grids over many seeds, computes
MSE / squared bias / variance / CI per cell (population-variance
convention, so MSE = Bias^2 + Var exactly), selects smoothing levels on a
separate validation seed stream, and emits CSV rows.
"""

from __future__ import annotations

import csv
import math
import os
import zlib
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .bandit import BanditDataset, EmbeddingTable, StaticOracle, StaticPolicy, true_value
from .estimators import (
    DirectMethod,
    DoublyRobust,
    EstimationError,
    InversePropensityScoring,
    PolicyConvolution,
    RidgeRewardModel,
    SelfNormalizedDR,
    SelfNormalizedIPS,
)
from .smoothing import (
    ActionTree,
    TreeSmoother,
    build_tree,
    full_tree_depth,
    make_smoother,
    pairwise_sq_distances,
)
from .synthetic import (
    SynthConfig,
    apply_deficient_support,
    build_world,
    generate_dataset,
    logging_policy,
    stream,
    target_policy,
)

CSV_COLUMNS = [
    "experiment",
    "sweep_param",
    "sweep_value",
    "estimator",
    "conv_kind",
    "tau1",
    "tau2",
    "n_seeds",
    "true_value",
    "mse",
    "bias_sq",
    "variance",
    "ci_low",
    "ci_high",
    "failures",
]


def derive_seed(master: int, label: str) -> int:
    """Deterministic integer seed for a named stream under a master seed."""
    return zlib.crc32(f"{master}:{label}".encode())


@dataclass
class TrialResult:
    """Replication outcome for one estimator configuration."""

    estimates: np.ndarray
    true_value: float
    mse: float
    bias_sq: float
    variance: float
    ci_low: float
    ci_high: float
    tau1: float | None = None
    tau2: float | None = None
    failures: int = 0
    failed: bool = False


def summarize(estimates, truths, n_requested: int, tau1=None, tau2=None) -> TrialResult:
    """Bias/variance decomposition of replicated estimates against truth.

    ``truths`` may be a scalar (fixed estimand) or one value per estimate
    (world rebuilt per seed). Population variance keeps
    mse = bias_sq + variance exact; the CI uses the sample std.
    """
    estimates = np.asarray(estimates, dtype=float)
    truths = np.broadcast_to(np.asarray(truths, dtype=float), estimates.shape)
    k = len(estimates)
    failures = n_requested - k
    if k == 0 or failures > n_requested / 2:
        nan = float("nan")
        return TrialResult(
            estimates, float(truths.mean()) if k else nan, nan, nan, nan, nan, nan,
            tau1, tau2, failures, failed=True,
        )
    err = estimates - truths
    mse = float(np.mean(err**2))
    bias_sq = float(np.mean(err)) ** 2
    variance = mse - bias_sq
    center = float(truths.mean() + err.mean())
    half = 1.96 * float(np.std(err, ddof=1)) / math.sqrt(k) if k > 1 else 0.0
    return TrialResult(
        estimates, float(truths.mean()), mse, bias_sq, variance,
        center - half, center + half, tau1, tau2, failures,
    )


def replicate(trial_fn, n_seeds: int, master_seed: int = 0, label: str = "eval",
              n_jobs: int = 1) -> TrialResult:
    """Run ``trial_fn(seed) -> (estimate, true_value)`` over derived seeds.

    Estimation failures are recorded per seed; a cell with more than 50%
    failures is marked failed, never fabricated.
    """
    if n_seeds < 2:
        raise ValueError("n_seeds must be >= 2")
    seeds = [derive_seed(master_seed, f"{label}:{i}") for i in range(n_seeds)]

    def one(seed):
        try:
            return trial_fn(seed)
        except EstimationError:
            return None

    if n_jobs != 1:
        outcomes = Parallel(n_jobs=n_jobs)(delayed(one)(s) for s in seeds)
    else:
        outcomes = [one(s) for s in seeds]
    kept = [o for o in outcomes if o is not None]
    estimates = np.array([e for e, _ in kept])
    truths = np.array([t for _, t in kept])
    return summarize(estimates, truths, n_seeds)


# ---------------------------------------------------------------------------
# Four-action toy instance (single context, known tree).

TOY_DELTA = np.array([5.0, 10.0, 15.0, 20.0])
TOY_PI = np.array([0.0, 0.2, 0.2, 0.6])
TOY_MU = np.array([0.2, 0.2, 0.4, 0.2])
TOY_EMBEDDINGS = np.array([[0.0], [1.0], [10.0], [11.0]])


def toy_components(seed: int = 0):
    """(embeddings, tree, oracle, target, logging) for the 4-action toy."""
    emb = EmbeddingTable(TOY_EMBEDDINGS)
    tree = build_tree(emb, depth=3, seed=seed)
    return emb, tree, StaticOracle(TOY_DELTA), StaticPolicy(TOY_PI), StaticPolicy(TOY_MU)


def toy_dataset(n_samples: int, seed: int) -> BanditDataset:
    emb, _, oracle, _, mu = toy_components()
    rng = np.random.default_rng(seed)
    actions = rng.choice(len(TOY_MU), size=n_samples, p=TOY_MU)
    contexts = np.zeros((n_samples, 1))
    return BanditDataset(contexts, actions, TOY_DELTA[actions], mu, emb)


def toy_table(
    taus=(1, 2, 3), n_samples: int = 10, n_reps: int = 50_000, seed: int = 0
) -> list[TrialResult]:
    """Replicated smoothed-IPS results on the toy instance, one per tau.

    Replications are vectorized: because the smoothed-IPS estimate is the
    mean of per-action terms and the instance has a single context, terms
    are tabulated once per tau (through the real smoothing operators) and
    datasets reduce to sampled action indices.
    """
    emb, tree, oracle, pi, mu = toy_components(seed)
    truth = true_value(pi, oracle, [0])
    rng = stream(seed, "toy-replications")
    actions = rng.choice(len(TOY_MU), size=(n_reps, n_samples), p=TOY_MU)
    results = []
    for tau in taus:
        sm = TreeSmoother(tau, tree=tree).fit(emb)
        weights = sm.convolve(TOY_PI) / sm.convolve(TOY_MU)
        terms = weights * TOY_DELTA
        estimates = terms[actions].mean(axis=1)
        results.append(summarize(estimates, truth, n_reps, tau1=tau, tau2=tau))
    return results


# ---------------------------------------------------------------------------
# Estimator configuration grammar.

BACKBONES = {
    "ips": InversePropensityScoring,
    "snips": SelfNormalizedIPS,
    "dr": DoublyRobust,
    "sndr": SelfNormalizedDR,
}
MODEL_BASED = {"dm", "dr", "sndr"}


@dataclass
class EstimatorSpec:
    """Parsed estimator description (`ips`, `dm`, `pc-<backbone>:<kind>:<tau1>:<tau2>`).

    A tau of ``sel`` requests validation-set selection over the default
    grid for the smoother kind (constrained to tau1 = tau2).
    """

    name: str
    backbone: str
    conv_kind: str | None = None
    tau1: object = None
    tau2: object = None

    @property
    def is_pc(self) -> bool:
        return self.conv_kind is not None

    @property
    def needs_selection(self) -> bool:
        return self.tau1 == "sel" or self.tau2 == "sel"

    @property
    def needs_model(self) -> bool:
        return self.backbone in MODEL_BASED


def parse_estimator_spec(text: str) -> EstimatorSpec:
    text = text.strip().lower()
    if ":" not in text:
        if text not in BACKBONES and text != "dm":
            raise ValueError(f"unknown estimator {text!r}")
        return EstimatorSpec(text, text)
    parts = text.split(":")
    if len(parts) != 4 or not parts[0].startswith("pc-"):
        raise ValueError(
            f"bad estimator spec {text!r}; expected pc-<backbone>:<kind>:<tau1>:<tau2>"
        )
    backbone = parts[0][3:]
    if backbone not in BACKBONES:
        raise ValueError(f"unknown backbone {backbone!r} in {text!r}")
    kind = parts[1]
    if kind not in ("tree", "knn", "ball", "kernel"):
        raise ValueError(f"unknown smoother kind {kind!r} in {text!r}")

    def tau(tok):
        if tok == "sel":
            return "sel"
        return int(tok) if kind in ("tree", "knn") else float(tok)

    return EstimatorSpec(text, backbone, kind, tau(parts[2]), tau(parts[3]))


def default_tau_grid(kind: str, embeddings: EmbeddingTable, include_identity: bool = False):
    """Default smoothing grids per kind; the identity point is excluded
    unless requested."""
    n = embeddings.n_actions
    if kind == "tree":
        depth = full_tree_depth(n)
        grid = list(range(1, depth + 1))
    elif kind == "knn":
        grid = [t for t in (1, 2, 5, 10, 20, 50, 100) if t <= n]
    else:
        d2 = pairwise_sq_distances(embeddings)
        off = d2[~np.eye(n, dtype=bool)]
        if kind == "ball":
            grid = [float(q) for q in np.quantile(off, [0.01, 0.05, 0.10, 0.25, 0.50])]
            grid = sorted({q for q in grid if q > 0})
        else:  # kernel
            med = float(np.median(np.sqrt(off)))
            grid = [s * med for s in (0.1, 0.25, 0.5, 1.0, 2.0, 4.0)]
    if not include_identity and kind in ("tree", "knn"):
        grid = [t for t in grid if t != 1]
    return grid


class SmootherCache:
    """Fitted smoothers shared across seeds and estimator specs."""

    def __init__(self, embeddings: EmbeddingTable, tree: ActionTree | None = None,
                 seed: int = 0):
        self.embeddings = embeddings
        self.seed = seed
        self._tree = tree
        self._cache = {}

    @property
    def tree(self) -> ActionTree:
        if self._tree is None:
            self._tree = build_tree(
                self.embeddings, full_tree_depth(self.embeddings.n_actions), self.seed
            )
        return self._tree

    def get(self, kind: str, tau):
        key = (kind, float(tau))
        if key not in self._cache:
            tree = self.tree if kind == "tree" else None
            self._cache[key] = make_smoother(kind, tau, tree=tree).fit(self.embeddings)
        return self._cache[key]


def build_estimator(spec: EstimatorSpec, smoothers: SmootherCache | None,
                    reward_model=None):
    """Instantiate a concrete estimator from a resolved spec (no 'sel' taus)."""
    if spec.backbone == "dm":
        return DirectMethod(reward_model)
    backbone_cls = BACKBONES[spec.backbone]
    backbone = backbone_cls(reward_model) if spec.needs_model else backbone_cls()
    if not spec.is_pc:
        return backbone
    if spec.needs_selection:
        raise ValueError("spec still has unresolved 'sel' taus")
    return PolicyConvolution(
        backbone,
        target_smoother=smoothers.get(spec.conv_kind, spec.tau1),
        logging_smoother=smoothers.get(spec.conv_kind, spec.tau2),
    )


# ---------------------------------------------------------------------------
# Validation-set smoothing-level selection.

def select_tau(
    make_dataset,
    spec: EstimatorSpec,
    target,
    truth: float,
    smoothers: SmootherCache,
    tau_pairs=None,
    n_val_seeds: int = 10,
    master_seed: int = 0,
    ridge_alpha: float = 1.0,
    include_identity: bool = False,
):
    """Pick (tau1, tau2) minimizing validation MSE against the oracle truth.

    Validation datasets come from a dedicated seed stream (label
    ``val``) that never overlaps the evaluation stream. Ties break toward
    smaller tau1 + tau2, then smaller tau1.
    """
    if tau_pairs is None:
        grid = default_tau_grid(spec.conv_kind, smoothers.embeddings, include_identity)
        tau_pairs = [(t, t) for t in grid]
    if not tau_pairs:
        raise ValueError("tau grid is empty")
    datasets = [
        make_dataset(derive_seed(master_seed, f"val:{i}")) for i in range(n_val_seeds)
    ]
    rows_per_ds = [target.prob_matrix(ds.contexts) for ds in datasets]
    models = [
        RidgeRewardModel(ridge_alpha).fit(ds) if spec.needs_model else None
        for ds in datasets
    ]
    scored = []
    for tau1, tau2 in tau_pairs:
        concrete = replace(spec, tau1=tau1, tau2=tau2)
        estimates = []
        for ds, rows, model in zip(datasets, rows_per_ds, models):
            est = build_estimator(concrete, smoothers, model)
            try:
                estimates.append(est.estimate(ds, target, rows).value)
            except EstimationError:
                continue
        if not estimates:
            continue
        mse = float(np.mean((np.array(estimates) - truth) ** 2))
        scored.append((mse, float(tau1) + float(tau2), float(tau1), (tau1, tau2)))
    if not scored:
        raise EstimationError("every smoothing level failed on the validation data")
    scored.sort()
    return scored[0][3]


# ---------------------------------------------------------------------------
# Sweeps.

@dataclass
class SweepSpec:
    """One experiment grid: an environment, a swept parameter, estimators."""

    environment: str  # toy | synthetic | movielens
    sweep_param: str
    sweep_values: list
    estimators: list[str]
    n_seeds: int = 50
    seed: int = 0
    config: SynthConfig = field(default_factory=SynthConfig)
    deficient_fraction: float = 0.0
    n_val_seeds: int = 10
    ridge_alpha: float = 1.0
    include_identity: bool = False
    n_jobs: int = 1
    movielens_path: str | None = None
    movielens_rank: int = 16
    movielens_eps_floor: float = 0.1

    def __post_init__(self):
        if not self.sweep_values:
            raise ValueError("sweep grid must be nonempty")
        if self.n_seeds < 2:
            raise ValueError("n_seeds must be >= 2")


WORLD_LEVEL_PARAMS = {"n_actions", "embed_dim"}
_CONFIG_FIELD = {
    "n_actions": "n_actions",
    "beta": "beta",
    "epsilon": "epsilon",
    "n_logged": "n_logged",
    "embed_dim": "d_embed",
}


def _format_row(experiment, sweep_param, value, name, conv_kind, result: TrialResult,
                n_seeds):
    return {
        "experiment": experiment,
        "sweep_param": sweep_param,
        "sweep_value": value,
        "estimator": name,
        "conv_kind": conv_kind or "",
        "tau1": "" if result.tau1 is None else result.tau1,
        "tau2": "" if result.tau2 is None else result.tau2,
        "n_seeds": n_seeds,
        "true_value": result.true_value,
        "mse": result.mse,
        "bias_sq": result.bias_sq,
        "variance": result.variance,
        "ci_low": result.ci_low,
        "ci_high": result.ci_high,
        "failures": result.failures,
    }


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _toy_sweep(spec: SweepSpec) -> list[dict]:
    taus = [int(v) for v in spec.sweep_values]
    results = toy_table(taus=taus, n_reps=spec.n_seeds, seed=spec.seed)
    return [
        _format_row("toy", "tau", tau, "pc-ips", "tree", res, spec.n_seeds)
        for tau, res in zip(taus, results)
    ]


def _synthetic_cell(spec: SweepSpec, value) -> list[dict]:
    param = spec.sweep_param
    cfg = spec.config
    if param in _CONFIG_FIELD:
        cfg = replace(cfg, **{_CONFIG_FIELD[param]: type(getattr(cfg, _CONFIG_FIELD[param]))(value)})
    deficient = spec.deficient_fraction
    if param == "deficient_fraction":
        deficient = float(value)
    per_seed_world = param in WORLD_LEVEL_PARAMS

    def build_env(world_seed):
        world = build_world(replace(cfg, seed=world_seed))
        mu = logging_policy(world, cfg.beta)
        if deficient > 0:
            mu = apply_deficient_support(mu, deficient, derive_seed(spec.seed, "mask"))
        pi = target_policy(world, cfg.epsilon)
        test_ctx = stream(derive_seed(spec.seed, "test-contexts"), "test").standard_normal(
            (cfg.n_test, cfg.d_context)
        )
        truth = true_value(pi, world, test_ctx)
        return world, mu, pi, truth

    est_specs = [parse_estimator_spec(s) for s in spec.estimators]
    if param == "tau":
        resolved_specs = []
        for es in est_specs:
            if es.is_pc:
                cast = int if es.conv_kind in ("tree", "knn") else float
                es = replace(es, tau1=cast(value), tau2=cast(value))
            resolved_specs.append(es)
        est_specs = resolved_specs

    if not per_seed_world:
        world, mu, pi, truth = build_env(cfg.seed)
        smoothers = SmootherCache(world.embeddings, seed=derive_seed(spec.seed, "tree"))
        resolved = []
        for es in est_specs:
            if es.needs_selection:
                tau1, tau2 = select_tau(
                    lambda s: generate_dataset(world, mu, cfg.n_logged, s),
                    es, pi, truth, smoothers,
                    n_val_seeds=spec.n_val_seeds,
                    master_seed=spec.seed,
                    ridge_alpha=spec.ridge_alpha,
                    include_identity=spec.include_identity,
                )
                es = replace(es, tau1=tau1, tau2=tau2)
            resolved.append(es)

        def run_seed(i):
            ds = generate_dataset(world, mu, cfg.n_logged, derive_seed(spec.seed, f"eval:{i}"))
            rows = pi.prob_matrix(ds.contexts)
            model = (
                RidgeRewardModel(spec.ridge_alpha).fit(ds)
                if any(es.needs_model for es in resolved)
                else None
            )
            out = {}
            for es in resolved:
                try:
                    est = build_estimator(es, smoothers, model)
                    out[es.name] = est.estimate(ds, pi, rows).value
                except EstimationError:
                    out[es.name] = None
            return out

        if spec.n_jobs != 1:
            per_seed = Parallel(n_jobs=spec.n_jobs)(
                delayed(run_seed)(i) for i in range(spec.n_seeds)
            )
        else:
            per_seed = [run_seed(i) for i in range(spec.n_seeds)]
        rows_out = []
        for es in resolved:
            vals = [d[es.name] for d in per_seed if d[es.name] is not None]
            res = summarize(vals, truth, spec.n_seeds, tau1=es.tau1, tau2=es.tau2)
            rows_out.append(
                _format_row("synthetic", param, value, es.name.split(":")[0] if es.is_pc else es.name,
                            es.conv_kind, res, spec.n_seeds)
            )
        return rows_out

    # world-level sweep: rebuild the world (and estimand) per seed
    for es in est_specs:
        if es.needs_selection:
            raise ValueError("tau selection is not supported on world-level sweeps")

    def run_seed(i):
        world, mu, pi, truth = build_env(derive_seed(spec.seed, f"world:{value}:{i}"))
        smoothers = SmootherCache(world.embeddings, seed=derive_seed(spec.seed, "tree"))
        ds = generate_dataset(world, mu, cfg.n_logged, derive_seed(spec.seed, f"eval:{i}"))
        rows = pi.prob_matrix(ds.contexts)
        model = (
            RidgeRewardModel(spec.ridge_alpha).fit(ds)
            if any(es.needs_model for es in est_specs)
            else None
        )
        out = {}
        for es in est_specs:
            try:
                est = build_estimator(es, smoothers, model)
                out[es.name] = (est.estimate(ds, pi, rows).value, truth)
            except EstimationError:
                out[es.name] = None
        return out

    if spec.n_jobs != 1:
        per_seed = Parallel(n_jobs=spec.n_jobs)(
            delayed(run_seed)(i) for i in range(spec.n_seeds)
        )
    else:
        per_seed = [run_seed(i) for i in range(spec.n_seeds)]
    rows_out = []
    for es in est_specs:
        kept = [d[es.name] for d in per_seed if d[es.name] is not None]
        vals = [v for v, _ in kept]
        truths = [t for _, t in kept]
        res = summarize(vals, truths, spec.n_seeds, tau1=es.tau1, tau2=es.tau2)
        rows_out.append(
            _format_row("synthetic", param, value, es.name.split(":")[0] if es.is_pc else es.name,
                        es.conv_kind, res, spec.n_seeds)
        )
    return rows_out


def _movielens_cell(spec: SweepSpec, value) -> list[dict]:
    from .movielens import (
        binarize,
        factorize,
        generate_movielens_dataset,
        load_movielens,
        movielens_reward_oracle,
        two_stage_logging_policy,
    )
    from .synthetic import EpsilonGreedyPolicy

    if spec.movielens_path is None:
        raise ValueError("movielens sweeps require a ratings file path")
    cfg = spec.config
    beta, epsilon, n_logged = cfg.beta, cfg.epsilon, cfg.n_logged
    if spec.sweep_param == "beta":
        beta = float(value)
    elif spec.sweep_param == "epsilon":
        epsilon = float(value)
    elif spec.sweep_param == "n_logged":
        n_logged = int(value)
    else:
        raise ValueError(f"unsupported movielens sweep param {spec.sweep_param!r}")

    ratings = load_movielens(spec.movielens_path)
    factors = factorize(binarize(ratings), spec.movielens_rank, seed=spec.seed)
    oracle = movielens_reward_oracle(ratings, factors)
    mu = two_stage_logging_policy(
        oracle, factors, beta, eps_floor=spec.movielens_eps_floor,
        seed=derive_seed(spec.seed, "ml-logging"),
    )
    if spec.deficient_fraction > 0:
        mu = apply_deficient_support(
            mu, spec.deficient_fraction, derive_seed(spec.seed, "mask")
        )
    pi = EpsilonGreedyPolicy(oracle, epsilon)
    all_users = np.arange(len(factors.user_factors))
    truth = true_value(pi, oracle, all_users)
    smoothers = SmootherCache(
        EmbeddingTable(factors.item_factors), seed=derive_seed(spec.seed, "tree")
    )

    def make_ds(s):
        return generate_movielens_dataset(oracle, factors, mu, n_logged, s)

    est_specs = []
    for raw in spec.estimators:
        es = parse_estimator_spec(raw)
        if es.needs_selection:
            tau1, tau2 = select_tau(
                make_ds, es, pi, truth, smoothers,
                n_val_seeds=spec.n_val_seeds, master_seed=spec.seed,
                ridge_alpha=spec.ridge_alpha, include_identity=spec.include_identity,
            )
            es = replace(es, tau1=tau1, tau2=tau2)
        est_specs.append(es)

    rows_out = []
    values = {es.name: [] for es in est_specs}
    for i in range(spec.n_seeds):
        ds = make_ds(derive_seed(spec.seed, f"eval:{i}"))
        rows = pi.prob_matrix(ds.contexts)
        model = (
            RidgeRewardModel(spec.ridge_alpha).fit(ds)
            if any(es.needs_model for es in est_specs)
            else None
        )
        for es in est_specs:
            try:
                est = build_estimator(es, smoothers, model)
                values[es.name].append(est.estimate(ds, pi, rows).value)
            except EstimationError:
                pass
    for es in est_specs:
        res = summarize(values[es.name], truth, spec.n_seeds, tau1=es.tau1, tau2=es.tau2)
        rows_out.append(
            _format_row("movielens", spec.sweep_param, value,
                        es.name.split(":")[0] if es.is_pc else es.name,
                        es.conv_kind, res, spec.n_seeds)
        )
    return rows_out


def run_sweep(spec: SweepSpec, out_path=None) -> list[dict]:
    """Run every (sweep value, estimator) cell and optionally write a CSV."""
    if out_path is not None:
        # fail on an unwritable path before any computation
        with open(out_path, "w") as fh:
            fh.write("")
    rows: list[dict] = []
    if spec.environment == "toy":
        rows = _toy_sweep(spec)
    elif spec.environment == "synthetic":
        for value in spec.sweep_values:
            rows.extend(_synthetic_cell(spec, value))
    elif spec.environment == "movielens":
        for value in spec.sweep_values:
            rows.extend(_movielens_cell(spec, value))
    else:
        raise ValueError(f"unknown environment {spec.environment!r}")
    if out_path is not None:
        write_csv(rows, out_path)
    return rows
