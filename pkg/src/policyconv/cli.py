"""Command-line entry point.

Subcommands: ``toy`` (4-action table reproduction), ``sweep`` (replicated
experiment grid from a config file), ``gen-synth`` (export a synthetic
logged dataset), ``movielens`` (single-cell benchmark on a ratings file).
Config files are flat ``key = value`` lines; see README for the schema.
Exit codes: 0 success, 1 validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

from .harness import SweepSpec, run_sweep, toy_table, write_csv, _format_row
from .synthetic import SynthConfig


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(f"error: {message}")


def parse_config(path) -> dict:
    """Flat key = value file; `#` starts a comment; keys are lowercase."""
    if not os.path.exists(path):
        raise ValueError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = line.split("=", 1)
            out[key.strip().lower()] = value.strip()
    return out


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


_SYNTH_FIELDS = {f.name: f.type for f in fields(SynthConfig)}


def synth_config_from(cfg: dict, seed: int | None) -> SynthConfig:
    kwargs = {}
    for name in _SYNTH_FIELDS:
        if name in cfg:
            caster = float if name in ("beta", "epsilon") else int
            kwargs[name] = caster(cfg[name])
    if seed is not None:
        kwargs["seed"] = seed
    return SynthConfig(**kwargs)


def sweep_spec_from(cfg: dict, seed: int | None, jobs: int) -> SweepSpec:
    for key in ("environment", "sweep_param", "sweep_values", "estimators"):
        if key not in cfg:
            raise ValueError(f"config is missing required key {key!r}")
    param = cfg["sweep_param"]
    caster = float if param in ("beta", "epsilon", "deficient_fraction", "tau") else int
    if param == "tau" and cfg.get("environment") == "toy":
        caster = int
    values = [caster(v) for v in cfg["sweep_values"].split(",") if v.strip()]
    spec = SweepSpec(
        environment=cfg["environment"],
        sweep_param=param,
        sweep_values=values,
        estimators=[e.strip() for e in cfg["estimators"].split(",") if e.strip()],
        n_seeds=int(cfg.get("n_seeds", 50)),
        seed=seed if seed is not None else int(cfg.get("seed", 0)),
        config=synth_config_from(cfg, seed),
        deficient_fraction=float(cfg.get("deficient_fraction", 0.0)),
        n_val_seeds=int(cfg.get("n_val_seeds", 10)),
        ridge_alpha=float(cfg.get("ridge_alpha", 1.0)),
        include_identity=_bool(cfg.get("include_identity", "false")),
        n_jobs=jobs,
        movielens_path=cfg.get("movielens_path"),
        movielens_rank=int(cfg.get("movielens_rank", 16)),
        movielens_eps_floor=float(cfg.get("movielens_eps_floor", 0.1)),
    )
    return spec


def _cmd_toy(args) -> int:
    results = toy_table(n_reps=args.reps, n_samples=args.samples, seed=args.seed or 0)
    rows = [
        _format_row("toy", "tau", tau, "pc-ips", "tree", res, args.reps)
        for tau, res in zip((1, 2, 3), results)
    ]
    if args.out:
        write_csv(rows, args.out)
    header = f"{'tau':>4} {'true_value':>11} {'mse':>9} {'bias_sq':>9} {'variance':>9}"
    print(header)
    for row in rows:
        print(
            f"{row['tau1']:>4} {row['true_value']:>11.4f} {row['mse']:>9.3f} "
            f"{row['bias_sq']:>9.3f} {row['variance']:>9.3f}"
        )
    return 0


def _cmd_sweep(args) -> int:
    cfg = parse_config(args.config)
    spec = sweep_spec_from(cfg, args.seed, args.jobs)
    out = os.path.join(args.out, "results.csv")
    os.makedirs(args.out, exist_ok=True)
    run_sweep(spec, out_path=out)
    print(f"wrote {out}")
    return 0


def _cmd_gen_synth(args) -> int:
    from .bandit import export_dataset
    from .synthetic import build_world, generate_dataset, logging_policy

    cfg = parse_config(args.config)
    config = synth_config_from(cfg, args.seed)
    world = build_world(config)
    mu = logging_policy(world, config.beta)
    ds = generate_dataset(world, mu, config.n_logged, config.seed)
    export_dataset(ds, args.out)
    print(f"wrote {args.out} ({len(ds)} interactions, {ds.n_actions} actions)")
    return 0


def _cmd_movielens(args) -> int:
    cfg = parse_config(args.config) if args.config else {}
    cfg.setdefault("environment", "movielens")
    cfg.setdefault("sweep_param", "beta")
    cfg.setdefault("sweep_values", cfg.get("beta", "0.0"))
    cfg.setdefault("estimators", "ips,snips")
    cfg["movielens_path"] = args.data
    spec = sweep_spec_from(cfg, args.seed, args.jobs)
    if not os.path.exists(args.data):
        raise ValueError(f"ratings file not found: {args.data}")
    run_sweep(spec, out_path=args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="policyconv")
    parser.add_argument("--seed", type=int, default=None, help="master seed override")
    parser.add_argument(
        "--jobs",
        type=int,
        default=int(os.environ.get("OPELAB_JOBS", "1")),
        help="parallel workers for replications (env fallback: OPELAB_JOBS)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_toy = sub.add_parser("toy", help="reproduce the 4-action toy table")
    p_toy.add_argument("--reps", type=int, default=50_000)
    p_toy.add_argument("--samples", type=int, default=10)
    p_toy.add_argument("--out", default=None, help="optional CSV output path")
    p_toy.set_defaults(func=_cmd_toy)

    p_sweep = sub.add_parser("sweep", help="run a replicated sweep from a config file")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_gen = sub.add_parser("gen-synth", help="export a synthetic logged dataset")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", required=True, help="output text file")
    p_gen.set_defaults(func=_cmd_gen_synth)

    p_ml = sub.add_parser("movielens", help="single-cell benchmark on a ratings file")
    p_ml.add_argument("--data", required=True, help="path to the u.data ratings file")
    p_ml.add_argument("--config", default=None)
    p_ml.add_argument("--out", required=True, help="output CSV path")
    p_ml.set_defaults(func=_cmd_movielens)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        if isinstance(exc.code, str):
            print(exc.code, file=sys.stderr)
            return 1
        return 0 if exc.code in (0, None) else 1
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failure boundary
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
