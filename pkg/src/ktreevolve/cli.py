"""Command-line surface: sample trees, run evolutions, project, verify.

Exit codes: 0 success (all requested checks passed), 1 verification failure,
2 usage or validation error.  Defaults for the step, jump truncation, and
mass floor may be set via KTREEVOLVE_STEP, KTREEVOLVE_EPS, and
KTREEVOLVE_FLOOR; explicit flags win, and the effective values are recorded
in the output manifest either way.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .evolution import (
    EvolutionConfig,
    run_killed,
    run_nonresampling,
    run_resampling,
    sample_brownian_reduced_ktree,
)
from .rng import RandomSource
from .serialize import (
    dumps,
    manifest,
    trajectory_csv,
    trajectory_to_obj,
    tree_from_obj,
    tree_to_obj,
)
from .suites import SUITES, run_suite
from .trees import project_minus, project_to, validate_ktree


def _env_default(name: str, fallback: float) -> float:
    raw = os.environ.get(name)
    return float(raw) if raw else fallback


def _write(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).write_text(text)


def _cmd_sample_tree(args) -> int:
    rng = RandomSource(args.seed)
    tree = sample_brownian_reduced_ktree(args.k, args.mass, rng, args.pdip_blocks)
    obj = tree_to_obj(tree)
    obj["manifest"] = manifest(
        "sample-tree", args.seed, k=args.k, mass=args.mass, pdip_blocks=args.pdip_blocks
    )
    _write(args.out, dumps(obj))
    return 0


def _parse_record(text):
    if not text:
        return ()
    return tuple(float(tok) for tok in text.split(",") if tok.strip())


def _cmd_evolve(args) -> int:
    rng = RandomSource(args.seed)
    floor = args.floor
    if floor is None and os.environ.get("KTREEVOLVE_FLOOR"):
        floor = float(os.environ["KTREEVOLVE_FLOOR"])
    cfg = EvolutionConfig(
        grid_step=args.step,
        jump_truncation_rel=args.eps,
        mass_floor=floor,
        record_times=_parse_record(args.record),
        pdip_blocks=args.pdip_blocks,
    )
    if args.init == "pseudostationary":
        mass = rng.generator.gamma(args.k - 0.5, 1.0 / args.gamma)
        tree = sample_brownian_reduced_ktree(args.k, mass, rng, cfg.pdip_blocks)
    else:
        obj = json.loads(Path(args.init).read_text())
        tree = tree_from_obj(obj)
        bad = validate_ktree(tree, allow_one_degenerate=False)
        if bad:
            print("invalid initial state: " + "; ".join(bad), file=sys.stderr)
            return 2
    runner = {"killed": run_killed, "nonresampling": run_nonresampling, "resampling": run_resampling}[
        args.mode
    ]
    traj = runner(tree, cfg, args.horizon, rng)
    man = manifest(f"evolve --mode {args.mode}", args.seed, cfg, horizon=args.horizon, init=args.init)
    _write(args.out, dumps(trajectory_to_obj(traj, man)))
    if args.out not in (None, "-"):
        Path(args.out).with_suffix(".csv").write_text(trajectory_csv(traj))
    return 0


def _cmd_project(args) -> int:
    obj = json.loads(Path(args.input).read_text())
    if args.to_k is None and args.drop is None:
        print("one of --to-k or --drop is required", file=sys.stderr)
        return 2

    def proj(tree):
        if args.to_k is not None:
            return project_to(tree, args.to_k)
        return project_minus(tree, args.drop)

    try:
        if "states" in obj:
            for entry in obj["states"]:
                entry["tree"] = tree_to_obj(proj(tree_from_obj(entry["tree"])))
            obj["manifest"] = obj.get("manifest", {})
            obj["manifest"]["projected"] = args.to_k if args.to_k is not None else f"-{args.drop}"
            _write(args.out, dumps(obj))
        else:
            man = obj.pop("manifest", None)
            out = tree_to_obj(proj(tree_from_obj(obj)))
            if man is not None:
                out["manifest"] = man
                out["manifest"]["projected"] = args.to_k if args.to_k is not None else f"-{args.drop}"
            _write(args.out, dumps(out))
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    return 0


def _cmd_verify(args) -> int:
    names = list(SUITES) if args.suite == "all" else [args.suite]
    unknown = [nm for nm in names if nm not in SUITES]
    if unknown:
        print(f"unknown suite(s): {unknown}; known: {sorted(SUITES)}", file=sys.stderr)
        return 2
    params = {}
    for key in ("k", "j", "gamma", "y", "u", "mass_floor", "eps"):
        val = getattr(args, key.replace("-", "_"), None)
        if val is not None:
            params[key] = val
    if args.N is not None:
        params["n"] = args.N
    if args.seed is not None:
        params["seed"] = args.seed
    reports = []
    all_pass = True
    for nm in names:
        suite_params = {
            k: v for k, v in params.items() if k in SUITES[nm].__code__.co_varnames
        }
        rep = run_suite(nm, **suite_params)
        reports.append(rep)
        all_pass = all_pass and rep.passed
        line = dumps(rep.to_dict())
        print(line)
    if args.out:
        _write(args.out, "\n".join(dumps(r.to_dict()) for r in reports))
    return 0 if all_pass else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="ktreevolve",
        description="Sample decorated k-trees, run their evolutions, project, de-Poissonize, and verify the closed-form laws by Monte Carlo.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("sample-tree", help="sample a scaled Brownian reduced k-tree")
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--mass", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pdip-blocks", type=int, default=10_000)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_sample_tree)

    e = sub.add_parser("evolve", help="run a killed/non-resampling/resampling evolution")
    e.add_argument("--mode", choices=("killed", "nonresampling", "resampling"), required=True)
    e.add_argument("--k", type=int, default=3)
    e.add_argument("--horizon", type=float, required=True)
    e.add_argument("--record", default="", help="comma-separated record times")
    e.add_argument("--step", type=float, default=_env_default("KTREEVOLVE_STEP", 1e-3))
    e.add_argument("--eps", type=float, default=_env_default("KTREEVOLVE_EPS", 1e-8))
    e.add_argument("--floor", type=float, default=os.environ.get("KTREEVOLVE_FLOOR"))
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--gamma", type=float, default=1.0)
    e.add_argument("--pdip-blocks", type=int, default=10_000)
    e.add_argument("--init", default="pseudostationary", help="'pseudostationary' or a tree JSON path")
    e.add_argument("--out", default=None)
    e.set_defaults(func=_cmd_evolve)

    pr = sub.add_parser("project", help="project a tree or trajectory to fewer labels")
    pr.add_argument("--in", dest="input", required=True)
    pr.add_argument("--to-k", type=int, default=None)
    pr.add_argument("--drop", type=int, default=None)
    pr.add_argument("--out", default=None)
    pr.set_defaults(func=_cmd_project)

    v = sub.add_parser("verify", help="run Monte Carlo verification suites")
    v.add_argument("--suite", default="all")
    v.add_argument("--N", type=int, default=None)
    v.add_argument("--seed", type=int, default=None)
    v.add_argument("--k", type=int, default=None)
    v.add_argument("--j", type=int, default=None)
    v.add_argument("--gamma", type=float, default=None)
    v.add_argument("--y", type=float, default=None)
    v.add_argument("--u", type=float, default=None)
    v.add_argument("--mass-floor", dest="mass_floor", type=float, default=None)
    v.add_argument("--eps", type=float, default=None)
    v.add_argument("--out", default=None)
    v.set_defaults(func=_cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
