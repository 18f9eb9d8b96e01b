"""Command-line interface: fit real data, run simulation grids, validate bounds.

Exit codes: 0 success, 1 fit failure, 2 usage error.  Output files are
written atomically; identical invocations with the same seed produce
byte-identical outputs regardless of worker count.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .distributions import ERROR_KINDS, TRUE_KINDS, ErrorModel, read_sample
from .evaluation import (
    ERROR_FAMILIES,
    Scenario,
    atomic_write_text,
    emit_ise_table,
    emit_table,
    run_scenario,
)
from .pipeline import FitConfig, FitError, fit_density
from .theory import ALL_SWEEPS


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pmle", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit a deconvolved density to a data file")
    p_fit.add_argument("--data", required=True, help="single-column CSV of observations")
    p_fit.add_argument("--error-sample", help="single-column CSV of pure errors")
    p_fit.add_argument("--error-family", help=f"parametric error family, one of {ERROR_KINDS[:-1]}")
    p_fit.add_argument("--error-scale", type=float, default=1.0)
    lam = p_fit.add_mutually_exclusive_group()
    lam.add_argument("--lambda", dest="lambda_value", type=float)
    lam.add_argument("--lambda-R", dest="lambda_ratio", type=float)
    lam.add_argument("--cv", action="store_true")
    p_fit.add_argument("--support", nargs=2, type=float, metavar=("L", "U"))
    p_fit.add_argument("--subsample-size", type=int, default=30)
    p_fit.add_argument("--n-subsamples", type=int)
    p_fit.add_argument("--grid-points", type=int, default=1000)
    p_fit.add_argument("--quadrature-nodes", type=int, default=4096)
    p_fit.add_argument("--seed", type=int, default=0)
    p_fit.add_argument("--threads", type=int)
    p_fit.add_argument("--out", required=True, help="output JSON path")

    p_sim = sub.add_parser("simulate", help="run Monte-Carlo scenarios and emit a MISE table")
    p_sim.add_argument("--scenarios", help="scenario grid config file")
    p_sim.add_argument("--truth", help=f"one of {TRUE_KINDS}")
    p_sim.add_argument("--error", help=f"one of {ERROR_FAMILIES}")
    p_sim.add_argument("--n", type=int)
    p_sim.add_argument("--c", type=float)
    p_sim.add_argument("--replicates", type=int, default=20)
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--lambda-R", dest="lambda_ratio", type=float)
    p_sim.add_argument("--subsample-size", type=int, default=30)
    p_sim.add_argument("--threads", type=int)
    p_sim.add_argument("--out", required=True, help="output CSV path")
    p_sim.add_argument("--ise-out", help="optional per-replicate ISE CSV path")

    p_val = sub.add_parser("validate", help="run the inequality sweeps and report pass/fail")
    p_val.add_argument("--sweep-size", type=int, default=100)
    p_val.add_argument("--seed", type=int, default=0)

    return parser


def cmd_fit(args) -> int:
    if (args.error_sample is None) == (args.error_family is None):
        raise UsageError(
            "specify the error distribution with exactly one of "
            "--error-sample <csv> or --error-family <name> [--error-scale <C>]"
        )
    if args.cv and args.lambda_value is not None:
        raise UsageError("--lambda and --cv are mutually exclusive")
    y = read_sample(args.data)
    if args.error_sample is not None:
        error = ErrorModel.empirical(read_sample(args.error_sample))
    else:
        family = args.error_family
        valid = tuple(k for k in ERROR_KINDS if k != "empirical")
        if family not in valid:
            raise UsageError(f"unknown error family {family!r}; valid: {valid}")
        error = ErrorModel(family, scale=args.error_scale)

    if args.lambda_value is not None:
        mode, value = "fixed", args.lambda_value
    elif args.cv:
        mode, value = "cv", None
    else:
        mode, value = "heuristic", None

    config = FitConfig(
        lambda_mode=mode,
        lambda_value=value,
        heuristic_ratio=args.lambda_ratio,
        subsample_size=args.subsample_size,
        n_subsamples=args.n_subsamples,
        support=tuple(args.support) if args.support else None,
        grid_points=args.grid_points,
        quadrature_nodes=args.quadrature_nodes,
        seed=args.seed,
        n_jobs=args.threads,
    )
    try:
        est = fit_density(y, error, config)
    except (FitError, ValueError) as exc:
        print(f"fit failed: {exc}", file=sys.stderr)
        return 1
    payload = {
        "support": list(est.support),
        "grid": est.grid.tolist(),
        "density": est.values.tolist(),
        "diagnostics": {
            "lambda": est.diagnostics["lambda"],
            "shrink_history": [list(s) for s in est.diagnostics["shrink_history"]],
            "integral_before_normalization": est.diagnostics["integral_before_normalization"],
            "per_subsample": [
                {"converged": bool(sub.converged), "violation_max": float(sub.violation_max)}
                for sub in est.per_subsample
            ],
        },
    }
    atomic_write_text(args.out, json.dumps(payload, indent=1) + "\n")
    return 0


def parse_scenario_config(text: str, default_replicates=20, default_seed=0) -> list[Scenario]:
    """Expand ``[scenario]`` sections of comma-separated key=value lists
    into the cross product of scenarios."""
    sections: list[dict] = []
    current: dict | None = None
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if line.lower() != "[scenario]":
                raise UsageError(f"unknown section {line!r}; only [scenario] is recognized")
            current = {}
            sections.append(current)
            continue
        if current is None or "=" not in line:
            raise UsageError(f"malformed config line {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        current[key.lower()] = [v.strip() for v in value.split(",") if v.strip()]
    if not sections:
        raise UsageError("config declares no [scenario] sections")

    scenarios = []
    for section in sections:
        missing = {"truth", "error", "n", "c"} - set(section)
        if missing:
            raise UsageError(f"scenario section missing keys: {sorted(missing)}")
        replicates = int(section.get("replicates", [default_replicates])[0])
        seed = int(section.get("seed", [default_seed])[0])
        for truth in section["truth"]:
            _check_family(truth, TRUE_KINDS, "truth")
            for error in section["error"]:
                _check_family(error, ERROR_FAMILIES, "error")
                for n in section["n"]:
                    for c in section["c"]:
                        scenarios.append(
                            Scenario(truth, error, int(n), float(c), replicates, seed)
                        )
    return scenarios


def _check_family(name, valid, label):
    if name not in valid:
        raise UsageError(f"unknown {label} family {name!r}; valid: {tuple(valid)}")


def cmd_simulate(args) -> int:
    if args.scenarios:
        with open(args.scenarios) as fh:
            scenarios = parse_scenario_config(
                fh.read(), default_replicates=args.replicates, default_seed=args.seed
            )
    else:
        if not (args.truth and args.error and args.n and args.c is not None):
            raise UsageError("need --scenarios or all of --truth --error --n --c")
        _check_family(args.truth, TRUE_KINDS, "truth")
        _check_family(args.error, ERROR_FAMILIES, "error")
        scenarios = [
            Scenario(args.truth, args.error, args.n, args.c, args.replicates, args.seed)
        ]
    config = FitConfig(
        heuristic_ratio=args.lambda_ratio,
        subsample_size=args.subsample_size,
    )
    results = []
    for scenario in scenarios:
        result = run_scenario(scenario, config, n_jobs=args.threads)
        flag = " HIGH-FAILURE" if result.high_failure else ""
        print(
            f"{scenario.truth}/{scenario.error} n={scenario.n} C={scenario.c}: "
            f"mise={result.mise:.6g} se={result.se:.3g} failures={result.failures}{flag}"
        )
        results.append((scenario, result))
    emit_table(results, args.out)
    if args.ise_out:
        emit_ise_table(results, args.ise_out)
    return 0


def cmd_validate(args) -> int:
    all_pass = True
    for index, (name, sweep) in enumerate(ALL_SWEEPS.items()):
        rng = np.random.default_rng(np.random.SeedSequence((args.seed, index)))
        checks = sweep(args.sweep_size, rng)
        ok = all(c.holds for c in checks)
        worst = min(c.margin for c in checks)
        all_pass &= ok
        print(f"{name}: {'pass' if ok else 'FAIL'} (n={len(checks)}, worst margin={worst:.3e})")
    return 0 if all_pass else 1


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "fit":
            return cmd_fit(args)
        if args.command == "simulate":
            return cmd_simulate(args)
        return cmd_validate(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
