"""Command line surface: config parsing, validation-gated runs, artifact emission.

Exit codes: 0 success, 1 property or convergence failure, 2 usage/config error.
Every JSON report embeds the fully resolved configuration so a run can be
reproduced from the report alone.
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .analysis import (
    SingularSystemError,
    convergence_study,
    coercivity_constant,
    gradient_check,
    nullspace_check,
)
from .domain import (
    CLASS_NAMES,
    COLLAR,
    LOCAL,
    NONLOCAL,
    OUTSIDE,
    GridSpec,
    Partition,
    RegionSpec,
    build_grid,
    check_assumptions,
)
from .kernel import (
    CollarMass,
    KernelProfile,
    NeighborTable,
    build_neighbors,
    collar_mass,
    validate_kernel,
)
from .model import (
    ModelConfig,
    SourceModel,
    affine_source,
    eval_energy,
    monotone_power_source,
    strong_residual,
    validate_growth,
)
from .solver import SolveOptions, minimize, uniqueness_probe

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

THREADS_ENV = "PLNL_THREADS"

_SOLVE_DEFAULTS = {
    "grad_tol": None,
    "max_iters": 200_000,
    "step_rule": "barzilai_borwein_safeguarded",
    "armijo_c": 1e-4,
    "backtrack_factor": 0.5,
    "initial_step": 1.0,
    "seed": 0,
}

_COMMAND_DEFAULTS = {
    "coercivity": {"n_starts": 8, "min_constant": 1e-3},
    "uniqueness": {"n_starts": 5, "max_spread": 1e-6},
    "gradcheck": {"n_fields": 20, "exponents": [1.5, 2.0, 3.0, 4.5],
                  "tolerance": 1e-6, "tolerance_below_2": 1e-5},
    "convergence": {"case": "p2_local_sin",
                    "spacings": [1 / 32, 1 / 64, 1 / 128, 1 / 256],
                    "expected_order": None, "order_window": 0.2, "max_error": None},
}

_CASE_PASS_DEFAULTS = {
    "p2_local_sin": {"expected_order": 2.0, "order_window": 0.2},
    "p2_pure_nonlocal": {"max_error": 1e-8},
    "p3_coupled": {},  # monotone error decrease
}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def _require(raw: dict, key: str):
    if key not in raw:
        raise ConfigError(f"config is missing required key {key!r}")
    return raw[key]


def resolve_config(raw: dict) -> dict:
    """Fill every default into a copy of the raw config dict."""
    cfg = copy.deepcopy(raw)
    for key in ("grid", "regions", "kernel", "source", "delta", "p"):
        _require(cfg, key)
    solve = dict(_SOLVE_DEFAULTS)
    solve.update(cfg.get("solve", {}))
    cfg["solve"] = solve
    for section, defaults in _COMMAND_DEFAULTS.items():
        merged = dict(defaults)
        merged.update(cfg.get(section, {}))
        cfg[section] = merged
    cfg.setdefault("output_dir", "plnl_out")
    return cfg


def _sample(specval, centers: np.ndarray) -> np.ndarray:
    """Grid samples from a scalar or a named profile spec."""
    if isinstance(specval, (int, float)):
        return np.full(centers.shape[0], float(specval))
    if isinstance(specval, dict):
        kind = specval.get("kind")
        if kind == "constant":
            return np.full(centers.shape[0], float(specval["value"]))
        if kind == "sin_pi":
            axis = int(specval.get("axis", 0))
            amp = float(specval.get("amplitude", 1.0))
            return amp * np.sin(np.pi * centers[:, axis])
        raise ConfigError(f"unknown sample kind {kind!r}")
    raise ConfigError(f"cannot interpret sample spec {specval!r}")


def _build_source(cfg: dict, centers: np.ndarray) -> SourceModel:
    src = cfg["source"]
    form = src.get("form")
    integ = src.get("integrability")
    integ = math.inf if integ is None else float(integ)
    if form == "affine":
        return affine_source(_sample(_require(src, "g"), centers))
    if form == "monotone_power":
        return monotone_power_source(
            _sample(_require(src, "a"), centers),
            _sample(_require(src, "b"), centers),
            q=float(src.get("q", 0.0)),
            integrability=integ,
        )
    raise ConfigError(f"unknown source form {form!r}")


@dataclass
class Runtime:
    """Everything built from a resolved config."""

    config: dict
    partition: Partition
    profile: KernelProfile
    table: NeighborTable
    collar: CollarMass
    source: SourceModel
    delta: float
    p: float
    options: SolveOptions

    def model(self, with_source: bool = True) -> ModelConfig:
        return ModelConfig(
            partition=self.partition,
            table=self.table,
            collar=self.collar,
            p=self.p,
            source=self.source if with_source else None,
            regularization=float(self.config.get("regularization", 0.0)),
        )


def build_runtime(cfg: dict, seed_override: int | None = None) -> Runtime:
    try:
        grid = cfg["grid"]
        spec = GridSpec(
            dimension=int(grid["dimension"]),
            bounding_box=tuple(tuple(iv) for iv in grid["bounding_box"]),
            spacing=float(grid["spacing"]),
        )
        reg = cfg["regions"]
        regions = RegionSpec(
            local_boxes=tuple(tuple(tuple(iv) for iv in b) for b in reg.get("local_boxes", [])),
            nonlocal_boxes=tuple(
                tuple(tuple(iv) for iv in b) for b in reg.get("nonlocal_boxes", [])
            ),
        )
        kern = cfg["kernel"]
        profile = KernelProfile(
            shape=kern["shape"],
            amplitude=float(kern.get("amplitude", 1.0)),
            support_radius=float(kern["support_radius"]),
            bump_exponent=kern.get("bump_exponent"),
        )
        partition = build_grid(spec, regions, kernel_radius=profile.support_radius)
        table = build_neighbors(partition, profile)
        collar = collar_mass(partition, profile)
        source = _build_source(cfg, partition.active_centers)

        solve = dict(cfg["solve"])
        if seed_override is not None:
            solve["seed"] = seed_override
            cfg["solve"]["seed"] = seed_override
        options = SolveOptions(
            grad_tol=solve["grad_tol"],
            max_iters=int(solve["max_iters"]),
            step_rule=solve["step_rule"],
            armijo_c=float(solve["armijo_c"]),
            backtrack_factor=float(solve["backtrack_factor"]),
            initial_step=float(solve["initial_step"]),
            seed=int(solve["seed"]),
        )
        return Runtime(
            config=cfg,
            partition=partition,
            profile=profile,
            table=table,
            collar=collar,
            source=source,
            delta=float(cfg["delta"]),
            p=float(cfg["p"]),
            options=options,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------------------
# artifacts


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_field_csv(path: Path, partition: Partition, values: np.ndarray, column: str = "value",
                    cells: np.ndarray | None = None) -> None:
    cells = partition.active_cells if cells is None else cells
    coords = partition.centers[cells]
    axes = ["x", "y"][: partition.dimension]
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(["cell_index", *axes, column]) + "\n")
        for cell, xy, v in zip(cells, coords, values):
            f.write(",".join([str(int(cell)), *(_fmt(c) for c in xy), _fmt(float(v))]) + "\n")


def write_history_csv(path: Path, report) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("iter,energy,grad_norm\n")
        for i, (e, g) in enumerate(zip(report.energy_history, report.gradient_history)):
            f.write(f"{i},{_fmt(e)},{_fmt(g)}\n")


def write_rates_csv(path: Path, table) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("spacing,error,observed_order\n")
        for i, (h, e) in enumerate(zip(table.spacings, table.errors)):
            order = _fmt(table.orders[i - 1]) if i > 0 else ""
            f.write(f"{_fmt(h)},{_fmt(e)},{order}\n")


def write_report(path: Path, payload: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(payload, f, indent=2, allow_nan=True)
        f.write("\n")


def _partition_summary(partition: Partition) -> dict:
    return {CLASS_NAMES[c]: partition.count(c) for c in (LOCAL, NONLOCAL, COLLAR, OUTSIDE)}


# ---------------------------------------------------------------------------
# commands


def _run_checks(rt: Runtime) -> tuple[bool, dict]:
    assumptions = check_assumptions(rt.partition, rt.delta)
    kern = validate_kernel(rt.profile, rt.delta)
    growth = validate_growth(rt.source, rt.p)
    passed = assumptions.passed and kern.passed and growth.passed
    results = {
        "partition": _partition_summary(rt.partition),
        "assumptions": {
            "local_connected": assumptions.local_connected,
            "n_local_components": assumptions.n_local_components,
            "cover_exhausted": assumptions.cover_exhausted,
            "n_uncovered": assumptions.n_uncovered,
            "separation_ok": assumptions.separation_ok,
            "separation": assumptions.separation,
            "violations": assumptions.violations,
        },
        "kernel": {
            "passed": kern.passed,
            "constant": kern.constant,
            "violations": kern.violations,
        },
        "growth": {"passed": growth.passed, "violations": growth.violations},
        "all_passed": passed,
    }
    return passed, results


def cmd_check(rt: Runtime, out: Path, args) -> int:
    passed, results = _run_checks(rt)
    write_report(out / "report.json", _payload(rt, "check", results, passed))
    return EXIT_OK if passed else EXIT_FAIL


def cmd_solve(rt: Runtime, out: Path, args) -> int:
    checks_passed, check_results = _run_checks(rt)
    if not checks_passed:
        write_report(
            out / "report.json",
            _payload(rt, "solve", {"checks": check_results, "status": "checks_failed"}, False),
        )
        return EXIT_FAIL

    cfg = rt.model()
    u, report = minimize(cfg, rt.options, np.zeros(cfg.n))
    breakdown = eval_energy(cfg, u)
    residual = strong_residual(cfg, u)

    write_field_csv(out / "solution.csv", rt.partition, u)
    write_field_csv(out / "residual.csv", rt.partition, residual.values, column="residual")
    if getattr(args, "history", False):
        write_history_csv(out / "history.csv", report)
    if getattr(args, "dump_psi", False):
        nl = rt.partition.cells_of(NONLOCAL)
        psi = rt.collar.per_active[rt.partition.active_index[nl]]
        write_field_csv(out / "collar_mass.csv", rt.partition, psi, column="collar_mass", cells=nl)

    results = {
        "checks": check_results,
        "solve": report.as_dict(),
        "energy": breakdown.as_dict(),
        "residual_max_norm": residual.max_norm,
    }
    write_report(out / "report.json", _payload(rt, "solve", results, report.converged))
    return EXIT_OK if report.converged else EXIT_FAIL


def cmd_coercivity(rt: Runtime, out: Path, args) -> int:
    section = rt.config["coercivity"]
    est = coercivity_constant(rt.model(with_source=False), int(section["n_starts"]), rt.options)
    passed = est.conclusive and est.c_est > float(section["min_constant"])
    with open(out / "coercivity_starts.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("start,value,converged\n")
        for i, (v, ok) in enumerate(zip(est.start_values, est.start_converged)):
            f.write(f"{i},{_fmt(v)},{int(ok)}\n")
    if est.minimizer is not None:
        write_field_csv(out / "coercivity_minimizer.csv", rt.partition, est.minimizer)
    write_report(out / "report.json", _payload(rt, "coercivity", est.as_dict(), passed))
    return EXIT_OK if passed else EXIT_FAIL


def cmd_nulltest(rt: Runtime, out: Path, args) -> int:
    cfg = rt.model(with_source=False)
    nl_active = rt.partition.active_index[rt.partition.cells_of(NONLOCAL)]
    report = nullspace_check(cfg, nl_active)
    write_report(out / "report.json", _payload(rt, "nulltest", report.as_dict(), report.passed))
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_convergence(rt: Runtime, out: Path, args) -> int:
    section = rt.config["convergence"]
    case = section["case"]
    table = convergence_study(case, section["spacings"])

    rules = dict(_CASE_PASS_DEFAULTS.get(case, {}))
    for key in ("expected_order", "max_error"):
        if section.get(key) is not None:
            rules[key] = section[key]
    passed = True
    if "expected_order" in rules:
        window = float(section["order_window"])
        target = float(rules["expected_order"])
        passed &= all(abs(o - target) <= window for o in table.orders)
    if "max_error" in rules:
        passed &= all(e <= float(rules["max_error"]) for e in table.errors)
    if not rules:
        passed &= all(a > b for a, b in zip(table.errors, table.errors[1:]))

    write_rates_csv(out / "rates.csv", table)
    write_report(out / "report.json", _payload(rt, "convergence", table.as_dict(), passed))
    return EXIT_OK if passed else EXIT_FAIL


def cmd_gradcheck(rt: Runtime, out: Path, args) -> int:
    section = rt.config["gradcheck"]
    n_fields = int(section["n_fields"])
    rows, passed = [], True
    for p in section["exponents"]:
        cfg = ModelConfig(
            partition=rt.partition,
            table=rt.table,
            collar=rt.collar,
            p=float(p),
            source=rt.source,
        )
        tol = float(section["tolerance_below_2"] if p < 2.0 else section["tolerance"])
        rep = gradient_check(cfg, n_fields=n_fields, seed=rt.options.seed)
        rows.append({"p": float(p), "max_rel_error": rep.max_rel_error, "tolerance": tol})
        passed &= rep.max_rel_error <= tol
    with open(out / "gradcheck.csv", "w", encoding="utf-8", newline="\n") as f:
        f.write("p,max_rel_error,tolerance\n")
        for r in rows:
            f.write(f"{_fmt(r['p'])},{_fmt(r['max_rel_error'])},{_fmt(r['tolerance'])}\n")
    write_report(out / "report.json", _payload(rt, "gradcheck", {"rows": rows}, passed))
    return EXIT_OK if passed else EXIT_FAIL


def _payload(rt: Runtime, command: str, results: dict, passed: bool) -> dict:
    from . import __version__

    return {
        "command": command,
        "version": __version__,
        "passed": bool(passed),
        "config": rt.config,
        "results": results,
    }


_COMMANDS = {
    "check": cmd_check,
    "solve": cmd_solve,
    "coercivity": cmd_coercivity,
    "nulltest": cmd_nulltest,
    "convergence": cmd_convergence,
    "gradcheck": cmd_gradcheck,
}


def _resolve_threads(flag: int | None) -> int:
    if flag is not None:
        n = flag
    else:
        try:
            n = int(os.environ.get(THREADS_ENV, "1"))
        except ValueError:
            n = 1
    n = max(1, n)
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    return n


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="plnl",
        description="Coupled local-nonlocal p-Laplacian energy solver and verifier",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="path to the JSON config file")
        sp.add_argument("--out", default=None, help="output directory for artifacts")
        sp.add_argument("--seed", type=int, default=None, help="override the solver seed")
        sp.add_argument("--threads", type=int, default=None,
                        help=f"thread count (overrides ${THREADS_ENV})")
        if name == "solve":
            sp.add_argument("--history", action="store_true",
                            help="write the iteration history CSV")
            sp.add_argument("--dump-psi", action="store_true", dest="dump_psi",
                            help="write the collar mass CSV")
    args = parser.parse_args(argv)

    threads = _resolve_threads(args.threads)

    try:
        with open(args.config, "r", encoding="utf-8") as f:
            raw = json.load(f)
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a JSON object")
        resolved = resolve_config(raw)
    except (OSError, json.JSONDecodeError, ConfigError) as exc:
        print(f"plnl: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    resolved["threads"] = threads
    out = Path(args.out) if args.out is not None else Path(resolved["output_dir"])
    resolved["output_dir"] = str(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("", encoding="utf-8")
        probe.unlink()
    except OSError as exc:
        print(f"plnl: cannot write to output directory {out}: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        rt = build_runtime(resolved, seed_override=args.seed)
    except ConfigError as exc:
        print(f"plnl: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        return _COMMANDS[args.command](rt, out, args)
    except SingularSystemError as exc:
        write_report(
            out / "report.json",
            _payload(rt, args.command, {"error": f"singular system: {exc}"}, False),
        )
        return EXIT_FAIL
    except ValueError as exc:
        print(f"plnl: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
