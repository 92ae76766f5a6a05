"""Command-line entry point.

Exit codes: 0 success (for ``check``: every necessary condition passes),
1 candidate screened out by a necessary condition (or a failed row of
``example``), 2 usage, configuration or runtime failure.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from fracdelay.adjoint import solve_adjoint
from fracdelay.conditions import PASSED, SCREENED_OUT, Process, check_conditions
from fracdelay.forward import (
    SolverError,
    evaluate_cost,
    manufactured_convergence,
    observed_orders,
    solve_fdde,
)
from fracdelay.fracquad import gamma_fn
from fracdelay.problem import (
    ConfigError,
    ControlSignal,
    ProblemSpec,
    builtin_example,
    problem_from_mapping,
    problem_to_mapping,
)
from fracdelay.variation import parse_ladder, run_spike

FAILURE = 2


class UsageError(Exception):
    pass


# {{{ manifest


@dataclass
class RunManifest:
    command: str
    config: dict
    tolerances: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    outputs: list[str] = field(default_factory=list)
    duration_s: float = 0.0

    def write(self, path: Path) -> None:
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise RuntimeError(f"declared output {missing[0]} was not written")
        path.write_text(json.dumps(self.__dict__, indent=2, default=_jsonable) + "\n")


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _grid_info(spec: ProblemSpec) -> dict:
    g = spec.grid
    return {"T": g.T, "h": g.h, "N": g.N, "dt": g.dt, "m": g.m}


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


def _finish(manifest: RunManifest, out: Path, started: float) -> None:
    manifest.duration_s = round(time.perf_counter() - started, 6)
    path = _manifest_path(out)
    manifest.write(path)
    print(f"manifest: {path}")


# }}}


# {{{ inputs


def _fmt(x: float) -> str:
    return f"{x + 0.0:.12g}"  # no "-0"


def _load_spec(args) -> ProblemSpec:
    if args.config is not None and args.example is not None:
        raise UsageError("give either --config or --example, not both")
    if args.example is not None:
        alpha = 0.5 if args.alpha is None else args.alpha
        N = 200 if args.N is None else args.N
        return builtin_example(args.example, alpha, N)
    if args.config is None:
        raise UsageError("a problem is required: --config PATH or --example NAME")
    path = Path(args.config)
    if not path.is_file():
        raise UsageError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError("<parse>", str(exc)) from None
    if not isinstance(raw, dict):
        raise ConfigError("<root>", "config must be a mapping of keys to values")
    if args.alpha is not None:
        raw["alpha"] = args.alpha
    if args.N is not None:
        raw["N"] = args.N
    return problem_from_mapping(raw)


def _load_control(spec: ProblemSpec, text: str | None) -> ControlSignal:
    if text is None:
        return ControlSignal.constant(spec.grid, np.zeros(spec.r))
    try:
        value = [float(p) for p in text.split(",")]
    except ValueError:
        path = Path(text)
        if not path.is_file():
            raise UsageError(f"--control is neither a number list nor a file: {text}") from None
        return ControlSignal.from_csv(path, spec.grid)
    if len(value) == 1:
        value = value * spec.r
    return ControlSignal.constant(spec.grid, value)


def _process(spec: ProblemSpec, u: ControlSignal) -> Process:
    spec.check_control(u)
    traj = solve_fdde(spec, u)
    return Process(spec, traj, u, solve_adjoint(spec, traj, u))


# }}}


# {{{ commands


def cmd_solve(args) -> int:
    started = time.perf_counter()
    spec = _load_spec(args)
    u = _load_control(spec, args.control)
    traj = solve_fdde(spec, u)
    J = evaluate_cost(spec, traj, u)
    out = Path(args.out or "trajectory.csv")
    traj.to_csv(out)
    print(f"J = {_fmt(J)}")
    print(f"trajectory: {out}")
    _finish(RunManifest("solve", problem_to_mapping(spec), grid=_grid_info(spec),
                        outputs=[str(out)]), out, started)
    return PASSED


def cmd_adjoint(args) -> int:
    started = time.perf_counter()
    spec = _load_spec(args)
    u = _load_control(spec, args.control)
    process = _process(spec, u)
    out = Path(args.out or "adjoint.csv")
    process.psi.to_csv(out)
    print(f"psi(0) = {' '.join(_fmt(x) for x in process.psi.values[0])}")
    print(f"adjoint: {out}")
    _finish(RunManifest("adjoint", problem_to_mapping(spec), grid=_grid_info(spec),
                        outputs=[str(out)]), out, started)
    return PASSED


def cmd_check(args) -> int:
    started = time.perf_counter()
    spec = _load_spec(args)
    u = _load_control(spec, args.control)
    report = check_conditions(_process(spec, u), args.tol_pmp, args.tol_sing, args.tol_2nd)
    out = Path(args.out or "conditions.csv")
    report.to_csv(out)
    for key, value in report.summary().items():
        print(f"{key}: {_fmt(value) if isinstance(value, float) else value}")
    code, reason = report.verdict()
    print(f"verdict: {'PASS' if code == PASSED else 'SCREENED OUT'} ({reason})")
    _finish(RunManifest("check", problem_to_mapping(spec), tolerances=report.tolerances,
                        grid=_grid_info(spec), outputs=[str(out)]), out, started)
    return code


def cmd_spike(args) -> int:
    started = time.perf_counter()
    spec = _load_spec(args)
    u = _load_control(spec, args.control)
    if args.theta is None or args.v is None:
        raise UsageError("spike needs --theta and --v")
    v = [float(p) for p in args.v.split(",")]
    if len(v) == 1:
        v = v * spec.r
    exp = run_spike(spec, u, args.theta, v, parse_ladder(args.ladder), companion=args.companion)
    out = Path(args.out or "spike.csv")
    exp.to_csv(out)
    print("eps dJ_actual dJ_first dJ_second residual_ratio")
    for rec, ratio in zip(exp.records, exp.residual_ratios()):
        print(" ".join(_fmt(x) for x in (rec.eps, rec.dJ_actual, rec.dJ_first, rec.dJ_second, ratio)))
    _finish(RunManifest("spike", problem_to_mapping(spec), grid=_grid_info(spec),
                        outputs=[str(out)]), out, started)
    return PASSED


def _ex1_rows(spec: ProblemSpec) -> list[tuple[str, float, float, bool]]:
    u = ControlSignal.constant(spec.grid, 0.0)
    process = _process(spec, u)
    a, t, psi = spec.alpha, spec.grid.nodes, process.psi.values
    err1 = float(np.max(np.abs(psi[:, 0] + 1.0)))
    # the closed form holds for t < h; psi_2 drops to 0 at t = h
    first = t < spec.grid.h - 0.5 * spec.grid.dt
    s = t[first]
    exact = -(gamma_fn(a) / gamma_fn(2 * a)) * (1 - s) ** (1 - a) * (0.5 - s) ** (2 * a - 1)
    err2 = float(np.max(np.abs(psi[first, 1] - exact)))
    report = check_conditions(process)
    gap = float(np.max(report.gap))
    return [
        ("psi_1 == -1", err1, 1e-9, err1 <= 1e-9),
        ("psi_2 closed form on [0, 1/2)", err2, 1e-2, err2 <= 1e-2),
        ("maximum condition violated", gap, report.tolerances["tol_pmp"], not report.pmp_satisfied),
    ]


def _ex2_rows(spec: ProblemSpec) -> list[tuple[str, float, float, bool]]:
    a = spec.alpha
    zero = ControlSignal.constant(spec.grid, 0.0)
    report = check_conditions(_process(spec, zero))
    half = ControlSignal.constant(spec.grid, -0.5)
    J = evaluate_cost(spec, solve_fdde(spec, half), half)
    target = -1.0 / (2.0 ** (2 * a + 2) * gamma_fn(2 * a + 1))
    err = abs(J - target)
    return [
        ("u = 0 singular", float(np.max(report.dH_max)), report.tolerances["tol_sing"],
         bool(report.singular_everywhere)),
        ("second-order condition violated", float(np.nanmax(report.S_max)),
         report.tolerances["tol_2nd"], not report.second_order_satisfied),
        (f"J(-1/2) = {_fmt(target)}", err, 1e-3, err <= 1e-3),
    ]


def cmd_example(args) -> int:
    started = time.perf_counter()
    if args.config is not None:
        raise UsageError("example takes a builtin name, not --config")
    spec = builtin_example(args.name, 0.5 if args.alpha is None else args.alpha,
                           200 if args.N is None else args.N)
    rows = _ex1_rows(spec) if args.name == "ex1" else _ex2_rows(spec)
    out = Path(args.out or f"{args.name}_example.csv")
    lines = ["check,value,threshold,status"]
    print(f"{args.name}: alpha={_fmt(spec.alpha)} N={spec.grid.N}")
    for label, value, thr, ok in rows:
        status = "PASS" if ok else "FAIL"
        print(f"  {label:<36} {_fmt(value):>18} {_fmt(thr):>10}  {status}")
        lines.append(f"{label},{_fmt(value)},{_fmt(thr)},{status}")
    out.write_text("\n".join(lines) + "\n")
    _finish(RunManifest("example", problem_to_mapping(spec), grid=_grid_info(spec),
                        outputs=[str(out)]), out, started)
    return PASSED if all(r[3] for r in rows) else SCREENED_OUT


def cmd_convergence(args) -> int:
    started = time.perf_counter()
    alpha = 0.5 if args.alpha is None else args.alpha
    ladder = [int(p) for p in (args.ladder or "100,200,400,800").replace("/", ",").split(",")]
    rows = manufactured_convergence(alpha, ladder)
    orders = [math.nan] + observed_orders(rows)
    out = Path(args.out or "convergence.csv")
    lines = ["N,max_error,order"]
    print("N max_error order")
    for (N, err), p in zip(rows, orders):
        print(f"{N} {_fmt(err)} {_fmt(p)}")
        lines.append(f"{N},{_fmt(err)},{_fmt(p)}")
    out.write_text("\n".join(lines) + "\n")
    _finish(RunManifest("convergence", {"alpha": alpha, "ladder": ladder, "problem": "y = t^2"},
                        outputs=[str(out)]), out, started)
    return PASSED


# }}}


# {{{ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="problem config (YAML)")
    common.add_argument("--example", choices=("ex1", "ex2"), help="builtin problem instead of a config")
    common.add_argument("--alpha", type=float, help="override the fractional order")
    common.add_argument("--N", type=int, help="override the number of grid steps")
    common.add_argument("--out", metavar="PATH", help="output file")
    common.add_argument("--control", metavar="VALUE|PATH",
                        help="constant control (comma separated) or control CSV; default 0")
    common.add_argument("--tol-pmp", type=float, help="first-order gap tolerance")
    common.add_argument("--tol-sing", type=float, help="singularity tolerance")
    common.add_argument("--tol-2nd", type=float, help="second-order tolerance")

    parser = argparse.ArgumentParser(prog="fracdelay", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="forward solve and cost").set_defaults(fn=cmd_solve)
    sub.add_parser("adjoint", parents=[common], help="adjoint solve").set_defaults(fn=cmd_adjoint)
    sub.add_parser("check", parents=[common],
                   help="screen a control against the necessary conditions").set_defaults(fn=cmd_check)
    spike = sub.add_parser("spike", parents=[common], help="spike-variation experiment")
    spike.add_argument("--theta", type=float, help="spike start (a grid node)")
    spike.add_argument("--v", help="spike value (comma separated for r > 1)")
    spike.add_argument("--ladder", default="0.1/0.05/0.025", help="spike widths, e.g. 0.1/0.05/0.025")
    spike.add_argument("--companion", action="store_true", help="repeat the spike one delay later")
    spike.set_defaults(fn=cmd_spike)
    example = sub.add_parser("example", parents=[common], help="reproduce a builtin example")
    example.add_argument("name", help="ex1 or ex2")
    example.set_defaults(fn=cmd_example)
    conv = sub.add_parser("convergence", parents=[common],
                          help="forward convergence on a manufactured solution")
    conv.add_argument("--ladder", help="grid sizes, e.g. 100,200,400,800")
    conv.set_defaults(fn=cmd_convergence)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"fracdelay {args.command}: error: {exc}", file=sys.stderr)
        return FAILURE
    except (ConfigError, SolverError, ValueError, OSError, RuntimeError) as exc:
        print(f"fracdelay {args.command}: error: {exc}", file=sys.stderr)
        return FAILURE


if __name__ == "__main__":
    sys.exit(main())


# }}}
