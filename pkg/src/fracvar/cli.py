"""Command-line front end: ``fracvar {deriv,solve,sweep,check} PROBLEM.toml``.

Exit codes:

====  ==============================================================
0     success (``sweep``: at least one row converged)
2     usage, problem-file, parse or validation error
3     expression evaluation error (``EvalError``)
4     solver did not converge (the result bundle is still written)
5     abnormal isoperimetric case, singular or unsolvable constraint
====  ==============================================================
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .dsl import evaluate, free_vars, parse
from .errors import (
    AbnormalCase,
    EvalError,
    FracvarError,
    NonConvergence,
    RootFindFailure,
    SingularConstraint,
)
from .fracops import OperatorKind, assemble_matrix
from .grid import SampledFunction
from .problem_file import ProblemFileError, ProblemSpec, load_problem
from .solvers import SolveReport, optimize_rho, solve
from .variational import Herglotz, Holonomic, Isoperimetric, Problem, diagnostics, herglotz_lambda, trajectory

__all__ = ["main", "EXIT_OK", "EXIT_INVALID", "EXIT_EVAL", "EXIT_NONCONVERGED", "EXIT_ABNORMAL"]

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_EVAL = 3
EXIT_NONCONVERGED = 4
EXIT_ABNORMAL = 5


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


# ------------------------------------------------------------------ output


def _fmt(v) -> str:
    v = float(v)
    if not math.isfinite(v):
        raise EvalError("NonFinite", None, "refusing to write a non-finite value")
    return "%.17g" % v


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    rows = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, SampledFunction):
        return _jsonable(obj.values if obj.components > 1 else obj.scalar)
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            raise EvalError("NonFinite", None, "refusing to serialize a non-finite value")
        return v
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _write_json(path: Path, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def _problem_summary(p: Problem) -> dict:
    g = p.grid
    return {
        "kind": type(p.kind).__name__,
        "alpha": p.params.alpha,
        "rho": p.params.rho,
        "a": g.a,
        "b": g.b,
        "n": g.n,
        "m": p.m,
        "lagrangian": str(p.lagrangian.expr),
    }


def _solution_columns(
    p: Problem, x: SampledFunction, diag, multiplier, rho_column: bool = False
) -> tuple[list[str], list[np.ndarray]]:
    tr = trajectory(x, p)
    header = ["t", "s"]
    cols = [p.grid.nodes, p.grid.s_nodes]
    m = p.m
    header += [f"x{i + 1}" for i in range(m)]
    cols += list(tr.x)
    header += [f"ckd_x{i + 1}" for i in range(m)]
    cols += list(tr.d)
    header += [f"el_residual_{i + 1}" for i in range(m)]
    cols += list(diag.el_residual.values)
    if isinstance(p.kind, Isoperimetric) and multiplier is not None:
        header.append("lambda")
        cols.append(np.full(p.grid.size, float(multiplier)))
    elif isinstance(p.kind, Holonomic) and multiplier is not None:
        header.append("lambda")
        cols.append(multiplier.scalar if isinstance(multiplier, SampledFunction) else np.asarray(multiplier))
    elif isinstance(p.kind, Herglotz):
        header += ["z", "lambda"]
        cols += [tr.z, herglotz_lambda(p, tr)]
    if rho_column:
        # lets ``check`` rebuild the grid a rho search ended on
        header.append("rho")
        cols.append(np.full(p.grid.size, p.params.rho))
    return header, cols


def _report_payload(command: str, p: Problem, rep: SolveReport | None, diag, multiplier) -> dict:
    payload = {"command": command, "problem": _problem_summary(p), "diagnostics": diag.as_dict()}
    if rep is not None:
        info = {k: v for k, v in rep.info.items() if k != "lambda"}
        payload.update(
            converged=rep.converged,
            iterations=rep.iterations,
            grad_norm=rep.grad_norm,
            J=rep.J,
            rho_opt=rep.rho_opt,
            monotone_descent=all(b <= a for a, b in zip(rep.history, rep.history[1:])),
            info=info,
        )
    payload["multiplier"] = _jsonable(multiplier)
    return payload


def _write_bundle(out: Path, command: str, p: Problem, rep: SolveReport) -> None:
    out.mkdir(parents=True, exist_ok=True)
    header, cols = _solution_columns(p, rep.x, rep.diagnostics, rep.multiplier, rho_column=rep.rho_opt is not None)
    _write_json(out / "report.json", _report_payload(command, p, rep, rep.diagnostics, rep.multiplier))
    _write_csv(out / "solution.csv", header, cols)


# ---------------------------------------------------------------- commands


def _load(path: str) -> ProblemSpec:
    return load_problem(path)


def cmd_deriv(args) -> int:
    spec = _load(args.problem)
    p = spec.problem
    try:
        expr = parse(args.function)
    except FracvarError as exc:
        raise CliError(f"--function: {exc}") from None
    unknown = free_vars(expr) - {"t"} - set(p.lagrangian.params)
    if unknown:
        raise CliError("--function may only use t and [params] names, found " + ", ".join(sorted(unknown)))
    env = dict(p.lagrangian.params, t=p.grid.nodes)
    x = np.broadcast_to(np.asarray(evaluate(expr, env), dtype=float), p.grid.nodes.shape).copy()
    D = assemble_matrix(OperatorKind.LEFT_DERIV, p.params, p.grid)
    d = D(x)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "solution.csv", ["t", "s", "x", "ckd_x"], [p.grid.nodes, p.grid.s_nodes, x, d])
    if args.at is not None:
        t = float(args.at)
        if not p.grid.a <= t <= p.grid.b:
            raise CliError(f"--at {t} lies outside [{p.grid.a}, {p.grid.b}]")
        print(_fmt(np.interp(t, p.grid.nodes, d)))
    return EXIT_OK


def _solve_spec(spec: ProblemSpec) -> SolveReport:
    if spec.rho_search is not None:
        r0, r1, k = spec.rho_search
        return optimize_rho(spec.problem, (r0, r1), spec.solver, prescan=k)
    return solve(spec.problem, spec.solver)


def cmd_solve(args) -> int:
    spec = _load(args.problem)
    try:
        rep, code = _solve_spec(spec), EXIT_OK
    except NonConvergence as exc:
        if exc.report is None:
            raise
        rep, code = exc.report, EXIT_NONCONVERGED
        print(f"fracvar: {exc}", file=sys.stderr)
    p = spec.problem if rep.rho_opt is None else spec.problem.with_params(rho=rep.rho_opt)
    _write_bundle(Path(args.out), "solve", p, rep)
    return code


def _sweep_row(spec: ProblemSpec, param: str, value: float):
    p = spec.problem
    try:
        q = p.with_params(alpha=value) if param == "alpha" else p.with_params(rho=value)
        rep = solve(q, spec.solver)
        return value, rep.J, rep.diagnostics.el_residual_norm, True, ""
    except NonConvergence as exc:
        r = exc.report
        if r is None:
            return value, None, None, False, str(exc)
        return value, r.J, r.diagnostics.el_residual_norm, False, str(exc)
    except FracvarError as exc:
        return value, None, None, False, f"{type(exc).__name__}: {exc}"


def _threads() -> int:
    raw = os.environ.get("FRACVAR_THREADS", "1")
    try:
        k = int(raw)
    except ValueError:
        raise CliError(f"FRACVAR_THREADS must be a positive integer, got {raw!r}") from None
    if k < 1:
        raise CliError(f"FRACVAR_THREADS must be a positive integer, got {raw!r}")
    return k


def cmd_sweep(args) -> int:
    if args.steps < 2:
        raise CliError("--steps must be at least 2")
    lo, hi = args.lo, args.hi
    if args.param == "alpha" and not (0 < lo < 1 and 0 < hi < 1):
        raise CliError("alpha sweep range must lie inside (0, 1)")
    if args.param == "rho" and not (lo > 0 and hi > 0):
        raise CliError("rho sweep range must be positive")
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise CliError("sweep range must be finite")
    spec = _load(args.problem)
    values = [float(v) for v in np.linspace(lo, hi, args.steps)]
    workers = _threads()
    if workers == 1:
        rows = [_sweep_row(spec, args.param, v) for v in values]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda v: _sweep_row(spec, args.param, v), values))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "sweep.csv").open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.param, "J", "el_residual_norm", "converged", "message"])
        for value, J, res, ok, msg in rows:
            w.writerow(
                [
                    _fmt(value),
                    "" if J is None or not math.isfinite(J) else _fmt(J),
                    "" if res is None or not math.isfinite(res) else _fmt(res),
                    "true" if ok else "false",
                    msg,
                ]
            )
    return EXIT_OK if any(r[3] for r in rows) else EXIT_NONCONVERGED


def _read_csv(path: str) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, strict=True)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader]
    except (OSError, StopIteration, ValueError, csv.Error) as exc:
        raise CliError(f"cannot read solution {path}: {exc}") from None
    if any(len(r) != len(header) for r in rows) or len(set(header)) != len(header):
        raise CliError("solution rows and header differ in length or repeat a column")
    data = np.array(rows, dtype=float).reshape(len(rows), len(header))
    return {name: data[:, i] for i, name in enumerate(header)}


def _solution_on(col: dict[str, np.ndarray], p: Problem):
    if len(col["t"]) != p.grid.size:
        raise CliError(f"solution has {len(col['t'])} rows, the grid has {p.grid.size} nodes")
    if not np.allclose(col["t"], p.grid.nodes, rtol=1e-13, atol=0.0):
        raise CliError("solution t column does not match the grid of the problem file")
    try:
        X = np.vstack([col[f"x{i + 1}"] for i in range(p.m)])
    except KeyError as exc:
        raise CliError(f"solution lacks column {exc.args[0]}") from None
    multiplier = None
    if "lambda" in col:
        if isinstance(p.kind, Isoperimetric):
            multiplier = float(col["lambda"][0])
        elif isinstance(p.kind, Holonomic):
            multiplier = SampledFunction(p.grid, col["lambda"])
    return SampledFunction(p.grid, X), multiplier


def cmd_check(args) -> int:
    spec = _load(args.problem)
    col = _read_csv(args.solution)
    if "t" not in col:
        raise CliError("solution lacks column t")
    p = spec.problem
    if "rho" in col:
        rho = col["rho"]
        if len(rho) == 0 or np.any(rho != rho[0]):
            raise CliError("solution rho column must be constant")
        p = p.with_params(rho=float(rho[0]))
    x, multiplier = _solution_on(col, p)
    diag = diagnostics(x, p, multiplier, seed=spec.solver.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "report.json", _report_payload("check", p, None, diag, multiplier))
    return EXIT_OK


# -------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fracvar", description="Caputo-Katugampola variational problems")
    sub = ap.add_subparsers(dest="command", required=True)

    d = sub.add_parser("deriv", help="sample a function of t and apply the left derivative")
    d.add_argument("problem")
    d.add_argument("--function", required=True, help="expression in t, e.g. '(t^2 - 1)'")
    d.add_argument("--at", type=float, help="also print the derivative at this t (linear interpolation)")
    d.add_argument("--out", default=".", help="output directory (default: current)")
    d.set_defaults(func=cmd_deriv)

    s = sub.add_parser("solve", help="solve the problem and write report.json and solution.csv")
    s.add_argument("problem")
    s.add_argument("--out", default=".")
    s.set_defaults(func=cmd_solve)

    w = sub.add_parser("sweep", help="solve for a range of rho or alpha and write sweep.csv")
    w.add_argument("problem")
    w.add_argument("--param", choices=("rho", "alpha"), required=True)
    w.add_argument("--from", dest="lo", type=float, required=True)
    w.add_argument("--to", dest="hi", type=float, required=True)
    w.add_argument("--steps", type=int, required=True)
    w.add_argument("--out", default=".")
    w.set_defaults(func=cmd_sweep)

    c = sub.add_parser("check", help="evaluate every certificate for a stored solution")
    c.add_argument("problem")
    c.add_argument("--solution", required=True)
    c.add_argument("--out", default=".")
    c.set_defaults(func=cmd_check)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"fracvar: {exc}", file=sys.stderr)
        return exc.code
    except ProblemFileError as exc:
        print(f"fracvar: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except EvalError as exc:
        print(f"fracvar: evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    except NonConvergence as exc:
        print(f"fracvar: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (AbnormalCase, SingularConstraint, RootFindFailure) as exc:
        print(f"fracvar: {exc}", file=sys.stderr)
        return EXIT_ABNORMAL
    except (FracvarError, ValueError) as exc:
        print(f"fracvar: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
