"""Command line interface: ``gridcheck validate|check|attach|solve|survey``.

Every command prints a JSON report on stdout.  Exit status: 0 pass,
1 condition fails (or solver did not converge), 2 input error, 3 condition
inapplicable or shunt budget exceeded.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from gridcheck import __version__
from gridcheck.errors import ConditionNotApplicable, SingularMatrixError, ValidationError
from gridcheck.feasibility import check_thm1, check_thm6, open_circuit_voltages
from gridcheck.grid import check_hierarchy_assumption
from gridcheck.interconnect import apply_virtual_shunts, check_plug_and_play
from gridcheck.io import (
    GridFile,
    dumps,
    read_grid,
    read_ledger,
    read_spec,
    write_grid,
    write_ledger,
)
from gridcheck.linalg import DEFAULT_EPSILON
from gridcheck.pf_solver import SolveStatus, solve_diagonal_exact, solve_power_flow

EXIT_PASS, EXIT_FAIL, EXIT_INPUT, EXIT_INAPPLICABLE = 0, 1, 2, 3


def default_epsilon() -> float:
    raw = os.environ.get("GRIDCHECK_EPSILON")
    if raw is None:
        return DEFAULT_EPSILON
    try:
        return float(raw)
    except ValueError:
        raise ValidationError(f"GRIDCHECK_EPSILON is not a number: {raw!r}") from None


class _Outputs:
    """Collects figures and tables for ``--report-dir``."""

    def __init__(self, directory, command):
        self.dir = Path(directory) if directory else None
        self.command = command
        if self.dir:
            self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, suffix):
        return self.dir / f"{self.command}{suffix}"

    def margins(self, reports, title=""):
        if not self.dir or not reports:
            return
        from gridcheck import plotting

        rows = [row for rep in reports for row in plotting.margin_rows(rep)]
        plotting.write_margin_table(self.path("_margins.csv"), rows)
        plotting.plot_margins(self.path("_margins.png"), reports, title=title)

    def report(self, text):
        if self.dir:
            self.path(".json").write_text(text)


def _load_grid(args, virtual: bool):
    gf = read_grid(args.grid)
    grid = gf.to_partitioned()
    ledger = None
    if virtual:
        ledger = read_ledger(args.ledger) if args.ledger else gf.ledger()
        grid = apply_virtual_shunts(grid, ledger)
    return gf, grid, ledger


def cmd_validate(args, out):
    gf = read_grid(args.grid)
    grid = gf.to_partitioned()
    h = check_hierarchy_assumption(grid)
    result = {
        "structure": "ok",
        "loads": len(grid.load_ids),
        "sources": len(grid.source_ids),
        "microgrids": grid.k,
        "hierarchy": {
            "passed": h.passed,
            "strict_passed": h.strict_passed,
            "nodes": [{"id": i, "verdict": h.verdicts[i].value,
                       "strict_verdict": h.strict_verdicts[i].value}
                      for i in grid.load_ids],
            "notes": h.notes,
        },
    }
    return result, EXIT_PASS if h.passed else EXIT_INAPPLICABLE


def cmd_check(args, out):
    _, grid, ledger = _load_grid(args, args.virtual)
    if args.condition == "thm1":
        rep = check_thm1(grid, epsilon=args.epsilon)
    else:
        rep = check_thm6(grid, epsilon=args.epsilon)
    data = rep.to_dict()
    result = {"virtual": bool(args.virtual), "report": data}
    if ledger is not None:
        result["ledger"] = ledger.to_dict()
    out.margins([data], title=str(args.grid))
    return result, EXIT_PASS if rep.passed else EXIT_FAIL


def cmd_attach(args, out):
    gf1 = read_grid(args.grid)
    gf2 = read_grid(args.microgrid)
    grid1, grid2 = gf1.to_partitioned(), gf2.to_partitioned()
    ledger1 = read_ledger(args.ledger) if args.ledger else gf1.ledger()
    ledger2 = read_ledger(args.microgrid_ledger) if args.microgrid_ledger else gf2.ledger()
    spec = read_spec(args.spec)
    res = check_plug_and_play(grid1, ledger1, grid2, ledger2, spec, epsilon=args.epsilon)
    result = res.to_dict()
    if res.passed and args.out:
        merged_path = Path(args.out)
        ledger_path = Path(args.ledger_out) if args.ledger_out else \
            merged_path.with_name(merged_path.stem + ".ledger.json")
        write_grid(merged_path, GridFile.from_partitioned(res.merged, res.ledger))
        write_ledger(ledger_path, res.ledger)
        result["written"] = {"grid": str(merged_path), "ledger": str(ledger_path)}
    reports = [r for r in (result["assumption7"], result["thm8"]) if r]
    out.margins(reports, title="plug-and-play admission")
    if out.dir and res.assumption9 is not None:
        from gridcheck import plotting

        plotting.write_margin_table(
            out.path("_budget.csv"),
            [{"node": k, "slack": float(v)} for k, v in res.assumption9.slack.items()],
        )
    code = {"pass": EXIT_PASS, "fail": EXIT_FAIL}.get(res.status, EXIT_INAPPLICABLE)
    return result, code


def cmd_solve(args, out):
    _, grid, _ = _load_grid(args, args.virtual)
    outcome = solve_power_flow(grid, tol=args.tol, max_iter=args.max_iter)
    result = {"solution": outcome.to_dict()}
    notes = []
    try:
        v_open = open_circuit_voltages(grid)
        result["v_open"] = [float(v) for v in v_open]
    except SingularMatrixError as exc:
        v_open = None
        notes.append(str(exc))
    y = np.asarray(grid.Y_LL, dtype=float)
    if grid.n_loads and not np.any(y - np.diag(np.diag(y))):
        exact = solve_diagonal_exact(grid)
        result["diagonal_exact"] = exact.to_dict()
        if exact.status is SolveStatus.INFEASIBLE:
            notes.append("loads are decoupled and some row has a negative "
                         "discriminant: no positive solution exists")
    elif not outcome.converged:
        notes.append("no convergence is inconclusive: the grid may still be feasible")
    result["notes"] = notes
    if out.dir:
        from gridcheck import plotting

        plotting.plot_voltages(out.path("_voltages.png"), grid.load_ids,
                               outcome.v_load, v_open)
        plotting.write_margin_table(out.path("_voltages.csv"), [
            {"node": nid,
             "v_open": float(v_open[i]) if v_open is not None else float("nan"),
             "v_load": float(outcome.v_load[i]) if outcome.v_load is not None else float("nan")}
            for i, nid in enumerate(grid.load_ids)
        ])
    return result, EXIT_PASS if outcome.converged else EXIT_FAIL


def cmd_survey(args, out):
    from gridcheck.corpus import random_corpus

    grids = random_corpus(args.count, seed=args.seed)
    m1, m6 = [], []
    counts = {"thm1": 0, "thm6": 0, "thm1_only": 0, "thm6_only": 0}
    for g in grids:
        r1 = check_thm1(g, epsilon=args.epsilon)
        r6 = check_thm6(g, epsilon=args.epsilon)
        m1.append(float(r1.margin))
        m6.append(float(r6.margin))
        counts["thm1"] += r1.passed
        counts["thm6"] += r6.passed
        counts["thm1_only"] += r1.passed and not r6.passed
        counts["thm6_only"] += r6.passed and not r1.passed
    n = len(grids)
    result = {
        "grids": n,
        "seed": args.seed,
        "pass_counts": counts,
        "conservativeness": counts["thm1_only"] / n if n else 0.0,
    }
    if out.dir:
        from gridcheck import plotting

        plotting.plot_survey(out.path("_margins.png"), m1, m6)
        plotting.write_margin_table(out.path("_margins.csv"), [
            {"grid": i, "thm1_margin": a, "thm6_margin": b}
            for i, (a, b) in enumerate(zip(m1, m6))
        ])
    return result, EXIT_PASS if counts["thm6_only"] == 0 else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="gridcheck",
        description="Feasibility certificates for resistive DC grids of microgrids.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--epsilon", type=float, default=None,
                        help="absolute margin for strict inequalities "
                             "(default: $GRIDCHECK_EPSILON or 1e-9)")
    common.add_argument("--report-dir", default=None,
                        help="also write the report, CSV tables and figures here")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="check structure and hierarchy")
    s.add_argument("grid")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("check", parents=[common], help="evaluate a feasibility certificate")
    s.add_argument("grid")
    s.add_argument("--condition", choices=("thm1", "thm6"), default="thm6")
    s.add_argument("--virtual", action="store_true",
                   help="apply remaining virtual shunts before checking")
    s.add_argument("--ledger", help="shunt ledger (default: capacities in the grid file)")
    s.set_defaults(func=cmd_check)

    s = sub.add_parser("attach", parents=[common], help="plug-and-play admission of a microgrid")
    s.add_argument("grid")
    s.add_argument("microgrid")
    s.add_argument("spec", help="interconnection lines")
    s.add_argument("--ledger", help="grid ledger (default: capacities in the grid file)")
    s.add_argument("--microgrid-ledger", help="microgrid ledger (default: its file)")
    s.add_argument("--out", help="write the merged grid here on success")
    s.add_argument("--ledger-out", help="write the updated ledger here (default: <out>.ledger.json)")
    s.set_defaults(func=cmd_attach)

    s = sub.add_parser("solve", parents=[common], help="solve the power flow numerically")
    s.add_argument("grid")
    s.add_argument("--tol", type=float, default=1e-12)
    s.add_argument("--max-iter", type=int, default=100_000)
    s.add_argument("--virtual", action="store_true")
    s.add_argument("--ledger")
    s.set_defaults(func=cmd_solve)

    s = sub.add_parser("survey", parents=[common],
                       help="compare both certificates on a random corpus")
    s.add_argument("--count", type=int, default=500)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_survey)
    return p


def _echo(args) -> dict:
    skip = {"func", "command"}
    return {"name": args.command,
            "args": {k: v for k, v in sorted(vars(args).items()) if k not in skip}}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.epsilon is None:
            args.epsilon = default_epsilon()
        out = _Outputs(args.report_dir, args.command)
        result, code = args.func(args, out)
    except ValidationError as exc:
        result, code = {"error": "input", "message": str(exc)}, EXIT_INPUT
        out = _Outputs(None, args.command)
    except (ConditionNotApplicable, SingularMatrixError) as exc:
        result = {"error": "inapplicable", "message": str(exc)}
        if isinstance(exc, ConditionNotApplicable):
            result["nodes"] = list(exc.nodes)
        code = EXIT_INAPPLICABLE
    report = {
        "tool": "gridcheck",
        "version": __version__,
        "command": _echo(args),
        "result": result,
        "exit_status": code,
    }
    text = dumps(report)
    sys.stdout.write(text)
    out.report(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
