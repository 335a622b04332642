"""Command-line interface.

    beq solve constrained|borrowing --config run.ini [--out DIR] [--seed N]
    beq wellposedness --config run.ini
    beq verify hjb|perturb --config run.ini [--solution solution.csv]

Exit status: 0 pass, 2 verification failed, 3 well-posedness not proven,
1 any error (one JSON line on standard error).
"""

from __future__ import annotations

import argparse
import enum
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig, parse_config
from .constraint import FullSpace, project_native
from .equilibrium import (
    EquilibriumSolution,
    Problem,
    check_wellposedness,
    scaled_candidate,
    solve_borrowing,
    solve_constrained,
)
from .errors import BeqError
from .io import write_rows, write_solution_csv, read_solution_csv
from .preference import GTable, build_G_table, gauss_hermite
from .verify.hjb import hjb_report
from .verify.montecarlo import SimConfig, perturbation_test

EXIT_OK, EXIT_ERROR, EXIT_FAIL, EXIT_NOT_PROVEN = 0, 1, 2, 3


class Command(str, enum.Enum):
    SOLVE_CONSTRAINED = "solve constrained"
    SOLVE_BORROWING = "solve borrowing"
    WELLPOSEDNESS = "wellposedness"
    VERIFY_HJB = "verify hjb"
    VERIFY_PERTURB = "verify perturb"


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def build_table(cfg: RunConfig) -> GTable:
    s = cfg.solver
    return build_G_table(cfg.preference, s.y_max, s.table_nodes, gauss_hermite(s.quad_order))


def solve(cfg: RunConfig, table: GTable, problem: Problem) -> EquilibriumSolution:
    if problem == Problem.BORROWING:
        return solve_borrowing(table, cfg.market, cfg.solver.n_steps)
    return solve_constrained(table, cfg.market, cfg.constraint, cfg.solver.n_steps)


def _candidate(cfg: RunConfig, table: GTable, solution_path) -> EquilibriumSolution:
    problem = cfg.solver.problem
    if solution_path is not None:
        sol = read_solution_csv(solution_path, problem)
    else:
        sol = solve(cfg, table, problem)
    if cfg.verify.candidate_scale != 1.0:
        sol = scaled_candidate(sol, cfg.market, cfg.verify.candidate_scale)
    return sol


def default_alternatives(cfg: RunConfig, sol: EquilibriumSolution) -> list[np.ndarray]:
    """The candidate's own weight at ``t0`` plus three feasible deviations from it."""
    u = sol.u_at(cfg.verify.t0)
    raw = [u, 0.5 * u, 1.5 * u, np.zeros_like(u)]
    if sol.problem == Problem.CONSTRAINED:
        return [project_native(cfg.constraint, a) for a in raw]
    return raw


PLOT_SCRIPT = '''"""Plot a solution CSV written by `beq solve`: A(t), the weights u(t) and regime bands.

Usage: python {name} [solution.csv]   (requires matplotlib)
"""

import csv
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv!r}
with open(path, encoding="utf-8", newline="") as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["t"]) for r in rows]
ucols = [c for c in rows[0] if c.startswith("u_")]
fig, (ax1, ax2) = plt.subplots(2, 1, sharex=True, figsize=(7, 6))
ax1.plot(t, [float(r["A"]) for r in rows])
ax1.set_ylabel("A(t)")
for c in ucols:
    ax2.plot(t, [float(r[c]) for r in rows], label=c)
colors = {{"borrow": "tab:red", "boundary": "tab:orange", "save": "tab:green",
          "constrained": "tab:purple", "unconstrained": "white"}}
start = 0
for k in range(1, len(rows) + 1):
    if k == len(rows) or rows[k]["regime"] != rows[start]["regime"]:
        reg = rows[start]["regime"]
        ax2.axvspan(t[start], t[k - 1], color=colors.get(reg, "grey"), alpha=0.15, lw=0)
        start = k
ax2.set_xlabel("t")
ax2.set_ylabel("weights")
ax2.legend()
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=120)
'''


def _emit_plot(out: Path, csv_name: str):
    name = f"plot_{csv_name.rsplit('.', 1)[0]}.py"
    (out / name).write_text(PLOT_SCRIPT.format(name=name, csv=csv_name), encoding="utf-8")


def _write_solution(out: Path, name: str, sol: EquilibriumSolution, cfg: RunConfig):
    write_solution_csv(out / name, sol)
    if cfg.output.emit_plots:
        _emit_plot(out, name)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def run_command(cmd: Command | str, cfg: RunConfig, out: str | Path | None = None, seed: int | None = None,
                solution_path: str | Path | None = None, stream=None) -> int:
    """Execute one command; returns the process exit status."""
    cmd = Command(cmd)
    stream = stream or sys.stdout
    out = Path(out if out is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    table = build_table(cfg)

    if cmd in (Command.SOLVE_CONSTRAINED, Command.SOLVE_BORROWING):
        problem = Problem.CONSTRAINED if cmd == Command.SOLVE_CONSTRAINED else Problem.BORROWING
        if problem == Problem.BORROWING and not isinstance(cfg.constraint, FullSpace):
            raise BeqError("the borrowing problem takes no [constraint] section")
        sol = solve(cfg, table, problem)
        name = f"solution_{problem.value}.csv"
        _write_solution(out, name, sol, cfg)
        for w in sol.diagnostics.get("warnings", []):
            print(f"warning: {w}", file=sys.stderr)
        print(f"A(0) = {sol.A_vals[0]:.17g}  B(0) = {sol.B_vals[0]:.17g}  "
              f"max fixed-point residual = {np.max(sol.fp_residual):.3g}  -> {out / name}", file=stream)
        return EXIT_OK

    if cmd == Command.WELLPOSEDNESS:
        rep = check_wellposedness(cfg.solver.problem, table, cfg.market, cfg.constraint)
        rows = [[k, v] for k, v in rep.condition_values.items()]
        rows.append(["verdict", rep.verdict])
        write_rows(out / "wellposedness.csv", ["quantity", "value"], rows)
        print(f"{cfg.solver.problem.value}: {rep.verdict}", file=stream)
        for n in rep.notes:
            print(f"  {n}", file=stream)
        return EXIT_OK if rep.proven else EXIT_NOT_PROVEN

    sol = _candidate(cfg, table, solution_path)
    _write_solution(out, "candidate.csv", sol, cfg)
    v = cfg.verify
    if cmd == Command.VERIFY_HJB:
        rep = hjb_report(cfg.preference, table, sol, cfg.market, cfg.constraint, v.t_grid, v.x_grid,
                         sol.problem, tol=v.tol)
        d = sol.d
        header = ["t", "x", "residual_at_candidate", "max_residual"] + [f"argmax_u_{j + 1}" for j in range(d)] + ["verdict"]
        rows = [[t, x, rc, rm, *u, vd] for (t, x), rc, rm, u, vd in
                zip(rep.points, rep.residual_at_candidate, rep.max_residual, rep.argmax_u, rep.verdicts)]
        write_rows(out / "hjb_report.csv", header, rows)
        print(f"HJB: {rep.verdict}  max |residual at candidate| = {np.max(np.abs(rep.residual_at_candidate)):.3g}  "
              f"max residual = {np.max(rep.max_residual):.3g}", file=stream)
        return EXIT_OK if rep.verdict == "Pass" else EXIT_FAIL

    sim = SimConfig(n_paths=v.n_paths, seed=v.seed if seed is None else seed, scheme=v.scheme,
                    n_time_steps=v.n_time_steps)
    alts = [np.asarray(a, dtype=float) for a in v.alternatives] if v.alternatives else default_alternatives(cfg, sol)
    rep = perturbation_test(cfg.preference, table, sol, cfg.market, cfg.constraint, v.t0, v.x0, alts,
                            v.eps_ladder, sim, sol.problem)
    rows = []
    for i in range(len(alts)):
        for k, e in enumerate(rep.epsilons):
            rows.append([i, e, rep.slopes[i, k], rep.cis[i, k], rep.predicted[i], rep.verdicts[i][k]])
    write_rows(out / "perturbation_report.csv", ["a_index", "eps", "slope", "ci", "predicted_slope", "verdict"], rows)
    print(f"perturbation: {rep.verdict}  J analytic = {rep.J_analytic:.10g}  "
          f"J Monte Carlo = {rep.J_mc:.10g} +/- {rep.J_mc_ci:.3g}", file=stream)
    return EXIT_FAIL if rep.verdict == "Fail" else EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        _report_error("usage", message)
        sys.exit(EXIT_ERROR)


def _report_error(code: str, message: str, key=None, line=None):
    rec = {"error": code, "message": message}
    if key is not None:
        rec["key"] = key
    if line is not None:
        rec["line"] = line
    print(json.dumps(rec, sort_keys=True), file=sys.stderr)


def _common(p):
    p.add_argument("--config", required=True, help="INI run configuration")
    p.add_argument("--out", default=None, help="output directory (default: [output] directory)")
    p.add_argument("--seed", type=int, default=None, help="Monte Carlo seed (overrides [verify] seed)")


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="beq", description="Equilibrium portfolio strategies for CRRA betweenness preferences.")
    p.add_argument("--version", action="version", version=f"beq {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("solve", help="solve for the equilibrium strategy")
    s.add_argument("problem", choices=["constrained", "borrowing"])
    _common(s)
    w = sub.add_parser("wellposedness", help="check sufficient conditions for a global solution")
    _common(w)
    v = sub.add_parser("verify", help="check a candidate strategy")
    v.add_argument("check", choices=["hjb", "perturb"])
    _common(v)
    v.add_argument("--solution", default=None, help="candidate solution CSV (default: solve from config)")
    return p


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.seed is not None and not (0 <= args.seed < 2**64):
        _report_error("usage", "--seed must be an unsigned 64-bit integer")
        return EXIT_ERROR
    if args.command == "solve":
        cmd = Command(f"solve {args.problem}")
    elif args.command == "verify":
        cmd = Command(f"verify {args.check}")
    else:
        cmd = Command.WELLPOSEDNESS
    try:
        problem = {Command.SOLVE_BORROWING: Problem.BORROWING,
                   Command.SOLVE_CONSTRAINED: Problem.CONSTRAINED}.get(cmd)
        cfg = parse_config(args.config, problem)
        return run_command(cmd, cfg, args.out, args.seed, getattr(args, "solution", None))
    except BeqError as exc:
        _report_error(exc.code, str(exc), getattr(exc, "key", None), getattr(exc, "line", None))
        return EXIT_ERROR
    except (ValueError, OSError) as exc:
        _report_error("error", str(exc))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
