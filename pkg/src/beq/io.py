"""CSV serialisation of solutions and reports.

Reals are written with 17 significant digits so that reading a file back
reproduces the in-memory doubles exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .equilibrium import EquilibriumSolution, Problem, Regime
from .errors import ConfigError


def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return "%.17g" % float(v)


def write_rows(path, header: list[str], rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
    return path


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        r = csv.reader(fh)
        try:
            header = next(r)
        except StopIteration:
            raise ConfigError(f"{path} is empty", key="--solution") from None
        return header, [row for row in r if row]


def solution_header(d: int) -> list[str]:
    return (["t", "A", "B", "regime"] + [f"u_{j + 1}" for j in range(d)]
            + [f"a_{j + 1}" for j in range(d)] + ["fp_residual"])


def write_solution_csv(path, sol: EquilibriumSolution) -> Path:
    rows = []
    for k, t in enumerate(sol.t_grid):
        rows.append([t, sol.A_vals[k], sol.B_vals[k], Regime(sol.regime[k]).value,
                     *sol.u_vals[k], *sol.a_vals[k], sol.fp_residual[k]])
    return write_rows(path, solution_header(sol.d), rows)


def read_solution_csv(path, problem: Problem | str) -> EquilibriumSolution:
    header, rows = read_rows(path)
    d = (len(header) - 5) // 2
    if d < 1 or header != solution_header(d):
        raise ConfigError(f"{path} does not have the solution columns {solution_header(max(d, 1))}",
                          key="--solution")
    try:
        t = np.array([float(r[0]) for r in rows])
        A = np.array([float(r[1]) for r in rows])
        B = np.array([float(r[2]) for r in rows])
        regime = [Regime(r[3]) for r in rows]
        u = np.array([[float(v) for v in r[4:4 + d]] for r in rows])
        a = np.array([[float(v) for v in r[4 + d:4 + 2 * d]] for r in rows])
        fp = np.array([float(r[4 + 2 * d]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed row in {path}: {exc}", key="--solution") from None
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise ConfigError(f"{path}: t column must be strictly increasing with at least two rows", key="--solution")
    return EquilibriumSolution(Problem(problem), t, A, B, a, u, regime, fp,
                               {"steps": len(t) - 1, "max_local_error": float("nan"), "warnings": [],
                                "source": str(path)})
