"""Run configuration: INI sections with Python-literal values.

Example::

    [preference]
    family = weighted
    rho = 0.25
    gamma = -0.5

    [market]
    T = 1.0
    mu = [0.08]
    sigma = [[0.2]]

    [constraint]
    family = halfspace
    normal = [1.0]
    offset = 1.0

Time-varying coefficients use ``<name>.nodes = [(t, value), ...]``.  Unknown
sections and keys are rejected; every error names the offending key.
"""

from __future__ import annotations

import ast
import configparser
import importlib
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constraint import Ball, Box, ConvexSet, FullSpace, Halfspace, Intersection, NonnegOrthant
from .equilibrium import DEFAULT_N_STEPS, Problem
from .errors import ConfigError
from .market import Coefficient, MarketModel
from .preference import DEFAULT_QUAD_ORDER, BetweennessPreference, MixedCRRA, WeightedUtility

SECTIONS = ("preference", "market", "constraint", "solver", "verify", "output")
KEYS = {
    "preference": {"family", "rho", "gamma", "atoms", "params"},
    "market": {"T", "d", "mu", "sigma", "r", "R", "mu.nodes", "sigma.nodes", "r.nodes", "R.nodes"},
    "constraint": {"family", "lo", "hi", "center", "radius", "normal", "offset", "members", "witness"},
    "solver": {"problem", "n_steps", "y_max", "quad_order", "table_nodes"},
    "verify": {"t_grid", "x_grid", "n_paths", "seed", "eps_ladder", "scheme", "n_time_steps", "t0", "x0",
               "alternatives", "tol", "candidate_scale"},
    "output": {"directory", "emit_plots"},
}


@dataclass
class SolverConfig:
    problem: Problem = Problem.CONSTRAINED
    n_steps: int = DEFAULT_N_STEPS
    y_max: float = 2.0
    quad_order: int = DEFAULT_QUAD_ORDER
    table_nodes: int = 257


@dataclass
class VerifyConfig:
    t_grid: list = field(default_factory=lambda: [])
    x_grid: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    n_paths: int = 100_000
    seed: int = 0
    eps_ladder: list = field(default_factory=lambda: [0.1, 0.05, 0.02])
    scheme: str = "exact"
    n_time_steps: int = 256
    t0: float = 0.0
    x0: float = 1.0
    alternatives: list | None = None
    tol: float = 2e-6
    candidate_scale: float = 1.0


@dataclass
class OutputConfig:
    directory: str = "out"
    emit_plots: bool = False


@dataclass
class RunConfig:
    path: str
    preference: BetweennessPreference
    market: MarketModel
    constraint: ConvexSet
    solver: SolverConfig
    verify: VerifyConfig
    output: OutputConfig
    raw: dict


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


class _Ctx:
    def __init__(self, text: str):
        self.lines = text.splitlines()

    def line_of(self, section: str, key: str) -> int | None:
        sec = None
        pat = re.compile(r"^\s*" + re.escape(key) + r"\s*[=:]")
        for i, ln in enumerate(self.lines, start=1):
            m = re.match(r"^\s*\[([^\]]+)\]", ln)
            if m:
                sec = m.group(1).strip()
                continue
            if sec == section and pat.match(ln):
                return i
        return None

    def line_of_section(self, section: str) -> int | None:
        for i, ln in enumerate(self.lines, start=1):
            if re.match(r"^\s*\[" + re.escape(section) + r"\]", ln):
                return i
        return None

    def error(self, section: str, key: str, msg: str) -> ConfigError:
        return ConfigError(msg, key=f"{section}.{key}", line=self.line_of(section, key))


def _literal(ctx: _Ctx, section: str, key: str, text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        # bare words are accepted as strings
        if re.fullmatch(r"[A-Za-z_][\w\-.:]*", text.strip()):
            return text.strip()
        raise ctx.error(section, key, f"cannot parse value {text!r}") from None


def _num(ctx, sec, key, v, *, integer=False, lo=None, hi=None, lo_open=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ctx.error(sec, key, f"must be a number, got {v!r}")
    if integer and int(v) != v:
        raise ctx.error(sec, key, f"must be an integer, got {v!r}")
    if lo is not None and (v <= lo if lo_open else v < lo):
        raise ctx.error(sec, key, f"must be {'>' if lo_open else '>='} {lo}, got {v!r}")
    if hi is not None and v > hi:
        raise ctx.error(sec, key, f"must be <= {hi}, got {v!r}")
    return int(v) if integer else float(v)


def _vec(ctx, sec, key, v, d=None):
    try:
        a = np.atleast_1d(np.asarray(v, dtype=float))
    except (TypeError, ValueError):
        raise ctx.error(sec, key, f"must be a list of numbers, got {v!r}") from None
    if a.ndim != 1 or (d is not None and a.shape[0] != d):
        raise ctx.error(sec, key, f"must be a vector of length {d}, got {v!r}")
    if not np.all(np.isfinite(a)):
        raise ctx.error(sec, key, "must be finite")
    return a


# ---------------------------------------------------------------------------
# sections
# ---------------------------------------------------------------------------


def _preference(ctx, vals) -> BetweennessPreference:
    sec = "preference"
    if "family" not in vals:
        raise ctx.error(sec, "family", "is required")
    fam = vals["family"]
    if fam == "weighted":
        for k in ("rho", "gamma"):
            if k not in vals:
                raise ctx.error(sec, k, "is required for the weighted family")
        rho = _num(ctx, sec, "rho", vals["rho"])
        gamma = _num(ctx, sec, "gamma", vals["gamma"])
        if not (-1.0 < gamma <= 0.0):
            raise ctx.error(sec, "gamma", f"weighted utility requires -1 < gamma <= 0, got {gamma!r}")
        if not (gamma <= rho < gamma + 1.0):
            raise ctx.error(sec, "rho", f"weighted utility requires gamma <= rho < gamma + 1, got {rho!r}")
        try:
            return WeightedUtility(rho, gamma)
        except ValueError as exc:
            raise ctx.error(sec, "rho", str(exc)) from None
    if fam == "mixed_crra":
        if "atoms" not in vals:
            raise ctx.error(sec, "atoms", "is required for the mixed_crra family")
        atoms = vals["atoms"]
        try:
            return MixedCRRA([(float(g), float(w)) for g, w in atoms])
        except (TypeError, ValueError) as exc:
            raise ctx.error(sec, "atoms", f"invalid mixing measure: {exc}") from None
    if isinstance(fam, str) and ":" in fam:
        # plug-in: "package.module:factory", called with the params dict
        mod, _, attr = fam.partition(":")
        try:
            factory = getattr(importlib.import_module(mod), attr)
        except (ImportError, AttributeError) as exc:
            raise ctx.error(sec, "family", f"cannot load plug-in {fam!r}: {exc}") from None
        params = vals.get("params", {})
        if not isinstance(params, dict):
            raise ctx.error(sec, "params", "must be a dict")
        pref = factory(**params)
        if not isinstance(pref, BetweennessPreference):
            raise ctx.error(sec, "family", f"plug-in {fam!r} did not return a BetweennessPreference")
        try:
            pref.check_shape()
        except ValueError as exc:
            raise ctx.error(sec, "family", str(exc)) from None
        return pref
    raise ctx.error(sec, "family", f"must be weighted, mixed_crra or a 'module:factory' plug-in, got {fam!r}")


def _coef(ctx, vals, name, shape, default=None):
    sec = "market"
    if name in vals and f"{name}.nodes" in vals:
        raise ctx.error(sec, name, f"give either {name} or {name}.nodes, not both")
    try:
        if f"{name}.nodes" in vals:
            nodes = vals[f"{name}.nodes"]
            return Coefficient(nodes=[(float(t), np.asarray(v, dtype=float).reshape(shape)) for t, v in nodes],
                               shape=shape)
        if name in vals:
            return Coefficient(np.asarray(vals[name], dtype=float).reshape(shape), shape=shape)
    except (TypeError, ValueError) as exc:
        key = f"{name}.nodes" if f"{name}.nodes" in vals else name
        raise ctx.error(sec, key, f"invalid coefficient for shape {shape}: {exc}") from None
    if default is None:
        raise ctx.error(sec, name, "is required")
    return default


def _market(ctx, vals) -> MarketModel:
    sec = "market"
    if "T" not in vals:
        raise ctx.error(sec, "T", "is required")
    T = _num(ctx, sec, "T", vals["T"], lo=0.0, lo_open=True)
    if "d" in vals:
        d = _num(ctx, sec, "d", vals["d"], integer=True, lo=1)
    else:
        src = vals.get("mu", None)
        if src is None and "mu.nodes" in vals:
            src = vals["mu.nodes"][0][1]
        if src is None:
            raise ctx.error(sec, "mu", "is required")
        d = int(np.atleast_1d(np.asarray(src, dtype=float)).size)
    mu = _coef(ctx, vals, "mu", (d,))
    sigma = _coef(ctx, vals, "sigma", (d, d))
    r = _coef(ctx, vals, "r", (), Coefficient(0.0))
    R = _coef(ctx, vals, "R", (), r)
    for name, c in (("mu", mu), ("sigma", sigma), ("r", r), ("R", R)):
        if c.times is not None and (c.times[0] > 0.0 or c.times[-1] < T):
            raise ctx.error(sec, f"{name}.nodes", "nodes must cover [0, T]")
        if not np.all(np.isfinite(c.values)):
            raise ctx.error(sec, name, "must be finite")
    try:
        return MarketModel(T, mu, sigma, r, R)
    except ValueError as exc:
        key = "R" if "borrowing rate" in str(exc) else "sigma"
        if "R.nodes" in vals and key == "R":
            key = "R.nodes"
        raise ctx.error(sec, key, str(exc)) from None


_FAMILY_KEYS = {
    "full": set(),
    "nonneg": set(),
    "box": {"lo", "hi"},
    "ball": {"center", "radius"},
    "halfspace": {"normal", "offset"},
}


def _primitive(ctx, fam, params, d, key="family"):
    sec = "constraint"
    if fam not in _FAMILY_KEYS:
        raise ctx.error(sec, key, f"unknown constraint family {fam!r}")
    missing = _FAMILY_KEYS[fam] - set(params)
    if missing:
        k = sorted(missing)[0]
        raise ctx.error(sec, k if key == "family" else key, f"is required for the {fam} family")
    try:
        if fam == "full":
            return FullSpace(d)
        if fam == "nonneg":
            return NonnegOrthant(d)
        if fam == "box":
            return Box(_vec(ctx, sec, "lo", params["lo"], d), _vec(ctx, sec, "hi", params["hi"], d))
        if fam == "ball":
            radius = _num(ctx, sec, "radius", params["radius"], lo=0.0, lo_open=True)
            return Ball(_vec(ctx, sec, "center", params["center"], d), radius)
        return Halfspace(_vec(ctx, sec, "normal", params["normal"], d), _num(ctx, sec, "offset", params["offset"]))
    except ValueError as exc:
        raise ctx.error(sec, key, str(exc)) from None


def _constraint(ctx, vals, d) -> ConvexSet:
    sec = "constraint"
    fam = vals.get("family", "full")
    if fam == "intersection":
        members = vals.get("members")
        if not isinstance(members, (list, tuple)) or not members:
            raise ctx.error(sec, "members", "must be a non-empty list of (family, {params}) pairs")
        sets = []
        for m in members:
            if not (isinstance(m, (list, tuple)) and len(m) == 2 and isinstance(m[1], dict)):
                raise ctx.error(sec, "members", f"member {m!r} is not a (family, {{params}}) pair")
            extra = set(m[1]) - _FAMILY_KEYS.get(m[0], set())
            if extra:
                raise ctx.error(sec, "members", f"unknown key {sorted(extra)[0]!r} for member family {m[0]!r}")
            sets.append(_primitive(ctx, m[0], m[1], d, key="members"))
        if "witness" not in vals:
            raise ctx.error(sec, "witness", "is required for an intersection")
        w = _vec(ctx, sec, "witness", vals["witness"], d)
        try:
            return Intersection(sets, w)
        except ValueError as exc:
            raise ctx.error(sec, "witness", str(exc)) from None
    extra = {k for k in vals if k not in ("family", "witness")} - _FAMILY_KEYS.get(fam, set())
    if extra and fam in _FAMILY_KEYS:
        raise ctx.error(sec, sorted(extra)[0], f"is not a parameter of the {fam} family")
    cset = _primitive(ctx, fam, vals, d)
    if "witness" in vals:
        w = _vec(ctx, sec, "witness", vals["witness"], d)
        try:
            cset.set_witness(w)
        except ValueError as exc:
            raise ctx.error(sec, "witness", str(exc)) from None
    return cset


def _solver(ctx, vals) -> SolverConfig:
    sec = "solver"
    c = SolverConfig()
    if "problem" in vals:
        try:
            c.problem = Problem(vals["problem"])
        except ValueError:
            raise ctx.error(sec, "problem", f"must be constrained or borrowing, got {vals['problem']!r}") from None
    if "n_steps" in vals:
        c.n_steps = _num(ctx, sec, "n_steps", vals["n_steps"], integer=True, lo=1)
    if "y_max" in vals:
        c.y_max = _num(ctx, sec, "y_max", vals["y_max"], lo=0.0, lo_open=True)
    if "quad_order" in vals:
        c.quad_order = _num(ctx, sec, "quad_order", vals["quad_order"], integer=True, lo=2)
    if "table_nodes" in vals:
        c.table_nodes = _num(ctx, sec, "table_nodes", vals["table_nodes"], integer=True, lo=16)
    return c


def _verify(ctx, vals, T) -> VerifyConfig:
    sec = "verify"
    c = VerifyConfig()
    tg = vals.get("t_grid", 5)
    if isinstance(tg, (int, float)) and not isinstance(tg, bool):
        n = _num(ctx, sec, "t_grid", tg, integer=True, lo=1)
        c.t_grid = np.linspace(0.0, T, n).tolist() if n > 1 else [0.0]
    else:
        c.t_grid = _vec(ctx, sec, "t_grid", tg).tolist()
    if any(not (0.0 <= t <= T) for t in c.t_grid):
        raise ctx.error(sec, "t_grid", f"times must lie in [0, {T}]")
    if "x_grid" in vals:
        c.x_grid = _vec(ctx, sec, "x_grid", vals["x_grid"]).tolist()
    if any(x <= 0 for x in c.x_grid):
        raise ctx.error(sec, "x_grid", "wealth levels must be positive")
    if "n_paths" in vals:
        c.n_paths = _num(ctx, sec, "n_paths", vals["n_paths"], integer=True, lo=1000)
    if "seed" in vals:
        c.seed = _num(ctx, sec, "seed", vals["seed"], integer=True, lo=0, hi=2**64 - 1)
    if "eps_ladder" in vals:
        e = _vec(ctx, sec, "eps_ladder", vals["eps_ladder"]).tolist()
        if not e or any(v <= 0 for v in e) or any(b >= a for a, b in zip(e[:-1], e[1:])):
            raise ctx.error(sec, "eps_ladder", "must be a strictly decreasing list of positive numbers")
        c.eps_ladder = e
    if "scheme" in vals:
        if vals["scheme"] not in ("exact", "euler"):
            raise ctx.error(sec, "scheme", f"must be exact or euler, got {vals['scheme']!r}")
        c.scheme = vals["scheme"]
    if "n_time_steps" in vals:
        c.n_time_steps = _num(ctx, sec, "n_time_steps", vals["n_time_steps"], integer=True, lo=1)
    if "t0" in vals:
        c.t0 = _num(ctx, sec, "t0", vals["t0"], lo=0.0, hi=T)
    if "x0" in vals:
        c.x0 = _num(ctx, sec, "x0", vals["x0"], lo=0.0, lo_open=True)
    if c.t0 + c.eps_ladder[0] > T:
        raise ctx.error(sec, "eps_ladder", f"t0 + largest epsilon exceeds the horizon {T}")
    if "alternatives" in vals:
        alts = vals["alternatives"]
        if not isinstance(alts, (list, tuple)) or not alts:
            raise ctx.error(sec, "alternatives", "must be a non-empty list of weight vectors")
        c.alternatives = [_vec(ctx, sec, "alternatives", a).tolist() for a in alts]
    if "tol" in vals:
        c.tol = _num(ctx, sec, "tol", vals["tol"], lo=0.0, lo_open=True)
    if "candidate_scale" in vals:
        c.candidate_scale = _num(ctx, sec, "candidate_scale", vals["candidate_scale"])
    return c


def _output(ctx, vals) -> OutputConfig:
    c = OutputConfig()
    if "directory" in vals:
        if not isinstance(vals["directory"], str):
            raise ctx.error("output", "directory", "must be a string")
        c.directory = vals["directory"]
    if "emit_plots" in vals:
        v = vals["emit_plots"]
        if isinstance(v, str) and v.lower() in ("true", "false", "yes", "no"):
            v = v.lower() in ("true", "yes")
        if not isinstance(v, bool):
            raise ctx.error("output", "emit_plots", f"must be true or false, got {v!r}")
        c.emit_plots = v
    return c


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def parse_text(text: str, path: str = "<string>", problem: Problem | str | None = None) -> RunConfig:
    """Parse configuration text; ``problem`` overrides ``[solver] problem``."""
    ctx = _Ctx(text)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"), strict=True)
    cp.optionxform = str  # keys are case-sensitive (r vs R)
    try:
        cp.read_string(text, source=path)
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"syntax error: {exc.errors[0][1] if exc.errors else exc}", line=lineno) from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        raise ConfigError(f"syntax error: {exc.message if hasattr(exc, 'message') else exc}", line=lineno) from None
    raw: dict = {}
    for sec in cp.sections():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", key=sec, line=ctx.line_of_section(sec))
        raw[sec] = {}
        for key, text_v in cp.items(sec):
            if key not in KEYS[sec]:
                raise ctx.error(sec, key, "unknown key")
            raw[sec][key] = _literal(ctx, sec, key, text_v)
    for sec in ("preference", "market"):
        if sec not in raw:
            raise ConfigError("section is required", key=sec)
    pref = _preference(ctx, raw["preference"])
    market = _market(ctx, raw["market"])
    cset = _constraint(ctx, raw.get("constraint", {}), market.d)
    solver = _solver(ctx, raw.get("solver", {}))
    if problem is not None:
        solver.problem = Problem(problem)
    verify = _verify(ctx, raw.get("verify", {}), market.T)
    output = _output(ctx, raw.get("output", {}))
    if solver.problem == Problem.CONSTRAINED and not market.has_zero_rate:
        raise ctx.error("market", "r" if "r" in raw["market"] else "r.nodes",
                        "the constrained problem requires a zero interest rate")
    if solver.problem == Problem.BORROWING and "constraint" in raw and not isinstance(cset, FullSpace):
        raise ctx.error("constraint", "family", "the borrowing problem has no portfolio constraint")
    if verify.alternatives is not None:
        for a in verify.alternatives:
            if len(a) != market.d:
                raise ctx.error("verify", "alternatives", f"each alternative needs {market.d} weights")
    return RunConfig(path, pref, market, cset, solver, verify, output, raw)


def parse_config(path, problem: Problem | str | None = None) -> RunConfig:
    """Read and validate a run configuration file."""
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror or exc}", key="--config") from None
    except UnicodeDecodeError as exc:
        raise ConfigError(f"config is not valid UTF-8: {exc}", key="--config") from None
    return parse_text(text, str(p), problem)
