"""TOML scenario files: ``[problem]``, ``[experiment]`` and ``[output]`` sections.

Unknown keys are rejected.  Rationals may be written as strings such as
``"1/50"``; integers and such strings keep the problem exact, floats make it
float-only.  A resolved scenario serializes back to a TOML document that
reloads to an identical scenario.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import tomli
import tomli_w

from .problem import ProblemError, ProblemSpec
from .presets import PRESETS, get_preset
from .tensor import PolySum, constant, dumps, loads


class ConfigError(ValueError):
    """Malformed or inconsistent scenario configuration."""


KINDS = ("hormander-check", "malliavin-tail", "density", "norris-dichotomy", "identity-check", "simulate")
MONTE_CARLO = {"malliavin-tail", "density", "norris-dichotomy", "identity-check", "simulate"}

_PROBLEM_KEYS = {"preset", "params", "name", "eigenvalues", "noise", "nonlinearity", "linear", "horizon"}
_OUTPUT_KEYS = {"dir", "prefix"}

# per-kind experiment keys and defaults; None means "derived from the problem"
_COMMON = {"kind": None, "seed": None, "workers": 1}
_EXPERIMENT = {
    "hormander-check": {"depth": None, "target": None, "exact": None, "budget": 10**6},
    "malliavin-tail": {"t": 1.0, "N": None, "samples": 1000, "steps": 200, "eps_min": 1e-6,
                       "eps_max": 1e-1, "per_decade": 12, "u0": None},
    "density": {"t": 1.0, "N": 1, "samples": 10000, "steps": 200, "grid_points": None, "u0": None},
    "norris-dichotomy": {"family": "tracker", "d": 1, "m": 1, "family_params": {}, "paths": 1000,
                         "processes": 100, "steps": 200, "eps_min": 1e-4, "eps_max": 1e-1,
                         "per_decade": 6},
    "identity-check": {"G": "q1", "xi": None, "dts": [1e-2, 5e-3, 2.5e-3], "paths": 10, "u0": None},
    "simulate": {"steps": 1000, "u0": None, "shifted": False},
}


@dataclass
class Scenario:
    name: str
    problem: ProblemSpec | None  # None only for norris-dichotomy without a problem section
    problem_config: dict
    kind: str
    params: dict
    output: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        exp = {"kind": self.kind}
        exp.update({k: v for k, v in self.params.items() if v is not None})
        out = {"experiment": exp, "output": dict(self.output)}
        if self.problem_config:
            out = {"problem": dict(self.problem_config), **out}
        return out

    def to_toml(self) -> str:
        return tomli_w.dumps(_plain(self.to_dict()))

    def config_hash(self) -> str:
        return hashlib.sha256(self.to_toml().encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return self.to_dict() == other.to_dict() and self.problem == other.problem


def _plain(obj):
    """Fractions to strings so tomli_w can write them."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Fraction):
        return int(obj) if obj.denominator == 1 else f"{obj.numerator}/{obj.denominator}"
    return obj


def number(x, where: str):
    """TOML scalar to Fraction (ints, ``"p/q"`` strings) or float."""
    if isinstance(x, bool):
        raise ConfigError(f"{where}: expected a number, got {x!r}")
    if isinstance(x, int):
        return Fraction(x)
    if isinstance(x, float):
        return x
    if isinstance(x, str):
        try:
            return Fraction(x)
        except ValueError:
            pass
    raise ConfigError(f"{where}: expected a number or 'p/q' string, got {x!r}")


def _param(v, where):
    if isinstance(v, list):
        return tuple(_param(x, where) for x in v)
    if isinstance(v, int):
        return v  # sizes and indices stay integers; ints are exact anyway
    if isinstance(v, (int, float, str)) and not isinstance(v, bool):
        try:
            return number(v, where)
        except ConfigError:
            return v
    return v


def _check_keys(section: dict, allowed, where: str):
    unknown = sorted(set(section) - set(allowed))
    if unknown:
        raise ConfigError(f"[{where}] unknown key(s): {', '.join(unknown)}")


def build_problem(cfg: dict) -> ProblemSpec:
    _check_keys(cfg, _PROBLEM_KEYS, "problem")
    try:
        if "preset" in cfg:
            extra = sorted(set(cfg) - {"preset", "params"})
            if extra:
                raise ConfigError(f"[problem] keys {', '.join(extra)} cannot be combined with a preset")
            name = cfg["preset"]
            if name not in PRESETS:
                raise ConfigError(f"problem.preset: unknown preset {name!r}; known: {', '.join(PRESETS)}")
            params = {k: _param(v, f"problem.params.{k}") for k, v in cfg.get("params", {}).items()}
            try:
                return get_preset(name, **params)
            except TypeError as exc:
                raise ConfigError(f"problem.params: {exc}") from None
        if "params" in cfg:
            raise ConfigError("problem.params only applies to presets")
        for key in ("eigenvalues", "noise"):
            if key not in cfg:
                raise ConfigError(f"problem.{key} is required when no preset is given")
        eigs = tuple(number(x, "problem.eigenvalues") for x in cfg["eigenvalues"])
        n = len(eigs)
        noise = tuple(tuple(number(x, "problem.noise") for x in col) for col in cfg["noise"])
        terms = []
        for k, rec in enumerate(cfg.get("nonlinearity", [])):
            try:
                terms.append(loads(rec))
            except (ValueError, SyntaxError) as exc:
                raise ConfigError(f"problem.nonlinearity[{k}]: {exc}") from None
        linear = None
        if "linear" in cfg:
            try:
                linear = loads(cfg["linear"])
            except (ValueError, SyntaxError) as exc:
                raise ConfigError(f"problem.linear: {exc}") from None
        horizon = number(cfg.get("horizon", 1), "problem.horizon")
        return ProblemSpec(eigs, PolySum(terms, dim=n), noise, horizon=horizon, linear=linear,
                           name=cfg.get("name", "custom"))
    except ProblemError as exc:
        raise ConfigError(f"[problem] {exc}") from None


def problem_to_config(problem: ProblemSpec) -> dict:
    """Explicit (preset-free) ``[problem]`` table for ``problem``."""
    out = {"name": problem.name or "custom",
           "eigenvalues": _plain(list(problem.eigenvalues)),
           "noise": _plain([list(q) for q in problem.noise]),
           "nonlinearity": [dumps(t) for t in problem.nonlinearity.terms],
           "horizon": _plain(problem.horizon)}
    if problem.linear is not None:
        out["linear"] = dumps(problem.linear)
    return out


def resolve(raw: dict) -> Scenario:
    """Validate a parsed document and fill experiment defaults."""
    _check_keys(raw, {"problem", "experiment", "output"}, "top level")
    exp = dict(raw.get("experiment", {}))
    kind = exp.get("kind")
    if kind not in KINDS:
        raise ConfigError(f"experiment.kind must be one of {', '.join(KINDS)}, got {kind!r}")
    allowed = {**_COMMON, **_EXPERIMENT[kind]}
    _check_keys(exp, allowed, "experiment")
    params = {k: exp.get(k, v) for k, v in allowed.items() if k != "kind"}
    if kind in MONTE_CARLO and params["seed"] is None:
        raise ConfigError(f"experiment.seed is mandatory for {kind}")
    if params["seed"] is not None and (not isinstance(params["seed"], int) or params["seed"] < 0):
        raise ConfigError("experiment.seed must be a non-negative integer")
    output = dict(raw.get("output", {}))
    _check_keys(output, _OUTPUT_KEYS, "output")

    pcfg = dict(raw.get("problem", {}))
    problem = None
    if pcfg or kind != "norris-dichotomy":
        if not pcfg:
            raise ConfigError("[problem] section is required")
        problem = build_problem(pcfg)
    _validate_params(kind, params, problem)
    name = pcfg.get("preset", pcfg.get("name", "custom")) if pcfg else f"{params.get('family')}"
    return Scenario(name, problem, pcfg, kind, params, output)


def _positive_int(params, key):
    v = params[key]
    if not isinstance(v, int) or isinstance(v, bool) or v < 1:
        raise ConfigError(f"experiment.{key} must be a positive integer, got {v!r}")


def _validate_params(kind, params, problem):
    if not isinstance(params["workers"], int) or params["workers"] < 1:
        raise ConfigError("experiment.workers must be a positive integer")
    if kind in ("malliavin-tail", "density", "simulate", "norris-dichotomy"):
        _positive_int(params, "steps")
    if kind in ("malliavin-tail", "density"):
        _positive_int(params, "samples")
        if params["N"] is not None:
            _positive_int(params, "N")
            if params["N"] > problem.dim:
                raise ConfigError(f"experiment.N = {params['N']} exceeds the problem dimension {problem.dim}")
        if not float(params["t"]) > 0:
            raise ConfigError("experiment.t must be positive")
    if kind == "malliavin-tail":
        if params["samples"] < 100:
            raise ConfigError("experiment.samples must be >= 100 for a tail fit")
        if not 0 < params["eps_min"] < params["eps_max"]:
            raise ConfigError("experiment needs 0 < eps_min < eps_max")
    if kind == "density":
        if params["N"] > 3:
            raise ConfigError("experiment.N must be <= 3 for density tables")
        if params["samples"] < 50:
            raise ConfigError("experiment.samples must be >= 50")
    if kind == "norris-dichotomy":
        for key in ("d", "paths", "processes"):
            _positive_int(params, key)
        if not isinstance(params["m"], int) or params["m"] < 0:
            raise ConfigError("experiment.m must be a non-negative integer")
        if not 0 < params["eps_min"] < params["eps_max"] <= 1:
            raise ConfigError("experiment needs 0 < eps_min < eps_max <= 1")
    if kind == "identity-check":
        _positive_int(params, "paths")
        parse_G(params["G"], problem)
        if params["xi"] is not None and len(params["xi"]) != problem.dim:
            raise ConfigError(f"experiment.xi has length {len(params['xi'])}, problem dimension is {problem.dim}")
    if kind == "hormander-check" and params["depth"] is not None:
        _positive_int(params, "depth")
    u0 = params.get("u0")
    if u0 is not None and problem is not None and len(u0) != problem.dim:
        raise ConfigError(f"experiment.u0 has length {len(u0)}, problem dimension is {problem.dim}")


def parse_G(text, problem):
    """``"q<i>"`` (a noise direction, 1-based) or a PolyMap text record."""
    if not isinstance(text, str):
        raise ConfigError("experiment.G must be a string")
    if text.startswith("q") and text[1:].isdigit():
        i = int(text[1:]) - 1
        if not 0 <= i < problem.d:
            raise ConfigError(f"experiment.G = {text}: the problem has {problem.d} noise direction(s)")
        return constant(problem.noise[i])
    try:
        G = loads(text)
    except (ValueError, SyntaxError) as exc:
        raise ConfigError(f"experiment.G: {exc}") from None
    if G.dim != problem.dim:
        raise ConfigError(f"experiment.G has dim {G.dim}, problem dimension is {problem.dim}")
    return G


def parse(text: str, source: str = "<string>") -> Scenario:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return resolve(raw)


def load_config(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse(text, str(path))
