"""Run a resolved scenario and write its tables and manifest."""

from __future__ import annotations

import csv
import io
import json
import logging
import platform
import time
from pathlib import Path

import numpy as np
import scipy
import sympy

from . import __version__
from .brackets import hormander_verdict
from .config import Scenario, parse_G
from .malliavin import fit_tail, kde_density, lambda_min_samples, log_grid
from .norris import ProcessFamily, exceptional_probability, expansion_convergence, expansion_terms, label
from .presets import PRESETS
from .rng import path_seed
from .sim import brownian_increments, integrate, integrate_shifted, path_to_csv, sample_path, simulate_batch

log = logging.getLogger(__name__)


def _r(x) -> str:
    return repr(float(x))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _default_depth(sc: Scenario) -> int:
    preset = sc.problem_config.get("preset")
    return PRESETS[preset].depth if preset in PRESETS else 6


def _target(sc: Scenario) -> int:
    preset = sc.problem_config.get("preset")
    if preset in PRESETS and PRESETS[preset].target is not None:
        return PRESETS[preset].target
    return sc.problem.dim


def _u0(sc):
    u0 = sc.params.get("u0")
    return None if u0 is None else np.asarray(u0, dtype=float)


# -- experiment kinds -------------------------------------------------------------------
def run_hormander(sc: Scenario):
    p = sc.params
    depth = p["depth"] or _default_depth(sc)
    target = p["target"] or _target(sc)
    v = hormander_verdict(sc.problem, depth, target, exact=p["exact"], budget=p["budget"])
    rep = v.report
    summary = {
        "verdict": v.verdict,
        "rank": rep.rank,
        "target_dim": target,
        "depth_limit": depth,
        "exact": rep.exact,
        "smallest_singular_value": rep.smallest_singular_value,
        "min_depth": v.min_depth,
        "rank_by_depth": {str(k): r for k, r in v.rank_by_depth.items()},
        "witness_words": v.witness_words,
        "certificate": None if rep.certificate is None else [float(x) for x in rep.certificate],
        "certificate_exact": None if rep.certificate_exact is None else [str(x) for x in rep.certificate_exact],
        "element_count": len(v.brackets.elements),
        "constant_count": len(v.brackets.constants),
        "dedup_count": v.brackets.dedup_count,
    }
    rows = []
    for e in v.brackets.elements:
        vec = e.map.terms[0].constant_vector() if e.is_constant else None
        rows.append([str(e.word), e.word.depth, e.map.max_degree, int(e.is_constant), len(e.aliases),
                     "" if vec is None else " ".join(_r(x) for x in vec)])
    tables = {
        "brackets.csv": _csv(["word", "depth", "max_degree", "constant", "aliases", "vector"], rows),
        "rank_by_depth.csv": _csv(["depth", "rank"], [[k, r] for k, r in v.rank_by_depth.items()]),
    }
    return summary, tables


def run_malliavin_tail(sc: Scenario):
    p = sc.params
    N = p["N"] or _target(sc)
    eps = log_grid(p["eps_min"], p["eps_max"], p["per_decade"])
    lam, clamped = lambda_min_samples(sc.problem, p["t"], N, p["samples"], p["seed"], p["steps"], _u0(sc),
                                      workers=p["workers"])
    fit = fit_tail(lam, eps)
    summary = {"fitted_p": fit.fitted_p, "stderr": fit.stderr, "lower_95": fit.lower_bound(),
               "sample_count": fit.sample_count, "clamped": clamped, "N": N, "t": p["t"],
               "steps": p["steps"], "seed": p["seed"],
               "note": "fitted_p is an empirical slope, a surrogate for the all-p moment bound"}
    tables = {
        "tail.csv": _csv(["eps", "samples", "count", "frequency", "stderr"],
                         [[_r(e), n, c, _r(f), _r(s)] for e, n, c, f, s in fit.rows()]),
        "samples.csv": _csv(["index", "path_seed", "lambda_min"],
                            [[i, path_seed(p["seed"], i), _r(x)] for i, x in enumerate(lam)]),
    }
    return summary, tables


def projection_samples(problem, t, N, samples, master_seed, steps, u0=None, chunk=1000):
    """``Pi u(t)`` on the leading ``N`` modes for paths ``0..samples-1``."""
    dt = t / steps
    u0 = np.zeros(problem.dim) if u0 is None else u0
    out = np.empty((samples, N))
    for a in range(0, samples, chunk):
        seeds = [path_seed(master_seed, i) for i in range(a, min(a + chunk, samples))]
        dW = brownian_increments(seeds, steps, problem.d, t)
        out[a:a + len(seeds)] = simulate_batch(problem, dW, dt, u0)[:, -1, :N]
    return out


def _query_grid(X, points):
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    pad = 0.1 * np.maximum(hi - lo, 1e-12)
    axes = [np.linspace(a - w, b + w, points) for a, b, w in zip(lo, hi, pad)]
    mesh = np.meshgrid(*axes, indexing="ij")
    cell = np.prod([ax[1] - ax[0] for ax in axes])
    return np.stack([m.ravel() for m in mesh], axis=1), cell


def run_density(sc: Scenario):
    p = sc.params
    N = p["N"]
    X = projection_samples(sc.problem, p["t"], N, p["samples"], p["seed"], p["steps"], _u0(sc))
    points = p["grid_points"] or {1: 201, 2: 41, 3: 17}[N]
    Y, cell = _query_grid(X, points)
    kde = kde_density(X, Y)
    summary = {"N": N, "samples": p["samples"], "degenerate": kde.degenerate,
               "bandwidth": [float(h) for h in kde.bandwidth], "mass": float(kde.values.sum() * cell),
               "note": "kernel estimate of the law of the projection; a surrogate, not a smoothness proof"}
    cols = [f"x{i + 1}" for i in range(N)]
    tables = {
        "density.csv": _csv(cols + ["density"], [[_r(x) for x in y] + [_r(v)] for y, v in zip(Y, kde.values)]),
        "samples.csv": _csv(["index"] + cols, [[i] + [_r(x) for x in row] for i, row in enumerate(X)]),
    }
    return summary, tables


def run_norris(sc: Scenario):
    p = sc.params
    fam = ProcessFamily(p["family"], p["d"], p["m"], dict(p["family_params"]))
    eps = log_grid(p["eps_min"], p["eps_max"], p["per_decade"])
    curve = exceptional_probability(fam, eps, p["paths"], p["processes"], p["seed"], p["steps"],
                                    workers=p["workers"])
    buf = io.StringIO()
    curve.to_csv(buf)
    summary = {"family": fam.kind, "d": fam.d, "m": fam.m, "family_params": fam.params,
               "fitted_p": curve.fitted_p, "stderr": curve.stderr, "monotone_2se": curve.is_monotone(),
               "paths": p["paths"], "processes_per_path": p["processes"], "seed": p["seed"],
               "note": "violation frequency is a proxy for the exceptional event, indexed by (m, d)"}
    return summary, {"violations.csv": buf.getvalue()}


def run_identity(sc: Scenario):
    p = sc.params
    prob = sc.problem
    G = parse_G(p["G"], prob)
    xi = np.ones(prob.dim) / np.sqrt(prob.dim) if p["xi"] is None else np.asarray(p["xi"], dtype=float)
    seeds = [path_seed(p["seed"], i) for i in range(p["paths"])]
    conv = expansion_convergence(prob, G, xi, seeds, p["dts"], float(prob.horizon), _u0(sc))
    terms = expansion_terms(prob, G)
    summary = {"order": conv.order, "order_stderr": conv.order_stderr,
               "mean_sup": [float(x) for x in conv.mean_sups], "dts": [float(x) for x in conv.dts],
               "terms": [label(a) for a in terms], "seed": p["seed"]}
    rows = [[_r(dt), i, s, _r(conv.sups[i, b])] for i, s in enumerate(seeds) for b, dt in enumerate(conv.dts)]
    return summary, {"residuals.csv": _csv(["dt", "index", "path_seed", "sup_residual"], rows)}


def run_simulate(sc: Scenario):
    p = sc.params
    prob = sc.problem
    path = sample_path(p["steps"], prob.d, float(prob.horizon), path_seed(p["seed"], 0))
    traj = (integrate_shifted if p["shifted"] else integrate)(prob, path, _u0(sc))
    a, b = io.StringIO(), io.StringIO()
    traj.to_csv(a)
    path_to_csv(path, b)
    summary = {"steps": p["steps"], "shifted": p["shifted"], "seed": p["seed"],
               "final_norm": float(np.linalg.norm(traj.states[:, -1]))}
    return summary, {"trajectory.csv": a.getvalue(), "path.csv": b.getvalue()}


RUNNERS = {
    "hormander-check": run_hormander,
    "malliavin-tail": run_malliavin_tail,
    "density": run_density,
    "norris-dichotomy": run_norris,
    "identity-check": run_identity,
    "simulate": run_simulate,
}


def versions() -> dict:
    return {"hypospde": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "sympy": sympy.__version__, "python": platform.python_version()}


def run(sc: Scenario, out_dir=None) -> dict:
    """Run ``sc``; write tables, ``summary.json``, ``config.toml`` and ``manifest.json``.

    Returns the manifest.  Table bodies depend only on the config and seed.
    """
    out_dir = Path(out_dir or sc.output.get("dir", "out"))
    prefix = sc.output.get("prefix", "")
    out_dir.mkdir(parents=True, exist_ok=True)
    start = time.time()
    summary, tables = RUNNERS[sc.kind](sc)
    wall = time.time() - start
    files = []
    for name, body in tables.items():
        (out_dir / f"{prefix}{name}").write_text(body)
        files.append(f"{prefix}{name}")
    (out_dir / f"{prefix}summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (out_dir / f"{prefix}config.toml").write_text(sc.to_toml())
    manifest = {"kind": sc.kind, "scenario": sc.name, "config_hash": sc.config_hash(),
                "seed": sc.params.get("seed"), "versions": versions(), "wall_time_s": wall,
                "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(start)),
                "files": files + [f"{prefix}summary.json", f"{prefix}config.toml"], "summary": summary}
    (out_dir / f"{prefix}manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
