"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical blow-up,
4 combinatorial budget exceeded.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

import tomli

from .brackets import BudgetExceeded
from .config import KINDS, ConfigError, load_config, resolve
from .experiments import run
from .norris import TermBudgetExceeded
from .presets import list_presets
from .sim import BlowUpError

EXIT_CONFIG = 2
EXIT_BLOWUP = 3
EXIT_BUDGET = 4

# flag name -> (experiment key, type, kinds it applies to)
_FLAGS = {
    "seed": ("seed", int, KINDS),
    "workers": ("workers", int, KINDS),
    "depth": ("depth", int, ("hormander-check",)),
    "target": ("target", int, ("hormander-check",)),
    "t": ("t", float, ("malliavin-tail", "density")),
    "N": ("N", int, ("malliavin-tail", "density")),
    "samples": ("samples", int, ("malliavin-tail", "density")),
    "steps": ("steps", int, ("malliavin-tail", "density", "norris-dichotomy", "simulate")),
    "eps_min": ("eps_min", float, ("malliavin-tail", "norris-dichotomy")),
    "eps_max": ("eps_max", float, ("malliavin-tail", "norris-dichotomy")),
    "per_decade": ("per_decade", int, ("malliavin-tail", "norris-dichotomy")),
    "family": ("family", str, ("norris-dichotomy",)),
    "d": ("d", int, ("norris-dichotomy",)),
    "m": ("m", int, ("norris-dichotomy",)),
    "paths": ("paths", int, ("norris-dichotomy", "identity-check")),
    "processes": ("processes", int, ("norris-dichotomy",)),
    "G": ("G", str, ("identity-check",)),
}


def _param_value(text):
    """``k=v`` preset parameter: TOML scalar/array syntax, falling back to a string."""
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _build_parser():
    ap = argparse.ArgumentParser(prog="hypospde", description="Bracket, Malliavin and Wiener-polynomial experiments "
                                                             "on Galerkin truncations of parabolic SPDEs.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("presets", help="list the named problems")

    r = sub.add_parser("run", help="run the experiment described by a config file")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides [output].dir)")
    r.add_argument("--seed", type=int)
    r.add_argument("--workers", type=int)

    s = sub.add_parser("resolve", help="print the fully resolved config")
    s.add_argument("config")

    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} experiment")
        p.add_argument("--config", help="base config file; flags override its fields")
        p.add_argument("--preset", help="named problem (see `hypospde presets`)")
        p.add_argument("--param", action="append", default=[], metavar="K=V",
                       help="preset parameter, e.g. n=6 or nu='1/20'")
        p.add_argument("--out", help="output directory")
        for flag, (_, typ, kinds) in _FLAGS.items():
            if kind in kinds:
                p.add_argument(f"--{flag.replace('_', '-')}", dest=flag, type=typ)
    return ap


def _raw_from_args(args, kind):
    if args.config:
        with open(args.config, "rb") as fh:
            try:
                raw = tomli.load(fh)
            except tomli.TOMLDecodeError as exc:
                raise ConfigError(f"{args.config}: {exc}") from None
    else:
        raw = {}
    raw.setdefault("experiment", {})
    if raw["experiment"].get("kind", kind) != kind:
        raise ConfigError(f"config describes a {raw['experiment']['kind']} experiment, not {kind}")
    raw["experiment"]["kind"] = kind
    if args.preset:
        raw["problem"] = {"preset": args.preset}
    if args.param:
        prob = raw.setdefault("problem", {})
        params = prob.setdefault("params", {})
        for item in args.param:
            if "=" not in item:
                raise ConfigError(f"--param expects K=V, got {item!r}")
            k, v = item.split("=", 1)
            params[k.strip()] = _param_value(v.strip())
    for flag, (key, _, kinds) in _FLAGS.items():
        if kind in kinds and getattr(args, flag, None) is not None:
            raw["experiment"][key] = getattr(args, flag)
    return raw


def _print_presets():
    rows = list_presets()
    width = max(len(r[0]) for r in rows)
    print(f"{'name':<{width}}  depth  description")
    for name, desc, depth in rows:
        print(f"{name:<{width}}  {depth:>5}  {desc}")


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "presets":
            _print_presets()
            return 0
        if args.command == "resolve":
            sys.stdout.write(load_config(args.config).to_toml())
            return 0
        if args.command == "run":
            sc = load_config(args.config)
            if args.seed is not None or args.workers is not None:
                raw = sc.to_dict()
                if args.seed is not None:
                    raw["experiment"]["seed"] = args.seed
                if args.workers is not None:
                    raw["experiment"]["workers"] = args.workers
                sc = resolve(raw)
            out = args.out
        else:
            sc = resolve(_raw_from_args(args, args.command))
            out = args.out
        manifest = run(sc, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BlowUpError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_BLOWUP
    except (BudgetExceeded, TermBudgetExceeded) as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(json.dumps(manifest["summary"], indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
