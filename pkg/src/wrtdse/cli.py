"""Command line interface: ``wrtdse {catalog,eigen,run,pes,spectrum,compare}``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
The output root defaults to ``$WRTDSE_OUTPUT`` (or ``./wrtdse_runs``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import SCENARIOS, ConfigError, RunConfig, load_config, scenario_config
from .eigen import EigenError, field_free_so_splitting
from .propagator import NumericalInstabilityError
from .runner import (
    ResumeError,
    _load_result,
    compare_runs,
    get_eigenstates,
    output_root,
    photoelectron_from_run,
    run,
    spectrum_from_run,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _parse_set(items) -> dict:
    """``a.b=value`` pairs to a nested dict; values parsed as YAML scalars."""
    out: dict = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        node = out
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(val)
    return out


def _overrides(args) -> dict:
    o = _parse_set(getattr(args, "set", None))
    if getattr(args, "dt", None) is not None:
        o["dt"] = args.dt
    for flag in ("dipole_approximation", "pauli", "mass_shift", "darwin", "spin_orbit"):
        v = getattr(args, flag, None)
        if v is not None:
            o.setdefault("toggles", {})[flag] = v
    if getattr(args, "c_override", None) is not None:
        o.setdefault("toggles", {})["c_override"] = args.c_override
    return o


def _config(args) -> RunConfig:
    if getattr(args, "scenario", None):
        return scenario_config(args.scenario, args.scale, _overrides(args))
    if getattr(args, "config", None):
        return load_config(args.config).updated(_overrides(args))
    raise ConfigError("give --scenario NAME or --config FILE")


def cmd_catalog(args) -> int:
    for name in sorted(SCENARIOS):
        print(f"{name:20s} {SCENARIOS[name]['description']}")
    return EXIT_OK


def cmd_eigen(args) -> int:
    cfg = _config(args)
    if args.n_states:
        cfg = cfg.updated({"eigen": {"n_states": args.n_states}})
    if args.method:
        cfg = cfg.updated({"eigen": {"method": args.method}})
    res = get_eigenstates(cfg)
    lp = cfg.laser_parameters()
    omega = lp["omega"] if lp else 1.0
    splits = {s.index: s for s in field_free_so_splitting(res, cfg.potential, omega, cfg.toggles.c)}
    rows = []
    for (i, e, w), lab in zip(res.energies, res.labels):
        rows.append({"index": i, "energy": e, "linewidth": w, "label": lab,
                     "so_splitting_over_omega": splits[i].delta_over_omega})
    print(json.dumps({"states": rows, "meta": res.meta}, indent=2, default=float))
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(args.output) if args.output else None
    res = run(cfg, out_dir=out, resume=args.resume, stop_after=args.stop_after)
    status = "completed" if res.completed else f"checkpointed at step {res.steps_done}"
    print(f"{cfg.name}: {status}; output in {res.out_dir}")
    return EXIT_OK


def cmd_pes(args) -> int:
    res = _load_result(args.run_dir)
    if res.ledger is None:
        raise ConfigError("run has no flux ledger (no absorber configured)")
    es, meta = photoelectron_from_run(res, args.x_i, args.x_0)
    path = es.write_csv(Path(args.output or Path(args.run_dir) / "pes.csv"), meta)
    print(path)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    spec = spectrum_from_run(args.run_dir, args.channel, tuple(args.window) if args.window else None)
    path = spec.write_csv(Path(args.output or Path(args.run_dir) / f"spectrum_{args.channel}.csv"))
    print(path)
    return EXIT_OK


def cmd_compare(args) -> int:
    bands = [tuple(b) for b in args.band] if args.band else None
    print(json.dumps(compare_runs(args.run_a, args.run_b, args.observable, bands), indent=2))
    return EXIT_OK


def _add_config_args(p):
    p.add_argument("--scenario", choices=None, help="catalog scenario name")
    p.add_argument("--scale", type=float, default=1.0, help="divide plateau/post-pulse cycles by this")
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    p.add_argument("--dt", type=float)
    p.add_argument("--c-override", dest="c_override", type=float)
    for flag in ("dipole_approximation", "pauli", "mass_shift", "darwin", "spin_orbit"):
        opt = flag.replace("_", "-")
        p.add_argument(f"--{opt}", dest=flag, action="store_const", const=True, default=None)
        p.add_argument(f"--no-{opt}", dest=flag, action="store_const", const=False)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wrtdse", description="weakly relativistic 2D spinor TDSE")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    sub.add_parser("catalog", help="list scenarios").set_defaults(func=cmd_catalog)

    p = sub.add_parser("eigen", help="field-free eigenstates")
    _add_config_args(p)
    p.add_argument("--n-states", type=int)
    p.add_argument("--method", choices=["imaginary_time", "spectral"])
    p.set_defaults(func=cmd_eigen)

    p = sub.add_parser("run", help="propagate a scenario or config")
    _add_config_args(p)
    p.add_argument("--output", help=f"run directory (default under ${'WRTDSE_OUTPUT'})")
    p.add_argument("--resume", action="store_true")
    p.add_argument("--stop-after", type=int, help="stop (and checkpoint) after this many steps")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("pes", help="photoelectron spectrum from a finished run")
    p.add_argument("run_dir")
    p.add_argument("--x-i", type=float)
    p.add_argument("--x-0", type=float)
    p.add_argument("--output")
    p.set_defaults(func=cmd_pes)

    p = sub.add_parser("spectrum", help="radiation spectrum from a finished run")
    p.add_argument("run_dir")
    p.add_argument("--channel", default="a_x", choices=["a_x", "a_z", "x", "z", "p_down"])
    p.add_argument("--window", type=float, nargs=2, metavar=("T0", "T1"))
    p.add_argument("--output")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("compare", help="compare two finished runs")
    p.add_argument("run_a")
    p.add_argument("run_b")
    p.add_argument("--observable", default="x", help="x, z, a_x, a_z, p_down or spectrum:<channel>")
    p.add_argument("--band", type=float, nargs=2, action="append", metavar=("LO", "HI"))
    p.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ResumeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalInstabilityError, EigenError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
