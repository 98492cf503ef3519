"""Command line entry point ``adiapump``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import AdiapumpError
from .experiments import RunConfig, load_config, run, write_output


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adiapump", description="Adiabatic quantum pump experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="run config JSON, or a model JSON (detected by its n_leads key)")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--quiet", action="store_true", help="do not print the summary")
        return p

    common(sub.add_parser("smatrix", help="frozen scattering matrix on a grid"))
    common(sub.add_parser("bpt", help="BPT cycle charge and winding"))
    ev = common(sub.add_parser("evolve", help="time-dependent simulation with one ammeter"))
    ev.add_argument("--eps", type=float)
    ev.add_argument("--ammeter", type=float, help="ammeter distance a")
    ev.add_argument("--lead-length", type=int)
    ev.add_argument("--kind", choices=("position", "dilation"))
    ev.add_argument("--filter", choices=("on", "off"))
    common(sub.add_parser("sweep-eps", help="convergence in the adiabatic parameter"))
    common(sub.add_parser("sweep-ammeter", help="ammeter independence study"))
    lab = common(sub.add_parser("lab", help="half-line operator identities"), config_required=False)
    lab.add_argument("--check", choices=("hs_norm", "trace", "pull_through", "mourre", "mourre_pump"))
    cmp_ = common(sub.add_parser("compare", help="compare BPT and dynamics outputs"), config_required=False)
    cmp_.add_argument("--bpt", help="BPT output directory or summary.json")
    cmp_.add_argument("--dynamics", help="evolve or sweep-eps output directory or summary file")
    return ap


def _overrides(args) -> dict:
    o = {}
    if args.command == "evolve":
        for name, key in (("eps", "eps"), ("ammeter", "ammeter"), ("lead_length", "lead_length"), ("kind", "kind")):
            v = getattr(args, name)
            if v is not None:
                o[key] = v
        if args.filter is not None:
            o["filter"] = args.filter == "on"
    if args.command == "lab" and args.check:
        o["check"] = args.check
    if args.command == "compare":
        for key in ("bpt", "dynamics"):
            v = getattr(args, key)
            if v is not None:
                o[key] = str(Path(v).resolve())
    return o


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.config:
            cfg = load_config(args.config, args.command, _overrides(args))
        else:
            cfg = RunConfig.from_dict({"kind": args.command, "params": _overrides(args)})
        out_dir = args.out or cfg.out or f"adiapump-{cfg.kind}"
        if cfg.out and not Path(cfg.out).is_absolute() and not args.out:
            out_dir = str(cfg.base_dir / cfg.out)
        result = run(cfg)
        write_output(result, out_dir)
    except AdiapumpError as exc:
        print(f"adiapump: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        print(json.dumps({"out": out_dir, "verdicts": result.verdicts}, indent=2, sort_keys=True))
    return 0 if result.passed else 1


if __name__ == "__main__":
    sys.exit(main())
