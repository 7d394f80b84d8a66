"""Command line: ``smlab gen|run|score|report``.

Precedence: defaults < config file (``--config``) < explicit flags.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .harness import ExperimentConfig, emit_report, load_report, reaggregate, run_experiment
from .instances import generate_instance, load_instance, save_instance
from .matching import Matching
from .metrics import score


def _grid(text: str) -> tuple[int, int]:
    try:
        r, c = text.lower().split("x")
        return int(r), int(c)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 3x3, got {text!r}")


def _agents(text: str) -> int:
    n = int(text)
    if n < 2 or n % 2:
        raise argparse.ArgumentTypeError("--agents is the total over both sides and must be even")
    return n


def _seeds(text: str) -> list[int]:
    """'0-9' or '1,4,7'."""
    if "-" in text and "," not in text:
        lo, hi = text.split("-")
        return list(range(int(lo), int(hi) + 1))
    return [int(s) for s in text.split(",")]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="smlab", description="Decentralized stable matching laboratory")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p):
        # default=None so that only flags given explicitly override the config file
        p.add_argument("--variant", choices=["SM", "SMI", "SMT"], default=None)
        p.add_argument("--pref", choices=["Symmetric", "Asymmetric"], default=None)
        p.add_argument("--agents", type=_agents, default=None, help="total agents over both sides")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    g = sub.add_parser("gen", help="generate instance files")
    common(g)
    g.add_argument("--instances", type=_seeds, default=None, help="instance seeds, e.g. 0-9")

    r = sub.add_parser("run", help="run an experiment")
    common(r)
    r.add_argument("--config", type=Path, default=None, help="YAML/JSON config file")
    r.add_argument("--algo", choices=["marl", "bls", "ha", "dcf"], default=None)
    r.add_argument("--grid", type=_grid, default=None)
    r.add_argument("--episodes", type=int, default=None)
    r.add_argument("--steps", type=int, default=None)
    r.add_argument("--repeats", type=int, default=None)
    r.add_argument("--instances", type=_seeds, default=None, help="instance seeds, e.g. 0-9")
    r.add_argument("--workers", type=int, default=None)

    s = sub.add_parser("score", help="score a matching on an instance")
    s.add_argument("instance", type=Path)
    s.add_argument("matching", type=Path, help="JSON with partner_of_1/partner_of_2 (-1 = unmatched)")

    rp = sub.add_parser("report", help="re-aggregate a saved report.json")
    rp.add_argument("report", type=Path)
    rp.add_argument("--out", default=None)
    return ap


def config_from_args(args) -> ExperimentConfig:
    doc = {}
    if getattr(args, "config", None):
        doc = yaml.safe_load(args.config.read_text()) or {}
    overrides = {
        "variant": args.variant,
        "pref_type": args.pref,
        "n_side": None if args.agents is None else args.agents // 2,
        "seed": args.seed,
        "algorithm": getattr(args, "algo", None),
        "episodes": getattr(args, "episodes", None),
        "steps_per_episode": getattr(args, "steps", None),
        "repeats": getattr(args, "repeats", None),
        "instance_seeds": getattr(args, "instances", None),
        "workers": getattr(args, "workers", None),
    }
    grid = getattr(args, "grid", None)
    if grid is not None:
        overrides["rows"], overrides["cols"] = grid
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(doc)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")

    if args.cmd == "gen":
        cfg = config_from_args(args)
        out = Path(args.out or ".")
        out.mkdir(parents=True, exist_ok=True)
        for s in cfg.instance_seeds:
            inst = generate_instance(cfg.variant, cfg.pref_type, cfg.n_side, s)
            path = out / f"{cfg.variant}_{cfg.pref_type}_{2 * cfg.n_side}_{s}.json"
            save_instance(inst, path)
            print(path)
        return 0

    if args.cmd == "run":
        cfg = config_from_args(args)
        report = run_experiment(cfg)
        paths = emit_report(report, args.out or "results")
        agg = report.aggregates
        print(f"stability {agg['stability_pct']}%  runs {agg['n_ok']}/{agg['n_runs']} ok  -> {paths['csv']}")
        for r in report.runs:
            if r.status != "ok":
                print(f"FAILED {r.error}", file=sys.stderr)
        return 0 if report.ok else 1

    if args.cmd == "score":
        inst = load_instance(args.instance)
        m = Matching.from_dict(json.loads(args.matching.read_text()))
        print(json.dumps(score(inst, m).to_dict(), indent=1))
        return 0

    if args.cmd == "report":
        report = reaggregate(load_report(args.report))
        paths = emit_report(report, args.out or args.report.parent, prefix=args.report.stem)
        print(paths["csv"])
        return 0 if report.ok else 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
