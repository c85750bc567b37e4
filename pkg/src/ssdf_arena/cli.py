"""Command-line entry point: ``ssdf-arena run | sweep | curves``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from . import experiment as ex
from .detector import PUModel, write_curve
from .link_model import ENVIRONMENTS

log = logging.getLogger("ssdf_arena")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ssdf-arena", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="run one scenario (or all strategies with --compare)")
    run.add_argument("--config", help="key = value scenario file")
    run.add_argument("--env", choices=sorted(ENVIRONMENTS))
    run.add_argument("--attack-budget", type=float)
    run.add_argument("--defense-budget", type=float)
    run.add_argument("--strategy", choices=ex.STRATEGIES)
    run.add_argument("--rounds", type=int)
    run.add_argument("--nodes", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--pu", choices=["fluct", "nonfluct"])
    run.add_argument("--xi", type=float)
    run.add_argument("--alpha", type=float)
    run.add_argument("--out", default="out")
    run.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    run.add_argument("--compare", action="store_true",
                     help="run every strategy and write the protection-vs-round table")

    sw = sub.add_parser("sweep", help="run a grid of scenarios")
    sw.add_argument("--grid", required=True, help="key = v1, v2, ... grid file")
    sw.add_argument("--out", default="out")
    sw.add_argument("--format", choices=["csv", "jsonl"], default="csv")
    sw.add_argument("--parallelism", type=int)

    cv = sub.add_parser("curves", help="write ROC or Pd-vs-SNR tables")
    cv.add_argument("--kind", choices=["roc", "pd-snr"], required=True)
    cv.add_argument("--config", help="key = value scenario file")
    cv.add_argument("--attack-budget", type=float)
    cv.add_argument("--seed", type=int)
    cv.add_argument("--pu", choices=["fluct", "nonfluct"])
    cv.add_argument("--out", default="out")
    return p


def _scenario(args) -> ex.ScenarioConfig:
    file_values = ex.read_kv_file(args.config) if getattr(args, "config", None) else {}
    cli = {
        "environment": getattr(args, "env", None),
        "attack_total": getattr(args, "attack_budget", None),
        "defense_total": getattr(args, "defense_budget", None),
        "strategy": getattr(args, "strategy", None),
        "rounds": getattr(args, "rounds", None),
        "n_nodes": getattr(args, "nodes", None),
        "seed": getattr(args, "seed", None),
        "pu_model": getattr(args, "pu", None),
        "xi": getattr(args, "xi", None),
        "alpha": getattr(args, "alpha", None),
    }
    return ex.build_config(file_values, cli)


def cmd_run(args) -> int:
    cfg = _scenario(args)
    out = Path(args.out)
    if args.compare:
        reports = {s: ex.run_scenario(dataclasses.replace(cfg, strategy=s)) for s in ex.STRATEGIES}
        out.mkdir(parents=True, exist_ok=True)
        ex.write_table(out / f"protection.{args.format}", ("round",) + ex.STRATEGIES,
                       ex.protection_table(reports), args.format)
        ex.emit(list(reports.values()), args.format, out, name="compare")
        for s, rep in reports.items():
            log.info("%s: final protected %.3f", s, rep.summary["protected_fraction_final"])
        return EXIT_OK
    report = ex.run_scenario(cfg)
    ex.emit(report, args.format, out)
    s = report.summary
    print(f"protected={s['protected_fraction_final']:.3f} "
          f"correct_packets={s['mean_correct_packets']:.2f} "
          f"non_beneficial_J={s['total_non_beneficial_J']:.6g}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    configs, base_seed = ex.expand_grid(ex.read_kv_file(args.grid))
    reports = ex.sweep(configs, args.parallelism, base_seed=base_seed)
    out = Path(args.out)
    ex.emit(reports, args.format, out, name="sweep")
    keys = ("strategy", "environment", "attack_total")
    ex.write_table(out / f"sweep_aggregate.{args.format}", ex.aggregate_header(keys),
                   ex.aggregate(reports, keys), args.format)
    failures = [r for r in reports if isinstance(r, ex.SweepFailure)]
    for f in failures:
        log.error("scenario %d failed: %s", f.index, f.message)
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_curves(args) -> int:
    cfg = _scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "roc":
        for env in ENVIRONMENTS:
            rows = ex.roc_table(env, cfg.samples, link=dataclasses.replace(
                cfg.link_profile(), shadow_mode="deterministic"))
            write_curve(rows, out / f"roc_{env}.csv", ("pf", "pd_nonfluct", "pd_fluct"))
        ex.write_meta(out, [cfg], {"kind": "roc"})
        return EXIT_OK
    model = PUModel.parse(cfg.pu_model)
    protected = {}
    for s in ex.STRATEGIES:
        rep = ex.run_scenario(dataclasses.replace(cfg, strategy=s), keep_detail=False)
        protected[s] = rep.summary["protected_fraction_final"]
    single = ex.pd_snr_table({"pd": 1.0}, cfg.pf_target, cfg.samples, model)
    write_curve(single, out / f"pd_snr_{model.value}.csv", ("snr_db", "pd"))
    table = ex.pd_snr_table(protected, cfg.pf_target, cfg.samples, model)
    write_curve(table, out / f"pd_snr_strategies_{model.value}.csv",
                ("snr_db",) + ex.STRATEGIES)
    ex.write_meta(out, [cfg], {"kind": "pd-snr"})
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handlers = {"run": cmd_run, "sweep": cmd_sweep, "curves": cmd_curves}
    try:
        return handlers[args.command](args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
