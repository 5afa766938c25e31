"""Command line entry point: ``vchannel {analyze,sweep,pomdp,simulate,preset}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .errors import ConfigError, NumericalError, UnstableQueueError
from .experiments import CYCLE_MS, PRESETS, ExperimentConfig, ResultTable, build_channel, run
from .qbd import REPORT_FIELDS, SwitchingPolicy, analyze, optimize_K

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_VERB_KINDS = {
    "sweep": ("throughput_sweep", "boundary_map", "delay_sweep", "rayleigh_sweep"),
    "pomdp": ("pomdp_policy", "pomdp_mean_value"),
    "simulate": ("simulate",),
}

_PLOT_STUB = """# Plot stub: edit columns as needed.
import csv, sys
import matplotlib.pyplot as plt

with open(sys.argv[1]) as fh:
    rows = list(csv.reader(line for line in fh if not line.startswith("#")))
header, data = rows[0], rows[1:]
x = [float(r[0]) for r in data]
for j, name in enumerate(header[1:], start=1):
    plt.plot(x, [float(r[j]) for r in data], label=name)
plt.xlabel(header[0])
plt.legend()
plt.show()
"""


def _load_config(path) -> dict:
    if path is None:
        raise ConfigError("--config is required for this verb", "--config")
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", "--config") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}", "--config") from None


def _analyze(doc: dict, units: str) -> ResultTable:
    for name in ("channel", "N", "gamma", "rho"):
        if name not in doc:
            raise ConfigError("required field is missing", name)
    model = build_channel(doc["channel"], N=doc["N"])
    thresholds = tuple(doc.get("thresholds", ()))
    scale = CYCLE_MS if units == "ms" else 1.0
    rows = []
    for ell in doc.get("policies", [1]):
        policy = SwitchingPolicy(ell)
        if "K" in doc:
            point = analyze(model, doc["N"], int(doc["K"]), doc["gamma"], doc["rho"], policy, thresholds)
        else:
            _, point = optimize_K(model, doc["gamma"], doc["rho"], policy, doc["N"], thresholds)
        if point.report is None:
            # a single operating point without a stationary law is a failure, not a row
            raise UnstableQueueError(point.seg.arrival_rate, point.service_rate)
        row = point.report.as_row()
        row["mean_wait"] *= scale
        rows.append([row[name] for name in REPORT_FIELDS] + [row[f"ccdf_{t:g}"] for t in thresholds])
    cols = list(REPORT_FIELDS) + [f"ccdf_{t:g}" for t in thresholds]
    cfg = ExperimentConfig(kind="analyze", raw=doc)
    return ResultTable(cols, rows, {"kind": "analyze", "config_hash": cfg.config_hash,
                                    "tool_version": __version__, "wait_units": units})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vchannel", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment configuration (JSON)")
    common.add_argument("--out", help="output file; stdout when omitted")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--seed", type=int, default=None, help="simulation seed (u64)")
    common.add_argument("--units", choices=("cycles", "ms"), default="cycles",
                        help="delay units; ms assumes a %.3f ms codeword cycle" % CYCLE_MS)
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")
    common.add_argument("--plot-stub", metavar="PATH", help="also write a matplotlib script stub")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb, text in (("analyze", "queue metrics at one operating point"),
                       ("sweep", "throughput/delay/boundary sweeps"),
                       ("pomdp", "POMDP value iteration"),
                       ("simulate", "Monte Carlo simulation against the analytic model")):
        sub.add_parser(verb, parents=[common], help=text)
    pre = sub.add_parser("preset", parents=[common], help="run a built-in figure experiment")
    pre.add_argument("name", choices=sorted(PRESETS))
    return parser


def execute(args) -> ResultTable:
    if args.seed is not None and not 0 <= args.seed < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer", "--seed")
    if args.jobs < 1:
        raise ConfigError("jobs must be positive", "--jobs")
    if args.verb == "analyze":
        return _analyze(_load_config(args.config), args.units)
    if args.verb == "preset":
        cfg = ExperimentConfig.preset(args.name)
    else:
        cfg = ExperimentConfig.from_dict(_load_config(args.config))
        if cfg.kind not in _VERB_KINDS[args.verb]:
            raise ConfigError(f"'{args.verb}' expects kind in {_VERB_KINDS[args.verb]}, got {cfg.kind!r}",
                              "kind")
    return run(cfg, jobs=args.jobs, units=args.units, seed=args.seed)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        table = execute(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        # ConfigError and invalid model parameters alike
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    text = table.to_json() if args.format == "json" else table.to_csv()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.plot_stub:
        with open(args.plot_stub, "w") as fh:
            fh.write(_PLOT_STUB)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
