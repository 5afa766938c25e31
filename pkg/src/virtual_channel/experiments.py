"""Declarative experiments: parameter sweeps, figure presets and result tables."""
from __future__ import annotations

import copy
import csv
import hashlib
import io
import json
import logging
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np
from scipy.optimize import bisect

from . import __version__
from .channel_models import (
    RAYLEIGH8_EPSILONS,
    FadingChannelModel,
    make_gilbert_elliott,
    make_rayleigh_fsmc,
)
from .errors import ConfigError, NumericalError, UnstableQueueError
from .pomdp import build_pomdp, extract_thresholds, mean_value, value_iteration
from .qbd import REPORT_FIELDS, SwitchingPolicy, analyze, optimize_K, throughput_curve
from .simulation import SimConfig, simulate

log = logging.getLogger(__name__)

KINDS = (
    "throughput_sweep",
    "boundary_map",
    "delay_sweep",
    "rayleigh_sweep",
    "pomdp_policy",
    "pomdp_mean_value",
    "simulate",
)
CYCLE_MS = 4.615

# N = 114, gamma = 0.2, mean packet length 195 bits
_LINK = {"N": 114, "gamma": 0.2, "rho": 1 / 195}
_GE_FIG3 = {"type": "gilbert_elliott", "p_bad": 0.2, "epsilons": [0.5, 0.125]}
_GE_POMDP = {"type": "gilbert_elliott", "p_bad": 0.2, "epsilons": [1.0, 0.0]}
_RAYLEIGH = {"type": "rayleigh", "k": 8, "avg_snr_db": -5.0, "bit_rate_bps": 1e5,
             "epsilons": list(RAYLEIGH8_EPSILONS)}
_MEMORY_GRID = [round(0.05 * i, 2) for i in range(0, 20)]

PRESETS = {
    "fig3": {"kind": "throughput_sweep", **_LINK, "channel": _GE_FIG3,
             "sweep": {"variable": "memory", "values": _MEMORY_GRID},
             "policies": [1, 2], "crossover": True},
    "fig4": {"kind": "boundary_map", **_LINK, "average_erasure": 0.2,
             "sweep": {"variable": "epsilon1", "start": 0.26, "stop": 1.0, "step": 0.01},
             "memory_range": [0.01, 0.99]},
    "fig5": {"kind": "delay_sweep", **_LINK, "channel": _GE_FIG3,
             "sweep": {"variable": "memory", "values": _MEMORY_GRID},
             "policies": [1, 2], "crossover": True},
    "fig7": {"kind": "rayleigh_sweep", **_LINK, "channel": _RAYLEIGH,
             "sweep": {"variable": "doppler_hz", "start": 40, "stop": 120, "step": 5},
             "policies": [1, 4, 5, 6], "metric": "throughput_bpcu"},
    "fig8": {"kind": "rayleigh_sweep", **_LINK, "channel": _RAYLEIGH,
             "sweep": {"variable": "doppler_hz", "start": 40, "stop": 120, "step": 5},
             "policies": [1, 4, 5, 6], "metric": "mean_wait"},
    "fig9": {"kind": "pomdp_policy", "N": 114, "channel": {**_GE_POMDP, "memory": 0.3},
             "beta": 0.9, "grid_size": 2000},
    "fig10": {"kind": "pomdp_policy", "N": 114,
              "channel": {"type": "matrix",
                          "B": [[0.998, 0.002, 0.0], [0.001, 0.998, 0.001], [0.0, 0.002, 0.998]],
                          "epsilons": [1.0, 0.15, 0.0]},
              "beta": 0.9, "grid_size": 200},
    "fig11": {"kind": "pomdp_mean_value", "N": 114, "channel": _GE_POMDP, "beta": 0.9,
              "grid_size": 1000,
              "sweep": {"variable": "memory", "start": 0.1, "stop": 0.9, "step": 0.05}},
}

_REQUIRED = {
    "throughput_sweep": ("channel", "sweep", "N"),
    "boundary_map": ("sweep", "N", "average_erasure"),
    "delay_sweep": ("channel", "sweep", "N", "gamma", "rho"),
    "rayleigh_sweep": ("channel", "sweep", "N", "gamma", "rho"),
    "pomdp_policy": ("channel", "N"),
    "pomdp_mean_value": ("channel", "sweep", "N"),
    "simulate": ("channel", "N", "gamma", "rho"),
}


class NoCrossoverError(NumericalError, ValueError):
    pass


@dataclass
class ExperimentConfig:
    """Validated experiment description; ``raw`` is the canonical dict form."""

    kind: str
    raw: dict

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        doc = copy.deepcopy(doc)
        kind = doc.get("kind")
        if kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {kind!r}; expected one of {KINDS}", "kind")
        for name in _REQUIRED[kind]:
            if name not in doc:
                raise ConfigError("required field is missing", name)
        if "sweep" in doc:
            sweep_values(doc["sweep"])
        if "channel" in doc and not isinstance(doc["channel"], dict):
            raise ConfigError("channel must be an object", "channel")
        for name in ("N",):
            if name in doc and (not isinstance(doc[name], int) or doc[name] < 1):
                raise ConfigError("must be a positive integer", name)
        if "gamma" in doc and not 0.0 <= doc["gamma"] < 1.0:
            raise ConfigError("must lie in [0, 1)", "gamma")
        if "rho" in doc and not 0.0 < doc["rho"] <= 1.0:
            raise ConfigError("must lie in (0, 1]", "rho")
        if "policies" in doc:
            pol = doc["policies"]
            if not isinstance(pol, list) or not pol:
                raise ConfigError("must be a nonempty list", "policies")
            doc["policies"] = [_parse_policy(p, f"policies[{i}]").ell for i, p in enumerate(pol)]
        return cls(kind=kind, raw=doc)

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}", "preset")
        return cls.from_dict(PRESETS[name])

    def get(self, key, default=None):
        return self.raw.get(key, default)

    @property
    def config_hash(self) -> str:
        canonical = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]


@dataclass
class ResultTable:
    columns: list
    rows: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        width = len(self.columns)
        for i, row in enumerate(self.rows):
            if len(row) != width:
                raise ValueError(f"row {i} has {len(row)} entries, expected {width}")

    def column(self, name) -> np.ndarray:
        j = self.columns.index(name)
        return np.array([row[j] for row in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key, value in self.metadata.items():
            buf.write(f"# {key}: {json.dumps(value)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(v) for v in row])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"columns": self.columns, "rows": [[_jsonable(v) for v in r] for r in self.rows],
                           "metadata": self.metadata}, indent=2)

    def write(self, path, fmt="csv"):
        text = self.to_json() if fmt == "json" else self.to_csv()
        with open(path, "w") as fh:
            fh.write(text)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if np.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


def _parse_policy(p, where) -> SwitchingPolicy:
    try:
        if isinstance(p, int):
            return SwitchingPolicy(p)
        if isinstance(p, dict) and "reconfigure" in p:
            return SwitchingPolicy.from_reconfigure_set(p["reconfigure"])
        if isinstance(p, list):
            return SwitchingPolicy.from_reconfigure_set(p)
    except ValueError as exc:
        raise ConfigError(str(exc), where) from None
    raise ConfigError("policy must be an integer ell, a list of reconfigure states or "
                      "{'reconfigure': [...]}", where)


def sweep_values(sweep: dict) -> np.ndarray:
    if not isinstance(sweep, dict) or "variable" not in sweep:
        raise ConfigError("sweep needs a 'variable'", "sweep")
    if "values" in sweep:
        values = np.asarray(sweep["values"], dtype=float)
    elif {"start", "stop", "step"} <= sweep.keys():
        start, stop, step = sweep["start"], sweep["stop"], sweep["step"]
        if step <= 0:
            raise ConfigError("step must be positive", "sweep.step")
        count = int(np.floor((stop - start) / step + 1e-9)) + 1
        values = np.round(start + step * np.arange(max(count, 0)), 10)
    else:
        raise ConfigError("give either 'values' or 'start'/'stop'/'step'", "sweep")
    if values.size == 0:
        raise ConfigError("sweep range is empty", "sweep")
    return values


def build_channel(entry: dict, **overrides) -> FadingChannelModel:
    """Channel model from a config entry; ``overrides`` replace entries (sweep variables)."""
    spec = {**entry, **overrides}
    kind = spec.get("type", "matrix")
    try:
        if kind == "gilbert_elliott":
            return make_gilbert_elliott(spec["p_bad"], spec["memory"], spec["N"],
                                        tuple(spec.get("epsilons", (1.0, 0.0))))
        if kind == "rayleigh":
            return make_rayleigh_fsmc(spec["k"], spec.get("avg_snr_db", 0.0), spec["doppler_hz"],
                                      spec["bit_rate_bps"], spec["epsilons"])
        if kind == "matrix":
            return FadingChannelModel(spec["B"], spec["epsilons"])
    except KeyError as exc:
        raise ConfigError("missing channel parameter", f"channel.{exc.args[0]}") from None
    raise ConfigError(f"unknown channel type {kind!r}", "channel.type")


def find_crossover(grid, curve_a, curve_b, refine=None, tol: float = 1e-3) -> float:
    """Sweep value where ``curve_b - curve_a`` changes sign.

    The first bracketing pair of grid points is refined by bisection on
    ``refine(x) -> b(x) - a(x)`` when given, otherwise by linear interpolation.
    """
    grid = np.asarray(grid, dtype=float)
    diff = np.asarray(curve_b, dtype=float) - np.asarray(curve_a, dtype=float)
    if grid.shape != diff.shape:
        raise ValueError("curves must be sampled on the sweep grid")
    sign = np.sign(diff)
    idx = np.nonzero(sign[:-1] * sign[1:] < 0)[0]
    exact = np.nonzero(sign == 0)[0]
    if idx.size == 0:
        if exact.size and np.any(sign != 0):
            return float(grid[exact[0]])
        raise NoCrossoverError("no crossover in range")
    if idx.size > 1:
        warnings.warn(f"curves cross {idx.size} times; reporting the first", stacklevel=2)
    i = int(idx[0])
    lo, hi = grid[i], grid[i + 1]
    if refine is None:
        return float(lo - diff[i] * (hi - lo) / (diff[i + 1] - diff[i]))
    return float(bisect(refine, lo, hi, xtol=tol))


# ------------------------------------------------------------------ runners


def _best_throughput(model, N, ell):
    curve = throughput_curve(model, N, SwitchingPolicy(ell))
    K = int(np.argmax(curve)) + 1
    return K, float(curve[K - 1])


def _ge_point(cfg_raw, memory, ell):
    model = build_channel(cfg_raw["channel"], memory=memory, N=cfg_raw["N"])
    return _best_throughput(model, cfg_raw["N"], ell)


def _map(func, items, jobs):
    if jobs and jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(x) for x in items]


def _throughput_row(memory, raw):
    return [memory] + [v for ell in raw["policies"] for v in _ge_point(raw, memory, ell)]


def _throughput_gap(raw, ell_a, ell_b, memory):
    return _ge_point(raw, memory, ell_b)[1] - _ge_point(raw, memory, ell_a)[1]


def run_throughput_sweep(cfg: ExperimentConfig, jobs=1) -> ResultTable:
    raw = cfg.raw
    raw.setdefault("policies", [1, 2])
    values = sweep_values(raw["sweep"])
    _check_variable(raw, "memory")
    rows = _map(partial(_throughput_row, raw=raw), list(values), jobs)
    cols = ["memory"] + [c for ell in raw["policies"] for c in (f"K_ell{ell}", f"throughput_ell{ell}")]
    meta = {}
    if raw.get("crossover") and len(raw["policies"]) >= 2:
        a, b = raw["policies"][:2]
        t = ResultTable(cols, rows)
        try:
            x = find_crossover(values, t.column(f"throughput_ell{a}"), t.column(f"throughput_ell{b}"),
                               refine=partial(_throughput_gap, raw, a, b))
            meta["crossover_memory"] = x
            meta["crossover_sojourn_bits"] = _bad_sojourn(raw, x)
        except NoCrossoverError:
            meta["crossover_memory"] = None
    return ResultTable(cols, rows, meta)


def _bad_sojourn(raw, memory):
    model = build_channel(raw["channel"], memory=memory, N=raw["N"])
    return float(1.0 / model.B[0, 1])


def _boundary_point(eps1, raw):
    avg = raw["average_erasure"]
    eps2 = (1.0 - eps1) / 4.0
    p_bad = (avg - eps2) / (eps1 - eps2)
    spec = {"type": "gilbert_elliott", "p_bad": p_bad, "epsilons": [eps1, eps2]}
    sub = {**raw, "channel": spec}
    lo, hi = raw.get("memory_range", [0.01, 0.99])
    grid = np.linspace(lo, hi, int(raw.get("memory_points", 25)))
    a = [_ge_point(sub, m, 1)[1] for m in grid]
    b = [_ge_point(sub, m, 2)[1] for m in grid]
    try:
        x = find_crossover(grid, a, b, refine=partial(_throughput_gap, sub, 1, 2),
                           tol=raw.get("tol", 1e-4))
    except NoCrossoverError:
        x = float("nan")
    return [eps1, eps2, p_bad, x]


def run_boundary_map(cfg: ExperimentConfig, jobs=1) -> ResultTable:
    raw = cfg.raw
    _check_variable(raw, "epsilon1")
    values = sweep_values(raw["sweep"])
    rows = _map(partial(_boundary_point, raw=raw), list(values), jobs)
    return ResultTable(["epsilon1", "epsilon2", "p_bad", "boundary_memory"], rows)


def _delay_row(x, raw, variable, units):
    scale = CYCLE_MS if units == "ms" else 1.0
    model = build_channel(raw["channel"], **{variable: x, "N": raw["N"]})
    row = [x]
    for ell in raw["policies"]:
        K, point = optimize_K(model, raw["gamma"], raw["rho"], SwitchingPolicy(ell), raw["N"])
        rep = point.report
        if rep is None:
            row += [K, point.throughput_bpcu, float("nan"), float("nan"), 0]
        else:
            row += [K, point.throughput_bpcu, rep.mean_wait * scale, rep.decay_rate, 1]
    return row


def _delay_table(cfg, variable, jobs, units):
    raw = cfg.raw
    raw.setdefault("policies", [1, 2])
    values = sweep_values(raw["sweep"])
    rows = _map(partial(_delay_row, raw=raw, variable=variable, units=units), list(values), jobs)
    cols = [variable]
    for ell in raw["policies"]:
        cols += [f"K_ell{ell}", f"throughput_ell{ell}", f"mean_wait_ell{ell}", f"decay_rate_ell{ell}",
                 f"stable_ell{ell}"]
    return ResultTable(cols, rows, {"wait_units": units})


def run_delay_sweep(cfg: ExperimentConfig, jobs=1, units="cycles") -> ResultTable:
    _check_variable(cfg.raw, "memory")
    table = _delay_table(cfg, "memory", jobs, units)
    raw = cfg.raw
    if raw.get("crossover") and len(raw["policies"]) >= 2:
        a, b = raw["policies"][:2]
        try:
            # lower wait is better: crossover where wait_a - wait_b changes sign
            x = find_crossover(table.column("memory"), table.column(f"mean_wait_ell{b}"),
                               table.column(f"mean_wait_ell{a}"))
            table.metadata["crossover_memory"] = x
        except NoCrossoverError:
            table.metadata["crossover_memory"] = None
    return table


def run_rayleigh_sweep(cfg: ExperimentConfig, jobs=1, units="cycles") -> ResultTable:
    _check_variable(cfg.raw, "doppler_hz")
    table = _delay_table(cfg, "doppler_hz", jobs, units)
    if "metric" in cfg.raw:
        table.metadata["metric"] = cfg.raw["metric"]
    return table


def _pomdp_value(memory, raw, allow):
    model = build_channel(raw["channel"], memory=memory, N=raw["N"])
    pomdp = build_pomdp(model, raw["N"], raw.get("beta", 0.9), allow, raw.get("stride", 1))
    vf = value_iteration(pomdp, raw.get("grid_size"), raw.get("tol", 1e-9), raw.get("max_iter", 10_000))
    return mean_value(vf)


def _mean_value_row(memory, raw):
    return [memory, _pomdp_value(memory, raw, False), _pomdp_value(memory, raw, True)]


def run_pomdp_mean_value(cfg: ExperimentConfig, jobs=1) -> ResultTable:
    raw = cfg.raw
    _check_variable(raw, "memory")
    values = sweep_values(raw["sweep"])
    rows = _map(partial(_mean_value_row, raw=raw), list(values), jobs)
    return ResultTable(["memory", "mean_value_fixed", "mean_value_reconfigurable"], rows)


def solve_pomdp_config(raw: dict):
    model = build_channel(raw["channel"], N=raw["N"])
    pomdp = build_pomdp(model, raw["N"], raw.get("beta", 0.9), raw.get("allow_reconfigure", True),
                        raw.get("stride", 1))
    vf = value_iteration(pomdp, raw.get("grid_size"), raw.get("tol", 1e-9), raw.get("max_iter", 10_000))
    return pomdp, vf


def run_pomdp_policy(cfg: ExperimentConfig, jobs=1) -> ResultTable:
    pomdp, vf = solve_pomdp_config(cfg.raw)
    meta = {"mean_value": mean_value(vf), "iterations": vf.iterations, "residual": vf.residual}
    if pomdp.k == 2:
        th = extract_thresholds(vf)
        rows = [[0.0, th.initial_action, th.initial_action / pomdp.N]]
        rows += [[x, a, a / pomdp.N] for x, a in th.boundaries]
        meta["monotone"] = th.monotone
        return ResultTable(["belief_good", "action", "code_rate"], rows, meta)
    cols = [f"psi_{i + 1}" for i in range(pomdp.k)] + ["value", "action", "code_rate"]
    rows = [list(map(float, p)) + [float(v), int(a), a / pomdp.N]
            for p, v, a in zip(vf.grid.points, vf.values, vf.policy)]
    return ResultTable(cols, rows, meta)


def run_simulation(cfg: ExperimentConfig, jobs=1, seed=None, units="cycles") -> ResultTable:
    raw = cfg.raw
    model = build_channel(raw["channel"], N=raw["N"])
    scale = CYCLE_MS if units == "ms" else 1.0
    policies = raw.get("policies", [1])
    sim = raw.get("simulation", {})
    thresholds = tuple(raw.get("thresholds", ()))
    rows = []
    for i, ell in enumerate(policies):
        policy = SwitchingPolicy(ell)
        if "K" in raw:
            K = int(raw["K"])
            point = analyze(model, raw["N"], K, raw["gamma"], raw["rho"], policy, thresholds)
        else:
            K, point = optimize_K(model, raw["gamma"], raw["rho"], policy, raw["N"], thresholds)
        base_seed = sim.get("seed", 0) if seed is None else seed
        rep = simulate(SimConfig(model, raw["N"], K, raw["gamma"], raw["rho"], policy,
                                 horizon=int(sim.get("horizon", 1_000_000)), seed=base_seed + i,
                                 decode_mode=sim.get("decode_mode", "formula"),
                                 warmup=int(sim.get("warmup", 10_000)), thresholds=thresholds))
        sim_row = rep.as_row()
        ana = point.report
        for name in REPORT_FIELDS[2:]:
            a = getattr(ana, name) if ana is not None else float("nan")
            if name == "throughput_bpcu" and ana is None:
                a = point.throughput_bpcu
            if name == "service_rate" and ana is None:
                a = point.service_rate
            s = sim_row[name]
            hw = sim_row.get(f"{name}_hw", float("nan"))
            if name == "mean_wait":
                a, s, hw = a * scale, s * scale, hw * scale
            rows.append([ell, K, name, a, s, hw])
    return ResultTable(["policy_ell", "K", "metric", "analytic", "simulated", "half_width"], rows,
                       {"wait_units": units})


def _check_variable(raw, expected):
    var = raw["sweep"]["variable"]
    if var != expected:
        raise ConfigError(f"{raw['kind']} sweeps {expected!r}, not {var!r}", "sweep.variable")


def run(config, jobs: int = 1, units: str = "cycles", seed=None) -> ResultTable:
    """Execute an experiment and return its table with provenance metadata."""
    cfg = config if isinstance(config, ExperimentConfig) else ExperimentConfig.from_dict(config)
    if units not in ("cycles", "ms"):
        raise ConfigError("units must be 'cycles' or 'ms'", "units")
    start = time.perf_counter()
    kind = cfg.kind
    if kind == "throughput_sweep":
        table = run_throughput_sweep(cfg, jobs)
    elif kind == "boundary_map":
        table = run_boundary_map(cfg, jobs)
    elif kind == "delay_sweep":
        table = run_delay_sweep(cfg, jobs, units)
    elif kind == "rayleigh_sweep":
        table = run_rayleigh_sweep(cfg, jobs, units)
    elif kind == "pomdp_policy":
        table = run_pomdp_policy(cfg, jobs)
    elif kind == "pomdp_mean_value":
        table = run_pomdp_mean_value(cfg, jobs)
    else:
        table = run_simulation(cfg, jobs, seed, units)
    table.metadata = {
        "kind": kind,
        "config_hash": cfg.config_hash,
        "tool_version": __version__,
        "wall_time_s": round(time.perf_counter() - start, 3),
        **table.metadata,
    }
    return table


__all__ = [
    "ExperimentConfig",
    "NoCrossoverError",
    "PRESETS",
    "ResultTable",
    "UnstableQueueError",
    "build_channel",
    "find_crossover",
    "run",
    "sweep_values",
]
