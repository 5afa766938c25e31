"""Codeword-synchronized Monte Carlo simulation of the queue and of POMDP policies.

The channel is stepped bit by bit, erasures are drawn per bit, and decoding
either uses the closed-form failure law or an explicitly sampled random
parity-check matrix.  Randomness comes from three independent Philox streams
(channel, arrivals, decoding) spawned from one seed, so changing the decode
mode leaves channel paths untouched.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import stats

from .channel_models import FadingChannelModel
from .code_performance import erased_columns_dependent, failure_table, random_parity_rows
from .pomdp import RECONFIGURE, PomdpModel, ValueFunction
from .qbd import REPORT_FIELDS, SwitchingPolicy

_CHUNK = 8192
_QUEUE_CAP = 1 << 20
_HIST_LEVELS = 4096


@dataclass
class SimConfig:
    model: FadingChannelModel
    N: int
    K: int
    gamma: float
    rho: float
    policy: SwitchingPolicy = field(default_factory=SwitchingPolicy)
    horizon: int = 1_000_000
    seed: int = 0
    decode_mode: str = "formula"
    warmup: int = 10_000
    batches: int = 50
    thresholds: tuple = ()

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1 cycle")
        if self.decode_mode not in ("formula", "gf2"):
            raise ValueError("decode_mode must be 'formula' or 'gf2'")
        if self.decode_mode == "gf2" and self.N > 64:
            raise ValueError("gf2 decoding needs N <= 64")
        if not 1 <= self.K <= self.N:
            raise ValueError("need 1 <= K <= N")
        if self.warmup < 0:
            raise ValueError("warmup must be nonnegative")
        if self.batches < 2:
            raise ValueError("need at least two batches for confidence intervals")
        if self.horizon < self.batches:
            raise ValueError("horizon must cover at least one cycle per batch")


@dataclass
class SimReport:
    policy_ell: int
    K: int
    service_rate: float
    throughput_bpcu: float
    arrival_rate: float
    mean_queue: float
    mean_wait: float
    decay_rate: float
    ccdf: dict
    occupancy: np.ndarray
    level_counts: np.ndarray
    half_widths: dict
    cycles: int
    departures: int

    def as_row(self) -> dict:
        row = {name: getattr(self, name) for name in REPORT_FIELDS}
        for tau, p in self.ccdf.items():
            row[f"ccdf_{tau:g}"] = p
        for name, hw in self.half_widths.items():
            row[f"{name}_hw"] = hw
        return row

    def level_ratios(self, qmax: int) -> np.ndarray:
        """Empirical ``pi_{q+1} / pi_q`` for ``q = 1..qmax - 1``."""
        c = self.level_counts[1 : qmax + 1].astype(float)
        with np.errstate(divide="ignore", invalid="ignore"):
            return c[1:] / c[:-1]


@numba.njit(cache=True)
def _next_state(cum_row, u):
    k = cum_row.shape[0]
    for j in range(k - 1):
        if u < cum_row[j]:
            return j
    return k - 1


@numba.njit(cache=True)
def _run_chunk(state, t0, warmup, batch_len, chan_u, segs, dec_u, H, gf2,
               cumB, cum_pc, eps, reconf, pf, q_arr, q_seg, qstate,
               acc, batch_acc, hist, occupancy):
    """Advance the system over one chunk of cycles.

    ``qstate`` = [head, count] of the circular packet buffer.  ``acc`` holds
    running totals after warm-up: [cycles, successes, sum Q, departures,
    sum wait, arrived segments].  ``batch_acc`` has one such row per batch.
    """
    C = chan_u.shape[0]
    N = (chan_u.shape[1] - 1) // 2
    cap = q_arr.shape[0]
    hist_top = hist.shape[0] - 1
    positions = np.empty(N, dtype=np.int64)
    for c in range(C):
        t = t0 + c
        head = qstate[0]
        count = qstate[1]
        recording = t >= warmup
        b = -1
        if recording:
            b = (t - warmup) // batch_len
            if b >= batch_acc.shape[0]:
                b = batch_acc.shape[0] - 1
            occupancy[state] += 1
            lvl = count if count < hist_top else hist_top
            hist[lvl] += 1
            acc[0] += 1
            acc[2] += count
            batch_acc[b, 0] += 1
            batch_acc[b, 2] += count
        success = False
        if reconf[state]:
            state = _next_state(cum_pc, chan_u[c, 2 * N])
        else:
            e = 0
            s = state
            for n in range(N):
                if chan_u[c, n] < eps[s]:
                    positions[e] = n
                    e += 1
                s = _next_state(cumB[s], chan_u[c, N + n])
            state = s
            if gf2:
                fail = erased_columns_dependent(H[c], positions[:e])
            else:
                fail = dec_u[c] < pf[e]
            success = not fail
        if success and recording:
            acc[1] += 1
            batch_acc[b, 1] += 1
        if success and count > 0:
            q_seg[head] -= 1
            if q_seg[head] == 0:
                if recording:
                    w = t - q_arr[head]
                    acc[3] += 1
                    acc[4] += w
                    batch_acc[b, 3] += 1
                    batch_acc[b, 4] += w
                head = (head + 1) % cap
                count -= 1
        if segs[c] > 0:
            if count == cap:
                return state, -1
            tail = (head + count) % cap
            q_arr[tail] = t
            q_seg[tail] = segs[c]
            count += 1
            if recording:
                acc[5] += segs[c]
        qstate[0] = head
        qstate[1] = count
    return state, 0


def _streams(seed):
    children = np.random.SeedSequence(seed).spawn(3)
    return [np.random.Generator(np.random.Philox(s)) for s in children]


def _cumulative(rows):
    cum = np.cumsum(rows, axis=-1)
    cum[..., -1] = 1.0
    return cum


def _half_width(batch_values, conf=0.95):
    x = np.asarray(batch_values, dtype=float)
    x = x[np.isfinite(x)]
    if x.size < 2:
        return float("inf")
    q = stats.t.ppf(0.5 + conf / 2, x.size - 1)
    return float(max(q * x.std(ddof=1) / np.sqrt(x.size), np.finfo(float).tiny))


def simulate(config: SimConfig) -> SimReport:
    """Simulate ``warmup + horizon`` codeword cycles and summarize the last ``horizon``.

    Per cycle: if the onset state is in the reconfigure set the slot is
    lost and the next state is drawn from the stationary law; otherwise ``N``
    bits are sent, erasures counted and decoding decided.  A success serves
    the head-of-line segment when the queue is nonempty (success
    opportunities are counted either way, giving the service rate).  Then a
    packet arrives with probability ``gamma``; its length in bits is
    geometric(``rho``) and it is cut into ``ceil(L / K)`` segments.
    """
    cfg = config
    model = cfg.model
    N, K = cfg.N, cfg.K
    rng_ch, rng_arr, rng_dec = _streams(cfg.seed)
    cumB = _cumulative(model.B)
    cum_pc = _cumulative(model.stationary)
    reconf = cfg.policy.reconfigure_mask(model.k)
    pf = failure_table(N - K, N)
    gf2 = cfg.decode_mode == "gf2"
    r = N - K

    total = cfg.warmup + cfg.horizon
    batch_len = max(1, cfg.horizon // cfg.batches)
    q_arr = np.zeros(_QUEUE_CAP, dtype=np.int64)
    q_seg = np.zeros(_QUEUE_CAP, dtype=np.int64)
    qstate = np.zeros(2, dtype=np.int64)
    acc = np.zeros(6)
    batch_acc = np.zeros((cfg.batches, 6))
    hist = np.zeros(_HIST_LEVELS + 1, dtype=np.int64)
    occupancy = np.zeros(model.k, dtype=np.int64)
    state = int(_next_state(cum_pc, rng_ch.random()))
    empty_H = np.zeros((1, 1), dtype=np.uint64)
    empty_u = np.zeros(1)

    t = 0
    while t < total:
        C = min(_CHUNK, total - t)
        chan_u = rng_ch.random((C, 2 * N + 1))
        arrive = rng_arr.random(C) < cfg.gamma
        lengths = rng_arr.geometric(cfg.rho, C)
        segs = np.where(arrive, -(-lengths // K), 0).astype(np.int64)
        if gf2:
            H = random_parity_rows(rng_dec, (C, max(r, 1)), N)
            if r == 0:
                H[:] = 0
            dec_u = empty_u
        else:
            H = empty_H
            dec_u = rng_dec.random(C)
        state, status = _run_chunk(state, t, cfg.warmup, batch_len, chan_u, segs, dec_u, H,
                                   gf2, cumB, cum_pc, model.epsilons, reconf, pf,
                                   q_arr, q_seg, qstate, acc, batch_acc, hist, occupancy)
        if status < 0:
            raise OverflowError("queue exceeded simulator capacity; the configuration is likely unstable")
        t += C

    cycles = acc[0]
    service = acc[1] / cycles
    mean_queue = acc[2] / cycles
    departures = int(acc[3])
    mean_wait = acc[4] / departures if departures else float("nan")
    with np.errstate(divide="ignore", invalid="ignore"):
        b_service = batch_acc[:, 1] / batch_acc[:, 0]
        b_queue = batch_acc[:, 2] / batch_acc[:, 0]
        b_wait = batch_acc[:, 4] / batch_acc[:, 3]
    half = {
        "service_rate": _half_width(b_service),
        "throughput_bpcu": K / N * _half_width(b_service),
        "mean_queue": _half_width(b_queue),
        "mean_wait": _half_width(b_wait),
    }
    level_probs = hist / cycles
    tail = 1.0 - np.cumsum(level_probs)
    ccdf = {float(tau): float(max(0.0, tail[int(np.floor(tau))])) if tau >= 0 else 1.0
            for tau in cfg.thresholds}
    ratios = level_probs[2:12] / np.where(level_probs[1:11] > 0, level_probs[1:11], np.nan)
    ratios = ratios[np.isfinite(ratios) & (ratios > 0)]
    decay = float(np.log(np.median(ratios))) if ratios.size else float("nan")
    return SimReport(
        policy_ell=cfg.policy.ell,
        K=K,
        service_rate=float(service),
        throughput_bpcu=K / N * float(service),
        arrival_rate=float(acc[5] / cycles),
        mean_queue=float(mean_queue),
        mean_wait=float(mean_wait),
        decay_rate=decay,
        ccdf=ccdf,
        occupancy=occupancy / cycles,
        level_counts=hist,
        half_widths=half,
        cycles=int(cycles),
        departures=departures,
    )


def rollout_pomdp(pomdp: PomdpModel, policy: ValueFunction, episodes: int = 10_000,
                  steps: int = 200, seed=0, conf: float = 0.95) -> tuple[float, float]:
    """Mean discounted reward of a belief-grid policy, with a confidence half-width.

    Episodes start from the stationary law (belief and true state).  Each
    step looks up the action at the grid point nearest to the current belief,
    simulates the true channel for one codeword (or redraws it on
    reconfiguration), and updates the belief from ACK/NACK.
    """
    rng_ch, _, rng_dec = _streams(seed)
    model = pomdp.model
    N = pomdp.N
    cumB = _cumulative(model.B)
    cum_pc = _cumulative(model.stationary)
    eps = model.epsilons
    pf_tables = np.stack([failure_table(N - a, N) for a in range(1, N + 1)])
    pc = pomdp.p_c

    def draw(cum_rows, u):
        # inverse-CDF draw; cum_rows is one CDF or one CDF per episode
        return np.sum(u[:, None] >= cum_rows[..., :-1], axis=-1)

    state = draw(cum_pc, rng_ch.random(episodes))
    belief = np.tile(pc, (episodes, 1))
    total = np.zeros(episodes)
    discount = 1.0
    for _ in range(steps):
        action = policy.policy[policy.grid.nearest(belief)]
        send = action != RECONFIGURE
        redraw = draw(cum_pc, rng_ch.random(episodes))
        erasures = np.zeros(episodes, dtype=np.int64)
        s = state
        for _bit in range(N):
            erasures += rng_ch.random(episodes) < eps[s]
            s = draw(cumB[s], rng_ch.random(episodes))
        a_idx = np.maximum(action, 1) - 1
        fail = rng_dec.random(episodes) < pf_tables[a_idx, erasures]
        ack = send & ~fail
        total += discount * np.where(ack, action / N, 0.0)
        discount *= pomdp.beta
        mats = np.where(ack[:, None, None], pomdp.p_ds[a_idx], pomdp.p_df[a_idx])
        joint = np.einsum("ei,eij->ej", belief, mats)
        norm = joint.sum(axis=1, keepdims=True)
        updated = np.where(norm > 0, joint / np.where(norm > 0, norm, 1.0), pc)
        belief = np.where(send[:, None], updated, pc)
        state = np.where(send, s, redraw)
    mean = float(total.mean())
    hw = float(stats.t.ppf(0.5 + conf / 2, episodes - 1) * total.std(ddof=1) / np.sqrt(episodes)) \
        if episodes > 1 else float("inf")
    return mean, hw
