"""Acceptance checks against published figure data and independent oracles.

Each test records one PASS/FAIL line (shown in the terminal summary) and then
asserts the same condition.
"""
import time

import numpy as np
import pytest
from scipy import stats

from virtual_channel import FadingChannelModel, SwitchingPolicy, make_gilbert_elliott
from virtual_channel.code_performance import (
    decode_matrices,
    erasure_joint_distribution,
    gf2_failure_oracle,
    random_code_failure,
    segment_params,
)
from virtual_channel.experiments import ExperimentConfig, run
from virtual_channel.pomdp import build_pomdp, extract_thresholds, value_iteration
from virtual_channel.qbd import build_blocks, optimize_K, service_rate, solve, stability_check
from virtual_channel.simulation import SimConfig, rollout_pomdp, simulate

from conftest import GAMMA, N_GSM, RHO, random_model, record_acceptance
from test_qbd import balance_residual

pytestmark = pytest.mark.slow

# published mean value curves, memory 0.1 .. 0.9 step 0.05
FIG11_FIXED = [5.08181, 5.33837, 5.52839, 5.68756, 5.8067, 5.89968, 5.96839, 6.02465, 6.04746,
               6.04106, 6.00921, 5.93015, 5.80824, 5.62613, 5.3026, 4.80827, 4.00926]
FIG11_RECONF = [5.08181, 5.33837, 5.52839, 5.68756, 5.8067, 5.90014, 6.28625, 6.50643, 6.73286,
                7.00034, 7.26049, 7.51528, 7.7707, 8.02166, 8.26724, 8.51288, 8.76976]


def check(criterion, passed, detail):
    record_acceptance(criterion, bool(passed), detail)
    assert passed, detail


def enumerate_law(model, N):
    """Joint erasure/end-state law by explicit sum over all k**(N+1) state paths."""
    k = model.k
    B, eps = np.asarray(model.B), np.asarray(model.epsilons)
    paths = np.indices((k,) * (N + 1)).reshape(N + 1, -1).T
    prob = np.prod(B[paths[:, :-1], paths[:, 1:]], axis=1)
    dist = np.zeros((paths.shape[0], N + 1))
    dist[:, 0] = 1.0
    for n in range(N):
        e = eps[paths[:, n]][:, None]
        nxt = dist * (1 - e)
        nxt[:, 1:] += dist[:, :-1] * e
        dist = nxt
    phi = np.zeros((k, k, N + 1))
    np.add.at(phi, (paths[:, 0], paths[:, -1]), prob[:, None] * dist)
    return phi


def test_criterion_1_failure_law():
    start = time.perf_counter()
    trials = 100_000
    worst = 0.0
    ok = True
    for e in range(1, 12):
        p = random_code_failure(10, e)
        est = gf2_failure_oracle(20, 10, e, trials, seed=1000 + e)
        se = np.sqrt(p * (1 - p) / trials)
        z = abs(est - p) / se if se > 0 else (0.0 if est == p else np.inf)
        worst = max(worst, z)
        ok &= z <= 3
    elapsed = time.perf_counter() - start
    check(1, ok and elapsed < 30,
          f"GF(2) oracle vs formula, (20,10,e) e=1..11: max |z| = {worst:.2f} (<= 3), {elapsed:.1f}s (< 30s)")


def test_criterion_2_erasure_law():
    start = time.perf_counter()
    grid = [0.05, 0.25, 0.5, 0.75, 0.95]
    worst = 0.0
    for b12 in grid:
        for b21 in grid:
            m = FadingChannelModel([[1 - b12, b12], [b21, 1 - b21]], [0.8, 0.1])
            for N in range(1, 13):
                diff = np.max(np.abs(erasure_joint_distribution(m, N).phi - enumerate_law(m, N)))
                worst = max(worst, diff)
    elapsed = time.perf_counter() - start
    check(2, worst < 1e-12 and elapsed < 10,
          f"DP vs path enumeration, 25 models, N=1..12: max error {worst:.2e} (< 1e-12), {elapsed:.1f}s (< 10s)")


def test_criterion_3a_global_balance():
    rng = np.random.default_rng(2024)
    residuals = []
    while len(residuals) < 50:
        k = int(rng.integers(2, 4))
        m = random_model(rng, k, min_stay=0.9)
        N = int(rng.integers(8, 40))
        K = int(rng.integers(1, N + 1))
        dm = decode_matrices(erasure_joint_distribution(m, N), K)
        seg = segment_params(float(rng.uniform(0.01, 0.6)), float(rng.uniform(0.02, 0.5)), K)
        pol = SwitchingPolicy(int(rng.integers(1, k + 1)))
        mu = service_rate(m, dm, pol)
        if not stability_check(seg, mu):
            continue
        blocks = build_blocks(m, dm, seg, pol)
        residuals.append(balance_residual(blocks, solve(blocks, seg, mu)))
    worst = max(residuals)
    check("3a", worst < 1e-9, f"global balance on levels 0-5, 50 random stable instances: max residual {worst:.2e} (< 1e-9)")


def test_criterion_3b_simulation():
    start = time.perf_counter()
    model = make_gilbert_elliott(0.2, 0.3, N_GSM, (0.5, 0.125))
    details = []
    ok = True
    for ell in (1, 2):
        pol = SwitchingPolicy(ell)
        K, point = optimize_K(model, GAMMA, RHO, pol, N_GSM)
        ana = point.report
        sim = simulate(SimConfig(model, N_GSM, K, GAMMA, RHO, pol, horizon=10_000_000, seed=ell))
        t = stats.t.ppf(0.975, 49)
        se_q = sim.half_widths["mean_queue"] / t
        rel_thr = abs(sim.throughput_bpcu / ana.throughput_bpcu - 1)
        z_q = abs(sim.mean_queue - ana.mean_queue) / se_q
        ok &= rel_thr <= 0.01 and z_q <= 3
        details.append(f"ell={ell} K={K}: throughput {sim.throughput_bpcu:.5f} vs {ana.throughput_bpcu:.5f} "
                       f"({100 * rel_thr:.2f}%), queue {sim.mean_queue:.3f} vs {ana.mean_queue:.3f} ({z_q:.2f} SE)")
    elapsed = time.perf_counter() - start
    check("3b", ok and elapsed < 300, "; ".join(details) + f"; {elapsed:.0f}s")


@pytest.fixture(scope="module")
def fig3_table():
    return run(ExperimentConfig.preset("fig3"))


def test_criterion_4_fig3_crossover(fig3_table):
    x = fig3_table.metadata["crossover_memory"]
    sojourn = fig3_table.metadata["crossover_sojourn_bits"]
    check(4, abs(x - 0.28) <= 0.02 and abs(sojourn - 113) <= 8,
          f"crossover memory {x:.4f} (0.28 +- 0.02), bad-state sojourn {sojourn:.1f} bits (113 +- 8)")


def test_criterion_5_fig4_boundary():
    doc = dict(ExperimentConfig.preset("fig4").raw)
    doc["sweep"] = {"variable": "epsilon1", "values": [0.3, 0.5, 0.8]}
    table = run(doc)
    got = table.column("boundary_memory")
    want = np.array([0.603, 0.282, 0.177])
    err = np.abs(got - want)
    check(5, np.all(err <= 0.02),
          "boundary at eps1=0.3/0.5/0.8: " + ", ".join(f"{g:.4f} (published {w})" for g, w in zip(got, want)))


def test_criterion_6_fig5_delay(fig3_table):
    crossing = fig3_table.metadata["crossover_memory"]
    table = run(ExperimentConfig.preset("fig5"))
    mem = table.column("memory")
    static, switching = table.column("mean_wait_ell1"), table.column("mean_wait_ell2")
    above = mem > crossing + 0.05
    below = mem < crossing - 0.05
    ok = np.all(switching[above] < static[above]) and np.all(switching[below] > static[below])
    check(6, ok, f"switching wait lower for memory > {crossing + 0.05:.3f} ({above.sum()} pts) and higher "
                 f"for memory < {crossing - 0.05:.3f} ({below.sum()} pts); delay crossover "
                 f"{table.metadata['crossover_memory']:.3f}")


def test_criterion_7_fig9_thresholds():
    start = time.perf_counter()
    model = make_gilbert_elliott(0.2, 0.3, N_GSM, (1.0, 0.0))
    vf = value_iteration(build_pomdp(model, N_GSM, 0.9), 2000)
    th = extract_thresholds(vf)
    first_x, first_a = th.boundaries[0]
    onset = next(x for x, a in th.boundaries if a == N_GSM)
    elapsed = time.perf_counter() - start
    ok = (th.initial_action == 0 and abs(first_x - 0.0746) <= 0.01 and abs(onset - 0.5457) <= 0.01
          and th.monotone and elapsed < 300)
    check(7, ok, f"reconfigure/transmit boundary {first_x:.5f} (0.0746 +- 0.01), rate-1 onset {onset:.5f} "
                 f"(0.5457 +- 0.01), monotone={th.monotone}, {elapsed:.1f}s")


def test_criterion_8_fig11_mean_values():
    table = run(ExperimentConfig.preset("fig11"))
    mem = table.column("memory")
    fixed, reconf = table.column("mean_value_fixed"), table.column("mean_value_reconfigurable")
    low = mem <= 0.30 + 1e-9
    agree = np.max(np.abs(fixed[low] - reconf[low]))
    gap = reconf[-1] - fixed[-1]
    rel = np.concatenate([np.abs(fixed / FIG11_FIXED - 1), np.abs(reconf / FIG11_RECONF - 1)])
    within = int(np.sum(rel <= 0.02))
    ok = agree <= 0.02 and gap >= 4.0 and within == rel.size
    check(8, ok, f"agreement for memory <= 0.3: max diff {agree:.4f} (<= 0.02); gap at 0.9: {gap:.3f} (>= 4.0, "
                 f"fixed {fixed[-1]:.3f} vs published 4.009, reconf {reconf[-1]:.3f} vs published 8.770); "
                 f"{within}/{rel.size} values within 2% (worst {100 * rel.max():.1f}%)")


def test_criterion_9_rayleigh():
    table = run(ExperimentConfig.preset("fig7"))
    fixed_thr = table.column("throughput_ell1")
    fixed_wait = table.column("mean_wait_ell1")
    switch = (4, 5, 6)
    ok_fixed = np.all(np.diff(fixed_thr) >= -1e-12)
    ok_switch = all(np.all(np.diff(table.column(f"throughput_ell{e}")) <= 1e-12) for e in switch)
    ok_40 = all(table.column(f"throughput_ell{e}")[0] > fixed_thr[0]
                and table.column(f"mean_wait_ell{e}")[0] < fixed_wait[0] for e in switch)
    gap = table.column("mean_wait_ell6") - fixed_wait
    ok_cross = gap[0] < 0 < gap[-1]
    crossing = table.column("doppler_hz")[np.argmax(gap > 0)]
    check(9, ok_fixed and ok_switch and ok_40 and ok_cross,
          f"fixed throughput nondecreasing={ok_fixed}, switching nonincreasing={ok_switch}, "
          f"switching better at 40 Hz={ok_40}, 5-state-set wait exceeds fixed from {crossing:g} Hz; "
          f"fixed throughput at 40 Hz {fixed_thr[0]:.6f} (reported only, published 0.526109)")


def test_criterion_10_rollout():
    model = make_gilbert_elliott(0.2, 0.3, N_GSM, (1.0, 0.0))
    pomdp = build_pomdp(model, N_GSM, 0.9)
    vf = value_iteration(pomdp, 1000)
    target = vf.value_at(pomdp.p_c)
    mean, hw = rollout_pomdp(pomdp, vf, episodes=10_000, steps=200, seed=0)
    rel = abs(mean / target - 1)
    check(10, rel <= 0.02, f"rollout {mean:.4f} +- {hw:.4f} vs V(p_C) = {target:.4f} ({100 * rel:.2f}%, <= 2%)")
