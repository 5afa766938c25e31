"""Erasure statistics over a codeword and random linear code performance."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numba
import numpy as np

from .channel_models import FadingChannelModel


@dataclass(frozen=True)
class ErasureJointLaw:
    """``phi[i, j, e] = Pr(E = e, C_{N+1} = j | C_1 = i)`` for one N-bit block."""

    N: int
    phi: np.ndarray

    @property
    def k(self) -> int:
        return self.phi.shape[0]

    @property
    def end_state_matrix(self) -> np.ndarray:
        """Marginal over the erasure count; equals ``B**N``."""
        return self.phi.sum(axis=2)

    def to_json(self) -> str:
        return json.dumps({"N": self.N, "phi": self.phi.tolist()})


@dataclass(frozen=True)
class DecodeMatrices:
    """Per-codeword decode outcome joint with the next channel state.

    ``p_ds[i, j]`` is the probability of decoding success and ending in state
    ``j`` given start state ``i``; ``p_df`` likewise for failure.
    """

    K: int
    p_ds: np.ndarray
    p_df: np.ndarray

    @property
    def success_prob(self) -> np.ndarray:
        return self.p_ds.sum(axis=1)


@dataclass(frozen=True)
class SegmentationParams:
    """Arrival process: a packet arrives per cycle w.p. ``gamma``; its length in
    bits is geometric(``rho``), so its segment count is geometric(``rho_r``)."""

    gamma: float
    rho: float
    K: int
    rho_r: float

    @property
    def arrival_rate(self) -> float:
        """Mean offered load in segments per codeword cycle."""
        return self.gamma / self.rho_r


def erasure_joint_distribution(model: FadingChannelModel, N: int) -> ErasureJointLaw:
    """Joint law of the erasure count and end state, by an N-step recursion.

    The state at a bit governs its erasure; the channel then moves according
    to ``B``.  Cost is O(N^2 k^3) with the start state carried as a batch axis.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    k = model.k
    B = model.B
    eps = model.epsilons
    mass = np.zeros((k, k, N + 1))
    mass[np.arange(k), np.arange(k), 0] = 1.0
    keep = (1.0 - eps)[None, :, None]
    lose = eps[None, :, None]
    for n in range(N):
        split = mass[:, :, : n + 2] * keep
        split[:, :, 1 : n + 2] += mass[:, :, : n + 1] * lose
        mass[:, :, : n + 2] = np.einsum("ise,sj->ije", split, B)
    return ErasureJointLaw(N=N, phi=mass)


def random_code_failure(r: int, e) -> np.ndarray | float:
    """Decoding failure probability of a random binary code with ``r`` parity bits
    after ``e`` erasures: ``1 - prod_{i<e} (1 - 2**(i - r))``.

    Vectorized over ``e``.
    """
    if r < 0:
        raise ValueError("redundancy must be nonnegative")
    scalar = np.ndim(e) == 0
    e = np.atleast_1d(np.asarray(e, dtype=np.int64))
    if np.any(e < 0):
        raise ValueError("erasure count must be nonnegative")
    top = int(e.max(initial=0))
    factors = 1.0 - np.exp2(np.arange(top, dtype=float) - r)
    # cumulative product over the first e factors; index 0 is the empty product
    survive = np.concatenate([[1.0], np.cumprod(factors)])
    out = np.clip(1.0 - survive[e], 0.0, 1.0)
    return float(out[0]) if scalar else out


def failure_table(r: int, N: int) -> np.ndarray:
    """``random_code_failure(r, e)`` for ``e = 0..N``."""
    return random_code_failure(r, np.arange(N + 1))


@numba.njit(cache=True)
def gf2_rank(rows):
    """Rank over GF(2) of a matrix whose rows are packed into uint64 words."""
    rows = rows.copy()
    rank = 0
    n = rows.shape[0]
    for bit in range(64):
        mask = np.uint64(1) << np.uint64(bit)
        pivot = -1
        for i in range(rank, n):
            if rows[i] & mask:
                pivot = i
                break
        if pivot < 0:
            continue
        tmp = rows[rank]
        rows[rank] = rows[pivot]
        rows[pivot] = tmp
        for i in range(n):
            if i != rank and (rows[i] & mask):
                rows[i] ^= rows[rank]
        rank += 1
        if rank == n:
            break
    return rank


@numba.njit(cache=True)
def erased_columns_dependent(H, erased):
    """True when the erased columns of parity-check matrix ``H`` are linearly dependent.

    ``H`` holds one uint64 word per parity row (bit n = column n).  The
    decoder recovers the erased bits iff those columns are independent.
    """
    e = erased.shape[0]
    if e == 0:
        return False
    r = H.shape[0]
    if e > r:
        return True
    # transpose: one packed word per erased column, bit t = parity row t
    cols = np.zeros(e, dtype=np.uint64)
    for c in range(e):
        pos = np.uint64(erased[c])
        word = np.uint64(0)
        for t in range(r):
            if (H[t] >> pos) & np.uint64(1):
                word |= np.uint64(1) << np.uint64(t)
        cols[c] = word
    return gf2_rank(cols) < e


@numba.njit(cache=True)
def _gf2_trials(words, N, r, e):
    trials = words.shape[0]
    erased = np.arange(e)
    fails = 0
    for t in range(trials):
        if erased_columns_dependent(words[t], erased):
            fails += 1
    return fails


def random_parity_rows(rng: np.random.Generator, shape, N: int) -> np.ndarray:
    """Uniform random GF(2) rows of length ``N`` packed into uint64 words."""
    words = rng.integers(0, np.iinfo(np.uint64).max, size=shape, dtype=np.uint64, endpoint=True)
    if N < 64:
        words &= np.uint64((1 << N) - 1)
    return words


def gf2_failure_oracle(N: int, K: int, e: int, trials: int, seed=None) -> float:
    """Empirical decoding failure rate with sampled parity-check matrices.

    Each trial draws an ``(N-K) x N`` uniform binary ``H``, erases the first
    ``e`` positions and fails when the erased columns are dependent.
    """
    if N > 64:
        raise ValueError("GF(2) oracle packs rows into 64-bit words; N must be <= 64")
    if not 0 <= K <= N:
        raise ValueError("need 0 <= K <= N")
    if not 0 <= e <= N:
        raise ValueError("need 0 <= e <= N")
    if trials < 1:
        raise ValueError("trials must be positive")
    r = N - K
    if e == 0:
        return 0.0
    if e > r:
        return 1.0
    rng = np.random.default_rng(seed)
    words = random_parity_rows(rng, (trials, r), N)
    return _gf2_trials(words, N, r, e) / trials


def decode_matrices(law: ErasureJointLaw, K: int) -> DecodeMatrices:
    """Success and failure matrices for a code with ``K`` information bits."""
    N = law.N
    if not 1 <= K <= N:
        raise ValueError(f"K must lie in [1, {N}], got {K}")
    pf = failure_table(N - K, N)
    p_df = law.phi @ pf
    p_ds = law.phi @ (1.0 - pf)
    return DecodeMatrices(K=K, p_ds=p_ds, p_df=p_df)


def all_decode_matrices(law: ErasureJointLaw) -> tuple[np.ndarray, np.ndarray]:
    """Stacked success/failure matrices for every ``K = 1..N``; shape ``(N, k, k)``."""
    N = law.N
    e = np.arange(N + 1)
    pf = np.stack([random_code_failure(N - K, e) for K in range(1, N + 1)])
    p_df = np.einsum("ije,ae->aij", law.phi, pf)
    p_ds = np.einsum("ije,ae->aij", law.phi, 1.0 - pf)
    return p_ds, p_df


def segment_params(gamma: float, rho: float, K: int) -> SegmentationParams:
    """Segment-count parameter ``rho_r = 1 - (1 - rho)**K`` of a geometric packet."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if not 0.0 < rho <= 1.0:
        raise ValueError("rho must lie in (0, 1]")
    if K < 1:
        raise ValueError("K must be at least 1")
    rho_r = -np.expm1(K * np.log1p(-rho)) if rho < 1.0 else 1.0
    return SegmentationParams(gamma=float(gamma), rho=float(rho), K=int(K), rho_r=float(rho_r))
