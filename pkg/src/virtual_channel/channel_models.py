"""Finite-state per-bit erasure channels.

A channel is a time-homogeneous Markov chain over ``k`` states; in state ``i``
each transmitted bit is erased with probability ``epsilons[i]``.  States are
ordered from worst to best (erasure probabilities nonincreasing).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ChannelModelError

#: Erasure probabilities of the 8-state Rayleigh-derived channel, worst state first.
RAYLEIGH8_EPSILONS = (0.4244, 0.3591, 0.3134, 0.2732, 0.2348, 0.1954, 0.1512, 0.0879)

_ROW_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class FadingChannelModel:
    """Per-bit Markov erasure channel.

    Parameters
    ----------
    B : array_like, shape (k, k)
        Row-stochastic per-bit transition matrix.
    epsilons : array_like, shape (k,)
        Per-state bit erasure probabilities, nonincreasing in the state index.

    The model is validated eagerly (stochasticity, irreducibility,
    aperiodicity, ordering) and its arrays are made read-only.
    """

    B: np.ndarray
    epsilons: np.ndarray
    _stationary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        B = np.array(self.B, dtype=float)
        eps = np.array(self.epsilons, dtype=float).reshape(-1)
        if B.ndim != 2 or B.shape[0] != B.shape[1] or B.shape[0] < 1:
            raise ChannelModelError(f"B must be a square matrix, got shape {B.shape}")
        k = B.shape[0]
        if eps.shape != (k,):
            raise ChannelModelError(f"expected {k} erasure probabilities, got {eps.shape[0]}")
        if not np.all(np.isfinite(B)) or np.any(B < 0):
            raise ChannelModelError("B has negative or non-finite entries")
        if np.max(np.abs(B.sum(axis=1) - 1.0)) > _ROW_TOL:
            raise ChannelModelError("rows of B must sum to 1")
        if np.any(eps < 0) or np.any(eps > 1):
            raise ChannelModelError("erasure probabilities must lie in [0, 1]")
        if np.any(np.diff(eps) > 0):
            raise ChannelModelError("states must be ordered by nonincreasing erasure probability")
        if not is_primitive(B):
            raise ChannelModelError("B must be irreducible and aperiodic")
        B.setflags(write=False)
        eps.setflags(write=False)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "epsilons", eps)
        pc = _solve_stationary(B)
        pc.setflags(write=False)
        object.__setattr__(self, "_stationary", pc)

    @property
    def k(self) -> int:
        return self.B.shape[0]

    @property
    def stationary(self) -> np.ndarray:
        return self._stationary

    @property
    def average_erasure(self) -> float:
        return float(self._stationary @ self.epsilons)

    def with_epsilons(self, epsilons) -> "FadingChannelModel":
        return FadingChannelModel(self.B, epsilons)

    def to_dict(self) -> dict:
        return {"k": self.k, "B": self.B.tolist(), "epsilons": self.epsilons.tolist()}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, doc: dict) -> "FadingChannelModel":
        try:
            B, eps = doc["B"], doc["epsilons"]
        except KeyError as exc:
            raise ChannelModelError(f"channel document is missing field {exc}") from None
        model = cls(B, eps)
        if "k" in doc and int(doc["k"]) != model.k:
            raise ChannelModelError(f"declared k={doc['k']} does not match B ({model.k} states)")
        return model

    @classmethod
    def from_json(cls, text: str) -> "FadingChannelModel":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, FadingChannelModel):
            return NotImplemented
        return np.array_equal(self.B, other.B) and np.array_equal(self.epsilons, other.epsilons)

    __hash__ = None


def is_primitive(B: np.ndarray) -> bool:
    """True when the nonnegative matrix ``B`` is irreducible and aperiodic.

    Uses Wielandt's bound: a primitive k x k matrix has ``B**m > 0`` for
    ``m = (k-1)**2 + 1``.  Only the zero pattern matters, so the power is
    taken on boolean matrices by repeated squaring.
    """
    k = B.shape[0]
    P = (np.asarray(B) > 0).astype(np.int64)
    m = (k - 1) ** 2 + 1
    result = np.eye(k, dtype=np.int64)
    while m:
        if m & 1:
            result = np.minimum(result @ P, 1)
        P = np.minimum(P @ P, 1)
        m >>= 1
    return bool(np.all(result > 0))


def _solve_stationary(B: np.ndarray) -> np.ndarray:
    k = B.shape[0]
    A = np.vstack([B.T - np.eye(k), np.ones((1, k))])
    rhs = np.zeros(k + 1)
    rhs[-1] = 1.0
    p, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    p = np.clip(p, 0.0, None)
    return p / p.sum()


def stationary_distribution(model) -> np.ndarray:
    """Invariant law of the channel; accepts a model or a bare stochastic matrix."""
    if isinstance(model, FadingChannelModel):
        return model.stationary.copy()
    return _solve_stationary(np.asarray(model, dtype=float))


def n_step_matrix(model, N: int) -> np.ndarray:
    """``B**N`` by repeated squaring."""
    if N < 1:
        raise ValueError("N must be at least 1")
    B = model.B if isinstance(model, FadingChannelModel) else np.asarray(model, dtype=float)
    return np.linalg.matrix_power(B, int(N))


def memory_coefficient(model, N: int) -> float:
    """Codeword-level memory ``1 - b12^(N) - b21^(N)`` of a two-state channel."""
    if model.k != 2:
        raise ChannelModelError("memory coefficient is defined for two-state channels only")
    BN = n_step_matrix(model, N)
    return float(1.0 - BN[0, 1] - BN[1, 0])


def make_gilbert_elliott(p_bad: float, codeword_memory: float, N: int,
                         epsilons=(1.0, 0.0)) -> FadingChannelModel:
    """Two-state channel from its bad-state probability and codeword-level memory.

    State 1 (index 0) is the bad state.  The bit-level memory is
    ``codeword_memory ** (1/N)`` so that ``(1 - b12 - b21)**N`` equals
    ``codeword_memory``.
    """
    if not 0.0 < p_bad < 1.0:
        raise ChannelModelError("p_bad must lie in (0, 1)")
    if not 0.0 <= codeword_memory < 1.0:
        raise ChannelModelError("codeword_memory must lie in [0, 1)")
    if N < 1:
        raise ChannelModelError("N must be at least 1")
    total = 1.0 - codeword_memory ** (1.0 / N)
    b21 = p_bad * total
    b12 = total - b21
    if not (0.0 < b12 < 1.0 and 0.0 < b21 < 1.0):
        raise ChannelModelError(f"parameters give b12={b12}, b21={b21} outside (0, 1)")
    B = [[1.0 - b12, b12], [b21, 1.0 - b21]]
    return FadingChannelModel(B, epsilons)


def rayleigh_thresholds(k: int) -> np.ndarray:
    """Normalized SNR thresholds (SNR / mean SNR) of a k-region equiprobable partition.

    Returns ``k + 1`` values from 0 to inf.  The received SNR of a Rayleigh
    channel is exponential, so ``Pr(SNR > g) = exp(-g / mean)``.
    """
    j = np.arange(k + 1)
    with np.errstate(divide="ignore"):
        return -np.log1p(-j / k)


def make_rayleigh_fsmc(k: int, avg_snr_db: float, doppler_hz: float, bit_rate_bps: float,
                       epsilons) -> FadingChannelModel:
    """k-state Markov approximation of a Rayleigh fading channel stepped once per bit.

    The SNR range is cut into ``k`` equiprobable regions.  The rate at which
    the fading envelope crosses a threshold ``g`` (normalized by the mean SNR)
    is ``sqrt(2*pi*g) * doppler_hz * exp(-g)``; multiplying by the bit
    duration and dividing by the region probability gives the per-bit
    probability of moving to the adjacent region.

    ``avg_snr_db`` only fixes absolute thresholds; with an equiprobable
    partition the transition probabilities do not depend on it.  The
    erasure probabilities are taken as given.
    """
    if k < 2:
        raise ChannelModelError("Rayleigh FSMC needs at least two states")
    if doppler_hz <= 0:
        raise ChannelModelError("doppler_hz must be positive (no level crossings otherwise)")
    if bit_rate_bps <= 0:
        raise ChannelModelError("bit_rate_bps must be positive")
    eps = np.asarray(epsilons, dtype=float)
    if eps.shape != (k,):
        raise ChannelModelError(f"expected {k} erasure probabilities, got {eps.size}")
    del avg_snr_db  # see docstring
    g = rayleigh_thresholds(k)
    crossings = np.zeros(k + 1)
    inner = g[1:-1]
    crossings[1:-1] = np.sqrt(2.0 * math.pi * inner) * doppler_hz * np.exp(-inner)
    region_prob = 1.0 / k
    step = crossings / bit_rate_bps / region_prob
    B = np.zeros((k, k))
    for i in range(k):
        if i + 1 < k:
            B[i, i + 1] = step[i + 1]
        if i > 0:
            B[i, i - 1] = step[i]
        B[i, i] = 1.0 - B[i].sum()
    if np.any(B < 0) or np.any(B > 1):
        raise ChannelModelError("Doppler too high for bit-level stepping: transition probability outside [0, 1]")
    return FadingChannelModel(B, eps)
