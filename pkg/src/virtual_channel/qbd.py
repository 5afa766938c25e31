"""Level-structured Markov chain of the codeword-synchronized queue.

Levels are queue lengths (packets) and phases are channel states sampled at
codeword boundaries.  The generator has the repeating block structure::

    [C1 C2 0  0 ...]
    [A0 A1 A2 0 ...]
    [0  A0 A1 A2 ...]

with ``A0`` moving one level down, ``A1`` staying and ``A2`` moving up.  The
stationary law is ``pi_q = pi_1 R**(q-1)`` for ``q >= 1`` where
``R = A2 (I - U)^-1`` and ``U`` is the taboo matrix of first returns.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channel_models import FadingChannelModel, n_step_matrix, stationary_distribution
from .code_performance import (
    DecodeMatrices,
    SegmentationParams,
    all_decode_matrices,
    decode_matrices,
    erasure_joint_distribution,
    segment_params,
)
from .errors import ConvergenceError, NumericalError, UnstableQueueError

REPORT_FIELDS = (
    "policy_ell",
    "K",
    "service_rate",
    "throughput_bpcu",
    "arrival_rate",
    "mean_queue",
    "mean_wait",
    "decay_rate",
)


@dataclass(frozen=True)
class SwitchingPolicy:
    """Hierarchical reconfiguration rule.

    States ``1..ell-1`` (1-based) trigger an antenna reconfiguration; states
    ``ell..k`` transmit.  ``ell=1`` is the static (fixed-antenna) system.
    """

    ell: int = 1

    def __post_init__(self):
        if self.ell < 1:
            raise ValueError("ell must be at least 1")

    @classmethod
    def static(cls) -> "SwitchingPolicy":
        return cls(1)

    @classmethod
    def from_reconfigure_set(cls, states) -> "SwitchingPolicy":
        """Policy from a set of 1-based reconfigure states, which must be a prefix {1..m}."""
        states = sorted(set(int(s) for s in states))
        if states != list(range(1, len(states) + 1)):
            raise ValueError(f"reconfigure set {states} is not of the form {{1, ..., m}}")
        return cls(len(states) + 1)

    def reconfigure_mask(self, k: int) -> np.ndarray:
        if self.ell > k + 1:
            raise ValueError(f"ell={self.ell} exceeds k+1={k + 1}")
        mask = np.zeros(k, dtype=bool)
        mask[: self.ell - 1] = True
        return mask


@dataclass(frozen=True)
class QbdBlocks:
    A0: np.ndarray
    A1: np.ndarray
    A2: np.ndarray
    C1: np.ndarray
    C2: np.ndarray

    @property
    def k(self) -> int:
        return self.A1.shape[0]


@dataclass(frozen=True)
class QbdSolution:
    U: np.ndarray
    R: np.ndarray
    pi0: np.ndarray
    pi1: np.ndarray
    stable: bool
    iterations: int

    @property
    def spectral_radius(self) -> float:
        return spectral_radius(self.R)

    def level(self, q: int) -> np.ndarray:
        """Stationary probabilities of level ``q`` (one entry per channel state)."""
        if q == 0:
            return self.pi0.copy()
        return self.pi1 @ np.linalg.matrix_power(self.R, q - 1)

    def levels(self, qmax: int) -> np.ndarray:
        """Rows ``pi_0 .. pi_qmax``."""
        out = np.empty((qmax + 1, self.pi0.size))
        out[0] = self.pi0
        if qmax >= 1:
            out[1] = self.pi1
            for q in range(2, qmax + 1):
                out[q] = out[q - 1] @ self.R
        return out


@dataclass
class PerformanceReport:
    policy_ell: int
    K: int
    service_rate: float
    throughput_bpcu: float
    arrival_rate: float
    mean_queue: float
    mean_wait: float
    decay_rate: float
    ccdf: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        row = {name: getattr(self, name) for name in REPORT_FIELDS}
        for tau, p in self.ccdf.items():
            row[f"ccdf_{tau:g}"] = p
        return row


def spectral_radius(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def transition_matrix_with_policy(model: FadingChannelModel, N: int, policy: SwitchingPolicy) -> np.ndarray:
    """Codeword-boundary channel transition matrix: ``B**N`` with reconfigure rows set to ``p_C``."""
    BN = n_step_matrix(model, N)
    mask = policy.reconfigure_mask(model.k)
    BN[mask] = model.stationary
    return BN


def build_blocks(model: FadingChannelModel, decode: DecodeMatrices, seg: SegmentationParams,
                 policy: SwitchingPolicy = SwitchingPolicy()) -> QbdBlocks:
    k = model.k
    if decode.p_ds.shape != (k, k) or decode.p_df.shape != (k, k):
        raise ValueError(f"decode matrices have shape {decode.p_ds.shape}, channel has {k} states")
    if decode.K != seg.K:
        raise ValueError(f"decode matrices are for K={decode.K}, segmentation for K={seg.K}")
    g, rr = seg.gamma, seg.rho_r
    Pds, Pdf = decode.p_ds, decode.p_df
    stay = Pdf + Pds * (1.0 - rr)
    A0 = (1.0 - g) * Pds * rr
    A1 = (1.0 - g) * stay + g * Pds * rr
    A2 = g * stay
    BN = Pds + Pdf
    C1 = (1.0 - g) * BN
    C2 = g * BN
    mask = policy.reconfigure_mask(k)
    if mask.any():
        pc = model.stationary
        A0[mask] = 0.0
        A1[mask] = (1.0 - g) * pc
        A2[mask] = g * pc
        C1[mask] = (1.0 - g) * pc
        C2[mask] = g * pc
    return QbdBlocks(A0=A0, A1=A1, A2=A2, C1=C1, C2=C2)


def neuts_U(blocks: QbdBlocks, tol: float = 1e-13, max_iter: int = 100_000,
            trace=None) -> tuple[np.ndarray, int]:
    """Fixed point of ``U = A1 + A2 (I - U)^-1 A0`` starting from ``U = A1``.

    Returns ``(U, iterations)``.  ``trace``, if given, is called with every
    iterate (used to check monotonicity).
    """
    A0, A1, A2 = blocks.A0, blocks.A1, blocks.A2
    eye = np.eye(blocks.k)
    U = A1.copy()
    if trace is not None:
        trace(U)
    for it in range(1, max_iter + 1):
        try:
            U_next = A1 + A2 @ np.linalg.solve(eye - U, A0)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"I - U is singular at iteration {it}") from exc
        delta = np.max(np.abs(U_next - U))
        U = U_next
        if trace is not None:
            trace(U)
        if delta < tol:
            return U, it
    raise ConvergenceError(f"taboo-matrix iteration did not converge in {max_iter} steps",
                           last=U, delta=delta)


def rate_matrix(blocks: QbdBlocks, U: np.ndarray) -> np.ndarray:
    eye = np.eye(blocks.k)
    # R = A2 (I - U)^-1  <=>  R (I - U) = A2
    R = np.linalg.solve((eye - U).T, blocks.A2.T).T
    return np.clip(R, 0.0, None)


def boundary_distribution(blocks: QbdBlocks, R: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Solve the reduced 2k-state chain for ``(pi0, pi1)`` and normalize globally."""
    k = blocks.k
    if spectral_radius(R) >= 1.0:
        raise NumericalError("unstable: spectral radius of R is not below 1")
    top = np.hstack([blocks.C1, blocks.C2])
    bottom = np.hstack([blocks.A0, blocks.A1 + R @ blocks.A0])
    P = np.vstack([top, bottom])
    n = 2 * k
    eye = np.eye(k)
    # normalization: pi0.1 + pi1 (I-R)^-1 .1 = 1
    weights = np.concatenate([np.ones(k), np.linalg.solve(eye - R, np.ones(k))])
    A = np.vstack([P.T - np.eye(n), weights[None, :]])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    x, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    x = np.clip(x, 0.0, None)
    x /= x @ weights
    return x[:k], x[k:]


def service_rate(model: FadingChannelModel, decode: DecodeMatrices,
                 policy: SwitchingPolicy = SwitchingPolicy(), N: int | None = None) -> float:
    """Mean number of successfully decoded segments per codeword cycle.

    For a switching policy the channel state at codeword onsets follows
    ``B**N`` with reconfigure rows replaced by ``p_C``; its invariant law
    weights the success probabilities of the transmit states.
    """
    mask = policy.reconfigure_mask(model.k)
    if mask.all():
        return 0.0
    if mask.any():
        BN = decode.p_ds + decode.p_df
        BN[mask] = model.stationary
        p = stationary_distribution(BN)
    else:
        p = model.stationary
    success = decode.p_ds.sum(axis=1)
    return float(np.sum(p[~mask] * success[~mask]))


def service_rate_from_blocks(blocks: QbdBlocks, seg: SegmentationParams) -> float:
    """Service rate recovered from the blocks alone.

    The phase process above level 0 has transition matrix ``A0 + A1 + A2``;
    the down-step mass of each row is ``(1 - gamma) rho_r`` times its
    decoding success probability.
    """
    phase = stationary_distribution(blocks.A0 + blocks.A1 + blocks.A2)
    return float(phase @ blocks.A0.sum(axis=1) / ((1.0 - seg.gamma) * seg.rho_r))


def stability_check(seg: SegmentationParams, service: float) -> bool:
    """Positive recurrence iff mean arrivals (segments/block) are strictly below service."""
    return seg.gamma / seg.rho_r < service


def solve(blocks: QbdBlocks, seg: SegmentationParams, service: float,
          tol: float = 1e-13, max_iter: int = 100_000) -> QbdSolution:
    """Run the full matrix-geometric pipeline; raises when the queue is unstable."""
    if not stability_check(seg, service):
        raise UnstableQueueError(seg.arrival_rate, service)
    U, iterations = neuts_U(blocks, tol=tol, max_iter=max_iter)
    R = rate_matrix(blocks, U)
    pi0, pi1 = boundary_distribution(blocks, R)
    return QbdSolution(U=U, R=R, pi0=pi0, pi1=pi1, stable=True, iterations=iterations)


def ccdf(solution: QbdSolution, tau: float) -> float:
    """``Pr(Q > tau)`` from the finite sum over levels ``0..floor(tau)``."""
    if tau < 0:
        return 1.0
    q = int(np.floor(tau))
    mass = solution.levels(q).sum()
    return float(min(1.0, max(0.0, 1.0 - mass)))


def performance_report(blocks: QbdBlocks, solution: QbdSolution, seg: SegmentationParams,
                       K: int, N: int, thresholds=(), service: float | None = None,
                       policy: SwitchingPolicy = SwitchingPolicy()) -> PerformanceReport:
    if not solution.stable:
        raise NumericalError("performance metrics need a stable solution")
    k = blocks.k
    eye = np.eye(k)
    inv = np.linalg.inv(eye - solution.R)
    mean_queue = float(solution.pi1 @ inv @ inv @ np.ones(k))
    mean_wait = mean_queue / seg.gamma if seg.gamma > 0 else 0.0
    rad = solution.spectral_radius
    decay = float(np.log(rad)) if rad > 0 else -np.inf
    if service is None:
        service = service_rate_from_blocks(blocks, seg)
    return PerformanceReport(
        policy_ell=policy.ell,
        K=K,
        service_rate=float(service),
        throughput_bpcu=K / N * float(service),
        arrival_rate=seg.arrival_rate,
        mean_queue=mean_queue,
        mean_wait=mean_wait,
        decay_rate=decay,
        ccdf={float(t): ccdf(solution, t) for t in thresholds},
    )


@dataclass
class OperatingPoint:
    """Everything computed for one (channel, policy, K) configuration."""

    K: int
    decode: DecodeMatrices
    seg: SegmentationParams
    service_rate: float
    throughput_bpcu: float
    blocks: QbdBlocks | None = None
    solution: QbdSolution | None = None
    report: PerformanceReport | None = None

    @property
    def stable(self) -> bool:
        return self.solution is not None


def analyze(model: FadingChannelModel, N: int, K: int, gamma: float, rho: float,
            policy: SwitchingPolicy = SwitchingPolicy(), thresholds=(), law=None,
            solve_queue: bool = True) -> OperatingPoint:
    """Throughput and, when stable, queue metrics at a single code dimension."""
    law = law if law is not None else erasure_joint_distribution(model, N)
    decode = decode_matrices(law, K)
    seg = segment_params(gamma, rho, K)
    mu = service_rate(model, decode, policy)
    point = OperatingPoint(K=K, decode=decode, seg=seg, service_rate=mu,
                           throughput_bpcu=K / N * mu)
    if solve_queue and stability_check(seg, mu):
        blocks = build_blocks(model, decode, seg, policy)
        sol = solve(blocks, seg, mu)
        point.blocks = blocks
        point.solution = sol
        point.report = performance_report(blocks, sol, seg, K, N, thresholds, service=mu,
                                          policy=policy)
    return point


def onset_distribution(model: FadingChannelModel, N: int,
                       policy: SwitchingPolicy = SwitchingPolicy()) -> np.ndarray:
    """Invariant law of the channel state at codeword onsets under ``policy``."""
    if not policy.reconfigure_mask(model.k).any():
        return model.stationary.copy()
    return stationary_distribution(transition_matrix_with_policy(model, N, policy))


def throughput_curve(model: FadingChannelModel, N: int, policy: SwitchingPolicy = SwitchingPolicy(),
                     law=None) -> np.ndarray:
    """``throughput_bpcu`` for every ``K = 1..N`` (index ``K-1``).

    The onset law does not depend on ``K``, so it is computed once.
    """
    law = law if law is not None else erasure_joint_distribution(model, N)
    mask = policy.reconfigure_mask(model.k)
    p_ds, _ = all_decode_matrices(law)
    success = p_ds.sum(axis=2)  # (N, k)
    onset = onset_distribution(model, N, policy)
    service = success[:, ~mask] @ onset[~mask]
    return np.arange(1, N + 1) / N * service


def optimize_K(model: FadingChannelModel, gamma: float, rho: float,
               policy: SwitchingPolicy = SwitchingPolicy(), N: int = 114, thresholds=(),
               law=None, solve_queue: bool = True) -> tuple[int, OperatingPoint]:
    """Throughput-maximizing code dimension by exhaustive search; ties go to smaller K."""
    law = law if law is not None else erasure_joint_distribution(model, N)
    curve = throughput_curve(model, N, policy, law=law)
    best = int(np.argmax(curve)) + 1  # argmax returns the first maximum
    return best, analyze(model, N, best, gamma, rho, policy, thresholds, law=law,
                         solve_queue=solve_queue)
