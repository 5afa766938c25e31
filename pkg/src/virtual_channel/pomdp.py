"""Belief-state decision process for code-rate selection and antenna reconfiguration.

Actions are indexed by ``a``: ``0`` reconfigures the antenna (no data sent,
the channel is redrawn from its stationary law) and ``a in 1..N`` sends a
codeword carrying ``a`` information bits.  Observations are ACK / NACK.
The value function is solved by discounted value iteration on a fixed belief
grid with piecewise-linear (k=2) or barycentric (k=3) interpolation.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .channel_models import FadingChannelModel, n_step_matrix
from .code_performance import all_decode_matrices, erasure_joint_distribution
from .errors import ConvergenceError

log = logging.getLogger(__name__)

ACK = "ACK"
NACK = "NACK"
RECONFIGURE = 0


@dataclass(frozen=True)
class PomdpModel:
    """Channel, block length, discount and per-action decode matrices.

    ``p_ds[a - 1]`` / ``p_df[a - 1]`` belong to rate ``a/N``.  ``actions``
    lists the admissible action indices in increasing order.
    """

    model: FadingChannelModel
    N: int
    beta: float
    allow_reconfigure: bool
    p_ds: np.ndarray
    p_df: np.ndarray
    actions: np.ndarray

    @property
    def k(self) -> int:
        return self.model.k

    @property
    def p_c(self) -> np.ndarray:
        return self.model.stationary

    @property
    def rate_actions(self) -> np.ndarray:
        return self.actions[self.actions > 0]

    def _check_action(self, a: int):
        if a not in self.actions:
            raise ValueError(f"action {a} is not admissible")


def build_pomdp(model: FadingChannelModel, N: int, beta: float = 0.9,
                allow_reconfigure: bool = True, stride: int = 1) -> PomdpModel:
    """Assemble the decision process.

    ``stride`` subsamples the code rates (``a = N, N - stride, ...``); the
    full rate set is ``stride=1``.
    """
    if not 0.0 <= beta < 1.0:
        raise ValueError("beta must lie in [0, 1)")
    if stride < 1:
        raise ValueError("stride must be positive")
    law = erasure_joint_distribution(model, N)
    p_ds, p_df = all_decode_matrices(law)
    rates = np.arange(N, 0, -stride)[::-1]
    actions = np.concatenate([[RECONFIGURE], rates]) if allow_reconfigure else rates
    return PomdpModel(model=model, N=N, beta=float(beta), allow_reconfigure=allow_reconfigure,
                      p_ds=p_ds, p_df=p_df, actions=actions.astype(np.int64))


def _as_belief(psi, k) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.shape != (k,):
        raise ValueError(f"belief must have {k} entries")
    if np.any(psi < -1e-12) or abs(psi.sum() - 1.0) > 1e-10:
        raise ValueError("belief must be a probability vector")
    return psi


def _observation_matrix(pomdp: PomdpModel, a: int, o: str) -> np.ndarray:
    if o == ACK:
        return pomdp.p_ds[a - 1]
    if o == NACK:
        return pomdp.p_df[a - 1]
    raise ValueError(f"unknown observation {o!r}")


def observation_probability(pomdp: PomdpModel, psi, a: int, o: str) -> float:
    psi = _as_belief(psi, pomdp.k)
    pomdp._check_action(a)
    if a == RECONFIGURE:
        if o not in (ACK, NACK):
            raise ValueError(f"unknown observation {o!r}")
        return 0.0 if o == ACK else 1.0
    return float(psi @ _observation_matrix(pomdp, a, o).sum(axis=1))


def belief_update(pomdp: PomdpModel, psi, a: int, o: str) -> np.ndarray:
    """Posterior over the channel state at the next codeword onset."""
    psi = _as_belief(psi, pomdp.k)
    pomdp._check_action(a)
    if a == RECONFIGURE:
        return pomdp.p_c.copy()
    joint = psi @ _observation_matrix(pomdp, a, o)
    total = joint.sum()
    if total <= 0.0:
        raise ValueError(f"observation {o} has zero probability under action {a}")
    return joint / total


def reward(pomdp: PomdpModel, psi, a: int) -> float:
    """Expected information bits delivered, normalized by the block length."""
    psi = _as_belief(psi, pomdp.k)
    pomdp._check_action(a)
    if a == RECONFIGURE:
        return 0.0
    return a / pomdp.N * float(psi @ pomdp.p_ds[a - 1].sum(axis=1))


# ---------------------------------------------------------------- belief grids


class BeliefGrid:
    """Uniform grid on the probability simplex with linear interpolation.

    For ``k=2`` points are ``(1 - x, x)`` with ``x`` on ``size`` equally
    spaced values in [0, 1].  For ``k=3`` points are ``(1 - u - v, u, v)`` with
    ``u = i/n``, ``v = j/n``, ``i + j <= n`` and interpolation is barycentric on
    the standard triangulation.
    """

    def __init__(self, k: int, size: int):
        if k not in (2, 3):
            raise ValueError("belief grids are implemented for k = 2 and k = 3")
        if k == 2 and size < 2:
            raise ValueError("need at least two grid points")
        if k == 3 and size < 1:
            raise ValueError("need resolution of at least 1")
        self.k = k
        self.size = size
        if k == 2:
            x = np.linspace(0.0, 1.0, size)
            self.points = np.column_stack([1.0 - x, x])
        else:
            n = size
            ii, jj = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
            keep = ii + jj <= n
            self._i, self._j = ii[keep], jj[keep]
            u, v = self._i / n, self._j / n
            self.points = np.column_stack([1.0 - u - v, u, v])
            # lookup from (i, j) to flat index
            self._index = -np.ones((n + 1, n + 1), dtype=np.int64)
            self._index[self._i, self._j] = np.arange(self._i.size)

    def __len__(self):
        return self.points.shape[0]

    @property
    def coords(self) -> np.ndarray:
        """Coordinates used for reporting: good-state belief for k=2, (psi_2, psi_3) for k=3."""
        return self.points[:, 1] if self.k == 2 else self.points[:, 1:]

    def weights(self, beliefs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Vertex indices and weights interpolating at ``beliefs`` (shape ``(..., k)``)."""
        beliefs = np.asarray(beliefs, dtype=float)
        if self.k == 2:
            G = self.size
            s = np.clip(beliefs[..., 1], 0.0, 1.0) * (G - 1)
            lo = np.minimum(np.floor(s).astype(np.int64), G - 2)
            w_hi = s - lo
            idx = np.stack([lo, lo + 1], axis=-1)
            w = np.stack([1.0 - w_hi, w_hi], axis=-1)
            return idx, w
        n = self.size
        u = np.clip(beliefs[..., 1], 0.0, 1.0) * n
        v = np.clip(beliefs[..., 2], 0.0, 1.0) * n
        over = np.maximum((u + v) / n, 1.0)
        u, v = u / over, v / over
        i = np.minimum(np.floor(u).astype(np.int64), n - 1)
        j = np.minimum(np.floor(v).astype(np.int64), n - 1)
        # points exactly on the hypotenuse: step back into a valid cell
        on_edge = i + j >= n
        i = np.where(on_edge & (i > 0), i - 1, i)
        j = np.where(on_edge & (i + j >= n), j - 1, j)
        fu, fv = u - i, v - j
        upper = (fu + fv > 1.0) & (i + j + 2 <= n)
        w = np.stack([
            np.where(upper, fu + fv - 1.0, 1.0 - fu - fv),
            np.where(upper, 1.0 - fv, fu),
            np.where(upper, 1.0 - fu, fv),
        ], axis=-1)
        idx = np.stack([
            self._index[np.where(upper, i + 1, i), np.where(upper, j + 1, j)],
            self._index[i + 1, j],
            self._index[i, j + 1],
        ], axis=-1)
        # rounding can push a lower-cell point marginally past the hypotenuse
        w = np.clip(w, 0.0, None)
        return idx, w / w.sum(axis=-1, keepdims=True)

    def interpolate(self, values: np.ndarray, beliefs) -> np.ndarray:
        idx, w = self.weights(beliefs)
        return np.sum(values[idx] * w, axis=-1)

    def nearest(self, beliefs) -> np.ndarray:
        idx, w = self.weights(beliefs)
        pick = np.argmax(w, axis=-1)
        return np.take_along_axis(idx, pick[..., None], axis=-1)[..., 0]


@dataclass
class ValueFunction:
    grid: BeliefGrid
    values: np.ndarray
    policy: np.ndarray
    beta: float
    N: int
    iterations: int
    residual: float
    q_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def beliefs(self) -> np.ndarray:
        return self.grid.points

    def value_at(self, psi) -> np.ndarray | float:
        out = self.grid.interpolate(self.values, np.asarray(psi, dtype=float))
        return float(out) if np.ndim(out) == 0 else out

    def action_at(self, psi) -> np.ndarray | int:
        out = self.policy[self.grid.nearest(np.asarray(psi, dtype=float))]
        return int(out) if np.ndim(out) == 0 else out

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        cols = [f"psi_{i + 1}" for i in range(self.grid.k)]
        writer.writerow(cols + ["value", "action"])
        for p, v, a in zip(self.grid.points, self.values, self.policy):
            writer.writerow([repr(float(x)) for x in p] + [repr(float(v)), int(a)])
        return buf.getvalue()


def _transition_tables(pomdp: PomdpModel, grid: BeliefGrid):
    """Observation probabilities and interpolation stencils for every (action, grid point)."""
    pts = grid.points
    rates = pomdp.rate_actions
    ack = np.einsum("gi,aij->agj", pts, pomdp.p_ds[rates - 1])
    nack = np.einsum("gi,aij->agj", pts, pomdp.p_df[rates - 1])
    p_ack = ack.sum(axis=2)
    p_nack = nack.sum(axis=2)
    fallback = pomdp.p_c

    def normalized(joint, total):
        safe = np.where(total > 0, total, 1.0)[..., None]
        return np.where(total[..., None] > 0, joint / safe, fallback)

    idx_a, w_a = grid.weights(normalized(ack, p_ack))
    idx_n, w_n = grid.weights(normalized(nack, p_nack))
    rewards = (rates / pomdp.N)[:, None] * p_ack
    # fold observation probabilities into the stencil weights
    idx = np.concatenate([idx_a, idx_n], axis=2)
    w = np.concatenate([w_a * p_ack[..., None], w_n * p_nack[..., None]], axis=2)
    return rewards, idx, w


def value_iteration(pomdp: PomdpModel, grid_size: int | None = None, tol: float = 1e-9,
                    max_iter: int = 10_000, keep_q: bool = False) -> ValueFunction:
    """Discounted value iteration on a belief grid.

    Iterates ``V <- max_a [R(psi, a) + beta * sum_o Omega(psi, a, o) V(T(psi, a, o))]``
    from ``V = 0`` until the sup-norm change drops below
    ``tol * max(1, max|V|)``.  Ties go to the lowest action index.

    ``grid_size`` is the number of points for k=2 (default 1000) and the
    per-edge resolution for k=3 (default 200).
    """
    k = pomdp.k
    if grid_size is None:
        grid_size = 1000 if k == 2 else 200
    grid = BeliefGrid(k, grid_size)
    rewards, idx, w = _transition_tables(pomdp, grid)
    G = len(grid)
    beta = pomdp.beta
    rc_idx, rc_w = grid.weights(pomdp.p_c)
    actions = pomdp.actions
    n_act = actions.size
    offset = 1 if pomdp.allow_reconfigure else 0

    V = np.zeros(G)
    Q = np.empty((n_act, G))
    delta = np.inf
    for it in range(1, max_iter + 1):
        Q[offset:] = rewards + beta * np.sum(V[idx] * w, axis=2)
        if offset:
            Q[0] = beta * float(V[rc_idx] @ rc_w)
        V_new = Q.max(axis=0)
        delta = float(np.max(np.abs(V_new - V)))
        V = V_new
        if delta < tol * max(1.0, float(np.max(np.abs(V)))):
            break
    else:
        raise ConvergenceError(f"value iteration did not converge in {max_iter} sweeps",
                               last=V, delta=delta)
    # greedy policy and Bellman residual of the returned V
    Q[offset:] = rewards + beta * np.sum(V[idx] * w, axis=2)
    if offset:
        Q[0] = beta * float(V[rc_idx] @ rc_w)
    best = Q.argmax(axis=0)
    residual = float(np.max(np.abs(Q.max(axis=0) - V)))
    log.debug("value iteration converged after %d sweeps, residual %.3g", it, residual)
    return ValueFunction(grid=grid, values=V, policy=actions[best], beta=beta, N=pomdp.N,
                         iterations=it, residual=residual, q_values=Q.copy() if keep_q else None)


@dataclass
class ThresholdPolicy:
    """Decision regions of a two-state policy along the good-state belief axis.

    ``boundaries[i] = (x, action)``: from belief ``x`` upward the action is
    ``action`` (until the next boundary).  ``initial_action`` applies from 0.
    """

    initial_action: int
    boundaries: list
    N: int
    violations: list = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        return not self.violations

    def rates(self) -> list:
        return [(x, a / self.N) for x, a in self.boundaries]

    def to_json(self) -> str:
        return json.dumps({
            "initial_action": self.initial_action,
            "boundaries": [{"belief": x, "action": int(a), "rate": a / self.N}
                           for x, a in self.boundaries],
            "monotone": self.monotone,
        })


def extract_thresholds(vf: ValueFunction) -> ThresholdPolicy:
    """Scan the 1-D policy for action changes; boundaries sit midway between grid points.

    A decrease of the chosen action (reconfigure counted as rate 0) is
    recorded in ``violations``.
    """
    if vf.grid.k != 2:
        raise ValueError("threshold extraction needs a two-state belief grid")
    x = vf.grid.coords
    pol = vf.policy
    change = np.nonzero(np.diff(pol))[0]
    boundaries = []
    violations = []
    for c in change:
        b = 0.5 * (x[c] + x[c + 1])
        boundaries.append((float(b), int(pol[c + 1])))
        if pol[c + 1] < pol[c]:
            violations.append((float(b), int(pol[c]), int(pol[c + 1])))
    if violations:
        log.warning("policy is not monotone in the belief: %d decreasing steps", len(violations))
    return ThresholdPolicy(initial_action=int(pol[0]), boundaries=boundaries, N=vf.N,
                           violations=violations)


def mean_value(vf: ValueFunction) -> float:
    """Arithmetic mean of the value function over the grid points."""
    return float(np.mean(vf.values))


def immediate_rewards(pomdp: PomdpModel, beliefs) -> np.ndarray:
    """``R(psi, a)`` for every admissible action (rows) and belief (columns)."""
    beliefs = np.atleast_2d(np.asarray(beliefs, dtype=float))
    out = np.zeros((pomdp.actions.size, beliefs.shape[0]))
    for row, a in enumerate(pomdp.actions):
        if a != RECONFIGURE:
            out[row] = a / pomdp.N * beliefs @ pomdp.p_ds[a - 1].sum(axis=1)
    return out


def codeword_transition(pomdp: PomdpModel) -> np.ndarray:
    return n_step_matrix(pomdp.model, pomdp.N)
