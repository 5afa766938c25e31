"""scikit-learn style wrappers around the queue and POMDP solvers.

Both estimators take a fitted channel model in place of a data matrix:
``fit(model)`` solves the analytic problem and stores the results in
trailing-underscore attributes, so hyperparameters can be inspected and
cloned with ``get_params``/``set_params``.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .channel_models import FadingChannelModel
from .code_performance import erasure_joint_distribution
from .pomdp import build_pomdp, extract_thresholds, mean_value, value_iteration
from .qbd import SwitchingPolicy, analyze, optimize_K, throughput_curve


def _check_model(model) -> FadingChannelModel:
    if isinstance(model, FadingChannelModel):
        return model
    if isinstance(model, dict):
        return FadingChannelModel.from_dict(model)
    raise TypeError("fit expects a FadingChannelModel or its dict form")


class QueueAnalyzer(BaseEstimator):
    """Throughput-optimal code dimension and queue metrics for one channel.

    ``K=None`` searches all code dimensions for maximum throughput.
    """

    def __init__(self, N=114, gamma=0.2, rho=1 / 195, policy_ell=1, K=None, thresholds=()):
        self.N = N
        self.gamma = gamma
        self.rho = rho
        self.policy_ell = policy_ell
        self.K = K
        self.thresholds = thresholds

    def fit(self, model, y=None):
        model = _check_model(model)
        policy = SwitchingPolicy(self.policy_ell)
        law = erasure_joint_distribution(model, self.N)
        self.throughput_curve_ = throughput_curve(model, self.N, policy, law=law)
        if self.K is None:
            self.K_, point = optimize_K(model, self.gamma, self.rho, policy, self.N,
                                        tuple(self.thresholds), law=law)
        else:
            self.K_ = int(self.K)
            point = analyze(model, self.N, self.K_, self.gamma, self.rho, policy,
                            tuple(self.thresholds), law=law)
        self.operating_point_ = point
        self.report_ = point.report
        self.solution_ = point.solution
        self.stable_ = point.stable
        self.n_states_ = model.k
        return self

    def predict(self, q):
        """Stationary probability of each queue length in ``q``."""
        check_is_fitted(self, "solution_")
        if self.solution_ is None:
            raise ValueError("queue is unstable; no stationary distribution")
        q = np.asarray(q, dtype=np.int64)
        if np.any(q < 0):
            raise ValueError("queue lengths must be nonnegative")
        flat = q.ravel()
        probs = self.solution_.levels(int(flat.max(initial=0))).sum(axis=1)
        return probs[flat].reshape(q.shape)

    def score(self, model=None, y=None):
        """Throughput in information bits per channel use at ``K_``."""
        check_is_fitted(self, "operating_point_")
        return self.operating_point_.throughput_bpcu


class BeliefPolicy(BaseEstimator):
    """Discounted-reward code rate policy over channel beliefs."""

    def __init__(self, N=114, beta=0.9, allow_reconfigure=True, grid_size=None, tol=1e-9,
                 max_iter=10_000, stride=1):
        self.N = N
        self.beta = beta
        self.allow_reconfigure = allow_reconfigure
        self.grid_size = grid_size
        self.tol = tol
        self.max_iter = max_iter
        self.stride = stride

    def fit(self, model, y=None):
        model = _check_model(model)
        self.pomdp_ = build_pomdp(model, self.N, self.beta, self.allow_reconfigure, self.stride)
        self.value_function_ = value_iteration(self.pomdp_, self.grid_size, self.tol, self.max_iter)
        self.thresholds_ = extract_thresholds(self.value_function_) if model.k == 2 else None
        self.mean_value_ = mean_value(self.value_function_)
        self.n_states_ = model.k
        return self

    def _beliefs(self, beliefs):
        beliefs = np.asarray(beliefs, dtype=float)
        if self.n_states_ == 2 and beliefs.ndim <= 1:
            # scalar or 1-D input: probability of the good (last) state
            x = np.atleast_1d(beliefs)
            beliefs = np.column_stack([1.0 - x, x])
        beliefs = check_array(beliefs, ensure_min_features=self.n_states_)
        if beliefs.shape[1] != self.n_states_:
            raise ValueError(f"beliefs need {self.n_states_} columns, got {beliefs.shape[1]}")
        if np.any(beliefs < -1e-12) or np.any(np.abs(beliefs.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("each belief must be a probability vector")
        return beliefs

    def predict(self, beliefs):
        """Chosen action (0 = reconfigure, a = information bits) per belief."""
        check_is_fitted(self, "value_function_")
        return np.atleast_1d(self.value_function_.action_at(self._beliefs(beliefs)))

    def value(self, beliefs):
        check_is_fitted(self, "value_function_")
        return np.atleast_1d(self.value_function_.value_at(self._beliefs(beliefs)))

    def predict_rate(self, beliefs):
        return self.predict(beliefs) / self.N
