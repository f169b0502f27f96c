"""Scikit-learn style wrapper around the maximum-likelihood fit."""

import warnings

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from nioc.baseline import baseline_log_likelihood
from nioc.envs import get_task, instantiate
from nioc.exceptions import NoConvergenceWarning
from nioc.inference import fit, generate_dataset
from nioc.likelihood import build_linearization, log_likelihood
from nioc.solvers import SolverSettings


def check_trajectories(X, n_states=None, min_length=2):
    """Validate a batch of state trajectories.

    Args:
        X: a Dataset, one ``(T, n)`` trajectory or an ``(N, T, n)`` batch.
        n_states: expected state dimension, if known.
        min_length: minimum number of time steps.

    Returns:
        float array of shape ``(N, T, n)``.

    Raises:
        ValueError: on wrong rank, dimension, length or non-finite entries.
    """
    states = X.states if hasattr(X, "states") and not isinstance(X, np.ndarray) else X
    states = np.asarray(states, dtype=float)
    if states.ndim == 2:
        states = states[None]
    if states.ndim != 3:
        raise ValueError(f"expected trajectories of shape (N, T, n), got {states.shape}")
    if states.shape[0] == 0:
        raise ValueError("no trajectories given")
    if states.shape[1] < min_length:
        raise ValueError(f"trajectories need at least {min_length} steps, got {states.shape[1]}")
    if n_states is not None and states.shape[2] != n_states:
        raise ValueError(f"expected state dimension {n_states}, got {states.shape[2]}")
    if not np.all(np.isfinite(states)):
        raise ValueError("trajectories contain NaN or inf")
    return states


class MaximumLikelihoodIOC(BaseEstimator):
    """Estimate an agent's parameters from its state trajectories.

    Args:
        task: registered task id.
        variant: ``"full"`` or ``"partial"``; defaults to the task's first variant.
        method: ``"ours"`` (belief-tracking likelihood) or ``"baseline"``.
        restarts: number of optimizer restarts.
        ranges: ``{name: (low, high)}`` for drawing restart points.
        temperature: MCE temperature; defaults to the task's value.
        config: extra task configuration such as ``{"T": 30}``.
        maxiter: L-BFGS-B iterations per restart.
        seed: seed of the restart stream.
        n_jobs: restarts run in parallel when not 1.

    Attributes:
        theta_: fitted ParamVector.
        fit_result_: the full FitResult.
        model_: task model at ``theta_``.
    """

    def __init__(self, task="pendulum", variant=None, method="ours", restarts=10, ranges=None,
                 temperature=None, config=None, maxiter=200, seed=0, n_jobs=1):
        self.task = task
        self.variant = variant
        self.method = method
        self.restarts = restarts
        self.ranges = ranges
        self.temperature = temperature
        self.config = config
        self.maxiter = maxiter
        self.seed = seed
        self.n_jobs = n_jobs

    def _variant(self):
        return self.variant or get_task(self.task).variants[0]

    def _model(self, theta):
        return instantiate(self.task, theta, self._variant(), self.temperature, **dict(self.config or {}))

    def fit(self, X, y=None):
        """Fit the parameters to trajectories ``X`` (``y`` is ignored)."""
        if self.restarts < 1:
            raise ValueError("restarts must be at least 1")
        probe = self._model(None)
        states = check_trajectories(X, probe.n)
        self.fit_result_ = fit(
            states, self.task, self.method, self._variant(), self.restarts, self.seed, self.ranges,
            config=dict(self.config or {}), temperature=self.temperature, maxiter=self.maxiter,
            n_jobs=self.n_jobs,
        )
        self.theta_ = self.fit_result_.theta_hat
        self.model_ = self._model(self.theta_)
        return self

    def score_samples(self, X):
        """Log likelihood of each trajectory under the fitted parameters."""
        check_is_fitted(self, "theta_")
        states = check_trajectories(X, self.model_.n)
        if self.method == "baseline":
            return baseline_log_likelihood(self.model_, states, per_trajectory=True)
        return log_likelihood(self.model_, states, variant=self._variant(), per_trajectory=True)

    def score(self, X, y=None):
        """Mean log likelihood per trajectory."""
        return float(np.mean(self.score_samples(X)))

    def predict(self, X):
        """Mean control of the fitted agent at each observed state.

        The agent's law is linearized around each trajectory and evaluated
        with the belief mean set to the observed state.

        Returns:
            array of shape ``(N, T-1, u)``.
        """
        check_is_fitted(self, "theta_")
        states = check_trajectories(X, self.model_.n)
        ctx = build_linearization(self.model_, states, SolverSettings(), self._variant())
        return ctx.law.m + ctx.controls

    def sample(self, n_traj=50, seed=0):
        """Simulate the fitted agent; returns a Dataset."""
        check_is_fitted(self, "theta_")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoConvergenceWarning)
            return generate_dataset(self.task, self.theta_, self._variant(), n_traj, seed,
                                    dict(self.config or {}), self.temperature)
