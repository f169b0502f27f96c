"""Inverse optimal control for partially observable agents.

The package infers cost and noise parameters of an agent that acts on a
Gaussian belief, given only its state trajectories. Main entry points:

* :func:`nioc.envs.instantiate` builds a task model from parameters.
* :func:`nioc.solvers.ilqg_solve` and :func:`nioc.solvers.simulate` produce
  agent behavior.
* :func:`nioc.likelihood.log_likelihood` and
  :func:`nioc.baseline.baseline_log_likelihood` score trajectories.
* :func:`nioc.inference.fit` and :class:`nioc.estimator.MaximumLikelihoodIOC`
  estimate parameters.
"""

from nioc.model import __version__, Dataset, ParamSpec, ParamVector, PomdpModel, Trajectory

__all__ = ["__version__", "Dataset", "ParamSpec", "ParamVector", "PomdpModel", "Trajectory"]
