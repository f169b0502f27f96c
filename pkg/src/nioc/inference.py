"""Maximum-likelihood parameter estimation and benchmark evaluation.

Parameters are optimized in the transformed space of
``params_to_optimizer_space`` (log for positive parameters) with L-BFGS-B.
Gradients are central finite differences over that low-dimensional vector.
"""

import csv
import io
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from nioc.baseline import baseline_log_likelihood
from nioc.envs import get_task, instantiate
from nioc.exceptions import AllRestartsFailed, NiocError, NoConvergenceWarning
from nioc.likelihood import dataset_log_likelihood
from nioc.model import ParamVector, mix_seed, optimizer_space_to_params, params_to_optimizer_space
from nioc.solvers import SolverSettings, ilqg_solve, simulate

METHODS = ("ours", "baseline")
# objective value standing in for a -inf log likelihood; finite, so that
# L-BFGS-B backtracks instead of aborting
REJECTED = 1e10
FD_STEP = 1e-4
REPORT_COLUMNS = (
    "task", "variant", "method", "dataset_id", "param_name",
    "theta_true", "theta_hat", "abs_rel_err", "loglik", "wall_time_s",
)


def optimizer_bounds(specs, widen=100.0):
    """Box bounds in optimizer space: the sampling range widened on both sides.

    Positive parameters get ``(low / widen, high * widen)`` in log space;
    unconstrained ones are widened by twice their range on each side.
    """
    bounds = []
    for s in specs:
        if s.positive:
            bounds.append((math.log(s.low / widen), math.log(s.high * widen)))
        else:
            span = s.high - s.low
            bounds.append((s.low - 2 * span, s.high + 2 * span))
    return bounds


def sample_params(specs, rng, ranges=None):
    """Draw a ParamVector from the (log-)uniform ranges; ``ranges`` overrides them."""
    values = {}
    for s in specs:
        lo, hi = (ranges or {}).get(s.name, (s.low, s.high))
        if s.positive:
            values[s.name] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
        else:
            values[s.name] = float(rng.uniform(lo, hi))
    return ParamVector(values, specs)


@dataclass
class RestartRecord:
    index: int
    start: dict
    end: dict
    loglik: float
    status: str
    n_evals: int

    def to_dict(self):
        return {
            "index": self.index, "start": self.start, "end": self.end,
            "loglik": _json_float(self.loglik), "status": self.status, "n_evals": self.n_evals,
        }


@dataclass
class FitResult:
    """Best restart of a maximum-likelihood fit.

    Attributes:
        theta_hat: estimate with the highest finite log likelihood.
        loglik: dataset log likelihood at ``theta_hat``.
        restarts: one RestartRecord per restart, in restart order.
        wall_time: seconds spent in ``fit``.
        n_evals: total number of likelihood evaluations.
    """

    theta_hat: ParamVector
    loglik: float
    restarts: list
    wall_time: float
    n_evals: int
    method: str = "ours"
    task: str = ""
    variant: str = ""

    def to_dict(self, include_timing=True):
        out = {
            "task": self.task,
            "variant": self.variant,
            "method": self.method,
            "theta_hat": self.theta_hat.to_dict(),
            "loglik": _json_float(self.loglik),
            "n_evals": self.n_evals,
            "restarts": [r.to_dict() for r in self.restarts],
        }
        if include_timing:
            out["wall_time_s"] = self.wall_time
        return out


def _json_float(x):
    return float(x) if np.isfinite(x) else None


class LikelihoodObjective:
    """Dataset log likelihood as a function of the optimizer-space vector."""

    def __init__(self, task, states, method="ours", variant=None, config=None, temperature=None,
                 settings=None, planner="belief"):
        if method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {method!r}")
        self.info = get_task(task)
        self.task = task
        self.variant = variant or self.info.variants[0]
        self.specs = self.info.param_specs(self.variant)
        self.states = np.asarray(states, dtype=float)
        self.method = method
        self.config = dict(config or {})
        self.temperature = temperature
        self.settings = settings or SolverSettings()
        self.planner = planner
        self.n_evals = 0
        self.scale = 1.0 / max(1, self.states.shape[0] * max(1, self.states.shape[1] - 1))

    def model(self, theta):
        return instantiate(self.task, theta, self.variant, self.temperature, **self.config)

    def loglik(self, theta):
        """Log likelihood at a ParamVector (or mapping)."""
        self.n_evals += 1
        try:
            model = self.model(theta)
            if self.method == "ours":
                return dataset_log_likelihood(model, self.states, self.settings, self.variant, self.planner)
            return baseline_log_likelihood(model, self.states, self.settings)
        except (NiocError, np.linalg.LinAlgError, FloatingPointError):
            return -np.inf

    def value(self, z):
        """Scaled negative log likelihood at optimizer-space ``z``."""
        ll = self.loglik(optimizer_space_to_params(z, self.specs))
        return -ll * self.scale if np.isfinite(ll) else REJECTED

    def value_and_grad(self, z, step=FD_STEP):
        z = np.asarray(z, dtype=float)
        f0 = self.value(z)
        grad = np.zeros_like(z)
        for i in range(z.size):
            e = np.zeros_like(z)
            e[i] = step
            fp, fm = self.value(z + e), self.value(z - e)
            if fp >= REJECTED or fm >= REJECTED:
                # one-sided difference next to a rejected region
                if fp < REJECTED and f0 < REJECTED:
                    grad[i] = (fp - f0) / step
                elif fm < REJECTED and f0 < REJECTED:
                    grad[i] = (f0 - fm) / step
            else:
                grad[i] = (fp - fm) / (2 * step)
        return f0, grad


def _run_restart(objective, index, start, bounds, maxiter, step):
    z0 = np.clip(params_to_optimizer_space(start), [b[0] for b in bounds], [b[1] for b in bounds])
    before = objective.n_evals
    try:
        res = minimize(
            objective.value_and_grad, z0, jac=True, method="L-BFGS-B", bounds=bounds,
            args=(step,), options={"maxiter": maxiter},
        )
        z, fun = res.x, float(res.fun)
        status = "ok" if res.success else f"stopped: {res.message}"
    except (NiocError, ValueError, np.linalg.LinAlgError) as exc:
        z, fun, status = z0, REJECTED, f"error: {exc}"
    end = optimizer_space_to_params(z, objective.specs)
    loglik = -fun / objective.scale if fun < REJECTED else -np.inf
    if not np.isfinite(loglik):
        status = "failed" if status == "ok" else status
    return RestartRecord(index, start.to_dict(), end.to_dict(), loglik, status, objective.n_evals - before)


def fit(dataset, task=None, method="ours", variant=None, restarts=10, seed=0, ranges=None, start=None,
        config=None, temperature=None, settings=None, planner="belief", maxiter=200, fd_step=FD_STEP,
        n_jobs=1):
    """Maximum-likelihood estimate of a task's parameters from a dataset.

    Args:
        dataset: Dataset (its ``task`` and ``variant`` are the defaults) or
            an ``(N, T, n)`` array together with ``task``.
        task: registered task id.
        method: ``"ours"`` (belief-tracking likelihood) or ``"baseline"``.
        variant: ``"full"`` or ``"partial"``.
        restarts: number of L-BFGS-B runs.
        seed: seeds the stream of restart starting points.
        ranges: ``{name: (low, high)}`` overriding the sampling ranges.
        start: optional ParamVector or mapping used as the first start.
        config: task configuration passed to the factory.
        temperature: overrides the task's MCE temperature.
        settings: SolverSettings for the backward passes.
        planner: agent planner assumed by our likelihood.
        maxiter: L-BFGS-B iteration cap per restart.
        fd_step: finite-difference step in optimizer space.
        n_jobs: restarts run in parallel with joblib when not 1.

    Returns:
        FitResult with the best restart.

    Raises:
        AllRestartsFailed: if no restart ends at a finite log likelihood.
    """
    t0 = time.perf_counter()
    states = dataset.states if hasattr(dataset, "states") else np.asarray(dataset, dtype=float)
    if states.shape[0] == 0:
        raise ValueError("cannot fit an empty dataset")
    task = task or dataset.task
    variant = variant or getattr(dataset, "variant", None)
    if config is None:
        config = dict(getattr(dataset, "metadata", {}).get("config", {}))
    objective = LikelihoodObjective(task, states, method, variant, config, temperature, settings, planner)
    specs = objective.specs
    bounds = optimizer_bounds(specs)
    rng = np.random.default_rng(mix_seed(seed, 0x5EED))
    starts = [sample_params(specs, rng, ranges) for _ in range(restarts)]
    if start is not None:
        starts[0] = ParamVector(dict(start), specs)
    if n_jobs == 1:
        records = [_run_restart(objective, i, s, bounds, maxiter, fd_step) for i, s in enumerate(starts)]
    else:
        from joblib import Parallel, delayed

        records = Parallel(n_jobs=n_jobs)(
            delayed(_run_restart)(objective, i, s, bounds, maxiter, fd_step) for i, s in enumerate(starts)
        )
    finite = [r for r in records if np.isfinite(r.loglik)]
    if not finite:
        raise AllRestartsFailed(f"all {restarts} restarts ended at a non-finite likelihood")
    best = max(finite, key=lambda r: (r.loglik, -r.index))
    return FitResult(
        ParamVector(best.end, specs), best.loglik, records, time.perf_counter() - t0,
        sum(r.n_evals for r in records), method, task, objective.variant,
    )


def relative_errors(theta_true, theta_hat):
    """Absolute relative error per parameter in natural space.

    ``|theta - theta_hat| / |theta|`` for positive parameters; unconstrained
    parameters (and true values of exactly 0) use ``max(|theta|, 1)`` as
    denominator and are flagged.

    Returns:
        dict ``name -> (error, flagged)``.
    """
    specs = {s.name: s for s in getattr(theta_true, "specs", ())}
    out = {}
    for name in theta_true:
        true, hat = float(theta_true[name]), float(theta_hat[name])
        spec = specs.get(name)
        unconstrained = spec is not None and not spec.positive
        if unconstrained or true == 0.0:
            out[name] = (abs(true - hat) / max(abs(true), 1.0), True)
        else:
            out[name] = (abs(true - hat) / abs(true), False)
    return out


@dataclass
class EvalReport:
    """Per-parameter errors of a benchmark, one row per (method, dataset, parameter).

    The aggregate is the pooled median over all (dataset, parameter) errors
    of a method.
    """

    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def methods(self):
        return sorted({r["method"] for r in self.rows})

    def errors(self, method=None):
        return np.array([r["abs_rel_err"] for r in self.rows if method is None or r["method"] == method])

    def median(self, method=None):
        errs = self.errors(method)
        errs = errs[np.isfinite(errs)]
        return float(np.median(errs)) if errs.size else float("nan")

    def dataset_medians(self, method=None):
        per = {}
        for r in self.rows:
            if method is None or r["method"] == method:
                per.setdefault(r["dataset_id"], []).append(r["abs_rel_err"])
        return {k: float(np.median(v)) for k, v in sorted(per.items())}

    def summary(self):
        return {
            "aggregation": "pooled median over (dataset, parameter) errors",
            "n_rows": len(self.rows),
            "failures": self.failures,
            "median_abs_rel_err": {m: self.median(m) for m in self.methods()},
            "per_parameter_median": {
                m: {
                    p: float(np.median([r["abs_rel_err"] for r in self.rows if r["method"] == m and r["param_name"] == p]))
                    for p in sorted({r["param_name"] for r in self.rows if r["method"] == m})
                }
                for m in self.methods()
            },
        }

    def to_csv(self, include_timing=True):
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for r in self.rows:
            row = {k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()}
            if not include_timing:
                row["wall_time_s"] = ""
            writer.writerow(row)
        return buf.getvalue()


def generate_dataset(task, theta, variant=None, n_traj=50, seed=0, config=None, temperature=None,
                     settings=None, planner="belief"):
    """Solve the agent's problem at ``theta`` and simulate trajectories."""
    info = get_task(task)
    variant = variant or info.variants[0]
    config = dict(config or {})
    model = instantiate(task, theta, variant, temperature, **config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoConvergenceWarning)
        result = ilqg_solve(model, settings, variant, planner=planner)
    dataset = simulate(model, result.law, result.gains, n_traj, seed, variant, task=task)
    dataset.metadata.update(
        config=config, planner=planner, solver_converged=bool(result.converged),
        solver_iterations=int(result.iterations),
    )
    return dataset


def benchmark(task, variant=None, methods=("ours",), n_datasets=10, n_traj=50, seed=0, ranges=None,
              restarts=10, config=None, temperature=None, settings=None, maxiter=200, progress=None, n_jobs=1):
    """Sample parameters, generate data, fit with every method, record errors.

    Dataset ``d`` uses ``mix_seed(seed, d)`` for its parameters, simulation
    and restarts, so a benchmark is reproducible and all methods see the
    same datasets. Failures are recorded in ``report.failures`` and do not
    stop the run.
    """
    if isinstance(methods, str):
        methods = (methods,)
    info = get_task(task)
    variant = variant or info.variants[0]
    specs = info.param_specs(variant)
    report = EvalReport()
    for d in range(n_datasets):
        dseed = mix_seed(seed, d)
        rng = np.random.default_rng(dseed)
        theta = sample_params(specs, rng, ranges)
        try:
            data = generate_dataset(task, theta, variant, n_traj, dseed, config, temperature, settings)
        except (NiocError, np.linalg.LinAlgError) as exc:
            report.failures.append({"dataset_id": d, "stage": "simulate", "error": str(exc)})
            continue
        for method in methods:
            try:
                res = fit(data, task, method, variant, restarts, dseed, ranges, config=config,
                          temperature=temperature, settings=settings, maxiter=maxiter, n_jobs=n_jobs)
            except (NiocError, np.linalg.LinAlgError) as exc:
                report.failures.append({"dataset_id": d, "method": method, "stage": "fit", "error": str(exc)})
                continue
            for name, (err, _) in relative_errors(theta, res.theta_hat).items():
                report.rows.append({
                    "task": task, "variant": variant, "method": method, "dataset_id": d,
                    "param_name": name, "theta_true": theta[name], "theta_hat": res.theta_hat[name],
                    "abs_rel_err": err, "loglik": res.loglik, "wall_time_s": res.wall_time,
                })
            if progress is not None:
                progress(d, method, res)
    return report
