import numpy as np
import pytest

from nioc.envs import get_task
from nioc.exceptions import AllRestartsFailed
from nioc.inference import (
    FD_STEP, REJECTED, EvalReport, LikelihoodObjective, benchmark, fit, generate_dataset,
    optimizer_bounds, relative_errors, sample_params,
)
from nioc.model import ParamSpec, ParamVector, params_to_optimizer_space

LQG_THETA = {"c_a": 0.2, "c_v": 0.5, "sigma_m": 0.4, "sigma_o": 0.2}


@pytest.fixture(scope="module")
def lqg_data():
    return generate_dataset("lqg", LQG_THETA, "partial", n_traj=40, seed=11)


def test_relative_errors_examples():
    theta = ParamVector({"a": 0.1, "b": 0.5}, (ParamSpec("a"), ParamSpec("b")))
    zero = relative_errors(theta, theta)
    assert all(err == 0.0 and not flag for err, flag in zero.values())
    double = relative_errors(theta, {"a": 0.2, "b": 1.0})
    assert [e for e, _ in double.values()] == pytest.approx([1.0, 1.0])
    mixed = relative_errors(theta, {"a": 0.11, "b": 0.4})
    assert [e for e, _ in mixed.values()] == pytest.approx([0.1, 0.2])


def test_relative_errors_flag_unconstrained_and_zero_parameters():
    specs = (ParamSpec("sigma"), ParamSpec("p", positive=False))
    theta = ParamVector({"sigma": 0.2, "p": 0.0}, specs)
    out = relative_errors(theta, {"sigma": 0.2, "p": 0.3})
    assert out["p"] == (pytest.approx(0.3), True)
    assert out["sigma"] == (0.0, False)


def test_sampled_parameters_lie_in_ranges():
    specs = get_task("lqg").param_specs("partial")
    rng = np.random.default_rng(0)
    for _ in range(20):
        theta = sample_params(specs, rng, {"sigma_m": (0.1, 0.2)})
        assert 0.1 <= theta["sigma_m"] <= 0.2
        assert all(theta[s.name] > 0 for s in specs)


def test_fit_recovers_lqg_parameters(lqg_data):
    res = fit(lqg_data, restarts=2, seed=0)
    errs = relative_errors(ParamVector(LQG_THETA, res.theta_hat.specs), res.theta_hat)
    assert max(e for e, _ in errs.values()) <= 0.2
    assert len(res.restarts) == 2
    assert res.loglik == max(r.loglik for r in res.restarts)
    assert res.n_evals == sum(r.n_evals for r in res.restarts)
    assert all(res.theta_hat[s.name] > 0 for s in res.theta_hat.specs)


def test_single_restart_from_truth_does_not_decrease_likelihood(lqg_data):
    objective = LikelihoodObjective("lqg", lqg_data.states, variant="partial")
    initial = objective.loglik(LQG_THETA)
    res = fit(lqg_data, restarts=1, start=LQG_THETA, maxiter=20)
    assert res.loglik >= initial


def test_all_restarts_failing_raises(lqg_data, monkeypatch):
    monkeypatch.setattr(LikelihoodObjective, "loglik", lambda self, theta: -np.inf)
    with pytest.raises(AllRestartsFailed):
        fit(lqg_data, restarts=2)


def test_rejected_region_maps_to_large_value(lqg_data, monkeypatch):
    objective = LikelihoodObjective("lqg", lqg_data.states, variant="partial")
    monkeypatch.setattr(objective, "loglik", lambda theta: -np.inf)
    assert objective.value(np.zeros(4)) == REJECTED


def test_empty_dataset_is_rejected():
    with pytest.raises(ValueError):
        fit(np.zeros((0, 5, 2)), task="lqg")


def test_unknown_method_is_rejected(lqg_data):
    with pytest.raises(ValueError, match="method"):
        LikelihoodObjective("lqg", lqg_data.states, method="oracle")


def test_finite_difference_gradient_is_step_consistent(lqg_data):
    objective = LikelihoodObjective("lqg", lqg_data.states, variant="partial")
    specs = objective.specs
    z = params_to_optimizer_space(sample_params(specs, np.random.default_rng(3)))
    _, g1 = objective.value_and_grad(z, FD_STEP)
    _, g2 = objective.value_and_grad(z, FD_STEP / 2)
    floor = 1e-3 * np.linalg.norm(g1)
    assert np.all(np.abs(g1 - g2) <= 0.05 * np.maximum(np.abs(g1), floor))


def test_optimizer_bounds_cover_sampling_ranges():
    specs = (ParamSpec("a", low=0.1, high=2.0), ParamSpec("p", positive=False, low=-1.0, high=1.0))
    (alo, ahi), (plo, phi) = optimizer_bounds(specs)
    assert alo < np.log(0.1) and ahi > np.log(2.0)
    assert plo < -1.0 and phi > 1.0


def test_zero_datasets_give_an_empty_report():
    report = benchmark("lqg", n_datasets=0)
    assert isinstance(report, EvalReport)
    assert report.rows == [] and report.failures == []
    assert np.isnan(report.median())


def test_benchmark_is_deterministic_and_complete():
    kw = dict(variant="full", methods=("ours", "baseline"), n_datasets=2, n_traj=10, restarts=1, seed=4, maxiter=15)
    a, b = benchmark("lqg", **kw), benchmark("lqg", **kw)
    assert a.to_csv(include_timing=False) == b.to_csv(include_timing=False)
    p = len(get_task("lqg").param_specs("full"))
    assert len(a.rows) == 2 * 2 * p
    assert np.all(a.errors() >= 0)
    header = a.to_csv().splitlines()[0]
    assert header == "task,variant,method,dataset_id,param_name,theta_true,theta_hat,abs_rel_err,loglik,wall_time_s"
    summary = a.summary()
    assert set(summary["median_abs_rel_err"]) == {"ours", "baseline"}
