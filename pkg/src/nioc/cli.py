"""Command-line front end: simulate, fit, benchmark and the light-dark study.

Configuration comes from an optional JSON file (``--config``) validated
against ``config_schema.json``; command-line flags override file values.
The seed falls back to the ``NIOC_SEED`` environment variable and then to 0.

Every output file starts with a provenance block carrying the package
version and a hash of the resolved configuration. Outputs are identical for
identical configurations; wall-clock times and timestamps go only to the
``<command>.log`` sidecar in the output directory.

Exit codes: 0 success, 2 configuration or I/O error, 3 solver failure,
4 optimization failure.
"""

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
import warnings
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from nioc.envs import get_task, instantiate
from nioc.exceptions import (
    AllRestartsFailed, DivergedValueRecursion, NoConvergence, NoConvergenceWarning, NonFiniteValue,
    SingularCovariance, UnknownTask,
)
from nioc.inference import benchmark, fit, generate_dataset, relative_errors
from nioc.model import Dataset, ParamVector, __version__

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_OPTIMIZATION = 4

SCHEMA_VERSION = 1
# keys that change where or how fast things run, but not what is computed
_NON_SEMANTIC = ("out", "jobs")
_TASK_CONFIG = ("dt", "T", "target", "belief_var")

log = logging.getLogger("nioc.cli")


class ConfigError(Exception):
    """Invalid configuration or unreadable input; maps to exit code 2."""


class SolverFailure(Exception):
    """The forward solver or simulation failed; maps to exit code 3."""


def load_schema():
    return json.loads(resources.files("nioc").joinpath("config_schema.json").read_text())


def _parse_assignments(text, flag):
    out = {}
    for item in filter(None, (s.strip() for s in text.split(","))):
        if "=" not in item:
            raise ConfigError(f"{flag}: expected name=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def parse_theta(text):
    """``"c_a=0.1,c_v=0.5"`` -> ``{"c_a": 0.1, "c_v": 0.5}``."""
    try:
        return {k: float(v) for k, v in _parse_assignments(text, "--theta").items()}
    except ValueError as exc:
        raise ConfigError(f"--theta: {exc}") from None


def parse_ranges(text):
    """``"c_a=0.01:1,c_v=0.1:2"`` -> ``{"c_a": [0.01, 1.0], ...}``."""
    out = {}
    for key, value in _parse_assignments(text, "--ranges").items():
        try:
            lo, hi = (float(p) for p in value.split(":"))
        except ValueError:
            raise ConfigError(f"--ranges: expected name=low:high, got {key}={value}") from None
        out[key] = [lo, hi]
    return out


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected a comma-separated list of numbers, got {text!r}") from None


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


FLAG_CONVERTERS = {
    "theta": parse_theta,
    "ranges": parse_ranges,
    "c_grid": _floats,
    "methods": _names,
    "agents": _names,
}


def resolve_config(args, defaults):
    """Merge defaults, the JSON config file and explicit flags (in that order)."""
    config = dict(defaults)
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"config {args.config} must hold a JSON object")
        config.update(doc)
    for key, value in vars(args).items():
        if key in ("command", "config", "handler", "dataset") or value is None:
            continue
        config[key] = FLAG_CONVERTERS[key](value) if key in FLAG_CONVERTERS else value
    if config.get("seed") is None:
        env = os.environ.get("NIOC_SEED")
        try:
            config["seed"] = int(env) if env not in (None, "") else 0
        except ValueError:
            raise ConfigError(f"NIOC_SEED must be an integer, got {env!r}") from None
    config.setdefault("schema_version", SCHEMA_VERSION)
    try:
        jsonschema.validate(config, load_schema())
    except jsonschema.ValidationError as exc:
        path = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid configuration at {path}: {exc.message}") from None
    return config


def task_config(config):
    """The subset of the run configuration passed to the task factory."""
    info = get_task(config["task"])
    return {k: config[k] for k in _TASK_CONFIG if k in config and k in info.config_keys}


def validate_task(config):
    """Resolve variant and parameters against the registry before any compute."""
    try:
        info = get_task(config["task"])
        variant = config.get("variant") or info.variants[0]
        specs = info.param_specs(variant)
        extra = set(config.get("theta", {})) - {s.name for s in specs}
        if extra:
            raise ConfigError(f"task {info.name!r} has no parameters {sorted(extra)}")
        unknown = set(config.get("ranges", {})) - {s.name for s in specs}
        if unknown:
            raise ConfigError(f"--ranges names unknown parameters {sorted(unknown)}")
        for name, (lo, hi) in config.get("ranges", {}).items():
            if not lo < hi:
                raise ConfigError(f"range of {name} must have low < high")
        unused = {k for k in _TASK_CONFIG if k in config} - set(info.config_keys)
        if unused:
            raise ConfigError(f"task {info.name!r} does not accept {sorted(unused)}")
        theta = ParamVector({**info.default_params(variant).to_dict(), **config.get("theta", {})}, specs)
        # zero is a valid true value (the light-dark study runs at c = 0)
        negative = [s.name for s in specs if s.positive and theta[s.name] < 0]
        if negative:
            raise ConfigError(f"parameters {negative} must be >= 0")
        instantiate(info.name, theta, variant, config.get("temperature"), **task_config(config))
    except (UnknownTask, ValueError, KeyError) as exc:
        raise ConfigError(str(exc.args[0]) if exc.args else str(exc)) from None
    config["variant"] = variant
    return info, variant, theta


def config_hash(config):
    semantic = {k: v for k, v in config.items() if k not in _NON_SEMANTIC}
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def provenance(command, config):
    log.info("config_hash=%s", config_hash(config))
    return {
        "tool": "nioc",
        "version": __version__,
        "command": command,
        "config_hash": config_hash(config),
        "config": {k: v for k, v in config.items() if k not in _NON_SEMANTIC},
    }


def csv_header(prov):
    """Comment lines placed above every CSV output."""
    return (
        f"# nioc {prov['version']} command={prov['command']} config_hash={prov['config_hash']}\n"
        f"# config={json.dumps(prov['config'], sort_keys=True, separators=(',', ':'))}\n"
    )


def _write(path, text):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from None
    log.info("wrote %s", path)


def _write_json(path, doc):
    _write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _out_dir(config):
    return Path(config.get("out", "."))


def _start_sidecar(command, config):
    """Log timestamps and timings to ``<out>/<command>.log``."""
    out = _out_dir(config)
    try:
        out.mkdir(parents=True, exist_ok=True)
        handler = logging.FileHandler(out / f"{command}.log", mode="w")
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.INFO)
    log.info("nioc %s %s", __version__, command)
    return handler


def _simulate(info, variant, theta, config, n_traj, seed, planner=None):
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NoConvergenceWarning)
            return generate_dataset(
                info.name, theta, variant, n_traj, seed, task_config(config), config.get("temperature"),
                planner=planner or config.get("planner", "belief"),
            )
    except (NonFiniteValue, SingularCovariance, DivergedValueRecursion, np.linalg.LinAlgError) as exc:
        raise SolverFailure(f"forward solve failed: {exc}") from None


def dataset_summary(model, data):
    """Cost statistics and endpoint spread of a dataset."""
    if len(data) == 0:
        return {"n_traj": 0}
    states = data.states
    ends = states[:, -1, :]
    costs = [model.final_cost(s[-1]) for s in states]
    return {
        "n_traj": len(data),
        "final_cost_mean": float(np.mean(costs)),
        "final_cost_std": float(np.std(costs)),
        "endpoint_mean": ends.mean(axis=0).tolist(),
        "endpoint_std": ends.std(axis=0).tolist(),
        "failed_seeds": len(data.metadata.get("failed_seeds", [])),
    }


def _fmt(values):
    return "[" + ", ".join(f"{v:.4g}" for v in values) + "]"


def cmd_simulate(config):
    """Simulate the agent and write ``dataset.json`` and ``trajectories.csv``."""
    info, variant, theta = validate_task(config)
    n_traj = config.get("n_traj", 50)
    prov = provenance("simulate", config)
    t0 = time.perf_counter()
    data = _simulate(info, variant, theta, config, n_traj, config["seed"])
    log.info("simulated %d trajectories in %.2f s", len(data), time.perf_counter() - t0)
    out = _out_dir(config)
    _write_json(out / "dataset.json", {"provenance": prov, **data.to_dict()})
    _write(out / "trajectories.csv", csv_header(prov) + data.to_csv())
    model = instantiate(info.name, theta, variant, config.get("temperature"), **task_config(config))
    summary = dataset_summary(model, data)
    print(f"simulated {summary['n_traj']} trajectories of {info.name} ({variant}) at {theta}")
    if summary["n_traj"]:
        print(f"final cost {summary['final_cost_mean']:.4g} +/- {summary['final_cost_std']:.4g}; "
              f"endpoint {_fmt(summary['endpoint_mean'])} +/- {_fmt(summary['endpoint_std'])}")
    return EXIT_OK


def load_dataset(path, config):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read dataset {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"dataset {path} is not valid JSON: {exc}") from None
    try:
        data = Dataset.from_dict(doc)
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"dataset {path} is malformed: {exc}") from None
    if config.get("task") not in (None, data.task):
        raise ConfigError(f"dataset holds task {data.task!r}, config asks for {config['task']!r}")
    config["task"] = data.task
    config.setdefault("variant", data.variant)
    for key, value in data.metadata.get("config", {}).items():
        config.setdefault(key, value)
    return data


def cmd_fit(config, dataset_path):
    """Fit parameters to a dataset file and write ``fit.json``."""
    data = load_dataset(dataset_path, config)
    info, variant, _ = validate_task(config)
    if len(data) == 0:
        raise ConfigError("the dataset holds no trajectories")
    method = config.get("method", "ours")
    prov = provenance("fit", config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoConvergenceWarning)
        result = fit(
            data, info.name, method, variant, config.get("restarts", 10), config["seed"],
            config.get("ranges"), config=task_config(config), temperature=config.get("temperature"),
            maxiter=config.get("maxiter", 200), n_jobs=config.get("jobs", 1),
        )
    log.info("fit finished in %.2f s with %d evaluations", result.wall_time, result.n_evals)
    doc = {"provenance": prov, **result.to_dict(include_timing=False)}
    if data.theta_true is not None and set(data.theta_true) == set(result.theta_hat):
        truth = ParamVector(data.theta_true.to_dict(), result.theta_hat.specs)
        doc["abs_rel_err"] = {k: e for k, (e, _) in relative_errors(truth, result.theta_hat).items()}
    _write_json(_out_dir(config) / "fit.json", doc)
    print(f"{method} fit of {info.name} ({variant}): {result.theta_hat}, log-lik {result.loglik:.6g}")
    return EXIT_OK


def cmd_benchmark(config):
    """Run the simulate-then-fit benchmark; writes ``report.csv`` and ``summary.json``."""
    info, variant, _ = validate_task(config)
    methods = config.get("methods") or [config.get("method", "ours")]
    prov = provenance("benchmark", config)

    def progress(d, method, res):
        log.info("dataset %d %s: %s in %.2f s", d, method, res.theta_hat, res.wall_time)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", NoConvergenceWarning)
        report = benchmark(
            info.name, variant, methods, config.get("n_datasets", 10), config.get("n_traj", 50),
            config["seed"], config.get("ranges"), config.get("restarts", 10), task_config(config),
            config.get("temperature"), maxiter=config.get("maxiter", 200), progress=progress,
            n_jobs=config.get("jobs", 1),
        )
    for failure in report.failures:
        log.warning("dataset failure: %s", failure)
    out = _out_dir(config)
    _write(out / "report.csv", csv_header(prov) + report.to_csv(include_timing=False))
    _write_json(out / "summary.json", {"provenance": prov, "task": info.name, "variant": variant,
                                       **report.summary()})
    for method, med in report.summary()["median_abs_rel_err"].items():
        print(f"{info.name} ({variant}) {method}: median abs rel error {med:.4g}")
    return EXIT_OK


STUDY_COLUMNS = (
    "c_true", "agent", "method", "sigma_true", "p_true", "mean_max_x1", "sigma_hat", "c_hat", "p_hat",
    "abs_err_sigma", "loglik",
)


def cmd_lightdark_study(config):
    """Simulate filter-aware and certainty-equivalent agents over a grid of ``c`` and fit both methods.

    Writes ``study.csv`` (one row per cell, agent and method) and one
    ``trajectories_c<c>_<agent>.csv`` per cell and agent.
    """
    config["task"] = "lightdark"
    config.setdefault("theta", {})
    info, variant, theta = validate_task(config)
    grid = config.get("c_grid", [0.0])
    agents = config.get("agents", ["belief", "certainty-equivalent"])
    methods = config.get("methods", ["ours", "baseline"])
    n_traj = config.get("n_traj", 50)
    prov = provenance("lightdark-study", config)
    out = _out_dir(config)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=STUDY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for ci, c in enumerate(grid):
        cell_theta = theta.replace(c=c)
        for ai, agent in enumerate(agents):
            seed = int(np.random.SeedSequence([config["seed"], ci, ai]).generate_state(1)[0])
            data = _simulate(info, variant, cell_theta, config, n_traj, seed, planner=agent)
            _write(out / f"trajectories_c{c:g}_{agent}.csv", csv_header(prov) + data.to_csv())
            detour = float(np.mean(data.states[:, :, 0].max(axis=1))) if len(data) else float("nan")
            print(f"c={c:g} {agent} agent: mean max x1 {detour:.3f}")
            for method in methods:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", NoConvergenceWarning)
                    res = fit(data, "lightdark", method, variant, config.get("restarts", 10), seed,
                              config.get("ranges"), config=task_config(config),
                              temperature=config.get("temperature"), maxiter=config.get("maxiter", 200),
                              n_jobs=config.get("jobs", 1))
                log.info("c=%g %s %s fit in %.2f s", c, agent, method, res.wall_time)
                est = res.theta_hat
                writer.writerow({
                    "c_true": repr(float(c)), "agent": agent, "method": method,
                    "sigma_true": repr(cell_theta["sigma"]), "p_true": repr(cell_theta["p"]),
                    "mean_max_x1": repr(detour), "sigma_hat": repr(est["sigma"]), "c_hat": repr(est["c"]),
                    "p_hat": repr(est["p"]), "abs_err_sigma": repr(abs(est["sigma"] - cell_theta["sigma"])),
                    "loglik": repr(res.loglik),
                })
                print(f"  {method}: sigma {est['sigma']:.4g}, c {est['c']:.4g}, p {est['p']:.4g}")
    _write(out / "study.csv", csv_header(prov) + buf.getvalue())
    return EXIT_OK


def _common(parser):
    parser.add_argument("--config", help="JSON configuration file (flags override its values)")
    parser.add_argument("--task", help="task id")
    parser.add_argument("--variant", choices=("full", "partial"))
    parser.add_argument("--seed", type=int, help="random seed (default: $NIOC_SEED, then 0)")
    parser.add_argument("--temperature", type=float, help="MCE temperature (default: per task)")
    parser.add_argument("--T", type=int, dest="T", help="horizon override")
    parser.add_argument("--dt", type=float, help="time step override")
    parser.add_argument("--out", help="output directory (default: .)")
    parser.add_argument("--jobs", type=int, help="parallel workers for restarts")


def _fitting(parser):
    parser.add_argument("--restarts", type=int, help="optimizer restarts (default 10)")
    parser.add_argument("--maxiter", type=int, help="L-BFGS-B iterations per restart (default 200)")
    parser.add_argument("--ranges", help="restart/sampling ranges, e.g. c_a=0.01:1,c_v=0.1:2")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nioc",
        description="Inverse optimal control for partially observable agents.",
        epilog="Config files are JSON objects with the keys of config_schema.json "
               f"(schema version {SCHEMA_VERSION}): task, variant, method, methods, theta, ranges, "
               "n_datasets, n_traj, T, dt, target, belief_var, seed, temperature, restarts, maxiter, "
               "planner, c_grid, agents, out, jobs. Exit codes: 0 ok, 2 config/IO, 3 solver, 4 optimization.",
    )
    parser.add_argument("--version", action="version", version=f"nioc {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an agent and write a dataset")
    _common(p)
    p.add_argument("--theta", help="parameters, e.g. c_a=0.1,c_v=0.5 (missing ones use task defaults)")
    p.add_argument("--n-traj", type=int, dest="n_traj", help="number of trajectories (default 50)")
    p.add_argument("--planner", choices=("belief", "certainty-equivalent"))

    p = sub.add_parser("fit", help="fit parameters to a dataset file")
    p.add_argument("dataset", help="dataset JSON written by 'nioc simulate'")
    _common(p)
    _fitting(p)
    p.add_argument("--method", choices=("ours", "baseline"))

    p = sub.add_parser("benchmark", help="simulate-then-fit parameter recovery benchmark")
    _common(p)
    _fitting(p)
    p.add_argument("--methods", help="comma-separated methods (default: ours)")
    p.add_argument("--n-datasets", type=int, dest="n_datasets", help="number of datasets (default 10)")
    p.add_argument("--n-traj", type=int, dest="n_traj", help="trajectories per dataset (default 50)")

    p = sub.add_parser("lightdark-study", help="filter-aware vs certainty-equivalent agents on the light-dark task")
    _common(p)
    _fitting(p)
    p.add_argument("--theta", help="sigma and p of the agent, e.g. sigma=0.2,p=0")
    p.add_argument("--c-grid", dest="c_grid", help="comma-separated values of c (default 0)")
    p.add_argument("--agents", help="comma-separated planners (default belief,certainty-equivalent)")
    p.add_argument("--methods", help="comma-separated methods (default ours,baseline)")
    p.add_argument("--n-traj", type=int, dest="n_traj", help="trajectories per cell (default 50)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = None
    try:
        config = resolve_config(args, {})
        handler = _start_sidecar(args.command, config)
        t0 = time.perf_counter()
        if args.command == "simulate":
            code = cmd_simulate(config)
        elif args.command == "fit":
            code = cmd_fit(config, args.dataset)
        elif args.command == "benchmark":
            code = cmd_benchmark(config)
        else:
            code = cmd_lightdark_study(config)
        log.info("finished in %.2f s", time.perf_counter() - t0)
        return code
    except ConfigError as exc:
        print(f"nioc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailure as exc:
        print(f"nioc: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (AllRestartsFailed, NoConvergence) as exc:
        print(f"nioc: optimization failed: {exc}", file=sys.stderr)
        return EXIT_OPTIMIZATION
    finally:
        if handler is not None:
            log.removeHandler(handler)
            handler.close()


if __name__ == "__main__":
    sys.exit(main())
