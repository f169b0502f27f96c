"""Benchmark task registry.

Each task maps to a factory ``(theta, variant, **config) -> PomdpModel`` and
carries its parameter declarations, default parameters and MCE temperature.
"""

from dataclasses import dataclass, field, replace
from typing import Callable

from nioc.envs import cartpole, lightdark, lqg, navigation, pendulum, reaching
from nioc.envs.cartpole import make_cartpole
from nioc.envs.lightdark import make_lightdark
from nioc.envs.lqg import make_lqg
from nioc.envs.navigation import make_navigation
from nioc.envs.pendulum import make_pendulum
from nioc.envs.reaching import make_reaching
from nioc.exceptions import UnknownTask
from nioc.model import ParamVector

__all__ = [
    "TaskInfo", "REGISTRY", "get_task", "instantiate", "task_ids",
    "make_pendulum", "make_cartpole", "make_reaching", "make_navigation", "make_lightdark", "make_lqg",
]


@dataclass(frozen=True)
class TaskInfo:
    """Static description of one task.

    Attributes:
        name: CLI-facing task id.
        factory: builds the PomdpModel.
        specs: parameter declarations per variant.
        default_theta: parameter values used when none are given.
        temperature: MCE temperature used by the agent and by both likelihoods.
        config_keys: extra keyword arguments accepted by the factory.
    """

    name: str
    factory: Callable
    specs: dict
    default_theta: dict
    temperature: float
    config_keys: tuple = field(default=("dt", "T"))

    @property
    def variants(self):
        return tuple(self.specs)

    def param_specs(self, variant):
        if variant not in self.specs:
            raise ValueError(f"task {self.name!r} has no {variant!r} variant (has {self.variants})")
        return self.specs[variant]

    def default_params(self, variant):
        specs = self.param_specs(variant)
        return ParamVector({s.name: self.default_theta[s.name] for s in specs}, specs)


def _both(module):
    return {"full": module.SPECS, "partial": module.PARTIAL_SPECS}


REGISTRY = {
    info.name: info
    for info in (
        TaskInfo("pendulum", make_pendulum, _both(pendulum), pendulum.DEFAULT_THETA, 1e-3),
        TaskInfo("cartpole", make_cartpole, _both(cartpole), cartpole.DEFAULT_THETA, 1e-3),
        TaskInfo("reaching", make_reaching, _both(reaching), reaching.DEFAULT_THETA, 1e-6,
                 ("dt", "T", "target")),
        TaskInfo("navigation", make_navigation, _both(navigation), navigation.DEFAULT_THETA, 1e-6,
                 ("dt", "T", "target")),
        TaskInfo("lightdark", make_lightdark, {"partial": lightdark.SPECS}, lightdark.DEFAULT_THETA, 1e-5,
                 ("dt", "T", "belief_var")),
        TaskInfo("lqg", make_lqg, _both(lqg), lqg.DEFAULT_THETA, 1e-4),
    )
}


def task_ids():
    return tuple(REGISTRY)


def get_task(task_id):
    try:
        return REGISTRY[task_id]
    except KeyError:
        raise UnknownTask(f"unknown task {task_id!r}; known: {', '.join(REGISTRY)}") from None


def instantiate(task_id, theta=None, variant=None, temperature=None, **config):
    """Build the model of a registered task.

    Args:
        task_id: one of ``task_ids()``.
        theta: mapping or ParamVector; None uses the task defaults.
        variant: ``"full"`` or ``"partial"``; defaults to the task's first.
        temperature: overrides the task's MCE temperature.
        **config: task configuration such as ``dt``, ``T`` or ``target``.

    Raises:
        UnknownTask: for an unregistered id.
        MissingParameter: if ``theta`` lacks a required entry.
    """
    info = get_task(task_id)
    variant = variant or info.variants[0]
    info.param_specs(variant)
    unknown = set(config) - set(info.config_keys)
    if unknown:
        raise ValueError(f"task {task_id!r} does not accept {sorted(unknown)}")
    if theta is None:
        theta = info.default_params(variant)
    kwargs = {} if task_id == "lightdark" else {"variant": variant}
    model = info.factory(dict(theta), **kwargs, **config)
    alpha = info.temperature if temperature is None else float(temperature)
    return replace(model, temperature=alpha)
