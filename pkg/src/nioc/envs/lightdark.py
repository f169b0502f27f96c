"""Light-dark domain: position observations are sharp only near the light.

The light source sits on the vertical line ``x_1 = 5``. Observation noise
grows with the horizontal distance from it, and motor noise grows with the
control magnitude.
"""

import numpy as np

from nioc.model import ParamSpec, ParamVector, PomdpModel

DT = 10.0
HORIZON = 50
LIGHT = 5.0
START = np.array([2.0, 2.0])
TARGET_Y = 0.0
MOTOR_NOISE = 0.1
INITIAL_BELIEF_VAR = 1.0

# with dt = 10 the per-step control cost is ~1e-4, so c matters between
# roughly 1e-6 (no pragmatic detour) and 1e-3 (full detour to the light)
SPECS = (
    ParamSpec("sigma"),
    ParamSpec("c", low=1e-6, high=1e-2),
    ParamSpec("p", positive=False, low=-1.0, high=1.0),
)
DEFAULT_THETA = {"sigma": 0.2, "c": 0.0, "p": 0.0}


def make_lightdark(theta, variant="partial", dt=DT, T=HORIZON, belief_var=INITIAL_BELIEF_VAR):
    """Build the light-dark model.

    ``x' = x + dt u + 0.1 u * v`` and ``y = x + sigma |x_1 - 5| w``. The cost
    is ``|x_T - (p, 0)|^2 + sum_t (u_t'u_t / 2 + c (x_1 - 5)^2)``. The task
    only exists in a partially observable variant; ``c`` may be zero.
    """
    if variant != "partial":
        raise ValueError("the light-dark task is only defined with partial observability")
    theta = ParamVector(theta, SPECS)
    sigma, c, p = theta["sigma"], theta["c"], theta["p"]
    goal = np.array([p, TARGET_Y])

    def dynamics(x, u, v):
        return x + dt * u + MOTOR_NOISE * u * v

    def observation(x, w):
        return x + sigma * np.abs(x[..., :1] - LIGHT) * w

    def running_cost(x, u):
        return 0.5 * np.sum(u * u, axis=-1) + c * (x[..., 0] - LIGHT) ** 2

    def final_cost(x):
        return np.sum((x - goal) ** 2, axis=-1)

    return PomdpModel(
        name="lightdark", n=2, u_dim=2, v_dim=2, T=T, dynamics=dynamics,
        running_cost=running_cost, final_cost=final_cost, x1=START.copy(),
        observation=observation, m=2, w_dim=2, belief_cov=belief_var * np.eye(2),
        theta=theta, variant="partial", dynamics_key=("lightdark", dt),
        info={"dt": dt, "light": LIGHT, "goal": goal.tolist()},
    )
