"""Torque-driven pendulum swing-up.

Physics follow the classic gym pendulum (g = 10, m = 1, l = 1), so the
angular acceleration is ``15 sin(angle) + 3 u``. Angle 0 is upright and the
pendulum starts hanging down at ``pi``. Integration is semi-implicit Euler.
"""

import numpy as np

from nioc.model import ParamSpec, ParamVector, PomdpModel

DT = 0.05
HORIZON = 50
GRAVITY_TERM = 15.0
TORQUE_GAIN = 3.0
# weight of the (1 - cos) swing-up penalty relative to the parameterized terms
GOAL_WEIGHT = 10.0
OBS_NOISE = 0.1

SPECS = (ParamSpec("c_a"), ParamSpec("c_v"), ParamSpec("sigma_m"))
PARTIAL_SPECS = SPECS + (ParamSpec("sigma_o"),)
DEFAULT_THETA = {"c_a": 0.1, "c_v": 0.1, "sigma_m": 0.3, "sigma_o": OBS_NOISE}


def energy(x):
    """Mechanical energy per unit inertia, potential referenced at the pivot."""
    x = np.asarray(x, dtype=float)
    return 0.5 * x[..., 1] ** 2 + GRAVITY_TERM * np.cos(x[..., 0])


def make_pendulum(theta, variant="full", dt=DT, T=HORIZON):
    """Build the pendulum model.

    The applied torque is ``u (1 + sigma_m v)``. The partial variant observes
    ``(sin, cos, angular velocity) + sigma_o w``.
    """
    theta = ParamVector(theta, PARTIAL_SPECS if variant == "partial" else SPECS)
    c_a, c_v, s_m = theta["c_a"], theta["c_v"], theta["sigma_m"]

    def dynamics(x, u, v):
        torque = u[..., 0] * (1.0 + s_m * v[..., 0])
        vel = x[..., 1] + dt * (GRAVITY_TERM * np.sin(x[..., 0]) + TORQUE_GAIN * torque)
        return np.stack([x[..., 0] + dt * vel, vel], axis=-1)

    def running_cost(x, u):
        return c_a * dt * np.sum(u * u, axis=-1)

    def final_cost(x):
        return GOAL_WEIGHT * (1.0 - np.cos(x[..., 0])) + c_v * x[..., 1] ** 2

    obs = {}
    if variant == "partial":
        s_o = theta["sigma_o"]

        def observation(x, w):
            y = np.stack([np.sin(x[..., 0]), np.cos(x[..., 0]), x[..., 1]], axis=-1)
            return y + s_o * w

        obs = dict(observation=observation, m=3, w_dim=3)
    return PomdpModel(
        name="pendulum", n=2, u_dim=1, v_dim=1, T=T, dynamics=dynamics,
        running_cost=running_cost, final_cost=final_cost, x1=np.array([np.pi, 0.0]),
        u_init=np.full((T - 1, 1), 0.5), theta=theta, variant=variant,
        dynamics_key=("pendulum", dt), info={"dt": dt}, **obs,
    )
