"""Walking to a target: heading-rate and forward-acceleration control."""

import numpy as np

from nioc.model import ParamSpec, ParamVector, PomdpModel

DT = 0.1
HORIZON = 50
TARGET = np.array([2.0, 2.0])

SPECS = (ParamSpec("c_a"), ParamSpec("c_v"), ParamSpec("sigma_m"))
PARTIAL_SPECS = SPECS + (ParamSpec("sigma_o"),)
DEFAULT_THETA = {"c_a": 0.1, "c_v": 0.1, "sigma_m": 0.3, "sigma_o": 0.1}


def make_navigation(theta, variant="partial", target=TARGET, dt=DT, T=HORIZON):
    """Build the navigation model.

    State is ``(x, y, heading, speed)``, starting at the origin facing along
    the x axis at rest. Controls are the heading rate and the forward
    acceleration, each with noise ``sigma_m u_i v_i``. The partial variant
    observes distance and bearing of the target plus the speed, with noise
    ``sigma_o w``. The final speed is penalized quadratically.
    """
    theta = ParamVector(theta, PARTIAL_SPECS if variant == "partial" else SPECS)
    c_a, c_v, s_m = theta["c_a"], theta["c_v"], theta["sigma_m"]
    k = np.asarray(target, dtype=float)

    def dynamics(x, u, v):
        rates = u + s_m * u * v
        heading, speed = x[..., 2], x[..., 3]
        parts = np.broadcast_arrays(
            np.cos(heading) * speed, np.sin(heading) * speed, rates[..., 0], rates[..., 1]
        )
        return x + dt * np.stack(parts, axis=-1)

    def running_cost(x, u):
        return c_a * np.sum(u * u, axis=-1)

    def final_cost(x):
        return (x[..., 0] - k[0]) ** 2 + (x[..., 1] - k[1]) ** 2 + c_v * x[..., 3] ** 2

    obs = {}
    if variant == "partial":
        s_o = theta["sigma_o"]

        def observation(x, w):
            dx, dy = k[0] - x[..., 0], k[1] - x[..., 1]
            y = np.stack([np.hypot(dx, dy), np.arctan2(dy, dx), x[..., 3]], axis=-1)
            return y + s_o * w

        obs = dict(observation=observation, m=3, w_dim=3)
    return PomdpModel(
        name="navigation", n=4, u_dim=2, v_dim=2, T=T, dynamics=dynamics,
        running_cost=running_cost, final_cost=final_cost, x1=np.zeros(4),
        theta=theta, variant=variant, dynamics_key=("navigation", dt),
        info={"dt": dt, "target": k.tolist()}, **obs,
    )
