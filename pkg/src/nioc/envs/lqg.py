"""Linear-Gaussian point mass, a convex test bed where every approximation is exact."""

import numpy as np

from nioc.model import ParamSpec, ParamVector, PomdpModel

DT = 0.1
HORIZON = 20
GOAL = 1.0

SPECS = (ParamSpec("c_a"), ParamSpec("c_v"), ParamSpec("sigma_m"))
PARTIAL_SPECS = SPECS + (ParamSpec("sigma_o"),)
DEFAULT_THETA = {"c_a": 0.1, "c_v": 0.3, "sigma_m": 0.3, "sigma_o": 0.1}


def make_lqg(theta, variant="full", dt=DT, T=HORIZON):
    """A 1-D point mass pushed to position 1.

    Additive force noise ``sigma_m v`` and, in the partial variant, additive
    observation noise ``sigma_o w`` on both coordinates.
    """
    theta = ParamVector(theta, PARTIAL_SPECS if variant == "partial" else SPECS)
    c_a, c_v, s_m = theta["c_a"], theta["c_v"], theta["sigma_m"]
    A = np.array([[1.0, dt], [0.0, 1.0]])
    B = np.array([[0.0], [dt]])

    def dynamics(x, u, v):
        return x @ A.T + (u + s_m * v) @ B.T

    def running_cost(x, u):
        return c_a * dt * np.sum(u * u, axis=-1)

    def final_cost(x):
        return (x[..., 0] - GOAL) ** 2 + c_v * x[..., 1] ** 2

    obs = {}
    if variant == "partial":
        s_o = theta["sigma_o"]

        def observation(x, w):
            return x + s_o * w

        obs = dict(observation=observation, m=2, w_dim=2)
    return PomdpModel(
        name="lqg", n=2, u_dim=1, v_dim=1, T=T, dynamics=dynamics,
        running_cost=running_cost, final_cost=final_cost, x1=np.zeros(2),
        theta=theta, variant=variant, dynamics_key=("lqg", dt), info={"dt": dt}, **obs,
    )
