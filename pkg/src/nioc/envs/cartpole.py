"""Cart-pole: move the cart from 0 to 1 while keeping the pole upright.

Equations of motion and constants are those of the classic gym cart-pole;
pole angle 0 is upright. Integration is semi-implicit Euler.
"""

import numpy as np

from nioc.model import ParamSpec, ParamVector, PomdpModel

DT = 0.02
HORIZON = 200
GRAVITY = 9.8
MASS_CART = 1.0
MASS_POLE = 0.1
HALF_LENGTH = 0.5
TOTAL_MASS = MASS_CART + MASS_POLE
POLE_MOMENT = MASS_POLE * HALF_LENGTH
GOAL = 1.0
# the pole-angle penalty is weighted like the position goal
ANGLE_WEIGHT = 1.0
# running control costs are summed over T - 1 steps; scaling by dt keeps them
# comparable to the final costs for c_a in the sampling range
CONTROL_SCALE = DT

SPECS = (ParamSpec("c_a"), ParamSpec("c_v"), ParamSpec("sigma_m"))
PARTIAL_SPECS = SPECS + (ParamSpec("sigma_o"),)
DEFAULT_THETA = {"c_a": 0.1, "c_v": 0.1, "sigma_m": 0.3, "sigma_o": 0.1}


def accelerations(x, force):
    """Cart and pole accelerations for state ``(pos, vel, angle, ang_vel)``."""
    sin, cos = np.sin(x[..., 2]), np.cos(x[..., 2])
    temp = (force + POLE_MOMENT * x[..., 3] ** 2 * sin) / TOTAL_MASS
    ang_acc = (GRAVITY * sin - cos * temp) / (
        HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos**2 / TOTAL_MASS)
    )
    acc = temp - POLE_MOMENT * ang_acc * cos / TOTAL_MASS
    return acc, ang_acc


def energy(x):
    """Mechanical energy of cart plus uniform rod, potential at the pivot height."""
    x = np.asarray(x, dtype=float)
    pos_vel, angle, ang_vel = x[..., 1], x[..., 2], x[..., 3]
    # rod centre velocity
    vx = pos_vel + HALF_LENGTH * np.cos(angle) * ang_vel
    vy = -HALF_LENGTH * np.sin(angle) * ang_vel
    inertia = MASS_POLE * (2 * HALF_LENGTH) ** 2 / 12.0
    kinetic = 0.5 * MASS_CART * pos_vel**2 + 0.5 * MASS_POLE * (vx**2 + vy**2) + 0.5 * inertia * ang_vel**2
    return kinetic + MASS_POLE * GRAVITY * HALF_LENGTH * np.cos(angle)


def make_cartpole(theta, variant="full", dt=DT, T=HORIZON):
    """Build the cart-pole model.

    The applied force is ``u (1 + sigma_m v)``; the partial variant observes
    ``x + sigma_o w``.
    """
    theta = ParamVector(theta, PARTIAL_SPECS if variant == "partial" else SPECS)
    c_a, c_v, s_m = theta["c_a"], theta["c_v"], theta["sigma_m"]

    def dynamics(x, u, v):
        force = u[..., 0] * (1.0 + s_m * v[..., 0])
        acc, ang_acc = accelerations(x, force)
        vel = x[..., 1] + dt * acc
        ang_vel = x[..., 3] + dt * ang_acc
        return np.stack([x[..., 0] + dt * vel, vel, x[..., 2] + dt * ang_vel, ang_vel], axis=-1)

    def running_cost(x, u):
        return CONTROL_SCALE * c_a * np.sum(u * u, axis=-1)

    def final_cost(x):
        return (
            (x[..., 0] - GOAL) ** 2
            + ANGLE_WEIGHT * (1.0 - np.cos(x[..., 2]))
            + c_v * (x[..., 1] ** 2 + x[..., 3] ** 2)
        )

    obs = {}
    if variant == "partial":
        s_o = theta["sigma_o"]

        def observation(x, w):
            return x + s_o * w

        obs = dict(observation=observation, m=4, w_dim=4)
    return PomdpModel(
        name="cartpole", n=4, u_dim=1, v_dim=1, T=T, dynamics=dynamics,
        running_cost=running_cost, final_cost=final_cost, x1=np.zeros(4),
        theta=theta, variant=variant, dynamics_key=("cartpole", dt), info={"dt": dt}, **obs,
    )
