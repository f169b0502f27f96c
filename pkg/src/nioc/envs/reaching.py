"""Planar two-link arm reaching to one of eight radial targets.

Arm constants follow the standard two-joint biomechanical model used in the
optimal feedback control literature (shoulder and elbow, viscous joint
friction, no gravity). The hand position enters the cost, so the cost is a
non-quadratic function of the joint angles.
"""

import numpy as np

from nioc.model import ParamSpec, ParamVector, PomdpModel

DT = 0.01
HORIZON = 50

M1, M2 = 1.4, 1.0  # link masses, kg
L1, L2 = 0.30, 0.33  # link lengths, m
S2 = 0.16  # distance from elbow to forearm centre of mass, m
I1, I2 = 0.025, 0.045  # link inertias, kg m^2
FRICTION = np.array([[0.05, 0.025], [0.025, 0.05]])

A1 = I1 + I2 + M2 * L1**2
A2 = M2 * L1 * S2
A3 = I2

START_ANGLES = np.array([np.pi / 4, np.pi / 2])
TARGET_DISTANCE = 0.10  # m
N_TARGETS = 8
# hand positions enter the cost in cm and hand velocities in dm/s, which puts
# the three cost terms on comparable scales for parameters in (0.01, 1)
POSITION_SCALE = 100.0
VELOCITY_SCALE = 10.0

SPECS = (ParamSpec("c_a"), ParamSpec("c_v"), ParamSpec("sigma_m"))
PARTIAL_SPECS = SPECS + (ParamSpec("sigma_o"),)
DEFAULT_THETA = {"c_a": 0.1, "c_v": 0.1, "sigma_m": 0.3, "sigma_o": 0.1}


def hand_position(angles):
    """Forward kinematics: hand position in metres for joint angles ``(..., 2)``."""
    a1, a12 = angles[..., 0], angles[..., 0] + angles[..., 1]
    return np.stack(
        [L1 * np.cos(a1) + L2 * np.cos(a12), L1 * np.sin(a1) + L2 * np.sin(a12)], axis=-1
    )


def hand_velocity(x):
    a1, a12 = x[..., 0], x[..., 0] + x[..., 1]
    w1, w12 = x[..., 2], x[..., 2] + x[..., 3]
    return np.stack(
        [-L1 * np.sin(a1) * w1 - L2 * np.sin(a12) * w12, L1 * np.cos(a1) * w1 + L2 * np.cos(a12) * w12],
        axis=-1,
    )


def targets(distance=TARGET_DISTANCE):
    """The eight targets, evenly spaced on a circle around the start hand position."""
    angles = 2 * np.pi * np.arange(N_TARGETS) / N_TARGETS
    return hand_position(START_ANGLES) + distance * np.stack([np.cos(angles), np.sin(angles)], axis=-1)


def joint_accelerations(x, torque):
    """Solve ``M(q) q'' + C(q, q') + B q' = torque`` for ``q''``."""
    cos2, sin2 = np.cos(x[..., 1]), np.sin(x[..., 1])
    w1, w2 = x[..., 2], x[..., 3]
    m11 = A1 + 2 * A2 * cos2
    m12 = A3 + A2 * cos2
    m22 = np.full_like(m11, A3)
    c1 = -A2 * sin2 * w2 * (2 * w1 + w2)
    c2 = A2 * sin2 * w1**2
    rhs = torque - np.stack([c1, c2], axis=-1) - x[..., 2:] @ FRICTION.T
    det = m11 * m22 - m12**2
    return np.stack(
        [(m22 * rhs[..., 0] - m12 * rhs[..., 1]) / det, (m11 * rhs[..., 1] - m12 * rhs[..., 0]) / det],
        axis=-1,
    )


def make_reaching(theta, variant="full", target=0, dt=DT, T=HORIZON):
    """Build the reaching model for target index ``target`` (0..7).

    Torques are ``u * (1 + sigma_m v)`` elementwise; the partial variant
    observes joint angles and velocities with additive noise ``sigma_o w``.
    """
    theta = ParamVector(theta, PARTIAL_SPECS if variant == "partial" else SPECS)
    c_a, c_v, s_m = theta["c_a"], theta["c_v"], theta["sigma_m"]
    goal = targets()[int(target) % N_TARGETS]

    def dynamics(x, u, v):
        acc = joint_accelerations(x, u * (1.0 + s_m * v))
        vel = x[..., 2:] + dt * acc
        return np.concatenate([x[..., :2] + dt * vel, vel], axis=-1)

    def running_cost(x, u):
        return c_a * np.sum(u * u, axis=-1)

    def final_cost(x):
        err = POSITION_SCALE * (hand_position(x[..., :2]) - goal)
        vel = VELOCITY_SCALE * hand_velocity(x)
        return np.sum(err * err, axis=-1) + c_v * np.sum(vel * vel, axis=-1)

    obs = {}
    if variant == "partial":
        s_o = theta["sigma_o"]

        def observation(x, w):
            return x + s_o * w

        obs = dict(observation=observation, m=4, w_dim=4)
    return PomdpModel(
        name="reaching", n=4, u_dim=2, v_dim=2, T=T, dynamics=dynamics,
        running_cost=running_cost, final_cost=final_cost,
        x1=np.concatenate([START_ANGLES, np.zeros(2)]), theta=theta, variant=variant,
        dynamics_key=("reaching", dt), info={"dt": dt, "target": int(target), "goal": goal.tolist()}, **obs,
    )
