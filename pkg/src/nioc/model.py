"""Parameterized POMDP models, parameter vectors and trajectory datasets."""

import csv
import io
import json
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Callable, Hashable, Optional

import numpy as np

from nioc.exceptions import MissingParameter, NonPositiveParameter

__version__ = "0.1.0"


@dataclass(frozen=True)
class ParamSpec:
    """Declaration of one named model parameter.

    Positive parameters are optimized in log space and sampled log-uniformly
    from ``(low, high)``; the others are optimized as-is and sampled
    uniformly.
    """

    name: str
    positive: bool = True
    low: float = 1e-2
    high: float = 1.0

    def sample(self, rng):
        if self.positive:
            return float(np.exp(rng.uniform(np.log(self.low), np.log(self.high))))
        return float(rng.uniform(self.low, self.high))


class ParamVector(Mapping):
    """Name-indexed parameter values with their transform metadata."""

    def __init__(self, values, specs):
        self._specs = tuple(specs)
        names = [s.name for s in self._specs]
        missing = [n for n in names if n not in values]
        if missing:
            raise MissingParameter(f"missing parameter(s): {', '.join(missing)}")
        self._values = {n: float(values[n]) for n in names}

    @property
    def specs(self):
        return self._specs

    @property
    def names(self):
        return tuple(s.name for s in self._specs)

    def __getitem__(self, name):
        return self._values[name]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def __repr__(self):
        inner = ", ".join(f"{k}={v:.6g}" for k, v in self._values.items())
        return f"ParamVector({inner})"

    def __eq__(self, other):
        if isinstance(other, ParamVector):
            return self._values == other._values and self._specs == other._specs
        return NotImplemented

    def replace(self, **values):
        return ParamVector({**self._values, **values}, self._specs)

    def to_dict(self):
        return dict(self._values)


def params_to_optimizer_space(theta):
    """Map a ParamVector to an unconstrained vector (log for positive entries).

    Raises:
        NonPositiveParameter: if a positive-constrained entry is <= 0.
    """
    out = []
    for spec in theta.specs:
        value = theta[spec.name]
        if spec.positive:
            if not value > 0.0:
                raise NonPositiveParameter(f"{spec.name}={value} must be > 0")
            out.append(np.log(value))
        else:
            out.append(value)
    return np.array(out, dtype=float)


def optimizer_space_to_params(vector, specs):
    vector = np.asarray(vector, dtype=float)
    values = {
        s.name: float(np.exp(z)) if s.positive else float(z) for s, z in zip(specs, vector)
    }
    return ParamVector(values, specs)


@dataclass(frozen=True, eq=False)
class PomdpModel:
    """A partially (or fully) observable stochastic control problem.

    Callables broadcast over leading dimensions:

    * ``dynamics(x, u, v) -> x'`` with ``v`` standard normal noise,
    * ``observation(x, w) -> y`` (None for a fully observable agent),
    * ``running_cost(x, u) -> scalar`` and ``final_cost(x) -> scalar``.

    ``v`` and ``w`` must enter affinely, so that ``v = w = 0`` gives the
    noiseless path. ``dynamics_key`` identifies the noiseless dynamics: two
    models with equal non-None keys have identical ``dynamics(x, u, 0)``.
    """

    name: str
    n: int
    u_dim: int
    v_dim: int
    T: int
    dynamics: Callable
    running_cost: Callable
    final_cost: Callable
    x1: np.ndarray
    observation: Optional[Callable] = None
    m: int = 0
    w_dim: int = 0
    belief_cov: Optional[np.ndarray] = None
    temperature: float = 0.0
    u_init: Optional[np.ndarray] = None
    theta: Optional[ParamVector] = None
    variant: str = "full"
    dynamics_key: Optional[Hashable] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "x1", np.asarray(self.x1, dtype=float))
        if self.belief_cov is None:
            object.__setattr__(self, "belief_cov", 1e-4 * np.eye(self.n))
        else:
            object.__setattr__(self, "belief_cov", np.asarray(self.belief_cov, dtype=float))
        if self.u_init is None:
            object.__setattr__(self, "u_init", np.zeros((self.T - 1, self.u_dim)))
        else:
            object.__setattr__(
                self, "u_init", np.broadcast_to(np.asarray(self.u_init, float), (self.T - 1, self.u_dim)).copy()
            )

    @property
    def partial(self):
        return self.observation is not None

    def f0(self, x, u):
        x = np.asarray(x, dtype=float)
        return self.dynamics(x, u, np.zeros(x.shape[:-1] + (self.v_dim,)))

    def h0(self, x):
        x = np.asarray(x, dtype=float)
        return self.observation(x, np.zeros(x.shape[:-1] + (self.w_dim,)))

    def trajectory_cost(self, xs, us):
        """Deterministic cost of state sequence ``(..., T, n)`` and controls ``(..., T-1, u)``."""
        return np.sum(self.running_cost(xs[..., :-1, :], us), axis=-1) + self.final_cost(xs[..., -1, :])


def mix_seed(seed, index):
    """Derive a per-trajectory 64-bit seed (splitmix64 finalizer of ``seed + index``)."""
    mask = (1 << 64) - 1
    z = (int(seed) + 0x9E3779B97F4A7C15 * (int(index) + 1)) & mask
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


@dataclass
class Trajectory:
    states: np.ndarray
    controls: Optional[np.ndarray] = None
    seed: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2:
            raise ValueError("states must be a (T, n) array")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("trajectory contains non-finite states")
        if self.controls is not None:
            self.controls = np.asarray(self.controls, dtype=float)


@dataclass
class Dataset:
    """State trajectories plus the metadata of how they were generated."""

    task: str
    theta_true: Optional[ParamVector]
    trajectories: list
    variant: str = "partial"
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = {t.states.shape for t in self.trajectories}
        if len(shapes) > 1:
            raise ValueError(f"trajectories differ in shape: {sorted(shapes)}")

    def __len__(self):
        return len(self.trajectories)

    @property
    def states(self):
        """All trajectories stacked to ``(n_traj, T, n)``."""
        if not self.trajectories:
            return np.zeros((0, self.metadata.get("T", 0), self.metadata.get("n", 0)))
        return np.stack([t.states for t in self.trajectories])

    @property
    def T(self):
        return self.trajectories[0].states.shape[0] if self.trajectories else self.metadata.get("T", 0)

    @property
    def n(self):
        return self.trajectories[0].states.shape[1] if self.trajectories else self.metadata.get("n", 0)

    def subset(self, indices):
        return Dataset(
            self.task, self.theta_true, [self.trajectories[i] for i in indices],
            self.variant, self.seed, dict(self.metadata),
        )

    def to_dict(self):
        return {
            "task": self.task,
            "variant": self.variant,
            "theta_true": None if self.theta_true is None else self.theta_true.to_dict(),
            "T": int(self.T),
            "n": int(self.n),
            "seed": int(self.seed),
            "metadata": self.metadata,
            "trajectory_seeds": [int(t.seed) for t in self.trajectories],
            "trajectories": [t.states.tolist() for t in self.trajectories],
        }

    def to_json(self, indent=None):
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, doc, specs=None):
        """Rebuild a dataset; ``specs`` attaches parameter metadata to θ_true."""
        for key in ("task", "trajectories"):
            if key not in doc:
                raise ValueError(f"dataset document lacks {key!r}")
        theta = doc.get("theta_true")
        if theta is not None:
            if specs is None:
                specs = [ParamSpec(k) for k in theta]
            theta = ParamVector(theta, specs)
        seeds = doc.get("trajectory_seeds") or [0] * len(doc["trajectories"])
        trajs = [Trajectory(np.array(s, dtype=float), seed=int(sd)) for s, sd in zip(doc["trajectories"], seeds)]
        meta = dict(doc.get("metadata", {}))
        meta.setdefault("T", doc.get("T", 0))
        meta.setdefault("n", doc.get("n", 0))
        return cls(doc["task"], theta, trajs, doc.get("variant", "partial"), int(doc.get("seed", 0)), meta)

    @classmethod
    def from_json(cls, text, specs=None):
        return cls.from_dict(json.loads(text), specs)

    def to_csv(self):
        """One row per (trajectory, t): ``traj_id, t, x_0 ... x_{n-1}``."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["traj_id", "t"] + [f"x_{i}" for i in range(self.n)])
        for k, traj in enumerate(self.trajectories):
            for t, x in enumerate(traj.states):
                writer.writerow([k, t] + [repr(float(v)) for v in x])
        return buf.getvalue()
