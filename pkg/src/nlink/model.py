"""Domain types and discrete geometry of the N-link filament.

The state of an N-link filament is ``X = (theta_1, ..., theta_N, r1_x, r1_y)``:
one unwrapped angle per link plus the position of the first vertex. All other
vertices follow from the links having length ``h = L / N``, so inextensibility
holds by construction.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np


class BoundaryCondition(enum.Enum):
    """Condition imposed at the proximal end ``s = 0``.

    The distal end ``s = L`` is always free.
    """

    FREE = "free"
    PINNED = "pinned"
    CLAMPED = "clamped"

    @classmethod
    def parse(cls, value: "str | BoundaryCondition") -> "BoundaryCondition":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown boundary condition {value!r}; expected one of "
                f"{[bc.value for bc in cls]}"
            ) from None

    def free_slots(self, N: int) -> np.ndarray:
        """Indices of the entries of ``X`` that evolve under this condition."""
        if self is BoundaryCondition.FREE:
            return np.arange(N + 2)
        if self is BoundaryCondition.PINNED:
            return np.arange(N)
        return np.arange(1, N)


@dataclass(frozen=True)
class PhysParams:
    """Filament length, bending stiffness and drag coefficients.

    Drag coefficients must be strictly positive and distinct.
    """

    L: float = 1.0
    E: float = 1.0
    c_par: float = 1.0
    c_perp: float = 2.0

    def __post_init__(self):
        for name in ("L", "E", "c_par", "c_perp"):
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value)):
                raise ValueError(f"{name} must be a finite number, got {value!r}")
            if value <= 0:
                raise ValueError(f"{name} must be > 0, got {value!r}")
            object.__setattr__(self, name, float(value))
        if self.c_par == self.c_perp:
            raise ValueError(
                "drag coefficients must satisfy c_par != c_perp "
                f"(got c_par = c_perp = {self.c_par})"
            )


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Configuration:
    """Link angles, first-vertex position, boundary condition and time.

    Angles are kept as given (unwrapped). Reducing them modulo ``2*pi`` would
    change the elastic moments, so the caller's representatives are trusted.
    """

    theta: np.ndarray
    r1: np.ndarray = field(default_factory=lambda: np.zeros(2))
    params: PhysParams = field(default_factory=PhysParams)
    bc: BoundaryCondition = BoundaryCondition.FREE
    time: float = 0.0

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        r1 = np.asarray(self.r1, dtype=float)
        if theta.ndim != 1 or theta.size < 1:
            raise ValueError("theta must be a non-empty 1-D array")
        if r1.shape != (2,):
            raise ValueError(f"r1 must be a 2-vector, got shape {r1.shape}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(r1))):
            raise ValueError("configuration entries must be finite")
        if not math.isfinite(self.time):
            raise ValueError("time must be finite")
        object.__setattr__(self, "theta", _frozen(theta))
        object.__setattr__(self, "r1", _frozen(r1))
        object.__setattr__(self, "bc", BoundaryCondition.parse(self.bc))
        object.__setattr__(self, "time", float(self.time))

    @property
    def N(self) -> int:
        return self.theta.size

    @property
    def h(self) -> float:
        return self.params.L / self.N

    @property
    def X(self) -> np.ndarray:
        """State vector ``(theta_1, ..., theta_N, r1_x, r1_y)``."""
        return np.concatenate([self.theta, self.r1])

    @classmethod
    def from_X(cls, X, params: PhysParams, bc=BoundaryCondition.FREE, time=0.0):
        X = np.asarray(X, dtype=float)
        return cls(theta=X[:-2], r1=X[-2:], params=params, bc=bc, time=time)

    def with_X(self, X, time=None) -> "Configuration":
        return Configuration.from_X(
            X, self.params, self.bc, self.time if time is None else time
        )


@dataclass(frozen=True)
class InternalLoads:
    """Contact forces ``n`` (N+1, 2) and moments ``m`` (N+1,) at the joints.

    Entry ``i`` is the load exerted by link ``i`` on link ``i - 1`` (0-based
    vertex index), with the end values fixed by the boundary conditions.
    """

    n: np.ndarray
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "n", _frozen(self.n))
        object.__setattr__(self, "m", _frozen(self.m))


def drag_matrix(theta, c_par: float, c_perp: float) -> np.ndarray:
    """Resistive-force drag tensor for a link at angle ``theta``.

    Returns ``-(c_perp e_perp e_perp^T + c_par e_par e_par^T)``. For an array
    of angles the result is stacked along the first axis.
    """
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    out = np.empty(theta.shape + (2, 2))
    out[..., 0, 0] = -(c_perp * s * s + c_par * c * c)
    out[..., 1, 1] = -(c_perp * c * c + c_par * s * s)
    off = (c_perp - c_par) * s * c
    out[..., 0, 1] = off
    out[..., 1, 0] = off
    return out


def tangents(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([np.cos(theta), np.sin(theta)], axis=-1)


def normals(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    return np.stack([-np.sin(theta), np.cos(theta)], axis=-1)


def vertices(config: Configuration) -> np.ndarray:
    """Vertex positions ``r_1 .. r_{N+1}`` as an (N+1, 2) array."""
    steps = config.h * tangents(config.theta)
    out = np.empty((config.N + 1, 2))
    out[0] = config.r1
    out[1:] = config.r1 + np.cumsum(steps, axis=0)
    return out


def midpoints(config: Configuration) -> np.ndarray:
    """Link midpoints ``r_{i+1/2}`` as an (N, 2) array."""
    r = vertices(config)
    return 0.5 * (r[:-1] + r[1:])


def elastic_energy(config: Configuration) -> float:
    """Bending energy ``(E/2) sum_i h ((theta_{i+1} - theta_i)/h)^2``."""
    d = np.diff(config.theta)
    return 0.5 * config.params.E / config.h * float(d @ d)


def joint_moments(config: Configuration) -> np.ndarray:
    """Elastic moments ``(E/h)(theta_i - theta_{i-1})`` at interior joints."""
    return config.params.E / config.h * np.diff(config.theta)


def elastic_energy_gradient(config: Configuration) -> np.ndarray:
    """Gradient of :func:`elastic_energy` with respect to ``X`` (length N+2)."""
    m = joint_moments(config)
    g = np.zeros(config.N + 2)
    g[: config.N - 1] -= m
    g[1 : config.N] += m
    return g


def elastic_energy_hessian(params: PhysParams, N: int) -> np.ndarray:
    """Constant Hessian of the bending energy, (N+2) x (N+2)."""
    H = np.zeros((N + 2, N + 2))
    k = params.E * N / params.L
    idx = np.arange(N - 1)
    H[idx, idx] += k
    H[idx + 1, idx + 1] += k
    H[idx, idx + 1] -= k
    H[idx + 1, idx] -= k
    return H


def rotate(config: Configuration, phi: float, about=(0.0, 0.0)) -> Configuration:
    """Rigidly rotate a configuration by ``phi`` about the point ``about``."""
    c, s = math.cos(phi), math.sin(phi)
    R = np.array([[c, -s], [s, c]])
    about = np.asarray(about, dtype=float)
    r1 = about + R @ (config.r1 - about)
    return Configuration(
        theta=config.theta + phi,
        r1=r1,
        params=config.params,
        bc=config.bc,
        time=config.time,
    )


def unwrap_angles(theta) -> np.ndarray:
    """Representatives with neighbour jumps below ``pi``.

    Never applied automatically: a jump of ``2 pi`` between links is a full
    loop that stores bending energy, and only the caller knows whether it is
    meant.
    """
    return np.unwrap(np.asarray(theta, dtype=float))
