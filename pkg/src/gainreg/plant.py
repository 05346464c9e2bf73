"""Cart-pole plant: nonlinear dynamics, RK4 stepping, clamps, episode noise."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

STATE_NAMES = ("x", "v", "theta", "omega")

#: Largest admissible initial-angle noise scale [rad].
THETA_NOISE_LIMIT = 35.0 * math.pi / 180.0


def default_pole_inertia(m: float, l: float) -> float:
    """Uniform-rod inertia about the pole's center of mass at distance l from the pivot."""
    return m * l * l / 3.0


@dataclass(frozen=True)
class PlantParams:
    """Cart-pole constants.  M is the total mass, l the pivot-to-COM distance."""

    M: float
    m: float
    l: float
    J: float
    g: float = 9.8
    d_c: float = 3.0
    d_p: float = 0.007

    def __post_init__(self):
        vals = (self.M, self.m, self.l, self.J, self.g, self.d_c, self.d_p)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("plant parameters must be finite")
        if self.m <= 0.0:
            raise ValueError("pole mass m must be positive")
        if self.M < self.m:
            raise ValueError(f"total mass M={self.M} must be >= pole mass m={self.m}")
        if self.l <= 0.0 or self.g <= 0.0:
            raise ValueError("l and g must be positive")
        if self.J < 0.0 or self.d_c < 0.0 or self.d_p < 0.0:
            raise ValueError("J, d_c and d_p must be nonnegative")
        ml = self.m * self.l
        if self.M * (self.m * self.l**2 + self.J) - ml * ml <= 0.0:
            raise ValueError("degenerate parameters: coupling determinant can reach zero")

    @property
    def m_c(self) -> float:
        """Cart mass."""
        return self.M - self.m

    @classmethod
    def nominal(cls, **overrides) -> "PlantParams":
        """Nominal plant; J defaults to the uniform-rod rule unless overridden."""
        vals = dict(M=0.4, m=0.3, l=0.05, g=9.8, d_c=3.0, d_p=0.007)
        for key, value in overrides.items():
            if key != "J":
                vals[key] = value
        j = overrides.get("J")
        vals["J"] = default_pole_inertia(vals["m"], vals["l"]) if j is None else j
        return cls(**vals)


@dataclass(frozen=True)
class PlantStack:
    """Per-episode plant constants stacked for vectorized rollouts."""

    M: np.ndarray
    m: np.ndarray
    l: np.ndarray
    J: np.ndarray
    g: np.ndarray
    d_c: np.ndarray
    d_p: np.ndarray

    @classmethod
    def of(cls, params: Sequence[PlantParams]) -> "PlantStack":
        return cls(*(np.array([getattr(p, f) for p in params], dtype=float)
                     for f in ("M", "m", "l", "J", "g", "d_c", "d_p")))

    def __len__(self):
        return self.M.shape[0]


@dataclass(frozen=True)
class SimLimits:
    """Force clamp, track half-length, and control period."""

    f_max: float = 20.0
    x_max: float = 10.0
    dt: float = 0.01

    def __post_init__(self):
        if not (self.f_max > 0.0 and self.x_max > 0.0 and self.dt > 0.0):
            raise ValueError("f_max, x_max and dt must be positive")


@dataclass(frozen=True)
class NoiseScales:
    """Gaussian scales for the initial state and the per-episode force bias."""

    x: float = 0.01
    v: float = 0.01
    theta: float = 0.1
    omega: float = 0.01
    force: float = 0.0

    def __post_init__(self):
        if min(self.x, self.v, self.theta, self.omega, self.force) < 0.0:
            raise ValueError("noise scales must be nonnegative")
        if self.theta > THETA_NOISE_LIMIT + 1e-12:
            raise ValueError(f"theta noise scale {self.theta} exceeds {THETA_NOISE_LIMIT:.4f} rad")

    @classmethod
    def zero(cls) -> "NoiseScales":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0)


def _accelerations(states, forces, p):
    """Cart and pole accelerations; broadcasts over leading batch axes."""
    v = states[..., 1]
    theta = states[..., 2]
    omega = states[..., 3]
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)
    ml = p.m * p.l
    mlj = p.m * p.l**2 + p.J
    delta = p.M * mlj - (ml * cos_t) ** 2
    shared = forces + ml * omega**2 * sin_t - p.d_c * v
    v_dot = (-(ml**2) * p.g * sin_t * cos_t + mlj * shared + ml * p.d_p * omega * cos_t) / delta
    omega_dot = (p.M * p.m * p.g * p.l * sin_t - ml * cos_t * shared - p.M * p.d_p * omega) / delta
    return v_dot, omega_dot, delta


def _derivative_vector(states, forces, p):
    v_dot, omega_dot, _ = _accelerations(states, forces, p)
    return np.stack([states[..., 1], v_dot, states[..., 3], omega_dot], axis=-1)


def derivatives(state, force: float, params: PlantParams) -> np.ndarray:
    """Time derivative of (x, v, theta, omega) under a horizontal force."""
    state = np.asarray(state, dtype=float)
    if state.shape != (4,):
        raise ValueError(f"state must have shape (4,), got {state.shape}")
    if not (np.all(np.isfinite(state)) and math.isfinite(force)):
        raise ValueError("non-finite state or force")
    v_dot, omega_dot, delta = _accelerations(state, float(force), params)
    if delta <= 0.0:
        raise ValueError("degenerate parameters: coupling determinant not positive")
    return np.array([state[1], float(v_dot), state[3], float(omega_dot)])


def dynamics_jacobian(states, forces, p):
    """Jacobian of the state derivative w.r.t. the state and the force.

    Accepts a single (4,) state or a stacked (..., 4) batch; returns
    (..., 4, 4) and (..., 4) arrays.
    """
    states = np.asarray(states, dtype=float)
    forces = np.asarray(forces, dtype=float)
    v = states[..., 1]
    theta = states[..., 2]
    omega = states[..., 3]
    sin_t = np.sin(theta)
    cos_t = np.cos(theta)
    ml = p.m * p.l
    mlj = p.m * p.l**2 + p.J
    delta = p.M * mlj - (ml * cos_t) ** 2
    ddelta_dth = 2.0 * ml**2 * sin_t * cos_t
    shared = forces + ml * omega**2 * sin_t - p.d_c * v
    v_dot = (-(ml**2) * p.g * sin_t * cos_t + mlj * shared + ml * p.d_p * omega * cos_t) / delta
    omega_dot = (p.M * p.m * p.g * p.l * sin_t - ml * cos_t * shared - p.M * p.d_p * omega) / delta

    dshared_dv = -p.d_c
    dshared_dth = ml * omega**2 * cos_t
    dshared_dom = 2.0 * ml * omega * sin_t

    dnv_dv = mlj * dshared_dv
    dnv_dth = -(ml**2) * p.g * (cos_t**2 - sin_t**2) + mlj * dshared_dth - ml * p.d_p * omega * sin_t
    dnv_dom = mlj * dshared_dom + ml * p.d_p * cos_t

    dnw_dv = -ml * cos_t * dshared_dv
    dnw_dth = p.M * p.m * p.g * p.l * cos_t + ml * sin_t * shared - ml * cos_t * dshared_dth
    dnw_dom = -ml * cos_t * dshared_dom - p.M * p.d_p

    jac = np.zeros(states.shape[:-1] + (4, 4))
    jac[..., 0, 1] = 1.0
    jac[..., 2, 3] = 1.0
    jac[..., 1, 1] = dnv_dv / delta
    jac[..., 1, 2] = (dnv_dth - v_dot * ddelta_dth) / delta
    jac[..., 1, 3] = dnv_dom / delta
    jac[..., 3, 1] = dnw_dv / delta
    jac[..., 3, 2] = (dnw_dth - omega_dot * ddelta_dth) / delta
    jac[..., 3, 3] = dnw_dom / delta

    jac_f = np.zeros(states.shape[:-1] + (4,))
    jac_f[..., 1] = mlj / delta
    jac_f[..., 3] = -ml * cos_t / delta
    return jac, jac_f


def rk4_stages(states, forces, p, dt: float):
    """Classical RK4 update with the force held constant over the step.

    Returns the unclamped next state and the first three stage slopes
    (enough to reconstruct the stage points for the reverse pass).
    """
    k1 = _derivative_vector(states, forces, p)
    k2 = _derivative_vector(states + 0.5 * dt * k1, forces, p)
    k3 = _derivative_vector(states + 0.5 * dt * k2, forces, p)
    k4 = _derivative_vector(states + dt * k3, forces, p)
    return states + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), (k1, k2, k3)


def position_clamp(states, x_max: float):
    """Hard wall at |x| = x_max: position clipped and velocity zeroed on contact."""
    engaged = np.abs(states[..., 0]) > x_max
    if not np.any(engaged):
        return states, engaged
    out = np.array(states, copy=True)
    out[..., 0] = np.clip(states[..., 0], -x_max, x_max)
    out[..., 1] = np.where(engaged, 0.0, states[..., 1])
    return out, engaged


def rk4_step(state, force: float, params: PlantParams, limits: SimLimits) -> np.ndarray:
    """One zero-order-hold RK4 step followed by the track-position clamp."""
    state = np.asarray(state, dtype=float)
    if state.shape != (4,):
        raise ValueError(f"state must have shape (4,), got {state.shape}")
    nxt, _ = rk4_stages(state, float(force), params, limits.dt)
    nxt, _ = position_clamp(nxt, limits.x_max)
    if not np.all(np.isfinite(nxt)):
        raise FloatingPointError("state became non-finite during integration")
    return nxt


def apply_force_noise(f_ctrl: float, f_bias: float, limits: SimLimits) -> float:
    """Commanded force plus the episode's constant bias, clamped to the actuator range."""
    return float(np.clip(f_ctrl + f_bias, -limits.f_max, limits.f_max))


def sample_initial_state(rng: np.random.Generator, scales: NoiseScales) -> np.ndarray:
    """Independent Gaussian draw for each state component."""
    draws = rng.standard_normal(4)
    return draws * np.array([scales.x, scales.v, scales.theta, scales.omega])


def sample_force_bias(rng: np.random.Generator, scales: NoiseScales) -> float:
    """One bias force per episode, held constant for the whole rollout."""
    return float(scales.force * rng.standard_normal())
