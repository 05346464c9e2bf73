"""Deployment chain emulation: DC motor model and its inverse, EMA sensor
smoothing, and a control-loop emulator with period jitter."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .controllers import SENSOR_SIGN, RnnController, proportional_force, rnn_step
from .evaluation import TrajectoryLog
from .plant import PlantParams, SimLimits, apply_force_noise, rk4_step

#: Measured control-period bounds [s] when jitter is enabled.
JITTER_RANGE = (0.010, 0.030)


@dataclass(frozen=True)
class MotorModel:
    """Simplified DC motor: force proportional to duty times battery voltage."""

    c_emp: float = 1.5                 # empirical correction absorbing model error
    c_gear: float = 10032.0 / 91.0     # total gear ratio
    r_wheel: float = 38.25e-3          # wheel radius [m]
    phi_pm: float = 2.7e-3             # magnetic flux [Wb]
    r_winding: float = 4.3             # winding resistance [ohm]

    def __post_init__(self):
        vals = (self.c_emp, self.c_gear, self.r_wheel, self.phi_pm, self.r_winding)
        if not all(math.isfinite(v) and v > 0.0 for v in vals):
            raise ValueError("motor constants must be finite and positive")

    @property
    def l_wheel(self) -> float:
        """Wheel circumference [m], the encoder tick-to-distance factor."""
        return 2.0 * math.pi * self.r_wheel

    def force_per_duty(self, v_bat: float) -> float:
        return self.c_emp * (self.c_gear / self.r_wheel) * (self.phi_pm / self.r_winding) * v_bat


def duty_to_force(u_duty: float, v_bat: float, motor: MotorModel) -> float:
    """Wheel force produced by a signed duty ratio at the given battery voltage."""
    if not abs(u_duty) <= 1.0:
        raise ValueError(f"duty ratio {u_duty} outside [-1, 1]")
    if not v_bat > 0.0:
        raise ValueError("battery voltage must be positive")
    return motor.force_per_duty(v_bat) * u_duty


def force_to_duty(f: float, v_bat: float, motor: MotorModel):
    """Inverse motor map, clamped to the duty range; returns (duty, saturated)."""
    if not v_bat > 0.0:
        raise ValueError("battery voltage must be positive")
    duty = f / motor.force_per_duty(v_bat)
    if abs(duty) > 1.0:
        return float(np.clip(duty, -1.0, 1.0)), True
    return float(duty), False


class EmaFilter:
    """Exponential moving average; seeds itself with the first sample by default."""

    def __init__(self, alpha: float, initial: float | None = None):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("smoothing factor must be in (0, 1]")
        self.alpha = alpha
        self.estimate = initial

    def update(self, sample: float) -> float:
        if not math.isfinite(sample):
            raise ValueError("EMA sample must be finite")
        if self.estimate is None:
            self.estimate = float(sample)
        else:
            self.estimate = self.alpha * float(sample) + (1.0 - self.alpha) * self.estimate
        return self.estimate

    def reset(self, initial: float | None = None):
        self.estimate = initial


def ema_update(filt: EmaFilter, sample: float) -> float:
    """Advance the filter one sample and return the new estimate."""
    return filt.update(sample)


def emulate_loop(controller, params: PlantParams, motor: MotorModel | None, *,
                 limits: SimLimits | None = None, duration: float = 5.0,
                 v_bat: float = 7.8, ema_alpha: float = 0.2, jitter: bool = False,
                 rng: np.random.Generator | None = None, initial_state=None,
                 conditioning=None) -> TrajectoryLog:
    """Run the deployment chain: EMA-smoothed velocities, force-to-duty
    roundtrip through the motor model, and integration at the (optionally
    jittered) control period.

    `motor=None` bypasses the duty conversion, which reproduces the plain
    rollout bit-for-bit at a fixed period.
    """
    limits = limits or SimLimits()
    if jitter and rng is None:
        raise ValueError("rng is required when period jitter is enabled")
    state = (np.zeros(4) if initial_state is None
             else np.asarray(initial_state, dtype=float).copy())

    is_rnn = isinstance(controller, RnnController)
    hidden = controller.initial_hidden() if is_rnn else None
    ema_v = EmaFilter(ema_alpha)
    ema_omega = EmaFilter(ema_alpha)

    times, rows_theta, rows_omega, rows_x, rows_v = [], [], [], [], []
    rows_f, rows_duty, rows_vbat = [], [], []
    status = "ok"
    t = 0.0
    while t < duration - 1e-12:
        measured = np.array([state[0], ema_v.update(state[1]),
                             state[2], ema_omega.update(state[3])])
        ctrl_input = SENSOR_SIGN * measured
        if is_rnn:
            f_cmd, hidden = rnn_step(controller, ctrl_input, conditioning, hidden)
        else:
            f_cmd = proportional_force(ctrl_input, controller)
        if motor is not None:
            duty, _ = force_to_duty(f_cmd, v_bat, motor)
            f_applied = duty_to_force(duty, v_bat, motor)
        else:
            duty = math.nan
            f_applied = f_cmd
        f_applied = apply_force_noise(f_applied, 0.0, limits)

        times.append(t)
        rows_theta.append(state[2])
        rows_omega.append(state[3])
        rows_x.append(state[0])
        rows_v.append(state[1])
        rows_f.append(f_applied)
        rows_duty.append(duty)
        rows_vbat.append(v_bat)

        dt_k = rng.uniform(*JITTER_RANGE) if jitter else limits.dt
        try:
            state = rk4_step(state, f_applied, params,
                             SimLimits(f_max=limits.f_max, x_max=limits.x_max, dt=dt_k))
        except FloatingPointError:
            status = "diverged"
            t += dt_k
            break
        t += dt_k

    # final state row; no force is applied after it
    times.append(t)
    rows_theta.append(state[2])
    rows_omega.append(state[3])
    rows_x.append(state[0])
    rows_v.append(state[1])
    rows_f.append(math.nan)
    rows_duty.append(math.nan)
    rows_vbat.append(v_bat)

    return TrajectoryLog(t=np.array(times), theta=np.array(rows_theta),
                         omega=np.array(rows_omega), x=np.array(rows_x),
                         v=np.array(rows_v), f=np.array(rows_f),
                         duty=(np.array(rows_duty) if motor is not None else None),
                         v_bat=(np.array(rows_vbat) if motor is not None else None),
                         source="sim", status=status)
