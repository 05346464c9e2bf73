"""Controllers: the measured proportional baseline and a conditioned Elman RNN."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .plant import PlantParams

#: Orientation of the measured state relative to the drive axis.  The measured
#: gain table stabilizes the plant only when positive displacement readings are
#: opposite the positive force direction, so rollouts feed controllers the
#: mirrored state.
SENSOR_SIGN = -1.0

#: Number of plant-conditioning inputs (M, m, l, d_c, d_p scaled by nominals).
N_CONDITIONING = 5

WEIGHT_FORMAT_VERSION = 1

_WEIGHT_KEYS = {"format_version", "n_h", "n_in", "c_out", "b2", "A", "B", "C", "b1"}

#: Relative slack when deciding whether the recurrent matrix already satisfies
#: the spectral bound; makes the rescaling idempotent on reload.
_STABILIZE_TOL = 1e-9


@dataclass(frozen=True)
class GainSet:
    """Proportional gains for (x, v, theta, omega) with working bounds."""

    nominal: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        for name in ("nominal", "lower", "upper"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != (4,):
                raise ValueError(f"{name} gains must have shape (4,)")
            object.__setattr__(self, name, arr)
        if not np.all(self.nominal > 0.0):
            raise ValueError("nominal gains must be positive")
        if np.any(self.lower > self.nominal) or np.any(self.nominal > self.upper):
            raise ValueError("gain bounds must satisfy lower <= nominal <= upper")

    @classmethod
    def measured(cls) -> "GainSet":
        """Working gains found by hand-tuning on the hardware."""
        return cls(nominal=np.array([13.0, 15.0, 31.0, 1.6]),
                   lower=np.array([0.0, 12.0, 25.0, 1.3]),
                   upper=np.array([20.0, 17.0, 40.0, 3.0]))


def proportional_force(state, gains: GainSet) -> float:
    """Force command of the proportional law: minus gains dot state."""
    state = np.asarray(state, dtype=float)
    return float(-(gains.nominal @ state))


def conditioning_vector(params: PlantParams, nominal: PlantParams) -> np.ndarray:
    """Plant constants scaled by their nominal values, as fed to the RNN."""
    vec = np.array([params.M / nominal.M, params.m / nominal.m, params.l / nominal.l,
                    params.d_c / nominal.d_c, params.d_p / nominal.d_p])
    if not np.all(np.isfinite(vec)) or np.any(vec <= 0.0):
        raise ValueError("conditioning values must be finite and positive")
    return vec


def spectral_norm_estimate(mat: np.ndarray, iterations: int = 200, tol: float = 1e-13) -> float:
    """Largest singular value via power iteration with a deterministic start."""
    n = mat.shape[0]
    v = np.full(n, 1.0 / math.sqrt(n))
    estimate = 0.0
    for _ in range(iterations):
        w = mat.T @ (mat @ v)
        norm_w = float(np.linalg.norm(w))
        if norm_w == 0.0:
            return 0.0
        new_estimate = math.sqrt(max(float(v @ w), 0.0))
        v = w / norm_w
        if abs(new_estimate - estimate) <= tol * max(new_estimate, 1.0):
            return new_estimate
        estimate = new_estimate
    return estimate


def _stabilized(mat: np.ndarray, margin: float):
    """Rescale so the spectral norm is at most 1 + margin; no-op inside the bound."""
    limit = 1.0 + margin
    rho = spectral_norm_estimate(mat)
    if rho <= limit * (1.0 + _STABILIZE_TOL):
        return mat, 1.0
    scale = rho / limit
    return mat / scale, scale


class RnnController:
    """Single-layer Elman recurrence mapping (state, conditioning) to a force.

    The recurrent matrix is stored unconstrained; rollouts use a spectrally
    rescaled copy so the hidden state cannot blow up over long horizons.  The
    rescaling denominator is treated as a constant by training gradients.
    """

    def __init__(self, w_hh, w_in, w_out, b_h, b_out=0.0, out_scale=300.0,
                 spectral_margin=0.05):
        self.w_hh = np.array(w_hh, dtype=float)
        self.w_in = np.array(w_in, dtype=float)
        self.w_out = np.array(w_out, dtype=float)
        self.b_h = np.array(b_h, dtype=float)
        self.b_out = np.array(b_out, dtype=float).reshape(())
        self.out_scale = float(out_scale)
        self.spectral_margin = float(spectral_margin)
        n_h = self.w_hh.shape[0]
        if self.w_hh.shape != (n_h, n_h):
            raise ValueError("recurrent matrix must be square")
        if self.w_in.ndim != 2 or self.w_in.shape[0] != n_h:
            raise ValueError("input matrix must be (n_h, n_in)")
        if self.w_in.shape[1] < 4:
            raise ValueError("controller needs at least the four state inputs")
        if self.w_out.shape != (n_h,) or self.b_h.shape != (n_h,):
            raise ValueError("output weights and hidden bias must have shape (n_h,)")
        self.refresh()

    @property
    def n_h(self) -> int:
        return self.w_hh.shape[0]

    @property
    def n_in(self) -> int:
        return self.w_in.shape[1]

    @property
    def n_cond(self) -> int:
        return self.n_in - 4

    @property
    def w_hh_effective(self) -> np.ndarray:
        return self._w_hh_eff

    @property
    def stabilizer_scale(self) -> float:
        return self._stab_scale

    def refresh(self):
        """Recompute the rescaled recurrent matrix after a weight update."""
        self._w_hh_eff, self._stab_scale = _stabilized(self.w_hh, self.spectral_margin)

    def initial_hidden(self) -> np.ndarray:
        return np.zeros(self.n_h)

    def copy(self) -> "RnnController":
        return RnnController(self.w_hh.copy(), self.w_in.copy(), self.w_out.copy(),
                             self.b_h.copy(), float(self.b_out), self.out_scale,
                             self.spectral_margin)

    def save(self, path):
        """Write the versioned JSON weight document (effective recurrence stored)."""
        doc = {
            "format_version": WEIGHT_FORMAT_VERSION,
            "n_h": self.n_h,
            "n_in": self.n_in,
            "c_out": self.out_scale,
            "b2": float(self.b_out),
            "A": self.w_hh_effective.reshape(-1).tolist(),
            "B": self.w_in.reshape(-1).tolist(),
            "C": self.w_out.tolist(),
            "b1": self.b_h.tolist(),
        }
        Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, spectral_margin=0.05) -> "RnnController":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if set(doc) != _WEIGHT_KEYS:
            unexpected = sorted(set(doc) ^ _WEIGHT_KEYS)
            raise ValueError(f"weight file key mismatch: {unexpected}")
        if doc["format_version"] != WEIGHT_FORMAT_VERSION:
            raise ValueError(f"unsupported weight format version {doc['format_version']}")
        n_h, n_in = int(doc["n_h"]), int(doc["n_in"])
        for key, size in (("A", n_h * n_h), ("B", n_h * n_in), ("C", n_h), ("b1", n_h)):
            if len(doc[key]) != size:
                raise ValueError(f"weight array {key} has length {len(doc[key])}, expected {size}")
        return cls(np.array(doc["A"]).reshape(n_h, n_h),
                   np.array(doc["B"]).reshape(n_h, n_in),
                   np.array(doc["C"]), np.array(doc["b1"]), doc["b2"],
                   out_scale=doc["c_out"], spectral_margin=spectral_margin)


def _input_vector(ctrl: RnnController, state, cond) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    if state.shape != (4,):
        raise ValueError(f"state must have shape (4,), got {state.shape}")
    if ctrl.n_cond == 0:
        if cond is not None and len(np.atleast_1d(cond)) != 0:
            raise ValueError("controller takes no conditioning inputs")
        return state
    if cond is None:
        raise ValueError(f"controller expects {ctrl.n_cond} conditioning values")
    cond = np.asarray(cond, dtype=float)
    if cond.shape != (ctrl.n_cond,):
        raise ValueError(f"conditioning must have shape ({ctrl.n_cond},), got {cond.shape}")
    return np.concatenate([state, cond])


def rnn_step(ctrl: RnnController, state, cond, hidden):
    """Advance the recurrence one tick; returns (force, new hidden state)."""
    u = _input_vector(ctrl, state, cond)
    hidden = np.asarray(hidden, dtype=float)
    if hidden.shape != (ctrl.n_h,):
        raise ValueError(f"hidden must have shape ({ctrl.n_h},), got {hidden.shape}")
    z = ctrl.w_hh_effective @ hidden + ctrl.w_in @ u + ctrl.b_h
    h_new = np.tanh(z)
    force = ctrl.out_scale * float(ctrl.w_out @ h_new) + float(ctrl.b_out)
    return force, h_new


def instantaneous_sensitivity(ctrl: RnnController, state, cond, hidden) -> np.ndarray:
    """d(force)/d(state) of a single step with the hidden state held fixed."""
    u = _input_vector(ctrl, state, cond)
    hidden = np.asarray(hidden, dtype=float)
    if hidden.shape != (ctrl.n_h,):
        raise ValueError(f"hidden must have shape ({ctrl.n_h},), got {hidden.shape}")
    z = ctrl.w_hh_effective @ hidden + ctrl.w_in @ u + ctrl.b_h
    gate = 1.0 - np.tanh(z) ** 2
    return ctrl.out_scale * ((ctrl.w_out * gate) @ ctrl.w_in[:, :4])


def init_weights(rng: np.random.Generator, n_h: int, n_in: int = 4,
                 out_scale: float = 300.0, spectral_margin: float = 0.05) -> RnnController:
    """Fan-in scaled uniform init; the recurrent matrix is spectrally rescaled."""
    if n_h < 1:
        raise ValueError("n_h must be at least 1")
    if n_in < 4:
        raise ValueError("n_in must be at least 4")
    bound_h = 1.0 / math.sqrt(n_h)
    bound_in = 1.0 / math.sqrt(n_in)
    w_hh = rng.uniform(-bound_h, bound_h, (n_h, n_h))
    w_in = rng.uniform(-bound_in, bound_in, (n_h, n_in))
    w_out = rng.uniform(-bound_h, bound_h, n_h)
    b_h = rng.uniform(-bound_h, bound_h, n_h)
    return RnnController(w_hh, w_in, w_out, b_h, 0.0, out_scale, spectral_margin)
