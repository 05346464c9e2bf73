"""Evaluation: settling-time metrics, parameter-plane sweeps, loss landscapes,
peak detection, and sim-vs-recorded trajectory alignment."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .controllers import RnnController, conditioning_vector
from .plant import NoiseScales, PlantParams, SimLimits, default_pole_inertia
from .training import (
    BaseScales,
    EpisodeTrace,
    LOSS_CLAMP,
    TrainLog,
    run_episode,
    state_loss,
)


def read_csv_table(path):
    """(header, rows-of-strings) of one of this package's CSV files."""
    header = None
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if header is None:
            header = line.split(",")
        else:
            rows.append(line.split(","))
    if header is None:
        raise ValueError(f"no header row in {path}")
    return header, rows

SIGNALS = ("theta", "omega")


@dataclass
class TrajectoryLog:
    """Column-oriented trajectory record; timestamps need not be uniform."""

    t: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    x: np.ndarray | None = None
    v: np.ndarray | None = None
    f: np.ndarray | None = None
    duty: np.ndarray | None = None
    v_bat: np.ndarray | None = None
    source: str = "sim"
    status: str = "ok"

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        if self.t.ndim != 1 or self.t.size == 0:
            raise ValueError("time stamps must form a nonempty 1-D array")
        if np.any(np.diff(self.t) <= 0.0):
            raise ValueError("time stamps must be strictly increasing")
        for name in ("theta", "omega", "x", "v", "f", "duty", "v_bat"):
            col = getattr(self, name)
            if col is None:
                continue
            col = np.asarray(col, dtype=float)
            if col.shape != self.t.shape:
                raise ValueError(f"column {name} length does not match time stamps")
            setattr(self, name, col)

    def __len__(self):
        return self.t.size

    def signal(self, name: str) -> np.ndarray:
        if name not in SIGNALS:
            raise ValueError(f"signal must be one of {SIGNALS}")
        return getattr(self, name)

    _COLUMNS = ("t", "theta", "omega", "x", "v", "f", "duty", "v_bat")

    def to_csv(self, path):
        cols = [c for c in self._COLUMNS if getattr(self, c) is not None]
        lines = []
        if self.status != "ok":
            lines.append(f"# status: {self.status}")
        lines.append(",".join(cols))
        data = [getattr(self, c) for c in cols]
        for row in zip(*data):
            lines.append(",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def from_csv(cls, path, source: str = "recorded") -> "TrajectoryLog":
        status = "ok"
        header = None
        rows = []
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("status:"):
                    status = body.split(":", 1)[1].strip()
                continue
            if header is None:
                header = [c.strip() for c in line.split(",")]
                continue
            rows.append([float(v) for v in line.split(",")])
        if header is None or not rows:
            raise ValueError(f"no data rows in {path}")
        for required in ("t", "theta", "omega"):
            if required not in header:
                raise ValueError(f"trajectory CSV must contain column {required!r}")
        arr = np.array(rows)
        cols = {name: arr[:, i] for i, name in enumerate(header)}
        return cls(t=cols["t"], theta=cols["theta"], omega=cols["omega"],
                   x=cols.get("x"), v=cols.get("v"), f=cols.get("f"),
                   duty=cols.get("duty"), v_bat=cols.get("v_bat"),
                   source=source, status=status)


def trace_to_log(trace: EpisodeTrace, source: str = "sim") -> TrajectoryLog:
    """Convert an episode trace; the final row has no applied force (padded nan)."""
    n = trace.states.shape[0]
    forces = np.append(trace.forces, np.nan)
    return TrajectoryLog(t=trace.times(), theta=trace.states[:, 2], omega=trace.states[:, 3],
                         x=trace.states[:, 0], v=trace.states[:, 1], f=forces[:n],
                         source=source, status="diverged" if trace.diverged else "ok")


# ---------------------------------------------------------------------------
# Settling time.

@dataclass(frozen=True)
class SettlingResult:
    settling_time: float | None
    peak_time: float
    peak_value: float
    final_band: float

    @property
    def settled(self) -> bool:
        return self.settling_time is not None


def settling_time(traj: TrajectoryLog, signal: str = "theta",
                  band_fraction: float = 0.05) -> SettlingResult:
    """Earliest time after which |signal| stays inside a band of its own peak.

    The band is band_fraction times the trajectory's peak magnitude, so the
    metric is scale-free across initial disturbances.  An identically zero
    signal settles at t = 0 by convention.
    """
    if band_fraction <= 0.0:
        raise ValueError("band_fraction must be positive")
    y = np.abs(traj.signal(signal))
    peak_idx = int(np.argmax(y))
    band = band_fraction * float(y[peak_idx])
    outside = np.nonzero(y > band)[0]
    if outside.size == 0:
        return SettlingResult(settling_time=0.0, peak_time=float(traj.t[peak_idx]),
                              peak_value=float(y[peak_idx]), final_band=band)
    last = int(outside[-1])
    settled_at = float(traj.t[last + 1]) if last + 1 < y.size else None
    return SettlingResult(settling_time=settled_at, peak_time=float(traj.t[peak_idx]),
                          peak_value=float(y[peak_idx]), final_band=band)


# ---------------------------------------------------------------------------
# Parameter-plane sweeps.

PLANES = {
    "mm": ("M", "m"),
    "dd": ("d_c", "d_p"),
}


@dataclass
class SweepGrid:
    plane: str
    axis1_name: str
    axis2_name: str
    axis1: np.ndarray
    axis2: np.ndarray
    settling: np.ndarray      # (n1, n2), nan when not settled or invalid
    peak_time: np.ndarray     # (n1, n2)
    status: np.ndarray        # (n1, n2) of str
    context: PlantParams

    def settled_count(self) -> int:
        return int(np.sum(self.status == "settled"))

    def to_csv(self, path):
        lines = ["axis1,axis2,settling_time_s,peak_time_s,status,"
                 "context_M,context_m,context_l,context_dc,context_dp"]
        ctx = (self.context.M, self.context.m, self.context.l,
               self.context.d_c, self.context.d_p)
        ctx_txt = ",".join(repr(float(c)) for c in ctx)
        for i, a1 in enumerate(self.axis1):
            for j, a2 in enumerate(self.axis2):
                lines.append(",".join([
                    repr(float(a1)), repr(float(a2)),
                    repr(float(self.settling[i, j])), repr(float(self.peak_time[i, j])),
                    str(self.status[i, j]), ctx_txt]))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _plane_plant(plane: str, a1: float, a2: float, nominal: PlantParams) -> PlantParams:
    if plane == "mm":
        return PlantParams(M=a1, m=a2, l=nominal.l, J=default_pole_inertia(a2, nominal.l),
                           g=nominal.g, d_c=nominal.d_c, d_p=nominal.d_p)
    if plane == "dd":
        return PlantParams(M=nominal.M, m=nominal.m, l=nominal.l, J=nominal.J,
                           g=nominal.g, d_c=a1, d_p=a2)
    raise ValueError(f"unknown sweep plane {plane!r}")


def sweep(controller, plane: str, axis1, axis2, *, nominal: PlantParams | None = None,
          limits: SimLimits | None = None, context: PlantParams | None = None,
          theta0: float = 0.1, duration: float = 5.0, signal: str = "theta",
          band_fraction: float = 0.05) -> SweepGrid:
    """Settling time of a fixed initial disturbance across a parameter plane.

    The conditioning vector is held at `context` (default nominal) for the
    whole grid; cells whose parameters are physically invalid are marked and
    skipped.
    """
    if plane not in PLANES:
        raise ValueError(f"unknown sweep plane {plane!r}")
    nominal = nominal or PlantParams.nominal()
    limits = limits or SimLimits()
    context = context or nominal
    axis1 = np.asarray(axis1, dtype=float)
    axis2 = np.asarray(axis2, dtype=float)
    if np.any(np.diff(axis1) <= 0) or np.any(np.diff(axis2) <= 0):
        raise ValueError("sweep axes must be strictly increasing")

    cond = None
    if isinstance(controller, RnnController) and controller.n_cond > 0:
        cond = conditioning_vector(context, nominal)

    steps = max(1, round(duration / limits.dt))
    start = np.array([0.0, 0.0, theta0, 0.0])
    n1, n2 = axis1.size, axis2.size
    settling = np.full((n1, n2), np.nan)
    peak = np.full((n1, n2), np.nan)
    status = np.full((n1, n2), "invalid", dtype=object)

    for i, a1 in enumerate(axis1):
        for j, a2 in enumerate(axis2):
            try:
                params = _plane_plant(plane, float(a1), float(a2), nominal)
            except ValueError:
                continue
            trace = run_episode(controller, params, steps=steps, limits=limits,
                                initial_state=start, conditioning=cond)
            if trace.diverged:
                status[i, j] = "diverged"
                continue
            result = settling_time(trace_to_log(trace), signal, band_fraction)
            peak[i, j] = result.peak_time
            if result.settled:
                settling[i, j] = result.settling_time
                status[i, j] = "settled"
            else:
                status[i, j] = "did-not-settle"
    return SweepGrid(plane=plane, axis1_name=PLANES[plane][0], axis2_name=PLANES[plane][1],
                     axis1=axis1, axis2=axis2, settling=settling, peak_time=peak,
                     status=status, context=context)


# ---------------------------------------------------------------------------
# Loss landscape over the mass plane.

@dataclass
class LandscapeGrid:
    axis1: np.ndarray          # total mass values
    axis2: np.ndarray          # pole mass values
    losses: np.ndarray         # (n1, n2, 4) per-state tracking loss
    overlay: np.ndarray | None = None   # (B, 2) final-batch (M, m) points

    def to_csv(self, path):
        lines = ["M,m,loss_x,loss_v,loss_theta,loss_omega"]
        for i, a1 in enumerate(self.axis1):
            for j, a2 in enumerate(self.axis2):
                vals = [a1, a2, *self.losses[i, j]]
                lines.append(",".join(repr(float(v)) for v in vals))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    def overlay_to_csv(self, path):
        lines = ["M,m"]
        if self.overlay is not None:
            for row in self.overlay:
                lines.append(",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def final_batch_points(log: TrainLog) -> np.ndarray:
    """(M, m) pairs sampled in the final logged epoch, verbatim."""
    if not log.records:
        raise ValueError("empty training log")
    return np.array([[p[0], p[1]] for p in log.records[-1].plants])


def loss_landscape(controller, axis1, axis2, *, nominal: PlantParams | None = None,
                   limits: SimLimits | None = None, base: BaseScales | None = None,
                   episodes: int = 8, steps: int = 200, theta_scale: float = 0.3,
                   seed: int = 0, train_log: TrainLog | None = None) -> LandscapeGrid:
    """Per-cell tracking loss over the mass plane from a small rollout batch.

    Conditioning follows each cell's own plant (the setting the controller is
    trained under); invalid or diverged cells saturate at the loss clamp.
    """
    nominal = nominal or PlantParams.nominal()
    limits = limits or SimLimits()
    base = base or BaseScales()
    axis1 = np.asarray(axis1, dtype=float)
    axis2 = np.asarray(axis2, dtype=float)
    noise = NoiseScales(x=0.01, v=0.01, theta=theta_scale, omega=0.01, force=0.0)
    losses = np.full((axis1.size, axis2.size, 4), LOSS_CLAMP)

    for i, a1 in enumerate(axis1):
        for j, a2 in enumerate(axis2):
            try:
                params = _plane_plant("mm", float(a1), float(a2), nominal)
                cond = None
                if isinstance(controller, RnnController) and controller.n_cond > 0:
                    cond = conditioning_vector(params, nominal)
            except ValueError:
                continue
            traces = []
            for e in range(episodes):
                rng = np.random.default_rng(
                    np.random.SeedSequence(entropy=seed, spawn_key=(i, j, e)))
                traces.append(run_episode(controller, params, steps=steps, limits=limits,
                                          noise=noise, rng=rng, conditioning=cond))
            losses[i, j] = state_loss(traces, base)

    overlay = final_batch_points(train_log) if train_log is not None else None
    return LandscapeGrid(axis1=axis1, axis2=axis2, losses=losses, overlay=overlay)


# ---------------------------------------------------------------------------
# Peak detection and sim-vs-real alignment.

def _peaks_with_prominence(t: np.ndarray, y: np.ndarray) -> list[tuple[int, float]]:
    """Indices of strict local maxima of y with their prominences.

    Plateaus report their earliest sample.  Prominence is the height above the
    higher of the two flanking minima, each taken between the peak and the
    nearest strictly higher sample (or the boundary).
    """
    n = y.size
    peaks = []
    i = 1
    while i < n - 1:
        if y[i] > y[i - 1]:
            j = i
            while j + 1 < n and y[j + 1] == y[i]:
                j += 1
            if j + 1 < n and y[j + 1] < y[i]:
                peaks.append(i)
            i = j + 1
        else:
            i += 1

    out = []
    for p in peaks:
        left = p
        left_min = y[p]
        k = p - 1
        while k >= 0 and y[k] <= y[p]:
            left_min = min(left_min, y[k])
            k -= 1
        right_min = y[p]
        k = p + 1
        while k < n and y[k] <= y[p]:
            right_min = min(right_min, y[k])
            k += 1
        prominence = y[p] - max(left_min, right_min)
        out.append((p, float(prominence)))
    return out


def detect_peaks(traj: TrajectoryLog, signal: str = "omega",
                 min_prominence: float = 0.0) -> list[tuple[float, float]]:
    """(time, magnitude) of local maxima of |signal|, prominence-filtered."""
    if len(traj) < 3:
        raise ValueError("peak detection needs at least 3 samples")
    y = np.abs(traj.signal(signal))
    return [(float(traj.t[p]), float(y[p]))
            for p, prom in _peaks_with_prominence(traj.t, y)
            if prom >= min_prominence]


@dataclass
class GapReport:
    """Alignment summary between a simulated and a recorded transient."""

    offset_s: float
    matched: int
    peak_deltas_s: list
    unmatched_sim: int
    unmatched_real: int
    decay_ratio: float
    osc_score_sim: float
    osc_score_real: float

    def to_text(self) -> str:
        lines = [
            f"offset_s={self.offset_s!r}",
            f"matched={self.matched}",
            "peak_deltas_s=" + ";".join(repr(d) for d in self.peak_deltas_s),
            f"unmatched_sim={self.unmatched_sim}",
            f"unmatched_real={self.unmatched_real}",
            f"decay_ratio={self.decay_ratio!r}",
            f"osc_score_sim={self.osc_score_sim!r}",
            f"osc_score_real={self.osc_score_real!r}",
        ]
        return "\n".join(lines) + "\n"

    def to_file(self, path):
        Path(path).write_text(self.to_text(), encoding="utf-8")

    @classmethod
    def from_text(cls, text: str) -> "GapReport":
        kv = {}
        for line in text.splitlines():
            if "=" in line:
                key, val = line.split("=", 1)
                kv[key.strip()] = val.strip()
        deltas = [float(v) for v in kv["peak_deltas_s"].split(";") if v]
        return cls(offset_s=float(kv["offset_s"]), matched=int(kv["matched"]),
                   peak_deltas_s=deltas, unmatched_sim=int(kv["unmatched_sim"]),
                   unmatched_real=int(kv["unmatched_real"]),
                   decay_ratio=float(kv["decay_ratio"]),
                   osc_score_sim=float(kv["osc_score_sim"]),
                   osc_score_real=float(kv["osc_score_real"]))


def _auto_prominence(traj: TrajectoryLog, signal: str) -> float:
    return 0.1 * float(np.max(np.abs(traj.signal(signal))))


def _oscillation_score(traj: TrajectoryLog, signal: str, first_peak_value: float) -> float:
    """RMS of the last 30% of the window, scaled by the first peak magnitude."""
    y = traj.signal(signal)
    t0, t1 = float(traj.t[0]), float(traj.t[-1])
    tail = traj.t >= t0 + 0.7 * (t1 - t0)
    rms = float(np.sqrt(np.mean(y[tail] ** 2)))
    return rms / first_peak_value if first_peak_value > 0 else math.inf


def _decay_rate(times: np.ndarray, values: np.ndarray) -> float:
    """Exponent of a least-squares exponential-envelope fit to the peaks."""
    good = values > 0
    if np.sum(good) < 2:
        return math.nan
    slope = np.polyfit(times[good], np.log(values[good]), 1)[0]
    return -float(slope)


def align_and_compare(sim: TrajectoryLog, real: TrajectoryLog, signal: str = "omega",
                      min_prominence: float | None = None,
                      match_window: float = 0.5) -> GapReport:
    """Align the largest-prominence peak of each log and report the gap.

    Matching is greedy nearest-in-time within `match_window` seconds among the
    peaks following the reference; the decay ratio compares least-squares
    exponential envelopes; oscillation scores flag persistent residual motion.
    """
    reports = []
    peak_sets = []
    for traj in (sim, real):
        prom = _auto_prominence(traj, signal) if min_prominence is None else min_prominence
        y = np.abs(traj.signal(signal))
        scored = _peaks_with_prominence(traj.t, y)
        scored = [(p, pr) for p, pr in scored if pr >= prom]
        if not scored:
            raise ValueError(f"no peaks detected in the {traj.source} log")
        ref_idx = max(scored, key=lambda item: item[1])[0]
        times = np.array([traj.t[p] for p, _ in scored], dtype=float)
        values = np.array([y[p] for p, _ in scored], dtype=float)
        peak_sets.append((float(traj.t[ref_idx]), times, values))
        reports.append(_oscillation_score(traj, signal, float(values[0])))

    (ref_sim, t_sim, v_sim), (ref_real, t_real, v_real) = peak_sets
    offset = ref_real - ref_sim

    # peaks at/after the reference, in the aligned time frame
    sim_rel = t_sim - ref_sim
    real_rel = t_real - ref_real
    sim_follow = [(ts, vs) for ts, vs in zip(sim_rel, v_sim) if ts >= 0.0]
    real_follow = [(tr, vr) for tr, vr in zip(real_rel, v_real) if tr >= 0.0]

    available = list(range(len(real_follow)))
    deltas = []
    matched = 0
    for ts, _ in sim_follow:
        if not available:
            break
        best = min(available, key=lambda k: abs(real_follow[k][0] - ts))
        delta = real_follow[best][0] - ts
        if abs(delta) <= match_window:
            deltas.append(float(delta))
            available.remove(best)
            matched += 1

    rate_sim = _decay_rate(np.array([ts for ts, _ in sim_follow]),
                           np.array([vs for _, vs in sim_follow]))
    rate_real = _decay_rate(np.array([tr for tr, _ in real_follow]),
                            np.array([vr for _, vr in real_follow]))
    decay_ratio = rate_real / rate_sim if (math.isfinite(rate_sim) and rate_sim != 0.0
                                           and math.isfinite(rate_real)) else math.nan

    return GapReport(offset_s=float(offset), matched=matched, peak_deltas_s=deltas,
                     unmatched_sim=len(sim_follow) - matched,
                     unmatched_real=len(real_follow) - matched,
                     decay_ratio=decay_ratio,
                     osc_score_sim=reports[0], osc_score_real=reports[1])
