"""Command-line front end: configuration, persistence, and plot emission.

Exit codes: 0 success, 1 usage/config error, 2 runtime numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

OUTPUT_DIR_ENV = "GAINREG_OUTPUT_DIR"

_TWO_PI = 2.0 * math.pi

DEFAULT_CONFIG = {
    "seed": 0,
    "output_dir": None,
    "plant": {"M": 0.4, "m": 0.3, "l": 0.05, "J": None, "g": 9.8, "d_c": 3.0, "d_p": 0.007},
    "limits": {"f_max": 20.0, "x_max": 10.0, "dt": 0.01},
    "controller": {"type": "rnn", "n_hidden": 256, "conditioning": True,
                   "c_out": 300.0, "spectral_margin": 0.05},
    "gains": {
        "k_x": {"lower": 0.0, "nominal": 13.0, "upper": 20.0},
        "k_v": {"lower": 12.0, "nominal": 15.0, "upper": 17.0},
        "k_theta": {"lower": 25.0, "nominal": 31.0, "upper": 40.0},
        "k_omega": {"lower": 1.3, "nominal": 1.6, "upper": 3.0},
    },
    "training": {"epochs": 1000, "batch": 16, "gc_enabled": True, "dr_enabled": True,
                 "gc_weight": 1.0, "steps_cap": None, "grad_clip": 3.0,
                 "init_out_gain": 0.1,
                 "noise": {"x": 0.01, "v": 0.01, "omega": 0.01},
                 "base": {"x": 2.0, "v": 5.0, "theta": _TWO_PI, "omega": _TWO_PI}},
    "evaluation": {"grid": 21, "band_fraction": 0.05, "theta0": 0.1, "duration_s": 5.0},
    "deploy": {"c_emp": 1.5, "v_bat": 7.8, "jitter": False, "ema_alpha": 0.2},
}

#: Keys that may hold null, with the type they take otherwise.
_NULLABLE_TYPES = {"output_dir": str, "plant.J": float, "training.steps_cap": float,
                   "training.grad_clip": float}

#: Keys restricted to an enumerated set of strings.
_ENUMS = {"controller.type": ("rnn", "proportional")}

#: Default sweep axis spans per plane (min, max).
SWEEP_AXES = {
    "mm": ((0.1, 2.0), (0.05, 1.0)),
    "dd": ((0.3, 18.0), (0.001, 0.028)),
}

#: Out-of-domain damping context used by the hardware experiments.
FAR_CONTEXT = {"d_c": 17.06351, "d_p": 0.024376}


class ConfigError(Exception):
    pass


def _check_value(path: str, value, default):
    if path in _NULLABLE_TYPES:
        if value is None:
            return None
        expected = _NULLABLE_TYPES[path]
        if expected is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"config key {path!r} must be a number or null")
        elif not isinstance(value, str):
            raise ConfigError(f"config key {path!r} must be a string or null")
        return value
    if value is None:
        raise ConfigError(f"config key {path!r} must not be null")
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"config key {path!r} must be a boolean")
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"config key {path!r} must be a number")
        return value
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"config key {path!r} must be a string")
        if path in _ENUMS and value not in _ENUMS[path]:
            raise ConfigError(f"config key {path!r} must be one of {_ENUMS[path]}")
        return value
    raise ConfigError(f"config key {path!r} has unsupported type")


def _merge(base: dict, override: dict, prefix="") -> dict:
    out = {}
    for key, default in base.items():
        path = f"{prefix}{key}"
        if key not in override:
            out[key] = default
            continue
        value = override[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path!r} must be an object")
            out[key] = _merge(default, value, prefix=f"{path}.")
        else:
            out[key] = _check_value(path, value, default)
    unknown = set(override) - set(base)
    if unknown:
        name = f"{prefix}{sorted(unknown)[0]}"
        raise ConfigError(f"unknown config key {name!r}")
    return out


def load_config(path: str | None) -> dict:
    """Defaults merged with a JSON config file; unknown keys are rejected."""
    if path is None:
        return _merge(DEFAULT_CONFIG, {})
    try:
        with open(path, "r", encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file is not valid JSON: {exc}")
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    return _merge(DEFAULT_CONFIG, user)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def _resolve_out_dir(args, cfg) -> Path:
    out = args.out or cfg.get("output_dir") or os.environ.get(OUTPUT_DIR_ENV) or "runs"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_manifest(out_dir: Path, command: str, cfg: dict, extra=None):
    """Everything needed to reproduce the command's data files."""
    import numpy

    from . import __version__

    doc = {
        "command": command,
        "argv": sys.argv[1:],
        "config": cfg,
        "config_sha256": config_hash(cfg),
        "seed": cfg["seed"],
        "versions": {"gainreg": __version__, "numpy": numpy.__version__,
                     "python": sys.version.split()[0]},
        "created_utc": datetime.now(timezone.utc).isoformat(),
    }
    if extra:
        doc.update(extra)
    with open(out_dir / f"{command}_manifest.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Domain-object construction from a validated config.

def build_plant(cfg: dict):
    from .plant import PlantParams

    p = cfg["plant"]
    try:
        return PlantParams.nominal(M=p["M"], m=p["m"], l=p["l"], J=p["J"], g=p["g"],
                                   d_c=p["d_c"], d_p=p["d_p"])
    except ValueError as exc:
        raise ConfigError(f"invalid plant parameters: {exc}")


def build_limits(cfg: dict):
    from .plant import SimLimits

    lim = cfg["limits"]
    try:
        return SimLimits(f_max=lim["f_max"], x_max=lim["x_max"], dt=lim["dt"])
    except ValueError as exc:
        raise ConfigError(f"invalid limits: {exc}")


def build_gains(cfg: dict):
    import numpy as np

    from .controllers import GainSet

    g = cfg["gains"]
    order = ("k_x", "k_v", "k_theta", "k_omega")
    try:
        return GainSet(nominal=np.array([g[k]["nominal"] for k in order]),
                       lower=np.array([g[k]["lower"] for k in order]),
                       upper=np.array([g[k]["upper"] for k in order]))
    except ValueError as exc:
        raise ConfigError(f"invalid gains: {exc}")


def build_train_config(cfg: dict):
    from .training import BaseScales, TrainConfig

    tr = cfg["training"]
    ctl = cfg["controller"]
    try:
        base = BaseScales(**tr["base"])
    except ValueError as exc:
        raise ConfigError(f"invalid base scales: {exc}")
    return TrainConfig(
        seed=cfg["seed"], epochs=int(tr["epochs"]), batch=int(tr["batch"]),
        n_hidden=int(ctl["n_hidden"]), conditioning=ctl["conditioning"],
        gc_enabled=tr["gc_enabled"], dr_enabled=tr["dr_enabled"],
        gc_weight=tr["gc_weight"],
        steps_cap=None if tr["steps_cap"] is None else int(tr["steps_cap"]),
        grad_clip=tr["grad_clip"], init_out_gain=tr["init_out_gain"],
        out_scale=ctl["c_out"], spectral_margin=ctl["spectral_margin"],
        state_noise=(tr["noise"]["x"], tr["noise"]["v"], tr["noise"]["omega"]),
        nominal=build_plant(cfg), limits=build_limits(cfg), gains=build_gains(cfg),
        base=base)


def _load_controller(args, cfg):
    """Controller selected by --weights or --proportional."""
    from .controllers import RnnController

    if getattr(args, "proportional", False):
        return build_gains(cfg)
    if not getattr(args, "weights", None):
        raise ConfigError("either --weights FILE or --proportional is required")
    try:
        return RnnController.load(args.weights,
                                  spectral_margin=cfg["controller"]["spectral_margin"])
    except FileNotFoundError:
        raise ConfigError(f"weight file not found: {args.weights}")
    except (ValueError, json.JSONDecodeError) as exc:
        raise ConfigError(f"invalid weight file: {exc}")


def _apply_overrides(cfg: dict, pairs):
    for path, value in pairs:
        node = cfg
        keys = path.split(".")
        for key in keys[:-1]:
            node = node[key]
        node[keys[-1]] = value


# ---------------------------------------------------------------------------
# Commands.

def cmd_train(args) -> int:
    cfg = load_config(args.config)
    overrides = []
    if args.epochs is not None:
        overrides.append(("training.epochs", args.epochs))
    if args.gc is not None:
        overrides.append(("training.gc_enabled", args.gc == "on"))
    if args.dr is not None:
        overrides.append(("training.dr_enabled", args.dr == "on"))
    if args.n_hidden is not None:
        overrides.append(("controller.n_hidden", args.n_hidden))
    if args.steps_cap is not None:
        overrides.append(("training.steps_cap", args.steps_cap))
    if args.batch is not None:
        overrides.append(("training.batch", args.batch))
    if args.conditioning is not None:
        overrides.append(("controller.conditioning", args.conditioning == "on"))
    if args.seed is not None:
        overrides.append(("seed", args.seed))
    _apply_overrides(cfg, overrides)

    from .training import TrainLog, train

    tc = build_train_config(cfg)
    out_dir = _resolve_out_dir(args, cfg)
    log_path = out_dir / "trainlog.csv"
    weight_path = out_dir / "weights.json"

    with open(log_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(TrainLog(tc.batch).header()) + "\n")

        def stream(record):
            fh.write(",".join(TrainLog.row_of(record)) + "\n")

        ctrl, log = train(tc, on_record=stream)

    ctrl.save(weight_path)
    write_manifest(out_dir, "train", cfg,
                   extra={"outputs": ["trainlog.csv", "weights.json"]})
    final = log.records[-1]
    print(f"trained {tc.epochs} epochs -> {weight_path}")
    print(f"final loss_total={final.loss_total:.4f} "
          f"gains={[round(float(v), 3) for v in final.gains]}")
    return 0


def _parse_span(text: str, name: str):
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise ConfigError(f"{name} must look like MIN:MAX, got {text!r}")
    if not lo < hi:
        raise ConfigError(f"{name} must have MIN < MAX")
    return lo, hi


def cmd_sweep(args) -> int:
    import numpy as np

    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    controller = _load_controller(args, cfg)

    from .evaluation import sweep
    from .plant import PlantParams

    nominal = build_plant(cfg)
    limits = build_limits(cfg)
    grid = args.grid or cfg["evaluation"]["grid"]
    span1, span2 = SWEEP_AXES[args.plane]
    if args.axis1 is not None:
        span1 = _parse_span(args.axis1, "--axis1")
    if args.axis2 is not None:
        span2 = _parse_span(args.axis2, "--axis2")
    axis1 = np.linspace(span1[0], span1[1], grid)
    axis2 = np.linspace(span2[0], span2[1], grid)

    if args.context == "2x":
        context = PlantParams.nominal(M=nominal.M, m=nominal.m, l=nominal.l, g=nominal.g,
                                      d_c=2.0 * nominal.d_c, d_p=2.0 * nominal.d_p)
    elif args.context == "far":
        context = PlantParams.nominal(M=nominal.M, m=nominal.m, l=nominal.l, g=nominal.g,
                                      d_c=FAR_CONTEXT["d_c"], d_p=FAR_CONTEXT["d_p"])
    else:
        context = nominal

    result = sweep(controller, args.plane, axis1, axis2, nominal=nominal, limits=limits,
                   context=context, theta0=cfg["evaluation"]["theta0"],
                   duration=cfg["evaluation"]["duration_s"], signal=args.signal,
                   band_fraction=cfg["evaluation"]["band_fraction"])

    out_dir = _resolve_out_dir(args, cfg)
    csv_path = out_dir / f"sweep_{args.plane}_{args.context}.csv"
    result.to_csv(csv_path)
    if args.svg:
        from .svgplot import contour_chart

        contour_chart(out_dir / f"sweep_{args.plane}_{args.context}.svg",
                      result.axis1, result.axis2, result.settling,
                      title=f"settling time [s], {args.plane} plane ({args.context} context)",
                      x_label=result.axis1_name, y_label=result.axis2_name)
    write_manifest(out_dir, "sweep", cfg, extra={
        "plane": args.plane, "context": args.context, "grid": grid,
        "controller": "proportional" if args.proportional else str(args.weights),
        "outputs": [csv_path.name]})
    print(f"{csv_path}: {result.settled_count()} of {axis1.size * axis2.size} cells settled")
    return 0


def cmd_gains_trace(args) -> int:
    import numpy as np

    from .training import TrainLog

    cfg = load_config(args.config)
    try:
        log = TrainLog.from_csv(args.log)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read training log: {exc}")
    if not log.records:
        raise ConfigError("training log has no epochs")

    window = max(1, args.window)
    epochs = np.array([r.epoch for r in log.records])
    gains = np.array([r.gains for r in log.records])   # (N, 4)
    smoothed = np.empty_like(gains)
    for i in range(gains.shape[0]):
        lo = max(0, i - window + 1)
        smoothed[i] = gains[lo:i + 1].mean(axis=0)

    out_dir = _resolve_out_dir(args, cfg)
    csv_path = out_dir / "gains_trace.csv"
    names = ("gain_x", "gain_v", "gain_theta", "gain_omega")
    lines = ["epoch," + ",".join(names)]
    for ep, row in zip(epochs, smoothed):
        lines.append(",".join([str(int(ep))] + [repr(float(v)) for v in row]))
    csv_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    if args.svg:
        from .svgplot import line_chart

        line_chart(out_dir / "gains_trace.svg", epochs,
                   {name: smoothed[:, k] for k, name in enumerate(names)},
                   title=f"equivalent gains (window {window})", x_label="epoch",
                   y_label="gain")
    write_manifest(out_dir, "gains-trace", cfg,
                   extra={"log": str(args.log), "window": window,
                          "outputs": [csv_path.name]})
    print(f"{csv_path}: max smoothed gain_omega = {smoothed[:, 3].max():.4f} "
          f"(target {cfg['gains']['k_omega']['nominal']})")
    return 0


def cmd_align(args) -> int:
    cfg = load_config(args.config)

    from .evaluation import TrajectoryLog, align_and_compare

    try:
        sim = TrajectoryLog.from_csv(args.sim, source="sim")
        real = TrajectoryLog.from_csv(args.real, source="recorded")
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read trajectory log: {exc}")

    report = align_and_compare(sim, real, signal=args.signal,
                               min_prominence=args.prominence)
    out_dir = _resolve_out_dir(args, cfg)
    report_path = out_dir / "gap_report.txt"
    report.to_file(report_path)
    write_manifest(out_dir, "align", cfg,
                   extra={"sim": str(args.sim), "real": str(args.real),
                          "signal": args.signal, "outputs": [report_path.name]})
    print(f"{report_path}: offset={report.offset_s:+.4f}s matched={report.matched} "
          f"decay_ratio={report.decay_ratio:.4f} osc_real={report.osc_score_real:.4f}")
    return 0


def cmd_simulate(args) -> int:
    import numpy as np

    cfg = load_config(args.config)
    for flag, path in (("M", "plant.M"), ("m", "plant.m"), ("l", "plant.l"),
                       ("dc", "plant.d_c"), ("dp", "plant.d_p")):
        value = getattr(args, flag)
        if value is not None:
            _apply_overrides(cfg, [(path, value)])
    if args.cemp is not None:
        _apply_overrides(cfg, [("deploy.c_emp", args.cemp)])
    if args.vbat is not None:
        _apply_overrides(cfg, [("deploy.v_bat", args.vbat)])
    if args.jitter is not None:
        _apply_overrides(cfg, [("deploy.jitter", args.jitter == "on")])
    if args.seed is not None:
        cfg["seed"] = args.seed
    if cfg["plant"]["m"] >= cfg["plant"]["M"]:
        raise ConfigError("plant override must keep pole mass m below total mass M")

    controller = _load_controller(args, cfg)
    plant = build_plant(cfg)
    base_nominal = build_plant(load_config(args.config))   # pre-override nominals
    limits = build_limits(cfg)
    theta0 = args.theta0 if args.theta0 is not None else cfg["evaluation"]["theta0"]
    duration = args.duration if args.duration is not None else cfg["evaluation"]["duration_s"]
    start = np.array([0.0, 0.0, theta0, 0.0])

    from .controllers import RnnController, conditioning_vector
    from .evaluation import settling_time, trace_to_log

    cond = None
    if isinstance(controller, RnnController) and controller.n_cond > 0:
        cond = conditioning_vector(plant, base_nominal)

    if args.emulate_deploy:
        from .deploy import MotorModel, emulate_loop

        motor = MotorModel(c_emp=cfg["deploy"]["c_emp"])
        rng = np.random.default_rng(cfg["seed"]) if cfg["deploy"]["jitter"] else None
        log = emulate_loop(controller, plant, motor, limits=limits, duration=duration,
                           v_bat=cfg["deploy"]["v_bat"], ema_alpha=cfg["deploy"]["ema_alpha"],
                           jitter=cfg["deploy"]["jitter"], rng=rng, initial_state=start,
                           conditioning=cond)
    else:
        from .training import run_episode

        steps = max(1, round(duration / limits.dt))
        trace = run_episode(controller, plant, steps=steps, limits=limits,
                            initial_state=start, conditioning=cond)
        log = trace_to_log(trace)

    out_dir = _resolve_out_dir(args, cfg)
    csv_path = out_dir / "trajectory.csv"
    log.to_csv(csv_path)
    write_manifest(out_dir, "simulate", cfg, extra={
        "controller": "proportional" if args.proportional else str(args.weights),
        "emulate_deploy": bool(args.emulate_deploy), "outputs": [csv_path.name]})

    if log.status != "ok":
        print(f"{csv_path}: status={log.status}")
        return 0
    result = settling_time(log, args.signal, cfg["evaluation"]["band_fraction"])
    settle_txt = (f"{result.settling_time:.3f}s" if result.settled else "did-not-settle")
    print(f"{csv_path}: {args.signal} settling={settle_txt} "
          f"peak={result.peak_value:.4f}@{result.peak_time:.2f}s")
    return 0


def cmd_gradcheck(args) -> int:
    from .training import gradient_check, make_gradcheck_controller

    cfg = load_config(args.config)
    gc_on = args.gc != "off"
    ctrl = make_gradcheck_controller(seed=args.seed if args.seed is not None else cfg["seed"],
                                     n_h=args.n_hidden,
                                     conditioning=cfg["controller"]["conditioning"])
    err = gradient_check(ctrl, steps=args.steps, batch=args.batch, gc_enabled=gc_on,
                         nominal=build_plant(cfg), limits=build_limits(cfg),
                         gains=build_gains(cfg))
    tolerance = 1e-4 if gc_on else 1e-5
    verdict = "PASS" if err < tolerance else "FAIL"
    print(f"gradcheck gc={'on' if gc_on else 'off'}: max rel err {err:.3e} "
          f"(tolerance {tolerance:.0e}) {verdict}")
    return 0 if err < tolerance else 2


# ---------------------------------------------------------------------------
# Parser.

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_common(sub):
    sub.add_argument("--config", "-c", default=None, help="JSON config file")
    sub.add_argument("--out", "-o", default=None,
                     help=f"output directory (default: ${OUTPUT_DIR_ENV} or ./runs)")
    sub.add_argument("--threads", type=int, default=None,
                     help="bound internal numpy parallelism")


def build_parser() -> _Parser:
    parser = _Parser(prog="gainreg",
                     description="Cart-pole gain-regularized controller toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train an RNN controller")
    _add_common(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--gc", choices=("on", "off"))
    p.add_argument("--dr", choices=("on", "off"))
    p.add_argument("--conditioning", choices=("on", "off"))
    p.add_argument("--n-hidden", type=int)
    p.add_argument("--steps-cap", type=int)
    p.add_argument("--batch", type=int)
    p.set_defaults(run=cmd_train)

    p = sub.add_parser("sweep", help="settling-time sweep over a parameter plane")
    _add_common(p)
    p.add_argument("--weights", default=None)
    p.add_argument("--proportional", action="store_true")
    p.add_argument("--plane", choices=("mm", "dd"), required=True)
    p.add_argument("--context", choices=("nominal", "2x", "far"), default="nominal")
    p.add_argument("--grid", type=int, default=None)
    p.add_argument("--axis1", default=None, help="axis-1 span MIN:MAX")
    p.add_argument("--axis2", default=None, help="axis-2 span MIN:MAX")
    p.add_argument("--signal", choices=("theta", "omega"), default="theta")
    p.add_argument("--seed", type=int)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(run=cmd_sweep)

    p = sub.add_parser("gains-trace", help="extract equivalent-gain columns from a log")
    _add_common(p)
    p.add_argument("--log", required=True)
    p.add_argument("--window", type=int, default=25)
    p.add_argument("--svg", action="store_true")
    p.set_defaults(run=cmd_gains_trace)

    p = sub.add_parser("align", help="align a simulated and a recorded trajectory")
    _add_common(p)
    p.add_argument("--sim", required=True)
    p.add_argument("--real", required=True)
    p.add_argument("--signal", choices=("theta", "omega"), default="omega")
    p.add_argument("--prominence", type=float, default=None)
    p.set_defaults(run=cmd_align)

    p = sub.add_parser("simulate", help="roll out one episode to a trajectory CSV")
    _add_common(p)
    p.add_argument("--weights", default=None)
    p.add_argument("--proportional", action="store_true")
    p.add_argument("--theta0", type=float, default=None)
    p.add_argument("--duration", type=float, default=None)
    p.add_argument("--signal", choices=("theta", "omega"), default="theta")
    p.add_argument("--emulate-deploy", action="store_true")
    p.add_argument("--jitter", choices=("on", "off"), default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--M", type=float, default=None)
    p.add_argument("--m", type=float, default=None)
    p.add_argument("--l", type=float, default=None)
    p.add_argument("--dc", type=float, default=None)
    p.add_argument("--dp", type=float, default=None)
    p.add_argument("--cemp", type=float, default=None)
    p.add_argument("--vbat", type=float, default=None)
    p.set_defaults(run=cmd_simulate)

    p = sub.add_parser("gradcheck", help="verify training gradients by finite differences")
    _add_common(p)
    p.add_argument("--gc", choices=("on", "off"), default="on")
    p.add_argument("--n-hidden", type=int, default=4)
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--batch", type=int, default=2)
    p.add_argument("--seed", type=int)
    p.set_defaults(run=cmd_gradcheck)

    return parser


def _pin_threads(argv):
    # honored only if numpy has not been imported yet in this process
    if "--threads" in argv:
        idx = argv.index("--threads")
        if idx + 1 < len(argv):
            for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
                os.environ.setdefault(var, argv[idx + 1])


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    _pin_threads(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.run(args)
    except ConfigError as exc:
        print(f"gainreg: config error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"gainreg: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
