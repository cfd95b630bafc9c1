"""Command-line experiment runner: one subcommand per protocol, data files out.

Every run writes into ``--out``. CSV files open with a ``#`` comment line
carrying the tool version and config hash; JSON files carry the same two keys.
No timestamps are written, so identical inputs give identical bytes.
"""
from __future__ import annotations

import argparse
import copy
import csv
import dataclasses
import io
import json
import math
import sys
import typing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import __version__
from .calibration import CalibrationError, CalibrationRecord, config_hash, run_pipeline, tune_amplitude
from .fitting import FitError
from .gate_algebra import NonConformingGateError
from .metrology import ramsey_error_filter, run_ape
from .pulse_lib import GAUSSIAN_ONLY, HALF_DERIVATIVE, Shaping
from .qudit_sim import PropagatorConfig, QuditParams, leakage_scan, single_gate_epsilon
from .tomography import TomographyPulses, hadamard_trajectory, state_fidelity, x_rotation_trajectory

EXIT_OK, EXIT_CONFIG, EXIT_FIT = 0, 2, 3


class ConfigError(ValueError):
    """Bad or inconsistent configuration (exit code 2)."""


# ---------------------------------------------------------------- config schema


@dataclass
class DeviceConfig:
    dim: int = 3
    f10: float = 6.0
    anharmonicity: float = -0.2
    f_frame: Optional[float] = None  # drive carrier; None = resonant with f10


@dataclass
class PulseConfig:
    fwhm: float = 6.0
    protocol: Union[str, float] = "hd"  # "gaussian", "hd" or a derivative scale beta


@dataclass
class IntegratorConfig:
    dt: float = 0.005
    rotating_wave: bool = True


@dataclass
class ApeConfig:
    n_list: list = field(default_factory=lambda: [0, 1, 3, 5])
    phi_points: int = 64
    transition: int = 0
    protocols: list = field(default_factory=lambda: ["gaussian", "hd"])
    t2_decay: Optional[float] = None
    gap: float = 0.0


@dataclass
class LeakageConfig:
    fwhms: list = field(default_factory=lambda: [3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0])
    ramsey_filter: bool = True
    delay_points: int = 161


@dataclass
class CalibrationConfig:
    f21_offset: float = -0.195
    t_fixed: float = 24.0


@dataclass
class TomographyConfig:
    theta_points: int = 21
    s_points: int = 21
    tune_hadamard: bool = True


@dataclass
class SweepConfig:
    parameter: str = "pulses.fwhm"
    values: list = field(default_factory=list)
    output: str = "epsilon_deg"  # epsilon_deg | leakage | ape_epsilon_deg
    theta_deg: float = 90.0


@dataclass
class NoiseConfig:
    shots: Optional[int] = None
    seed: int = 0


@dataclass
class ExperimentConfig:
    device: DeviceConfig = field(default_factory=DeviceConfig)
    pulses: PulseConfig = field(default_factory=PulseConfig)
    integrator: IntegratorConfig = field(default_factory=IntegratorConfig)
    ape: ApeConfig = field(default_factory=ApeConfig)
    leakage: LeakageConfig = field(default_factory=LeakageConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    tomography: TomographyConfig = field(default_factory=TomographyConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def hash(self) -> str:
        return config_hash(self.to_dict())

    def params(self) -> QuditParams:
        d = self.device
        return QuditParams(d.dim, d.f10, d.anharmonicity, d.f_frame)

    def propagator(self) -> PropagatorConfig:
        return PropagatorConfig(self.integrator.dt, self.integrator.rotating_wave)

    def shaping(self) -> Shaping:
        return Shaping.parse(self.pulses.protocol)


def _check_value(name, value, hint):
    origin = typing.get_origin(hint)
    if origin is Union:
        for h in typing.get_args(hint):
            try:
                return _check_value(name, value, h)
            except ConfigError:
                pass
        raise ConfigError(f"{name}: {value!r} has the wrong type")
    if hint is type(None):
        if value is not None:
            raise ConfigError(f"{name}: expected null")
        return None
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{name}: expected a boolean")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{name}: expected an integer")
        return value
    if hint is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name}: expected a number")
        return float(value)
    if hint is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name}: expected a string")
        return value
    if hint is list:
        if not isinstance(value, list):
            raise ConfigError(f"{name}: expected a list")
        return value
    if dataclasses.is_dataclass(hint):
        return _build(hint, value, name)
    raise ConfigError(f"{name}: unsupported field type")


def _build(cls, data, prefix=""):
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected an object")
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {prefix or 'config'}: {', '.join(unknown)}")
    kwargs = {k: _check_value(f"{prefix}.{k}" if prefix else k, v, hints[k]) for k, v in data.items()}
    return cls(**kwargs)


def parse_config(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.device.dim < 2:
        raise ConfigError("device.dim must be at least 2")
    if cfg.pulses.fwhm <= 0 or cfg.integrator.dt <= 0:
        raise ConfigError("pulses.fwhm and integrator.dt must be positive")
    try:
        cfg.shaping()
        [Shaping.parse(p) for p in cfg.ape.protocols]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.ape.transition not in (0, 1):
        raise ConfigError("ape.transition must be 0 (0-1) or 1 (1-2)")
    if cfg.sweep.output not in SWEEP_OUTPUTS:
        raise ConfigError(f"sweep.output must be one of {sorted(SWEEP_OUTPUTS)}")
    if cfg.noise.shots is not None and cfg.noise.shots < 1:
        raise ConfigError("noise.shots must be positive")


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return parse_config({})
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(data)


def load_calibration(path: str | None, cfg: ExperimentConfig) -> CalibrationRecord | None:
    if path is None:
        return None
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        rec = CalibrationRecord.from_dict(data.get("record", data))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise ConfigError(f"cannot read calibration {path}: {exc}") from None
    if not math.isclose(rec.fwhm, cfg.pulses.fwhm):
        raise ConfigError(f"calibration is for fwhm={rec.fwhm} ns, config asks for {cfg.pulses.fwhm} ns")
    return rec


# ---------------------------------------------------------------- output helpers


class Writer:
    def __init__(self, out: Path, cfg: ExperimentConfig):
        self.out = out
        self.hash = cfg.hash
        out.mkdir(parents=True, exist_ok=True)

    @property
    def header(self) -> str:
        return f"apesim {__version__} config_hash={self.hash}"

    def csv(self, name: str, columns: list, rows) -> Path:
        buf = io.StringIO()
        buf.write(f"# {self.header}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        path = self.out / name
        path.write_text(buf.getvalue(), encoding="utf-8")
        return path

    def json(self, name: str, payload: dict) -> Path:
        body = {"tool_version": __version__, "config_hash": self.hash, **payload}
        path = self.out / name
        path.write_text(json.dumps(_plain(body), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _pmap(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- subcommands


def _ape_job(args):
    cfg, proto, amp, seed = args
    rng = np.random.default_rng(seed) if cfg.noise.shots else None
    return run_ape(
        cfg.params(),
        Shaping.parse(proto),
        cfg.pulses.fwhm,
        cfg.ape.n_list,
        cfg.ape.phi_points,
        cfg.ape.transition,
        cfg.propagator(),
        amplitude=amp,
        gap=cfg.ape.gap,
        t2_decay=cfg.ape.t2_decay,
        shots=cfg.noise.shots,
        rng=rng,
    )


def cmd_ape(cfg: ExperimentConfig, out: Path, workers: int, record=None) -> dict:
    p = cfg.params()
    if cfg.ape.transition == 1 and p.dim < 3:
        raise ConfigError("1-2 APE needs device.dim >= 3")
    jobs = []
    for i, proto in enumerate(cfg.ape.protocols):
        amp = None
        if record is not None and cfg.ape.transition == 0 and Shaping.parse(proto) == HALF_DERIVATIVE:
            amp = record.half_pi_amplitude
        jobs.append((cfg, proto, amp, cfg.noise.seed + i))
    results = _pmap(_ape_job, jobs, workers)
    w = Writer(out, cfg)
    rows = []
    for r in results:
        for n, row in zip(r.n_list, r.fringes):
            rows.extend((r.label, r.transition, n, phi, pv) for phi, pv in zip(r.phases, row))
    w.csv("fringes.csv", ["protocol", "transition", "n", "phi_rad", "p"], rows)
    summary = {"protocols": [r.summary() for r in results]}
    eps = {r.label: r.epsilon_per_gate for r in results}
    if "gaussian" in eps and "hd" in eps and eps["gaussian"] != 0:
        summary["hd_to_gaussian_ratio"] = abs(eps["hd"] / eps["gaussian"])
    w.json("summary.json", summary)
    return summary


def _leak_job(args):
    cfg, proto, tau = args
    return leakage_scan(cfg.params(), Shaping.parse(proto), math.pi, [tau], cfg.propagator())[0][1]


def _ref_job(args):
    cfg, proto, tau = args
    p = cfg.params()
    delays = np.linspace(0.0, 4.0 / abs(p.anharmonicity), cfg.leakage.delay_points)
    return ramsey_error_filter(p, Shaping.parse(proto), [tau], delays, cfg.propagator())[0].p2_error


def cmd_leakage(cfg: ExperimentConfig, out: Path, workers: int, record=None) -> dict:
    if cfg.device.dim < 3:
        raise ConfigError("leakage needs device.dim >= 3 (no |2> level with dim=2)")
    taus = [float(t) for t in cfg.leakage.fwhms]
    if not taus:
        raise ConfigError("leakage.fwhms is empty")
    jobs = [(cfg, proto, t) for proto in ("gaussian", "hd") for t in taus]
    flat = _pmap(_leak_job, jobs, workers)
    g, h = flat[: len(taus)], flat[len(taus):]
    w = Writer(out, cfg)
    w.csv("leakage.csv", ["tau_ns", "P2_gaussian", "P2_hd"], zip(taus, g, h))
    summary = {"tau_ns": taus, "P2_gaussian": g, "P2_hd": h}
    if cfg.leakage.ramsey_filter:
        ref = _pmap(_ref_job, jobs, workers)
        rg, rh = ref[: len(taus)], ref[len(taus):]
        w.csv("ramsey_filter.csv", ["tau_ns", "P2_gaussian", "P2_hd"], zip(taus, rg, rh))
        summary["ramsey_filter"] = {"P2_gaussian": rg, "P2_hd": rh}
    w.json("summary.json", summary)
    return summary


def cmd_calibrate(cfg: ExperimentConfig, out: Path, workers: int, record=None) -> dict:
    current = {"stage": None}

    def on_stage(name):
        current["stage"] = name

    try:
        rec = run_pipeline(
            cfg.params(),
            cfg.pulses.fwhm,
            cfg.propagator(),
            f21_offset=cfg.calibration.f21_offset,
            t_fixed=cfg.calibration.t_fixed,
            previous=record,
            on_stage=on_stage,
        )
    except (CalibrationError, FitError, NonConformingGateError, ValueError) as exc:
        raise CalibrationError(f"calibration stage '{current['stage']}' failed: {exc}") from exc
    rec = dataclasses.replace(rec, config_hash=cfg.hash)
    w = Writer(out, cfg)
    w.json("calibration.json", {"record": rec.to_dict()})
    return rec.to_dict()


def _traj_job(args):
    cfg, kind, amps = args
    p, conf, tau = cfg.params(), cfg.propagator(), cfg.pulses.fwhm
    pulses = TomographyPulses.calibrated(p, tau, conf)
    if kind == "hadamard":
        return hadamard_trajectory(
            p, tau, np.linspace(0.0, 2.0, cfg.tomography.s_points), amps.get("pi"), amps.get("z"), pulses, conf,
            tune=cfg.tomography.tune_hadamard,
        )
    shaping = GAUSSIAN_ONLY if kind == "gaussian" else HALF_DERIVATIVE
    pi_amp = amps.get("pi") if kind == "hd" else None
    return x_rotation_trajectory(p, shaping, tau, np.linspace(0.0, math.pi, cfg.tomography.theta_points), pi_amp, pulses, conf)


def cmd_tomography(cfg: ExperimentConfig, out: Path, workers: int, record=None) -> dict:
    if cfg.tomography.theta_points < 2 or cfg.tomography.s_points < 2:
        raise ConfigError("tomography grids need at least two points")
    amps = {}
    if record is not None:
        amps = {"pi": record.pi_amplitude, "z": record.z_pi_amplitude}
    kinds = ["gaussian", "hd", "hadamard"]
    scans = _pmap(_traj_job, [(cfg, k, amps) for k in kinds], workers)
    w = Writer(out, cfg)
    summary = {}
    for kind, scan in zip(kinds, scans):
        name = f"trajectory_{'x_' + kind if kind != 'hadamard' else kind}.csv"
        col = "s" if kind == "hadamard" else "theta_rad"
        rows = [(v, b.x, b.y, b.z, lk) for v, b, lk in zip(scan.values, scan.bloch, scan.leakage)]
        w.csv(name, [col, "x", "y", "z", "leakage"], rows)
        xyz = scan.xyz()
        entry = {
            "file": name,
            "max_abs_x": float(np.max(np.abs(xyz[:, 0]))),
            "max_abs_y": float(np.max(np.abs(xyz[:, 1]))),
            "final": [float(v) for v in xyz[-1]],
            "max_leakage": float(max(scan.leakage)),
        }
        if kind == "hadamard":
            s = 1 / math.sqrt(2)
            i1 = int(np.argmin(np.abs(scan.values - 1.0)))
            entry["fidelity_plus_at_s1"] = state_fidelity(scan.states[i1], [s, s])
            entry["fidelity_zero_at_s2"] = state_fidelity(scan.states[-1], [1, 0])
            if scan.tuning is not None:
                entry["nominal_fidelity_plus"] = scan.tuning.nominal_fidelity
                entry["pi_amplitude"] = scan.tuning.pi_amplitude
                entry["z_pi_amplitude"] = scan.tuning.z_pi_amplitude
        summary[kind] = entry
    w.json("summary.json", summary)
    return summary


SWEEP_OUTPUTS = {"epsilon_deg", "leakage", "ape_epsilon_deg"}


def _set_path(data: dict, path: str, value):
    keys = path.split(".")
    node = data
    for k in keys[:-1]:
        if not isinstance(node, dict) or k not in node:
            raise ConfigError(f"sweep.parameter: no such config path {path!r}")
        node = node[k]
    if not isinstance(node, dict) or keys[-1] not in node:
        raise ConfigError(f"sweep.parameter: no such config path {path!r}")
    node[keys[-1]] = value


def _sweep_job(cfg: ExperimentConfig) -> float:
    p, conf, tau, shaping = cfg.params(), cfg.propagator(), cfg.pulses.fwhm, cfg.shaping()
    kind = cfg.sweep.output
    if kind == "ape_epsilon_deg":
        return math.degrees(run_ape(p, shaping, tau, cfg.ape.n_list, cfg.ape.phi_points, cfg.ape.transition, conf).epsilon_per_gate)
    theta = math.radians(cfg.sweep.theta_deg)
    if kind == "leakage":
        if p.dim < 3:
            raise ConfigError("leakage needs device.dim >= 3")
        return leakage_scan(p, shaping, theta, [tau], conf)[0][1]
    amp = tune_amplitude(p, shaping, theta, tau, conf)
    return math.degrees(single_gate_epsilon(p, theta, tau, shaping, conf, amplitude=amp).epsilon)


def cmd_sweep(cfg: ExperimentConfig, out: Path, workers: int, record=None) -> dict:
    sw = cfg.sweep
    if not sw.values:
        raise ConfigError("sweep.values is empty")
    if sw.parameter.startswith("sweep."):
        if sw.parameter != "sweep.theta_deg":
            raise ConfigError("only sweep.theta_deg may be swept inside the sweep block")
    base = cfg.to_dict()
    points = []
    for v in sw.values:
        d = copy.deepcopy(base)
        _set_path(d, sw.parameter, v)
        points.append(parse_config(d))
    ys = _pmap(_sweep_job, points, workers)
    w = Writer(out, cfg)
    w.csv("sweep.csv", [sw.parameter, sw.output], zip(sw.values, ys))
    summary = {"parameter": sw.parameter, "output": sw.output, "values": list(sw.values), "results": ys}
    w.json("summary.json", summary)
    return summary


COMMANDS = {
    "ape": (
        cmd_ape,
        "APE fringes: P1 versus final-pulse axis phase for n pseudo-identities, with the fitted "
        "phase shift versus n and the per-gate phase error, for Gaussian and half-derivative pulses "
        "(also the qudit 1-2 variant with ape.transition=1).",
        "device, pulses.fwhm, integrator, ape (n_list, phi_points, transition, protocols, t2_decay, gap), noise",
    ),
    "leakage": (
        cmd_leakage,
        "|2> population after a calibrated pi pulse versus pulse width (FWHM) for Gaussian and "
        "half-derivative shaping, plus the two-pulse Ramsey error filter estimate of per-pulse leakage.",
        "device (dim >= 3), integrator, leakage (fwhms, ramsey_filter, delay_points)",
    ),
    "calibrate": (
        cmd_calibrate,
        "Calibration chain: pi and pi/2 amplitudes, qubit frequency from a time Ramsey fringe, f21 from a "
        "|1>-|2> Ramsey fringe, Z-pulse pi amplitude, and the derivative scale beta that nulls the phase "
        "error. Writes calibration.json for reuse with --calibration.",
        "device (f_frame injects a carrier detuning), pulses.fwhm, integrator, calibration (f21_offset, t_fixed)",
    ),
    "tomography": (
        cmd_tomography,
        "Bloch-vector trajectories from state tomography: X rotation ramped 0..pi with Gaussian and "
        "half-derivative pulses, and the two-stage off-equator Hadamard (|0> -> |+> -> |0>).",
        "device, pulses.fwhm, integrator, tomography (theta_points, s_points, tune_hadamard)",
    ),
    "sweep": (
        cmd_sweep,
        "Generic scan: one scalar config path over a value list, one scalar output per point "
        "(single-gate phase error, leakage or APE phase error). Used for the phase-error scaling "
        "with rotation angle, pulse width and derivative scale.",
        "sweep (parameter, values, output, theta_deg) plus every block the chosen output reads",
    ),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apesim",
        description="Phase-error metrology and pulse calibration on a simulated anharmonic qudit.",
    )
    parser.add_argument("--version", action="version", version=f"apesim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, text, blocks) in COMMANDS.items():
        sp = sub.add_parser(
            name,
            help=text.split(":")[0] if ":" in text else text.split(".")[0],
            description=text,
            epilog=f"Config blocks read: {blocks}. Unknown config keys are rejected.",
        )
        sp.add_argument("--config", metavar="PATH", help="JSON experiment config (defaults used when omitted)")
        sp.add_argument("--calibration", metavar="PATH", help="calibration.json from a previous 'calibrate' run")
        sp.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
        sp.add_argument("--workers", metavar="N", type=int, default=1, help="worker processes for internal scans")
        sp.add_argument("--seed", metavar="U64", type=int, default=None, help="shot-noise seed (overrides noise.seed)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg.noise.seed = args.seed
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        record = load_calibration(args.calibration, cfg)
        fn = COMMANDS[args.command][0]
        fn(cfg, Path(args.out), args.workers, record)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitError, CalibrationError, NonConformingGateError) as exc:
        print(f"fit/convergence failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    print(f"wrote {args.command} results to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
