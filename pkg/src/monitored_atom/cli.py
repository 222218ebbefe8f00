"""Command-line runner for trajectory experiments and field tables.

Presets
-------
fig1-field
    Per-unit-kappa first-order diffusion field sampled on a sphere grid.
fig2-field
    Its nonlinear (back-action) part, the field minus the equivalent
    classical rotation.
decay
    Law-off exact-mode ensemble from the equator state (1, 0, 0); the
    mean Bloch vector should follow free decay.
stabilize
    Feedback-on exact-mode ensemble started on the target state.
delay-sweep
    The stabilize experiment repeated over feedback delays, emitting the
    final recorded row per delay.

Explicit flags override preset values, which override the built-in
defaults.  Output is CSV (with one leading ``# config=...`` comment line
embedding the resolved configuration) or JSON (config embedded as a
field); numbers are written with enough digits to reparse bit-exactly.
Identical invocations produce byte-identical output, regardless of
``--workers``.

Exit codes: 0 success, 1 output path not writable, 2 invalid arguments
or configuration.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import dataclass
from typing import Mapping

from .state import BlochVector
from .homodyne import HomodyneConfig, UpdateMode, _step_field
from .feedback import FeedbackLaw
from .trajectory import EnsembleStats, SimConfig, run_ensemble

ENSEMBLE_COLUMNS = [
    "step", "gamma_t",
    "mean_sx", "mean_sy", "mean_sz",
    "se_sx", "se_sy", "se_sz",
    "angle_var", "fidelity", "purity",
]
FIELD_COLUMNS = ["grid_sx", "grid_sy", "grid_sz", "dsx", "dsy", "dsz"]
SWEEP_COLUMNS = ["delay"] + ENSEMBLE_COLUMNS


@dataclass(frozen=True)
class ExperimentPreset:
    """Named bundle of settings; explicit flags override each entry."""

    name: str
    settings: Mapping[str, object]


_BASE: dict[str, object] = {
    "preset": None,
    "mode": "exact",
    "feedback": "off",
    "theta_bar": math.pi,
    "gamma_tau": 1e-4,
    "alpha2": 1e4,
    "steps": 100,
    "trajectories": 100,
    "delay": 1,
    "seed": 1234,
    "initial": None,
    "record_stride": 1,
    "grid_points": 200,
    "delays": (1, 2, 5, 10, 20, 50),
}

PRESETS: dict[str, ExperimentPreset] = {
    "fig1-field": ExperimentPreset("fig1-field", {}),
    "fig2-field": ExperimentPreset("fig2-field", {}),
    "decay": ExperimentPreset(
        "decay",
        {
            "mode": "exact",
            "feedback": "off",
            "initial": (1.0, 0.0, 0.0),
            "steps": 1000,
            "trajectories": 1000,
            "record_stride": 10,
        },
    ),
    "stabilize": ExperimentPreset(
        "stabilize",
        {
            "mode": "exact",
            "feedback": "on",
            "theta_bar": math.pi / 2.0,
            "steps": 1000,
            "trajectories": 1000,
            "record_stride": 10,
        },
    ),
    "delay-sweep": ExperimentPreset(
        "delay-sweep",
        {
            "mode": "exact",
            "feedback": "on",
            "theta_bar": math.pi / 2.0,
            "steps": 500,
            "trajectories": 500,
        },
    ),
}

_OVERRIDE_KEYS = (
    "mode", "feedback", "theta_bar", "gamma_tau", "alpha2", "steps",
    "trajectories", "delay", "seed", "initial", "record_stride", "grid_points",
)


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"expected three comma-separated numbers sx,sy,sz, got {text!r}"
        )
    try:
        x, y, z = (float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"could not parse {text!r} as numbers")
    return (x, y, z)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="monitored-atom",
        description=(
            "Simulate homodyne-monitored trajectories of a decaying two-level "
            "atom, with optional diffusion-cancelling coherent feedback."
        ),
    )
    p.add_argument("--preset", choices=sorted(PRESETS), help="named experiment")
    p.add_argument("--mode", choices=["exact", "first-order"],
                   help="state update rule")
    p.add_argument("--feedback", choices=["on", "off"], help="feedback law switch")
    p.add_argument("--theta-bar", dest="theta_bar", type=float,
                   help="feedback target polar angle in [0, pi]")
    p.add_argument("--gamma-tau", dest="gamma_tau", type=float,
                   help="decay probability per interval")
    p.add_argument("--alpha2", type=float,
                   help="local oscillator photon number |alpha|^2")
    p.add_argument("--steps", type=int, help="measurement intervals per trajectory")
    p.add_argument("--trajectories", type=int, help="ensemble size")
    p.add_argument("--delay", type=int, help="feedback latency in intervals (>= 1)")
    p.add_argument("--seed", type=int, help="master seed for all noise streams")
    p.add_argument("--initial", type=_triple, metavar="SX,SY,SZ",
                   help="initial Bloch vector (default: feedback target, else excited)")
    p.add_argument("--record-stride", dest="record_stride", type=int,
                   help="record every this-many steps")
    p.add_argument("--grid-points", dest="grid_points", type=int,
                   help="sphere grid size for the field presets")
    p.add_argument("--workers", type=int, default=1,
                   help="worker processes (results are worker-invariant)")
    p.add_argument("--out", default="-", help="output path, or - for stdout")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    return p


def parse_args(argv=None) -> argparse.Namespace:
    """Parse the command line; argparse exits with code 2 on usage errors."""
    return build_parser().parse_args(argv)


def resolve_settings(ns: argparse.Namespace) -> dict:
    """Layer defaults, preset values, and explicit flags, in that order."""
    settings = dict(_BASE)
    if ns.preset is not None:
        settings["preset"] = ns.preset
        settings.update(PRESETS[ns.preset].settings)
    for key in _OVERRIDE_KEYS:
        v = getattr(ns, key)
        if v is not None:
            settings[key] = v
    return settings


def _build_sim_config(settings: Mapping[str, object], delay=None) -> SimConfig:
    hom = HomodyneConfig(
        alpha_mag=math.sqrt(float(settings["alpha2"])),
        gamma_tau=float(settings["gamma_tau"]),
        mode=UpdateMode(settings["mode"]),
    )
    law = FeedbackLaw(
        theta_bar=float(settings["theta_bar"]),
        enabled=settings["feedback"] == "on",
    )
    init = settings["initial"]
    if init is None:
        initial = law.target if law.enabled else BlochVector(0.0, 0.0, 1.0)
    else:
        initial = BlochVector(float(init[0]), float(init[1]), float(init[2]))
    return SimConfig(
        homodyne=hom,
        law=law,
        initial=initial,
        steps=int(settings["steps"]),
        trajectories=int(settings["trajectories"]),
        master_seed=int(settings["seed"]),
        delay=int(delay if delay is not None else settings["delay"]),
        record_stride=int(settings["record_stride"]),
    )


def _config_block(settings: Mapping[str, object], cfg: SimConfig | None) -> dict:
    block: dict[str, object] = {"preset": settings["preset"]}
    if cfg is None:
        block["grid_points"] = int(settings["grid_points"])
        return block
    block.update(
        mode=cfg.homodyne.mode.value,
        feedback="on" if cfg.law.enabled else "off",
        theta_bar=cfg.law.theta_bar,
        gamma_tau=cfg.homodyne.gamma_tau,
        alpha2=cfg.homodyne.alpha_sq,
        initial=[cfg.initial.sx, cfg.initial.sy, cfg.initial.sz],
        steps=cfg.steps,
        trajectories=cfg.trajectories,
        delay=cfg.delay,
        record_stride=cfg.record_stride,
        seed=cfg.master_seed,
    )
    if settings["preset"] == "delay-sweep":
        block["delays"] = [int(d) for d in settings["delays"]]
        del block["delay"]
    return block


def _stats_rows(stats: EnsembleStats, prefix: tuple = ()) -> list[list]:
    rows = []
    for r in range(stats.steps.size):
        ang = None if stats.angle_var is None else float(stats.angle_var[r])
        rows.append(
            list(prefix)
            + [
                int(stats.steps[r]), float(stats.gamma_t[r]),
                float(stats.mean[r, 0]), float(stats.mean[r, 1]), float(stats.mean[r, 2]),
                float(stats.se[r, 0]), float(stats.se[r, 1]), float(stats.se[r, 2]),
                ang, float(stats.fidelity[r]), float(stats.purity[r]),
            ]
        )
    return rows


def _sphere_grid(n: int) -> list[tuple[float, float, float]]:
    # Fibonacci lattice plus the six axis poles, so the special states
    # (ground, excited, equator) always appear exactly.
    if n < 1:
        raise ValueError(f"grid_points must be positive, got {n!r}")
    golden = math.pi * (3.0 - math.sqrt(5.0))
    pts = []
    for i in range(n):
        z = 1.0 - (2.0 * i + 1.0) / n
        r = math.sqrt(max(0.0, 1.0 - z * z))
        a = golden * i
        pts.append((r * math.cos(a), r * math.sin(a), z))
    pts += [
        (1.0, 0.0, 0.0), (-1.0, 0.0, 0.0),
        (0.0, 1.0, 0.0), (0.0, -1.0, 0.0),
        (0.0, 0.0, 1.0), (0.0, 0.0, -1.0),
    ]
    return pts


def _field_table(settings: Mapping[str, object]):
    nonlinear = settings["preset"] == "fig2-field"
    rows = []
    for x, y, z in _sphere_grid(int(settings["grid_points"])):
        fx, fy, fz = _step_field(x, y, z, -1.0)
        if nonlinear:
            fx, fy, fz = fx - z, fy - 0.0, fz + x
        rows.append([x, y, z, fx, fy, fz])
    return FIELD_COLUMNS, rows, _config_block(settings, None)


def _ensemble_table(settings: Mapping[str, object], workers: int):
    cfg = _build_sim_config(settings)
    stats = run_ensemble(cfg, workers)
    return ENSEMBLE_COLUMNS, _stats_rows(stats), _config_block(settings, cfg)


def _sweep_table(settings: Mapping[str, object], workers: int):
    rows = []
    cfg = None
    for d in settings["delays"]:
        cfg = _build_sim_config(settings, delay=int(d))
        stats = run_ensemble(cfg, workers)
        rows.append(_stats_rows(stats, prefix=(int(d),))[-1])
    return SWEEP_COLUMNS, rows, _config_block(settings, cfg)


def execute(settings: Mapping[str, object], workers: int = 1):
    """Run the resolved experiment; returns (columns, rows, config)."""
    preset = settings["preset"]
    if preset in ("fig1-field", "fig2-field"):
        return _field_table(settings)
    if preset == "delay-sweep":
        return _sweep_table(settings, workers)
    return _ensemble_table(settings, workers)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, int):
        return str(v)
    # 17 significant digits round-trip any float64 exactly.
    return "%.17g" % v


def _render_csv(columns, rows, config) -> str:
    buf = io.StringIO()
    buf.write("# config=" + json.dumps(config, separators=(",", ":")) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _render_json(columns, rows, config) -> str:
    return json.dumps(
        {"config": config, "columns": columns, "rows": rows}, indent=2
    ) + "\n"


def emit_results(columns, rows, config, out: str = "-", fmt: str = "csv") -> None:
    """Write the result table to ``out`` ("-" or None for stdout).

    Raises OSError if the path cannot be written.
    """
    if fmt == "csv":
        text = _render_csv(columns, rows, config)
    elif fmt == "json":
        text = _render_json(columns, rows, config)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)


def main(argv=None) -> int:
    try:
        ns = parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        settings = resolve_settings(ns)
        columns, rows, config = execute(settings, ns.workers)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        emit_results(columns, rows, config, ns.out, ns.format)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return 1
    return 0
