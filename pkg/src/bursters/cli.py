"""Command-line front end: ``bursters <command> --system <name> [options]``.

Model systems take their native units (mV, ms, model current units);
circuit systems take SI units (V, s, A). All CSV time columns are in ms.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .bifurcation import BifurcationDiagram, DiagramConfig, build_diagram, classify_burster, write_diagram_csv
from .config import ConfigError, format_kv
from .dynsys import IntegrationError, IntegratorConfig, Trajectory, integrate, write_atomic
from .metrics import analyse, write_statistics_csv
from .phase import (compute_nullclines, default_window, find_cycles, find_equilibria, write_cycles_csv,
                    write_equilibria_csv, write_nullclines_csv)
from .svg import Marker, Plot, Series, write_svg
from .systems import SYSTEM_NAMES, SystemSpec, get_system

__all__ = ["main", "build_parser"]

EXIT_CONFIG = 2
EXIT_INTEGRATION = 3
EXIT_STRICT = 4


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


# --------------------------------------------------------------------------
# helpers

def _floats(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise CliError(f"{flag}: expected comma-separated numbers, got {text!r}") from None


def _range(text: str, flag: str) -> tuple[float, float]:
    parts = text.split(":")
    try:
        lo, hi = (float(v) for v in parts)
    except ValueError:
        raise CliError(f"{flag}: expected 'lo:hi', got {text!r}") from None
    if not hi > lo:
        raise CliError(f"{flag}: range upper bound must exceed lower bound")
    return lo, hi


def _slow_arg(args, spec: SystemSpec):
    """Value of --nM or --vgs2, whichever matches the system."""
    want, other = ("nM", "vgs2") if spec.kind == "model" else ("vgs2", "nM")
    if getattr(args, other, None) is not None:
        raise CliError(f"--{other} does not apply to {spec.name}; use --{want}")
    return getattr(args, want, None), f"--{want}"


def _prefix(args, spec: SystemSpec, command: str) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out / f"{spec.name}_{command}"


def _write_manifest(prefix: Path, command: str, args, spec: SystemSpec, extra: dict) -> None:
    values = {"command": command, "system": spec.name, "config": spec.source, "version": __version__}
    for k, v in sorted(vars(args).items()):
        if k not in ("func",):
            values[f"option.{k}"] = "" if v is None else str(v)
    for k, v in spec.flat_params().items():
        values[f"param.{k}"] = v
    for k, v in extra.items():
        values[k] = v
    lines = []
    for k, v in values.items():
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = format(v, ".17g")
        lines.append(f"{k} = {v}")
    write_atomic(f"{prefix}_run-manifest.txt", "\n".join(lines) + "\n")


def _integrator(args, spec: SystemSpec, t_end: float) -> IntegratorConfig:
    if args.method == "rk4":
        step = args.step if args.step is not None else (t_end / 2e5)
        return IntegratorConfig(method="rk4", t_end=t_end, fixed_step=step)
    return IntegratorConfig(method="rk45", t_end=t_end, rel_tol=args.rtol, abs_tol=args.atol)


def _simulate(args, spec: SystemSpec, prefix: Path) -> tuple[Trajectory, IntegratorConfig]:
    t_end = args.t_end if args.t_end is not None else spec.t_end
    cfg = _integrator(args, spec, t_end)
    x0 = spec.initial_state() if args.x0 is None else np.array(_floats(args.x0, "--x0"))
    try:
        return integrate(spec.system(), x0, cfg), cfg
    except IntegrationError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc), **{f"integrator.{k}": v for k, v in
                                                                      cfg.as_dict().items()}}
        for attr in ("last_time", "time", "step"):
            if hasattr(exc, attr):
                diag[attr] = getattr(exc, attr)
        write_atomic(f"{prefix}_diagnostics.txt", format_kv(diag))
        raise CliError(f"integration failed: {exc} (see {prefix}_diagnostics.txt)", EXIT_INTEGRATION) from exc


def _metrics_cfg(args, spec: SystemSpec):
    changes = {}
    for name in ("gap_factor", "noise_floor"):
        if getattr(args, name, None) is not None:
            changes[name] = getattr(args, name)
    if getattr(args, "threshold_fraction", None) is not None:
        changes["threshold_fraction"] = args.threshold_fraction
    return spec.metrics_config(**changes)


def _waveform_plot(traj: Trajectory, spec: SystemSpec, title: str) -> Plot:
    unit = "mV" if spec.kind == "model" else "V"
    return Plot(title=title, xlabel="t (ms)", ylabel=f"{spec.membrane} ({unit})",
                series=[Series(traj.times * spec.export_time_factor, traj.component(spec.membrane))])


# --------------------------------------------------------------------------
# commands

def cmd_simulate(args) -> int:
    spec = _load(args)
    if args.I is not None:
        spec = spec.with_current(args.I)
    prefix = _prefix(args, spec, "simulate")
    traj, cfg = _simulate(args, spec, prefix)
    traj.to_csv(f"{prefix}.csv", time_factor=spec.export_time_factor)
    if args.svg:
        write_svg(_waveform_plot(traj, spec, f"{spec.name}, I = {spec.params.I:g}"), f"{prefix}.svg")
    _write_manifest(prefix, "simulate", args, spec, {f"integrator.{k}": v for k, v in cfg.as_dict().items()}
                    | {"time_unit_csv": "ms"})
    print(f"{prefix}.csv: {len(traj)} samples")
    return 0


def cmd_phase(args) -> int:
    spec = _load(args)
    values, flag = _slow_arg(args, spec)
    values = _floats(values, flag) if values is not None else list(spec.panels)
    prefix = _prefix(args, spec, "phase")
    for i, v in enumerate(values):
        fast = spec.fast(v)
        w = default_window(fast)
        if args.grid is not None:
            w = w.with_grid(args.grid, args.grid)
        nc = compute_nullclines(fast, w)
        eqs = find_equilibria(fast, w, nullclines=nc)
        cycles = find_cycles(fast, eqs, w)
        stem = f"{prefix}_{i}"
        write_nullclines_csv(nc, f"{stem}_nullclines.csv")
        write_equilibria_csv(eqs, f"{stem}_equilibria.csv")
        write_cycles_csv(cycles, f"{stem}_cycles.csv")
        desc = ", ".join(f"{e.klass} at ({e.location[0]:.4g}, {e.location[1]:.4g})" for e in eqs) or "none"
        cyc = ", ".join(f"{c.stability} cycle (period {c.period * spec.export_time_factor:.4g} ms)"
                        for c in cycles) or "no cycles"
        print(f"{spec.slow_label} = {v:g}: {desc}; {cyc}")
        if args.svg:
            plot = Plot(title=f"{spec.name}, {spec.slow_label} = {v:g}", xlabel=fast.labels[0],
                        ylabel=fast.labels[1], xlim=(w.lower[0], w.lower[0] + w.span[0]),
                        ylim=(w.lower[1], w.lower[1] + w.span[1]))
            for k, curve in enumerate(nc.curves_f1):
                plot.series.append(Series(curve[:, 0], curve[:, 1], f"d{fast.labels[0]}/dt = 0" if k == 0 else "",
                                          color="#1f4e9c"))
            for k, curve in enumerate(nc.curves_f2):
                plot.series.append(Series(curve[:, 0], curve[:, 1], f"d{fast.labels[1]}/dt = 0" if k == 0 else "",
                                          color="#c0392b"))
            for c in cycles:
                plot.series.append(Series(c.samples[:, 0], c.samples[:, 1], f"{c.stability} cycle",
                                          color="#2e8b57", dashed=c.stability == "unstable"))
            plot.markers = [Marker(e.location[0], e.location[1], e.klass, filled=e.is_stable) for e in eqs]
            write_svg(plot, f"{stem}.svg")
    _write_manifest(prefix, "phase", args, spec, {"frozen_values": ",".join(format(v, ".17g") for v in values)})
    return 0


def _diagram(args, spec: SystemSpec) -> tuple[BifurcationDiagram, tuple[float, float]]:
    rng, flag = _slow_arg(args, spec)
    prange = _range(rng, flag) if rng is not None else spec.sweep_range
    cfg = DiagramConfig(steps=args.steps)
    return build_diagram(spec.fast, prange, config=cfg, parameter=spec.slow_label), prange


def _diagram_plot(d: BifurcationDiagram, spec: SystemSpec) -> Plot:
    plot = Plot(title=f"{spec.name} fast subsystem", xlabel=spec.slow_label, ylabel=spec.membrane)
    for br in d.equilibrium_branches:
        stable = np.array([e.is_stable for _, e in br.points])
        p, v = br.params, br.locations[:, 0]
        for mask, dashed in ((stable, False), (~stable, True)):
            if mask.any():
                plot.series.append(Series(np.where(mask, p, np.nan), np.where(mask, v, np.nan), dashed=dashed,
                                          color="#000000"))
    for cb in d.cycle_branches:
        color = "#2e8b57" if cb.stability == "stable" else "#c0392b"
        for arr in (np.array([c.v_min for c in cb.points]), np.array([c.v_max for c in cb.points])):
            plot.series.append(Series(cb.params, arr, dashed=cb.stability == "unstable", color=color))
    for pt in d.points:
        plot.markers.append(Marker(pt.param_value, _marker_height(d, pt), pt.kind, color="#8e44ad"))
    return plot


def _marker_height(d: BifurcationDiagram, pt) -> float:
    best, dist = 0.0, np.inf
    for br in d.equilibrium_branches:
        k = int(np.argmin(np.abs(br.params - pt.param_value)))
        if abs(br.params[k] - pt.param_value) < dist:
            best, dist = float(br.locations[k, 0]), abs(br.params[k] - pt.param_value)
    return best


def cmd_bifurcate(args) -> int:
    spec = _load(args)
    prefix = _prefix(args, spec, "bifurcate")
    d, prange = _diagram(args, spec)
    write_diagram_csv(d, prefix.parent, prefix.name, spec.membrane)
    for pt in d.points:
        print(f"{pt.kind}: {spec.slow_label} = {pt.param_value:.6g} (bracket {pt.evidence_lo:.6g} .. {pt.evidence_hi:.6g})")
    for lo, hi in d.bistable_intervals:
        print(f"bistable: {lo:.6g} < {spec.slow_label} < {hi:.6g}")
    if args.svg:
        write_svg(_diagram_plot(d, spec), f"{prefix}.svg")
    _write_manifest(prefix, "bifurcate", args, spec, {"range": f"{prange[0]:.17g}:{prange[1]:.17g}",
                                                      **{f"diagram.{k}": v for k, v in _diagram_cfg(args).items()}})
    return 0


def _diagram_cfg(args) -> dict:
    cfg = asdict(DiagramConfig(steps=args.steps))
    cyc = cfg.pop("cycle_cfg")
    return {**{k: str(v) for k, v in cfg.items()}, **{f"cycle.{k}": v for k, v in cyc.items()}}


def cmd_metrics(args) -> int:
    spec = _load(args)
    if args.I is not None:
        spec = spec.with_current(args.I)
    prefix = _prefix(args, spec, "metrics")
    mcfg = _metrics_cfg(args, spec)
    transient = spec.transient * spec.export_time_factor if args.transient is None else args.transient
    if args.input is not None:
        try:
            traj = Trajectory.from_csv(args.input)
        except (OSError, ValueError) as exc:
            raise CliError(str(exc)) from exc
        source = args.input
    else:
        traj, _ = _simulate(args, spec, prefix)
        traj = traj.rescaled(spec.export_time_factor)
        source = "inline"
    component = args.component or spec.membrane
    train, seg, stats = analyse(traj.after(transient), component, args.threshold, mcfg)
    write_statistics_csv([(spec.name, stats, train.threshold)], f"{prefix}.csv")
    print(f"{len(train)} spikes in {len(seg)} bursts; spikes per burst {stats.spikes_per_burst}; "
          f"oscillations onset={stats.onset_oscillations} offset={stats.offset_oscillations}")
    _write_manifest(prefix, "metrics", args, spec, {"source": source, "transient_ms": transient,
                                                    "threshold": train.threshold,
                                                    **{f"metrics.{k}": v for k, v in asdict(mcfg).items()}})
    if args.strict and not stats.available:
        print("statistics unavailable (fewer than two complete bursts after the first)", file=sys.stderr)
        return EXIT_STRICT
    return 0


def cmd_dissect(args) -> int:
    spec = _load(args)
    spec = spec.with_current(args.I if args.I is not None else spec.burst_current)
    prefix = _prefix(args, spec, "dissect")
    d, prange = _diagram(args, spec)
    write_diagram_csv(d, prefix.parent, f"{prefix.name}_diagram", spec.membrane)
    cls = classify_burster(d)
    traj, cfg = _simulate(args, spec, prefix)
    traj.to_csv(f"{prefix}_trajectory.csv", time_factor=spec.export_time_factor)
    mcfg = _metrics_cfg(args, spec)
    train, seg, stats = analyse(traj.after(spec.transient), spec.membrane, None, mcfg)
    measured = (stats.onset_oscillations, stats.offset_oscillations)
    predicted = (cls.onset_oscillations, cls.offset_oscillations)
    consistent = cls.classified and measured == predicted
    lines = [f"system = {spec.name}", f"I = {spec.params.I:.17g}", f"label = {cls.label}",
             f"onset = {cls.onset}", f"offset = {cls.offset}"]
    lines += [f"point = {pt.kind} at {pt.param_value:.17g}" for pt in d.points]
    lines += [f"bistable = {lo:.17g}:{hi:.17g}" for lo, hi in d.bistable_intervals]
    lines += [f"bursts = {len(seg)}", f"spikes_per_burst = {';'.join(map(str, stats.spikes_per_burst))}",
              f"burst_period_ms = {stats.period * spec.export_time_factor:.17g}",
              f"predicted_oscillations = {_flag(predicted[0])},{_flag(predicted[1])}",
              f"measured_oscillations = {_flag(measured[0])},{_flag(measured[1])}",
              f"consistent = {'true' if consistent else 'false'}"]
    write_atomic(f"{prefix}_report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.svg:
        write_svg(_diagram_plot(d, spec), f"{prefix}_diagram.svg")
        write_svg(_waveform_plot(traj, spec, f"{spec.name}, I = {spec.params.I:g}"), f"{prefix}_trajectory.svg")
    _write_manifest(prefix, "dissect", args, spec, {"range": f"{prange[0]:.17g}:{prange[1]:.17g}",
                                                    **{f"integrator.{k}": v for k, v in cfg.as_dict().items()},
                                                    **{f"metrics.{k}": v for k, v in asdict(mcfg).items()}})
    if args.strict and not consistent:
        return EXIT_STRICT
    return 0


def _flag(v) -> str:
    return "undetermined" if v is None else ("true" if v else "false")


def cmd_calibrate(args) -> int:
    from .bifurcation import HOMOCLINIC, HOPF, SADDLE_NODE
    from .calibration import CalibrationFailed, CalibrationTargets, calibrate_gM
    from .models import save_model_config

    spec = _load(args)
    if spec.kind != "model":
        raise CliError("calibrate applies to model systems only")
    if args.targets is not None:
        names = {"fold": SADDLE_NODE, "sho": HOMOCLINIC, "hopf": HOPF}
        pairs = []
        for item in args.targets.split(","):
            key, _, val = item.partition("=")
            if key.strip() not in names:
                raise CliError(f"--targets: unknown kind {key!r}; use fold, sho or hopf")
            pairs.append((names[key.strip()], float(val)))
        bif = tuple(pairs)
    else:
        bif = {"model-a": ((SADDLE_NODE, 0.01), (HOMOCLINIC, 0.065)),
               "model-b": ((HOPF, 0.06),)}.get(spec.name)
        if bif is None:
            raise CliError("--targets is required for custom systems")
    targets = CalibrationTargets(bif, spec.rest_current, spec.burst_current, spec.t_end, spec.transient,
                                 min_spike_range=spec.min_spike_range)
    prefix = _prefix(args, spec, "calibrate")
    try:
        report = calibrate_gM(spec.params, targets)
    except CalibrationFailed as exc:
        raise CliError(f"calibration failed: {exc}", EXIT_STRICT) from exc
    lines = report.lines()
    write_atomic(f"{prefix}_report.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    if args.write is not None:
        header = [f"g_M is a calibrated value; regenerate with: bursters calibrate --system {spec.name} "
                  f"--write <path>"] + lines
        save_model_config(spec.params.with_(g_M=report.g_M), args.write, header="\n".join(header))
    _write_manifest(prefix, "calibrate", args, spec, {"g_M": report.g_M})
    return 0


# --------------------------------------------------------------------------
# parser

def _load(args) -> SystemSpec:
    try:
        return get_system(args.system, args.config)
    except (ConfigError, KeyError, ValueError, OSError) as exc:
        raise CliError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bursters", description="Slow-fast bursting analysis.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--system", default="model-a",
                        help=f"one of {', '.join(SYSTEM_NAMES)} or a config file path")
    common.add_argument("--config", help="parameter file overriding the shipped one")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--svg", action="store_true", help="also write SVG figures")
    common.add_argument("--strict", action="store_true", help="nonzero exit on unavailable or inconsistent results")

    sim = argparse.ArgumentParser(add_help=False)
    sim.add_argument("--I", type=float, help="injected current (model units, or A for circuits)")
    sim.add_argument("--t-end", type=float, help="duration (ms for models, s for circuits)")
    sim.add_argument("--x0", help="initial state, comma separated")
    sim.add_argument("--method", choices=("rk45", "rk4"), default="rk45")
    sim.add_argument("--step", type=float, help="fixed step for rk4")
    sim.add_argument("--rtol", type=float, default=1e-8)
    sim.add_argument("--atol", type=float, default=1e-10)

    slow = argparse.ArgumentParser(add_help=False)
    slow.add_argument("--nM", help="frozen nM value(s) or range (models)")
    slow.add_argument("--vgs2", help="frozen V_GS2 value(s) or range in V (circuits)")

    met = argparse.ArgumentParser(add_help=False)
    met.add_argument("--threshold-fraction", type=float)
    met.add_argument("--gap-factor", type=float)
    met.add_argument("--noise-floor", type=float)

    p = sub.add_parser("simulate", parents=[common, sim], help="integrate the full system")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("phase", parents=[common, slow], help="phase portraits of the fast subsystem")
    p.add_argument("--grid", type=int, help="grid resolution per axis")
    p.set_defaults(func=cmd_phase)

    p = sub.add_parser("bifurcate", parents=[common, slow], help="fast-subsystem bifurcation diagram")
    p.add_argument("--steps", type=int, default=300)
    p.set_defaults(func=cmd_bifurcate)

    p = sub.add_parser("metrics", parents=[common, sim, met], help="burst statistics")
    p.add_argument("--input", help="trajectory CSV (time in ms); default: simulate inline")
    p.add_argument("--component", help="membrane component label")
    p.add_argument("--threshold", type=float, help="fixed spike threshold")
    p.add_argument("--transient", type=float, help="discarded initial time in ms")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("dissect", parents=[common, sim, slow, met], help="diagram, classification and trajectory")
    p.add_argument("--steps", type=int, default=300)
    p.set_defaults(func=cmd_dissect)

    p = sub.add_parser("calibrate", parents=[common], help="calibrate g_M of a model system")
    p.add_argument("--targets", help="e.g. fold=0.01,sho=0.065 or hopf=0.06")
    p.add_argument("--write", help="write the calibrated config (with report) to this path")
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
