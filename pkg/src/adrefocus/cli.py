"""Command-line scenario runner.

``adrefocus run --config FILE --scenario NAME [--engine ...] [--out DIR]``
writes ``<scenario>_<label>.csv`` and ``<scenario>_<label>.json`` (the
spheres scenario writes one CSV per snapshot). ``adrefocus inspect
--config FILE`` prints the per-pulse adiabaticity report.

Exit status: 0 success, 2 usage, 3 unknown scenario, 4 invalid config,
5 unwritable output directory.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import backend
from .config import BUNDLED, Config, ConfigError, load_config
from .ensemble import (ENGINES, absorption, default_snapshot_times, marker_times,
                       propagate_ensemble, refocusing_trace, transmission)
from .fitting import (efficiency, extract_rabi_from_nutation, fit_bump_width, fit_decay_rate,
                      fit_rabi_calibration)
from .bloch import nutation_trace
from .io import write_csv, write_json, write_snapshot, write_trace
from .model import validate_sequence
from .units import TWO_PI, UnitError, ordinary, parse_quantity

log = logging.getLogger("adrefocus")

SCENARIOS = ("nutation", "refocusing", "decay_series", "spheres")
EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_CONFIG, EXIT_OUTPUT = 0, 2, 3, 4, 5


def resolve_config(name: str) -> Path:
    """A path, or the stem of a bundled config (``fig5``, ``table1``, ...)."""
    p = Path(name)
    if p.exists() or p.suffix:
        return p
    bundled = BUNDLED / f"{name}.toml"
    return bundled if bundled.exists() else p


# ---------------------------------------------------------------- scenarios

def run_nutation(cfg: Config, engine: str, seed: int, workers: int, out: Path, **_) -> list[Path]:
    nut = cfg.nutation
    if not nut:
        raise ConfigError("nutation scenario needs a [nutation] section")
    rabi = cfg.pulse.rabi
    if "voltage" in nut and cfg.calibration:
        rabi = TWO_PI * cfg.calibration["slope"] * nut["voltage"]
    dist = cfg.distribution(seed)
    times = np.linspace(0.0, nut["duration"], nut["samples"])
    delta = dist.nodes + nut["detuning"]
    om = rabi * dist.rabi_scale
    if engine == "closed_form":
        oe = np.hypot(om, delta)
        mz_nodes = (delta**2 + om**2 * np.cos(np.outer(times, oe))) / oe**2
    else:
        _, mz_nodes = nutation_trace(rabi, delta, nut["duration"], nut["samples"], cfg.gamma,
                                     rabi_scale=dist.rabi_scale)
    mz = mz_nodes @ dist.weights
    alpha = np.clip(cfg.probe.alpha0 * (1.0 - mz), 0.0, 2.0 * cfg.probe.alpha0)
    intensity = transmission(alpha, cfg.probe.input_intensity)
    fit = extract_rabi_from_nutation(times, mz)
    summary = {"scenario": "nutation", "label": cfg.label, "engine": engine,
               "drive_rabi_hz": ordinary(rabi),
               "fitted_rabi_hz": ordinary(fit.params["rabi"]),
               "fitted_rabi_err_hz": ordinary(fit.errors["rabi"]),
               "fit": fit.to_dict()}
    if "voltage" in nut:
        summary["voltage"] = nut["voltage"]
    if cfg.calibration:
        summary["calibration"] = _calibration_summary(cfg.calibration)
    stem = f"nutation_{cfg.label}"
    return [write_csv(out / f"{stem}.csv", ("time_s", "mz", "intensity"),
                      np.column_stack([times, mz, intensity])),
            write_json(out / f"{stem}.json", summary)]


def _calibration_summary(cal: dict) -> dict:
    v = np.asarray(cal["voltages"])
    model = fit_rabi_calibration(v, cal["slope"] * v)
    out = {"slope_hz_per_v": model.slope, "slope_err_hz_per_v": model.slope_err,
           "intercept_hz": model.intercept}
    if "reference_voltage" in cal and "reference_rabi" in cal:
        pred = model.rabi_hz(cal["reference_voltage"])
        out.update({"reference_voltage": cal["reference_voltage"],
                    "predicted_rabi_hz": pred, "reference_rabi_hz": cal["reference_rabi"],
                    "relative_discrepancy": abs(pred - cal["reference_rabi"]) / cal["reference_rabi"]})
    return out


def run_refocusing(cfg: Config, engine: str, seed: int, workers: int, out: Path, **_) -> list[Path]:
    dist = cfg.distribution(seed)
    seq = cfg.sequence()
    trace = refocusing_trace(dist, seq, cfg.probe, cfg.gamma, engine, cfg.trace_samples,
                             workers=workers)
    m = trace.markers
    summary = {"scenario": "refocusing", "label": cfg.label, "engine": engine,
               "markers": {k: m[k] for k in ("I0", "I1", "I2", "I3", "If")},
               "marker_times": {k: m[k] for k in ("t_I1", "t_I2", "t_I3", "t_If")},
               "T": seq.period, "gamma": cfg.gamma,
               "eta_inputs": {"I0": m["I0"], "I2": m["I2"], "If": m["If"], "T": seq.period,
                              "gamma": cfg.gamma},
               "warnings": m["warnings"]}
    try:
        eff = efficiency(m["I0"], m["I2"], m["If"], seq.period, cfg.gamma)
        summary["efficiency"] = {"eta": eff.eta, "annotations": list(eff.annotations)}
    except ValueError as exc:
        summary["efficiency"] = {"eta": None, "annotations": [str(exc)]}
    afp = seq.pulses[1]
    window = cfg.fit.get("window") or 0.5 * afp.duration
    sel = np.abs(trace.times - afp.center_time) <= 0.5 * window
    try:
        bump = fit_bump_width(trace.times[sel], trace.intensity[sel], afp.rabi, afp.chirp_rate,
                              center=afp.center_time, shape=cfg.shape)
        summary["bump_fit"] = bump.to_dict()
        summary["bump_fit"]["fwhm_hz"] = ordinary(bump.params["fwhm"])
        summary["bump_fit"]["fwhm_err_hz"] = ordinary(bump.errors["fwhm"])
    except ValueError as exc:
        summary["bump_fit"] = {"error": str(exc)}
    stem = f"refocusing_{cfg.label}"
    return [write_trace(out / f"{stem}.csv", trace), write_json(out / f"{stem}.json", summary)]


def run_decay_series(cfg: Config, engine: str, seed: int, workers: int, out: Path, **_) -> list[Path]:
    dec = cfg.decay
    if not dec:
        raise ConfigError("decay_series scenario needs a [decay_series] section")
    dist = cfg.distribution(seed)

    def final(period):
        seq = cfg.sequence(period)
        mt = marker_times(seq)
        run = propagate_ensemble(dist, seq, cfg.gamma, engine, [mt["t_I2"], mt["t_If"]],
                                 workers=workers)
        i2, i_f = (transmission(absorption(s, dist, cfg.probe), cfg.probe.input_intensity)
                   for s in run)
        return i2, i_f

    periods = np.asarray(dec["periods"])
    pairs = [final(T) for T in periods]
    i2 = np.array([p[0] for p in pairs])
    i_f = np.array([p[1] for p in pairs])
    i_inf = final(dec["t_inf"])[1] if dec.get("t_inf") else None
    fit = fit_decay_rate(periods, i_f, i_inf)
    summary = {"scenario": "decay_series", "label": cfg.label, "engine": engine,
               "gamma_true": cfg.gamma, "i_inf": i_inf, "t_inf": dec.get("t_inf"),
               "fit": fit.to_dict(), "lifetime_s": fit.params["lifetime"],
               "lifetime_err_s": fit.errors["lifetime"]}
    stem = f"decay_series_{cfg.label}"
    return [write_csv(out / f"{stem}.csv", ("period_s", "I2", "If"), np.column_stack([periods, i2, i_f])),
            write_json(out / f"{stem}.json", summary)]


def parse_snapshot_times(text: str, period: float, t0: float = 0.0) -> np.ndarray:
    """Comma-separated times with units, or fractions of the period as ``0.25T``."""
    out = []
    for tok in (s.strip() for s in text.split(",")):
        if not tok:
            continue
        if tok.endswith("T"):
            out.append(t0 + float(tok[:-1] or 1.0) * period)
        else:
            out.append(parse_quantity(tok, "time"))
    if not out:
        raise UnitError("no snapshot times given")
    return np.array(out)


def run_spheres(cfg: Config, engine: str, seed: int, workers: int, out: Path,
                snapshot_times=None, **_) -> list[Path]:
    dist = cfg.distribution(seed)
    seq = cfg.block()
    times = default_snapshot_times(seq) if snapshot_times is None else snapshot_times
    m0 = cfg.spheres.get("initial", [1.0, 0.0, 0.0])
    run = propagate_ensemble(dist, seq, cfg.gamma, engine, times, m0=m0, workers=workers)
    paths = []
    snaps = []
    for k, state in enumerate(run):
        name = f"spheres_{cfg.label}_s{k}.csv"
        paths.append(write_snapshot(out / name, dist.nodes, state.m))
        snaps.append({"file": name, "time_s": state.time, "mean": state.mean(dist)})
    summary = {"scenario": "spheres", "label": cfg.label, "engine": engine, "seed": seed,
               "n_spins": len(dist), "T": seq.period, "snapshots": snaps,
               "warnings": list(run.warnings)}
    paths.append(write_json(out / f"spheres_{cfg.label}.json", summary))
    return paths


RUNNERS = {"nutation": run_nutation, "refocusing": run_refocusing,
           "decay_series": run_decay_series, "spheres": run_spheres}


# ---------------------------------------------------------------- entry points

def inspect_config(path) -> tuple[str, bool]:
    cfg = load_config(path)
    dist = cfg.distribution()
    report = validate_sequence(cfg.sequence(), dist)
    head = [f"config: {cfg.label}",
            f"distribution: {cfg.shape}, FWHM = {ordinary(cfg.fwhm) / 1e6:.4g} MHz, {len(dist)} nodes"]
    return "\n".join(head + [report.format()]), report.ok


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="adrefocus", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run one scenario and write artifacts")
    run.add_argument("--config", required=True, help="TOML file or bundled name (fig2, fig5, ...)")
    run.add_argument("--scenario", required=True, help=f"one of {', '.join(SCENARIOS)}")
    run.add_argument("--engine", choices=ENGINES, default="closed_form")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--out", default=".", help="output directory (created if missing)")
    run.add_argument("--workers", type=int, default=1)
    run.add_argument("--snapshot-times", default=None,
                     help="spheres only: e.g. '0 us,50 us' or '0T,0.25T,0.5T'")
    ins = sub.add_parser("inspect", help="print per-pulse adiabaticity metrics")
    ins.add_argument("--config", required=True)
    return ap


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "inspect":
        try:
            text, _ = inspect_config(resolve_config(args.config))
        except ConfigError as exc:
            print(f"error: invalid config: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(text)
        return EXIT_OK

    if args.scenario not in SCENARIOS:
        print(f"error: unknown scenario {args.scenario!r}; expected one of {', '.join(SCENARIOS)}",
              file=sys.stderr)
        return EXIT_SCENARIO
    try:
        cfg = load_config(resolve_config(args.config))
        snaps = None
        if args.snapshot_times:
            t0 = cfg.block().t_start
            snaps = parse_snapshot_times(args.snapshot_times, cfg.period, t0)
    except (ConfigError, UnitError, ValueError) as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".adrefocus-write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_OUTPUT
    workers = max(1, min(args.workers, os.cpu_count() or 1))
    log.info("scenario %s, engine %s, backend %s, %d worker(s)", args.scenario, args.engine,
             backend(), workers)
    try:
        paths = RUNNERS[args.scenario](cfg, args.engine, args.seed, workers, out,
                                       snapshot_times=snaps)
    except ConfigError as exc:
        print(f"error: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for p in paths:
        print(p)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
