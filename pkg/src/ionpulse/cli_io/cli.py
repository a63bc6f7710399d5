"""Command-line entry point: ``ionpulse <command> --config FILE [--seed N] [--out DIR]``.

Each command writes ``results.tsv``, ``summary.json`` and, where useful,
``plot_*.tsv`` series into the output directory. On failure nothing but an
``error.json`` report is left behind and the exit code names the error class.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from .. import errors
from ..estimation import (BurstMapData, RamseyData, ScanSubset, fit_many_pulse_scan,
                          fit_pi_scan, fit_ramsey, fit_single_pulse_map)
from ..experiments import (burst_map, contrast_phase_arrays, dark_state_curves,
                           default_detuning_grid, ramsey_fringe, ramsey_initial_state,
                           synth_shots)
from ..interferometry import InterferogramSet, pairwise_phases, synth_interferogram
from ..quantum_core import AtomModel, ket, projector, propagate_train, pure
from ..scheduler import (HardwareConstraints, PowerChain, SequenceRequest, compile,
                         export_waveforms, import_waveforms, power_chain_output,
                         switch_on_transient, validate)
from .config import COMMANDS, RunConfig, parse_config
from .tabular import TabularDataset, emit, ingest

PI = math.pi

#: Exit code per error class; the first matching entry wins.
EXIT_CODES = (
    (errors.UnitError, 3),
    (errors.SchemaError, 2),
    (errors.InvalidDecay, 4),
    (errors.NotConverged, 5),
    (errors.DegenerateData, 6),
    (errors.InfeasibleWindow, 7),
    (errors.GridMismatch, 8),
    (errors.RateExceeded, 9),
    (errors.UnknownRate, 10),
    (errors.NonPhysical, 11),
    (errors.IonPulseError, 12),
    (OSError, 14),
    (ValueError, 15),
    (KeyError, 15),
)
VIOLATIONS_FOUND = 13


class Outcome:
    """Files produced by a command plus its exit status."""

    def __init__(self):
        self.files: dict[str, str] = {}
        self.status = 0

    def table(self, name, columns, cfg, **meta):
        data = TabularDataset.from_columns(columns, _metadata(cfg, **meta))
        self.files[name] = emit(data)

    def summary(self, record):
        self.files["summary.json"] = _dump(record)


def _metadata(cfg: RunConfig, **extra):
    return {"command": cfg.command, "seed": cfg.seed, "config_hash": cfg.config_hash, **extra}


def _dump(record) -> str:
    return json.dumps(record, indent=2, sort_keys=True, default=_jsonable) + "\n"


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialise {type(x).__name__}")


def _atom(p) -> AtomModel:
    a = p["atom"]
    return AtomModel(gamma_total=a["gamma_per_ns"], p52=a["p52"], decay_model=a["decay_model"])


def _angle(p, key):
    v = p.get(key)
    return None if v is None else v * PI


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def _simulate(cfg: RunConfig, out: Outcome):
    p = cfg.params
    initial = {"S": projector(1), "P": projector(2), "D": projector(3),
               "SD": pure(ket(1) + ket(3))}[p["initial"]]
    ns = np.unique(np.linspace(0, p["n"], min(p["points"], p["n"] + 1)).round().astype(int))
    rho = propagate_train(initial, p["theta_pi"] * PI, 1.0 / p["rep_rate_ghz"], _atom(p), ns,
                          delta=p["delta_rad_per_ns"], delta_prime=p["delta_prime_rad_per_ns"],
                          theta_first=_angle(p, "theta_first_pi"),
                          dphi_first=p["dphi_first_pi"] * PI)
    pops = np.real(np.diagonal(rho, axis1=-2, axis2=-1))
    c, phi = contrast_phase_arrays(rho)
    out.table("results.tsv", {"n": ns, "p1": pops[:, 0], "p2": pops[:, 1], "p3": pops[:, 2],
                              "contrast_13": c, "phase_13_pi": phi / PI}, cfg)
    out.summary({"command": "simulate", "n": p["n"],
                 "final": {"p1": pops[-1, 0], "p2": pops[-1, 1], "p3": pops[-1, 2]}})


def _scan(cfg: RunConfig, out: Outcome):
    p = cfg.params
    f = p["rep_rate_ghz"]
    det = default_detuning_grid(f, p["detuning_points"])
    counts = sorted(set(p["pulse_counts"]))
    truth = dark_state_curves(p["theta_pi"] * PI, 1.0 / f, _atom(p),
                              det + p["detuning_offset_rad_per_ns"], counts)
    observed = synth_shots(truth, p["shots"], cfg.seed) / p["shots"]
    long_det = np.repeat(det, len(counts))
    long_n = np.tile(counts, det.size)
    out.table("results.tsv", {"detuning_rad_per_ns": long_det, "n": long_n,
                              "p_d_model": truth.ravel(), "p_d": observed.ravel()},
              cfg, shots=p["shots"])
    series = {"detuning_rad_per_ns": det}
    series.update({f"p_d_{n}": observed[:, k] for k, n in enumerate(counts)})
    series.update({f"p_d_model_{n}": truth[:, k] for k, n in enumerate(counts)})
    out.table("plot_pd_vs_detuning.tsv", series, cfg)
    out.summary({"command": "scan", "pulse_counts": counts, "shots": p["shots"],
                 "peak_p_d_model": {str(n): float(truth[:, k].max())
                                    for k, n in enumerate(counts)}})


def _burst(cfg: RunConfig, out: Outcome):
    p = cfg.params
    f = p["rep_rate_ghz"]
    atom = _atom(p)
    if atom.gamma_total > 0 and p["t_wait_ns"] < 10.0 / atom.gamma_total:
        raise ValueError("t_wait_ns is shorter than 10 excited-state lifetimes")
    det = default_detuning_grid(f, p["detuning_points"])
    truth = burst_map(p["theta_pi"] * PI, 1.0 / f, atom, det, p["n_max"], p["m"],
                      theta_first=_angle(p, "theta_first_pi"),
                      dphi_first=p["dphi_first_pi"] * PI)
    observed = synth_shots(truth, p["shots"], cfg.seed) / p["shots"]
    ns = np.arange(1, p["n_max"] + 1)
    out.table("results.tsv", {"detuning_rad_per_ns": np.repeat(det, ns.size),
                              "n": np.tile(ns, det.size), "p_d_model": truth.ravel(),
                              "p_d": observed.ravel()}, cfg, shots=p["shots"], m=p["m"])
    out.summary({"command": "burst", "m": p["m"], "n_max": p["n_max"],
                 "max_p_d_model": float(truth.max())})


def _ramsey(cfg: RunConfig, out: Outcome):
    p = cfg.params
    ns = np.arange(0, p["n_max"] + 1)
    rho = propagate_train(ramsey_initial_state(), p["theta_pi"] * PI, 1.0 / p["rep_rate_ghz"],
                          _atom(p), ns, delta=p["delta_rad_per_ns"],
                          delta_prime=p["delta_prime_rad_per_ns"])
    rho = rho.copy()
    rho[..., 2, 0] *= p["contrast_scale"]
    rho[..., 0, 2] *= p["contrast_scale"]
    phases = np.linspace(0.0, 4.0 * PI, p["analysis_phases"])
    fringe = ramsey_fringe(rho, phases)
    counts = synth_shots(fringe, p["shots"], cfg.seed)
    c, phi = contrast_phase_arrays(rho)
    out.table("results.tsv", {"n": np.repeat(ns, phases.size),
                              "phase_rad": np.tile(phases, ns.size),
                              "p3_model": fringe.ravel(), "counts": counts.ravel()},
              cfg, shots=p["shots"])
    out.table("plot_contrast_phase.tsv", {"n": ns, "contrast": c, "phase_pi": phi / PI}, cfg)
    out.summary({"command": "ramsey", "contrast": c, "phase_pi": phi / PI})


def _pivot(data: TabularDataset, row_key, col_key, value_key):
    r, c, v = data.column(row_key), data.column(col_key), data.column(value_key)
    rows, ri = np.unique(r, return_inverse=True)
    cols, ci = np.unique(c, return_inverse=True)
    grid = np.full((rows.size, cols.size), np.nan)
    grid[ri, ci] = v
    if np.isnan(grid).any() or len(v) != grid.size:
        raise ValueError(f"{value_key} does not form a complete {row_key} x {col_key} grid")
    return rows, cols, grid


def _fit(cfg: RunConfig, out: Outcome):
    p = cfg.params
    data = ingest(Path(p["data_file"]).read_text())
    proto = p["protocol"]
    if proto != "pi_scan" and p["rep_rate_ghz"] is None:
        raise errors.SchemaError("required for this protocol", "rep_rate_ghz")
    atom = _atom(p)
    shots = int(data.metadata.get("shots", p["shots"]))
    extra = {}
    if proto == "many_pulse":
        det, n, p_d = (data.column(k) for k in ("detuning_rad_per_ns", "n", "p_d"))
        subsets = [ScanSubset(det[n == k], int(k), p_d[n == k], shots) for k in np.unique(n)]
        result = fit_many_pulse_scan(subsets, p["rep_rate_ghz"], atom)
    elif proto == "single_pulse":
        det, ns, grid = _pivot(data, "detuning_rad_per_ns", "n", "p_d")
        m = int(data.metadata.get("m", p["m"]))
        result = fit_single_pulse_map(BurstMapData(det, ns.astype(int), grid, shots, m),
                                      p["rep_rate_ghz"], fit_first_area=p["fit_first_area"],
                                      atom=atom)
    elif proto == "ramsey":
        ns, phases, counts = _pivot(data, "n", "phase_rad", "counts")
        result = fit_ramsey(RamseyData(ns.astype(int), phases, counts, shots),
                            p["rep_rate_ghz"], atom)
        fr = result.info["fringes"]
        extra["excluded_phase_n"] = result.info["excluded_phase_n"]
        out.table("plot_contrast_phase.tsv", {"n": fr.ns, "contrast": fr.contrast,
                                              "contrast_err": fr.contrast_err,
                                              "phase_pi": fr.phase / PI,
                                              "phase_err_pi": fr.phase_err / PI}, cfg)
    else:
        sigma = data.column("sigma") if "sigma" in data.header else None
        result = fit_pi_scan(data.column("p_light_mw"), data.column("p_p"), sigma)
    summary = {"command": "fit", "protocol": proto, **result.summary(), **extra}
    angles = [k for k in result.names if k in ("theta", "theta_first", "dphi_first")]
    out.table("results.tsv", {
        "index": np.arange(len(result.names)), "value": result.values,
        "std_error": result.std_errors,
        "value_pi": [v / PI if k in angles else math.nan
                     for k, v in zip(result.names, result.values)]},
        cfg, parameters=result.names)
    out.summary(summary)


def _ellipse(cfg: RunConfig, out: Outcome):
    p = cfg.params
    if p["data_file"]:
        data = ingest(Path(p["data_file"]).read_text())
        sets = InterferogramSet(data.rows)
        names = data.header
    else:
        rng = np.random.default_rng(cfg.seed)
        dx = rng.uniform(0.0, p["wavelength_nm"], p["samples"])
        sets = synth_interferogram([v * PI for v in p["pulse_phases_pi"]], dx,
                                   p["wavelength_nm"], p["noise"], cfg.seed + 1)
        names = [f"peak_{i + 1}" for i in range(sets.n_peaks)]
        out.table("plot_areas.tsv", dict(zip(names, sets.areas.T)), cfg)
    results = pairwise_phases(sets, p["reference_peak"])
    out.table("results.tsv", {
        "peak": [r.pair[0] for r in results], "reference": [r.pair[1] for r in results],
        "dphi_abs_pi": [r.dphi_abs / PI for r in results],
        "residual_rms": [r.residual_rms for r in results],
        "degenerate": [float(r.degenerate) for r in results]}, cfg, peak_columns=names)
    out.summary({"command": "ellipse", "pairs": [
        {"peak": r.pair[0], "reference": r.pair[1], "dphi_abs_pi": r.dphi_abs / PI,
         "center": r.center, "amplitude": r.amplitude, "residual_rms": r.residual_rms,
         "degenerate": r.degenerate} for r in results]})


def _schedule(cfg: RunConfig, out: Outcome):
    p = cfg.params
    h = p["hardware"]
    hw = HardwareConstraints(h["base_rep_rate_ghz"], h["awg_sample_rate_gs"],
                             h["pockels_rise_fall_ns"], h["pockels_min_on_ns"],
                             h["pockels_max_rate_mhz"], h["max_edfa_dark_ns"],
                             h["idle_rep_rate_ghz"])
    if p["waveform_file"]:
        schedule = import_waveforms(Path(p["waveform_file"]).read_text(), hw)
    else:
        if p["total_duration_ns"] is None:
            raise errors.SchemaError("required unless waveform_file is given",
                                     "total_duration_ns")
        schedule = compile(SequenceRequest(tuple(p["payload_slots"]), p["total_duration_ns"]),
                           hw)
    if p["transient_rep_rate_ghz"] is not None:
        schedule = switch_on_transient(schedule, p["transient_rep_rate_ghz"])
    violations = validate(schedule, hw)
    em = schedule.emitted
    out.table("results.tsv", {
        "time_ns": [e.time for e in em], "slot": [e.slot for e in em],
        "payload": [float(e.kind == "payload") for e in em],
        "relative_area": [e.relative_area for e in em],
        "relative_phase_pi": [e.relative_phase / PI for e in em]}, cfg)
    out.files["waveforms.json"] = export_waveforms(schedule)
    out.summary({"command": "schedule",
                 "windows_ns": [[r / hw.awg_sample_rate, f / hw.awg_sample_rate]
                                for r, f in schedule.windows],
                 "violations": [v._asdict() for v in violations]})
    if violations:
        out.status = VIOLATIONS_FOUND


def _power(cfg: RunConfig, out: Outcome):
    p = cfg.params
    rows = [power_chain_output(PowerChain(pf, p["rep_rate_ghz"],
                                          extinction_in_db=p["extinction_in_db"]))
            for pf in p["p_fundamental_w"]]
    out.table("results.tsv", {"p_fundamental_w": p["p_fundamental_w"],
                              "p_786_w": [r["p_786"] for r in rows],
                              "p_393_w": [r["p_393"] for r in rows]}, cfg)
    out.summary({"command": "power", "rep_rate_ghz": p["rep_rate_ghz"],
                 "extinction_out_db": rows[0]["extinction_out_db"],
                 "extinction_measured_db": rows[0]["extinction_measured_db"],
                 "points": rows})


HANDLERS = {"simulate": _simulate, "scan": _scan, "burst": _burst, "ramsey": _ramsey,
            "fit": _fit, "ellipse": _ellipse, "schedule": _schedule, "power": _power}


# --------------------------------------------------------------------------
# running
# --------------------------------------------------------------------------

def _write_atomic(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def exit_code(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def run(config: RunConfig) -> int:
    """Execute ``config`` and write its outputs; returns the process exit status."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stale = out_dir / "error.json"
    if stale.exists():
        stale.unlink()
    outcome = Outcome()
    written: list[Path] = []
    try:
        HANDLERS[config.command](config, outcome)
        for name, text in outcome.files.items():
            path = out_dir / name
            _write_atomic(path, text)
            written.append(path)
        return outcome.status
    except Exception as exc:  # every failure is reported, never half-written
        for path in written:
            path.unlink(missing_ok=True)
        report = {"command": config.command, "error": type(exc).__name__,
                  "message": str(exc), "exit_code": exit_code(exc)}
        _write_atomic(stale, _dump(report))
        return exit_code(exc)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="ionpulse",
        description="Simulate, fit and schedule pulsed excitation of a three-level ion.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="YAML or JSON config document")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", help="output directory (overrides output_dir)")
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(Path(args.config).read_text(), command=args.command)
    except (errors.SchemaError, OSError) as exc:
        print(f"ionpulse: {exc}", file=sys.stderr)
        return exit_code(exc)
    if args.seed is not None:
        if args.seed < 0:
            print("ionpulse: --seed must be >= 0", file=sys.stderr)
            return 2
        cfg = replace(cfg, seed=args.seed)
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    status = run(cfg)
    if status and status != VIOLATIONS_FOUND:
        report = json.loads((Path(cfg.output_dir) / "error.json").read_text())
        print(f"ionpulse: {report['error']}: {report['message']}", file=sys.stderr)
    elif status:
        print("ionpulse: schedule violates hardware limits; see summary.json", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
