"""Pulse-picking schedules for the dual-gate (pulse picker + Pockels cell) scheme.

The fast pulse picker passes or blocks single pulses of the base-rate train
before the power amplifier; the slow Pockels cell after the amplifier decides
which of the passed pulses reach the ion. Pulses passed while the cell is
fully closed are idle pulses that only keep the amplifier seeded. All times
are handled as integer AWG sample indices internally.

The module also holds the two-stage frequency-doubling power model.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from typing import Mapping, NamedTuple

import numpy as np

from .errors import GridMismatch, InfeasibleWindow, NonPhysical, RateExceeded, UnknownRate


@dataclass(frozen=True)
class HardwareConstraints:
    """Timing limits of the picker, Pockels cell and amplifier (GHz, GS/s, ns, MHz)."""

    base_rep_rate: float = 5.0
    awg_sample_rate: float = 25.0
    pockels_rise_fall: float = 7.0
    pockels_min_on: float = 35.0
    pockels_max_rate: float = 10.0
    max_edfa_dark: float = 20.0
    idle_rep_rate: float = 1.25

    def __post_init__(self):
        for name in ("base_rep_rate", "awg_sample_rate", "pockels_rise_fall",
                     "pockels_min_on", "pockels_max_rate", "max_edfa_dark", "idle_rep_rate"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    def _ratio(self, num, den, what):
        r = num / den
        if abs(r - round(r)) > 1e-9 or round(r) < 1:
            raise GridMismatch(f"{what} is not an integer ({r:g})")
        return int(round(r))

    @property
    def samples_per_slot(self) -> int:
        return self._ratio(self.awg_sample_rate, self.base_rep_rate,
                           "AWG samples per base-rate slot")

    @property
    def idle_stride(self) -> int:
        """Base-rate slots between consecutive idle pulses."""
        return self._ratio(self.base_rep_rate, self.idle_rep_rate,
                           "base-rate slots per idle period")

    def samples(self, t_ns: float, what: str = "time") -> int:
        """Exact sample count for a duration in ns; GridMismatch when off grid."""
        s = t_ns * self.awg_sample_rate
        if abs(s - round(s)) > 1e-6:
            raise GridMismatch(f"{what} {t_ns} ns is not on the {1 / self.awg_sample_rate} ns grid")
        return int(round(s))

    def samples_up(self, t_ns: float) -> int:
        """Limit in samples, rounded towards the safe side (up)."""
        return int(math.ceil(t_ns * self.awg_sample_rate - 1e-6))

    def samples_down(self, t_ns: float) -> int:
        return int(math.floor(t_ns * self.awg_sample_rate + 1e-6))


@dataclass(frozen=True)
class SequenceRequest:
    """Slots (base-rate pulse indices) to deliver within ``total_duration`` ns."""

    payload: tuple
    total_duration: float

    def __post_init__(self):
        slots = tuple(int(s) for s in self.payload)
        object.__setattr__(self, "payload", slots)
        if any(b <= a for a, b in zip(slots, slots[1:])):
            raise ValueError("payload slot indices must be strictly increasing")
        if slots and slots[0] < 0:
            raise ValueError("payload slot indices must be >= 0")
        if not self.total_duration > 0:
            raise ValueError("total_duration must be > 0")


class EmittedPulse(NamedTuple):
    """A pulse passed by the picker; ``kind`` is "payload" or "idle"."""

    time: float
    slot: int
    kind: str
    relative_area: float = 1.0
    relative_phase: float = 0.0


@dataclass(frozen=True)
class PulseSchedule:
    """Boolean gate waveforms on the AWG grid plus the pulses they emit."""

    picker_gate: np.ndarray
    pockels_gate: np.ndarray
    emitted: tuple
    sample_rate_gs: float = 25.0
    base_rep_rate_ghz: float = 5.0

    def __post_init__(self):
        for name in ("picker_gate", "pockels_gate"):
            arr = np.array(getattr(self, name), dtype=bool)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "emitted", tuple(EmittedPulse(*p) for p in self.emitted))

    @property
    def n_samples(self) -> int:
        return self.picker_gate.size

    @property
    def payload(self) -> tuple:
        return tuple(p for p in self.emitted if p.kind == "payload")

    @property
    def windows(self) -> list[tuple[int, int]]:
        """Pockels drive windows as (start, stop) sample indices."""
        return _runs(self.pockels_gate)


class Violation(NamedTuple):
    name: str
    start_ns: float
    end_ns: float
    message: str


def _runs(gate) -> list[tuple[int, int]]:
    g = np.concatenate([[False], np.asarray(gate, bool), [False]]).astype(np.int8)
    d = np.diff(g)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


class _Limits(NamedTuple):
    sps: int
    idle: int        # samples between idle pulses
    rise: int
    min_on: int
    max_dark: int
    spacing: int     # minimum start-to-start spacing of Pockels windows


def _limits(hw: HardwareConstraints) -> _Limits:
    sps = hw.samples_per_slot
    return _Limits(sps, sps * hw.idle_stride, hw.samples_up(hw.pockels_rise_fall),
                   hw.samples_up(hw.pockels_min_on), hw.samples_down(hw.max_edfa_dark),
                   hw.samples_up(1e3 / hw.pockels_max_rate))


def _place_window(first: int, last: int, lim: _Limits, total: int) -> tuple[int, int]:
    """Pockels (rise start, fall start) for a payload spanning samples first..last.

    The window has the minimum on-time that covers the payload; among the
    openings that keep both amplifier dark gaps within the limit, the one with
    the most symmetric gaps wins, ties going to the earlier opening.
    """
    starts = np.arange(max(first - lim.max_dark + 1, 0), first - lim.rise + 1)
    if starts.size == 0:
        raise InfeasibleWindow(
            f"payload at sample {first} leaves no room for the Pockels rise")
    stops = np.maximum(last, starts + lim.min_on)
    last_idle = ((starts - 1) // lim.idle) * lim.idle
    next_idle = -((-(stops + lim.rise)) // lim.idle) * lim.idle
    before, after = first - last_idle, next_idle - last
    ok = (before <= lim.max_dark) & (after <= lim.max_dark) & (stops + lim.rise <= total)
    if not ok.any():
        need = int(np.min(np.maximum(before, after)))
        raise InfeasibleWindow(
            f"payload samples {first}..{last}: the shortest achievable amplifier dark "
            f"gap is {need} samples, limit {lim.max_dark}")
    cand = np.flatnonzero(ok)
    best = cand[np.argmin(np.abs(before[cand] - after[cand]))]
    return int(starts[best]), int(stops[best])


def compile(request: SequenceRequest, hw: HardwareConstraints | None = None) -> PulseSchedule:
    """Gate waveforms that deliver ``request.payload`` and keep the amplifier seeded.

    Payload pulses closer than the amplifier dark limit share one Pockels
    window. Idle pulses on the idle-rate grid are passed whenever the cell is
    fully closed.

    Raises
    ------
    GridMismatch
        If the duration or the hardware rates do not fit the AWG grid.
    InfeasibleWindow
        If a window cannot satisfy the on-time and dark-time limits.
    RateExceeded
        If two windows open faster than the Pockels driver allows.

    Examples
    --------
    >>> s = compile(SequenceRequest(tuple(range(500, 600)), 400.0))
    >>> len(s.windows), len(s.payload)
    (1, 100)
    """
    hw = hw or HardwareConstraints()
    lim = _limits(hw)
    total = hw.samples(request.total_duration, "total_duration")
    slots = np.asarray(request.payload, int)
    if slots.size and slots[-1] * lim.sps >= total:
        raise ValueError("payload does not fit in total_duration")

    windows = []
    if slots.size:
        pos = slots * lim.sps
        breaks = np.flatnonzero(np.diff(pos) > lim.max_dark) + 1
        for group in np.split(pos, breaks):
            windows.append(_place_window(int(group[0]), int(group[-1]), lim, total))
    for (r1, f1), (r2, _) in zip(windows, windows[1:]):
        if r2 - r1 < lim.spacing:
            raise RateExceeded(
                f"Pockels windows open {(r2 - r1) / hw.awg_sample_rate:g} ns apart; "
                f"minimum {lim.spacing / hw.awg_sample_rate:g} ns")
        if r2 < f1 + lim.rise:
            raise InfeasibleWindow("consecutive Pockels windows overlap")

    pockels = np.zeros(total, bool)
    for r, f in windows:
        pockels[r:f] = True
    n_slots = -(-total // lim.sps)
    slot_pos = np.arange(n_slots) * lim.sps
    closed = np.ones(n_slots, bool)
    for r, f in windows:
        closed &= (slot_pos < r) | (slot_pos >= f + lim.rise)
    idle = closed & (np.arange(n_slots) % hw.idle_stride == 0)
    is_payload = np.zeros(n_slots, bool)
    is_payload[slots] = True
    passed = idle | is_payload

    picker = np.repeat(passed, lim.sps)[:total]
    emitted = tuple(EmittedPulse(k / hw.base_rep_rate, int(k),
                                 "payload" if is_payload[k] else "idle")
                    for k in np.flatnonzero(passed))
    schedule = PulseSchedule(picker, pockels, emitted, hw.awg_sample_rate, hw.base_rep_rate)
    report = validate(schedule, hw)
    if report:
        raise InfeasibleWindow(f"{report[0].name}: {report[0].message}")
    return schedule


def validate(schedule: PulseSchedule, hw: HardwareConstraints | None = None) -> list[Violation]:
    """Audit a schedule against the hardware limits; an empty list means valid.

    Violation names: GridMismatch, MinOnViolated, RateExceeded,
    WindowTruncated, PartialTransmission, MaxDarkExceeded, EmittedMismatch.
    Outside the sequence the amplifier is assumed to be seeded on the idle grid.
    """
    hw = hw or HardwareConstraints()
    lim = _limits(hw)
    rate = hw.awg_sample_rate
    out: list[Violation] = []

    def add(name, s0, s1, msg):
        out.append(Violation(name, s0 / rate, s1 / rate, msg))

    picker, pockels = schedule.picker_gate, schedule.pockels_gate
    total = picker.size
    if pockels.size != total:
        add("GridMismatch", 0, total, "picker and Pockels gates differ in length")
        return out
    if (not math.isclose(schedule.sample_rate_gs, hw.awg_sample_rate)
            or not math.isclose(schedule.base_rep_rate_ghz, hw.base_rep_rate)):
        add("GridMismatch", 0, total, "schedule was built for other hardware rates")

    n_slots = -(-total // lim.sps)
    padded = np.concatenate([picker, np.repeat(picker[-1:], n_slots * lim.sps - total)])
    per_slot = padded.reshape(n_slots, lim.sps)
    for k in np.flatnonzero(per_slot.any(1) != per_slot.all(1)):
        add("GridMismatch", k * lim.sps, (k + 1) * lim.sps,
            f"picker edge inside slot {k}")
    passed = np.flatnonzero(per_slot[:, 0])
    pos = passed * lim.sps

    windows = schedule.windows
    for r, f in windows:
        if f - r < lim.min_on:
            add("MinOnViolated", r, f,
                f"on-time {(f - r) / rate:g} ns below {hw.pockels_min_on:g} ns")
        if f + lim.rise > total:
            add("WindowTruncated", r, total, "cell not closed before the sequence ends")
    for (r1, _), (r2, _) in zip(windows, windows[1:]):
        if r2 - r1 < lim.spacing:
            add("RateExceeded", r1, r2,
                f"windows {(r2 - r1) / rate:g} ns apart exceed {hw.pockels_max_rate:g} MHz")

    kind = np.full(pos.size, "idle", dtype=object)
    for r, f in windows:
        on = (pos >= r + lim.rise) & (pos <= f)
        kind[on] = "payload"
        for p in pos[((pos >= r) & (pos < r + lim.rise)) | ((pos > f) & (pos < f + lim.rise))]:
            add("PartialTransmission", p, p + lim.sps,
                "pulse passed while the Pockels cell is switching")

    first_virtual = -lim.idle
    last_virtual = -(-total // lim.idle) * lim.idle
    seq = np.concatenate([[first_virtual], pos, [last_virtual]])
    gaps = np.diff(seq)
    for i in np.flatnonzero(gaps > lim.max_dark):
        add("MaxDarkExceeded", int(seq[i]), int(seq[i + 1]),
            f"amplifier dark for {gaps[i] / rate:g} ns, limit {hw.max_edfa_dark:g} ns")

    expected = [(int(k), str(t)) for k, t in zip(passed, kind)]
    declared = [(p.slot, p.kind) for p in schedule.emitted]
    times_ok = all(math.isclose(p.time, p.slot / hw.base_rep_rate, abs_tol=1e-9)
                   for p in schedule.emitted)
    if expected != declared or not times_ok:
        add("EmittedMismatch", 0, total, "emitted pulse list does not match the gates")
    return out


# --------------------------------------------------------------------------
# switch-on transients
# --------------------------------------------------------------------------

class Anomaly(NamedTuple):
    """First-pulse effects after a dark gap.

    ``first_area`` scales the first pulse, ``second_area`` the second; the
    first pulse also gets ``first_phase`` (rad) relative to later pulses.
    """

    first_area: float = 1.0
    second_area: float = 1.0
    first_phase: float = 0.0


#: Default first-pulse anomalies keyed by repetition rate (GHz).
ANOMALY_TABLE: dict = {
    5.0: Anomaly(3.0, 1.0, 1.282 * math.pi),
    2.5: Anomaly(1.0, 0.9, 0.361 * math.pi),
    5.0 / 3.0: Anomaly(1.0, 1.0, 0.088 * math.pi),
    1.25: Anomaly(1.0, 1.0, 0.051 * math.pi),
}

SOA_MEMORY_NS = 0.5
RAMP_GAIN = 0.10
RAMP_NS = 2.0


def _lookup(rep_rate, table):
    for rate, entry in table.items():
        if math.isclose(rate, rep_rate, rel_tol=1e-9):
            return entry
    raise UnknownRate(f"no switch-on anomaly entry for {rep_rate:g} GHz")


def switch_on_transient(schedule: PulseSchedule, rep_rate: float,
                        table: Mapping[float, Anomaly] | None = None) -> PulseSchedule:
    """Annotate payload pulses with the amplifier switch-on anomaly.

    A dark gap is a pause longer than both the SOA memory (500 ps) and the
    nominal period ``1/rep_rate``, counting every pulse the picker passes. The
    first payload pulse after such a gap gets the table's area and phase, the
    second its area factor, and pulses from the second one on follow a +10 %
    linear area ramp over 2 ns. Pulses before the first dark gap have no
    known history and carry no anomaly, so a continuous train is unchanged.
    """
    entry = _lookup(rep_rate, table if table is not None else ANOMALY_TABLE)
    threshold = max(SOA_MEMORY_NS, 1.0 / rep_rate) + 1e-9
    out = []
    prev_time = None
    steady = True            # no dark gap seen yet: history unknown, no anomaly
    burst_index, burst_second = 0, None
    for p in schedule.emitted:
        if prev_time is not None and p.time - prev_time > threshold:
            steady, burst_index, burst_second = False, 0, None
        else:
            burst_index += 1
        prev_time = p.time
        if p.kind != "payload" or steady:
            out.append(p._replace(relative_area=1.0, relative_phase=0.0))
            continue
        area, phase = 1.0, 0.0
        if burst_index == 0:
            area, phase = entry.first_area, entry.first_phase
        else:
            if burst_second is None:
                burst_second = p.time
                area = entry.second_area
            ramp = min(p.time - burst_second, RAMP_NS) / RAMP_NS
            area *= 1.0 + RAMP_GAIN * ramp
        out.append(p._replace(relative_area=float(area), relative_phase=float(phase)))
    return replace(schedule, emitted=tuple(out))


# --------------------------------------------------------------------------
# waveform export
# --------------------------------------------------------------------------

def _rle(gate) -> list[dict]:
    gate = np.asarray(gate, bool)
    if gate.size == 0:
        return []
    edges = np.flatnonzero(np.diff(gate.astype(np.int8))) + 1
    starts = np.concatenate([[0], edges])
    ends = np.concatenate([edges, [gate.size]])
    return [{"start_sample": int(s), "length": int(e - s), "level": int(gate[s])}
            for s, e in zip(starts, ends)]


def _unrle(segments, what) -> np.ndarray:
    pos, parts = 0, []
    for seg in segments:
        if list(seg) != ["start_sample", "length", "level"]:
            raise ValueError(f"{what}: segment fields must be start_sample, length, level")
        if seg["start_sample"] != pos or seg["length"] < 1 or seg["level"] not in (0, 1):
            raise ValueError(f"{what}: segments must be contiguous with positive length")
        parts.append(np.full(seg["length"], bool(seg["level"])))
        pos += seg["length"]
    return np.concatenate(parts) if parts else np.zeros(0, bool)


def export_waveforms(schedule: PulseSchedule) -> str:
    """Run-length-encoded gate waveforms as JSON with a fixed field order."""
    doc = {
        "header": {"sample_rate_gs": schedule.sample_rate_gs,
                   "base_rep_rate_ghz": schedule.base_rep_rate_ghz},
        "channels": {"picker": _rle(schedule.picker_gate),
                     "pockels": _rle(schedule.pockels_gate)},
    }
    return json.dumps(doc, indent=1) + "\n"


def import_waveforms(text: str, hw: HardwareConstraints | None = None) -> PulseSchedule:
    """Rebuild a schedule from :func:`export_waveforms` output.

    Emitted pulses are derived from the gates: pulses passed on the fully
    open Pockels plateau are payload, all others idle.
    """
    doc = json.loads(text)
    if list(doc) != ["header", "channels"] or list(doc["channels"]) != ["picker", "pockels"]:
        raise ValueError("waveform document must hold header and picker/pockels channels")
    head = doc["header"]
    hw = hw or HardwareConstraints(base_rep_rate=head["base_rep_rate_ghz"],
                                   awg_sample_rate=head["sample_rate_gs"])
    picker = _unrle(doc["channels"]["picker"], "picker")
    pockels = _unrle(doc["channels"]["pockels"], "pockels")
    lim = _limits(hw)
    slots = np.flatnonzero(picker[::lim.sps])
    pos = slots * lim.sps
    is_payload = np.zeros(slots.size, bool)
    for r, f in _runs(pockels):
        is_payload |= (pos >= r + lim.rise) & (pos <= f)
    emitted = tuple(EmittedPulse(k / hw.base_rep_rate, int(k), "payload" if pl else "idle")
                    for k, pl in zip(slots, is_payload))
    return PulseSchedule(picker, pockels, emitted, head["sample_rate_gs"],
                         head["base_rep_rate_ghz"])


# --------------------------------------------------------------------------
# power chain
# --------------------------------------------------------------------------

#: Calibration anchors: (rep rate GHz, fundamental W, 786 nm W, 393 nm W).
POWER_ANCHORS = ((5.0, 2.8, 0.77, 0.025), (1.25, 2.8, 1.18, 0.110))
#: Measured extinction of the Pockels cell plus doubling crystal (dB).
MEASURED_CHAIN_EXTINCTION_DB = 56.0


class PowerCalibration(NamedTuple):
    p_ref: float
    rate_ref: float
    eff1_ref: float
    eff2_ref: float
    rate_exp1: float
    rate_exp2: float


def calibrate_power_chain(anchors=POWER_ANCHORS) -> PowerCalibration:
    """Reference efficiencies and rate exponents from two anchors at one power.

    Efficiency of each stage is eff_ref (P_in / P_in,ref) (f_ref / f)^beta;
    the first anchor is the reference.
    """
    (f0, p0, a0, b0), (f1, p1, a1, b1) = anchors
    if not math.isclose(p0, p1):
        raise ValueError("anchors must share the fundamental power")
    eff1, eff2 = a0 / p0, b0 / a0
    ln = math.log(f0 / f1)
    beta1 = math.log((a1 / p1) / eff1) / ln
    beta2 = math.log((b1 / a1) / (eff2 * a1 / a0)) / ln
    return PowerCalibration(p0, f0, eff1, eff2, beta1, beta2)


_CAL = calibrate_power_chain()


@dataclass(frozen=True)
class PowerChain:
    """Two frequency-doubling stages fed by ``p_fundamental`` W at ``rep_rate`` GHz."""

    p_fundamental: float
    rep_rate: float = 5.0
    eff1_ref: float = _CAL.eff1_ref
    eff2_ref: float = _CAL.eff2_ref
    extinction_in_db: float = 30.0
    p_ref: float = _CAL.p_ref
    rate_ref: float = _CAL.rate_ref
    rate_exp1: float = _CAL.rate_exp1
    rate_exp2: float = _CAL.rate_exp2

    def __post_init__(self):
        if not (0 < self.eff1_ref < 1 and 0 < self.eff2_ref < 1):
            raise ValueError("reference efficiencies must lie in (0, 1)")
        if not (self.rep_rate > 0 and self.p_ref > 0 and self.rate_ref > 0):
            raise ValueError("rep_rate, p_ref and rate_ref must be > 0")


def power_chain_output(chain: PowerChain) -> dict:
    """Second- and fourth-harmonic powers (W) and the chain extinction (dB).

    Each stage converts with an efficiency proportional to its input power
    (low depletion), so p_393 grows as the fourth power of the fundamental.
    The modeled extinction doubles the input value; the measured chain value
    is reported next to it.

    Raises
    ------
    NonPhysical
        For negative input power or a stage converting more than its input.
    """
    p = chain.p_fundamental
    if p < 0:
        raise NonPhysical(f"fundamental power {p} W is negative")
    rate_factor = chain.rate_ref / chain.rep_rate
    eff1 = chain.eff1_ref * (p / chain.p_ref) * rate_factor ** chain.rate_exp1
    p786 = eff1 * p
    # second stage referenced to the 786 nm power at the reference point
    p786_ref = chain.eff1_ref * chain.p_ref
    eff2 = chain.eff2_ref * (p786 / p786_ref) * rate_factor ** chain.rate_exp2
    p393 = eff2 * p786
    if eff1 > 1 or eff2 > 1:
        raise NonPhysical("conversion efficiency above 1: outside the low-depletion model")
    return {"p_786": p786, "p_393": p393,
            "eff_1": eff1, "eff_2": eff2,
            "extinction_out_db": 2.0 * chain.extinction_in_db,
            "extinction_measured_db": MEASURED_CHAIN_EXTINCTION_DB}
