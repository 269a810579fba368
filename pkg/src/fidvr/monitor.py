"""Measurement-side FIDVR analytics on μPMU frames.

Area admittance ``y = i / v`` at each root, detection by the jump in load
susceptance, and closed-form thermal-relay recovery-time estimates driven by
the load-point voltage behind the area's equivalent feeder.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

log = logging.getLogger(__name__)

V_USABLE_MIN = 0.05


class NotEnoughDataError(ValueError):
    """Less history than the detector's baseline window."""


class NeverTripsError(ValueError):
    """Relay heating at this voltage never reaches the first trip threshold."""


class NoRecoveryEstimateError(ValueError):
    """Trip-completion time is undefined (non-positive denominator)."""


@dataclass(frozen=True)
class MonitorConfig:
    jump_ratio: float = 2.0
    pre_window: float = 0.5
    post_window: float = 0.1
    v_detect_max: float = 0.9
    v_fault: float = 0.5
    v_l_window: float = 0.5
    v_recovery: float = 0.95
    knee_drop: float = 0.95


@dataclass
class AreaAdmittanceSeries:
    t: np.ndarray
    y: np.ndarray
    v_load: np.ndarray
    v_root: np.ndarray
    usable: np.ndarray

    @property
    def b(self) -> np.ndarray:
        """Susceptance, inductive positive (``y = G - jB``)."""
        return -self.y.imag


@dataclass(frozen=True)
class FidvrEvent:
    t_detect: float
    areas: tuple
    pre_b: dict
    post_b: dict
    area_t_detect: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AreaRecovery:
    t1: float
    t2: float
    t_total: float
    v_l: float
    v_recovery: float


@dataclass
class RecoveryEstimate:
    areas: dict
    flags: list
    knee_times: dict

    @property
    def t_total(self) -> float | None:
        vals = [a.t_total for a in self.areas.values()]
        return max(vals) if vals else None


# --------------------------------------------------------------------------
# measurement primitives


def compute_load_point_voltage(v, i, feeder_z) -> complex | np.ndarray:
    """Voltage behind the equivalent feeder: ``V_L = V - I z_f``."""
    return v - i * feeder_z


def compute_area_admittance(t, v, i, feeder_z: complex = 0j) -> AreaAdmittanceSeries:
    """Per-sample admittance seen at an area root.

    Samples with ``|v| <= 0.05`` give no admittance (NaN) and are flagged
    unusable.
    """
    t = np.asarray(t, dtype=float)
    v = np.asarray(v, dtype=complex)
    i = np.asarray(i, dtype=complex)
    usable = np.abs(v) > V_USABLE_MIN
    y = np.full(v.shape, np.nan + 1j * np.nan)
    np.divide(i, v, out=y, where=usable)
    vl = np.abs(compute_load_point_voltage(v, i, feeder_z))
    return AreaAdmittanceSeries(t, y, vl, np.abs(v), usable)


def frames_by_area(frames) -> dict:
    """Group frames into per-area ``(t, v, i)`` arrays, preserving order of appearance."""
    buckets: dict = {}
    for f in frames:
        buckets.setdefault(f.area, ([], [], []))
        b = buckets[f.area]
        b[0].append(f.t)
        b[1].append(f.v)
        b[2].append(f.i)
    return {a: (np.array(t), np.array(v, dtype=complex), np.array(i, dtype=complex))
            for a, (t, v, i) in buckets.items()}


# --------------------------------------------------------------------------
# detection


def _trailing_median(t, x, window):
    """Median of ``x`` over samples with time in ``(t_k - window, t_k]``."""
    n = len(t)
    if n == 0:
        return np.zeros(0)
    start = np.searchsorted(t, t - window, side="right")
    width = int(np.max(np.arange(n) - start + 1))
    padded = np.concatenate([np.full(width - 1, np.nan), x])
    win = sliding_window_view(padded, width)
    # mask samples older than the window
    offs = np.arange(width)[None, :] - (width - 1)
    idx = np.arange(n)[:, None] + offs
    win = np.where(idx >= start[:, None], win, np.nan)
    return np.nanmedian(win, axis=1)


def _detect_area(s: AreaAdmittanceSeries, cfg: MonitorConfig):
    t0 = s.t[0]
    if s.t[-1] - t0 < cfg.pre_window:
        raise NotEnoughDataError(f"need {cfg.pre_window} s of history, have {s.t[-1] - t0:.3f} s")
    pre = (s.t < t0 + cfg.pre_window) & s.usable
    if not pre.any():
        raise NotEnoughDataError("no usable samples in the baseline window")
    pre_b = float(np.median(s.b[pre]))
    ok = s.usable & (s.v_root >= cfg.v_fault)
    ok[pre] = False
    tu, bu = s.t[ok], s.b[ok]
    if len(tu) == 0:
        return None, pre_b, None
    med = _trailing_median(tu, bu, cfg.post_window)
    hit = (med >= cfg.jump_ratio * pre_b) & (s.v_root[ok] < cfg.v_detect_max)
    if pre_b <= 0:
        hit &= med > 0
    k = np.flatnonzero(hit)
    if len(k) == 0:
        return None, pre_b, None
    return float(tu[k[0]]), pre_b, float(med[k[0]])


def detect_fidvr(series: dict, cfg: MonitorConfig = MonitorConfig()) -> FidvrEvent | None:
    """Susceptance-jump detector over all area channels.

    An area triggers at the first sample, outside the baseline window and
    the fault-on sag, whose trailing-window median susceptance is at least
    ``jump_ratio`` times the baseline median while its root voltage is
    below ``v_detect_max``. The event time is the earliest area trigger.
    """
    if isinstance(series, AreaAdmittanceSeries):
        series = {"area": series}
    times, pre_b, post_b = {}, {}, {}
    for aid, s in series.items():
        td, pb, mb = _detect_area(s, cfg)
        pre_b[aid] = pb
        if td is not None:
            times[aid] = td
            post_b[aid] = mb
    if not times:
        return None
    areas = tuple(a for a in series if a in times)
    return FidvrEvent(min(times.values()), areas, {a: pre_b[a] for a in areas}, post_b, times)


# --------------------------------------------------------------------------
# closed-form recovery times


def estimate_t1(v_l: float, params) -> float:
    """Time for the relay temperature to climb from zero to ``theta1``."""
    p_th = v_l * v_l * params.g_stall
    if p_th <= params.theta1:
        raise NeverTripsError(f"V_L^2 G_stall = {p_th:.4f} does not exceed theta1 = {params.theta1:.4f}")
    return -params.t_th * math.log(1.0 - params.theta1 / p_th)


def estimate_t2(v_l: float, v_recovery: float, params) -> float:
    """Approximate duration of the trip band from ``theta1`` to ``theta2``."""
    den = (v_l * v_l + v_recovery * v_recovery) * params.g_stall - params.theta1 - params.theta2
    if den <= 0:
        raise NoRecoveryEstimateError(f"t2 denominator {den:.4g} is not positive")
    return 2.0 * params.t_th * (params.theta2 - params.theta1) / den


def dt1_dv(v_l: float, params) -> float:
    """Derivative of :func:`estimate_t1` with respect to ``v_l``."""
    a = params.theta1 / params.g_stall
    if v_l * v_l <= a:
        raise NeverTripsError("derivative undefined where the relay never trips")
    return -params.t_th * (2.0 * a / v_l ** 3) / (1.0 - a / (v_l * v_l))


def dt2_dv(v_l: float, v_recovery: float, params) -> float:
    """Derivative of :func:`estimate_t2` with respect to ``v_l``."""
    den = (v_l * v_l + v_recovery * v_recovery) * params.g_stall - params.theta1 - params.theta2
    if den <= 0:
        raise NoRecoveryEstimateError(f"t2 denominator {den:.4g} is not positive")
    return -2.0 * params.t_th * (params.theta2 - params.theta1) * 2.0 * v_l * params.g_stall / den ** 2


def _knee_time(s: AreaAdmittanceSeries, t_detect: float, cfg: MonitorConfig) -> float | None:
    """Time after detection at which the susceptance leaves its flat stalled level."""
    after = s.usable & (s.t >= t_detect)
    flat = after & (s.t < t_detect + cfg.v_l_window)
    if not flat.any():
        return None
    level = np.median(s.b[flat])
    drop = after & (s.b < cfg.knee_drop * level)
    k = np.flatnonzero(drop)
    return float(s.t[k[0]] - t_detect) if len(k) else None


def estimate_recovery(event: FidvrEvent, series: dict, params: dict,
                      cfg: MonitorConfig = MonitorConfig()) -> RecoveryEstimate:
    """Per-area ``t1 + t2`` for every area in the event.

    ``params`` maps area id to an object with ``g_stall``, ``t_th``,
    ``theta1`` and ``theta2`` (a :class:`Motor1PhaseParameters`). ``v_l`` is
    the median load-point voltage over the window following the area's own
    trigger. Areas whose estimate is undefined are reported in ``flags``.
    """
    out, flags, knees = {}, [], {}
    for aid in event.areas:
        s = series[aid]
        td = event.area_t_detect.get(aid, event.t_detect)
        win = s.usable & (s.v_root >= cfg.v_fault) & (s.t >= td) & (s.t < td + cfg.v_l_window)
        if not win.any():
            flags.append({"area": aid, "flag": "no_samples"})
            continue
        v_l = float(np.median(s.v_load[win]))
        p = params[aid]
        try:
            t1 = estimate_t1(v_l, p)
        except NeverTripsError as exc:
            flags.append({"area": aid, "flag": "never_trips", "detail": str(exc)})
            continue
        try:
            t2 = estimate_t2(v_l, cfg.v_recovery, p)
        except NoRecoveryEstimateError as exc:
            flags.append({"area": aid, "flag": "no_recovery_estimate", "detail": str(exc)})
            continue
        out[aid] = AreaRecovery(t1, t2, t1 + t2, v_l, cfg.v_recovery)
        knees[aid] = _knee_time(s, td, cfg)
        log.info("area %s: t1=%.2f s, susceptance knee at %s s", aid, t1, knees[aid])
    if not out:
        flags.append({"area": None, "flag": "no_thermal_recovery_predicted"})
    return RecoveryEstimate(out, flags, knees)


# --------------------------------------------------------------------------
# pipeline


def build_series(frames, feeder_z: dict) -> dict:
    grouped = frames_by_area(frames)
    return {a: compute_area_admittance(t, v, i, feeder_z.get(a, 0j)) for a, (t, v, i) in grouped.items()}


def monitor_report(frames, submodels: dict, cfg: MonitorConfig = MonitorConfig()) -> dict:
    """Detection plus estimates as a JSON-ready report.

    ``submodels`` maps area id to an object with ``feeder_z`` and ``motor1``.
    """
    series = build_series(frames, {a: m.feeder_z for a, m in submodels.items()})
    event = detect_fidvr(series, cfg)
    if event is None:
        return {"event": None, "estimates": {}, "t_total": None, "flags": []}
    known = [a for a in event.areas if a in submodels]
    flags = [{"area": a, "flag": "no_submodel"} for a in event.areas if a not in submodels]
    ev = FidvrEvent(event.t_detect, tuple(known), event.pre_b, event.post_b, event.area_t_detect)
    est = estimate_recovery(ev, series, {a: submodels[a].motor1 for a in known}, cfg)
    return {
        "event": {"t_detect": event.t_detect, "areas": list(event.areas)},
        "estimates": {a: {"t1": r.t1, "t2": r.t2, "t_total": r.t_total} for a, r in est.areas.items()},
        "t_total": est.t_total,
        "flags": flags + est.flags,
        "knee_times": est.knee_times,
        "v_l": {a: r.v_l for a, r in est.areas.items()},
    }
