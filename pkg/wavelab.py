"""Shared diagnostics: crests, tracks, fits, detectors and monitors.

Everything here is a pure function of snapshot or series inputs. Simulation
events are raised by the steppers as SimulationEvent subclasses and turned
into Event rows by the run loops.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.signal import find_peaks
from scipy.stats import linregress


class WindowNotFoundError(RuntimeError):
    """The series never enters a clean exponential window."""


class InsufficientSamplesError(ValueError):
    """Too few samples for a least-squares fit."""


class SimulationEvent(RuntimeError):
    """A runtime condition that terminates a simulation (recorded, not fatal)."""

    kind = "event"

    def __init__(self, message: str, **payload):
        super().__init__(message)
        self.payload = payload


class BlowupEvent(SimulationEvent):
    kind = "blowup"


class CorrectnessLossEvent(SimulationEvent):
    kind = "non_correct"


class SawtoothEvent(SimulationEvent):
    kind = "sawtooth"


class NegativeDensityEvent(SimulationEvent):
    kind = "negative_density"


@dataclass(frozen=True)
class DetectorSettings:
    """Thresholds shared by every model; overridable through the detect.* config keys."""

    blowup_guard: float = 50.0
    split_fraction: float = 1.0 / 6.0
    split_separation: float = 10.0
    self_similar_tol: float = 0.03
    growth_window: Tuple[float, float] = (1e-4, 1e-1)
    sawtooth_threshold: float = 1e-4
    min_fit_samples: int = 10
    track_max_jump: float = 2.0
    # radiation behind a kink front: window width, gap to the front, late/mid energy ratio, noise floor
    tail_window: float = 10.0
    tail_gap: float = 3.0
    tail_decay: float = 0.5
    tail_floor: float = 1e-6


@dataclass
class Event:
    t: float
    kind: str
    payload: Dict[str, float] = field(default_factory=dict)

    def payload_text(self) -> str:
        return ";".join(f"{k}={v}" for k, v in sorted(self.payload.items()))


@dataclass
class DiagnosticsSeries:
    t: List[float] = field(default_factory=list)
    max_amp: List[float] = field(default_factory=list)
    crest_positions: List[np.ndarray] = field(default_factory=list)
    extra: Dict[str, List[float]] = field(default_factory=dict)
    events: List[Event] = field(default_factory=list)

    def record(self, t: float, max_amp: float, crests: Sequence[float] = (), **extra):
        if self.t and t <= self.t[-1]:
            raise ValueError(f"diagnostics time must increase: {t} after {self.t[-1]}")
        self.t.append(float(t))
        self.max_amp.append(float(max_amp))
        self.crest_positions.append(np.asarray(crests, dtype=float))
        for key, value in extra.items():
            self.extra.setdefault(key, []).append(float(value))

    def add_event(self, t: float, kind: str, **payload):
        self.events.append(Event(float(t), kind, dict(payload)))

    def has_event(self, kind: str) -> bool:
        return any(e.kind == kind for e in self.events)

    def first_event(self, kind: str) -> Optional[Event]:
        return next((e for e in self.events if e.kind == kind), None)

    def to_frame(self) -> pd.DataFrame:
        data = {
            "t": self.t,
            "max_amp": self.max_amp,
            "crest_positions": [";".join(f"{x:.17g}" for x in c) for c in self.crest_positions],
        }
        for key, values in self.extra.items():
            data[key] = values
        return pd.DataFrame(data)

    def events_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [{"t": e.t, "event_kind": e.kind, "payload": e.payload_text()} for e in self.events],
            columns=["t", "event_kind", "payload"],
        )


@dataclass
class OutcomeRecord:
    kind: str  # split | blowup | saturated_self_similar | shock_fan | standing | non_correct | inconclusive
    pulse_speeds: List[float] = field(default_factory=list)
    kink_speed: Optional[float] = None
    t_event: Optional[float] = None
    t_end: float = 0.0
    events: List[Event] = field(default_factory=list)
    details: Dict[str, float] = field(default_factory=dict)

    def summary_lines(self) -> List[str]:
        lines = [f"kind = {self.kind}", f"t_end = {self.t_end:.17g}"]
        if self.t_event is not None:
            lines.append(f"t_event = {self.t_event:.17g}")
        if self.pulse_speeds:
            lines.append("pulse_speeds = " + ";".join(f"{s:.17g}" for s in self.pulse_speeds))
        if self.kink_speed is not None:
            lines.append(f"kink_speed = {self.kink_speed:.17g}")
        for key in sorted(self.details):
            lines.append(f"{key} = {self.details[key]:.17g}")
        return lines


@dataclass
class Track:
    t: List[float] = field(default_factory=list)
    x: List[float] = field(default_factory=list)
    amp: List[float] = field(default_factory=list)

    def __len__(self):
        return len(self.t)


@dataclass(frozen=True)
class SpeedFit:
    speed: float
    stderr: float
    n: int


@dataclass(frozen=True)
class GrowthFit:
    rate: float
    stderr: float
    t_start: float
    t_end: float
    n: int


@dataclass(frozen=True)
class SplitVerdict:
    found: bool
    t_split: Optional[float] = None
    speeds: Tuple[float, ...] = ()
    samples: Tuple[int, ...] = ()  # points behind each speed fit


# --- crests and tracks --------------------------------------------------

def find_crests(x: np.ndarray, y: np.ndarray, threshold: float,
                baseline: float = 0.0) -> Tuple[np.ndarray, np.ndarray]:
    """Local maxima of y - baseline above threshold, refined by a parabola through three nodes."""
    h = np.asarray(y, dtype=float) - baseline
    peaks, _ = find_peaks(h, height=threshold)
    positions, heights = [], []
    dx = x[1] - x[0]
    for i in peaks:
        if 0 < i < len(h) - 1:
            a, b, c = h[i - 1], h[i], h[i + 1]
            denom = a - 2.0 * b + c
            shift = 0.5 * (a - c) / denom if denom != 0 else 0.0
            positions.append(x[i] + shift * dx)
            heights.append(b - 0.25 * (a - c) * shift)
        else:
            positions.append(x[i])
            heights.append(h[i])
    return np.asarray(positions), np.asarray(heights)


def track_pulses(times: Sequence[float], frames: Sequence[Tuple[np.ndarray, np.ndarray]],
                 threshold: float, baseline: float = 0.0,
                 max_jump: float = 2.0) -> Tuple[List[Track], int]:
    """
    Link crests across frames by nearest-neighbour continuation.

    Returns:
        (tracks, number of track losses)
    """
    tracks: List[Track] = []
    active: List[int] = []
    losses = 0
    for t, (x, y) in zip(times, frames):
        pos, amp = find_crests(x, y, threshold, baseline)
        pairs = sorted(
            (abs(pos[j] - tracks[i].x[-1]), i, j)
            for i in active for j in range(len(pos))
        )
        used_tracks, used_crests = set(), set()
        for dist, i, j in pairs:
            if dist > max_jump or i in used_tracks or j in used_crests:
                continue
            tracks[i].t.append(float(t))
            tracks[i].x.append(float(pos[j]))
            tracks[i].amp.append(float(amp[j]))
            used_tracks.add(i)
            used_crests.add(j)
        losses += len(set(active) - used_tracks)
        next_active = sorted(used_tracks)
        for j in range(len(pos)):
            if j not in used_crests:
                tracks.append(Track([float(t)], [float(pos[j])], [float(amp[j])]))
                next_active.append(len(tracks) - 1)
        active = next_active
    return tracks, losses


def fit_speed(t: Sequence[float], x: Sequence[float], window: Optional[Tuple[float, float]] = None,
              min_samples: int = 10) -> SpeedFit:
    """Least-squares slope of position against time with its standard error."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if window is not None:
        mask = (t >= window[0]) & (t <= window[1])
        t, x = t[mask], x[mask]
    if len(t) < min_samples:
        raise InsufficientSamplesError(f"need {min_samples} samples, got {len(t)}")
    fit = linregress(t, x)
    return SpeedFit(float(fit.slope), float(fit.stderr), len(t))


def fit_growth_rate(t: Sequence[float], amplitude: Sequence[float], lower: float, upper: float,
                    min_samples: int = 10, t_min: float = -np.inf) -> GrowthFit:
    """
    Exponential rate from the log-amplitude slope inside [lower, upper].

    The window is the last contiguous run of samples inside the band that
    ends where the amplitude first leaves it from above. Samples before
    t_min never enter the window.
    """
    t = np.asarray(t, dtype=float)
    a = np.asarray(amplitude, dtype=float)
    keep = t >= t_min
    t, a = t[keep], a[keep]
    above = np.nonzero(a > upper)[0]
    stop = int(above[0]) if len(above) else len(a)
    end = stop - 1
    while end >= 0 and not (lower <= a[end] <= upper):
        end -= 1
    start = end
    while start - 1 >= 0 and lower <= a[start - 1] <= upper:
        start -= 1
    if end < 0 or end - start + 1 < min_samples:
        raise WindowNotFoundError(
            f"no exponential window with {min_samples} samples in [{lower:.3g}, {upper:.3g}]"
        )
    sl = slice(start, end + 1)
    fit = linregress(t[sl], np.log(a[sl]))
    return GrowthFit(float(fit.slope), float(fit.stderr), float(t[start]), float(t[end]), end - start + 1)


# --- detectors ------------------------------------------------------------

def detect_blowup(series: DiagnosticsSeries) -> Optional[float]:
    event = series.first_event("blowup")
    return None if event is None else event.t


def detect_split(tracks: List[Track], threshold: float, separation: float,
                 min_samples: int = 10) -> SplitVerdict:
    """
    Two persistent crests above threshold, farther apart than `separation`
    and still moving apart at the end of the record.
    """
    if not tracks:
        return SplitVerdict(False)
    t_last = max(tr.t[-1] for tr in tracks)
    alive = [tr for tr in tracks if tr.t[-1] == t_last and tr.amp[-1] > threshold and len(tr) >= 3]
    if len(alive) < 2:
        return SplitVerdict(False)
    alive.sort(key=lambda tr: tr.amp[-1], reverse=True)
    left, right = sorted(alive[:2], key=lambda tr: tr.x[-1])
    if right.x[-1] - left.x[-1] <= separation:
        return SplitVerdict(False)

    common = sorted(set(left.t) & set(right.t))
    lx = dict(zip(left.t, left.x))
    rx = dict(zip(right.t, right.x))
    gaps = [rx[t] - lx[t] for t in common]
    if len(gaps) < 3 or not gaps[-1] > gaps[-3]:
        return SplitVerdict(False)
    t_split = next(t for t, g in zip(common, gaps) if g > separation)

    # same window for both pulses so mirrored runs give opposite speeds
    window = (common[len(common) // 2], common[-1])
    fits = []
    for tr in (left, right):
        try:
            fits.append(fit_speed(tr.t, tr.x, window, min_samples))
        except InsufficientSamplesError:
            # fewer than min_samples points; the count travels with the verdict
            fits.append(fit_speed(tr.t, tr.x, window, 2))
    return SplitVerdict(True, float(t_split), tuple(f.speed for f in fits), tuple(f.n for f in fits))


def detect_self_similar(x: np.ndarray, y1: np.ndarray, t1: float, y2: np.ndarray, t2: float,
                        x_sym: float, jump: float, tol: float = 0.03) -> Tuple[bool, float]:
    """
    Compare two snapshots as functions of (x - x_sym)/t.

    Returns:
        (verdict, max-norm collapse error relative to the jump amplitude)
    """
    if not 0 < t1 < t2:
        raise ValueError("need 0 < t1 < t2")
    eta_max = min(x[-1] - x_sym, x_sym - x[0]) / t2
    eta = np.linspace(-eta_max, eta_max, 2 * len(x))
    f1 = np.interp(x_sym + eta * t1, x, y1)
    f2 = np.interp(x_sym + eta * t2, x, y2)
    error = float(np.max(np.abs(f1 - f2)) / abs(jump))
    return error < tol, error


def mid_crossing(x: np.ndarray, y: np.ndarray, level: float,
                 near: Optional[float] = None) -> Optional[float]:
    """Position where y crosses `level` (linear interpolation), nearest to `near` if given."""
    s = np.asarray(y, dtype=float) - level
    idx = np.nonzero(s[:-1] * s[1:] <= 0)[0]
    idx = idx[s[idx] != s[idx + 1]]
    if len(idx) == 0:
        return None
    crossings = x[idx] - s[idx] * (x[idx + 1] - x[idx]) / (s[idx + 1] - s[idx])
    if near is None:
        return float(crossings[0])
    return float(crossings[np.argmin(np.abs(crossings - near))])


def track_kink(times: Sequence[float], frames: Sequence[Tuple[np.ndarray, np.ndarray]],
               level: float, start: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Mid-value crossing trajectory; frames without a crossing are skipped."""
    ts, xs = [], []
    last = start
    for t, (x, y) in zip(times, frames):
        pos = mid_crossing(x, y, level, last)
        if pos is None:
            continue
        ts.append(float(t))
        xs.append(pos)
        last = pos
    return np.asarray(ts), np.asarray(xs)


def sawtooth_indicator(y: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """max |fourth difference|/16 over the masked interior nodes (grid-scale oscillation amplitude)."""
    y = np.asarray(y, dtype=float)
    d4 = np.zeros_like(y)
    d4[2:-2] = (y[4:] + y[:-4]) - 4.0 * (y[3:-1] + y[1:-3]) + 6.0 * y[2:-2]
    values = np.abs(d4) / 16.0
    if mask is not None:
        values = values[np.asarray(mask, dtype=bool)]
    return float(values.max()) if values.size else 0.0


def tail_energy(x: np.ndarray, y: np.ndarray, background: float,
                region: Tuple[float, float]) -> float:
    """Discrete L2 energy of the deviation from `background` inside a region."""
    mask = (x >= region[0]) & (x <= region[1])
    dx = x[1] - x[0]
    return float(np.sum((np.asarray(y)[mask] - background) ** 2) * dx)


def l2_norm(y: np.ndarray, dx: float) -> float:
    return float(np.sqrt(np.sum(np.asarray(y) ** 2) * dx))


def correlation(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
