"""Scaled Boussinesq-type test model V_tt = V_xx - V_xxxx - (V^2)_xx.

It has an exact standing solitary wave and an exact unstable eigenfunction,
which makes it the proving ground for the schemes, the instability detectors
and the eigenfunction-by-evolution method used on the full tube equations.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.sparse.linalg import spsolve
from scipy.stats import linregress

from wavelab import (
    BlowupEvent,
    DetectorSettings,
    DiagnosticsSeries,
    OutcomeRecord,
    SimulationEvent,
    correlation,
    detect_split,
    find_crests,
    fit_growth_rate,
    l2_norm,
    track_pulses,
)

SOLITARY_AMPLITUDE = 1.5
# V_s = 1.5 sech^2(xi / STANDING_WIDTH); split ratios are quoted per unit of this width
STANDING_WIDTH = 2.0
GROWTH_RATE = np.sqrt(3.0 / 16.0)
SCHEMES = ("three_layer", "lax_wendroff")
# dtau < STABILITY_C * dxi^2 for both schemes
STABILITY_C = 0.25
PERTURBATION_MODES = ("exact_B", "evolved_Bhat", "none")


@dataclass
class ScalarField:
    V: np.ndarray
    Q: np.ndarray
    xi0: float
    dxi: float

    def __post_init__(self):
        self.V = np.asarray(self.V, dtype=float)
        self.Q = np.asarray(self.Q, dtype=float)
        if self.V.shape != self.Q.shape or self.V.ndim != 1:
            raise ValueError("V and Q must be 1-d arrays of equal length")
        if self.n < 5:
            raise ValueError(f"need at least 5 grid points, got {self.n}")
        if self.dxi <= 0:
            raise ValueError("dxi must be positive")

    @property
    def n(self) -> int:
        return len(self.V)

    @property
    def xi(self) -> np.ndarray:
        offset = self.xi0 / self.dxi
        if abs(offset - round(offset)) < 1e-9:
            # integer multiples keep a centred grid exactly symmetric
            return self.dxi * (np.arange(self.n) + round(offset))
        return self.xi0 + self.dxi * np.arange(self.n)

    def copy(self) -> "ScalarField":
        return ScalarField(self.V.copy(), self.Q.copy(), self.xi0, self.dxi)


@dataclass
class SimConfig:
    dxi: float = 0.1
    dtau: Optional[float] = None
    T: float = 60.0
    scheme: str = "three_layer"
    L: float = 100.0
    snapshot_every: float = 0.5
    detectors: DetectorSettings = field(default_factory=DetectorSettings)

    def __post_init__(self):
        if self.dtau is None:
            self.dtau = 0.2 * self.dxi ** 2
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme: {self.scheme}")
        if self.dxi <= 0 or self.dtau <= 0 or self.T <= 0:
            raise ValueError("dxi, dtau and T must be positive")
        if self.dtau >= STABILITY_C * self.dxi ** 2:
            raise ValueError(
                f"dtau={self.dtau:.3g} violates the stability bound dtau < {STABILITY_C}*dxi^2"
            )

    def grid(self) -> np.ndarray:
        m = int(round(self.L / self.dxi))
        return self.dxi * np.arange(-m, m + 1, dtype=float)

    @property
    def steps_per_snapshot(self) -> int:
        return max(1, int(round(self.snapshot_every / self.dtau)))


@dataclass
class BoussinesqRun:
    field: ScalarField
    series: DiagnosticsSeries
    snapshots: List[Tuple[float, np.ndarray, np.ndarray]]


@dataclass
class EigenEstimate:
    profile: np.ndarray
    rate: float
    stderr: float
    t_star: float


@dataclass
class LinearMode:
    profile: np.ndarray
    rate: float
    kind: str  # exponential | oscillation
    t: np.ndarray
    log_norm: np.ndarray


def exact_standing_wave(xi):
    return SOLITARY_AMPLITUDE / np.cosh(np.asarray(xi, dtype=float) / 2.0) ** 2


def exact_eigenfunction(xi):
    """B = -sech(xi/2) + 2 sech^3(xi/2); grows like exp(s*tau) with s^2 = 3/16."""
    s = 1.0 / np.cosh(np.asarray(xi, dtype=float) / 2.0)
    return -s + 2.0 * s ** 3


def split_speed_prediction() -> float:
    """
    Speed of each pulse when the standing wave splits into two solitary waves.

    Pulses of the form 1.5(1 - c^2) sech^2(sqrt(1 - c^2) x / 2) carry mass
    6 sqrt(1 - c^2); two of them share the standing mass 6 only for
    c^2 = 3/4, and that pair also carries the standing Hamiltonian.
    """
    return float(np.sqrt(3.0) / 2.0)


def split_ratio(speeds: Sequence[float]) -> float:
    """
    Mean pulse speed in standing-wave widths per unit time, i.e. measured in
    the coordinate xi / STANDING_WIDTH where V_s = 1.5 sech^2.

    This is the ratio quoted for the split; it equals split_speed_prediction() / 2
    = sqrt(3)/4 ~ 0.43 for an ideal pair.
    """
    return float(np.mean(np.abs(speeds)) / STANDING_WIDTH)


# --- stencils -------------------------------------------------------------

def second_difference(f: np.ndarray) -> np.ndarray:
    out = np.zeros_like(f)
    out[1:-1] = (f[2:] + f[:-2]) - 2.0 * f[1:-1]
    return out


def fourth_difference(f: np.ndarray) -> np.ndarray:
    out = np.zeros_like(f)
    out[2:-2] = (f[4:] + f[:-4]) - 4.0 * (f[3:-1] + f[1:-3]) + 6.0 * f[2:-2]
    return out


def acceleration(V: np.ndarray, dxi: float) -> np.ndarray:
    """V_tt on interior nodes; the two outer nodes at each end are rigid."""
    a = (second_difference(V - V * V) - fourth_difference(V) / dxi ** 2) / dxi ** 2
    a[:2] = 0.0
    a[-2:] = 0.0
    return a


def linear_acceleration(reference: np.ndarray, dxi: float) -> Callable[[np.ndarray], np.ndarray]:
    """Acceleration of the equation linearised about `reference`."""
    twice = 2.0 * reference

    def accel(dV: np.ndarray) -> np.ndarray:
        a = (second_difference(dV - twice * dV) - fourth_difference(dV) / dxi ** 2) / dxi ** 2
        a[:2] = 0.0
        a[-2:] = 0.0
        return a

    return accel


def _guard(V: np.ndarray, limit: Optional[float]):
    if limit is None:
        return
    peak = float(np.max(np.abs(V)))
    if not np.isfinite(peak) or peak > limit:
        raise BlowupEvent(f"max|V| = {peak:.3g} exceeds guard {limit}", max_V=peak)


def three_layer_update(V, Q, Vp, Qp, dt, accel):
    """Leapfrog update of (V, Q) arrays; the last axis is space, two end nodes stay frozen."""
    Vn, Qn = Vp.copy(), Qp.copy()
    Vn[..., 2:-2] = Vp[..., 2:-2] + 2.0 * dt * Q[..., 2:-2]
    Qn[..., 2:-2] = Qp[..., 2:-2] + 2.0 * dt * accel(V)[..., 2:-2]
    return Vn, Qn


def lax_wendroff_update(V, Q, dt, accel):
    """Half step with the Lax-averaged velocity, full step with forces at the half level."""
    a = accel(V)
    Vh = V.copy()
    Vh[..., 2:-2] = V[..., 2:-2] + 0.5 * dt * Q[..., 2:-2]
    Qh = Q.copy()
    Qh[..., 2:-2] = 0.5 * Q[..., 2:-2] + 0.25 * (Q[..., 1:-3] + Q[..., 3:-1]) + 0.5 * dt * a[..., 2:-2]
    Vn, Qn = V.copy(), Q.copy()
    Vn[..., 2:-2] = V[..., 2:-2] + dt * Qh[..., 2:-2]
    Qn[..., 2:-2] = Q[..., 2:-2] + dt * accel(Vh)[..., 2:-2]
    return Vn, Qn


def step_three_layer(field: ScalarField, previous_field: ScalarField,
                     config: SimConfig) -> ScalarField:
    """Leapfrog in time, centred second and fourth differences in space."""
    V, Q = three_layer_update(field.V, field.Q, previous_field.V, previous_field.Q,
                              config.dtau, lambda v: acceleration(v, field.dxi))
    _guard(V, config.detectors.blowup_guard)
    return ScalarField(V, Q, field.xi0, field.dxi)


def step_lax_wendroff(field: ScalarField, config: SimConfig) -> ScalarField:
    """Half-step predictor with Lax-averaged velocity, full-step corrector."""
    V, Q = lax_wendroff_update(field.V, field.Q, config.dtau, lambda v: acceleration(v, field.dxi))
    _guard(V, config.detectors.blowup_guard)
    return ScalarField(V, Q, field.xi0, field.dxi)


# --- discrete reference and invariants --------------------------------------

def discrete_standing_wave(xi: np.ndarray, dxi: float, max_iter: int = 30) -> np.ndarray:
    """Solve V - V^2 - D2 V / dxi^2 = 0 by sparse Newton, starting from the exact wave."""
    n = len(xi)
    V = exact_standing_wave(xi)
    D2 = sparse.diags([1.0, -2.0, 1.0], [-1, 0, 1], shape=(n, n), format="csc") / dxi ** 2
    I = sparse.identity(n, format="csc")
    for _ in range(max_iter):
        F = V - V * V - D2 @ V
        J = I - sparse.diags(2.0 * V, format="csc") - D2
        step = spsolve(J, F)
        V = V - step
        if np.max(np.abs(step)) < 1e-13:
            break
    else:
        raise RuntimeError("Newton iteration for the discrete standing wave did not converge")
    return 0.5 * (V + V[::-1])


def invariants(field: ScalarField) -> Tuple[float, float]:
    """(mass, Hamiltonian) with W_xi = Q and W = 0 at the left end."""
    xi = field.xi
    W = cumulative_trapezoid(field.Q, xi, initial=0.0)
    V = field.V
    Vx = np.gradient(V, field.dxi)
    mass = trapezoid(V, xi)
    hamiltonian = trapezoid(0.5 * W * W + 0.5 * V * V + 0.5 * Vx * Vx - V ** 3 / 3.0, xi)
    return float(mass), float(hamiltonian)


# --- evolution --------------------------------------------------------------

def _core_mask(xi: np.ndarray, core: float) -> np.ndarray:
    return np.abs(xi) <= core


def evolve(initial: ScalarField, config: SimConfig, reference: Optional[np.ndarray] = None,
           core: float = 10.0, stop_above: Optional[float] = None,
           keep_snapshots: bool = True) -> BoussinesqRun:
    """
    Advance the nonlinear model to config.T, sampling every config.snapshot_every.

    The sample records max V, crest positions and, when `reference` is given,
    the peak deviation |V - reference| inside |xi| <= core. A blowup stops the
    run and is recorded as an event.
    """
    if abs(initial.dxi - config.dxi) > 1e-12 * config.dxi:
        raise ValueError("field spacing does not match the configuration")
    xi = initial.xi
    mask = _core_mask(xi, core)
    threshold = config.detectors.split_fraction * SOLITARY_AMPLITUDE
    series = DiagnosticsSeries()
    snapshots: List[Tuple[float, np.ndarray, np.ndarray]] = []

    def sample(t: float, f: ScalarField) -> Optional[float]:
        positions, _ = find_crests(xi, f.V, threshold)
        extra = {}
        deviation = None
        if reference is not None:
            deviation = float(np.max(np.abs(f.V - reference)[mask]))
            extra["deviation"] = deviation
        series.record(t, float(np.max(f.V)), positions, **extra)
        if keep_snapshots:
            snapshots.append((t, f.V.copy(), f.Q.copy()))
        return deviation

    current, previous = initial.copy(), None
    sample(0.0, current)
    steps = int(round(config.T / config.dtau))
    every = config.steps_per_snapshot
    for n in range(1, steps + 1):
        try:
            if config.scheme == "three_layer" and previous is not None:
                nxt = step_three_layer(current, previous, config)
            else:
                nxt = step_lax_wendroff(current, config)
        except SimulationEvent as event:
            series.add_event(n * config.dtau, event.kind, **event.payload)
            break
        previous, current = current, nxt
        if n % every == 0:
            deviation = sample(n * config.dtau, current)
            if stop_above is not None and deviation is not None and deviation > stop_above:
                break
    return BoussinesqRun(current, series, snapshots)


def classify_run(run: BoussinesqRun, config: SimConfig) -> OutcomeRecord:
    """Blowup, split, standing or inconclusive, from the recorded run."""
    series = run.series
    settings = config.detectors
    t_end = series.t[-1]
    blowup = series.first_event("blowup")
    if blowup is not None:
        return OutcomeRecord("blowup", t_event=blowup.t, t_end=blowup.t,
                             events=list(series.events),
                             details={"max_V": blowup.payload.get("max_V", np.inf)})

    xi = run.field.xi
    threshold = settings.split_fraction * SOLITARY_AMPLITUDE
    times = [s[0] for s in run.snapshots]
    frames = [(xi, s[1]) for s in run.snapshots]
    tracks, losses = track_pulses(times, frames, threshold, max_jump=settings.track_max_jump)
    verdict = detect_split(tracks, threshold, settings.split_separation, settings.min_fit_samples)
    details = {"track_losses": float(losses), "max_amp_final": series.max_amp[-1]}
    if verdict.found:
        details["split_ratio"] = split_ratio(verdict.speeds)
        details["speed_samples"] = float(min(verdict.samples))
        return OutcomeRecord("split", pulse_speeds=list(verdict.speeds), t_event=verdict.t_split,
                             t_end=t_end, events=list(series.events), details=details)

    amp = np.asarray(series.max_amp)
    if np.all(np.abs(amp - SOLITARY_AMPLITUDE) < 0.05 * SOLITARY_AMPLITUDE):
        return OutcomeRecord("standing", t_end=t_end, events=list(series.events), details=details)
    return OutcomeRecord("inconclusive", t_end=t_end, events=list(series.events), details=details)


def run_perturbation(epsilon: float, mode: str, config: SimConfig,
                     bhat: Optional[np.ndarray] = None,
                     rate: Optional[float] = None) -> Tuple[OutcomeRecord, BoussinesqRun]:
    """
    Evolve V = V_s + eps*B, Q = eps*s*B on a rigid-ended domain and classify.

    mode "exact_B" uses the closed-form eigenfunction, "evolved_Bhat" an
    estimate (extracted here when not supplied), "none" the bare wave.
    """
    if mode not in PERTURBATION_MODES:
        raise ValueError(f"unknown perturbation mode: {mode}")
    xi = config.grid()
    V = exact_standing_wave(xi)
    if mode == "exact_B":
        B, s = exact_eigenfunction(xi), GROWTH_RATE
    elif mode == "evolved_Bhat":
        if bhat is None:
            estimate = extract_eigenfunction_by_evolution(config)
            bhat, rate = estimate.profile, estimate.rate
        B, s = np.asarray(bhat, dtype=float), (GROWTH_RATE if rate is None else rate)
    else:
        B, s = np.zeros_like(xi), 0.0

    initial = ScalarField(V + epsilon * B, epsilon * s * B, xi[0], config.dxi)
    run = evolve(initial, config)
    return classify_run(run, config), run


def _normalise_profile(p: np.ndarray) -> np.ndarray:
    return p / p[int(np.argmax(np.abs(p)))]


def extract_eigenfunction_by_evolution(config: SimConfig, core: float = 8.0,
                                       sample_every: float = 0.05) -> EigenEstimate:
    """
    Grow the unstable mode out of the truncation error of V = V_s, Q = 0.

    The deviation from the discrete standing wave is fitted inside the
    detector growth window; radiation leaves the core at speed >= 1, so
    samples before t = core are excluded. The returned profile is scaled to
    unit peak with a positive crest.
    """
    xi = config.grid()
    reference = discrete_standing_wave(xi, config.dxi)
    sampling = SimConfig(dxi=config.dxi, dtau=config.dtau, T=config.T, scheme=config.scheme,
                         L=config.L, snapshot_every=sample_every, detectors=config.detectors)
    lo, hi = config.detectors.growth_window
    lower, upper = lo * SOLITARY_AMPLITUDE, hi * SOLITARY_AMPLITUDE

    initial = ScalarField(exact_standing_wave(xi), np.zeros_like(xi), xi[0], config.dxi)
    run = evolve(initial, sampling, reference=reference, core=core, stop_above=2.0 * upper)
    t = np.asarray(run.series.t)
    deviation = np.asarray(run.series.extra["deviation"])
    fit = fit_growth_rate(t, deviation, lower, upper, config.detectors.min_fit_samples, t_min=core)

    target = np.sqrt(max(lower, deviation[t == fit.t_start][0]) * upper)
    inside = (t >= fit.t_start) & (t <= fit.t_end)
    idx = np.nonzero(inside)[0]
    star = idx[int(np.argmin(np.abs(np.log(deviation[idx] / target))))]
    t_star, V_star, _ = run.snapshots[star]
    profile = _normalise_profile(V_star - reference)
    return EigenEstimate(profile, fit.rate, fit.stderr, float(t_star))


def linearized_evolution(config: SimConfig, seed: np.ndarray, seed_q: Optional[np.ndarray] = None,
                         core: float = 8.0, renorm_every: float = 1.0,
                         min_rate: float = 0.1) -> LinearMode:
    """
    Evolve the equation linearised about the discrete standing wave.

    The disturbance is renormalised every `renorm_every` time units and the
    accumulated log of its core norm is fitted over the second half of the
    run. A clean positive slope is reported as an exponential mode, anything
    else as oscillation-only.
    """
    seed = np.asarray(seed, dtype=float)
    if not np.any(seed):
        raise ValueError("seed disturbance must be nonzero")
    xi = config.grid()
    if seed.shape != xi.shape:
        raise ValueError("seed does not match the grid")
    reference = discrete_standing_wave(xi, config.dxi)
    accel = linear_acceleration(reference, config.dxi)
    mask = _core_mask(xi, core)
    dt = config.dtau

    V = seed.copy()
    Q = np.zeros_like(V) if seed_q is None else np.asarray(seed_q, dtype=float).copy()
    Vp = Qp = None
    log_scale = 0.0
    times, log_norm = [], []

    def core_norm(v):
        return l2_norm(v[mask], config.dxi)

    steps = int(round(config.T / dt))
    every = config.steps_per_snapshot
    renorm = max(1, int(round(renorm_every / dt)))
    times.append(0.0)
    log_norm.append(np.log(core_norm(V)))
    for n in range(1, steps + 1):
        if config.scheme == "three_layer" and Vp is not None:
            Vn, Qn = three_layer_update(V, Q, Vp, Qp, dt, accel)
        else:
            Vn, Qn = lax_wendroff_update(V, Q, dt, accel)
        Vp, Qp, V, Q = V, Q, Vn, Qn
        if n % renorm == 0:
            scale = core_norm(V)
            if scale > 0:
                log_scale += np.log(scale)
                V, Q = V / scale, Q / scale
                Vp, Qp = Vp / scale, Qp / scale
        if n % every == 0:
            times.append(n * dt)
            log_norm.append(log_scale + np.log(core_norm(V)))

    t = np.asarray(times)
    ln = np.asarray(log_norm)
    half = len(t) // 2
    fit = linregress(t[half:], ln[half:])
    exponential = fit.slope > min_rate and fit.rvalue ** 2 > 0.99
    return LinearMode(_normalise_profile(V), float(fit.slope),
                      "exponential" if exponential else "oscillation", t, ln)


def eigenfunction_correlation(profile: np.ndarray, xi: np.ndarray) -> float:
    return correlation(profile, exact_eigenfunction(xi))


