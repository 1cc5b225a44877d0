"""Fixed-pressure membrane tube: difference schemes, initial data and experiments.

The unknowns are the current axial position z(Z, t) and radius r(Z, t) of the
material section at Lagrangian coordinate Z. With lambda1 = sqrt(z'^2 + r'^2)
and K = R*W1/lambda1 the equations read

    rho*R*z_tt = (K z')' - p* r r'
    rho*R*r_tt = (K r')' - W2 + p* r z' - c r''''

Both schemes average K to the half points and centre every other term. The
two outer nodes at each end are frozen (rigid ends).
"""

import multiprocessing as mp
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import cumulative_trapezoid
from scipy.stats import linregress

from boussinesq import SCHEMES, fourth_difference, lax_wendroff_update, three_layer_update
from dispersion import correctness_and_stability, line_intersection_test
from material import (
    EQUILIBRIUM_TOL,
    MaterialParams,
    TubeGeometry,
    UniformState,
    reduced_derivatives,
    solve_equilibrium_zprime,
    wave_speeds,
)
from profiles import WaveProfile
from wavelab import (
    BlowupEvent,
    CorrectnessLossEvent,
    DetectorSettings,
    DiagnosticsSeries,
    InsufficientSamplesError,
    OutcomeRecord,
    SawtoothEvent,
    SimulationEvent,
    SpeedFit,
    correlation,
    detect_self_similar,
    detect_split,
    find_crests,
    fit_growth_rate,
    fit_speed,
    l2_norm,
    mid_crossing,
    sawtooth_indicator,
    tail_energy,
    track_kink,
    track_pulses,
)

# dt = 2*COURANT/omega_max by default; leapfrog needs dt*omega_max < 1
COURANT = 0.4
COURANT_LIMIT = 0.5
FROZEN = 2
EXPERIMENTS = ("solitary", "perturbed", "riemann", "two_steps")
EIGEN_METHODS = ("nonlinear_difference", "linearized")


class ProfileTooWideError(ValueError):
    """The profile has not decayed to its end state at the grid boundaries."""


class EquilibriumError(ValueError):
    """An end state is not an equilibrium for the shared pressure."""


class NoSignChangeError(RuntimeError):
    """Kink speeds at both ends of the r02 bracket have the same sign."""

    def __init__(self, message: str, speeds: Sequence[float] = ()):
        super().__init__(message)
        self.speeds = tuple(speeds)


class UnstableEndStateError(RuntimeError):
    """The right uniform state is unstable, or its Riemann run stopped on an event."""


@dataclass(frozen=True)
class BendingOption:
    enabled: bool = False
    c: float = 0.0

    def __post_init__(self):
        if self.enabled and not self.c > 0:
            raise ValueError(f"bending coefficient must be positive when enabled, got {self.c}")

    @classmethod
    def from_scale(cls, material: MaterialParams, geometry: TubeGeometry,
                   h_scale: float = 1e-3) -> "BendingOption":
        """c = (1/3) mu R h_scale."""
        return cls(True, material.mu * geometry.R * h_scale / 3.0)

    @property
    def coefficient(self) -> float:
        return self.c if self.enabled else 0.0


@dataclass(frozen=True)
class TubeModel:
    material: MaterialParams
    geometry: TubeGeometry
    p_star: float
    bending: BendingOption = field(default_factory=BendingOption)
    # average W1*lambda1 to the half points instead of R*W1/lambda1
    displayed_k: bool = False

    @classmethod
    def for_state(cls, state: UniformState, material: MaterialParams, geometry: TubeGeometry,
                  **kwargs) -> "TubeModel":
        return cls(material, geometry, state.p_star, **kwargs)


@dataclass
class TubeField:
    z: np.ndarray
    r: np.ndarray
    zdot: np.ndarray
    rdot: np.ndarray
    Z0: float
    dZ: float

    def __post_init__(self):
        for name in ("z", "r", "zdot", "rdot"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        shapes = {a.shape for a in (self.z, self.r, self.zdot, self.rdot)}
        if len(shapes) != 1 or self.z.ndim != 1:
            raise ValueError("z, r, zdot and rdot must be 1-d arrays of equal length")
        if self.n < 5:
            raise ValueError(f"need at least 5 grid points, got {self.n}")
        if self.dZ <= 0:
            raise ValueError("dZ must be positive")

    @classmethod
    def from_stacked(cls, X: np.ndarray, V: np.ndarray, Z0: float, dZ: float) -> "TubeField":
        return cls(X[0], X[1], V[0], V[1], Z0, dZ)

    @property
    def n(self) -> int:
        return len(self.r)

    @property
    def Z(self) -> np.ndarray:
        offset = self.Z0 / self.dZ
        if abs(offset - round(offset)) < 1e-9:
            return self.dZ * (np.arange(self.n) + round(offset))
        return self.Z0 + self.dZ * np.arange(self.n)

    @property
    def positions(self) -> np.ndarray:
        return np.vstack((self.z, self.r))

    @property
    def velocities(self) -> np.ndarray:
        return np.vstack((self.zdot, self.rdot))

    @property
    def zprime(self) -> np.ndarray:
        return np.gradient(self.z, self.dZ)

    @property
    def rprime(self) -> np.ndarray:
        return np.gradient(self.r, self.dZ)

    @property
    def lambda1(self) -> np.ndarray:
        return np.hypot(self.zprime, self.rprime)

    def sigma1(self, model: TubeModel) -> np.ndarray:
        l1, d = _nodal_derivatives(self.z, self.r, model, self.dZ)
        return l1 * d.W1

    def copy(self) -> "TubeField":
        return TubeField(self.z.copy(), self.r.copy(), self.zdot.copy(), self.rdot.copy(),
                         self.Z0, self.dZ)

    def to_frame(self, model: TubeModel) -> pd.DataFrame:
        return pd.DataFrame({
            "Z": self.Z,
            "z": self.z,
            "r": self.r,
            "zdot": self.zdot,
            "rdot": self.rdot,
            "zprime": self.zprime,
            "lambda1": self.lambda1,
            "sigma1": self.sigma1(model),
        })


@dataclass(frozen=True)
class RiemannSetup:
    r01: float
    z01p: float
    r02: float
    z02p: float
    Zc: float = 0.0
    L: float = 1.0

    def __post_init__(self):
        if self.L <= 0:
            raise ValueError(f"step width L must be positive, got {self.L}")

    @classmethod
    def from_radii(cls, r01: float, z01p: float, r02: float, material: MaterialParams,
                   geometry: TubeGeometry, Zc: float = 0.0, L: float = 1.0) -> "RiemannSetup":
        """
        Complete the right state on the pressure of the left one.

        For r02 > r01 the right stretch is the smaller root above z01'; for
        r02 < r01 it is the smallest admissible root.
        """
        if r02 == r01:
            return cls(r01, z01p, r02, z01p, Zc, L)
        left = UniformState.at_equilibrium(r01, z01p, material, geometry)
        reference = z01p if r02 > r01 else 0.0
        (z02p,) = solve_equilibrium_zprime(r02, left.p_star, material, geometry,
                                           branch="smaller", reference=reference)
        return cls(r01, z01p, r02, z02p, Zc, L)

    @property
    def jump(self) -> float:
        return self.r02 - self.r01

    @property
    def level(self) -> float:
        return 0.5 * (self.r01 + self.r02)

    def end_states(self, material: MaterialParams,
                   geometry: TubeGeometry) -> Tuple[UniformState, UniformState]:
        left = UniformState.at_equilibrium(self.r01, self.z01p, material, geometry)
        right = UniformState.at_equilibrium(self.r02, self.z02p, material, geometry)
        if abs(left.p_star - right.p_star) > EQUILIBRIUM_TOL:
            raise EquilibriumError(
                f"end states are equilibrated for different pressures "
                f"{left.p_star:.10g} and {right.p_star:.10g}"
            )
        return left, right


@dataclass
class MembraneConfig:
    dZ: float = 0.05
    L: float = 60.0
    T: float = 50.0
    dt: Optional[float] = None
    scheme: str = "lax_wendroff"
    snapshot_every: float = 0.5
    detectors: DetectorSettings = field(default_factory=DetectorSettings)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme: {self.scheme}")
        if self.dZ <= 0 or self.L <= 0 or self.T <= 0 or self.snapshot_every <= 0:
            raise ValueError("dZ, L, T and snapshot_every must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")

    def grid(self) -> np.ndarray:
        m = int(round(self.L / self.dZ))
        return self.dZ * np.arange(-m, m + 1, dtype=float)

    def resolve_dt(self, initial: TubeField, model: TubeModel) -> float:
        """The configured step, checked against the bound, or the default fitted to the sampling."""
        omega = spectral_radius(initial, model)
        if self.dt is None:
            bound = 2.0 * COURANT / omega
            return self.snapshot_every / np.ceil(self.snapshot_every / bound)
        if self.dt * omega >= 2.0 * COURANT_LIMIT:
            raise ValueError(
                f"dt={self.dt:.3g} violates the stability bound dt < {2.0 * COURANT_LIMIT / omega:.3g}"
            )
        return self.dt


@dataclass
class MembraneRun:
    field: TubeField
    series: DiagnosticsSeries
    snapshots: List[Tuple[float, TubeField]]
    dt: float


@dataclass
class TubeEigen:
    """Dominant disturbance of a standing wave, scaled so the largest |dr| is +1."""

    Z: np.ndarray
    dz: np.ndarray
    dr: np.ndarray
    dzdot: np.ndarray
    drdot: np.ndarray
    rate: float
    stderr: float
    kind: str  # exponential | oscillation
    t_star: Optional[float] = None


@dataclass
class StandingKink:
    r02: float
    z02p: float
    speed: float
    Z: np.ndarray
    r: np.ndarray
    zprime: np.ndarray
    evaluations: int = 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"Z": self.Z, "r": self.r, "zprime": self.zprime})


# --- discrete operator ----------------------------------------------------

def _nodal_derivatives(z: np.ndarray, r: np.ndarray, model: TubeModel, dZ: float):
    """(lambda1, W derivatives) at the nodes; inadmissible nodes raise correctness loss."""
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(r))):
        raise BlowupEvent("tube state is no longer finite")
    bad = np.nonzero(~(r > 0))[0]
    if bad.size:
        raise CorrectnessLossEvent(f"radius not positive at node {bad[0]}", node=float(bad[0]))
    l1 = np.hypot(np.gradient(z, dZ), np.gradient(r, dZ))
    bad = np.nonzero(~(l1 > 0))[0]
    if bad.size:
        raise CorrectnessLossEvent(f"zero stretch at node {bad[0]}", node=float(bad[0]))
    b = r / model.geometry.R
    invariant = l1 * l1 + b * b + 1.0 / (l1 * l1 * b * b)
    bad = np.nonzero(~(invariant - 3.0 < model.material.Jm))[0]
    if bad.size:
        k = int(bad[0])
        raise CorrectnessLossEvent(f"Gent locking limit reached at node {k}",
                                   node=float(k), invariant=float(invariant[k]))
    return l1, reduced_derivatives(l1, b, model.material)


def tube_acceleration(X: np.ndarray, model: TubeModel, dZ: float,
                      pressure: Optional[np.ndarray] = None) -> np.ndarray:
    """
    (z_tt, r_tt) for stacked positions X = (z, r).

    `pressure` replaces p* node by node (gas-filled tube).
    """
    z, r = X
    R, rho = model.geometry.R, model.geometry.rho
    l1, d = _nodal_derivatives(z, r, model, dZ)
    K = d.W1 * l1 if model.displayed_k else R * d.W1 / l1
    K_half = 0.5 * (K[1:] + K[:-1])
    flux_z = K_half * (z[1:] - z[:-1]) / dZ
    flux_r = K_half * (r[1:] - r[:-1]) / dZ
    p = model.p_star if pressure is None else np.asarray(pressure)[1:-1]

    a = np.zeros_like(X)
    a[0, 1:-1] = (flux_z[1:] - flux_z[:-1]) / dZ - p * (r[2:] ** 2 - r[:-2] ** 2) / (4.0 * dZ)
    a[1, 1:-1] = ((flux_r[1:] - flux_r[:-1]) / dZ - d.W2[1:-1]) \
        + p * r[1:-1] * (z[2:] - z[:-2]) / (2.0 * dZ)
    c = model.bending.coefficient
    if c:
        a[1] -= c * fourth_difference(r) / dZ ** 4
    a /= rho * R
    a[:, :FROZEN] = 0.0
    a[:, -FROZEN:] = 0.0
    return a


def max_wave_speed(field: TubeField, model: TubeModel) -> float:
    ul, ut = wave_speeds(field.zprime, field.rprime, field.r, model.material, model.geometry)
    return float(np.max(np.maximum(ul, ut)))


def spectral_radius(field: TubeField, model: TubeModel) -> float:
    """Largest discrete frequency: 2U/dZ from the wave terms, 4 sqrt(c/rho R)/dZ^2 from bending."""
    b = model.bending.coefficient / (model.geometry.rho * model.geometry.R)
    return float(np.hypot(2.0 * max_wave_speed(field, model) / field.dZ,
                          4.0 * np.sqrt(b) / field.dZ ** 2))


def stable_time_step(field: TubeField, model: TubeModel, courant: float = COURANT) -> float:
    """Without bending this is courant * dZ / max(U_l, U_tau)."""
    return 2.0 * courant / spectral_radius(field, model)


def check_velocity_guard(X: np.ndarray, V: np.ndarray, limit: Optional[float]):
    if limit is None:
        return
    peak = float(np.max(np.abs(V)))
    if not np.isfinite(peak) or not np.all(np.isfinite(X)) or peak > limit:
        raise BlowupEvent(f"max velocity {peak:.3g} exceeds guard {limit:.3g}", max_velocity=peak)


def step_three_layer(field: TubeField, previous_field: TubeField, model: TubeModel, dt: float,
                     guard: Optional[float] = None) -> TubeField:
    V, Q = three_layer_update(field.positions, field.velocities, previous_field.positions,
                              previous_field.velocities, dt,
                              lambda X: tube_acceleration(X, model, field.dZ))
    check_velocity_guard(V, Q, guard)
    return TubeField.from_stacked(V, Q, field.Z0, field.dZ)


def step_lax_wendroff(field: TubeField, model: TubeModel, dt: float,
                      guard: Optional[float] = None) -> TubeField:
    """Half step with Lax-averaged velocities, forces re-evaluated at the half level."""
    V, Q = lax_wendroff_update(field.positions, field.velocities, dt,
                               lambda X: tube_acceleration(X, model, field.dZ))
    check_velocity_guard(V, Q, guard)
    return TubeField.from_stacked(V, Q, field.Z0, field.dZ)


# --- initial data ---------------------------------------------------------

def _is_mirror_grid(Z: np.ndarray) -> bool:
    return bool(np.array_equal(Z, -Z[::-1]))


def position_from_stretch(Z: np.ndarray, zprime: np.ndarray) -> np.ndarray:
    """z = integral of z' with z(0) = 0; exactly odd for even z' on a mirror grid."""
    z = cumulative_trapezoid(zprime, Z, initial=0.0)
    z -= np.interp(0.0, Z, z)
    if _is_mirror_grid(Z) and np.array_equal(zprime, zprime[::-1]):
        z = 0.5 * (z - z[::-1])
    return z


def _at_rest(Z: np.ndarray, r: np.ndarray, zprime: np.ndarray) -> TubeField:
    z = position_from_stretch(Z, zprime)
    zeros = np.zeros_like(Z)
    return TubeField(z, r, zeros, zeros.copy(), float(Z[0]), float(Z[1] - Z[0]))


def uniform_field(state: UniformState, Z: np.ndarray) -> TubeField:
    Z = np.asarray(Z, dtype=float)
    zeros = np.zeros_like(Z)
    return TubeField(state.zprime0 * Z, np.full_like(Z, state.r0), zeros, zeros.copy(),
                     float(Z[0]), float(Z[1] - Z[0]))


def make_initial_solitary(profile: WaveProfile, Z: np.ndarray, material: MaterialParams,
                          geometry: TubeGeometry, tol: float = 1e-8) -> TubeField:
    """The standing profile at rest, centred at Z = 0."""
    Z = np.asarray(Z, dtype=float)
    end = profile.end_state
    if not end.check_equilibrium(material, geometry):
        raise EquilibriumError(f"end state r0={end.r0} is not equilibrated")
    r, u = profile.sample(Z)
    gap = max(abs(r[0] - end.r0), abs(r[-1] - end.r0), abs(u[0] - end.zprime0), abs(u[-1] - end.zprime0))
    if gap > tol:
        raise ProfileTooWideError(
            f"profile deviates by {gap:.3e} from its end state at Z = {Z[0]:g}, {Z[-1]:g}"
        )
    if _is_mirror_grid(Z):
        r, u = 0.5 * (r + r[::-1]), 0.5 * (u + u[::-1])
    return _at_rest(Z, r, u)


def make_perturbed(base: TubeField, snapshot: TubeField, epsilon: float) -> TubeField:
    """X = X_s + eps*(X(t*) - X_s) for positions and velocities; eps < 0 raises the amplitude."""
    if base.n != snapshot.n or base.dZ != snapshot.dZ or base.Z0 != snapshot.Z0:
        raise ValueError("base and snapshot fields live on different grids")

    def mix(a, b):
        return a + epsilon * (b - a)

    return TubeField(mix(base.z, snapshot.z), mix(base.r, snapshot.r),
                     mix(base.zdot, snapshot.zdot), mix(base.rdot, snapshot.rdot),
                     base.Z0, base.dZ)


def make_riemann(setup: RiemannSetup, Z: np.ndarray, material: MaterialParams,
                 geometry: TubeGeometry) -> TubeField:
    """Step r = r01 + (r02 - r01)(1 + tanh((Z - Zc)/L))/2 at rest, same shape for z'."""
    setup.end_states(material, geometry)
    Z = np.asarray(Z, dtype=float)
    w = 0.5 * (1.0 + np.tanh((Z - setup.Zc) / setup.L))
    r = setup.r01 + (setup.r02 - setup.r01) * w
    u = setup.z01p + (setup.z02p - setup.z01p) * w
    return _at_rest(Z, r, u)


def make_two_steps(r01: float, z01p: float, r02: float, z02p: float, half_width: float, L: float,
                   Z: np.ndarray, material: MaterialParams, geometry: TubeGeometry) -> TubeField:
    """State 2 on |Z| < half_width inside state 1, joined by two opposite tanh steps."""
    if half_width <= 0:
        raise ValueError("half_width must be positive")
    RiemannSetup(r01, z01p, r02, z02p, 0.0, L).end_states(material, geometry)
    Z = np.asarray(Z, dtype=float)
    w = 0.5 * (np.tanh((Z + half_width) / L) - np.tanh((Z - half_width) / L))
    r = r01 + (r02 - r01) * w
    u = z01p + (z02p - z01p) * w
    if _is_mirror_grid(Z):
        r, u = 0.5 * (r + r[::-1]), 0.5 * (u + u[::-1])
    return _at_rest(Z, r, u)


# --- runs -----------------------------------------------------------------

def _compressed_zone(sigma1: np.ndarray, widen: int = 2) -> np.ndarray:
    mask = sigma1 < 0
    if widen and mask.any():
        mask = np.convolve(mask.astype(float), np.ones(2 * widen + 1), mode="same") > 0
    return mask


Stepper = Callable[[TubeField, Optional[TubeField], float, Optional[float]], TubeField]


def scheme_stepper(model: TubeModel, scheme: str) -> Stepper:
    """step(current, previous, dt, guard) for the named scheme; three_layer starts with one LW step."""
    def step(current, previous, dt, guard):
        if scheme == "three_layer" and previous is not None:
            return step_three_layer(current, previous, model, dt, guard)
        return step_lax_wendroff(current, model, dt, guard)
    return step


def evolve(initial: TubeField, model: TubeModel, config: MembraneConfig,
           reference: Optional[np.ndarray] = None, core: float = 10.0, center: float = 0.0,
           level: Optional[float] = None, stop_above: Optional[float] = None,
           keep_snapshots: bool = True, stepper: Optional[Stepper] = None,
           monitor: Optional[Callable[[TubeField], Dict[str, float]]] = None,
           dt: Optional[float] = None, guard_speed: Optional[float] = None) -> MembraneRun:
    """
    Advance the tube to config.T with the configured scheme.

    Every snapshot records max r, crests of r above the left end value, the
    sawtooth indicator over compressed zones and the smallest sigma1; with
    `reference` also the peak |r - reference| inside |Z - center| <= core, and
    with `level` the kink position where r crosses it. Scheme events stop the
    run and are recorded.

    Other models plug in through `stepper`, an already validated `dt`, the
    speed the blowup guard scales with and a `monitor` adding their own
    diagnostics to every sample.
    """
    settings = config.detectors
    if dt is None:
        dt = config.resolve_dt(initial, model)
    if stepper is None:
        stepper = scheme_stepper(model, config.scheme)
    if guard_speed is None:
        guard_speed = max_wave_speed(initial, model)
    guard = settings.blowup_guard * guard_speed
    Z = initial.Z
    baseline = float(initial.r[0])
    amplitude = float(np.max(np.abs(initial.r - baseline)))
    threshold = settings.split_fraction * amplitude if amplitude > 0 else np.inf
    mask = np.abs(Z - center) <= core
    series = DiagnosticsSeries()
    snapshots: List[Tuple[float, TubeField]] = []
    kink_at = [center]

    def sample(t: float, f: TubeField) -> Optional[float]:
        sigma1 = f.sigma1(model)
        compressed = _compressed_zone(sigma1)
        saw = sawtooth_indicator(f.r, compressed) if compressed.any() else 0.0
        positions, _ = find_crests(Z, f.r, threshold, baseline)
        extra = {"sawtooth": saw, "min_sigma1": float(np.min(sigma1))}
        deviation = None
        if reference is not None:
            deviation = float(np.max(np.abs(f.r - reference)[mask]))
            extra["deviation"] = deviation
        if level is not None:
            pos = mid_crossing(Z, f.r, level, kink_at[0])
            if pos is not None:
                kink_at[0] = pos
            extra["kink_position"] = np.nan if pos is None else pos
        if monitor is not None:
            extra.update(monitor(f))
        series.record(t, float(np.max(f.r)), positions, **extra)
        if keep_snapshots:
            snapshots.append((t, f.copy()))
        if saw > settings.sawtooth_threshold:
            raise SawtoothEvent(f"grid-scale oscillation {saw:.3g} in a compressed zone", indicator=saw)
        return deviation

    current, previous = initial.copy(), None
    steps = int(round(config.T / dt))
    every = max(1, int(round(config.snapshot_every / dt)))
    t_now = 0.0
    try:
        sample(t_now, current)
        for n in range(1, steps + 1):
            t_now = n * dt
            previous, current = current, stepper(current, previous, dt, guard)
            if n % every == 0:
                deviation = sample(t_now, current)
                if stop_above is not None and deviation is not None and deviation > stop_above:
                    break
    except SimulationEvent as event:
        series.add_event(t_now, event.kind, **event.payload)
    return MembraneRun(current, series, snapshots, dt)


def _kink_speed(series: DiagnosticsSeries, min_samples: int) -> SpeedFit:
    t = np.asarray(series.t)
    x = np.asarray(series.extra.get("kink_position", np.full(len(t), np.nan)))
    ok = np.isfinite(x)
    t_end = t[-1]
    return fit_speed(t[ok], x[ok], (0.5 * t_end, t_end), min_samples)


@dataclass(frozen=True)
class ShockTail:
    """Radiation behind a kink front set against the line test for its speed."""

    energy_mid: float
    energy_late: float
    radiating: bool
    line_verdict: str  # intersects | tangent | disjoint

    @property
    def consistent(self) -> bool:
        return self.radiating == (self.line_verdict == "intersects")

    def as_details(self) -> Dict[str, float]:
        return {
            "tail_energy": self.energy_late,
            "tail_energy_mid": self.energy_mid,
            "tail_radiating": float(self.radiating),
            "line_intersects": float(self.line_verdict == "intersects"),
            "tail_consistent": float(self.consistent),
        }


def shock_tail(run: MembraneRun, model: TubeModel, speed: float, settings: DetectorSettings,
               level: float, k_range: Tuple[float, float] = (1e-3, 1e3)) -> Optional[ShockTail]:
    """
    Tail energy behind the front over the late snapshots, and whether the line
    omega = |speed| k meets the minus branch of the state left behind.

    Behind is the side the kink came from. The tail radiates when its energy
    over the last quarter of the run stays above tail_decay times the energy
    over the second quarter and above the noise floor. None without snapshots.
    """
    if len(run.snapshots) < 4:
        return None
    times = [t for t, _ in run.snapshots]
    frames = [(f.Z, f.r) for _, f in run.snapshots]
    start = mid_crossing(frames[0][0], frames[0][1], level)
    ts, fronts = track_kink(times, frames, level, start)
    front_at = dict(zip(ts, fronts))
    last = run.snapshots[-1][1]
    end = -1 if speed < 0 else 0
    background = float(last.r[end])

    energies = []
    for t, f in run.snapshots[len(run.snapshots) // 2:]:
        x = front_at.get(float(t))
        if x is None:
            continue
        if speed < 0:
            region = (x + settings.tail_gap, x + settings.tail_gap + settings.tail_window)
        else:
            region = (x - settings.tail_gap - settings.tail_window, x - settings.tail_gap)
        energies.append(tail_energy(f.Z, f.r, background, region))
    if len(energies) < 2:
        return None
    half = len(energies) // 2
    mid, late = float(np.mean(energies[:half])), float(np.mean(energies[half:]))
    radiating = late > settings.tail_floor and late > settings.tail_decay * mid

    behind = UniformState(background, float(last.zprime[end]), model.p_star)
    hit = line_intersection_test(behind, abs(speed), "minus", k_range, model.material, model.geometry)
    return ShockTail(mid, late, bool(radiating), hit.verdict)


def classify_run(run: MembraneRun, config: MembraneConfig, experiment: str,
                 center: float = 0.0, model: Optional[TubeModel] = None,
                 level: Optional[float] = None) -> OutcomeRecord:
    """
    Outcome from the recorded events, the crest tracks, the kink track and the late snapshots.

    Step data classified with their model and kink level also carry the shock tail check.
    """
    series = run.series
    settings = config.detectors
    events = list(series.events)
    t_end = series.t[-1]
    for kind, outcome in (("blowup", "blowup"), ("non_correct", "non_correct"),
                          ("sawtooth", "non_correct"), ("negative_density", "non_correct")):
        event = series.first_event(kind)
        if event is not None:
            return OutcomeRecord(outcome, t_event=event.t, t_end=event.t, events=events,
                                 details=dict(event.payload))

    if experiment in ("riemann", "two_steps"):
        try:
            fit = _kink_speed(series, settings.min_fit_samples)
        except InsufficientSamplesError:
            return OutcomeRecord("inconclusive", t_end=t_end, events=events)
        details = {"kink_speed_stderr": fit.stderr, "crests_final": float(len(series.crest_positions[-1]))}
        if experiment == "two_steps":
            # the right kink mirrors the tracked left one
            details["width_rate"] = -2.0 * fit.speed
        if model is not None and level is not None:
            tail = shock_tail(run, model, fit.speed, settings, level)
            if tail is not None:
                details.update(tail.as_details())
        return OutcomeRecord("shock_fan", kink_speed=fit.speed, t_end=t_end, events=events,
                             details=details)

    amp = np.asarray(series.max_amp)
    if not run.snapshots:
        return OutcomeRecord("inconclusive", t_end=t_end, events=events)
    Z = run.field.Z
    baseline = float(run.snapshots[0][1].r[0])
    amplitude0 = float(amp[0] - baseline)
    if amplitude0 <= 0:
        kind = "standing" if np.ptp(amp) < 1e-9 * max(1.0, abs(baseline)) else "inconclusive"
        return OutcomeRecord(kind, t_end=t_end, events=events)
    threshold = settings.split_fraction * amplitude0
    times = [t for t, _ in run.snapshots]
    frames = [(Z, f.r) for _, f in run.snapshots]
    tracks, losses = track_pulses(times, frames, threshold, baseline, settings.track_max_jump)
    verdict = detect_split(tracks, threshold, settings.split_separation, settings.min_fit_samples)
    details = {"track_losses": float(losses), "max_r_final": float(amp[-1])}
    if verdict.found:
        details["speed_samples"] = float(min(verdict.samples))
        return OutcomeRecord("split", pulse_speeds=list(verdict.speeds), t_event=verdict.t_split,
                             t_end=t_end, events=events, details=details)

    half = len(run.snapshots) // 2
    if half >= 1:
        t1, f1 = run.snapshots[half]
        t2, f2 = run.snapshots[-1]
        grown = amp[half:] - baseline
        saturated = np.max(grown) - np.min(grown) < 0.05 * np.max(grown)
        if t1 > 0 and saturated and np.max(grown) > 1.05 * amplitude0:
            similar, error = detect_self_similar(Z, f1.r, t1, f2.r, t2, center, np.max(grown),
                                                 settings.self_similar_tol)
            details["collapse_error"] = error
            if similar:
                return OutcomeRecord("saturated_self_similar", t_end=t_end, events=events,
                                     details=details)
    if np.all(np.abs(amp - amp[0]) < 0.05 * amplitude0):
        return OutcomeRecord("standing", t_end=t_end, events=events, details=details)
    return OutcomeRecord("inconclusive", t_end=t_end, events=events, details=details)


def run_experiment(initial: TubeField, model: TubeModel, config: MembraneConfig,
                   experiment: str = "solitary", level: Optional[float] = None,
                   keep_snapshots: bool = True, tail_check: bool = True,
                   **run_options) -> Tuple[OutcomeRecord, MembraneRun]:
    """
    Evolve `initial` and classify the run.

    Step data (riemann, two_steps) track the crossing of `level`, by default the
    mean of the end radius and the centre radius, starting from its leftmost
    initial crossing, and get the shock tail check unless tail_check is off.
    `run_options` go to `evolve`.
    """
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment: {experiment}")
    Z = initial.Z
    center = 0.0
    if experiment in ("riemann", "two_steps"):
        if level is None:
            inner = initial.r[-1] if experiment == "riemann" else initial.r[int(np.argmin(np.abs(Z)))]
            level = 0.5 * (initial.r[0] + inner)
        start = mid_crossing(Z, initial.r, level)
        if start is None:
            raise ValueError(f"initial radius never crosses the kink level {level:.6g}")
        center = start
    else:
        level = None
    run = evolve(initial, model, config, center=center, level=level,
                 keep_snapshots=keep_snapshots or experiment in ("solitary", "perturbed"),
                 **run_options)
    return classify_run(run, config, experiment, center, model if tail_check else None, level), run


# --- eigenfunction --------------------------------------------------------

def _scaled(dX: np.ndarray, dV: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    scale = dX[1][int(np.argmax(np.abs(dX[1])))]
    return dX / scale, dV / scale


def extract_eigenfunction(profile: WaveProfile, model: TubeModel, config: MembraneConfig,
                          method: str = "nonlinear_difference", core: float = 10.0,
                          seed: int = 0, renorm_every: float = 1.0,
                          min_rate: float = 0.01) -> TubeEigen:
    """
    Dominant unstable disturbance of the standing wave `profile`.

    nonlinear_difference: run from the profile at rest and take X(t*) - X_s
    inside the exponential window of the core deviation, whose lower edge
    sits ten times above the initial discretisation noise.
    linearized: evolve the equations linearised about X_s from a seeded
    even disturbance with periodic renormalisation; a weak or irregular
    log-norm slope is reported as oscillation.
    """
    if method not in EIGEN_METHODS:
        raise ValueError(f"unknown eigenfunction method: {method}")
    Z = config.grid()
    base = make_initial_solitary(profile, Z, model.material, model.geometry)
    if method == "nonlinear_difference":
        return _eigen_by_difference(base, profile, model, config, core)
    return _eigen_linearized(base, model, config, core, seed, renorm_every, min_rate)


def _eigen_by_difference(base: TubeField, profile: WaveProfile, model: TubeModel,
                         config: MembraneConfig, core: float) -> TubeEigen:
    settings = config.detectors
    amplitude = profile.amplitude
    lo, hi = settings.growth_window
    upper = hi * amplitude
    run = evolve(base, model, config, reference=base.r, core=core, stop_above=2.0 * upper)
    t = np.asarray(run.series.t)
    deviation = np.asarray(run.series.extra["deviation"])
    end = profile.end_state
    ul, _ = wave_speeds(end.zprime0, 0.0, end.r0, model.material, model.geometry)
    t_min = core / ul
    noise = float(np.max(deviation[t <= t_min]))
    lower = max(lo * amplitude, 10.0 * noise)
    fit = fit_growth_rate(t, deviation, lower, upper, settings.min_fit_samples, t_min=t_min)

    target = np.sqrt(lower * upper)
    idx = np.nonzero((t >= fit.t_start) & (t <= fit.t_end))[0]
    star = idx[int(np.argmin(np.abs(np.log(deviation[idx] / target))))]
    t_star, snap = run.snapshots[star]
    dX, dV = _scaled(snap.positions - base.positions, snap.velocities - base.velocities)
    return TubeEigen(base.Z, dX[0], dX[1], dV[0], dV[1], fit.rate, fit.stderr, "exponential",
                     float(t_star))


def _eigen_linearized(base: TubeField, model: TubeModel, config: MembraneConfig, core: float,
                      seed: int, renorm_every: float, min_rate: float) -> TubeEigen:
    Z = base.Z
    dZ = base.dZ
    X0 = base.positions
    mask = np.abs(Z) <= core
    rng = np.random.default_rng(seed)
    noise = rng.normal(size=Z.shape) * np.exp(-Z ** 2 / (2.0 * core ** 2))
    dX = np.zeros_like(X0)
    dX[1] = 0.5 * (noise + noise[::-1])
    dX[1, :FROZEN] = dX[1, -FROZEN:] = 0.0
    dV = np.zeros_like(X0)

    def accel(d):
        h = 1e-6
        plus = tube_acceleration(X0 + h * d, model, dZ)
        minus = tube_acceleration(X0 - h * d, model, dZ)
        return (plus - minus) / (2.0 * h)

    def core_norm(d):
        return l2_norm(d[:, mask], dZ)

    dt = config.resolve_dt(base, model)
    steps = int(round(config.T / dt))
    every = max(1, int(round(config.snapshot_every / dt)))
    renorm = max(1, int(round(renorm_every / dt)))
    scale0 = core_norm(dX)
    dX, dV = dX / scale0, dV / scale0
    dXp = dVp = None
    log_scale = 0.0
    times, log_norm = [0.0], [0.0]
    for n in range(1, steps + 1):
        if config.scheme == "three_layer" and dXp is not None:
            nX, nV = three_layer_update(dX, dV, dXp, dVp, dt, accel)
        else:
            nX, nV = lax_wendroff_update(dX, dV, dt, accel)
        dXp, dVp, dX, dV = dX, dV, nX, nV
        if n % renorm == 0:
            scale = core_norm(dX)
            if scale > 0:
                log_scale += np.log(scale)
                dX, dV, dXp, dVp = dX / scale, dV / scale, dXp / scale, dVp / scale
        if n % every == 0:
            times.append(n * dt)
            log_norm.append(log_scale + np.log(core_norm(dX)))

    t = np.asarray(times)
    ln = np.asarray(log_norm)
    half = len(t) // 2
    fit = linregress(t[half:], ln[half:])
    exponential = fit.slope > min_rate and fit.rvalue ** 2 > 0.99
    dX, dV = _scaled(dX, dV)
    return TubeEigen(Z, dX[0], dX[1], dV[0], dV[1], float(fit.slope), float(fit.stderr),
                     "exponential" if exponential else "oscillation")


def eigen_agreement(a: TubeEigen, b: TubeEigen, core: float = 10.0) -> float:
    """Correlation of the r-components inside the core."""
    mask = np.abs(a.Z) <= core
    return correlation(a.dr[mask], b.dr[mask])


# --- kinks ----------------------------------------------------------------

def measure_kink_speed(setup: RiemannSetup, model: TubeModel, config: MembraneConfig) -> SpeedFit:
    """Speed of the mid-level crossing over the second half of a Riemann run."""
    left, _ = setup.end_states(model.material, model.geometry)
    model = replace(model, p_star=left.p_star)
    initial = make_riemann(setup, config.grid(), model.material, model.geometry)
    run = evolve(initial, model, config, center=setup.Zc, level=setup.level, keep_snapshots=False)
    if run.series.events:
        event = run.series.events[0]
        raise UnstableEndStateError(
            f"Riemann run for r02={setup.r02:.10g} stopped at t={event.t:.4g}: {event.kind}"
        )
    return _kink_speed(run.series, config.detectors.min_fit_samples)


def _kink_task(task: Tuple[RiemannSetup, TubeModel, MembraneConfig]) -> float:
    setup, model, config = task
    return measure_kink_speed(setup, model, config).speed


def sample_kink_speeds(r02s: Sequence[float], r01: float, z01p: float, model: TubeModel,
                       config: MembraneConfig, L: float = 1.0, workers: int = 1) -> np.ndarray:
    """Kink speeds of independent Riemann runs, one per r02, in input order."""
    material, geometry = model.material, model.geometry
    tasks = []
    for r02 in r02s:
        setup = RiemannSetup.from_radii(r01, z01p, float(r02), material, geometry, 0.0, L)
        _, right = setup.end_states(material, geometry)
        if not correctness_and_stability(right, material, geometry).stable:
            raise UnstableEndStateError(
                f"uniform state r={right.r0:.10g}, z'={right.zprime0:.10g} is unstable"
            )
        tasks.append((setup, model, config))
    if workers <= 1:
        return np.asarray(list(map(_kink_task, tasks)))
    with mp.Pool(processes=workers) as pool:
        return np.asarray(pool.map(_kink_task, tasks))


def find_standing_kink(r01: float, z01p: float, interval: Tuple[float, float], model: TubeModel,
                       config: MembraneConfig, tol: Optional[float] = None, L: float = 1.0,
                       workers: int = 1, max_rounds: int = 30, half_window: float = 15.0) -> StandingKink:
    """
    Vary r02 until the Riemann kink stands still.

    Each round evaluates max(1, workers) equally spaced interior candidates
    and keeps the sub-bracket where the kink speed changes sign, which is
    bisection for one worker. The default tolerance is 1e-2 U_l of state 1.
    """
    material, geometry = model.material, model.geometry
    left = UniformState.at_equilibrium(r01, z01p, material, geometry)
    model = replace(model, p_star=left.p_star)
    if tol is None:
        ul, _ = wave_speeds(z01p, 0.0, r01, material, geometry)
        tol = 1e-2 * ul
    lo, hi = sorted(interval)
    s_lo, s_hi = sample_kink_speeds([lo, hi], r01, z01p, model, config, L, workers)
    evaluations = 2
    if s_lo * s_hi > 0:
        raise NoSignChangeError(
            f"kink speeds {s_lo:.4g} and {s_hi:.4g} at r02 = {lo:g}, {hi:g} share a sign", (s_lo, s_hi)
        )

    best_r, best_s = (lo, s_lo) if abs(s_lo) <= abs(s_hi) else (hi, s_hi)
    m = max(1, workers)
    for _ in range(max_rounds):
        if abs(best_s) < tol or hi - lo < 1e-9 * hi:
            break
        candidates = lo + (hi - lo) * np.arange(1, m + 1) / (m + 1)
        speeds = sample_kink_speeds(candidates, r01, z01p, model, config, L, workers)
        evaluations += m
        rs = np.concatenate(([lo], candidates, [hi]))
        ss = np.concatenate(([s_lo], speeds, [s_hi]))
        j = int(np.argmin(np.abs(speeds)))
        best_r, best_s = float(candidates[j]), float(speeds[j])
        for i in range(len(rs) - 1):
            if ss[i] * ss[i + 1] <= 0:
                lo, hi, s_lo, s_hi = rs[i], rs[i + 1], ss[i], ss[i + 1]
                break

    return _standing_profile(r01, z01p, best_r, best_s, model, config, L, half_window, evaluations)


def _standing_profile(r01, z01p, r02, speed, model, config, L, half_window, evaluations) -> StandingKink:
    setup = RiemannSetup.from_radii(r01, z01p, r02, model.material, model.geometry, 0.0, L)
    initial = make_riemann(setup, config.grid(), model.material, model.geometry)
    run = evolve(initial, model, config, level=setup.level, keep_snapshots=False)
    Z = run.field.Z
    pos = mid_crossing(Z, run.field.r, setup.level, 0.0)
    pos = 0.0 if pos is None else pos
    window = np.abs(Z - pos) <= half_window
    return StandingKink(r02, setup.z02p, speed, Z[window] - pos, run.field.r[window],
                        run.field.zprime[window], evaluations)


def kink_mismatch(standing: StandingKink, profile: WaveProfile) -> float:
    """Max |r_pde - r_ode| over the kink's left half, relative to the jump amplitude."""
    left = standing.Z <= 0
    r_ode, _ = profile.sample(standing.Z[left])
    jump = profile.end_state_right.r0 - profile.end_state.r0
    return float(np.max(np.abs(standing.r[left] - r_ode)) / abs(jump))
