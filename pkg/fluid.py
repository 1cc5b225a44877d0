"""Gas-filled tube: the membrane equations with the pressure of a low-compressible gas.

The gas adds its velocity v and density rho_f on the same Lagrangian grid.
Mass is carried as m = rho_f r^2 z', for which the modified mass law is the
conservation law m_t + (rho_f r^2 (v - z_t))' = 0; the momentum law is

    rho_f (v_t z' - v' z_t + v v') + P' = 0,   P = P0 + a^2 (rho_f - rho0).

Only the Lax-Wendroff type scheme is used for this model.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from dispersion import numeric_dispersion
from material import EQUILIBRIUM_TOL, MaterialParams, TubeGeometry, UniformState, wave_speeds
from membrane import (
    COURANT,
    COURANT_LIMIT,
    FROZEN,
    EquilibriumError,
    MembraneConfig,
    MembraneRun,
    RiemannSetup,
    TubeField,
    TubeModel,
    check_velocity_guard,
    make_riemann,
    max_wave_speed,
    run_experiment,
    stable_time_step,
    tube_acceleration,
)
from wavelab import BlowupEvent, CorrectnessLossEvent, NegativeDensityEvent, OutcomeRecord

SOUND_SPEED_FACTOR = 10.0
MASS_DRIFT_TOL = 1e-3
GAS_EXPERIMENTS = ("solitary", "riemann", "two_steps")


@dataclass(frozen=True)
class EquationOfState:
    """Linear stiff law P = P0 + a^2 (rho_f - rho0)."""

    P0: float
    rho0: float = 1.0
    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"sound speed a must be positive, got {self.a}")
        if not self.rho0 > 0:
            raise ValueError(f"reference density must be positive, got {self.rho0}")

    @classmethod
    def for_state(cls, state: UniformState, material: MaterialParams, geometry: TubeGeometry,
                  rho0: float = 1.0, a: Optional[float] = None,
                  factor: float = SOUND_SPEED_FACTOR) -> "EquationOfState":
        """Gas at rest balancing `state`: P(rho0) = p*, a defaulting to factor * U_l."""
        if a is None:
            ul, _ = wave_speeds(state.zprime0, 0.0, state.r0, material, geometry)
            a = factor * float(ul)
        return cls(state.p_star, rho0, a)

    def pressure(self, rho_f):
        return self.P0 + self.a ** 2 * (np.asarray(rho_f, dtype=float) - self.rho0)


@dataclass
class GasTubeField(TubeField):
    v: np.ndarray = None
    rho_f: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        if self.v is None or self.rho_f is None:
            raise ValueError("gas velocity and density are required")
        self.v = np.asarray(self.v, dtype=float)
        self.rho_f = np.asarray(self.rho_f, dtype=float)
        if self.v.shape != self.r.shape or self.rho_f.shape != self.r.shape:
            raise ValueError("v and rho_f must match the membrane grid")

    @classmethod
    def from_membrane(cls, base: TubeField, v, rho_f) -> "GasTubeField":
        shape = base.r.shape
        return cls(base.z.copy(), base.r.copy(), base.zdot.copy(), base.rdot.copy(), base.Z0, base.dZ,
                   np.broadcast_to(np.asarray(v, dtype=float), shape).copy(),
                   np.broadcast_to(np.asarray(rho_f, dtype=float), shape).copy())

    @property
    def mass_density(self) -> np.ndarray:
        return self.rho_f * self.r * self.r * self.zprime

    def copy(self) -> "GasTubeField":
        return GasTubeField(self.z.copy(), self.r.copy(), self.zdot.copy(), self.rdot.copy(),
                            self.Z0, self.dZ, self.v.copy(), self.rho_f.copy())

    def to_frame(self, model: TubeModel, eos: Optional[EquationOfState] = None) -> pd.DataFrame:
        frame = super().to_frame(model)
        frame["v"] = self.v
        frame["rho_f"] = self.rho_f
        if eos is not None:
            frame["P"] = eos.pressure(self.rho_f)
        return frame


@dataclass
class FamilyReport:
    U: float
    verdict: str  # solitary | radiating
    crossing_branches: List[int]
    min_speeds: List[float]
    max_speeds: List[float]
    null_parametric: bool
    notes: List[str] = field(default_factory=list)

    @property
    def intersects(self) -> bool:
        return bool(self.crossing_branches)


def gas_mass(f: GasTubeField) -> float:
    """Total gas mass sum(rho_f r^2 z') dZ."""
    return float(np.sum(f.mass_density) * f.dZ)


# --- scheme ---------------------------------------------------------------

def _stack(f: GasTubeField) -> np.ndarray:
    return np.vstack((f.z, f.r, f.zdot, f.rdot, f.mass_density, f.v))


def _unstack(Y: np.ndarray, Z0: float, dZ: float) -> GasTubeField:
    z, r, zdot, rdot, m, v = Y
    zprime = np.gradient(z, dZ)
    return GasTubeField(z, r, zdot, rdot, Z0, dZ, v, m / (r * r * zprime))


def _check_density(rho_f: np.ndarray):
    bad = np.nonzero(~(rho_f > 0))[0]
    if bad.size:
        k = int(bad[0])
        raise NegativeDensityEvent(f"gas density not positive at node {k}", node=float(k),
                                   rho_f=float(rho_f[k]))


def gas_rates(Y: np.ndarray, model: TubeModel, eos: EquationOfState, dZ: float) -> np.ndarray:
    """Time derivatives of the stacked unknowns (z, r, zdot, rdot, m, v)."""
    z, r, zdot, rdot, m, v = Y
    if not np.all(np.isfinite(Y)):
        raise BlowupEvent("gas tube state is no longer finite")
    zprime = np.gradient(z, dZ)
    bad = np.nonzero(~(zprime > 0))[0]
    if bad.size:
        raise CorrectnessLossEvent(f"axial stretch not positive at node {bad[0]}", node=float(bad[0]))
    rho_f = m / (r * r * zprime)
    _check_density(rho_f)
    P = eos.pressure(rho_f)

    rates = np.zeros_like(Y)
    rates[0], rates[1] = zdot, rdot
    rates[2:4] = tube_acceleration(Y[:2], model, dZ, pressure=P)
    flux = rho_f * r * r * (v - zdot)
    rates[4, 1:-1] = -(flux[2:] - flux[:-2]) / (2.0 * dZ)
    vprime = np.gradient(v, dZ)
    rates[5] = (vprime * (zdot - v) - np.gradient(P, dZ) / rho_f) / zprime
    rates[:, :FROZEN] = 0.0
    rates[:, -FROZEN:] = 0.0
    return rates


def gas_lax_wendroff_update(Y: np.ndarray, dt: float, rates) -> np.ndarray:
    """
    Predictor to the half level, corrector with rates there.

    Positions (rows 0-1) are predicted directly; the first-order rows use the
    Lax average of their neighbours. The corrector is conservative in m.
    """
    s = slice(FROZEN, -FROZEN)
    f = rates(Y)
    Yh = Y.copy()
    Yh[:2, s] = Y[:2, s] + 0.5 * dt * f[:2, s]
    left, right = Y[2:, FROZEN - 1:-FROZEN - 1], Y[2:, FROZEN + 1:-FROZEN + 1]
    Yh[2:, s] = 0.5 * Y[2:, s] + 0.25 * (left + right) + 0.5 * dt * f[2:, s]
    Yn = Y.copy()
    Yn[:, s] = Y[:, s] + dt * rates(Yh)[:, s]
    return Yn


def step_lax_wendroff_gas(f: GasTubeField, model: TubeModel, eos: EquationOfState, dt: float,
                          guard: Optional[float] = None) -> GasTubeField:
    Y = gas_lax_wendroff_update(_stack(f), dt, lambda X: gas_rates(X, model, eos, f.dZ))
    check_velocity_guard(Y[:2], np.vstack((Y[2:4], Y[5])), guard)
    nxt = _unstack(Y, f.Z0, f.dZ)
    _check_density(nxt.rho_f)
    return nxt


def gas_signal_speed(f: GasTubeField, model: TubeModel, eos: EquationOfState) -> float:
    return float(np.max(np.abs(f.v))) + eos.a + max_wave_speed(f, model)


def gas_time_step(f: GasTubeField, model: TubeModel, eos: EquationOfState,
                  courant: float = COURANT) -> float:
    """courant * dZ / (max|v| + a + max(U_l, U_tau)), tightened by bending when enabled."""
    return min(courant * f.dZ / gas_signal_speed(f, model, eos),
               stable_time_step(f, model, courant))


def resolve_gas_dt(config: MembraneConfig, initial: GasTubeField, model: TubeModel,
                   eos: EquationOfState) -> float:
    if config.scheme != "lax_wendroff":
        raise ValueError("the gas-filled tube runs with the lax_wendroff scheme only")
    if config.dt is None:
        bound = gas_time_step(initial, model, eos)
        return config.snapshot_every / np.ceil(config.snapshot_every / bound)
    limit = gas_time_step(initial, model, eos, COURANT_LIMIT)
    if config.dt >= limit:
        raise ValueError(f"dt={config.dt:.3g} violates the stability bound dt < {limit:.3g}")
    return config.dt


# --- initial data ---------------------------------------------------------

def with_gas(base: TubeField, eos: EquationOfState, v: float = 0.0) -> GasTubeField:
    """Fill a membrane field with gas at the reference density moving with speed v."""
    return GasTubeField.from_membrane(base, v, eos.rho0)


def make_riemann_gas(setup: RiemannSetup, eos: EquationOfState, Z: np.ndarray,
                     material: MaterialParams, geometry: TubeGeometry,
                     v_inf: float = 0.0) -> GasTubeField:
    """Membrane Riemann step with the gas at rest at rho0 (or moving with v_inf)."""
    left, _ = setup.end_states(material, geometry)
    if abs(eos.pressure(eos.rho0) - left.p_star) > EQUILIBRIUM_TOL:
        raise EquilibriumError(
            f"gas pressure {float(eos.pressure(eos.rho0)):.10g} does not balance "
            f"the end states at p*={left.p_star:.10g}"
        )
    return with_gas(make_riemann(setup, Z, material, geometry), eos, v_inf)


# --- runs -----------------------------------------------------------------

def run_gas_experiment(initial: GasTubeField, model: TubeModel, eos: EquationOfState,
                       config: MembraneConfig, experiment: str = "riemann",
                       level: Optional[float] = None,
                       keep_snapshots: bool = True) -> Tuple[OutcomeRecord, MembraneRun]:
    """
    Evolve and classify a gas-filled tube run.

    Each sample also records the total gas mass, its drift relative to the
    start, the smallest density and the largest gas speed.
    """
    if experiment not in GAS_EXPERIMENTS:
        raise ValueError(f"unknown gas experiment: {experiment}")
    dt = resolve_gas_dt(config, initial, model, eos)
    mass0 = gas_mass(initial)

    def monitor(f: GasTubeField) -> Dict[str, float]:
        mass = gas_mass(f)
        return {
            "mass": mass,
            "mass_drift": abs(mass - mass0) / mass0,
            "min_rho_f": float(np.min(f.rho_f)),
            "max_v": float(np.max(np.abs(f.v))),
        }

    def stepper(current, previous, step, guard):
        return step_lax_wendroff_gas(current, model, eos, step, guard)

    # the tail check reads the membrane branches, not the gas ones
    outcome, run = run_experiment(initial, model, config, experiment, level, keep_snapshots,
                                  tail_check=False, stepper=stepper, monitor=monitor, dt=dt,
                                  guard_speed=gas_signal_speed(initial, model, eos))
    drift = float(np.max(run.series.extra.get("mass_drift", [0.0])))
    outcome.details["mass_drift_max"] = drift
    outcome.details["mass_conserved"] = float(drift < MASS_DRIFT_TOL)
    return outcome, run


# --- solitary families ----------------------------------------------------

def classify_solitary_families(state: UniformState, eos: EquationOfState, U: float,
                               material: MaterialParams, geometry: TubeGeometry,
                               bending_c: float = 0.0, v_inf: float = 0.0,
                               k_range: Tuple[float, float] = (1e-2, 10.0),
                               n_samples: int = 300) -> FamilyReport:
    """
    Does the line omega = U k meet any of the three gas-tube branches?

    A line clear of every branch admits a solitary-wave shock structure;
    a crossing means radiation and a stochastic structure. Branches are the
    three largest real frequencies at each k, sorted.
    """
    ks = np.geomspace(k_range[0], k_range[1], n_samples)
    omegas = np.empty((n_samples, 3))
    for i, k in enumerate(ks):
        roots = numeric_dispersion("fluid_gas", state, k, material, geometry,
                                   bending_c=bending_c, eos_a=eos.a, eos_rho0=eos.rho0, v_inf=v_inf)
        omegas[i] = np.sort(roots.real)[-3:]
    speeds = omegas / ks[:, None]
    gaps = omegas - U * ks[:, None]
    crossing = [b for b in range(3) if np.any(gaps[:, b] > 0) and np.any(gaps[:, b] < 0)]
    notes = []
    null_parametric = v_inf == 0.0
    if null_parametric:
        notes.append("standing solitary waves at v = 0 are null-parametric and typically unstable")
    return FamilyReport(
        U=float(U),
        verdict="radiating" if crossing else "solitary",
        crossing_branches=crossing,
        min_speeds=[float(s) for s in speeds.min(axis=0)],
        max_speeds=[float(s) for s in speeds.max(axis=0)],
        null_parametric=null_parametric,
        notes=notes,
    )
