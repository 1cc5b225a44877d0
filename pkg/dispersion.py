"""Linear waves on a uniform pressurised tube.

The closed-form relation covers the fixed-pressure membrane. The numeric
route linearises the pointwise continuum rates of any model by finite
differences and solves the resulting eigenproblem, which also covers the
bending-corrected and gas-filled tubes.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.linalg import eigvals, eigvalsh
from scipy.optimize import brentq, minimize_scalar

from material import (
    MaterialParams,
    TubeGeometry,
    UniformState,
    reduced_derivatives,
)

TANGENCY_TOL = 1e-3
MODELS = ("membrane", "membrane_bending", "fluid_gas")


@dataclass(frozen=True)
class DispersionCoefficients:
    g: float
    f: float
    Ul: complex
    Utau: complex
    omega0: complex
    cross: float
    # constituents kept for the symbol matrix
    W1: float
    W11: float
    W12: float
    W22: float
    stiffness: float  # W22/R - P* z0'


@dataclass(frozen=True)
class DispersionSample:
    k: float
    omega_plus: complex
    omega_minus: complex
    lambda1: float = 1.0

    @property
    def k_euler(self) -> float:
        return self.k / self.lambda1


@dataclass(frozen=True)
class CorrectnessReport:
    sigma1_positive: bool
    Ul_real: bool
    Utau_real: bool
    omega0_real: bool
    coupling_ok: bool
    equilibrium_ok: bool
    long_wave_ok: bool

    @property
    def correct(self) -> bool:
        return self.Ul_real and self.Utau_real

    @property
    def stable(self) -> bool:
        return self.correct and self.omega0_real and self.coupling_ok and self.long_wave_ok

    def as_dict(self) -> Dict[str, bool]:
        return {
            "sigma1_positive": self.sigma1_positive,
            "Ul_real": self.Ul_real,
            "Utau_real": self.Utau_real,
            "omega0_real": self.omega0_real,
            "coupling_ok": self.coupling_ok,
            "long_wave_ok": self.long_wave_ok,
            "equilibrium_ok": self.equilibrium_ok,
            "correct": self.correct,
            "stable": self.stable,
        }


@dataclass(frozen=True)
class IntersectionResult:
    verdict: str  # intersects | tangent | disjoint
    crossings: List[float]
    min_gap: float
    tangent_k: Optional[float] = None


def coefficients(state: UniformState, material: MaterialParams,
                 geometry: TubeGeometry) -> DispersionCoefficients:
    """Evaluate g, f, U_l, U_tau, omega_0 and the coupling term at the state."""
    R, rho = geometry.R, geometry.rho
    zp, r0, p = state.zprime0, state.r0, state.p_star
    d = reduced_derivatives(zp, r0 / R, material)

    g = d.W11 / rho
    f = d.W1 / (rho * zp)
    stiffness = d.W22 / R - p * zp
    return DispersionCoefficients(
        g=g,
        f=f,
        Ul=complex(np.sqrt(complex(g))),
        Utau=complex(np.sqrt(complex(f))),
        omega0=complex(np.sqrt(complex(stiffness / (rho * R)))),
        cross=p * r0 - d.W12,
        W1=d.W1,
        W11=d.W11,
        W12=d.W12,
        W22=d.W22,
        stiffness=stiffness,
    )


def omega(state: UniformState, k: float, branch: str, material: MaterialParams,
          geometry: TubeGeometry) -> complex:
    """
    Closed-form frequency of the plus or minus branch at wavenumber k.

    The sign before the inner radical selects the branch; the outer root is
    taken on the principal branch so imaginary frequencies stay representable.
    """
    if branch not in ("plus", "minus"):
        raise ValueError(f"branch must be 'plus' or 'minus', got {branch}")
    c = coefficients(state, material, geometry)
    R, rho, zp = geometry.R, geometry.rho, state.zprime0
    k2 = k * k

    diag_tau = R * c.W1 / zp * k2
    b = -diag_tau + R * c.W11 * k2 + c.stiffness
    inner = b * b + 4.0 * (c.cross ** 2 - (-c.stiffness) * (R * c.W1 / zp - R * c.W11)) * k2
    sign = 1.0 if branch == "plus" else -1.0
    omega2 = c.f * k2 + (b + sign * np.sqrt(complex(inner))) / (2.0 * rho * R)
    return complex(np.sqrt(complex(omega2)))


def symbol_matrix(state: UniformState, k: float, material: MaterialParams,
                  geometry: TubeGeometry) -> np.ndarray:
    """Hermitian 2x2 symbol of the linearised membrane, scaled so its eigenvalues are omega^2."""
    c = coefficients(state, material, geometry)
    R, zp = geometry.R, state.zprime0
    M = np.array([
        [R * c.W11 * k * k, 1j * k * c.cross],
        [-1j * k * c.cross, R * c.W1 / zp * k * k + c.stiffness],
    ])
    return M / (geometry.rho * R)


def branch_labels(g: float, f: float, rel_tol: float = 1e-12) -> Dict[str, str]:
    """Label the plus/minus branches by their large-k limit."""
    if abs(g - f) <= rel_tol * max(abs(g), abs(f), 1.0):
        return {"plus": "degenerate", "minus": "degenerate"}
    if g > f:
        return {"plus": "longitudinal", "minus": "transversal"}
    return {"plus": "transversal", "minus": "longitudinal"}


def classify_branches(state: UniformState, material: MaterialParams,
                      geometry: TubeGeometry, rel_tol: float = 1e-12) -> Dict[str, str]:
    c = coefficients(state, material, geometry)
    return branch_labels(c.g, c.f, rel_tol)


def correctness_and_stability(state: UniformState, material: MaterialParams,
                              geometry: TubeGeometry) -> CorrectnessReport:
    c = coefficients(state, material, geometry)
    R, rho = geometry.R, geometry.rho
    return CorrectnessReport(
        sigma1_positive=bool(c.W1 > 0),
        Ul_real=bool(c.g > 0),
        Utau_real=bool(c.f > 0),
        omega0_real=bool(c.stiffness > 0),
        coupling_ok=bool(c.g > c.cross ** 2 / (rho * R)),
        equilibrium_ok=state.check_equilibrium(material, geometry),
        long_wave_ok=bool(R * c.W11 * c.stiffness > c.cross ** 2),
    )


def long_wave_speed(state: UniformState, material: MaterialParams,
                    geometry: TubeGeometry, k: float = 1e-4) -> complex:
    """U0 from the k -> 0 limit of the minus branch (Richardson on two samples)."""
    u1 = omega(state, k, "minus", material, geometry) / k
    u2 = omega(state, k / 2.0, "minus", material, geometry) / (k / 2.0)
    return (4.0 * u2 - u1) / 3.0


def saddle_decay_rate(state: UniformState, material: MaterialParams,
                      geometry: TubeGeometry) -> complex:
    """Spatial rate kappa of standing (omega = 0) disturbances, k = i*kappa."""
    c = coefficients(state, material, geometry)
    R, zp = geometry.R, state.zprime0
    kappa2 = (R * c.W11 * c.stiffness - c.cross ** 2) * zp / (R * R * c.W11 * c.W1)
    return complex(np.sqrt(complex(kappa2)))


def sweep(state: UniformState, ks: Sequence[float], material: MaterialParams,
          geometry: TubeGeometry) -> pd.DataFrame:
    rows = []
    for k in ks:
        wp = omega(state, k, "plus", material, geometry)
        wm = omega(state, k, "minus", material, geometry)
        rows.append({
            "k": k,
            "k_euler": k / state.zprime0,
            "re_omega_plus": wp.real,
            "im_omega_plus": wp.imag,
            "re_omega_minus": wm.real,
            "im_omega_minus": wm.imag,
        })
    return pd.DataFrame(rows)


def line_intersection_test(state: UniformState, U: float, branch: str, k_range,
                           material: MaterialParams, geometry: TubeGeometry,
                           n_samples: int = 2000, tol: float = TANGENCY_TOL) -> IntersectionResult:
    """
    Does the line omega = U k meet the chosen branch for k in k_range?

    The gap omega(k) - U k is sampled on a log grid; a crossing needs the gap
    to leave the tolerance band on both sides, a touch inside the band is a
    tangency.
    """
    k_lo, k_hi = k_range
    ks = np.geomspace(k_lo, k_hi, n_samples)

    def gap(k):
        w = omega(state, k, branch, material, geometry)
        return (w.real - U * k) / max(abs(w), 1e-300)

    gaps = np.array([gap(k) for k in ks])
    above = gaps > tol
    below = gaps < -tol

    crossings = []
    if above.any() and below.any():
        signs = np.sign(gaps)
        for i in range(n_samples - 1):
            if signs[i] * signs[i + 1] < 0:
                crossings.append(float(brentq(gap, ks[i], ks[i + 1], xtol=1e-14)))
        return IntersectionResult("intersects", crossings, float(np.min(np.abs(gaps))))

    i_min = int(np.argmin(np.abs(gaps)))
    lo = ks[max(i_min - 1, 0)]
    hi = ks[min(i_min + 1, n_samples - 1)]
    refined = minimize_scalar(lambda lk: abs(gap(np.exp(lk))), bounds=(np.log(lo), np.log(hi)),
                              method="bounded", options={"xatol": 1e-12})
    min_gap = min(float(refined.fun), float(abs(gaps[i_min])))
    if min_gap < tol:
        return IntersectionResult("tangent", [], min_gap, float(np.exp(refined.x)))
    return IntersectionResult("disjoint", [], min_gap)


# --- numeric dispersion -------------------------------------------------

@dataclass(frozen=True)
class LinearisationContext:
    material: MaterialParams
    geometry: TubeGeometry
    p_star: float
    bending_c: float = 0.0
    eos_a: float = 0.0
    eos_rho0: float = 1.0
    eos_P0: float = 0.0

    def pressure(self, rho_f: float) -> float:
        return self.eos_P0 + self.eos_a ** 2 * (rho_f - self.eos_rho0)


def membrane_rates(X, XZ, XZZ, XZ4, ctx: LinearisationContext, P: Optional[float] = None):
    """
    Continuum rates d/dt (z, r, zdot, rdot) of the tube equations at one point.

    X, XZ, XZZ, XZ4 are the state and its first, second and fourth Z-derivatives.
    """
    R, rho = ctx.geometry.R, ctx.geometry.rho
    p = ctx.p_star if P is None else P
    r, w, s = X[1], X[2], X[3]
    u, q = XZ[0], XZ[1]
    uZ, qZ = XZZ[0], XZZ[1]

    l1 = np.hypot(u, q)
    d = reduced_derivatives(l1, r / R, ctx.material)
    phi = d.W1 / l1
    phi_l = (d.W11 * l1 - d.W1) / (l1 * l1)
    phi_Z = phi_l * (u * uZ + q * qZ) / l1 + d.W12 / l1 * q / R

    flux_z = R * (phi_Z * u + phi * uZ)
    flux_r = R * (phi_Z * q + phi * qZ)
    wdot = (flux_z - p * r * q) / (rho * R)
    sdot = (flux_r - d.W2 + p * r * u - ctx.bending_c * XZ4[1]) / (rho * R)
    return [w, s, wdot, sdot]


def gas_tube_rates(X, XZ, XZZ, XZ4, ctx: LinearisationContext):
    """Membrane rates with P from the equation of state plus gas mass and momentum."""
    r, w, s, v, rho_f = X[1], X[2], X[3], X[4], X[5]
    u, q = XZ[0], XZ[1]
    wZ, vZ, rhoZ = XZ[2], XZ[4], XZ[5]
    P = ctx.pressure(rho_f)

    rates = membrane_rates(X, XZ, XZZ, XZ4, ctx, P=P)
    mass_flux_Z = (rhoZ * r * r + 2.0 * rho_f * r * q) * (w - v) + rho_f * r * r * (wZ - vZ)
    rho_dot = (mass_flux_Z - 2.0 * rho_f * r * s * u - rho_f * r * r * wZ) / (r * r * u)
    v_dot = (vZ * w - v * vZ - ctx.eos_a ** 2 * rhoZ / rho_f) / u
    return rates + [v_dot, rho_dot]


def _jacobians(rates: Callable, base: List[np.ndarray], ctx) -> List[np.ndarray]:
    """Central finite-difference Jacobians of `rates` w.r.t. each argument block."""
    n = len(base[0])
    jacs = []
    for block in range(len(base)):
        J = np.zeros((n, n))
        for j in range(n):
            h = 1e-6 * (1.0 + abs(base[block][j]))
            plus = [b.copy() for b in base]
            minus = [b.copy() for b in base]
            plus[block][j] += h
            minus[block][j] -= h
            J[:, j] = (np.asarray(rates(*plus, ctx)) - np.asarray(rates(*minus, ctx))) / (2.0 * h)
        jacs.append(J)
    return jacs


def numeric_dispersion(model: str, state: UniformState, k: float,
                       material: MaterialParams, geometry: TubeGeometry,
                       bending_c: float = 0.0, eos_a: float = 0.0,
                       eos_rho0: float = 1.0, v_inf: float = 0.0) -> np.ndarray:
    """
    All frequencies of the linearised model at wavenumber k, sorted.

    Args:
        model: membrane | membrane_bending | fluid_gas
        state: uniform equilibrium to linearise about
        bending_c: bending coefficient (used by membrane_bending and fluid_gas)
        eos_a, eos_rho0: gas equation of state (fluid_gas)
        v_inf: gas velocity of the uniform state (fluid_gas)

    Returns:
        Complex array of omega roots (2 per degree of freedom)
    """
    if model not in MODELS:
        raise ValueError(f"unknown model '{model}', expected one of {MODELS}")
    c = bending_c if model != "membrane" else 0.0

    if model == "fluid_gas":
        if eos_a <= 0:
            raise ValueError("fluid_gas model needs a positive sound speed eos_a")
        ctx = LinearisationContext(material, geometry, state.p_star, c, eos_a, eos_rho0, state.p_star)
        X = np.array([0.0, state.r0, 0.0, 0.0, v_inf, eos_rho0])
        rates = gas_tube_rates
    else:
        ctx = LinearisationContext(material, geometry, state.p_star, c)
        X = np.array([0.0, state.r0, 0.0, 0.0])
        rates = membrane_rates

    XZ = np.zeros_like(X)
    XZ[0] = state.zprime0
    J0, J1, J2, J4 = _jacobians(rates, [X, XZ, np.zeros_like(X), np.zeros_like(X)], ctx)
    L = J0 + 1j * k * J1 - k * k * J2 + k ** 4 * J4
    roots = 1j * eigvals(L)
    return np.sort_complex(roots)


def symbol_eigen_omegas(state: UniformState, k: float, material: MaterialParams,
                        geometry: TubeGeometry) -> np.ndarray:
    """Frequencies from the closed symbol matrix (minus branch first)."""
    w2 = eigvalsh(symbol_matrix(state, k, material, geometry))
    return np.sqrt(w2.astype(complex))
