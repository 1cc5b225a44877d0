"""Standing solitary-wave and kink profiles of the membrane tube.

Static solutions conserve two first integrals along Z:

    C = R*W1*z'/lambda1 - p* r^2 / 2        (longitudinal balance)
    E = R*(W1*lambda1 - W)                  (energy, since nothing depends on Z)

Profiles are orbits of the static equations written as a first-order system
in (r, z', r'). Solitary waves are homoclinic to a saddle end state, kinks
heteroclinic between two equilibria sharing p*, C and E.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline
from scipy.linalg import eig
from scipy.optimize import brentq, fsolve

from material import (
    GentDomainError,
    MaterialParams,
    TubeGeometry,
    UniformState,
    admissible_zprime_interval,
    reduced_derivatives,
    reduced_energy,
)

LAUNCH_BRACKET = (1e-8, 1e-3)
SHOOT_RTOL = 1e-10
CREST_MATCH_TOL = 1e-6


class NotASaddleError(ValueError):
    """The end state has no real pair of spatial eigenvalues."""


class NoHomoclinicError(RuntimeError):
    """The orbit launched from the saddle never turns back."""


class NoConnectionError(RuntimeError):
    """No heteroclinic connection between the requested states."""

    def __init__(self, message: str, distance: float = float("nan")):
        super().__init__(message)
        self.distance = distance


@dataclass
class WaveProfile:
    Z: np.ndarray
    r: np.ndarray
    zprime: np.ndarray
    end_state: UniformState
    end_state_right: Optional[UniformState] = None
    decay_tol: float = 0.0
    kind: str = "solitary"
    rprime: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.end_state_right is None:
            self.end_state_right = self.end_state

    def sample(self, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(r, z') on an arbitrary grid, end-state values outside the profile."""
        Z = np.asarray(Z, dtype=float)
        r = CubicSpline(self.Z, self.r)(Z)
        u = CubicSpline(self.Z, self.zprime)(Z)
        left, right = Z < self.Z[0], Z > self.Z[-1]
        r[left], u[left] = self.end_state.r0, self.end_state.zprime0
        r[right], u[right] = self.end_state_right.r0, self.end_state_right.zprime0
        return r, u

    @property
    def amplitude(self) -> float:
        return float(np.max(np.abs(self.r - self.end_state.r0)))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"Z": self.Z, "r": self.r, "zprime": self.zprime})


def first_integrals(r, u, q, p_star: float, material: MaterialParams,
                    geometry: TubeGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """(C, E) at points (r, z', r'); vectorised."""
    R = geometry.R
    lam = np.hypot(u, q)
    b = np.asarray(r, dtype=float) / R
    d = reduced_derivatives(lam, b, material)
    C = R * np.asarray(d.W1) * np.asarray(u) / lam - 0.5 * p_star * np.asarray(r) ** 2
    E = R * (np.asarray(d.W1) * lam - reduced_energy(lam, b, material))
    return C, E


def static_first_integral(state: UniformState, material: MaterialParams,
                          geometry: TubeGeometry) -> float:
    """C evaluated at a uniform state (r' = 0, lambda1 = z')."""
    d = reduced_derivatives(state.zprime0, state.r0 / geometry.R, material)
    return float(geometry.R * d.W1 - 0.5 * state.p_star * state.r0 ** 2)


def static_rates(y: np.ndarray, p_star: float, material: MaterialParams,
                 geometry: TubeGeometry) -> np.ndarray:
    """
    d/dZ (r, z', r') for the static equations (K z')' = p r r', (K r')' = W2 - p r z'.

    K = R W1 / lambda1; the 2x2 system for (z'', r'') has determinant K * R * W11.
    """
    r, u, q = y
    R = geometry.R
    lam = np.hypot(u, q)
    d = reduced_derivatives(lam, r / R, material)
    K = R * d.W1 / lam
    K_lam = R * (d.W11 / lam - d.W1 / lam ** 2)
    K_b = R * d.W12 / lam
    c = K_lam / lam
    M = np.array([[K + c * u * u, c * u * q],
                  [c * u * q, K + c * q * q]])
    rhs = np.array([p_star * r * q - K_b * q * u / R,
                    d.W2 - p_star * r * u - K_b * q * q / R])
    du, dq = np.linalg.solve(M, rhs)
    return np.array([q, du, dq])


def saddle_eigen(state: UniformState, material: MaterialParams,
                 geometry: TubeGeometry) -> Tuple[float, np.ndarray]:
    """
    Unstable spatial eigenvalue and eigenvector of the static system at `state`.

    The eigenvector is scaled to unit length with a positive r-component.
    """
    x0 = np.array([state.r0, state.zprime0, 0.0])
    jac = np.empty((3, 3))
    for j in range(3):
        h = 1e-7 * (1.0 + abs(x0[j]))
        e = np.zeros(3)
        e[j] = h
        jac[:, j] = (static_rates(x0 + e, state.p_star, material, geometry)
                     - static_rates(x0 - e, state.p_star, material, geometry)) / (2.0 * h)
    values, vectors = eig(jac)
    k = int(np.argmax(values.real))
    kappa = values[k]
    if kappa.real <= 1e-8 or abs(kappa.imag) > 1e-8 * max(1.0, abs(kappa.real)):
        raise NotASaddleError(
            f"state r0={state.r0}, z'={state.zprime0} is not a saddle (eigenvalues {values})"
        )
    vec = vectors[:, k].real
    vec = vec / np.linalg.norm(vec)
    if vec[0] < 0:
        vec = -vec
    return float(kappa.real), vec


def crest_from_level_sets(end_state: UniformState, material: MaterialParams,
                          geometry: TubeGeometry, n_scan: int = 4000) -> Tuple[float, float]:
    """
    Crest (r_c, z'_c) where the C and E levels of the end state meet again at r' = 0.

    On r' = 0, lambda1 = z' and E is increasing in z', so each r fixes z'
    through E; the crest is the next root of the C gap away from r0.
    """
    R = geometry.R
    C0 = static_first_integral(end_state, material, geometry)
    _, E0 = first_integrals(end_state.r0, end_state.zprime0, 0.0, end_state.p_star, material, geometry)

    def u_on_energy_level(r):
        lo, hi = admissible_zprime_interval(r / R, material)
        span = hi - lo
        g = lambda u: first_integrals(r, u, 0.0, end_state.p_star, material, geometry)[1] - E0
        a, b = lo + 1e-9 * span, hi - 1e-9 * span
        if g(a) * g(b) > 0:
            raise GentDomainError(f"energy level not reached at r={r}")
        return brentq(g, a, b, xtol=1e-15)

    def c_gap(r):
        u = u_on_energy_level(r)
        return first_integrals(r, u, 0.0, end_state.p_star, material, geometry)[0] - C0

    r0 = end_state.r0
    for direction in (1.0, -1.0):
        offsets = np.geomspace(1e-4, 3.0 * r0, n_scan)
        prev_r, prev_g = None, None
        for off in offsets:
            r = r0 + direction * off
            if r <= 0:
                break
            try:
                g = c_gap(r)
            except GentDomainError:
                break
            if prev_g is not None and prev_g * g < 0:
                rc = brentq(c_gap, prev_r, r, xtol=1e-14)
                return float(rc), float(u_on_energy_level(rc))
            prev_r, prev_g = r, g
    raise NoHomoclinicError(f"no crest on the level sets of r0={r0}, z'={end_state.zprime0}")


def _launch(state: UniformState, delta: float, toward: float, material, geometry):
    if not LAUNCH_BRACKET[0] <= delta <= LAUNCH_BRACKET[1]:
        raise ValueError(f"launch displacement {delta} outside {LAUNCH_BRACKET}")
    kappa, vec = saddle_eigen(state, material, geometry)
    if toward < 0:
        vec = -vec
    y0 = np.array([state.r0, state.zprime0, 0.0]) + delta * vec
    return kappa, y0


def solitary_profile(end_state: UniformState, material: MaterialParams, geometry: TubeGeometry,
                     dZ: float = 0.05, delta: float = 1e-8, rtol: float = SHOOT_RTOL,
                     z_max: float = 2000.0) -> WaveProfile:
    """
    Standing solitary wave homoclinic to `end_state`, centred at Z = 0.

    The orbit is launched along the unstable eigenvector and stopped at the
    first turning point r' = 0; that crest must match the level-set crest.
    The other half is the mirror image, so the profile is exactly even on
    the returned grid.
    """
    p = end_state.p_star
    rc_expected, uc_expected = crest_from_level_sets(end_state, material, geometry)
    toward = np.sign(rc_expected - end_state.r0)
    _, y0 = _launch(end_state, delta, toward, material, geometry)

    def turning(Zv, y):
        return y[2]
    turning.terminal = True
    turning.direction = -toward

    sol = solve_ivp(lambda Zv, y: static_rates(y, p, material, geometry), (0.0, z_max), y0,
                    method="DOP853", rtol=rtol, atol=rtol * 1e-4, events=turning,
                    dense_output=True)
    if not sol.t_events[0].size:
        raise NoHomoclinicError(f"orbit from r0={end_state.r0} never turned within Z={z_max}")
    Zc = float(sol.t_events[0][0])
    crest = sol.y_events[0][0]
    if abs(crest[0] - rc_expected) > CREST_MATCH_TOL * max(1.0, abs(rc_expected)):
        raise NoHomoclinicError(
            f"turning point r={crest[0]:.10g} misses the level-set crest {rc_expected:.10g}"
        )

    m = int(np.floor(Zc / dZ))
    s = dZ * np.arange(-m, m + 1)
    y = sol.sol(Zc - np.abs(s))
    rprime = -np.sign(s) * y[2]
    decay = max(abs(y[0][0] - end_state.r0), abs(y[1][0] - end_state.zprime0))
    return WaveProfile(s, y[0], y[1], end_state, decay_tol=float(decay), kind="solitary",
                       rprime=rprime)


def decay_rate_fit(profile: WaveProfile, lower: float = 1e-6, upper: float = 1e-3) -> float:
    """Log-slope of |r - r0| on the rising tail where the deviation lies in [lower, upper]."""
    dev = np.abs(profile.r - profile.end_state.r0)
    rising = profile.Z < 0
    mask = rising & (dev >= lower) & (dev <= upper)
    if np.count_nonzero(mask) < 10:
        raise NoHomoclinicError("tail too short to fit a decay rate")
    slope, _ = np.polyfit(profile.Z[mask], np.log(dev[mask]), 1)
    return float(slope)


def kink_profile(left_state: UniformState, right_state: UniformState, material: MaterialParams,
                 geometry: TubeGeometry, dZ: float = 0.05, delta: float = 1e-8,
                 rtol: float = SHOOT_RTOL, z_max: float = 2000.0,
                 tol: float = 1e-3) -> WaveProfile:
    """
    Kink from `left_state` to `right_state`, mid-crossing at Z = 0.

    The orbit leaves the left saddle along its unstable manifold and is cut
    at its closest approach to the right state; a closest approach farther
    than tol * |jump| means the states are not connected.
    """
    jump = right_state.r0 - left_state.r0
    if abs(jump) < 1e-12:
        raise NoConnectionError("left and right states coincide", 0.0)
    if abs(left_state.p_star - right_state.p_star) > 1e-8:
        raise NoConnectionError("end states are equilibrated for different pressures")
    p = left_state.p_star
    _, y0 = _launch(left_state, delta, np.sign(jump), material, geometry)
    target = np.array([right_state.r0, right_state.zprime0])

    def turning(Zv, y):
        return y[2]
    turning.terminal = True
    turning.direction = -np.sign(jump)

    def passed(Zv, y):
        return y[0] - right_state.r0
    passed.terminal = True
    passed.direction = np.sign(jump)

    sol = solve_ivp(lambda Zv, y: static_rates(y, p, material, geometry), (0.0, z_max), y0,
                    method="DOP853", rtol=rtol, atol=rtol * 1e-4, events=[turning, passed],
                    dense_output=True)
    Zs = np.linspace(0.0, sol.t[-1], max(2000, 20 * len(sol.t)))
    ys = sol.sol(Zs)
    dist = np.hypot(ys[0] - target[0], ys[1] - target[1])
    i = int(np.argmin(dist))
    if dist[i] > tol * abs(jump):
        raise NoConnectionError(
            f"closest approach {dist[i]:.3e} to r={right_state.r0} exceeds {tol * abs(jump):.3e}",
            float(dist[i]),
        )

    Z_end = Zs[i]
    Z = np.arange(0.0, Z_end + 0.5 * dZ, dZ)
    Z = Z[Z <= Z_end]
    y = sol.sol(Z)
    r, u = y[0], y[1]
    if np.any(np.diff(r) * np.sign(jump) < 0):
        raise NoConnectionError("kink orbit is not monotone", float(dist[i]))
    mid = 0.5 * (left_state.r0 + right_state.r0)
    j = int(np.searchsorted(r * np.sign(jump), mid * np.sign(jump)))
    j = min(max(j, 1), len(r) - 1)
    Z_mid = Z[j - 1] + (mid - r[j - 1]) * (Z[j] - Z[j - 1]) / (r[j] - r[j - 1])
    decay = max(abs(r[0] - left_state.r0), float(dist[i]))
    return WaveProfile(Z - Z_mid, r, u, left_state, right_state, decay_tol=float(decay), kind="kink",
                       rprime=y[2])


# --- Maxwell-type kink states -------------------------------------------------

def _c_crossings(p: float, C1: float, r_lo: float, r_hi: float, material: MaterialParams,
                 geometry: TubeGeometry, n_r: int = 400, n_u: int = 2000) -> List[Tuple[float, float]]:
    """Approximate equilibria (r, z') with pressure p whose C equals C1."""
    R = geometry.R
    rows = []
    for r in np.linspace(r_lo, r_hi, n_r):
        try:
            lo, hi = admissible_zprime_interval(r / R, material)
        except GentDomainError:
            break
        us = np.linspace(lo, hi, n_u)[1:-1]
        res = np.asarray(reduced_derivatives(us, r / R, material).W2) - p * r * us
        idx = np.nonzero(res[:-1] * res[1:] < 0)[0]
        roots = us[idx] - res[idx] * (us[idx + 1] - us[idx]) / (res[idx + 1] - res[idx])
        gap = R * np.asarray(reduced_derivatives(roots, r / R, material).W1) - 0.5 * p * r * r - C1
        rows.append((r, roots, gap))

    crossings = []
    for (ra, ua, ga), (rb, ub, gb) in zip(rows, rows[1:]):
        if len(ua) != len(ub):
            continue
        for k in range(len(ua)):
            if ga[k] * gb[k] < 0:
                w = ga[k] / (ga[k] - gb[k])
                crossings.append((ra + w * (rb - ra), ua[k] + w * (ub[k] - ua[k])))
    return crossings


def _outer_partner(left: UniformState, material: MaterialParams,
                   geometry: TubeGeometry) -> Tuple[float, float]:
    R, p = geometry.R, left.p_star
    C1 = static_first_integral(left, material, geometry)
    r_hi = np.sqrt(material.Jm + 3.0) * R
    crossings = _c_crossings(p, C1, left.r0 * 1.02, r_hi, material, geometry)
    if not crossings:
        raise NoConnectionError(f"no equilibrium shares C with r0={left.r0}")
    guess = max(crossings)

    def system(x):
        r, u = x
        d = reduced_derivatives(u, r / R, material)
        return [d.W2 - p * r * u, R * d.W1 - 0.5 * p * r * r - C1]

    r2, u2 = fsolve(system, guess, xtol=1e-14)
    return float(r2), float(u2)


def energy_gap(r_left: float, zprime_left: float, material: MaterialParams,
               geometry: TubeGeometry) -> float:
    """E(right) - E(left) for the outermost equilibrium sharing p* and C with the left state."""
    left = UniformState.at_equilibrium(r_left, zprime_left, material, geometry)
    r2, u2 = _outer_partner(left, material, geometry)
    _, E1 = first_integrals(left.r0, left.zprime0, 0.0, left.p_star, material, geometry)
    _, E2 = first_integrals(r2, u2, 0.0, left.p_star, material, geometry)
    return float(E2 - E1)


def standing_kink_states(zprime_left: float, r_left_bracket: Tuple[float, float],
                         material: MaterialParams, geometry: TubeGeometry,
                         xtol: float = 1e-12) -> Tuple[UniformState, UniformState]:
    """Pair of equilibria with equal p*, C and E (the end states of a standing kink)."""
    lo, hi = r_left_bracket
    g_lo = energy_gap(lo, zprime_left, material, geometry)
    g_hi = energy_gap(hi, zprime_left, material, geometry)
    if g_lo * g_hi > 0:
        raise NoConnectionError(
            f"energy gap has one sign on [{lo}, {hi}]: {g_lo:.3e}, {g_hi:.3e}"
        )
    r1 = brentq(lambda r: energy_gap(r, zprime_left, material, geometry), lo, hi, xtol=xtol)
    left = UniformState.at_equilibrium(r1, zprime_left, material, geometry)
    r2, u2 = _outer_partner(left, material, geometry)
    right = UniformState(r2, u2, left.p_star, equilibrated=True)
    return left, right
