"""Gent hyperelastic law for the incompressible membrane tube.

Every function accepts scalars or numpy arrays of stretches and returns the
same shape. Stretch pairs are (lambda1, lambda2) = (longitudinal,
circumferential); lambda3 follows from incompressibility.
"""

from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy.optimize import brentq

ArrayLike = Union[float, np.ndarray]

ROOT_RESIDUAL_TOL = 1e-12
EQUILIBRIUM_TOL = 1e-8
ZPRIME_FLOOR = 1e-3


class GentDomainError(ValueError):
    """Raised when the Gent logarithm argument is not positive (locking limit)."""


class NoRootError(ValueError):
    """Raised when the equilibrium residual has no sign change on the admissible interval."""


@dataclass(frozen=True)
class MaterialParams:
    mu: float = 1.0
    Jm: float = 30.0

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.Jm <= 0:
            raise ValueError(f"Jm must be positive, got {self.Jm}")


@dataclass(frozen=True)
class TubeGeometry:
    R: float = 1.0
    rho: float = 1.0
    H: float = 1.0
    p_star: float = 0.0

    def __post_init__(self):
        for name in ("R", "rho", "H"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass(frozen=True)
class StretchState:
    lambda1: float
    lambda2: float

    @property
    def lambda3(self) -> float:
        return 1.0 / (self.lambda1 * self.lambda2)

    def is_admissible(self, material: MaterialParams) -> bool:
        if self.lambda1 <= 0 or self.lambda2 <= 0:
            return False
        return _invariant(self.lambda1, self.lambda2) - 3.0 < material.Jm


@dataclass(frozen=True)
class PrincipalStresses:
    sigma1: ArrayLike
    sigma2: ArrayLike


@dataclass(frozen=True)
class UniformState:
    """An equilibrium pair (r0, z0') under the pressure difference p_star."""

    r0: float
    zprime0: float
    p_star: float
    equilibrated: bool = field(default=False, compare=False)

    def residual(self, material: MaterialParams, geometry: TubeGeometry) -> float:
        return abs(self.p_star - equilibrium_pressure(self.r0, self.zprime0, material, geometry))

    @classmethod
    def at_equilibrium(cls, r0: float, zprime0: float,
                       material: MaterialParams, geometry: TubeGeometry) -> "UniformState":
        """Build the state with p_star taken from the equilibrium condition."""
        p = equilibrium_pressure(r0, zprime0, material, geometry)
        return cls(r0=float(r0), zprime0=float(zprime0), p_star=float(p), equilibrated=True)

    def check_equilibrium(self, material: MaterialParams, geometry: TubeGeometry,
                          tol: float = EQUILIBRIUM_TOL) -> bool:
        return self.residual(material, geometry) < tol


class Derivatives(NamedTuple):
    W1: ArrayLike
    W2: ArrayLike
    W11: ArrayLike
    W12: ArrayLike
    W22: ArrayLike


def _scalarize(value):
    arr = np.asarray(value)
    return float(arr) if arr.ndim == 0 else arr


def _invariant(a, b):
    return a * a + b * b + 1.0 / (a * a * b * b)


def _gent_factor(invariant, material: MaterialParams):
    """F = Jm / (Jm - I + 3); raises at or beyond the locking limit."""
    denom = material.Jm - np.asarray(invariant, dtype=float) + 3.0
    if np.any(~(denom > 0)):
        raise GentDomainError(
            f"Gent locking limit reached: I - 3 >= Jm = {material.Jm}"
        )
    return material.Jm / denom


def _check_positive(*stretches):
    for s in stretches:
        if np.any(~(np.asarray(s, dtype=float) > 0)):
            raise GentDomainError("stretches must be positive")


def gent_energy(lambda1: ArrayLike, lambda2: ArrayLike, lambda3: ArrayLike,
                material: MaterialParams) -> ArrayLike:
    """
    Gent strain energy W = -mu*Jm/2 * ln(1 - (I - 3)/Jm).

    Args:
        lambda1, lambda2, lambda3: principal stretches
        material: Gent constants

    Returns:
        Energy per unit reference area (same shape as the inputs)
    """
    _check_positive(lambda1, lambda2, lambda3)
    l1, l2, l3 = (np.asarray(x, dtype=float) for x in (lambda1, lambda2, lambda3))
    arg = 1.0 - (l1 * l1 + l2 * l2 + l3 * l3 - 3.0) / material.Jm
    if np.any(~(arg > 0)):
        raise GentDomainError(
            f"Gent locking limit reached: log argument {np.min(arg):.3e} <= 0"
        )
    return _scalarize(-0.5 * material.mu * material.Jm * np.log(arg))


def reduced_energy(lambda1: ArrayLike, lambda2: ArrayLike,
                   material: MaterialParams) -> ArrayLike:
    """Gent energy with lambda3 = 1/(lambda1*lambda2)."""
    _check_positive(lambda1, lambda2)
    l1 = np.asarray(lambda1, dtype=float)
    l2 = np.asarray(lambda2, dtype=float)
    return gent_energy(l1, l2, 1.0 / (l1 * l2), material)


def reduced_derivatives(lambda1: ArrayLike, lambda2: ArrayLike,
                        material: MaterialParams) -> Derivatives:
    """
    Closed-form first and second partial derivatives of the reduced energy.

    Returns:
        Derivatives(W1, W2, W11, W12, W22)
    """
    _check_positive(lambda1, lambda2)
    a = np.asarray(lambda1, dtype=float)
    b = np.asarray(lambda2, dtype=float)
    mu, Jm = material.mu, material.Jm

    F = _gent_factor(_invariant(a, b), material)
    A = a - 1.0 / (a ** 3 * b ** 2)
    B = b - 1.0 / (a ** 2 * b ** 3)

    W1 = mu * F * A
    W2 = mu * F * B
    W11 = mu * (2.0 * F * F * A * A / Jm + F * (1.0 + 3.0 / (a ** 4 * b ** 2)))
    W12 = mu * (2.0 * F * F * A * B / Jm + F * 2.0 / (a ** 3 * b ** 3))
    W22 = mu * (2.0 * F * F * B * B / Jm + F * (1.0 + 3.0 / (a ** 2 * b ** 4)))

    return Derivatives(*(_scalarize(x) for x in (W1, W2, W11, W12, W22)))


def principal_stresses(lambda1: ArrayLike, lambda2: ArrayLike,
                       material: MaterialParams) -> PrincipalStresses:
    d = reduced_derivatives(lambda1, lambda2, material)
    return PrincipalStresses(
        sigma1=_scalarize(np.asarray(lambda1) * d.W1),
        sigma2=_scalarize(np.asarray(lambda2) * d.W2),
    )


def equilibrium_pressure(r0: ArrayLike, zprime0: ArrayLike,
                         material: MaterialParams, geometry: TubeGeometry) -> ArrayLike:
    """P* = W2(z0', r0/R) / (r0 z0')."""
    r = np.asarray(r0, dtype=float)
    zp = np.asarray(zprime0, dtype=float)
    d = reduced_derivatives(zp, r / geometry.R, material)
    return _scalarize(np.asarray(d.W2) / (r * zp))


def admissible_zprime_interval(lambda2: float, material: MaterialParams) -> Tuple[float, float]:
    """
    Open z' interval on which the Gent argument stays positive for fixed lambda2.

    With s = z'^2 the admissibility condition reads s^2 - c s + 1/b^2 < 0,
    c = Jm + 3 - b^2.
    """
    b = float(lambda2)
    if b <= 0:
        raise GentDomainError("lambda2 must be positive")
    c = material.Jm + 3.0 - b * b
    disc = c * c - 4.0 / (b * b)
    if c <= 0 or disc <= 0:
        raise GentDomainError(f"no admissible z' for lambda2 = {b}")
    s_lo = (c - np.sqrt(disc)) / 2.0
    s_hi = (c + np.sqrt(disc)) / 2.0
    return max(float(np.sqrt(s_lo)), ZPRIME_FLOOR), float(np.sqrt(s_hi))


def select_branch(roots: List[float], reference: float, which: str = "smaller") -> float:
    """Pick the smaller (or larger) root strictly above `reference`."""
    above = sorted(z for z in roots if z > reference)
    if not above:
        raise NoRootError(f"no equilibrium root above z' = {reference}")
    if which == "smaller":
        return above[0]
    if which == "larger":
        return above[-1]
    raise ValueError(f"unknown branch selector: {which}")


def solve_equilibrium_zprime(r0: float, p_star: float, material: MaterialParams,
                             geometry: TubeGeometry, branch: Optional[str] = None,
                             reference: Optional[float] = None,
                             n_scan: int = 20000) -> List[float]:
    """
    All admissible roots of W2(z', r0/R) - p_star*r0*z' = 0, sorted ascending.

    Args:
        r0: radius of the uniform state
        p_star: pressure difference
        branch: None for every root, or "smaller"/"larger" to select one root
                above `reference` (the stretch of the neighbouring state)
        reference: stretch the selected root must exceed (default: 0)
        n_scan: dense bracketing resolution

    Returns:
        List of roots (one element when a branch is selected)
    """
    b = r0 / geometry.R
    lo, hi = admissible_zprime_interval(b, material)

    def residual(zp):
        return reduced_derivatives(zp, b, material).W2 - p_star * r0 * zp

    # stay strictly inside the open interval
    span = hi - lo
    grid = np.linspace(lo + 1e-9 * span, hi - 1e-9 * span, n_scan)
    values = np.asarray(residual(grid))

    roots = []
    for i in range(n_scan - 1):
        f0, f1 = values[i], values[i + 1]
        if f0 == 0.0:
            roots.append(float(grid[i]))
        elif f0 * f1 < 0:
            root = brentq(residual, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps)
            roots.append(float(root))
    if values[-1] == 0.0:
        roots.append(float(grid[-1]))

    if not roots:
        raise NoRootError(
            f"no equilibrium z' for r0={r0}, p*={p_star} on [{lo:.6g}, {hi:.6g}]"
        )

    roots.sort()
    if branch is None:
        return roots
    return [select_branch(roots, 0.0 if reference is None else reference, branch)]


def static_energy_integral(r: ArrayLike, zprime: ArrayLike, rprime: ArrayLike,
                           material: MaterialParams, geometry: TubeGeometry) -> ArrayLike:
    """E = R (W1*lambda1 - W), constant along static solutions."""
    l1 = np.hypot(zprime, rprime)
    b = np.asarray(r, dtype=float) / geometry.R
    d = reduced_derivatives(l1, b, material)
    return _scalarize(geometry.R * (np.asarray(d.W1) * l1 - reduced_energy(l1, b, material)))


def wave_speeds(zprime: ArrayLike, rprime: ArrayLike, r: ArrayLike,
                material: MaterialParams, geometry: TubeGeometry) -> Tuple[ArrayLike, ArrayLike]:
    """
    Nodewise characteristic speeds (longitudinal, transversal).

    Negative squares (compressed membrane) are clipped to zero.
    """
    l1 = np.hypot(zprime, rprime)
    d = reduced_derivatives(l1, np.asarray(r, dtype=float) / geometry.R, material)
    ul = np.sqrt(np.maximum(np.asarray(d.W11) / geometry.rho, 0.0))
    ut = np.sqrt(np.maximum(np.asarray(d.W1) / (geometry.rho * l1), 0.0))
    return _scalarize(ul), _scalarize(ut)
