import io
import os
from dataclasses import replace
from datetime import datetime
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
from dotenv import dotenv_values, load_dotenv

from boussinesq import PERTURBATION_MODES, SCHEMES, SimConfig
from dispersion import TANGENCY_TOL
from fluid import EquationOfState, resolve_gas_dt, with_gas
from material import MaterialParams, TubeGeometry, UniformState
from membrane import (
    EIGEN_METHODS,
    BendingOption,
    MembraneConfig,
    RiemannSetup,
    TubeModel,
    uniform_field,
)
from wavelab import DetectorSettings

# Load environment variables
load_dotenv()

ENV_PREFIX = "TUBELAB_"


def _env(name: str, default: str) -> str:
    return os.getenv(ENV_PREFIX + name, default)


class Config:
    """Process-wide defaults for the tube laboratory"""

    # === Output folders ===
    BASE_OUTPUT_DIR = _env("OUTPUT_DIR", os.path.join(os.getcwd(), "tubelab_runs"))
    RUN_ID = datetime.now().strftime("%Y%m%d_%H%M%S")
    RUN_PATH = os.path.join(BASE_OUTPUT_DIR, f"run_{RUN_ID}")

    # === Progress output ===
    VERBOSE = _env("VERBOSE", "true").lower() == "true"

    # === Cleanup Configuration ===
    CLEANUP_ENABLED = _env("CLEANUP_ENABLED", "false").lower() == "true"
    CLEANUP_RETENTION_DAYS = int(_env("CLEANUP_RETENTION_DAYS", "7"))
    CLEANUP_RETENTION_COUNT = int(_env("CLEANUP_RETENTION_COUNT", "10"))
    CLEANUP_RETENTION_MODE = _env("CLEANUP_RETENTION_MODE", "hybrid")  # "days", "count", "hybrid"

    # === Detector thresholds (shared by every model) ===
    BLOWUP_GUARD = float(_env("BLOWUP_GUARD", "50"))
    SPLIT_FRACTION = float(_env("SPLIT_FRACTION", str(1.0 / 6.0)))
    SPLIT_SEPARATION = float(_env("SPLIT_SEPARATION", "10"))
    SELF_SIMILAR_TOL = float(_env("SELF_SIMILAR_TOL", "0.03"))
    GROWTH_WINDOW_LO = float(_env("GROWTH_WINDOW_LO", "1e-4"))
    GROWTH_WINDOW_HI = float(_env("GROWTH_WINDOW_HI", "1e-1"))
    SAWTOOTH_THRESHOLD = float(_env("SAWTOOTH_THRESHOLD", "1e-4"))
    MIN_FIT_SAMPLES = int(_env("MIN_FIT_SAMPLES", "10"))
    TRACK_MAX_JUMP = float(_env("TRACK_MAX_JUMP", "2"))
    TANGENCY_TOL = float(_env("TANGENCY_TOL", str(TANGENCY_TOL)))

    @staticmethod
    def detector_settings() -> DetectorSettings:
        return DetectorSettings(
            blowup_guard=Config.BLOWUP_GUARD,
            split_fraction=Config.SPLIT_FRACTION,
            split_separation=Config.SPLIT_SEPARATION,
            self_similar_tol=Config.SELF_SIMILAR_TOL,
            growth_window=(Config.GROWTH_WINDOW_LO, Config.GROWTH_WINDOW_HI),
            sawtooth_threshold=Config.SAWTOOTH_THRESHOLD,
            min_fit_samples=Config.MIN_FIT_SAMPLES,
            track_max_jump=Config.TRACK_MAX_JUMP,
        )

    @staticmethod
    def validate():
        """Check the cleanup policy; output folders are created by the run store"""
        if Config.CLEANUP_RETENTION_MODE not in ("days", "count", "hybrid"):
            raise ValueError(f"unknown cleanup retention mode: {Config.CLEANUP_RETENTION_MODE}")
        if Config.CLEANUP_RETENTION_DAYS < 0 or Config.CLEANUP_RETENTION_COUNT < 1:
            raise ValueError("cleanup retention needs days >= 0 and count >= 1")
        return True


def log(message: str):
    """Progress line, silenced by --quiet."""
    if Config.VERBOSE:
        print(message)


# === Per-run configuration files ===

MODELS = ("membrane", "membrane_bending", "boussinesq", "fluid_gas")
EXPERIMENTS = ("solitary", "perturbed", "riemann", "two_steps", "split", "blowup", "standing")
MODEL_EXPERIMENTS = {
    "membrane": ("solitary", "perturbed", "riemann", "two_steps"),
    "membrane_bending": ("solitary", "perturbed", "riemann", "two_steps"),
    "fluid_gas": ("solitary", "riemann", "two_steps"),
    "boussinesq": ("split", "blowup", "standing"),
}

# None marks keys without a static default (computed or only needed by some commands)
DEFAULTS: Dict[str, Optional[str]] = {
    "model": "membrane",
    "scheme": "lax_wendroff",
    "experiment": "solitary",
    "material.mu": "1",
    "material.Jm": "30",
    "geometry.R": "1",
    "geometry.rho": "1",
    "geometry.H": "1",
    "r_inf": "1.69",
    "z_inf_prime": "1.1",
    "p_star": None,
    "bending.enabled": "false",
    "bending.c": None,
    "bending.h_scale": "1e-3",
    "grid.n": "2401",
    "grid.dZ": "0.05",
    "grid.Z0": None,
    "dt": None,
    "T": "50",
    "r02": None,
    "L": "1",
    "Zc": "0",
    "half_width": "10",
    "epsilon": "-0.01",
    "t_star": None,
    "perturbation": "exact_B",
    "snapshot_every": "0.5",
    "eos.a": None,
    "eos.rho0": "1",
    "eos.P0": None,
    "v_inf": "0",
    "k.min": "1e-3",
    "k.max": "1e3",
    "k.count": "200",
    "U": None,
    "kink.r02_lo": None,
    "kink.r02_hi": None,
    "kink.tol": None,
    "kink.workers": "1",
    "kink.profile_tol": "0.02",
    "seed": "0",
    "eigen.method": "nonlinear_difference",
    "eigen.core": "10",
    "compat.displayed_k": "false",
}

DETECTOR_KEYS = {
    "detect.blowup_guard": "blowup_guard",
    "detect.split_fraction": "split_fraction",
    "detect.split_separation": "split_separation",
    "detect.self_similar_tol": "self_similar_tol",
    "detect.growth_lo": "growth_window",
    "detect.growth_hi": "growth_window",
    "detect.sawtooth_threshold": "sawtooth_threshold",
    "detect.min_fit_samples": "min_fit_samples",
    "detect.track_max_jump": "track_max_jump",
    "detect.tangency_tol": "tangency_tol",
    "detect.tail_window": "tail_window",
    "detect.tail_gap": "tail_gap",
    "detect.tail_decay": "tail_decay",
    "detect.tail_floor": "tail_floor",
}

_TRUE = ("true", "yes", "1", "on")
_FALSE = ("false", "no", "0", "off")


class ConfigError(ValueError):
    """A configuration value is missing, malformed or inconsistent."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


class RunConfig:
    """
    Flat key = value run configuration with dotted namespaces.

    Files use the .env syntax (comments with #, optional quotes) and are read
    with python-dotenv. Values are kept as text and converted by the typed
    getters, which fall back to DEFAULTS and name the key in every error.
    """

    def __init__(self, values: Optional[Dict[str, Optional[str]]] = None, source: str = "<memory>"):
        self.source = source
        self.values: Dict[str, str] = {}
        for key, value in (values or {}).items():
            if value is None:
                raise ConfigError(key, "missing '=' or value")
            self.values[key] = str(value).strip()
        for key in self.values:
            if key not in DEFAULTS and key not in DETECTOR_KEYS:
                raise ConfigError(key, "unknown key")

    @classmethod
    def from_file(cls, path: str) -> "RunConfig":
        if not os.path.isfile(path):
            raise ConfigError("config", f"file not found: {path}")
        return cls(dotenv_values(path, interpolate=False), source=path)

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        return cls(dotenv_values(stream=io.StringIO(text), interpolate=False))

    def with_overrides(self, overrides: Dict[str, object]) -> "RunConfig":
        """Copy with some keys replaced; None values are ignored."""
        merged = dict(self.values)
        merged.update({k: str(v) for k, v in overrides.items() if v is not None})
        return RunConfig(merged, self.source)

    # --- typed getters ----------------------------------------------------

    def has(self, key: str) -> bool:
        return key in self.values or DEFAULTS.get(key) is not None

    def _raw(self, key: str, default=None) -> str:
        if key in self.values:
            return self.values[key]
        if DEFAULTS.get(key) is not None:
            return DEFAULTS[key]
        if default is not None:
            return str(default)
        raise ConfigError(key, "required but not set")

    def get_str(self, key: str, default: Optional[str] = None,
                choices: Optional[Iterable[str]] = None) -> str:
        value = self._raw(key, default)
        if choices is not None and value not in choices:
            raise ConfigError(key, f"expected one of {tuple(choices)}, got '{value}'")
        return value

    def get_float(self, key: str, default: Optional[float] = None, positive: bool = False) -> float:
        raw = self._raw(key, default)
        try:
            value = float(raw)
        except ValueError:
            raise ConfigError(key, f"expected a number, got '{raw}'") from None
        if value != value or value in (float("inf"), float("-inf")):
            raise ConfigError(key, f"expected a finite number, got '{raw}'")
        if positive and not value > 0:
            raise ConfigError(key, f"must be positive, got {value:g}")
        return value

    def get_int(self, key: str, default: Optional[int] = None, minimum: Optional[int] = None) -> int:
        raw = self._raw(key, default)
        try:
            value = int(raw)
        except ValueError:
            raise ConfigError(key, f"expected an integer, got '{raw}'") from None
        if minimum is not None and value < minimum:
            raise ConfigError(key, f"must be at least {minimum}, got {value}")
        return value

    def get_bool(self, key: str, default: Optional[bool] = None) -> bool:
        raw = self._raw(key, None if default is None else str(default).lower()).lower()
        if raw in _TRUE:
            return True
        if raw in _FALSE:
            return False
        raise ConfigError(key, f"expected true or false, got '{raw}'")

    def get_optional_float(self, key: str, positive: bool = False) -> Optional[float]:
        if not self.has(key):
            return None
        return self.get_float(key, positive=positive)

    # --- domain objects ---------------------------------------------------

    @property
    def model(self) -> str:
        return self.get_str("model", choices=MODELS)

    @property
    def experiment(self) -> str:
        return self.get_str("experiment", choices=EXPERIMENTS)

    @property
    def scheme(self) -> str:
        return self.get_str("scheme", choices=SCHEMES)

    def material(self) -> MaterialParams:
        return MaterialParams(self.get_float("material.mu", positive=True),
                              self.get_float("material.Jm", positive=True))

    def geometry(self) -> TubeGeometry:
        return TubeGeometry(self.get_float("geometry.R", positive=True),
                            self.get_float("geometry.rho", positive=True),
                            self.get_float("geometry.H", positive=True))

    def state(self) -> UniformState:
        """The uniform state at infinity, with p* checked against its equilibrium value."""
        material, geometry = self.material(), self.geometry()
        r0 = self.get_float("r_inf", positive=True)
        zp = self.get_float("z_inf_prime", positive=True)
        try:
            state = UniformState.at_equilibrium(r0, zp, material, geometry)
        except ValueError as e:
            raise ConfigError("r_inf", str(e)) from None
        if self.has("p_star"):
            p = self.get_float("p_star")
            if not UniformState(r0, zp, p).check_equilibrium(material, geometry):
                raise ConfigError(
                    "p_star", f"{p:.10g} does not balance r_inf={r0:g}, z_inf_prime={zp:g} "
                              f"(equilibrium value {state.p_star:.10g})"
                )
        return state

    def bending(self) -> BendingOption:
        enabled = self.get_bool("bending.enabled") or self.model == "membrane_bending"
        if not enabled:
            return BendingOption()
        if self.has("bending.c"):
            return BendingOption(True, self.get_float("bending.c", positive=True))
        h = self.get_float("bending.h_scale", positive=True)
        return BendingOption.from_scale(self.material(), self.geometry(), h)

    def tube_model(self, state: Optional[UniformState] = None) -> TubeModel:
        state = self.state() if state is None else state
        return TubeModel.for_state(state, self.material(), self.geometry(), bending=self.bending(),
                                   displayed_k=self.get_bool("compat.displayed_k"))

    def detectors(self) -> DetectorSettings:
        base = Config.detector_settings()
        kwargs = {}
        for key, name in DETECTOR_KEYS.items():
            if key not in self.values or name in ("growth_window", "tangency_tol"):
                continue
            if name == "min_fit_samples":
                kwargs[name] = self.get_int(key, minimum=2)
            else:
                kwargs[name] = self.get_float(key, positive=True)
        lo, hi = base.growth_window
        lo = self.get_float("detect.growth_lo", lo, positive=True)
        hi = self.get_float("detect.growth_hi", hi, positive=True)
        if lo >= hi:
            raise ConfigError("detect.growth_lo", f"growth window [{lo:g}, {hi:g}] is empty")
        kwargs["growth_window"] = (lo, hi)
        return replace(base, **kwargs)

    def tangency_tol(self) -> float:
        return self.get_float("detect.tangency_tol", Config.TANGENCY_TOL, positive=True)

    def grid_extent(self) -> Tuple[float, float]:
        """(dZ, half length) of the centred grid; grid.Z0 must sit at -(n-1) dZ / 2."""
        dZ = self.get_float("grid.dZ", positive=True)
        n = self.get_int("grid.n", minimum=5)
        if n % 2 == 0:
            raise ConfigError("grid.n", f"grids are centred at Z = 0 and need an odd node count, got {n}")
        half = 0.5 * (n - 1) * dZ
        if self.has("grid.Z0"):
            Z0 = self.get_float("grid.Z0")
            if abs(Z0 + half) > 1e-9 * max(1.0, half):
                raise ConfigError("grid.Z0", f"expected {-half:g} for a centred grid, got {Z0:g}")
        return dZ, half

    def membrane_config(self) -> MembraneConfig:
        dZ, half = self.grid_extent()
        settings = dict(T=self.get_float("T", positive=True),
                        dt=self.get_optional_float("dt", positive=True),
                        scheme=self.scheme,
                        snapshot_every=self.get_float("snapshot_every", positive=True),
                        detectors=self.detectors())
        try:
            return MembraneConfig(dZ=dZ, L=half, **settings)
        except ValueError as e:
            raise ConfigError("grid", str(e)) from None

    def sim_config(self) -> SimConfig:
        """Boussinesq run settings: grid.dZ is the xi spacing, dt the tau step."""
        dZ, half = self.grid_extent()
        settings = dict(dtau=self.get_optional_float("dt", positive=True),
                        T=self.get_float("T", positive=True), scheme=self.scheme,
                        snapshot_every=self.get_float("snapshot_every", positive=True),
                        detectors=self.detectors())
        try:
            return SimConfig(dxi=dZ, L=half, **settings)
        except ValueError as e:
            raise ConfigError("dt", str(e)) from None

    def riemann_setup(self) -> RiemannSetup:
        material, geometry = self.material(), self.geometry()
        r01 = self.get_float("r_inf", positive=True)
        zp = self.get_float("z_inf_prime", positive=True)
        r02 = self.get_float("r02", positive=True)
        Zc, width = self.get_float("Zc"), self.get_float("L", positive=True)
        try:
            return RiemannSetup.from_radii(r01, zp, r02, material, geometry, Zc, width)
        except ValueError as e:
            raise ConfigError("r02", str(e)) from None

    def k_grid(self) -> np.ndarray:
        lo = self.get_float("k.min", positive=True)
        hi = self.get_float("k.max", positive=True)
        if lo >= hi:
            raise ConfigError("k.min", f"must be below k.max, got {lo:g} >= {hi:g}")
        return np.geomspace(lo, hi, self.get_int("k.count", minimum=2))

    # --- validation and manifest -------------------------------------------

    def validate(self, command: str = "run") -> "RunConfig":
        """Cross-field checks for `command` before any stepping; returns self."""
        model = self.model
        self.get_str("scheme", choices=SCHEMES)
        self.detectors()
        self.seed()
        if command == "run":
            experiment = self.experiment
            if experiment not in MODEL_EXPERIMENTS[model]:
                raise ConfigError("experiment", f"'{experiment}' is not available for model '{model}' "
                                                f"(expected one of {MODEL_EXPERIMENTS[model]})")
        else:
            experiment = None

        if model == "boussinesq":
            if command in ("dispersion", "equilibrium", "profile", "kink-search"):
                raise ConfigError("model", f"'{command}' needs a tube model, not boussinesq")
            self.sim_config()
            if command == "run":
                self.get_str("perturbation", choices=PERTURBATION_MODES)
                eps = self.get_float("epsilon")
                if experiment == "split" and not eps < 0:
                    raise ConfigError("epsilon", f"a split run needs epsilon < 0, got {eps:g}")
                if experiment == "blowup" and not eps > 0:
                    raise ConfigError("epsilon", f"a blowup run needs epsilon > 0, got {eps:g}")
            return self

        if model == "fluid_gas" and self.scheme != "lax_wendroff":
            raise ConfigError("scheme", "the fluid_gas model runs with lax_wendroff only")
        if command == "equilibrium":
            self.material()
            self.geometry()
            return self
        self.state()
        self.bending()
        self._check_time_step()
        if command == "dispersion":
            self.k_grid()
        if command == "kink-search":
            if model == "fluid_gas":
                raise ConfigError("model", "the kink search runs on the membrane models")
            lo = self.get_float("kink.r02_lo", positive=True)
            hi = self.get_float("kink.r02_hi", positive=True)
            if lo >= hi:
                raise ConfigError("kink.r02_lo", f"must be below kink.r02_hi, got {lo:g} >= {hi:g}")
            self.get_int("kink.workers", minimum=1)
            self.get_optional_float("kink.tol", positive=True)
        if command == "eigenfunction":
            if model == "fluid_gas":
                raise ConfigError("model", "eigenfunctions are extracted for the membrane models")
            self.get_str("eigen.method", choices=EIGEN_METHODS)
        if experiment in ("riemann", "two_steps") or (command == "profile" and self.has("r02")):
            setup = self.riemann_setup()
            try:
                setup.end_states(self.material(), self.geometry())
            except ValueError as e:
                raise ConfigError("r02", str(e)) from None
            if experiment == "two_steps":
                self.get_float("half_width", positive=True)
        if experiment == "perturbed":
            self.get_float("epsilon")
            self.get_float("t_star", positive=True)
        if model == "fluid_gas":
            self.get_float("eos.rho0", positive=True)
            self.get_optional_float("eos.a", positive=True)
            self.get_float("v_inf")
            if self.has("eos.P0"):
                p0 = self.get_float("eos.P0")
                p = self.state().p_star
                if abs(p0 - p) > 1e-8:
                    raise ConfigError("eos.P0", f"gas pressure {p0:.10g} does not balance p*={p:.10g}")
        return self

    def _check_time_step(self):
        """A configured dt must satisfy the bound of the uniform tube at the working state."""
        mc = self.membrane_config()
        if mc.dt is None:
            return
        state = self.state()
        model = self.tube_model(state)
        field = uniform_field(state, mc.grid())
        if self.model == "fluid_gas":
            eos = EquationOfState.for_state(state, self.material(), self.geometry(),
                                            self.get_float("eos.rho0", positive=True),
                                            self.get_optional_float("eos.a", positive=True))
            gas = with_gas(field, eos, self.get_float("v_inf"))
        try:
            if self.model == "fluid_gas":
                resolve_gas_dt(mc, gas, model, eos)
            else:
                mc.resolve_dt(field, model)
        except ValueError as e:
            raise ConfigError("dt", str(e)) from None

    def seed(self) -> int:
        return self.get_int("seed", minimum=0)

    def resolved(self) -> Dict[str, str]:
        """Every key with a value after defaults and computed entries, as text."""
        out = {key: value for key, value in DEFAULTS.items() if value is not None}
        out.update(self.values)
        if self.model != "boussinesq":
            try:
                out["p_star"] = f"{self.state().p_star:.17g}"
            except ConfigError:
                pass
            out["bending.c"] = f"{self.bending().coefficient:.17g}"
        dZ, half = self.grid_extent()
        out["grid.Z0"] = f"{-half:.17g}"
        lo, hi = self.detectors().growth_window
        out["detect.growth_lo"] = f"{lo:.17g}"
        out["detect.growth_hi"] = f"{hi:.17g}"
        return dict(sorted(out.items()))

