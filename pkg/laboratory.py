from dataclasses import replace
from typing import Any, Dict, List, Tuple

import numpy as np
import pandas as pd

import boussinesq
import dispersion
import fluid
import membrane
import profiles
from config import RunConfig, log
from material import (
    NoRootError,
    UniformState,
    equilibrium_pressure,
    select_branch,
    solve_equilibrium_zprime,
)
from run_store import RunStore
from wavelab import OutcomeRecord

# Outcome kinds that mean a runtime event stopped the run
TERMINAL_KINDS = ("blowup", "non_correct")
EXIT_OK = 0
EXIT_EVENT = 3


def _result(store: RunStore, exit_code: int = EXIT_OK, **extra) -> Dict[str, Any]:
    return {'exit_code': exit_code, **store.summary(), **extra}


def _report_lines(values: Dict[str, Any]) -> List[str]:
    lines = []
    for key, value in values.items():
        if isinstance(value, (bool, np.bool_)):
            value = str(bool(value)).lower()
        elif isinstance(value, (float, np.floating)):
            value = f"{float(value):.17g}"
        lines.append(f"{key} = {value}")
    return lines


# --- dispersion -----------------------------------------------------------

def _numeric_table(model: str, state: UniformState, ks: np.ndarray, config: RunConfig,
                   eos_a: float = 0.0) -> pd.DataFrame:
    """Every root of the linearised model per k, sorted by real part."""
    material, geometry = config.material(), config.geometry()
    rows = []
    for k in ks:
        roots = dispersion.numeric_dispersion(
            model, state, k, material, geometry, bending_c=config.bending().coefficient,
            eos_a=eos_a, eos_rho0=config.get_float("eos.rho0"), v_inf=config.get_float("v_inf"))
        roots = roots[np.lexsort((roots.imag, roots.real))]
        row = {"k": k, "k_euler": k / state.zprime0}
        for j, w in enumerate(roots):
            row[f"re_omega_{j}"] = w.real
            row[f"im_omega_{j}"] = w.imag
        rows.append(row)
    return pd.DataFrame(rows)


def cmd_dispersion(config: RunConfig, store: RunStore) -> Dict[str, Any]:
    """Branch table over a log-uniform k sweep plus the correctness report of the state."""
    model = config.model
    if model == "boussinesq":
        raise ValueError("model: dispersion tables cover the tube models only")
    material, geometry = config.material(), config.geometry()
    state = config.state()
    ks = config.k_grid()
    coeffs = dispersion.coefficients(state, material, geometry)
    report = dispersion.correctness_and_stability(state, material, geometry)

    log(f"\n📈 Dispersion of r0={state.r0:g}, z'={state.zprime0:g} ({model}, {len(ks)} wavenumbers)")
    values: Dict[str, Any] = {"model": model, "p_star": state.p_star}
    values.update(report.as_dict())
    values["Ul"] = coeffs.Ul.real
    values["Utau"] = coeffs.Utau.real
    values["omega0"] = coeffs.omega0.real
    # an unstressed tube has no transversal wave speed
    values["Utau_zero"] = abs(coeffs.Utau) < 1e-12

    if model == "membrane":
        table = dispersion.sweep(state, ks, material, geometry)
        labels = dispersion.branch_labels(coeffs.g, coeffs.f)
        values["plus_branch"] = labels["plus"]
        values["minus_branch"] = labels["minus"]
        values["U0"] = dispersion.long_wave_speed(state, material, geometry).real
        if report.sigma1_positive:
            values["saddle_kappa"] = dispersion.saddle_decay_rate(state, material, geometry).real
        if config.has("U"):
            U = config.get_float("U")
            for branch in ("plus", "minus"):
                hit = dispersion.line_intersection_test(state, U, branch, (ks[0], ks[-1]), material,
                                                        geometry, tol=config.tangency_tol())
                values[f"line_{branch}"] = hit.verdict
                values[f"line_{branch}_min_gap"] = hit.min_gap
                if hit.tangent_k is not None:
                    values[f"line_{branch}_tangent_k"] = hit.tangent_k
    elif model == "membrane_bending":
        table = _numeric_table(model, state, ks, config)
        values["bending_c"] = config.bending().coefficient
        values["max_abs_imag"] = float(np.max(np.abs(table.filter(like="im_").to_numpy())))
    else:
        eos = _equation_of_state(config, state)
        table = _numeric_table(model, state, ks, config, eos.a)
        values["eos_a"] = eos.a
        if config.has("U"):
            families = fluid.classify_solitary_families(
                state, eos, config.get_float("U"), material, geometry,
                bending_c=config.bending().coefficient, v_inf=config.get_float("v_inf"),
                k_range=(ks[0], ks[-1]), n_samples=len(ks))
            values["families"] = families.verdict
            values["crossing_branches"] = ";".join(str(b) for b in families.crossing_branches) or "none"
            values["null_parametric"] = families.null_parametric

    store.write_table("dispersion.csv", table)
    store.write_report("dispersion_report.txt", _report_lines(values))
    mark = "✓" if report.stable else "⚠️"
    log(f"{mark} correct={report.correct} stable={report.stable} Ul={values['Ul']:.6g} "
        f"Utau={values['Utau']:.6g}")
    return _result(store, report=values)


# --- equilibrium ------------------------------------------------------------

def cmd_equilibrium(config: RunConfig, store: RunStore) -> Dict[str, Any]:
    """All admissible z' at the requested radius and pressure, with the selected root marked."""
    material, geometry = config.material(), config.geometry()
    r_inf = config.get_float("r_inf", positive=True)
    z_inf = config.get_float("z_inf_prime", positive=True)
    if config.has("p_star"):
        p = config.get_float("p_star")
    else:
        p = float(equilibrium_pressure(r_inf, z_inf, material, geometry))
    radius = config.get_float("r02", positive=True) if config.has("r02") else r_inf
    reference = z_inf if radius > r_inf else 0.0

    roots = solve_equilibrium_zprime(radius, p, material, geometry)
    try:
        selected = select_branch(roots, reference, "smaller")
    except NoRootError:
        selected = None
    log(f"\n⚖️  Equilibria at r={radius:g}, p*={p:.10g}: {len(roots)} root(s)")
    rows = []
    for i, zp in enumerate(roots):
        residual = float(equilibrium_pressure(radius, zp, material, geometry)) - p
        rows.append({"index": i, "zprime": zp, "residual": residual, "selected": zp == selected})
        log(f"   {'⭐' if zp == selected else ' '} z' = {zp:.12g}")
    store.write_table("equilibrium.csv", pd.DataFrame(rows, columns=["index", "zprime", "residual", "selected"]))
    store.write_report("equilibrium_report.txt", _report_lines({
        "r": radius, "p_star": p, "roots": len(roots),
        "selected": "none" if selected is None else f"{selected:.17g}",
    }))
    return _result(store, roots=roots, selected=selected)


# --- runs -------------------------------------------------------------------

def _equation_of_state(config: RunConfig, state: UniformState) -> fluid.EquationOfState:
    return fluid.EquationOfState.for_state(state, config.material(), config.geometry(),
                                           rho0=config.get_float("eos.rho0", positive=True),
                                           a=config.get_optional_float("eos.a", positive=True))


def _membrane_initial(config: RunConfig, state: UniformState, model: membrane.TubeModel,
                      mc: membrane.MembraneConfig) -> membrane.TubeField:
    material, geometry = config.material(), config.geometry()
    experiment = config.experiment
    Z = mc.grid()
    if experiment in ("riemann", "two_steps"):
        setup = config.riemann_setup()
        if experiment == "riemann":
            return membrane.make_riemann(setup, Z, material, geometry)
        return membrane.make_two_steps(setup.r01, setup.z01p, setup.r02, setup.z02p,
                                       config.get_float("half_width", positive=True), setup.L,
                                       Z, material, geometry)

    profile = profiles.solitary_profile(state, material, geometry, dZ=mc.dZ)
    base = membrane.make_initial_solitary(profile, Z, material, geometry)
    log(f"   Standing wave crest r={np.max(profile.r):.10g} on {base.n} nodes")
    if experiment == "solitary":
        return base
    t_star = config.get_float("t_star", positive=True)
    early = membrane.evolve(base, model, replace(mc, T=t_star, snapshot_every=t_star),
                            keep_snapshots=False)
    if early.series.events:
        event = early.series.events[0]
        raise membrane.UnstableEndStateError(f"run to t*={t_star:g} stopped on {event.kind} at t={event.t:.4g}")
    return membrane.make_perturbed(base, early.field, config.get_float("epsilon"))


def _run_boussinesq(config: RunConfig) -> Tuple[OutcomeRecord, List[pd.DataFrame], pd.DataFrame, Any]:
    sim = config.sim_config()
    if config.experiment == "standing":
        mode, eps = "none", 0.0
    else:
        mode, eps = config.get_str("perturbation"), config.get_float("epsilon")
    log(f"\n🌊 Boussinesq {config.experiment} run, eps={eps:g}, {sim.scheme}, dxi={sim.dxi:g}")
    outcome, run = boussinesq.run_perturbation(eps, mode, sim)
    xi = run.field.xi
    frames = [pd.DataFrame({"t": t, "xi": xi, "V": V, "Q": Q}) for t, V, Q in run.snapshots]
    final = pd.DataFrame({"xi": xi, "V": run.field.V, "Q": run.field.Q})
    return outcome, frames, final, run


def cmd_run(config: RunConfig, store: RunStore) -> Dict[str, Any]:
    """Evolve the configured experiment and write diagnostics, snapshots and the outcome."""
    model_name = config.model
    if model_name == "boussinesq":
        outcome, frames, final, run = _run_boussinesq(config)
    else:
        state = config.state()
        model = config.tube_model(state)
        mc = config.membrane_config()
        log(f"\n🌊 {model_name} {config.experiment} run at r={state.r0:g}, z'={state.zprime0:g} "
            f"({mc.scheme}, dZ={mc.dZ:g}, T={mc.T:g})")
        if model_name == "fluid_gas":
            eos = _equation_of_state(config, state)
            v_inf = config.get_float("v_inf")
            if config.experiment == "riemann":
                initial = fluid.make_riemann_gas(config.riemann_setup(), eos, mc.grid(),
                                                 config.material(), config.geometry(), v_inf)
            else:
                initial = fluid.with_gas(_membrane_initial(config, state, model, mc), eos, v_inf)
            outcome, run = fluid.run_gas_experiment(initial, model, eos, mc, config.experiment)

            def frame_of(f):
                return f.to_frame(model, eos)
        else:
            initial = _membrane_initial(config, state, model, mc)
            outcome, run = membrane.run_experiment(initial, model, mc, config.experiment)

            def frame_of(f):
                return f.to_frame(model)

        frames = []
        for t, f in run.snapshots:
            frame = frame_of(f)
            frame.insert(0, "t", t)
            frames.append(frame)
        final = frame_of(run.field)

    store.write_series(run.series)
    store.write_snapshots(frames)
    store.write_table("final.csv", final)
    store.write_outcome(outcome)

    exit_code = EXIT_EVENT if outcome.kind in TERMINAL_KINDS else EXIT_OK
    mark = "⚠️" if exit_code else "✓"
    log(f"{mark} Outcome: {outcome.kind} at t={outcome.t_end:.6g}")
    if outcome.pulse_speeds:
        log("   Pulse speeds: " + ", ".join(f"{s:.6g}" for s in outcome.pulse_speeds))
    if outcome.kink_speed is not None:
        log(f"   Kink speed: {outcome.kink_speed:.6g}")
    return _result(store, exit_code, outcome=outcome)


# --- kinks and profiles -------------------------------------------------------

def cmd_kink_search(config: RunConfig, store: RunStore) -> Dict[str, Any]:
    """Vary r02 inside [kink.r02_lo, kink.r02_hi] until the Riemann kink stands."""
    if config.model not in ("membrane", "membrane_bending"):
        raise ValueError("model: the kink search runs on the membrane models")
    state = config.state()
    model = config.tube_model(state)
    mc = config.membrane_config()
    interval = (config.get_float("kink.r02_lo", positive=True), config.get_float("kink.r02_hi", positive=True))
    workers = config.get_int("kink.workers", minimum=1)
    log(f"\n🔍 Standing kink search on r02 in [{interval[0]:g}, {interval[1]:g}] with {workers} worker(s)")
    kink = membrane.find_standing_kink(state.r0, state.zprime0, interval, model, mc,
                                       tol=config.get_optional_float("kink.tol", positive=True),
                                       L=config.get_float("L", positive=True), workers=workers)
    store.write_table("standing_kink.csv", kink.to_frame())
    values: Dict[str, Any] = {
        "r02_star": kink.r02, "z02p_star": kink.z02p, "kink_speed": kink.speed,
        "evaluations": kink.evaluations,
    }
    # static kink orbit between the same end states
    right = UniformState(kink.r02, kink.z02p, state.p_star, equilibrated=True)
    profile_tol = config.get_float("kink.profile_tol", positive=True)
    try:
        profile = profiles.kink_profile(state, right, model.material, model.geometry, dZ=mc.dZ,
                                        tol=profile_tol)
    except profiles.NoConnectionError as e:
        log(f"⚠️ No kink orbit to r02* = {kink.r02:.6g}: {e}")
        values["profile_connected"] = False
    else:
        values["profile_connected"] = True
        values["profile_mismatch"] = membrane.kink_mismatch(kink, profile)
    store.write_report("kink_search.txt", _report_lines(values))
    log(f"✓ r02* = {kink.r02:.10g} (kink speed {kink.speed:.3e}, {kink.evaluations} runs)")
    return _result(store, kink=kink, report=values)


def cmd_profile(config: RunConfig, store: RunStore) -> Dict[str, Any]:
    """Standing solitary wave of r_inf, or the kink to r02 when r02 is set."""
    material, geometry = config.material(), config.geometry()
    state = config.state()
    dZ, _ = config.grid_extent()
    values: Dict[str, Any] = {}
    if config.has("r02"):
        setup = config.riemann_setup()
        left, right = setup.end_states(material, geometry)
        log(f"\n🧭 Kink profile r={left.r0:g} -> {right.r0:g}")
        profile = profiles.kink_profile(left, right, material, geometry, dZ=dZ)
        values["jump"] = right.r0 - left.r0
    else:
        log(f"\n🧭 Standing solitary profile at r0={state.r0:g}, z'={state.zprime0:g}")
        profile = profiles.solitary_profile(state, material, geometry, dZ=dZ)
        crest_r, crest_u = profiles.crest_from_level_sets(state, material, geometry)
        values["crest_r"] = crest_r
        values["crest_zprime"] = crest_u
    values["kind"] = profile.kind
    values["amplitude"] = profile.amplitude
    values["end_tolerance"] = profile.decay_tol
    values["decay_rate"] = profiles.decay_rate_fit(profile)
    values["saddle_kappa"] = dispersion.saddle_decay_rate(state, material, geometry).real
    store.write_table("profile.csv", profile.to_frame())
    store.write_report("profile_report.txt", _report_lines(values))
    log(f"✓ amplitude {profile.amplitude:.10g}, decay rate {values['decay_rate']:.6g} "
        f"(saddle {values['saddle_kappa']:.6g})")
    return _result(store, profile=profile, report=values)


def cmd_eigenfunction(config: RunConfig, store: RunStore) -> Dict[str, Any]:
    """Dominant unstable disturbance of the standing wave and its growth rate."""
    core = config.get_float("eigen.core", positive=True)
    if config.model == "boussinesq":
        sim = config.sim_config()
        log(f"\n🧪 Boussinesq eigenfunction by evolution (dxi={sim.dxi:g})")
        estimate = boussinesq.extract_eigenfunction_by_evolution(sim, core=min(core, 8.0))
        xi = sim.grid()
        store.write_table("eigenfunction.csv", pd.DataFrame({
            "xi": xi, "B_hat": estimate.profile, "B_exact": boussinesq.exact_eigenfunction(xi)}))
        values = {"rate": estimate.rate, "stderr": estimate.stderr, "t_star": estimate.t_star,
                  "exact_rate": float(boussinesq.GROWTH_RATE),
                  "correlation": boussinesq.eigenfunction_correlation(estimate.profile, xi)}
    else:
        if config.model == "fluid_gas":
            raise ValueError("model: eigenfunctions are extracted for the membrane models")
        material, geometry = config.material(), config.geometry()
        state = config.state()
        model = config.tube_model(state)
        mc = config.membrane_config()
        method = config.get_str("eigen.method", choices=membrane.EIGEN_METHODS)
        log(f"\n🧪 Tube eigenfunction at r0={state.r0:g} ({method})")
        profile = profiles.solitary_profile(state, material, geometry, dZ=mc.dZ)
        eigen = membrane.extract_eigenfunction(profile, model, mc, method=method, core=core,
                                               seed=config.seed())
        store.write_table("eigenfunction.csv", pd.DataFrame({
            "Z": eigen.Z, "dz": eigen.dz, "dr": eigen.dr, "dzdot": eigen.dzdot, "drdot": eigen.drdot}))
        values = {"method": method, "kind": eigen.kind, "rate": eigen.rate, "stderr": eigen.stderr}
        if eigen.t_star is not None:
            values["t_star"] = eigen.t_star
    store.write_report("eigenfunction_report.txt", _report_lines(values))
    log(f"✓ growth rate {values['rate']:.6g} ± {values['stderr']:.2g}")
    return _result(store, report=values)


COMMANDS = {
    "dispersion": cmd_dispersion,
    "equilibrium": cmd_equilibrium,
    "run": cmd_run,
    "kink-search": cmd_kink_search,
    "profile": cmd_profile,
    "eigenfunction": cmd_eigenfunction,
}
