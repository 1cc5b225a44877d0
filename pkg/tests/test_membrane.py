"""Tests for the fixed-pressure membrane tube schemes and experiments."""

from dataclasses import replace

import numpy as np
import pytest

import membrane
from dispersion import coefficients, long_wave_speed
from material import UniformState
from membrane import (
    BendingOption,
    EquilibriumError,
    MembraneConfig,
    MembraneRun,
    NoSignChangeError,
    ProfileTooWideError,
    RiemannSetup,
    TubeField,
    TubeModel,
    classify_run,
    evolve,
    extract_eigenfunction,
    make_initial_solitary,
    make_perturbed,
    make_riemann,
    make_two_steps,
    max_wave_speed,
    position_from_stretch,
    run_experiment,
    sample_kink_speeds,
    spectral_radius,
    stable_time_step,
    step_lax_wendroff,
    step_three_layer,
    tube_acceleration,
    uniform_field,
)
from profiles import WaveProfile, solitary_profile, standing_kink_states
from wavelab import BlowupEvent, CorrectnessLossEvent, DiagnosticsSeries

COMPRESSED = (1.5, 0.7)


def _bump(state, config, height=0.01):
    Z = config.grid()
    zeros = np.zeros_like(Z)
    r = state.r0 + height * np.exp(-Z ** 2 / 4.0)
    return TubeField(state.zprime0 * Z, r, zeros, zeros.copy(), float(Z[0]), config.dZ)


def _zigzag(state, config, height=1e-8):
    field = uniform_field(state, config.grid())
    sign = (-1.0) ** np.arange(field.n)
    field.r[2:-2] += height * sign[2:-2]
    return field


@pytest.fixture
def small_model(small_state, material, geometry):
    return TubeModel.for_state(small_state, material, geometry)


@pytest.fixture
def moderate_model(moderate_state, material, geometry):
    return TubeModel.for_state(moderate_state, material, geometry)


@pytest.fixture(scope="module")
def moderate_profile():
    from material import MaterialParams, TubeGeometry
    material, geometry = MaterialParams(), TubeGeometry()
    state = UniformState.at_equilibrium(1.55, 1.1, material, geometry)
    return solitary_profile(state, material, geometry)


class TestOptions:

    def test_bending_needs_positive_coefficient(self):
        with pytest.raises(ValueError, match="bending coefficient"):
            BendingOption(enabled=True, c=0.0)
        assert BendingOption().coefficient == 0.0
        assert BendingOption(False, 0.3).coefficient == 0.0

    def test_bending_from_thickness(self, material, geometry):
        option = BendingOption.from_scale(material, geometry)
        assert option.enabled
        assert option.coefficient == pytest.approx(1e-3 / 3.0)

    def test_config_validation(self):
        with pytest.raises(ValueError, match="unknown scheme"):
            MembraneConfig(scheme="euler")
        with pytest.raises(ValueError, match="positive"):
            MembraneConfig(dZ=0.0)
        assert len(MembraneConfig(dZ=0.05, L=10.0).grid()) == 401

    def test_field_needs_five_nodes(self):
        with pytest.raises(ValueError, match="at least 5"):
            TubeField(np.zeros(3), np.ones(3), np.zeros(3), np.zeros(3), 0.0, 0.1)

    def test_field_frame_columns(self, small_state, small_model):
        frame = uniform_field(small_state, np.linspace(-1.0, 1.0, 21)).to_frame(small_model)
        assert list(frame.columns) == ["Z", "z", "r", "zdot", "rdot", "zprime", "lambda1", "sigma1"]
        assert frame["lambda1"].to_numpy() == pytest.approx(1.1)


class TestTimeStep:

    def test_bound_without_bending(self, small_state, small_model):
        field = uniform_field(small_state, MembraneConfig(dZ=0.05, L=5.0).grid())
        speed = max_wave_speed(field, small_model)
        assert speed == pytest.approx(1.360, abs=2e-3)
        assert spectral_radius(field, small_model) == pytest.approx(2.0 * speed / 0.05)
        assert stable_time_step(field, small_model) == pytest.approx(0.4 * 0.05 / speed)

    def test_bending_tightens_the_bound(self, small_state, small_model):
        field = uniform_field(small_state, MembraneConfig(dZ=0.05, L=5.0).grid())
        stiff = TubeModel(small_model.material, small_model.geometry, small_model.p_star,
                          BendingOption(True, 0.01))
        assert stable_time_step(field, stiff) < stable_time_step(field, small_model)

    def test_default_step_divides_sampling(self, small_state, small_model):
        config = MembraneConfig(dZ=0.05, L=5.0, snapshot_every=0.5)
        field = uniform_field(small_state, config.grid())
        dt = config.resolve_dt(field, small_model)
        assert dt <= stable_time_step(field, small_model) * (1 + 1e-12)
        assert 0.5 / dt == pytest.approx(round(0.5 / dt), abs=1e-9)

    def test_rejects_unstable_step(self, small_state, small_model):
        config = MembraneConfig(dZ=0.05, L=5.0, dt=0.05)
        with pytest.raises(ValueError, match="stability bound"):
            config.resolve_dt(uniform_field(small_state, config.grid()), small_model)


class TestOperator:

    def test_uniform_state_is_fixed(self, small_state, small_model):
        config = MembraneConfig(dZ=0.05, L=10.0)
        field = uniform_field(small_state, config.grid())
        assert np.max(np.abs(tube_acceleration(field.positions, small_model, field.dZ))) < 1e-10
        dt = config.resolve_dt(field, small_model)
        current = field
        for _ in range(50):
            current = step_lax_wendroff(current, small_model, dt)
        assert np.max(np.abs(current.r - small_state.r0)) < 1e-10
        assert np.max(np.abs(current.z - field.z)) < 1e-10

    def test_uniform_state_is_fixed_with_bending(self, small_state, small_model):
        model = TubeModel(small_model.material, small_model.geometry, small_model.p_star,
                          BendingOption(True, 0.01))
        field = uniform_field(small_state, MembraneConfig(dZ=0.05, L=10.0).grid())
        assert np.max(np.abs(tube_acceleration(field.positions, model, field.dZ))) < 1e-10

    def test_frozen_ends(self, moderate_state, moderate_model):
        config = MembraneConfig(dZ=0.1, L=3.0)
        a = tube_acceleration(_bump(moderate_state, config, 0.2).positions, moderate_model, 0.1)
        assert np.all(a[:, :2] == 0.0) and np.all(a[:, -2:] == 0.0)
        assert np.max(np.abs(a[1])) > 0

    def test_non_positive_radius_is_correctness_loss(self, small_state, small_model):
        field = uniform_field(small_state, np.linspace(-1.0, 1.0, 21))
        field.r[7] = -0.1
        with pytest.raises(CorrectnessLossEvent, match="radius") as info:
            tube_acceleration(field.positions, small_model, field.dZ)
        assert info.value.kind == "non_correct"
        assert info.value.payload["node"] == 7.0

    def test_non_finite_state_is_blowup(self, small_state, small_model):
        field = uniform_field(small_state, np.linspace(-1.0, 1.0, 21))
        field.z[4] = np.nan
        with pytest.raises(BlowupEvent):
            tube_acceleration(field.positions, small_model, field.dZ)

    def test_velocity_guard(self, small_state, small_model):
        field = uniform_field(small_state, np.linspace(-1.0, 1.0, 21))
        field.zdot[2:-2] = 1.0
        with pytest.raises(BlowupEvent, match="guard"):
            step_lax_wendroff(field, small_model, 1e-3, guard=0.5)

    @pytest.mark.parametrize("scheme", ["lax_wendroff", "three_layer"])
    def test_mirror_symmetry_is_exact(self, scheme, moderate_state, moderate_model):
        config = MembraneConfig(dZ=0.1, L=15.0, T=1.0)
        initial = _bump(moderate_state, config, 0.1)
        initial.z = position_from_stretch(initial.Z, np.full(initial.n, moderate_state.zprime0))
        dt = config.resolve_dt(initial, moderate_model)
        previous, current = None, initial
        for _ in range(40):
            if scheme == "three_layer" and previous is not None:
                nxt = step_three_layer(current, previous, moderate_model, dt)
            else:
                nxt = step_lax_wendroff(current, moderate_model, dt)
            previous, current = current, nxt
        np.testing.assert_array_equal(current.r, current.r[::-1])
        np.testing.assert_array_equal(current.z, -current.z[::-1])
        np.testing.assert_array_equal(current.rdot, current.rdot[::-1])


class TestConvergence:

    @staticmethod
    def _solve(state, model, dZ, scheme):
        config = MembraneConfig(dZ=dZ, L=30.0, T=1.0, dt=0.1 * dZ, scheme=scheme, snapshot_every=0.5)
        run = evolve(_bump(state, config), model, config, keep_snapshots=False)
        assert not run.series.events
        return run.field

    @pytest.mark.parametrize("scheme", ["lax_wendroff", "three_layer"])
    def test_second_order(self, scheme, moderate_state, moderate_model):
        coarse, medium, fine = (self._solve(moderate_state, moderate_model, h, scheme)
                                for h in (0.1, 0.05, 0.025))
        core = np.abs(coarse.Z) <= 10.0
        e1 = np.max(np.abs(coarse.r - medium.r[::2])[core])
        e2 = np.max(np.abs(medium.r[::2] - fine.r[::4])[core])
        assert 3.3 < e1 / e2 < 4.7

    def test_schemes_agree_under_refinement(self, moderate_state, moderate_model):
        gaps = []
        for h in (0.1, 0.05):
            lw = self._solve(moderate_state, moderate_model, h, "lax_wendroff")
            tl = self._solve(moderate_state, moderate_model, h, "three_layer")
            gaps.append(np.max(np.abs(lw.r - tl.r)[::round(0.1 / h)]))
        assert gaps[0] > 3.0 * gaps[1]


class TestSawtooth:

    @staticmethod
    def _config():
        return MembraneConfig(dZ=0.05, L=5.0, T=0.5, scheme="three_layer", snapshot_every=0.05)

    def test_compressed_tube_without_bending_is_not_correct(self, material, geometry):
        state = UniformState.at_equilibrium(*COMPRESSED, material, geometry)
        model = TubeModel.for_state(state, material, geometry)
        config = self._config()
        run = evolve(_zigzag(state, config), model, config)
        assert min(run.series.extra["min_sigma1"]) < 0
        assert classify_run(run, config, "solitary").kind == "non_correct"

    def test_bending_suppresses_grid_oscillation(self, material, geometry):
        state = UniformState.at_equilibrium(*COMPRESSED, material, geometry)
        model = TubeModel.for_state(state, material, geometry, bending=BendingOption(True, 0.01))
        config = self._config()
        run = evolve(_zigzag(state, config), model, config)
        assert not run.series.events
        assert max(run.series.extra["sawtooth"]) < 1e-6


class TestInitialData:

    def test_position_from_even_stretch_is_odd(self):
        Z = 0.1 * np.arange(-50, 51, dtype=float)
        z = position_from_stretch(Z, 1.1 + 0.2 * np.exp(-Z ** 2))
        np.testing.assert_array_equal(z, -z[::-1])
        assert z[50] == 0.0
        assert z[-1] == pytest.approx(5.5 + 0.1 * np.sqrt(np.pi), rel=1e-4)

    def test_solitary_on_mirror_grid(self, moderate_profile, material, geometry):
        Z = MembraneConfig(dZ=0.05, L=40.0).grid()
        field = make_initial_solitary(moderate_profile, Z, material, geometry)
        np.testing.assert_array_equal(field.r, field.r[::-1])
        assert field.r[len(Z) // 2] == pytest.approx(1.9933242625, abs=1e-4)
        assert np.all(field.zdot == 0.0) and np.all(field.rdot == 0.0)

    def test_profile_too_wide_for_grid(self, moderate_profile, material, geometry):
        with pytest.raises(ProfileTooWideError):
            make_initial_solitary(moderate_profile, np.linspace(-5.0, 5.0, 201), material, geometry)

    def test_end_state_must_be_equilibrated(self, material, geometry):
        Z = np.linspace(-2.0, 2.0, 41)
        profile = WaveProfile(Z, np.full_like(Z, 1.55), np.full_like(Z, 1.1),
                              UniformState(1.55, 1.1, 0.5))
        with pytest.raises(EquilibriumError):
            make_initial_solitary(profile, Z, material, geometry)

    def test_perturbation_mixes_fields(self, small_state, moderate_state):
        Z = np.linspace(-2.0, 2.0, 41)
        base, snap = uniform_field(small_state, Z), uniform_field(moderate_state, Z)
        np.testing.assert_array_equal(make_perturbed(base, snap, 0.0).r, base.r)
        assert make_perturbed(base, snap, 1.0).r == pytest.approx(snap.r)
        assert make_perturbed(base, snap, -1.0).r == pytest.approx(2.0 * base.r - snap.r)
        with pytest.raises(ValueError, match="different grids"):
            make_perturbed(base, uniform_field(small_state, np.linspace(-2.0, 2.0, 81)), 0.5)


class TestRiemann:

    def test_right_state_from_pressure(self, material, geometry):
        setup = RiemannSetup.from_radii(1.3993, 1.1, 3.047, material, geometry)
        assert setup.z02p == pytest.approx(2.166, abs=5e-3)
        left, right = setup.end_states(material, geometry)
        assert right.p_star == pytest.approx(left.p_star, abs=1e-8)

    def test_equal_radii_give_uniform_data(self, material, geometry):
        setup = RiemannSetup.from_radii(1.69, 1.1, 1.69, material, geometry)
        field = make_riemann(setup, np.linspace(-5.0, 5.0, 101), material, geometry)
        assert np.all(field.r == 1.69)
        assert field.zprime == pytest.approx(1.1)

    def test_step_is_monotone(self, material, geometry):
        setup = RiemannSetup.from_radii(1.3993, 1.1, 3.047, material, geometry, L=2.0)
        field = make_riemann(setup, MembraneConfig(dZ=0.1, L=60.0).grid(), material, geometry)
        assert np.all(np.diff(field.r) >= 0)
        assert field.r[0] == pytest.approx(1.3993, abs=1e-12)
        assert field.r[-1] == pytest.approx(3.047, abs=1e-12)
        assert setup.level == pytest.approx(0.5 * (1.3993 + 3.047))

    def test_rejects_unequal_pressures(self, material, geometry):
        setup = RiemannSetup(1.55, 1.1, 1.69, 1.1)
        with pytest.raises(EquilibriumError, match="different pressures"):
            make_riemann(setup, np.linspace(-5.0, 5.0, 101), material, geometry)
        with pytest.raises(ValueError, match="positive"):
            RiemannSetup(1.55, 1.1, 1.55, 1.1, L=0.0)

    def test_two_steps_are_even(self, material, geometry):
        setup = RiemannSetup.from_radii(1.3993, 1.1, 3.047, material, geometry)
        Z = MembraneConfig(dZ=0.1, L=30.0).grid()
        field = make_two_steps(setup.r01, setup.z01p, setup.r02, setup.z02p, 8.0, 1.0, Z,
                               material, geometry)
        np.testing.assert_array_equal(field.r, field.r[::-1])
        assert field.r[len(Z) // 2] == pytest.approx(3.047, abs=1e-6)
        with pytest.raises(ValueError, match="half_width"):
            make_two_steps(1.55, 1.1, 1.55, 1.1, 0.0, 1.0, Z, material, geometry)


class TestExperiments:

    def test_uniform_tube_stands(self, small_state, small_model):
        config = MembraneConfig(dZ=0.1, L=10.0, T=2.0)
        outcome, run = run_experiment(uniform_field(small_state, config.grid()), small_model, config)
        assert outcome.kind == "standing"
        assert run.series.t[-1] == pytest.approx(2.0)
        assert len(run.snapshots) == len(run.series.t)

    def test_unknown_experiment(self, small_state, small_model):
        config = MembraneConfig(dZ=0.1, L=10.0, T=1.0)
        with pytest.raises(ValueError, match="unknown experiment"):
            run_experiment(uniform_field(small_state, config.grid()), small_model, config, "collision")

    def test_event_is_recorded_and_classified(self, small_state, small_model):
        config = MembraneConfig(dZ=0.1, L=10.0, T=1.0)
        initial = uniform_field(small_state, config.grid())
        initial.rdot[2:-2] = 1.0
        config.detectors = membrane.DetectorSettings(blowup_guard=0.1)
        outcome, run = run_experiment(initial, small_model, config)
        assert outcome.kind == "blowup"
        assert run.series.events[0].kind == "blowup"


class TestShockTail:

    @staticmethod
    def _front_run(state, speed, ripple=0.0):
        config = MembraneConfig(dZ=0.1, L=40.0, T=20.0)
        Z = config.grid()
        series, snapshots = DiagnosticsSeries(), []
        for t in np.arange(0.0, 20.25, 0.5):
            front = -10.0 + speed * t
            field = uniform_field(state, Z)
            field.r = state.r0 + 0.25 * (1.0 + np.tanh((Z - front) / 0.5))
            behind = (Z > front - 15.0) & (Z < front - 1.0)
            field.r[behind] += ripple * np.sin(3.0 * Z[behind])
            series.record(t, float(np.max(field.r)), (), kink_position=front)
            snapshots.append((t, field))
        return MembraneRun(snapshots[-1][1], series, snapshots, 0.01), config, state.r0 + 0.25

    def _classify(self, state, speed, material, geometry, ripple=0.0):
        run, config, level = self._front_run(state, speed, ripple)
        model = TubeModel.for_state(state, material, geometry)
        return classify_run(run, config, "riemann", model=model, level=level)

    def test_fast_front_leaves_a_clean_tail(self, small_state, material, geometry):
        outcome = self._classify(small_state, 2.0, material, geometry)
        assert outcome.kind == "shock_fan"
        assert outcome.kink_speed == pytest.approx(2.0)
        assert outcome.details["line_intersects"] == 0.0
        assert outcome.details["tail_radiating"] == 0.0
        assert outcome.details["tail_consistent"] == 1.0

    def test_intersecting_speed_with_persistent_ripple(self, moderate_state, material, geometry):
        c = coefficients(moderate_state, material, geometry)
        U = 0.5 * (long_wave_speed(moderate_state, material, geometry).real + c.Utau.real)
        outcome = self._classify(moderate_state, U, material, geometry, ripple=0.01)
        assert outcome.details["line_intersects"] == 1.0
        assert outcome.details["tail_radiating"] == 1.0
        assert outcome.details["tail_energy"] == pytest.approx(outcome.details["tail_energy_mid"], rel=0.1)
        assert outcome.details["tail_consistent"] == 1.0

    def test_ripple_behind_a_disjoint_line_is_flagged(self, small_state, material, geometry):
        outcome = self._classify(small_state, 2.0, material, geometry, ripple=0.01)
        assert outcome.details["tail_radiating"] == 1.0
        assert outcome.details["tail_consistent"] == 0.0

    def test_without_model_the_check_is_skipped(self, small_state):
        run, config, _ = self._front_run(small_state, 2.0)
        outcome = classify_run(run, config, "riemann")
        assert outcome.kind == "shock_fan"
        assert "tail_energy" not in outcome.details


class TestKinkSearch:

    @staticmethod
    def _fake_speeds(r02s, *args, **kwargs):
        return np.asarray(r02s, dtype=float) - 3.0

    @pytest.fixture
    def patched(self, monkeypatch):
        monkeypatch.setattr(membrane, "sample_kink_speeds", self._fake_speeds)
        monkeypatch.setattr(membrane, "_standing_profile",
                            lambda r01, z01p, r02, speed, *args: (r02, speed, args[-1]))

    @pytest.mark.parametrize("workers", [1, 3])
    def test_bracket_shrinks_to_zero_speed(self, patched, workers, small_model):
        r02, speed, evaluations = membrane.find_standing_kink(
            1.3993, 1.1, (2.9, 3.2), small_model, MembraneConfig(), tol=1e-4, workers=workers)
        assert abs(speed) < 1e-4
        assert r02 == pytest.approx(3.0, abs=1e-4)
        assert evaluations > 2

    def test_same_sign_bracket(self, patched, small_model):
        with pytest.raises(NoSignChangeError, match="share a sign") as info:
            membrane.find_standing_kink(1.3993, 1.1, (3.1, 3.2), small_model, MembraneConfig())
        assert info.value.speeds == pytest.approx((0.1, 0.2))


@pytest.mark.slow
class TestLongRuns:

    def test_linearized_eigenfunction_is_even_and_growing(self, moderate_profile, material, geometry):
        model = TubeModel.for_state(moderate_profile.end_state, material, geometry)
        config = MembraneConfig(dZ=0.1, L=40.0, T=40.0)
        eigen = extract_eigenfunction(moderate_profile, model, config, method="linearized")
        assert eigen.kind == "exponential"
        assert 0.15 < eigen.rate < 0.6
        assert np.max(np.abs(eigen.dr)) == pytest.approx(1.0)
        assert np.corrcoef(eigen.dr, eigen.dr[::-1])[0, 1] > 0.999

    def test_kink_speed_changes_sign_across_the_standing_state(self, material, geometry):
        left, right = standing_kink_states(1.1, (1.38, 1.42), material, geometry)
        model = TubeModel.for_state(left, material, geometry)
        config = MembraneConfig(dZ=0.1, L=60.0, T=30.0)
        speeds = sample_kink_speeds([0.97 * right.r0, 1.03 * right.r0], left.r0, left.zprime0,
                                    model, config)
        assert speeds[0] * speeds[1] < 0

    def test_small_amplitude_wave_decays_into_a_symmetric_pair(self, small_state, material, geometry):
        config = MembraneConfig(dZ=0.1, L=400.0, T=250.0, snapshot_every=1.0)
        profile = solitary_profile(small_state, material, geometry, dZ=config.dZ)
        initial = make_initial_solitary(profile, config.grid(), material, geometry)
        model = TubeModel.for_state(small_state, material, geometry)
        outcome, _ = run_experiment(initial, model, config, "solitary")
        assert outcome.kind == "split"
        left, right = outcome.pulse_speeds
        assert left == pytest.approx(-right, rel=2e-2)

    def test_moderate_growth_saturates_into_a_self_similar_fan(self, moderate_profile, material,
                                                                geometry):
        state = moderate_profile.end_state
        config = MembraneConfig(dZ=0.1, L=160.0, T=100.0, snapshot_every=1.0)
        model = TubeModel.for_state(state, material, geometry)
        base = make_initial_solitary(moderate_profile, config.grid(), material, geometry)
        early = evolve(base, model, replace(config, T=20.0, snapshot_every=20.0), keep_snapshots=False)
        assert not early.series.events
        outcome, _ = run_experiment(make_perturbed(base, early.field, -1.0), model, config, "perturbed")
        assert outcome.kind == "saturated_self_similar"
        assert outcome.details["collapse_error"] < 0.03
