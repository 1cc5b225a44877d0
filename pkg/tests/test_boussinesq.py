"""Tests for the scaled Boussinesq test model and its schemes."""

import numpy as np
import pytest
from scipy.integrate import trapezoid

from boussinesq import (
    GROWTH_RATE,
    ScalarField,
    SimConfig,
    discrete_standing_wave,
    eigenfunction_correlation,
    evolve,
    exact_eigenfunction,
    exact_standing_wave,
    extract_eigenfunction_by_evolution,
    invariants,
    linearized_evolution,
    run_perturbation,
    split_ratio,
    split_speed_prediction,
    step_lax_wendroff,
    step_three_layer,
)


def _field(config, V, Q=None):
    xi = config.grid()
    return ScalarField(V, np.zeros_like(xi) if Q is None else Q, xi[0], config.dxi)


def _zero_crossings(t, c):
    idx = np.nonzero(c[:-1] * c[1:] < 0)[0]
    return t[idx] - c[idx] * (t[idx + 1] - t[idx]) / (c[idx + 1] - c[idx])


class TestClosedForms:

    def test_standing_wave(self):
        assert exact_standing_wave(0.0) == 1.5
        xi = np.linspace(0.0, 40.0, 9)
        np.testing.assert_array_equal(exact_standing_wave(xi), exact_standing_wave(-xi))
        assert exact_standing_wave(40.0) == pytest.approx(6.0 * np.exp(-40.0), rel=1e-6)

    def test_eigenfunction(self):
        assert exact_eigenfunction(0.0) == pytest.approx(1.0)
        root = 2.0 * np.arccosh(np.sqrt(2.0))
        assert exact_eigenfunction(root) == pytest.approx(0.0, abs=1e-15)
        assert exact_eigenfunction(-root) == pytest.approx(0.0, abs=1e-15)
        assert abs(exact_eigenfunction(60.0)) < 1e-12

    def test_growth_rate_constant(self):
        assert GROWTH_RATE ** 2 == pytest.approx(3.0 / 16.0)

    def test_standing_wave_invariants(self):
        config = SimConfig(dxi=0.05, L=40.0, T=1.0)
        mass, hamiltonian = invariants(_field(config, exact_standing_wave(config.grid())))
        assert mass == pytest.approx(6.0, rel=1e-6)
        assert hamiltonian == pytest.approx(1.2, rel=1e-3)

    def test_split_pair_carries_the_standing_invariants(self):
        c = split_speed_prediction()
        mu = 1.0 - c * c
        xi = np.linspace(-60.0, 60.0, 24001)
        pulse = 1.5 * mu / np.cosh(np.sqrt(mu) * xi / 2.0) ** 2
        assert 2.0 * trapezoid(pulse, xi) == pytest.approx(6.0, rel=1e-6)
        slope = -np.sqrt(mu) * pulse * np.tanh(np.sqrt(mu) * xi / 2.0)
        density = 0.5 * (c * c + 1.0) * pulse ** 2 + 0.5 * slope ** 2 - pulse ** 3 / 3.0
        assert 2.0 * trapezoid(density, xi) == pytest.approx(1.2, rel=1e-6)

    def test_split_ratio_in_standing_wave_widths(self):
        c = split_speed_prediction()
        assert split_ratio([-c, c]) == pytest.approx(np.sqrt(3.0) / 4.0)
        assert split_ratio([-c, c]) == pytest.approx(0.43, abs=5e-3)


class TestConfig:

    def test_default_time_step(self):
        config = SimConfig()
        assert config.dtau == pytest.approx(0.002)
        assert len(config.grid()) == 2001

    def test_stability_bound(self):
        with pytest.raises(ValueError, match="stability"):
            SimConfig(dxi=0.1, dtau=0.003)

    def test_unknown_scheme(self):
        with pytest.raises(ValueError, match="scheme"):
            SimConfig(scheme="euler")

    def test_field_needs_five_points(self):
        with pytest.raises(ValueError, match="5"):
            ScalarField(np.zeros(4), np.zeros(4), 0.0, 0.1)

    def test_grid_is_symmetric(self):
        xi = SimConfig(dxi=0.1, L=30.0).grid()
        np.testing.assert_array_equal(xi, -xi[::-1])


class TestSteppers:

    def test_zero_field_is_fixed(self):
        config = SimConfig(dxi=0.1, L=10.0)
        zero = _field(config, np.zeros(201))
        assert not np.any(step_lax_wendroff(zero, config).V)
        nxt = step_three_layer(zero, zero, config)
        assert not np.any(nxt.V) and not np.any(nxt.Q)

    def test_constant_field_is_fixed(self):
        config = SimConfig(dxi=0.1, L=10.0)
        const = _field(config, np.full(201, 0.5))
        np.testing.assert_array_equal(step_lax_wendroff(const, config).V, const.V)
        np.testing.assert_array_equal(step_three_layer(const, const, config).V, const.V)

    def test_discrete_standing_wave_is_fixed_point(self):
        config = SimConfig(dxi=0.1, L=30.0)
        Vd = discrete_standing_wave(config.grid(), config.dxi)
        nxt = step_lax_wendroff(_field(config, Vd), config)
        assert np.max(np.abs(nxt.V - Vd)) < 1e-12
        assert np.max(np.abs(nxt.Q)) < 1e-9

    def test_discrete_standing_wave_is_close_to_exact(self):
        config = SimConfig(dxi=0.1, L=30.0)
        xi = config.grid()
        Vd = discrete_standing_wave(xi, config.dxi)
        gap = np.max(np.abs(Vd - exact_standing_wave(xi)))
        assert 0.0 < gap < 1e-2
        np.testing.assert_array_equal(Vd, Vd[::-1])

    def test_guard_raises_blowup_event(self):
        from wavelab import BlowupEvent

        config = SimConfig(dxi=0.1, L=10.0)
        huge = _field(config, np.full(201, 100.0))
        with pytest.raises(BlowupEvent):
            step_lax_wendroff(huge, config)

    @pytest.mark.parametrize("scheme", ["three_layer", "lax_wendroff"])
    def test_second_order_convergence(self, scheme):
        errors = []
        for dxi in (0.2, 0.1, 0.05):
            config = SimConfig(dxi=dxi, L=30.0, T=1.0, scheme=scheme, snapshot_every=1.0)
            xi = config.grid()
            Vs = exact_standing_wave(xi)
            run = evolve(_field(config, Vs), config)
            errors.append(np.max(np.abs(run.field.V - Vs)))
        ratios = [errors[0] / errors[1], errors[1] / errors[2]]
        for ratio in ratios:
            assert 3.5 < ratio < 4.5

    def test_plane_wave_frequency(self):
        config = SimConfig(dxi=0.1, L=150.0, T=9.0, snapshot_every=0.02)
        xi = config.grid()
        V = 1e-6 * np.exp(-xi ** 2 / (2.0 * 30.0 ** 2)) * np.cos(xi)
        run = evolve(_field(config, V), config)
        t = np.array([s[0] for s in run.snapshots])
        c = np.array([np.sum(s[1] * np.cos(xi)) for s in run.snapshots])
        crossings = _zero_crossings(t, c)
        assert len(crossings) >= 3
        period = 2.0 * np.mean(np.diff(crossings))
        assert 2.0 * np.pi / period == pytest.approx(np.sqrt(2.0), rel=1e-2)

    def test_lax_wendroff_dissipates_more(self):
        drifts = {}
        for scheme in ("three_layer", "lax_wendroff"):
            config = SimConfig(dxi=0.1, L=60.0, T=10.0, scheme=scheme, snapshot_every=10.0)
            xi = config.grid()
            V = 1e-4 * np.exp(-xi ** 2 / 50.0) * np.cos(5.0 * xi)
            initial = _field(config, V)
            run = evolve(initial, config)
            h0 = invariants(initial)[1]
            drifts[scheme] = abs(invariants(run.field)[1] - h0) / h0
        assert drifts["lax_wendroff"] > 0.1
        assert drifts["lax_wendroff"] > 10.0 * drifts["three_layer"]


class TestLinearized:

    def test_exact_mode_grows_from_the_start(self):
        config = SimConfig(dxi=0.1, L=40.0, T=20.0, snapshot_every=0.5)
        B = exact_eigenfunction(config.grid())
        mode = linearized_evolution(config, B, GROWTH_RATE * B)
        slope = np.polyfit(mode.t, mode.log_norm, 1)[0]
        assert slope == pytest.approx(GROWTH_RATE, rel=2e-2)
        assert mode.kind == "exponential"

    def test_random_seed_finds_the_eigenfunction(self):
        config = SimConfig(dxi=0.1, L=40.0, T=40.0, snapshot_every=0.5)
        xi = config.grid()
        rng = np.random.default_rng(2)
        seed = rng.normal(size=xi.shape) * np.exp(-xi ** 2 / 50.0)
        mode = linearized_evolution(config, seed)
        assert mode.kind == "exponential"
        assert mode.rate == pytest.approx(GROWTH_RATE, rel=5e-2)
        assert eigenfunction_correlation(mode.profile, xi) > 0.98

    def test_odd_seed_stays_odd(self):
        config = SimConfig(dxi=0.1, L=40.0, T=30.0, snapshot_every=0.5)
        xi = config.grid()
        seed = xi * np.exp(-xi ** 2 / 20.0)
        mode = linearized_evolution(config, seed)
        np.testing.assert_array_equal(mode.profile, -mode.profile[::-1])
        assert mode.kind == "oscillation"

    def test_zero_seed_rejected(self):
        config = SimConfig(dxi=0.1, L=10.0, T=1.0)
        with pytest.raises(ValueError, match="nonzero"):
            linearized_evolution(config, np.zeros(201))


@pytest.mark.slow
class TestPerturbationOutcomes:

    def test_positive_epsilon_blows_up_consistently(self):
        times = []
        for dxi in (0.2, 0.1):
            config = SimConfig(dxi=dxi, L=60.0, T=40.0)
            outcome, _ = run_perturbation(1e-2, "exact_B", config)
            assert outcome.kind == "blowup"
            times.append(outcome.t_event)
        assert abs(times[0] - times[1]) < 0.1 * times[1]

    def test_negative_epsilon_splits(self):
        config = SimConfig(dxi=0.2, L=80.0, T=60.0)
        outcome, _ = run_perturbation(-1e-2, "exact_B", config)
        assert outcome.kind == "split"
        left, right = outcome.pulse_speeds
        assert left == pytest.approx(-right, rel=1e-2)
        assert right == pytest.approx(split_speed_prediction(), abs=0.05)
        assert outcome.details["split_ratio"] == pytest.approx(0.43, abs=0.05)
        assert outcome.details["speed_samples"] >= config.detectors.min_fit_samples

    def test_eigenfunction_by_evolution(self):
        config = SimConfig(dxi=0.1, L=40.0, T=60.0)
        estimate = extract_eigenfunction_by_evolution(config)
        assert estimate.rate == pytest.approx(GROWTH_RATE, rel=5e-2)
        assert eigenfunction_correlation(estimate.profile, config.grid()) > 0.98

        # pulses must stay clear of the rigid ends of the same grid
        short = SimConfig(dxi=0.1, L=40.0, T=45.0)
        blowup, _ = run_perturbation(1e-2, "evolved_Bhat", short, estimate.profile, estimate.rate)
        split, _ = run_perturbation(-1e-2, "evolved_Bhat", short, estimate.profile, estimate.rate)
        assert blowup.kind == "blowup"
        assert split.kind == "split"
