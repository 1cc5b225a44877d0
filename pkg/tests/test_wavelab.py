"""Tests for the shared detectors, trackers and fits."""

import numpy as np
import pytest

from wavelab import (
    DiagnosticsSeries,
    Event,
    InsufficientSamplesError,
    OutcomeRecord,
    WindowNotFoundError,
    detect_blowup,
    detect_self_similar,
    detect_split,
    find_crests,
    fit_growth_rate,
    fit_speed,
    mid_crossing,
    sawtooth_indicator,
    tail_energy,
    track_kink,
    track_pulses,
)

X = np.linspace(-50.0, 50.0, 1001)


def _pulse(center, amp=1.0, width=2.0):
    return amp / np.cosh((X - center) / width) ** 2


class TestCrests:

    def test_parabolic_refinement(self):
        pos, amp = find_crests(X, _pulse(0.037), 0.5)
        assert len(pos) == 1
        assert pos[0] == pytest.approx(0.037, abs=2e-3)
        assert amp[0] == pytest.approx(1.0, abs=1e-3)

    def test_baseline_and_threshold(self):
        y = 1.69 + _pulse(5.0, 0.1)
        assert len(find_crests(X, y, 0.05, baseline=1.69)[0]) == 1
        assert len(find_crests(X, y, 0.2, baseline=1.69)[0]) == 0


class TestTracking:

    def test_stationary_pulse(self):
        times = np.arange(0.0, 10.0, 0.5)
        frames = [(X, _pulse(3.0)) for _ in times]
        tracks, losses = track_pulses(times, frames, 0.5)
        assert len(tracks) == 1 and losses == 0
        assert fit_speed(tracks[0].t, tracks[0].x).speed == pytest.approx(0.0, abs=1e-12)

    def test_empty_field(self):
        times = np.arange(0.0, 5.0, 0.5)
        tracks, losses = track_pulses(times, [(X, np.zeros_like(X)) for _ in times], 0.1)
        assert tracks == [] and losses == 0

    def test_lost_track_is_counted(self):
        times = [0.0, 0.5, 1.0]
        frames = [(X, _pulse(0.0)), (X, _pulse(0.0)), (X, np.zeros_like(X))]
        _, losses = track_pulses(times, frames, 0.5)
        assert losses == 1

    def test_two_moving_pulses(self):
        times = np.arange(0.0, 20.0, 0.5)
        frames = [(X, _pulse(-10 - 0.8 * t) + _pulse(10 + 0.8 * t)) for t in times]
        tracks, _ = track_pulses(times, frames, 0.5)
        speeds = sorted(fit_speed(tr.t, tr.x).speed for tr in tracks)
        assert speeds == pytest.approx([-0.8, 0.8], abs=1e-3)


class TestSpeedFit:

    def test_exact_line(self):
        t = np.linspace(0.0, 10.0, 21)
        fit = fit_speed(t, 3.0 + 0.43 * t)
        assert fit.speed == pytest.approx(0.43, rel=1e-12)
        assert fit.stderr < 1e-12

    def test_time_shift_invariance(self):
        t = np.linspace(0.0, 10.0, 21)
        x = np.sin(t) + 0.5 * t
        assert fit_speed(t + 7.0, x).speed == pytest.approx(fit_speed(t, x).speed, rel=1e-12)

    def test_affine_equivariance(self):
        t = np.linspace(0.0, 10.0, 21)
        x = np.cos(t) + 0.2 * t
        assert fit_speed(t, 2.5 * x).speed == pytest.approx(2.5 * fit_speed(t, x).speed, rel=1e-12)

    def test_window_and_too_few_samples(self):
        t = np.linspace(0.0, 10.0, 21)
        with pytest.raises(InsufficientSamplesError):
            fit_speed(t, t, window=(0.0, 2.0))


class TestGrowthRate:

    def test_synthetic_exponential(self):
        t = np.linspace(0.0, 40.0, 401)
        amp = 1e-7 * np.exp(0.5 * t)
        fit = fit_growth_rate(t, amp, 1e-4, 1e-1)
        assert fit.rate == pytest.approx(0.5, abs=1e-6)
        assert fit.n >= 10

    def test_saturating_series_uses_window(self):
        t = np.linspace(0.0, 40.0, 401)
        amp = 1e-7 * np.exp(0.5 * t)
        amp = amp / (1.0 + amp)
        fit = fit_growth_rate(t, amp, 1e-4, 1e-2)
        assert fit.rate == pytest.approx(0.5, rel=1e-2)

    def test_t_min_excludes_early_samples(self):
        t = np.linspace(0.0, 40.0, 401)
        amp = np.where(t < 10.0, 1e-2, 1e-4 * np.exp(0.3 * (t - 10.0)))
        fit = fit_growth_rate(t, amp, 1e-4, 1e-1, t_min=10.0)
        assert fit.rate == pytest.approx(0.3, abs=1e-6)

    def test_no_window(self):
        t = np.linspace(0.0, 10.0, 101)
        with pytest.raises(WindowNotFoundError):
            fit_growth_rate(t, np.full_like(t, 1e-6), 1e-4, 1e-1)


class TestDetectors:

    def test_blowup_from_events(self):
        series = DiagnosticsSeries()
        series.record(0.0, 1.5)
        assert detect_blowup(series) is None
        series.add_event(3.25, "blowup", max_V=51.0)
        assert detect_blowup(series) == 3.25

    def test_series_requires_increasing_time(self):
        series = DiagnosticsSeries()
        series.record(1.0, 0.0)
        with pytest.raises(ValueError, match="increase"):
            series.record(1.0, 0.0)

    def test_split_at_designed_time(self):
        t0, v = 5.1, 1.0
        times = np.arange(0.0, 30.0, 0.25)

        def frame(t):
            d = max(t - t0, 0.0) * v
            if d == 0.0:
                return X, _pulse(0.0, 1.5)
            return X, _pulse(-d, 0.5) + _pulse(d, 0.5)

        tracks, _ = track_pulses(times, [frame(t) for t in times], 0.25)
        verdict = detect_split(tracks, 0.25, 10.0)
        assert verdict.found
        # separation 2*v*(t - t0) first exceeds 10 at t = 10.25
        assert verdict.t_split == pytest.approx(10.25)
        assert verdict.speeds == pytest.approx((-1.0, 1.0), abs=1e-3)

    def test_no_split_for_single_pulse(self):
        times = np.arange(0.0, 10.0, 0.5)
        tracks, _ = track_pulses(times, [(X, _pulse(0.0)) for _ in times], 0.25)
        assert not detect_split(tracks, 0.25, 10.0).found

    def test_split_reports_fit_samples(self):
        # 16 frames, the fit window holds the last 8
        times = np.arange(0.0, 8.0, 0.5)
        frames = [(X, _pulse(-5 - t) + _pulse(5 + t)) for t in times]
        verdict = detect_split(track_pulses(times, frames, 0.25)[0], 0.25, 10.0)
        assert verdict.found
        assert verdict.samples == (8, 8)
        assert verdict.speeds == pytest.approx((-1.0, 1.0), abs=1e-3)

    def test_self_similar_collapse(self):
        F = lambda eta: 1.6 + 0.2 * np.tanh(4.0 * eta)
        ok, error = detect_self_similar(X, F(X / 10.0), 10.0, F(X / 20.0), 20.0, 0.0, 0.4)
        assert ok
        assert error < 1e-3

    def test_not_self_similar(self):
        y1 = 1.6 + 0.2 * np.tanh(X / 2.0)
        ok, error = detect_self_similar(X, y1, 10.0, y1, 20.0, 0.0, 0.4)
        assert not ok and error > 0.03

    def test_detectors_are_deterministic(self):
        times = np.arange(0.0, 10.0, 0.5)
        frames = [(X, _pulse(-5 - t) + _pulse(5 + t)) for t in times]
        a = detect_split(track_pulses(times, frames, 0.25)[0], 0.25, 10.0)
        b = detect_split(track_pulses(times, frames, 0.25)[0], 0.25, 10.0)
        assert a == b


class TestMonitors:

    def test_mid_crossing(self):
        y = np.tanh(X - 2.5)
        assert mid_crossing(X, y, 0.0) == pytest.approx(2.5, abs=1e-3)
        assert mid_crossing(X, np.ones_like(X), 0.0) is None

    def test_track_kink_speed(self):
        times = np.linspace(0.0, 10.0, 21)
        frames = [(X, np.tanh(X - 0.3 * t)) for t in times]
        ts, xs = track_kink(times, frames, 0.0)
        assert fit_speed(ts, xs).speed == pytest.approx(0.3, abs=1e-3)

    def test_sawtooth_indicator(self):
        smooth = np.sin(0.1 * np.arange(100))
        saw = smooth + 1e-3 * (-1.0) ** np.arange(100)
        assert sawtooth_indicator(smooth) < 1e-5
        assert sawtooth_indicator(saw) == pytest.approx(1e-3, rel=1e-2)

    def test_tail_energy(self):
        y = np.where(np.abs(X) < 1.05, 2.0, 1.0)
        assert tail_energy(X, y, 1.0, (-1.05, 1.05)) == pytest.approx(21 * 0.1)


class TestRecords:

    def test_frames(self):
        series = DiagnosticsSeries()
        series.record(0.0, 1.5, [0.0], deviation=1e-3)
        series.record(0.5, 1.4, [-1.0, 1.0], deviation=2e-3)
        series.add_event(0.5, "track_loss", count=1)
        df = series.to_frame()
        assert list(df.columns) == ["t", "max_amp", "crest_positions", "deviation"]
        assert df["crest_positions"].iloc[1] == "-1;1"
        events = series.events_frame()
        assert list(events.columns) == ["t", "event_kind", "payload"]
        assert events["payload"].iloc[0] == "count=1"

    def test_outcome_summary(self):
        record = OutcomeRecord("split", pulse_speeds=[-0.5, 0.75], t_event=20.0, t_end=50.0,
                               events=[Event(1.0, "x")])
        lines = record.summary_lines()
        assert lines[0] == "kind = split"
        assert "pulse_speeds = -0.5;0.75" in lines
