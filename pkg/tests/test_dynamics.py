import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotwave.dynamics import (
    TRAJECTORY_CSV_HEADER,
    IntegratorConfig,
    NodeEncountered,
    StepLimitExceeded,
    TrajectoryStatus,
    integrate_batch,
    integrate_trajectory,
    velocity_field,
    write_trajectory_csv,
)
from pilotwave.ensembles import sample_antisymmetric_slice
from pilotwave.quantum_state import (
    ConfigurationPoint,
    NodeProximity,
    SlitGeometry,
    StatisticsMode,
    TwoParticleWaveFunction,
)
from pilotwave.verification import sum_conservation_report

from helpers import ARRIVAL_TIME, density_samples

TIMES = np.linspace(0.0, ARRIVAL_TIME, 51)


def spread(t):
    # rms width of a unit Gaussian with hbar = m = 1
    return np.sqrt(1.0 + (t / 2.0) ** 2)


class TestVelocityField:
    @settings(max_examples=100, deadline=None)
    @given(y1=st.floats(-3, 3), y2=st.floats(-3, 3), t=st.floats(0.0, 6.0))
    def test_vanishes_on_symmetry_plane(self, y1, y2, t):
        w = TwoParticleWaveFunction.from_geometry()
        q = np.array([0.0, 5 * t + y1, 0.0, 5 * t + y2])
        try:
            v = velocity_field(w, q, t)
        except NodeProximity:
            return
        assert v[0] == 0.0 and v[2] == 0.0

    def test_reflection_and_exchange(self, bosonic):
        t = 2.0
        q = density_samples(bosonic, t, 300, seed=5)
        v = velocity_field(bosonic, q, t)
        v_refl = velocity_field(bosonic, q * [-1, 1, -1, 1], t)
        v_swap = velocity_field(bosonic, q[:, [2, 3, 0, 1]], t)
        assert np.array_equal(v_refl[:, [0, 2]], -v[:, [0, 2]])
        assert np.array_equal(v_refl[:, [1, 3]], v[:, [1, 3]])
        assert np.array_equal(v_swap, v[:, [2, 3, 0, 1]])

    def test_matches_phase_gradient(self, bosonic):
        t = 1.5
        q = density_samples(bosonic, t, 50, seed=6)
        v = velocity_field(bosonic, q, t)
        h = 1e-6
        for col in range(4):
            step = np.zeros(4)
            step[col] = h
            # Im d log Psi, by differencing the unwrapped phase
            dphase = np.angle(bosonic.value(q + step, t) / bosonic.value(q - step, t)) / (2 * h)
            np.testing.assert_allclose(v[:, col], dphase, rtol=1e-6, atol=1e-7)

    def test_point_input_and_node_error(self, bosonic):
        p = ConfigurationPoint(4.0, 0.0, -4.0, 0.0, t=0.0)
        assert velocity_field(bosonic, p).shape == (4,)
        with pytest.raises(NodeProximity):
            velocity_field(bosonic, np.array([0.0, 40.0, 0.0, 40.0]), 0.0)


class TestSingleTrajectories:
    def test_maxwell_boltzmann_closed_form_and_crossing(self, maxwell_boltzmann):
        # each particle follows its own packet: x(t) = center + (x0 - center) s(t)
        q0 = ConfigurationPoint(2.0, 0.0, -2.0, 0.0, t=0.0)
        tr = integrate_trajectory(maxwell_boltzmann, q0, ARRIVAL_TIME, sample_times=TIMES)
        assert tr.status is TrajectoryStatus.COMPLETE
        np.testing.assert_allclose(tr.positions[:, 0], 5.0 - 3.0 * spread(TIMES), atol=1e-7)
        np.testing.assert_allclose(tr.positions[:, 2], -5.0 + 3.0 * spread(TIMES), atol=1e-7)
        np.testing.assert_allclose(tr.positions[:, 1], 5.0 * TIMES, atol=1e-7)
        # the particles pass through x = 0 at s(t) = 5/3, t = 8/3
        crossing = TIMES[np.flatnonzero(np.diff(np.sign(tr.positions[:, 0])))[0] + 1]
        assert crossing == pytest.approx(8.0 / 3.0, abs=TIMES[1])

    def test_single_particle_center_moves_with_group_velocity(self, single_particle):
        tr = integrate_trajectory(single_particle, np.array([5.0, 0.0, 0.0, 0.0]), ARRIVAL_TIME,
                                  sample_times=TIMES)
        np.testing.assert_allclose(tr.positions[:, 1], 5.0 * TIMES, atol=1e-7)
        assert np.all(tr.positions[:, 2:] == 0.0)
        # x only stays put when the other slit is too far away to interfere
        far = TwoParticleWaveFunction.from_geometry(SlitGeometry(slit_separation_half=40.0),
                                                    mode=StatisticsMode.SINGLE_PARTICLE)
        tr = integrate_trajectory(far, np.array([40.0, 0.0, 0.0, 0.0]), ARRIVAL_TIME, sample_times=TIMES)
        np.testing.assert_allclose(tr.positions[:, 0], 40.0, atol=1e-9)

    def test_antisymmetric_start_stays_on_slice(self, bosonic):
        tr = integrate_trajectory(bosonic, np.array([1.0, 0.0, -1.0, 0.0]), ARRIVAL_TIME, sample_times=TIMES)
        assert np.max(np.abs(tr.positions[:, 0] + tr.positions[:, 2])) <= 1e-6
        assert np.all(tr.positions[:, 0] > 0)

    def test_samples_are_consistent_with_velocity(self, bosonic):
        tr = integrate_trajectory(bosonic, np.array([3.2, 0.4, -6.1, -0.2]), ARRIVAL_TIME,
                                  sample_times=np.linspace(0, ARRIVAL_TIME, 501))
        dt = np.diff(tr.times)
        trapezoid = 0.5 * (tr.velocities[1:] + tr.velocities[:-1]) * dt[:, None]
        assert np.max(np.abs(np.diff(tr.positions, axis=0) - trapezoid)) < 1e-4
        assert np.all(np.diff(tr.times) > 0)
        np.testing.assert_array_equal(tr.velocities, velocity_field(bosonic, tr.positions, tr.times))

    def test_stats_and_sample_times(self, bosonic):
        tr = integrate_trajectory(bosonic, np.array([4.0, 0.0, -4.5, 0.3]), ARRIVAL_TIME)
        assert list(tr.times) == [0.0, ARRIVAL_TIME]
        assert tr.stats["n_steps"] > 0 and tr.stats["min_abs_psi"] > 0
        assert tr.position_at(0.0).tolist() == [4.0, 0.0, -4.5, 0.3]
        with pytest.raises(KeyError):
            tr.position_at(1.234)

    def test_invalid_requests(self, bosonic):
        q = np.array([4.0, 0.0, -4.0, 0.0])
        with pytest.raises(ValueError):
            integrate_trajectory(bosonic, q, 0.0)
        with pytest.raises(ValueError):
            integrate_trajectory(bosonic, q, 1.0, sample_times=[0.0, 2.0])
        with pytest.raises(ValueError):
            integrate_trajectory(bosonic, q, 1.0, sample_times=[0.5, 0.2])
        with pytest.raises(ValueError):
            IntegratorConfig(min_step=1.0, max_step=0.5)
        with pytest.raises(ValueError):
            IntegratorConfig(rel_tol=0.0)


class TestFailures:
    def test_node_truncation(self, bosonic):
        # a huge node threshold turns the low-density tail into a forbidden zone
        cfg = IntegratorConfig(node_epsilon=0.3, min_step=1e-6)
        q0 = np.array([3.0, 0.0, -6.5, 0.0])
        tr = integrate_trajectory(bosonic, q0, ARRIVAL_TIME, cfg, sample_times=TIMES)
        assert tr.status is TrajectoryStatus.NODE
        assert isinstance(tr.failure, NodeEncountered)
        assert tr.truncated and 0 < len(tr) < TIMES.size
        with pytest.raises(NodeEncountered):
            integrate_trajectory(bosonic, q0, ARRIVAL_TIME, cfg, TIMES, raise_on_failure=True)

    def test_step_limit(self, bosonic):
        cfg = IntegratorConfig(max_steps=3)
        tr = integrate_trajectory(bosonic, np.array([4.0, 0.0, -4.0, 0.0]), ARRIVAL_TIME, cfg)
        assert tr.status is TrajectoryStatus.STEP_LIMIT
        assert isinstance(tr.failure, StepLimitExceeded)

    def test_one_failure_does_not_abort_batch(self, bosonic):
        cfg = IntegratorConfig(node_epsilon=0.3, min_step=1e-6)
        starts = np.array([[3.0, 0.0, -6.5, 0.0], [5.0, 0.0, -5.0, 0.0]])
        trs = integrate_batch(bosonic, starts, ARRIVAL_TIME, cfg, TIMES)
        assert trs[0].truncated and not trs[1].truncated
        assert len(trs[1]) == TIMES.size


class TestBatch:
    def test_batch_of_one_equals_single_call(self, bosonic):
        starts = density_samples(bosonic, 0.0, 20, seed=7)
        batch = integrate_batch(bosonic, starts, ARRIVAL_TIME, sample_times=TIMES)
        for q0, tb in zip(starts, batch):
            ts = integrate_trajectory(bosonic, q0, ARRIVAL_TIME, sample_times=TIMES)
            assert np.array_equal(tb.positions, ts.positions)
            assert np.array_equal(tb.velocities, ts.velocities)
            assert tb.stats == ts.stats

    def test_permutation_equivariance(self, bosonic):
        starts = density_samples(bosonic, 0.0, 30, seed=8)
        perm = np.random.default_rng(0).permutation(30)
        a = integrate_batch(bosonic, starts, ARRIVAL_TIME, sample_times=TIMES)
        b = integrate_batch(bosonic, starts[perm], ARRIVAL_TIME, sample_times=TIMES)
        for i, j in enumerate(perm):
            assert np.array_equal(b[i].positions, a[j].positions)

    def test_hundred_slice_starts_conserve_sum(self, bosonic):
        starts, _ = sample_antisymmetric_slice(bosonic, 0.0, 100, seed=9)
        trs = integrate_batch(bosonic, starts, ARRIVAL_TIME, sample_times=TIMES)
        rep = sum_conservation_report(trs)
        assert rep.passed and rep.details["sign_flips"] == 0

    def test_projection_flag_keeps_slice_exact(self, bosonic):
        starts, _ = sample_antisymmetric_slice(bosonic, 0.0, 20, seed=10)
        trs = integrate_batch(bosonic, starts, ARRIVAL_TIME, IntegratorConfig(project_to_slice=True), TIMES)
        assert all(np.array_equal(tr.positions[:, 0], -tr.positions[:, 2]) for tr in trs)

    def test_halving_tolerance_within_error_estimate(self, bosonic):
        starts = density_samples(bosonic, 0.0, 30, seed=11)
        for tol in (1e-6, 1e-8):
            coarse = integrate_batch(bosonic, starts, ARRIVAL_TIME, IntegratorConfig(rel_tol=tol, abs_tol=tol))
            fine = integrate_batch(bosonic, starts, ARRIVAL_TIME,
                                   IntegratorConfig(rel_tol=tol / 2, abs_tol=tol / 2))
            for c, f in zip(coarse, fine):
                change = np.max(np.abs(c.positions[-1] - f.positions[-1]))
                assert change < 10 * c.stats["error_estimate"]

    def test_tolerance_convergence(self, bosonic):
        starts = density_samples(bosonic, 0.0, 30, seed=12)
        ref = integrate_batch(bosonic, starts, ARRIVAL_TIME, IntegratorConfig(rel_tol=1e-12, abs_tol=1e-12))
        errs = []
        for tol in (1e-5, 1e-7, 1e-9):
            trs = integrate_batch(bosonic, starts, ARRIVAL_TIME, IntegratorConfig(rel_tol=tol, abs_tol=tol))
            errs.append(max(np.max(np.abs(a.positions[-1] - b.positions[-1])) for a, b in zip(trs, ref)))
        assert errs[0] > errs[1] > errs[2]
        assert errs[1] < 1e-5


def test_trajectory_csv(tmp_path, bosonic):
    tr = integrate_trajectory(bosonic, np.array([4.1, 0.2, -3.9, -0.1]), ARRIVAL_TIME, sample_times=TIMES)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(tr, path)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == TRAJECTORY_CSV_HEADER
    assert len(rows) == TIMES.size + 1
    back = np.array(rows[1:], dtype=float)
    # 17 significant digits round-trip doubles exactly
    assert np.array_equal(back, tr.to_rows())
