import numpy as np
import pytest
from numpy.testing import assert_allclose

from gpdyn.evaluation import (
    RolloutEnsemble,
    determinant_series,
    energy_stats,
    l2_error,
    uncertainty_stats,
)
from gpdyn.integrators import EXPLICIT_EULER, Stepper, VectorField
from gpdyn.trajectory import Trajectory

ROTATION = VectorField(lambda x: np.array([-x[1], x[0]]))


def traj(states, dt=0.1):
    states = np.asarray(states, dtype=float)
    return Trajectory(dt * np.arange(states.shape[0]), states)


class TestRolloutEnsemble:
    def test_grid_mismatch_rejected(self):
        a = traj(np.zeros((4, 2)))
        b = Trajectory(0.2 * np.arange(4), np.zeros((4, 2)))
        with pytest.raises(ValueError):
            RolloutEnsemble([a, b])

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            RolloutEnsemble([])


class TestL2Error:
    def test_zero_for_replicated_truth(self):
        truth = traj(np.random.default_rng(0).normal(size=(6, 2)))
        ens = RolloutEnsemble([traj(truth.states.copy()) for _ in range(5)])
        series, total = l2_error(ens, truth)
        assert_allclose(series, np.zeros(6), atol=0.0)
        assert total == 0.0

    def test_constant_offset(self):
        truth = traj(np.zeros((8, 3)))
        shifted = np.zeros((8, 3))
        shifted[:, 1] = 0.25
        ens = RolloutEnsemble([traj(shifted)])
        series, total = l2_error(ens, truth)
        assert_allclose(series, np.full(8, 0.25), rtol=1e-15)
        assert total == pytest.approx(0.25, rel=1e-12)

    def test_invariant_under_rollout_order(self):
        rng = np.random.default_rng(1)
        rolls = [traj(rng.normal(size=(5, 2))) for _ in range(4)]
        truth = traj(rng.normal(size=(5, 2)))
        _, t1 = l2_error(RolloutEnsemble(rolls), truth)
        _, t2 = l2_error(RolloutEnsemble(rolls[::-1]), truth)
        assert t1 == t2

    def test_grid_mismatch(self):
        ens = RolloutEnsemble([traj(np.zeros((4, 2)))])
        with pytest.raises(ValueError):
            l2_error(ens, traj(np.zeros((5, 2))))


class TestUncertaintyStats:
    def test_identical_rollouts_zero_std(self):
        base = traj(np.random.default_rng(2).normal(size=(5, 2)))
        ens = RolloutEnsemble([traj(base.states.copy()) for _ in range(5)])
        mean, std = uncertainty_stats(ens)
        assert_allclose(mean, base.states, atol=0.0)
        assert_allclose(std, np.zeros((5, 2)), atol=1e-14)

    def test_two_sample_formula(self):
        delta = 0.3
        a = np.zeros((4, 1))
        b = np.full((4, 1), 2 * delta)
        _, std = uncertainty_stats(RolloutEnsemble([traj(a), traj(b)]))
        assert_allclose(std, np.full((4, 1), delta * np.sqrt(2.0)), rtol=1e-14)

    def test_single_rollout_rejected(self):
        with pytest.raises(ValueError):
            uncertainty_stats(RolloutEnsemble([traj(np.zeros((3, 1)))]))


class TestEnergyStats:
    def test_exact_conservation(self):
        energy = lambda x: float(x @ x)
        states = np.tile([0.6, 0.8], (7, 1))
        ens = RolloutEnsemble([traj(states) for _ in range(3)])
        stats = energy_stats(ens, energy, 1.0)
        assert stats.error == 0.0
        assert stats.std == 0.0

    def test_hand_computed_average(self):
        energy = lambda x: float(x[0])
        a = traj(np.array([[1.0], [3.0]]))
        b = traj(np.array([[3.0], [5.0]]))
        stats = energy_stats(RolloutEnsemble([a, b]), energy, true_energy=2.0)
        # ensemble mean energies per step: [2, 4]; average 3
        assert stats.average == pytest.approx(3.0)
        assert stats.error == pytest.approx(1.0)
        assert stats.std == pytest.approx(np.sqrt((0.0 + 4.0) / 1.0))


class TestDeterminantSeries:
    def test_euler_rotation_is_constant_101(self):
        # Linear map: the determinant series is constant along the states.
        states = np.random.default_rng(3).normal(size=(6, 2))
        dets = determinant_series(ROTATION, traj(states), stepper=Stepper(EXPLICIT_EULER, 0.1))
        assert_allclose(dets, np.full(6, 1.01), rtol=1e-9)
        assert np.ptp(dets) <= 1e-9

    def test_requires_stepper_for_plain_fields(self):
        with pytest.raises(ValueError):
            determinant_series(ROTATION, traj(np.zeros((3, 2))))
