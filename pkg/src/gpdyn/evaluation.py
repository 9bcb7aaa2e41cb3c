"""Rollout metrics: L2 error, step-map determinants, energy, uncertainty.

All metrics operate on an ensemble of rollouts over a shared time grid (an
ensemble of one is fine where the metric allows it). Ground truth for
prediction metrics comes from high-accuracy reference trajectories, not
from noisy observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .gradients import ift_step_jacobian
from .integrators import Stepper, rk_step
from .models import SampledModel
from .trajectory import Trajectory


@dataclass
class RolloutEnsemble:
    """Independent rollouts on one shared time grid."""

    rollouts: list[Trajectory]

    def __post_init__(self):
        if not self.rollouts:
            raise ValueError("ensemble must contain at least one rollout")
        t0 = self.rollouts[0].times
        for traj in self.rollouts[1:]:
            if traj.times.shape != t0.shape or not np.allclose(traj.times, t0, atol=1e-12):
                raise ValueError("ensemble rollouts must share one time grid")

    @property
    def count(self) -> int:
        return len(self.rollouts)

    @property
    def times(self) -> np.ndarray:
        return self.rollouts[0].times

    def stack(self) -> np.ndarray:
        return np.stack([t.states for t in self.rollouts])


@dataclass
class MetricReport:
    name: str
    series: dict[str, np.ndarray] = dc_field(default_factory=dict)
    scalars: dict[str, float] = dc_field(default_factory=dict)


def l2_error(ensemble: RolloutEnsemble, ground_truth: Trajectory):
    """Per-step distance of the ensemble mean to ground truth, plus the
    root-mean-square total sqrt(1/N sum_i ||X_i - Xbar_i||^2)."""
    if ground_truth.times.shape != ensemble.times.shape or not np.allclose(
        ground_truth.times, ensemble.times, atol=1e-12
    ):
        raise ValueError("ground truth grid does not match the ensemble grid")
    mean = ensemble.stack().mean(axis=0)
    series = np.linalg.norm(ground_truth.states - mean, axis=1)
    total = float(np.sqrt(np.mean(series**2)))
    return series, total


def uncertainty_stats(ensemble: RolloutEnsemble):
    """Per-step, per-dimension sample mean and (n-1)-normalised std."""
    stack = ensemble.stack()
    mean = stack.mean(axis=0)
    if ensemble.count < 2:
        raise ValueError("need at least two rollouts for a standard deviation")
    std = stack.std(axis=0, ddof=1)
    return mean, std


@dataclass
class EnergyStats:
    series: np.ndarray  # ensemble-mean energy per step
    average: float  # time average of the series
    error: float  # |true - average|
    std: float  # sqrt(sum_n |E_n - true|^2 / (n-1))


def energy_stats(ensemble: RolloutEnsemble, energy_fn, true_energy: float) -> EnergyStats:
    """Time-averaged ensemble energy against the conserved true value."""
    stack = ensemble.stack()
    energies = np.array([[energy_fn(x) for x in roll] for roll in stack])
    series = energies.mean(axis=0)
    average = float(series.mean())
    n = series.shape[0]
    std = float(np.sqrt(np.sum((series - true_energy) ** 2) / max(n - 1, 1)))
    return EnergyStats(
        series=series, average=average, error=abs(true_energy - average), std=std
    )


def _fd_step_jacobian(step_fn, x: np.ndarray, eps_scale: float) -> np.ndarray:
    d = x.shape[0]
    J = np.empty((d, d))
    for i in range(d):
        eps = eps_scale * (1.0 + abs(x[i]))
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        J[:, i] = (step_fn(xp) - step_fn(xm)) / (2.0 * eps)
    return J


def determinant_series(
    model_or_field,
    trajectory: Trajectory,
    stepper: Stepper | None = None,
    method: str = "fd",
    eps_scale: float = 1e-5,
) -> np.ndarray:
    """det of the one-step map's Jacobian at every trajectory state.

    Accepts a SampledModel (its own structure-matched step) or a plain field
    paired with a Stepper. ``method='ift'`` uses the analytic Jacobian path
    for sampled models.
    """
    if isinstance(model_or_field, SampledModel):
        sm = model_or_field
        if method == "ift":
            jac_at = lambda x: ift_step_jacobian(sm, x)
        else:
            jac_at = lambda x: _fd_step_jacobian(sm.model_step, x, eps_scale)
    else:
        if stepper is None:
            raise ValueError("plain fields need an explicit stepper")
        field = model_or_field
        jac_at = lambda x: _fd_step_jacobian(
            lambda y: rk_step(stepper, field, y), x, eps_scale
        )
    return np.array([float(np.linalg.det(jac_at(x))) for x in trajectory.states])
