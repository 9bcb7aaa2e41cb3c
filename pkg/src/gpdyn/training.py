"""Recurrent variational training of GP dynamics models.

The loss of one subtrajectory window is the negative weighted ELBO

    -(a * sum_n log p(xhat_n | x_n) - b * sum_GPs KL(q || prior)),

where x_1..x_{L-1} come from rolling the frozen draw out of the window's
(noisy) first state. Windows slide over the training trajectory with
stride 1; every batch uses one fresh draw and one Adam update; the KL term
enters once per update. Model selection follows the rollout error

    e = sum_i || mean-of-5-rollouts_i - xhat_i ||^2

evaluated on the noisy observations at the start of every epoch.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .gradients import (
    GpCotangent,
    ParameterLayout,
    backward_from_records,
    finalize_cotangent,
    forward_records,
    get_params,
    kl_value_and_gradient,
    model_layout,
    set_params,
)
from .integrators import NonConvergenceError
from .kernels import gaussian_log_density
from .models import ConstraintSingularityError, SampledModel, assemble_model
from .rng import stream
from .sparse_gp import DrawNoise, kl_to_prior
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

_ROLLOUT_FAILURES = (NonConvergenceError, ConstraintSingularityError, FloatingPointError)
# ValueError covers parameters that left the valid domain (e.g. a signal
# variance that underflowed to zero after a runaway update).
_DRAW_FAILURES = (FloatingPointError, ValueError)


@dataclass(frozen=True)
class ModelSelectionConfig:
    """Which checkpoints are eligible and how the rollout error is estimated."""

    n_rollouts: int = 5
    rule: str = "all"  # all | final_k | smallest_lr_only
    final_k: int | None = None

    def __post_init__(self):
        if self.n_rollouts < 1:
            raise ValueError("n_rollouts must be >= 1")
        if self.rule not in ("all", "final_k", "smallest_lr_only"):
            raise ValueError(f"unknown selection rule {self.rule!r}")
        if self.rule == "final_k" and (self.final_k is None or self.final_k < 1):
            raise ValueError("final_k rule needs a positive final_k")


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int
    window_length: int
    epochs: int
    lr_schedule: tuple[tuple[int, float], ...]
    elbo_factors: tuple[float, float]
    feature_count: int
    selection: ModelSelectionConfig = ModelSelectionConfig()
    seed: int = 0
    # Monte-Carlo draws per optimizer step for the expected log likelihood;
    # window losses and gradients are averaged over the draws.
    draws_per_batch: int = 1

    def __post_init__(self):
        if self.window_length < 2:
            raise ValueError("window_length must be >= 2 (need at least one transition)")
        if self.batch_size < 1 or self.epochs < 0 or self.feature_count < 1:
            raise ValueError("batch_size, epochs, feature_count must be positive")
        if self.draws_per_batch < 1:
            raise ValueError("draws_per_batch must be >= 1")
        starts = [int(s) for s, _ in self.lr_schedule]
        if not starts or starts[0] != 0 or any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("lr_schedule epochs must strictly increase from 0")

    def lr_at(self, epoch: int) -> float:
        lr = self.lr_schedule[0][1]
        for start, value in self.lr_schedule:
            if epoch >= start:
                lr = value
        return lr


@dataclass(frozen=True)
class Window:
    start: int
    states: np.ndarray
    noise_variances: np.ndarray | None


@dataclass
class WindowDataset:
    """All length-L subtrajectories of a source trajectory (stride 1)."""

    windows: list[Window]
    source: Trajectory

    def __len__(self) -> int:
        return len(self.windows)


def make_windows(traj: Trajectory, window_length: int) -> WindowDataset:
    if window_length < 2:
        raise ValueError("window_length must be >= 2 (a single state has no transition)")
    n = traj.n_points
    if window_length > n:
        raise ValueError(f"window_length {window_length} exceeds trajectory length {n}")
    windows = [
        Window(
            start=k,
            states=traj.states[k : k + window_length],
            noise_variances=traj.noise_variances,
        )
        for k in range(n - window_length + 1)
    ]
    return WindowDataset(windows=windows, source=traj)


def window_data_loss_terms(sm: SampledModel, window: Window, a: float):
    """Forward rollout over a window; returns (loss, dloss/dx terms, records).

    The window's first state is the rollout initial value and is not scored.
    Raises the rollout's own error if the draw cannot be integrated; returns
    loss = inf when the rollout leaves the range of float64.
    """
    if window.noise_variances is None or np.any(window.noise_variances <= 0):
        raise ValueError("window has no positive observation-noise variances")
    n_steps = window.states.shape[0] - 1
    traj, records = forward_records(sm, window.states[0], n_steps)
    if not np.all(np.isfinite(traj.states)):
        return math.inf, None, None
    var = window.noise_variances
    logp = gaussian_log_density(window.states[1:], traj.states[1:], var[None, :])
    loss = -a * float(np.sum(logp))
    terms = np.zeros_like(traj.states)
    terms[1:] = a * (traj.states[1:] - window.states[1:]) / var[None, :]
    return loss, terms, records


def elbo_window_loss(model, window: Window, a: float, b: float, draw: SampledModel) -> float:
    """Negative weighted ELBO contribution of one window under one draw."""
    loss, _, _ = window_data_loss_terms(draw, window, a)
    return loss + b * sum(kl_to_prior(gp) for gp in model.gps())


@dataclass
class Checkpoint:
    epoch: int
    params: np.ndarray
    selection_error: float | None
    lr: float


@dataclass
class HistoryRow:
    epoch: int
    lr: float
    mean_window_loss: float
    kl: float
    selection_error: float
    skipped_windows: int


@dataclass
class TrainResult:
    model: object
    history: list[HistoryRow]
    checkpoints: list[Checkpoint]
    layout: ParameterLayout


class TrainingAbort(RuntimeError):
    """Non-finite loss or persistent solver failures; checkpoints retained."""

    def __init__(self, message: str, checkpoints: list[Checkpoint], history: list[HistoryRow]):
        super().__init__(message)
        self.checkpoints = checkpoints
        self.history = history


class _Adam:
    def __init__(self, n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def update(self, params: np.ndarray, grad: np.ndarray, lr: float) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return params - lr * m_hat / (np.sqrt(v_hat) + self.eps)


def selection_error(
    model, source: Trajectory, n_rollouts: int, feature_count: int, rng: np.random.Generator
) -> float:
    """e = sum_i ||mean-rollout_i - xhat_i||^2 on the training grid."""
    n_steps = source.n_points - 1
    x0 = source.states[0]
    acc = np.zeros_like(source.states)
    for _ in range(n_rollouts):
        try:
            noises = [DrawNoise.sample(gp, feature_count, rng) for gp in model.gps()]
            sm = assemble_model(model, noises)
            traj = sm.rollout(x0, n_steps)
        except _ROLLOUT_FAILURES + _DRAW_FAILURES:
            return math.inf
        if not np.all(np.isfinite(traj.states)):
            return math.inf
        acc += traj.states
    acc /= n_rollouts
    return float(np.sum((acc - source.states) ** 2))


def train(
    model, dataset: WindowDataset, config: TrainConfig, progress=None, start_epoch: int = 0
) -> TrainResult:
    """Epoch loop of batched window gradients with Adam updates.

    Deterministic for a fixed (config.seed, config): every epoch derives its
    own named random streams. ``start_epoch`` continues an interrupted run
    from the model's current parameters (with a fresh optimizer state).
    """
    a, b = config.elbo_factors
    layout = model_layout(model)
    gps = model.gps()
    params = get_params(model)
    adam = _Adam(layout.n_params)
    checkpoints: list[Checkpoint] = []
    history: list[HistoryRow] = []
    n_windows = len(dataset)

    def abort(msg: str):
        set_params(model, params)
        raise TrainingAbort(msg, checkpoints, history)

    for epoch in range(start_epoch, config.epochs):
        lr = config.lr_at(epoch)
        sel_rng = stream(config.seed, f"select-{epoch:05d}")
        e = selection_error(
            model, dataset.source, config.selection.n_rollouts, config.feature_count, sel_rng
        )
        checkpoints.append(Checkpoint(epoch=epoch, params=params.copy(), selection_error=e, lr=lr))
        epoch_rng = stream(config.seed, f"epoch-{epoch:05d}")
        order = epoch_rng.permutation(n_windows)
        losses = []
        kl_value = math.nan
        skipped = 0
        for lo in range(0, n_windows, config.batch_size):
            batch = order[lo : lo + config.batch_size]
            try:
                draws = [
                    assemble_model(
                        model,
                        [DrawNoise.sample(gp, config.feature_count, epoch_rng) for gp in gps],
                    )
                    for _ in range(config.draws_per_batch)
                ]
            except _DRAW_FAILURES as err:
                abort(f"parameters left the valid domain at epoch {epoch}: {err}")
            grad = np.zeros(layout.n_params)
            batch_loss = 0.0
            n_ok = 0
            for wi in batch:
                window = dataset.windows[wi]
                w_loss = 0.0
                w_grad = np.zeros(layout.n_params)
                failed = None
                for sm in draws:
                    try:
                        loss, terms, records = window_data_loss_terms(sm, window, a)
                    except _ROLLOUT_FAILURES as err:
                        failed = str(err)
                        break
                    if not math.isfinite(loss):
                        failed = "rollout overflow"
                        break
                    report = backward_from_records(sm, records, terms, layout)
                    w_loss += loss / config.draws_per_batch
                    w_grad += report.gradient / config.draws_per_batch
                if failed is not None:
                    logger.warning("epoch %d window %d skipped: %s", epoch, wi, failed)
                    skipped += 1
                    continue
                grad += w_grad
                batch_loss += w_loss
                n_ok += 1
            if n_ok == 0:
                continue
            kl_value = 0.0
            for gp, sl in zip(gps, layout.slices):
                value, cot = kl_value_and_gradient(gp)
                kl_value += value
                grad[sl.xi] += b * cot.xi.ravel()
                grad[sl.mu] += b * cot.mu
                grad[sl.log_var] += b * cot.log_var
                grad[sl.log_sf2] += b * cot.log_sf2
                grad[sl.log_ls2] += b * cot.log_ls2
            batch_loss += b * kl_value
            if not (math.isfinite(batch_loss) and np.all(np.isfinite(grad))):
                abort(f"non-finite loss or gradient at epoch {epoch}")
            params = adam.update(params, grad, lr)
            if not np.all(np.isfinite(params)):
                abort(f"non-finite parameters after the update at epoch {epoch}")
            set_params(model, params)
            losses.append(batch_loss / n_ok)
        if skipped > 0.1 * n_windows:
            abort(f"{skipped}/{n_windows} windows failed at epoch {epoch}")
        mean_loss = float(np.mean(losses)) if losses else math.nan
        history.append(
            HistoryRow(
                epoch=epoch,
                lr=lr,
                mean_window_loss=mean_loss,
                kl=kl_value,
                selection_error=e,
                skipped_windows=skipped,
            )
        )
        if progress is not None:
            progress(history[-1])
    set_params(model, params)
    return TrainResult(model=model, history=history, checkpoints=checkpoints, layout=layout)


def select_model(checkpoints: list[Checkpoint], selection: ModelSelectionConfig) -> Checkpoint:
    """Smallest selection error among eligible checkpoints; ties -> later epoch."""
    scored = [cp for cp in checkpoints if cp.selection_error is not None]
    if selection.rule == "final_k":
        scored = scored[-selection.final_k :] if selection.final_k else scored
    elif selection.rule == "smallest_lr_only":
        if scored:
            min_lr = min(cp.lr for cp in scored)
            scored = [cp for cp in scored if cp.lr == min_lr]
    if not scored:
        raise ValueError("no eligible checkpoint for model selection")
    return min(scored, key=lambda cp: (cp.selection_error, -cp.epoch))
