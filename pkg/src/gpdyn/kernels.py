"""ARD kernel evaluation, random Fourier feature bases, and Gaussian utilities.

The kernel is the anisotropic squared exponential

    k(x, y) = sf2 * exp(-sum_i (x_i - y_i)^2 / (2 * ls2_i))

parameterised by the signal variance ``sf2`` and per-dimension squared
lengthscales ``ls2``. All operations here are pure and safe to call
concurrently; random sampling takes an explicit generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg


@dataclass(frozen=True)
class ArdKernelParams:
    """Signal variance and per-dimension squared lengthscales."""

    signal_variance: float
    lengthscales_sq: np.ndarray

    def __post_init__(self):
        ls2 = np.atleast_1d(np.asarray(self.lengthscales_sq, dtype=float))
        object.__setattr__(self, "lengthscales_sq", ls2)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if ls2.ndim != 1 or ls2.size == 0 or not np.all(ls2 > 0):
            raise ValueError("lengthscales_sq must be a non-empty vector of positive reals")

    @property
    def dim(self) -> int:
        return self.lengthscales_sq.shape[0]


def _check_dim(params: ArdKernelParams, x: np.ndarray, name: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != params.dim:
        raise ValueError(f"{name} has dimension {x.shape[-1]}, kernel expects {params.dim}")
    return x


def kernel_eval(params: ArdKernelParams, x: np.ndarray, y: np.ndarray) -> float:
    """Evaluate the ARD kernel at a single pair of points."""
    x = _check_dim(params, np.atleast_1d(x), "x")
    y = _check_dim(params, np.atleast_1d(y), "y")
    quad = np.sum((x - y) ** 2 / params.lengthscales_sq)
    return params.signal_variance * float(np.exp(-0.5 * quad))


def kernel_matrix(params: ArdKernelParams, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Cross-covariance matrix with entry (i, j) = k(X_i, Y_j)."""
    X = _check_dim(params, np.atleast_2d(X), "X")
    Y = _check_dim(params, np.atleast_2d(Y), "Y")
    inv = 1.0 / params.lengthscales_sq
    # Weighted squared distances via the expansion |x-y|^2 = x^2 + y^2 - 2xy.
    Xw = X * inv
    sq = (
        np.sum(Xw * X, axis=1)[:, None]
        + np.sum(Y * inv * Y, axis=1)[None, :]
        - 2.0 * Xw @ Y.T
    )
    np.maximum(sq, 0.0, out=sq)
    return params.signal_variance * np.exp(-0.5 * sq)


@dataclass(frozen=True)
class FeatureBasis:
    """Spectral frequencies of a random Fourier feature expansion.

    Each of the ``count`` rows is drawn from the spectral density of the ARD
    kernel, N(0, diag(1/ls2)). The induced feature map has 2*count entries
    (a cosine and a sine per frequency).
    """

    frequencies: np.ndarray
    signal_variance: float

    def __post_init__(self):
        freq = np.atleast_2d(np.asarray(self.frequencies, dtype=float))
        object.__setattr__(self, "frequencies", freq)
        if freq.shape[0] < 1:
            raise ValueError("feature basis needs at least one frequency")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")

    @property
    def count(self) -> int:
        return self.frequencies.shape[0]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]


def sample_feature_basis(
    params: ArdKernelParams, count: int, rng: np.random.Generator
) -> FeatureBasis:
    """Draw ``count`` spectral frequencies for the given kernel."""
    if count < 1:
        raise ValueError(f"feature count must be >= 1, got {count}")
    scale = 1.0 / np.sqrt(params.lengthscales_sq)
    freq = rng.standard_normal((count, params.dim)) * scale
    return FeatureBasis(frequencies=freq, signal_variance=params.signal_variance)


def feature_map(basis: FeatureBasis, x: np.ndarray) -> np.ndarray:
    """Trigonometric feature vector [cos-block, sin-block] of length 2*count.

    Scaled by sqrt(sf2 / count) so that ||phi(x)||^2 == sf2 for every x and
    phi(x)^T phi(y) is an unbiased estimate of k(x, y).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape[0] != basis.dim:
        raise ValueError(f"x has dimension {x.shape[0]}, basis expects {basis.dim}")
    t = basis.frequencies @ x
    scale = np.sqrt(basis.signal_variance / basis.count)
    return scale * np.concatenate([np.cos(t), np.sin(t)])


@dataclass(frozen=True)
class GaussianMoments:
    """Mean vector and covariance matrix of a multivariate Gaussian."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)
        k = mean.shape[0]
        if cov.shape != (k, k):
            raise ValueError(f"covariance shape {cov.shape} does not match mean length {k}")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("covariance must be symmetric within 1e-12")

    @classmethod
    def diagonal(cls, mean: np.ndarray, variances: np.ndarray) -> "GaussianMoments":
        return cls(mean=np.asarray(mean, float), covariance=np.diag(np.asarray(variances, float)))

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


def gaussian_kl(q: GaussianMoments, p: GaussianMoments) -> float:
    """KL(q || p) for multivariate Gaussians in closed form."""
    if q.dim != p.dim:
        raise ValueError(f"dimension mismatch: q has {q.dim}, p has {p.dim}")
    try:
        cho = linalg.cho_factor(p.covariance, lower=True)
    except linalg.LinAlgError as err:
        raise FloatingPointError(
            "p covariance is not positive definite; add jitter before calling gaussian_kl"
        ) from err
    k = q.dim
    trace = float(np.trace(linalg.cho_solve(cho, q.covariance)))
    diff = q.mean - p.mean
    maha = float(diff @ linalg.cho_solve(cho, diff))
    logdet_p = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    sign, logdet_q = np.linalg.slogdet(q.covariance)
    if sign <= 0:
        raise FloatingPointError("q covariance must be positive definite")
    return 0.5 * (trace + maha - k + logdet_p - float(logdet_q))


def gaussian_log_density(x, mean, variance):
    """Log density of a scalar Gaussian; broadcasts elementwise over arrays."""
    variance = np.asarray(variance, dtype=float)
    if np.any(variance <= 0):
        raise ValueError("variance must be positive")
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    out = -0.5 * np.log(2.0 * np.pi * variance) - (x - mean) ** 2 / (2.0 * variance)
    return float(out) if out.ndim == 0 else out
