"""Variational sparse GPs with inducing points and decoupled posterior draws.

A :class:`SparseGp` keeps its trainable parameters in log space where
positivity is required. A :class:`SampledFunction` is one globally
consistent posterior draw, assembled from a random Fourier prior draw plus
a kernel-weighted update (Matheron's rule):

    f(x) = phi(x)^T w + k(x, xi) @ v,   v = K^{-1} (z - Phi w)

with z drawn from the variational distribution over inducing targets and
w standard normal. Draws are immutable, evaluable anywhere, and carry
analytic first and second derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .kernels import (
    ArdKernelParams,
    FeatureBasis,
    GaussianMoments,
    gaussian_kl,
    kernel_matrix,
    sample_feature_basis,
)


class SparseGp:
    """Inducing inputs plus a diagonal variational Gaussian over targets."""

    def __init__(
        self,
        inducing_inputs: np.ndarray,
        variational_mean: np.ndarray,
        variational_log_var: np.ndarray,
        kernel: ArdKernelParams,
        jitter_rel: float = 1e-8,
    ):
        self.xi = np.atleast_2d(np.asarray(inducing_inputs, dtype=float)).copy()
        self.mu = np.atleast_1d(np.asarray(variational_mean, dtype=float)).copy()
        self.log_var = np.atleast_1d(np.asarray(variational_log_var, dtype=float)).copy()
        self.log_sf2 = float(np.log(kernel.signal_variance))
        self.log_ls2 = np.log(kernel.lengthscales_sq).copy()
        self.jitter_rel = float(jitter_rel)
        P = self.xi.shape[0]
        if self.xi.shape[1] != kernel.dim:
            raise ValueError(
                f"inducing inputs have dimension {self.xi.shape[1]}, kernel expects {kernel.dim}"
            )
        if self.mu.shape != (P,) or self.log_var.shape != (P,):
            raise ValueError("variational parameters must have one entry per inducing input")
        if not np.all(np.isfinite(self.xi)):
            raise ValueError("inducing inputs must be finite")

    @property
    def n_inducing(self) -> int:
        return self.xi.shape[0]

    @property
    def dim(self) -> int:
        return self.xi.shape[1]

    @property
    def kernel(self) -> ArdKernelParams:
        return ArdKernelParams(np.exp(self.log_sf2), np.exp(self.log_ls2))

    @property
    def jitter(self) -> float:
        return self.jitter_rel * float(np.exp(self.log_sf2))

    def gram(self) -> np.ndarray:
        """k(xi, xi) with the relative jitter added to the diagonal."""
        K = kernel_matrix(self.kernel, self.xi, self.xi)
        K[np.diag_indices_from(K)] += self.jitter
        return K

    def gram_cho(self):
        try:
            return linalg.cho_factor(self.gram(), lower=True)
        except linalg.LinAlgError as err:
            raise FloatingPointError(
                f"inducing Gram matrix is not positive definite at jitter {self.jitter:.3e}"
            ) from err


class MultiGp:
    """Independent scalar GPs, one per output dimension."""

    def __init__(self, components: list[SparseGp]):
        if not components:
            raise ValueError("MultiGp needs at least one component")
        dims = {gp.dim for gp in components}
        if len(dims) != 1:
            raise ValueError(f"components disagree on input dimension: {sorted(dims)}")
        self.components = list(components)

    @property
    def n_outputs(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim


def posterior_moments(
    gp: SparseGp, x_star: np.ndarray, include_variational: bool = False
) -> GaussianMoments:
    """Posterior mean and covariance at the query rows of ``x_star``.

    The covariance is the prior-conditioned form
    k(x*, x*) - k(x*, xi) K^{-1} k(xi, x*); with ``include_variational`` the
    propagated variational covariance A^T Sigma A (A = K^{-1} k(xi, x*)) is
    added, matching the spread of decoupled posterior draws.
    """
    x_star = np.atleast_2d(np.asarray(x_star, dtype=float))
    kern = gp.kernel
    k_xs = kernel_matrix(kern, x_star, gp.xi)
    k_ss = kernel_matrix(kern, x_star, x_star)
    cho = gp.gram_cho()
    A = linalg.cho_solve(cho, k_xs.T)
    mean = k_xs @ linalg.cho_solve(cho, gp.mu)
    cov = k_ss - k_xs @ A
    if include_variational:
        cov = cov + A.T @ (np.exp(gp.log_var)[:, None] * A)
    return GaussianMoments(mean=mean, covariance=0.5 * (cov + cov.T))


def kl_to_prior(gp: SparseGp) -> float:
    """KL(q(z) || N(0, k(xi, xi) + jitter I))."""
    q = GaussianMoments.diagonal(gp.mu, np.exp(gp.log_var))
    p = GaussianMoments(mean=np.zeros(gp.n_inducing), covariance=gp.gram())
    return gaussian_kl(q, p)


def kl_prior_to_q(gp: SparseGp) -> float:
    """KL(N(0, k(xi, xi) + jitter I) || q(z)), the direction in the training
    objective.

    Its -logdet(K) term acts as a coverage regulariser: minimising it spreads
    the inducing inputs apart instead of contracting them.
    """
    q = GaussianMoments.diagonal(gp.mu, np.exp(gp.log_var))
    p = GaussianMoments(mean=np.zeros(gp.n_inducing), covariance=gp.gram())
    return gaussian_kl(p, q)


@dataclass(frozen=True)
class DrawNoise:
    """Frozen randomness of one posterior draw.

    ``frequencies`` are spectral samples (held fixed, not trainable),
    ``weights`` the 2S prior weights, ``target_noise`` the standard-normal
    innovations reparameterising z = mu + sigma * target_noise.
    """

    frequencies: np.ndarray
    weights: np.ndarray
    target_noise: np.ndarray

    @classmethod
    def sample(cls, gp: SparseGp, feature_count: int, rng: np.random.Generator) -> "DrawNoise":
        basis = sample_feature_basis(gp.kernel, feature_count, rng)
        return cls(
            frequencies=basis.frequencies,
            weights=rng.standard_normal(2 * feature_count),
            target_noise=rng.standard_normal(gp.n_inducing),
        )


@dataclass
class EvalCache:
    """Per-point intermediates reused by gradients, Hessians, and backprop."""

    x: np.ndarray
    cos_t: np.ndarray
    sin_t: np.ndarray
    kx: np.ndarray
    value: float


class SampledFunction:
    """One posterior draw; immutable, smooth, analytically differentiable."""

    def __init__(self, gp: SparseGp, noise: DrawNoise):
        S = noise.frequencies.shape[0]
        if noise.frequencies.shape[1] != gp.dim:
            raise ValueError("frequency dimension does not match the GP input dimension")
        # Snapshots: the draw stays valid while the trainer mutates the GP.
        self.xi = gp.xi.copy()
        self.mu = gp.mu.copy()
        self.log_var = gp.log_var.copy()
        self.sf2 = float(np.exp(gp.log_sf2))
        self.ls2 = np.exp(gp.log_ls2)
        self.jitter = gp.jitter
        self.freqs = noise.frequencies
        self.scale = np.sqrt(self.sf2 / S)
        self.w_cos = noise.weights[:S].copy()
        self.w_sin = noise.weights[S:].copy()
        self.z = self.mu + np.exp(0.5 * self.log_var) * noise.target_noise
        P = self.xi.shape[0]
        if P > 0:
            t_xi = self.xi @ self.freqs.T  # (P, S)
            self.cos_xi = np.cos(t_xi)
            self.sin_xi = np.sin(t_xi)
            self.fz = self.scale * (self.cos_xi @ self.w_cos + self.sin_xi @ self.w_sin)
            self.K = kernel_matrix(gp.kernel, self.xi, self.xi)
            self.K[np.diag_indices_from(self.K)] += self.jitter
            try:
                self.cho = linalg.cho_factor(self.K, lower=True)
            except linalg.LinAlgError as err:
                raise FloatingPointError(
                    f"inducing Gram matrix is not positive definite at jitter {self.jitter:.3e}"
                ) from err
            self.r = self.z - self.fz
            self.v = linalg.cho_solve(self.cho, self.r)
        else:
            self.cos_xi = np.zeros((0, S))
            self.sin_xi = np.zeros((0, S))
            self.fz = np.zeros(0)
            self.K = np.zeros((0, 0))
            self.cho = None
            self.r = np.zeros(0)
            self.v = np.zeros(0)

    @property
    def dim(self) -> int:
        return self.xi.shape[1]

    @property
    def n_inducing(self) -> int:
        return self.xi.shape[0]

    @property
    def basis(self) -> FeatureBasis:
        return FeatureBasis(frequencies=self.freqs, signal_variance=self.sf2)

    def _cross_cov(self, x: np.ndarray) -> np.ndarray:
        if self.n_inducing == 0:
            return np.zeros(0)
        diff = self.xi - x[None, :]
        return self.sf2 * np.exp(-0.5 * np.sum(diff * diff / self.ls2, axis=1))

    def value_with_cache(self, x: np.ndarray) -> tuple[float, EvalCache]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape[0] != self.dim:
            raise ValueError(f"x has dimension {x.shape[0]}, draw expects {self.dim}")
        t = self.freqs @ x
        cos_t = np.cos(t)
        sin_t = np.sin(t)
        kx = self._cross_cov(x)
        val = self.scale * (self.w_cos @ cos_t + self.w_sin @ sin_t) + float(kx @ self.v)
        return val, EvalCache(x=x, cos_t=cos_t, sin_t=sin_t, kx=kx, value=val)

    def value(self, x: np.ndarray) -> float:
        return self.value_with_cache(x)[0]

    __call__ = value

    def gradient(self, x: np.ndarray, cache: EvalCache | None = None) -> np.ndarray:
        """Analytic d f / d x."""
        if cache is None:
            cache = self.value_with_cache(x)[1]
        # Prior: sum_i (w_sin_i cos t_i - w_cos_i sin t_i) omega_i
        coef = self.w_sin * cache.cos_t - self.w_cos * cache.sin_t
        grad = self.scale * (coef @ self.freqs)
        if self.n_inducing:
            e = (self.xi - cache.x[None, :]) / self.ls2
            grad = grad + (self.v * cache.kx) @ e
        return grad

    def hessian(self, x: np.ndarray, cache: EvalCache | None = None) -> np.ndarray:
        """Analytic d^2 f / d x^2."""
        if cache is None:
            cache = self.value_with_cache(x)[1]
        coef = -(self.w_cos * cache.cos_t + self.w_sin * cache.sin_t)
        H = self.scale * ((self.freqs * coef[:, None]).T @ self.freqs)
        if self.n_inducing:
            e = (self.xi - cache.x[None, :]) / self.ls2
            vk = self.v * cache.kx
            H = H + (e * vk[:, None]).T @ e - np.diag(np.sum(vk) / self.ls2 * np.ones(self.dim))
        return H


def draw_function(gp: SparseGp, feature_count: int, rng: np.random.Generator) -> SampledFunction:
    """Draw a posterior function: fresh frequencies, prior weights, and targets."""
    return SampledFunction(gp, DrawNoise.sample(gp, feature_count, rng))


def mean_function(gp: SparseGp, feature_count: int = 1) -> SampledFunction:
    """Deterministic posterior-mean field: zero prior draw, targets at mu."""
    noise = DrawNoise(
        frequencies=np.zeros((feature_count, gp.dim)),
        weights=np.zeros(2 * feature_count),
        target_noise=np.zeros(gp.n_inducing),
    )
    sf = SampledFunction(gp, noise)
    # With w = 0 the update interpolates z = mu, i.e. the Eq.-style mean.
    return sf


def eval_function(sf: SampledFunction, x: np.ndarray) -> float:
    return sf.value(x)


def eval_gradient(sf: SampledFunction, x: np.ndarray) -> np.ndarray:
    return sf.gradient(x)
