"""Parameter and state gradients of rollouts and losses.

Reverse accumulation through time over the closed operator set of this
package (ARD kernel, trigonometric features, Gram solves, Runge-Kutta
steps). Implicit stages are differentiated through the implicit function
theorem on the root form

    F(g; x_n, theta) = g - f(x_n + h A g) = 0,

so the solver itself is never differentiated. All randomness of a draw
(spectral frequencies, prior weights, target innovations) is held fixed;
gradients w.r.t. the variational parameters flow through the
reparameterisation z = mu + sigma * eps.

Trainable parameters per GP, in flattening order: inducing inputs, the
variational mean, the variational log-variances, log signal variance, and
log squared lengthscales. Spectral frequencies are not trainable.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import linalg

from .integrators import NonConvergenceError, Stepper, solve_stages
from .models import (
    GENERIC,
    NONSEPARABLE,
    RIGID_BODY,
    SEPARABLE,
    SampledModel,
)
from .sparse_gp import EvalCache, SampledFunction, SparseGp
from .trajectory import Trajectory

# ---------------------------------------------------------------------------
# Parameter layout


@dataclass(frozen=True)
class GpSlices:
    xi: slice
    mu: slice
    log_var: slice
    log_sf2: int
    log_ls2: slice


class ParameterLayout:
    """Maps the GPs of a model onto one flat parameter vector."""

    def __init__(self, gps: list[SparseGp]):
        self.shapes = [(gp.n_inducing, gp.dim) for gp in gps]
        self.slices: list[GpSlices] = []
        off = 0
        for P, d in self.shapes:
            xi = slice(off, off + P * d)
            off += P * d
            mu = slice(off, off + P)
            off += P
            log_var = slice(off, off + P)
            off += P
            log_sf2 = off
            off += 1
            log_ls2 = slice(off, off + d)
            off += d
            self.slices.append(GpSlices(xi, mu, log_var, log_sf2, log_ls2))
        self.n_params = off

    def flatten(self, gps: list[SparseGp]) -> np.ndarray:
        vec = np.empty(self.n_params)
        for gp, sl, (P, d) in zip(gps, self.slices, self.shapes):
            vec[sl.xi] = gp.xi.ravel()
            vec[sl.mu] = gp.mu
            vec[sl.log_var] = gp.log_var
            vec[sl.log_sf2] = gp.log_sf2
            vec[sl.log_ls2] = gp.log_ls2
        return vec

    def assign(self, gps: list[SparseGp], vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ValueError(f"parameter vector has length {vec.shape}, expected {self.n_params}")
        for gp, sl, (P, d) in zip(gps, self.slices, self.shapes):
            gp.xi[...] = vec[sl.xi].reshape(P, d)
            gp.mu[...] = vec[sl.mu]
            gp.log_var[...] = vec[sl.log_var]
            gp.log_sf2 = float(vec[sl.log_sf2])
            gp.log_ls2[...] = vec[sl.log_ls2]

    def flatten_cotangents(self, cots: list["GpCotangent"]) -> np.ndarray:
        vec = np.empty(self.n_params)
        for cot, sl in zip(cots, self.slices):
            vec[sl.xi] = cot.xi.ravel()
            vec[sl.mu] = cot.mu
            vec[sl.log_var] = cot.log_var
            vec[sl.log_sf2] = cot.log_sf2
            vec[sl.log_ls2] = cot.log_ls2
        return vec


def model_layout(model) -> ParameterLayout:
    return ParameterLayout(model.gps())


def get_params(model) -> np.ndarray:
    return model_layout(model).flatten(model.gps())


def set_params(model, vec: np.ndarray) -> None:
    model_layout(model).assign(model.gps(), vec)


# ---------------------------------------------------------------------------
# Per-draw cotangents


@dataclass
class GpCotangent:
    """Gradient accumulator for one GP's parameters.

    ``u`` collects the pending cotangent on the update coefficients v; it is
    pushed through the Gram solve once per backward pass (finalize).
    """

    xi: np.ndarray
    mu: np.ndarray
    log_var: np.ndarray
    log_sf2: float
    log_ls2: np.ndarray
    u: np.ndarray

    @classmethod
    def zeros(cls, sf: SampledFunction) -> "GpCotangent":
        P, d = sf.xi.shape
        return cls(
            xi=np.zeros((P, d)),
            mu=np.zeros(P),
            log_var=np.zeros(P),
            log_sf2=0.0,
            log_ls2=np.zeros(d),
            u=np.zeros(P),
        )


def vjp_value(sf: SampledFunction, cache: EvalCache, cot: GpCotangent, c: float) -> None:
    """Accumulate d(c * f(x)) / d theta at fixed x into ``cot``."""
    if c == 0.0:
        return
    update_val = float(cache.kx @ sf.v) if sf.n_inducing else 0.0
    prior_val = cache.value - update_val
    cot.log_sf2 += c * (0.5 * prior_val + update_val)
    if sf.n_inducing:
        vk = sf.v * cache.kx
        diff = cache.x[None, :] - sf.xi  # x - xi_j
        cot.log_ls2 += c * (vk @ (diff * diff)) / (2.0 * sf.ls2)
        cot.xi += c * vk[:, None] * (diff / sf.ls2)
        cot.u += c * cache.kx


def vjp_gradient_x(
    sf: SampledFunction, cache: EvalCache, cot: GpCotangent, cg: np.ndarray
) -> None:
    """Accumulate d(cg . grad_x f(x)) / d theta at fixed x into ``cot``."""
    coef = sf.w_sin * cache.cos_t - sf.w_cos * cache.sin_t
    prior_dot = sf.scale * float((coef @ sf.freqs) @ cg)
    cot.log_sf2 += 0.5 * prior_dot
    if sf.n_inducing:
        e = (sf.xi - cache.x[None, :]) / sf.ls2
        ed = e @ cg
        vk = sf.v * cache.kx
        cot.log_sf2 += float(vk @ ed)
        cot.u += cache.kx * ed
        cot.xi += vk[:, None] * (cg / sf.ls2)[None, :] - (vk * ed)[:, None] * e
        diff = cache.x[None, :] - sf.xi
        cot.log_ls2 += ((vk * ed) @ (diff * diff)) / (2.0 * sf.ls2) - cg * (vk @ e)


def _gram_cotangent(
    xi: np.ndarray, ls2: np.ndarray, K: np.ndarray, C: np.ndarray
) -> tuple[np.ndarray, float, np.ndarray]:
    """Chain a cotangent matrix on the (jittered) Gram matrix to parameters.

    The jitter is proportional to the signal variance, so K itself is the
    log-sf2 derivative of the jittered Gram matrix.
    """
    dlog_sf2 = float(np.sum(C * K))
    diffs = xi[:, None, :] - xi[None, :, :]
    W = C * K
    dlog_ls2 = np.einsum("pq,pqm->m", W, diffs * diffs) / (2.0 * ls2)
    M2 = (C + C.T) * K
    dxi = (M2 @ xi - np.sum(M2, axis=1)[:, None] * xi) / ls2
    return dxi, dlog_sf2, dlog_ls2


def finalize_cotangent(sf: SampledFunction, cot: GpCotangent) -> None:
    """Push the accumulated v-cotangent through v = K^{-1}(z - Phi w)."""
    if sf.n_inducing == 0 or not np.any(cot.u):
        cot.u[...] = 0.0
        return
    alpha = linalg.cho_solve(sf.cho, cot.u)
    cot.mu += alpha
    cot.log_var += alpha * 0.5 * (sf.z - sf.mu)
    # Prior values at the inducing inputs depend on xi and the feature scale.
    coef = sf.w_sin[None, :] * sf.cos_xi - sf.w_cos[None, :] * sf.sin_xi
    prior_grad_xi = sf.scale * (coef @ sf.freqs)  # (P, d)
    cot.xi -= alpha[:, None] * prior_grad_xi
    cot.log_sf2 -= 0.5 * float(alpha @ sf.fz)
    # Gram dependency: cotangent on K is -alpha v^T.
    C = -np.outer(alpha, sf.v)
    dxi, dsf2, dls2 = _gram_cotangent(sf.xi, sf.ls2, sf.K, C)
    cot.xi += dxi
    cot.log_sf2 += dsf2
    cot.log_ls2 += dls2
    cot.u[...] = 0.0


def kl_prior_value_and_gradient(gp: SparseGp) -> tuple[float, GpCotangent]:
    """KL(prior || q) and its gradient w.r.t. the GP's parameters.

    This is the direction of the training objective; the -logdet(K) term
    turns the regulariser into a repulsive force on the inducing inputs.
    """
    K = gp.gram()
    cho = linalg.cho_factor(K, lower=True)
    P = gp.n_inducing
    Kinv = linalg.cho_solve(cho, np.eye(P))
    s = np.exp(gp.log_var)
    logdet_p = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    value = 0.5 * (
        float(np.sum((np.diag(K) + gp.mu**2) / s))
        - P
        + float(np.sum(gp.log_var))
        - logdet_p
    )
    cot = GpCotangent(
        xi=np.zeros_like(gp.xi),
        mu=gp.mu / s,
        log_var=0.5 * (1.0 - (np.diag(K) + gp.mu**2) / s),
        log_sf2=0.0,
        log_ls2=np.zeros(gp.dim),
        u=np.zeros(P),
    )
    C = 0.5 * (np.diag(1.0 / s) - Kinv)
    dxi, dsf2, dls2 = _gram_cotangent(gp.xi, np.exp(gp.log_ls2), K, C)
    cot.xi += dxi
    cot.log_sf2 += dsf2
    cot.log_ls2 += dls2
    return value, cot


def kl_value_and_gradient(gp: SparseGp) -> tuple[float, GpCotangent]:
    """KL(q || prior) and its gradient w.r.t. the GP's parameters."""
    K = gp.gram()
    cho = linalg.cho_factor(K, lower=True)
    P = gp.n_inducing
    Kinv = linalg.cho_solve(cho, np.eye(P))
    s = np.exp(gp.log_var)
    a2 = Kinv @ gp.mu
    logdet_p = 2.0 * float(np.sum(np.log(np.diag(cho[0]))))
    value = 0.5 * (
        float(np.sum(np.diag(Kinv) * s))
        + float(gp.mu @ a2)
        - P
        + logdet_p
        - float(np.sum(gp.log_var))
    )
    cot = GpCotangent(
        xi=np.zeros_like(gp.xi),
        mu=a2.copy(),
        log_var=0.5 * (np.diag(Kinv) * s - 1.0),
        log_sf2=0.0,
        log_ls2=np.zeros(gp.dim),
        u=np.zeros(P),
    )
    C = 0.5 * (Kinv - (Kinv * s[None, :]) @ Kinv - np.outer(a2, a2))
    dxi, dsf2, dls2 = _gram_cotangent(gp.xi, np.exp(gp.log_ls2), K, C)
    cot.xi += dxi
    cot.log_sf2 += dsf2
    cot.log_ls2 += dls2
    return value, cot


# ---------------------------------------------------------------------------
# Field evaluation bundles (forward caches reused by the backward sweep)


def _field_value_cached(sm: SampledModel, x: np.ndarray):
    """Field value plus the eval caches needed for derivatives at x."""
    if sm.structure == NONSEPARABLE:
        _, cache = sm.draws[0].value_with_cache(x)
        grad = sm.draws[0].gradient(x, cache)
        d2 = x.shape[0] // 2
        return np.concatenate([-grad[d2:], grad[:d2]]), cache
    if sm.structure == RIGID_BODY:
        f1, c1 = sm.draws[0].value_with_cache(x)
        f2, c2 = sm.draws[1].value_with_cache(x)
        x3 = sm._checked_x3(x)
        val = np.array([f1, f2, -(f1 * x[0] + f2 * x[1]) / x3])
        return val, (c1, c2)
    caches = []
    vals = np.empty(len(sm.draws))
    for m, sf in enumerate(sm.draws):
        vals[m], cache = sf.value_with_cache(x)
        caches.append(cache)
    return vals, caches


def _field_jac_cached(sm: SampledModel, x: np.ndarray, bundle) -> np.ndarray:
    if sm.structure == NONSEPARABLE:
        H = sm.draws[0].hessian(x, bundle)
        d2 = x.shape[0] // 2
        return np.vstack([-H[d2:, :], H[:d2, :]])
    if sm.structure == RIGID_BODY:
        c1, c2 = bundle
        x3 = x[2]
        g1 = sm.draws[0].gradient(x, c1)
        g2 = sm.draws[1].gradient(x, c2)
        J = np.empty((3, 3))
        J[0] = g1
        J[1] = g2
        J[2] = -(x[0] * g1 + x[1] * g2) / x3
        J[2, 0] -= c1.value / x3
        J[2, 1] -= c2.value / x3
        J[2, 2] += (c1.value * x[0] + c2.value * x[1]) / x3**2
        return J
    return np.vstack([sf.gradient(x, cache) for sf, cache in zip(sm.draws, bundle)])


def _field_vjp_theta(
    sm: SampledModel, x: np.ndarray, bundle, c: np.ndarray, cots: list[GpCotangent]
) -> None:
    """Accumulate d(c . field(x)) / d theta at fixed x."""
    if sm.structure == NONSEPARABLE:
        d2 = x.shape[0] // 2
        cg = np.concatenate([c[d2:], -c[:d2]])  # (J^{-1})^T c
        vjp_gradient_x(sm.draws[0], bundle, cots[0], cg)
        return
    if sm.structure == RIGID_BODY:
        c1cache, c2cache = bundle
        x3 = x[2]
        vjp_value(sm.draws[0], c1cache, cots[0], float(c[0] - c[2] * x[0] / x3))
        vjp_value(sm.draws[1], c2cache, cots[1], float(c[1] - c[2] * x[1] / x3))
        return
    for m, sf in enumerate(sm.draws):
        vjp_value(sf, bundle[m], cots[m], float(c[m]))


# ---------------------------------------------------------------------------
# Forward rollout with records, reverse sweep


@dataclass
class _RkRecord:
    x: np.ndarray
    stages: np.ndarray
    us: np.ndarray
    bundles: list


@dataclass
class _SymplecticRecord:
    p: np.ndarray
    q: np.ndarray
    p_new: np.ndarray
    v_bundle: list
    t_bundle: list


def forward_records(sm: SampledModel, x_0: np.ndarray, n_steps: int):
    """Rollout that retains the per-step caches needed for the backward sweep."""
    x = np.atleast_1d(np.asarray(x_0, dtype=float))
    states = np.empty((n_steps + 1, x.shape[0]))
    states[0] = x
    records = []
    warm = None
    h = sm.step_size
    if sm.structure == SEPARABLE:
        d = sm.model.half_dim
        for k in range(n_steps):
            p, q = x[:d], x[d:]
            v_bundle = []
            v_vals = np.empty(d)
            for i, sf in enumerate(sm.v_draws):
                v_vals[i], cache = sf.value_with_cache(q)
                v_bundle.append(cache)
            p_new = p - h * v_vals
            t_bundle = []
            t_vals = np.empty(d)
            for i, sf in enumerate(sm.t_draws):
                t_vals[i], cache = sf.value_with_cache(p_new)
                t_bundle.append(cache)
            q_new = q + h * t_vals
            records.append(_SymplecticRecord(p, q, p_new, v_bundle, t_bundle))
            x = np.concatenate([p_new, q_new])
            states[k + 1] = x
    else:
        stepper = Stepper(sm.tableau, h, sm.solver)
        field = sm.field()
        A = sm.tableau.stage_matrix
        b = sm.tableau.weights
        for k in range(n_steps):
            try:
                stages = solve_stages(stepper, field, x, initial_stages=warm)
            except NonConvergenceError as err:
                raise NonConvergenceError(err.residual, err.iterations, step_index=k) from None
            warm = stages
            us = x[None, :] + h * (A @ stages)
            bundles = [_field_value_cached(sm, us[j])[1] for j in range(us.shape[0])]
            records.append(_RkRecord(x=x, stages=stages, us=us, bundles=bundles))
            x = x + h * (b @ stages)
            states[k + 1] = x
    traj = Trajectory(times=h * np.arange(n_steps + 1), states=states)
    return traj, records


@dataclass
class GradientReport:
    """Flat gradient in the model's parameter layout, plus IFT diagnostics."""

    gradient: np.ndarray
    layout: ParameterLayout
    step_conditions: list[float] | None = None


def backward_from_records(
    sm: SampledModel,
    records: list,
    loss_terms: np.ndarray,
    layout: ParameterLayout | None = None,
    collect_diagnostics: bool = False,
) -> GradientReport:
    """Reverse sweep; ``loss_terms[k]`` is dL/dx_k on the forward grid."""
    layout = layout or ParameterLayout([sf_gp(sm, i) for i in range(len(sm.draws))])
    loss_terms = np.asarray(loss_terms, dtype=float)
    n_steps = len(records)
    if loss_terms.shape[0] != n_steps + 1:
        raise ValueError("loss_terms must supply one row per rollout state")
    cots = [GpCotangent.zeros(sf) for sf in sm.draws]
    h = sm.step_size
    conditions: list[float] = [] if collect_diagnostics else None
    lam = loss_terms[n_steps].copy()
    if sm.structure == SEPARABLE:
        d = sm.model.half_dim
        for k in range(n_steps - 1, -1, -1):
            rec = records[k]
            lam_p, lam_q = lam[:d], lam[d:]
            J_T = np.vstack([sf.gradient(rec.p_new, c) for sf, c in zip(sm.t_draws, rec.t_bundle)])
            J_V = np.vstack([sf.gradient(rec.q, c) for sf, c in zip(sm.v_draws, rec.v_bundle)])
            m_vec = lam_p + h * (J_T.T @ lam_q)
            for i, sf in enumerate(sm.t_draws):
                vjp_value(sf, rec.t_bundle[i], cots[d + i], h * float(lam_q[i]))
            for i, sf in enumerate(sm.v_draws):
                vjp_value(sf, rec.v_bundle[i], cots[i], -h * float(m_vec[i]))
            lam = np.concatenate([m_vec, lam_q - h * (J_V.T @ m_vec)]) + loss_terms[k]
    else:
        A = sm.tableau.stage_matrix
        b = sm.tableau.weights
        s = sm.tableau.n_stages
        dim = sm.state_dim
        for k in range(n_steps - 1, -1, -1):
            rec = records[k]
            jacs = [_field_jac_cached(sm, rec.us[j], rec.bundles[j]) for j in range(s)]
            M = np.eye(s * dim)
            for j in range(s):
                for l in range(s):
                    if A[j, l] != 0.0:
                        M[j * dim : (j + 1) * dim, l * dim : (l + 1) * dim] -= h * A[j, l] * jacs[j]
            if collect_diagnostics:
                conditions.append(float(np.linalg.cond(M)))
            rhs = (b[:, None] * lam[None, :]).ravel()
            try:
                mm = np.linalg.solve(M.T, rhs).reshape(s, dim)
            except np.linalg.LinAlgError as err:
                raise FloatingPointError(
                    f"singular stage sensitivity system at step {k}"
                ) from err
            for j in range(s):
                _field_vjp_theta(sm, rec.us[j], rec.bundles[j], h * mm[j], cots)
            lam = lam + h * sum(jacs[j].T @ mm[j] for j in range(s)) + loss_terms[k]
    for sf, cot in zip(sm.draws, cots):
        finalize_cotangent(sf, cot)
    return GradientReport(
        gradient=layout.flatten_cotangents(cots), layout=layout, step_conditions=conditions
    )


def sf_gp(sm: SampledModel, i: int) -> SparseGp:
    """Rehydrate the i-th draw snapshot as a SparseGp (layout bookkeeping)."""
    sf = sm.draws[i]
    from .kernels import ArdKernelParams

    return SparseGp(sf.xi, sf.mu, sf.log_var, ArdKernelParams(sf.sf2, sf.ls2))


def rollout_gradient(
    sm: SampledModel,
    x_0: np.ndarray,
    n_steps: int,
    loss_terms: np.ndarray,
    layout: ParameterLayout | None = None,
    collect_diagnostics: bool = False,
) -> GradientReport:
    """Forward rollout plus reverse accumulation of the supplied loss terms."""
    _, records = forward_records(sm, x_0, n_steps)
    return backward_from_records(sm, records, loss_terms, layout, collect_diagnostics)


# ---------------------------------------------------------------------------
# Implicit-function-theorem stage sensitivities (dense form)


def ift_stage_sensitivities(
    sm: SampledModel,
    x_n: np.ndarray,
    h: float,
    g_star: np.ndarray,
    layout: ParameterLayout | None = None,
):
    """Sensitivities (dg/dx_n, dg/dtheta) of converged stages g*.

    Solves (I - h J_blk (A kron I)) dg = RHS from the root form of the stage
    system, with the analytic field Jacobian at the stage abscissae.
    """
    if sm.structure == SEPARABLE:
        raise ValueError("stage sensitivities apply to tableau-based structures only")
    layout = layout or ParameterLayout([sf_gp(sm, i) for i in range(len(sm.draws))])
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    A = sm.tableau.stage_matrix
    s = sm.tableau.n_stages
    dim = x_n.shape[0]
    g_star = np.asarray(g_star, dtype=float).reshape(s, dim)
    us = x_n[None, :] + h * (A @ g_star)
    bundles = [_field_value_cached(sm, us[j])[1] for j in range(s)]
    jacs = [_field_jac_cached(sm, us[j], bundles[j]) for j in range(s)]
    M = np.eye(s * dim)
    for j in range(s):
        for l in range(s):
            if A[j, l] != 0.0:
                M[j * dim : (j + 1) * dim, l * dim : (l + 1) * dim] -= h * A[j, l] * jacs[j]
    rhs_x = np.zeros((s * dim, dim))
    for j in range(s):
        rhs_x[j * dim : (j + 1) * dim, :] = jacs[j]
    dg_dx = np.linalg.solve(M, rhs_x)
    rhs_theta = np.zeros((s * dim, layout.n_params))
    for j in range(s):
        for m in range(dim):
            cots = [GpCotangent.zeros(sf) for sf in sm.draws]
            unit = np.zeros(dim)
            unit[m] = 1.0
            _field_vjp_theta(sm, us[j], bundles[j], unit, cots)
            for sf, cot in zip(sm.draws, cots):
                finalize_cotangent(sf, cot)
            rhs_theta[j * dim + m, :] = layout.flatten_cotangents(cots)
    dg_dtheta = np.linalg.solve(M, rhs_theta)
    return dg_dx, dg_dtheta


def ift_step_jacobian(sm: SampledModel, x_n: np.ndarray) -> np.ndarray:
    """Analytic one-step Jacobian d x_{n+1} / d x_n via the IFT path."""
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    if sm.structure == SEPARABLE:
        d = sm.model.half_dim
        h = sm.step_size
        p, q = x_n[:d], x_n[d:]
        J_V = np.vstack([sf.gradient(q) for sf in sm.v_draws])
        p_new = p - h * np.array([sf.value(q) for sf in sm.v_draws])
        J_T = np.vstack([sf.gradient(p_new) for sf in sm.t_draws])
        top = np.hstack([np.eye(d), -h * J_V])
        bottom = np.hstack([h * J_T, np.eye(d) - h * h * (J_T @ J_V)])
        return np.vstack([top, bottom])
    stepper = Stepper(sm.tableau, sm.step_size, sm.solver)
    stages = solve_stages(stepper, sm.field(), x_n)
    dg_dx, _ = _ift_dg_dx_only(sm, x_n, sm.step_size, stages)
    s = sm.tableau.n_stages
    dim = x_n.shape[0]
    J = np.eye(dim)
    for j in range(s):
        J = J + sm.step_size * sm.tableau.weights[j] * dg_dx[j * dim : (j + 1) * dim, :]
    return J


def _ift_dg_dx_only(sm: SampledModel, x_n, h, g_star):
    A = sm.tableau.stage_matrix
    s = sm.tableau.n_stages
    dim = x_n.shape[0]
    g_star = np.asarray(g_star, dtype=float).reshape(s, dim)
    us = x_n[None, :] + h * (A @ g_star)
    bundles = [_field_value_cached(sm, us[j])[1] for j in range(s)]
    jacs = [_field_jac_cached(sm, us[j], bundles[j]) for j in range(s)]
    M = np.eye(s * dim)
    for j in range(s):
        for l in range(s):
            if A[j, l] != 0.0:
                M[j * dim : (j + 1) * dim, l * dim : (l + 1) * dim] -= h * A[j, l] * jacs[j]
    rhs_x = np.vstack(jacs)
    return np.linalg.solve(M, rhs_x), M


# ---------------------------------------------------------------------------
# Finite-difference gradient checking


@dataclass
class GradientCheckEntry:
    index: int
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradientCheckReport:
    entries: list[GradientCheckEntry]
    threshold: float

    @property
    def max_rel_err(self) -> float:
        return max((e.rel_err for e in self.entries), default=0.0)

    @property
    def failures(self) -> list[GradientCheckEntry]:
        return [e for e in self.entries if e.rel_err > self.threshold]

    @property
    def ok(self) -> bool:
        return not self.failures


def check_gradient(
    loss_fn,
    theta: np.ndarray,
    analytic_grad: np.ndarray,
    coords,
    eps: float = 1e-5,
    threshold: float = 1e-3,
) -> GradientCheckReport:
    """Compare an analytic gradient against central differences of ``loss_fn``."""
    theta = np.asarray(theta, dtype=float)
    analytic_grad = np.asarray(analytic_grad, dtype=float)
    entries = []
    for i in coords:
        step = np.zeros_like(theta)
        step[i] = eps
        numeric = (loss_fn(theta + step) - loss_fn(theta - step)) / (2.0 * eps)
        a = float(analytic_grad[i])
        denom = max(abs(a), abs(numeric), 1e-10)
        entries.append(GradientCheckEntry(i, a, float(numeric), abs(a - numeric) / denom))
    return GradientCheckReport(entries=entries, threshold=threshold)


def pick_check_coords(
    grad: np.ndarray, count: int, rng: np.random.Generator, min_rel: float = 1e-6
) -> np.ndarray:
    """Random coordinates among those with non-negligible gradient magnitude."""
    grad = np.asarray(grad)
    scale = float(np.max(np.abs(grad))) if grad.size else 0.0
    eligible = np.flatnonzero(np.abs(grad) >= min_rel * max(scale, 1e-300))
    if eligible.size == 0:
        eligible = np.arange(grad.size)
    count = min(count, eligible.size)
    return rng.choice(eligible, size=count, replace=False)
