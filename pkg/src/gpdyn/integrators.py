"""Runge-Kutta stepping over arbitrary vector fields.

Covers explicit tableaux (forward recursion), implicit tableaux (stage
system solved as a damped nonlinear least-squares problem), the partitioned
symplectic Euler method, the implicit midpoint rule for Hamiltonian fields,
fixed-grid integration, and step-doubling adaptive integration.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np

from .trajectory import Trajectory


@dataclass(frozen=True)
class ButcherTableau:
    """Runge-Kutta coefficients (A, b) plus the classical order of the method."""

    stage_matrix: np.ndarray
    weights: np.ndarray
    name: str
    order: int

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.stage_matrix, dtype=float))
        b = np.atleast_1d(np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "stage_matrix", A)
        object.__setattr__(self, "weights", b)
        s = b.shape[0]
        if A.shape != (s, s):
            raise ValueError(f"stage matrix {A.shape} does not match {s} weights")
        if abs(float(np.sum(b)) - 1.0) > 1e-12:
            raise ValueError(f"tableau '{self.name}' is inconsistent: weights sum to {np.sum(b)}")
        if self.order < 1:
            raise ValueError("order must be >= 1")

    @property
    def n_stages(self) -> int:
        return self.weights.shape[0]

    @property
    def is_explicit(self) -> bool:
        return bool(np.all(np.triu(self.stage_matrix) == 0.0))


EXPLICIT_EULER = ButcherTableau([[0.0]], [1.0], "explicit_euler", order=1)
HEUN = ButcherTableau([[0.0, 0.0], [1.0, 0.0]], [0.5, 0.5], "heun", order=2)
IMPLICIT_MIDPOINT = ButcherTableau([[0.5]], [1.0], "implicit_midpoint", order=2)
RADAU_IA = ButcherTableau(
    [[0.25, -0.25], [0.25, 5.0 / 12.0]], [0.25, 0.75], "radau_ia", order=3
)

TABLEAUS = {
    t.name: t for t in (EXPLICIT_EULER, HEUN, IMPLICIT_MIDPOINT, RADAU_IA)
}


@dataclass(frozen=True)
class SolverSettings:
    """Levenberg-Marquardt settings for implicit stage systems."""

    residual_tolerance: float = 1e-10
    max_iterations: int = 100
    damping_init: float = 1e-3
    warm_start: bool = True

    def __post_init__(self):
        if not self.residual_tolerance > 0:
            raise ValueError("residual_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.damping_init > 0:
            raise ValueError("damping_init must be positive")


DEFAULT_SOLVER = SolverSettings()


@dataclass(frozen=True)
class Stepper:
    """A tableau bound to a step size and solver settings."""

    tableau: ButcherTableau
    step_size: float
    solver: SolverSettings = DEFAULT_SOLVER

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")


class NonConvergenceError(RuntimeError):
    """Implicit stage solve failed to reach the residual tolerance."""

    def __init__(self, residual: float, iterations: int, step_index: int | None = None):
        self.residual = residual
        self.iterations = iterations
        self.step_index = step_index
        at = "" if step_index is None else f" at step {step_index}"
        super().__init__(
            f"stage solve did not converge{at}: residual {residual:.3e} "
            f"after {iterations} iterations"
        )


class StepSizeUnderflowError(RuntimeError):
    """Adaptive controller pushed the step size below the underflow floor."""


@dataclass(frozen=True)
class VectorField:
    """A vector field with an optional analytic Jacobian."""

    fn: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray] | None = None

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.fn(x)


def as_field(f) -> VectorField:
    if isinstance(f, VectorField):
        return f
    return VectorField(fn=f, jac=getattr(f, "jacobian", None))


def _levenberg_marquardt(residual_fn, jac_fn, g0: np.ndarray, settings: SolverSettings):
    """Minimise ||residual(g)||^2; returns g with ||r||_inf <= tolerance.

    Damped normal equations with a Marquardt diagonal; the damping shrinks on
    accepted steps and grows on rejected ones.
    """
    g = np.array(g0, dtype=float)
    r = residual_fn(g)
    lam = settings.damping_init
    iterations = 0
    norm = float(np.max(np.abs(r))) if r.size else 0.0
    while iterations < settings.max_iterations:
        if norm <= settings.residual_tolerance:
            return g, iterations
        J = jac_fn(g)
        JtJ = J.T @ J
        Jtr = J.T @ r
        diag = np.diag(JtJ).copy()
        diag[diag < 1e-12] = 1e-12
        accepted = False
        while iterations < settings.max_iterations:
            iterations += 1
            try:
                delta = np.linalg.solve(JtJ + lam * np.diag(diag), -Jtr)
            except np.linalg.LinAlgError:
                delta = None
            if delta is not None:
                g_new = g + delta
                r_new = residual_fn(g_new)
                if np.all(np.isfinite(r_new)) and np.linalg.norm(r_new) < np.linalg.norm(r):
                    g, r = g_new, r_new
                    norm = float(np.max(np.abs(r)))
                    lam = max(lam / 3.0, 1e-14)
                    accepted = True
                    break
            lam *= 10.0
            if lam > 1e12:
                break
        if not accepted:
            break
    if norm <= settings.residual_tolerance:
        return g, iterations
    raise NonConvergenceError(residual=norm, iterations=iterations)


def _stage_points(x_n: np.ndarray, h: float, A: np.ndarray, stages: np.ndarray) -> np.ndarray:
    return x_n[None, :] + h * (A @ stages)


def _solve_stages_implicit(
    stepper: Stepper, field: VectorField, x_n: np.ndarray, initial_stages: np.ndarray | None
) -> np.ndarray:
    A = stepper.tableau.stage_matrix
    s = stepper.tableau.n_stages
    d = x_n.shape[0]
    h = stepper.step_size

    def residual_fn(flat):
        G = flat.reshape(s, d)
        us = _stage_points(x_n, h, A, G)
        F = np.stack([np.asarray(field(us[j]), dtype=float) for j in range(s)])
        return (G - F).ravel()

    if field.jac is not None:

        def jac_fn(flat):
            G = flat.reshape(s, d)
            us = _stage_points(x_n, h, A, G)
            M = np.eye(s * d)
            for j in range(s):
                Jj = np.asarray(field.jac(us[j]), dtype=float)
                for l in range(s):
                    if A[j, l] != 0.0:
                        M[j * d : (j + 1) * d, l * d : (l + 1) * d] -= h * A[j, l] * Jj
            return M

    else:

        def jac_fn(flat):
            base = residual_fn(flat)
            M = np.empty((s * d, s * d))
            for i in range(s * d):
                eps = 1e-7 * (1.0 + abs(flat[i]))
                pert = flat.copy()
                pert[i] += eps
                M[:, i] = (residual_fn(pert) - base) / eps
            return M

    if initial_stages is None:
        f0 = np.asarray(field(x_n), dtype=float)
        g0 = np.tile(f0, s)
    else:
        g0 = np.asarray(initial_stages, dtype=float).ravel()
    g, _ = _levenberg_marquardt(residual_fn, jac_fn, g0, stepper.solver)
    return g.reshape(s, d)


def solve_stages(
    stepper: Stepper,
    field,
    x_n: np.ndarray,
    initial_stages: np.ndarray | None = None,
    force_least_squares: bool = False,
) -> np.ndarray:
    """Internal stages g_j = f(x_n + h sum_l a_jl g_l), shape (s, d).

    Explicit tableaux use forward recursion (residual exactly zero);
    implicit ones run the Levenberg-Marquardt solver. ``force_least_squares``
    routes explicit tableaux through the solver as well (equivalence checks).
    """
    field = as_field(field)
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    tab = stepper.tableau
    if tab.is_explicit and not force_least_squares:
        A = tab.stage_matrix
        h = stepper.step_size
        stages = np.zeros((tab.n_stages, x_n.shape[0]))
        for j in range(tab.n_stages):
            u = x_n + h * (A[j, :j] @ stages[:j]) if j else x_n
            stages[j] = np.asarray(field(u), dtype=float)
        return stages
    return _solve_stages_implicit(stepper, field, x_n, initial_stages)


def rk_step(
    stepper: Stepper,
    field,
    x_n: np.ndarray,
    initial_stages: np.ndarray | None = None,
) -> np.ndarray:
    """One step x_{n+1} = x_n + h * sum_j b_j g_j."""
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    stages = solve_stages(stepper, field, x_n, initial_stages=initial_stages)
    return x_n + stepper.step_size * (stepper.tableau.weights @ stages)


def symplectic_euler_step(v_prime, t_prime, p_n: np.ndarray, q_n: np.ndarray, h: float):
    """Partitioned Euler step: explicit in p, then explicit in q at the new p.

    p_{n+1} = p_n - h * v_prime(q_n)
    q_{n+1} = q_n + h * t_prime(p_{n+1})
    """
    p_n = np.atleast_1d(np.asarray(p_n, dtype=float))
    q_n = np.atleast_1d(np.asarray(q_n, dtype=float))
    p_new = p_n - h * np.asarray(v_prime(q_n), dtype=float)
    q_new = q_n + h * np.asarray(t_prime(p_new), dtype=float)
    return p_new, q_new


def apply_inverse_symplectic(v: np.ndarray) -> np.ndarray:
    """Multiply by J^{-1} = [[0, -I], [I, 0]] for an even-dimensional vector."""
    v = np.atleast_1d(np.asarray(v, dtype=float))
    d2 = v.shape[0] // 2
    return np.concatenate([-v[d2:], v[:d2]])


def hamiltonian_field(grad_h, grad_h_jac=None) -> VectorField:
    """The field J^{-1} grad H induced by a Hamiltonian gradient oracle."""

    def fn(x):
        return apply_inverse_symplectic(np.asarray(grad_h(x), dtype=float))

    jac = None
    if grad_h_jac is not None:

        def jac(x):
            H = np.asarray(grad_h_jac(x), dtype=float)
            d2 = H.shape[0] // 2
            return np.vstack([-H[d2:, :], H[:d2, :]])

    return VectorField(fn=fn, jac=jac)


def implicit_midpoint_hamiltonian_step(
    grad_h,
    x_n: np.ndarray,
    h: float,
    solver: SolverSettings = DEFAULT_SOLVER,
    grad_h_jac=None,
    initial_stages: np.ndarray | None = None,
) -> np.ndarray:
    """Midpoint step x_{n+1} = x_n + h J^{-1} grad H((x_n + x_{n+1})/2)."""
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    if x_n.shape[0] % 2 != 0:
        raise ValueError("state dimension must be even for a Hamiltonian field")
    stepper = Stepper(IMPLICIT_MIDPOINT, h, solver)
    return rk_step(stepper, hamiltonian_field(grad_h, grad_h_jac), x_n, initial_stages)


def integrate(stepper: Stepper, field, x_0: np.ndarray, n_steps: int) -> Trajectory:
    """Fixed-step integration on the uniform grid t_k = k*h."""
    field = as_field(field)
    x = np.atleast_1d(np.asarray(x_0, dtype=float))
    states = np.empty((n_steps + 1, x.shape[0]))
    states[0] = x
    warm = None
    for k in range(n_steps):
        try:
            stages = solve_stages(stepper, field, x, initial_stages=warm)
        except NonConvergenceError as err:
            raise NonConvergenceError(err.residual, err.iterations, step_index=k) from None
        x = x + stepper.step_size * (stepper.tableau.weights @ stages)
        if stepper.solver.warm_start:
            warm = stages
        states[k + 1] = x
    times = stepper.step_size * np.arange(n_steps + 1)
    return Trajectory(times=times, states=states)


def step_jacobian(stepper: Stepper, field, x_n: np.ndarray, eps_scale: float = 1e-5) -> np.ndarray:
    """Jacobian of the one-step map by central finite differences.

    Implicit steps are re-solved at the perturbed inputs, warm-started from
    the unperturbed stages.
    """
    field = as_field(field)
    x_n = np.atleast_1d(np.asarray(x_n, dtype=float))
    d = x_n.shape[0]
    warm = solve_stages(stepper, field, x_n)
    J = np.empty((d, d))
    for i in range(d):
        eps = eps_scale * (1.0 + abs(x_n[i]))
        xp = x_n.copy()
        xp[i] += eps
        xm = x_n.copy()
        xm[i] -= eps
        fp = rk_step(stepper, field, xp, initial_stages=warm)
        fm = rk_step(stepper, field, xm, initial_stages=warm)
        J[:, i] = (fp - fm) / (2.0 * eps)
    return J


_MIN_STEP = 1e-12
_SAFETY = 0.9
_SHRINK_MIN = 0.2
_GROW_MAX = 5.0


def _try_step(stepper, field, x, warm):
    try:
        return rk_step(stepper, field, x, initial_stages=warm)
    except NonConvergenceError:
        return None


def _adaptive_march(tableau, field, x0, t0, t1, rtol, atol, solver, h_init, on_accept):
    """Shared step-doubling loop; calls on_accept(t, x) after every accepted step.

    Returns the final state and the last step size (for reuse across grid
    gaps). The accepted value is the Richardson extrapolation of the two
    half steps, so the propagated error is one order higher than the
    controlled estimate.
    """
    x = np.atleast_1d(np.asarray(x0, dtype=float))
    p = tableau.order
    corr = 1.0 / (2.0**p - 1.0)
    span = t1 - t0
    h = min(h_init if h_init is not None else span / 100.0, span)
    t = t0
    warm = None
    while t < t1 - 1e-14 * max(1.0, abs(t1)):
        h = min(h, t1 - t)
        if h < _MIN_STEP:
            raise StepSizeUnderflowError(
                f"step size underflow at t={t:.6g} (h={h:.3e}, rtol={rtol}, atol={atol})"
            )
        full = _try_step(Stepper(tableau, h, solver), field, x, warm)
        half_stepper = Stepper(tableau, h / 2.0, solver)
        y = _try_step(half_stepper, field, x, warm) if full is not None else None
        two = _try_step(half_stepper, field, y, warm) if y is not None else None
        if two is None or not np.all(np.isfinite(two)) or not np.all(np.isfinite(full)):
            h *= _SHRINK_MIN
            continue
        err = np.abs(two - full) * corr
        tol = atol + rtol * np.abs(x)
        ratio = float(np.max(err / tol))
        if ratio <= 1.0:
            t = t1 if t1 - (t + h) < 1e-14 * max(1.0, abs(t1)) else t + h
            x = two + (two - full) * corr
            on_accept(t, x)
            factor = _GROW_MAX if ratio == 0.0 else _SAFETY * ratio ** (-1.0 / (p + 1))
            h *= min(max(factor, _SHRINK_MIN), _GROW_MAX)
        else:
            h *= min(max(_SAFETY * ratio ** (-1.0 / (p + 1)), _SHRINK_MIN), 1.0)
    return x, h


def integrate_adaptive(
    tableau: ButcherTableau,
    field,
    x_0: np.ndarray,
    t_span: tuple[float, float],
    rtol: float,
    atol: float,
    solver: SolverSettings = DEFAULT_SOLVER,
    initial_step: float | None = None,
) -> Trajectory:
    """Step-doubling adaptive integration over ``t_span``; free output grid."""
    if not (rtol > 0 and atol > 0):
        raise ValueError("rtol and atol must be positive")
    field = as_field(field)
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    times = [t0]
    states = [np.atleast_1d(np.asarray(x_0, dtype=float))]
    _adaptive_march(
        tableau, field, x_0, t0, t1, rtol, atol, solver, initial_step,
        lambda t, x: (times.append(t), states.append(x)),
    )
    return Trajectory(times=np.asarray(times), states=np.vstack(states))


def integrate_to_grid(
    tableau: ButcherTableau,
    field,
    x_0: np.ndarray,
    times: np.ndarray,
    rtol: float,
    atol: float,
    solver: SolverSettings = DEFAULT_SOLVER,
) -> Trajectory:
    """Adaptive integration landing exactly on the requested time grid."""
    field = as_field(field)
    times = np.asarray(times, dtype=float)
    x = np.atleast_1d(np.asarray(x_0, dtype=float))
    states = np.empty((times.shape[0], x.shape[0]))
    states[0] = x
    h = None
    for k in range(times.shape[0] - 1):
        x, h = _adaptive_march(
            tableau, field, x, times[k], times[k + 1], rtol, atol, solver, h,
            lambda t, s: None,
        )
        states[k + 1] = x
    return Trajectory(times=times, states=states)
