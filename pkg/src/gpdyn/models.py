"""Dynamics models that impose structure on sampled GP fields.

Each model pairs a set of sparse GPs with the integrator that matches its
structure:

* separable Hamiltonian  -> d independent GPs for V'(q) and T'(p), stepped
  with the explicit symplectic Euler method;
* non-separable Hamiltonian -> one scalar GP for H, stepped with the
  implicit midpoint rule on J^{-1} grad H;
* constrained rigid body -> two GPs plus a tangency-completing third
  component, stepped with the implicit midpoint rule;
* generic -> one GP per state dimension under a plain (by default explicit
  Euler) Runge-Kutta tableau.

Sampling a model freezes one posterior draw per GP; the resulting
:class:`SampledModel` is immutable and safe to roll out concurrently.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from .integrators import (
    DEFAULT_SOLVER,
    EXPLICIT_EULER,
    IMPLICIT_MIDPOINT,
    ButcherTableau,
    NonConvergenceError,
    SolverSettings,
    Stepper,
    VectorField,
    apply_inverse_symplectic,
    rk_step,
    solve_stages,
    symplectic_euler_step,
)
from .sparse_gp import DrawNoise, MultiGp, SampledFunction, SparseGp, mean_function
from .trajectory import Trajectory

SEPARABLE = "separable"
NONSEPARABLE = "nonseparable"
RIGID_BODY = "rigid_body"
GENERIC = "generic"


class ConstraintSingularityError(RuntimeError):
    """Rigid-body constraint completion is singular (|x3| below the floor)."""


@dataclass
class SeparableHamiltonianModel:
    """H(p, q) = T(p) + V(q) with GP'd derivatives and symplectic Euler."""

    v_prime: MultiGp
    t_prime: MultiGp
    step_size: float

    def __post_init__(self):
        if self.v_prime.n_outputs != self.v_prime.dim:
            raise ValueError("v_prime must map q to R^d with d = dim(q)")
        if self.t_prime.n_outputs != self.t_prime.dim:
            raise ValueError("t_prime must map p to R^d with d = dim(p)")

    @property
    def half_dim(self) -> int:
        return self.v_prime.dim

    @property
    def state_dim(self) -> int:
        return self.v_prime.dim + self.t_prime.dim

    def gps(self) -> list[SparseGp]:
        return list(self.v_prime.components) + list(self.t_prime.components)

    structure = SEPARABLE


@dataclass
class NonSeparableHamiltonianModel:
    """A single scalar GP for H(x), stepped by the implicit midpoint rule."""

    hamiltonian: SparseGp
    step_size: float
    solver: SolverSettings = DEFAULT_SOLVER

    def __post_init__(self):
        if self.hamiltonian.dim % 2 != 0:
            raise ValueError("Hamiltonian state dimension must be even")

    @property
    def state_dim(self) -> int:
        return self.hamiltonian.dim

    def gps(self) -> list[SparseGp]:
        return [self.hamiltonian]

    structure = NONSEPARABLE


@dataclass
class ConstrainedRigidBodyModel:
    """Two GPs on R^3; the third field component enforces x^T f(x) = 0."""

    f1: SparseGp
    f2: SparseGp
    step_size: float
    solver: SolverSettings = DEFAULT_SOLVER
    x3_floor: float = 1e-3

    def __post_init__(self):
        if self.f1.dim != 3 or self.f2.dim != 3:
            raise ValueError("rigid-body component GPs must take 3-D inputs")

    state_dim = 3

    def gps(self) -> list[SparseGp]:
        return [self.f1, self.f2]

    structure = RIGID_BODY


@dataclass
class GenericEulerModel:
    """Unstructured one-GP-per-dimension field under a plain RK tableau."""

    field: MultiGp
    step_size: float
    tableau: ButcherTableau = EXPLICIT_EULER
    solver: SolverSettings = DEFAULT_SOLVER

    def __post_init__(self):
        if self.field.n_outputs != self.field.dim:
            raise ValueError("field must map R^d to R^d")

    @property
    def state_dim(self) -> int:
        return self.field.dim

    def gps(self) -> list[SparseGp]:
        return list(self.field.components)

    structure = GENERIC


Model = (
    SeparableHamiltonianModel
    | NonSeparableHamiltonianModel
    | ConstrainedRigidBodyModel
    | GenericEulerModel
)


class SampledModel:
    """One frozen draw per constituent GP, wired into the model's structure."""

    def __init__(self, model: Model, draws: list[SampledFunction]):
        self.model = model
        self.structure = model.structure
        self.draws = list(draws)
        self.step_size = model.step_size
        self.solver = getattr(model, "solver", DEFAULT_SOLVER)
        if self.structure == GENERIC:
            self.tableau = model.tableau
        elif self.structure in (NONSEPARABLE, RIGID_BODY):
            self.tableau = IMPLICIT_MIDPOINT
        else:
            self.tableau = None
        if self.structure == SEPARABLE:
            d = model.half_dim
            self.v_draws = self.draws[:d]
            self.t_draws = self.draws[d:]

    @property
    def state_dim(self) -> int:
        return self.model.state_dim

    # -- field assembly ----------------------------------------------------

    def field_value(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.structure == SEPARABLE:
            d = self.model.half_dim
            p, q = x[:d], x[d:]
            v = np.array([sf.value(q) for sf in self.v_draws])
            t = np.array([sf.value(p) for sf in self.t_draws])
            return np.concatenate([-v, t])
        if self.structure == NONSEPARABLE:
            return apply_inverse_symplectic(self.draws[0].gradient(x))
        if self.structure == RIGID_BODY:
            f1 = self.draws[0].value(x)
            f2 = self.draws[1].value(x)
            x3 = self._checked_x3(x)
            return np.array([f1, f2, -(f1 * x[0] + f2 * x[1]) / x3])
        return np.array([sf.value(x) for sf in self.draws])

    def field_jacobian(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.structure == SEPARABLE:
            d = self.model.half_dim
            p, q = x[:d], x[d:]
            J = np.zeros((self.state_dim, self.state_dim))
            for i, sf in enumerate(self.v_draws):
                J[i, d:] = -sf.gradient(q)
            for i, sf in enumerate(self.t_draws):
                J[d + i, :d] = sf.gradient(p)
            return J
        if self.structure == NONSEPARABLE:
            H = self.draws[0].hessian(x)
            d2 = self.state_dim // 2
            return np.vstack([-H[d2:, :], H[:d2, :]])
        if self.structure == RIGID_BODY:
            x3 = self._checked_x3(x)
            f1, c1 = self.draws[0].value_with_cache(x)
            f2, c2 = self.draws[1].value_with_cache(x)
            g1 = self.draws[0].gradient(x, c1)
            g2 = self.draws[1].gradient(x, c2)
            J = np.zeros((3, 3))
            J[0] = g1
            J[1] = g2
            J[2] = -(x[0] * g1 + x[1] * g2) / x3
            J[2, 0] -= f1 / x3
            J[2, 1] -= f2 / x3
            J[2, 2] += (f1 * x[0] + f2 * x[1]) / x3**2
            return J
        return np.vstack([sf.gradient(x) for sf in self.draws])

    def field(self) -> VectorField:
        """The assembled field as a plain vector field with analytic Jacobian."""
        return VectorField(fn=self.field_value, jac=self.field_jacobian)

    def _checked_x3(self, x: np.ndarray) -> float:
        x3 = float(x[2])
        if abs(x3) < self.model.x3_floor:
            raise ConstraintSingularityError(
                f"|x3| = {abs(x3):.3e} below the constraint floor {self.model.x3_floor:.1e}"
            )
        return x3

    # -- stepping ----------------------------------------------------------

    def step(self, x: np.ndarray, warm_stages: np.ndarray | None = None):
        """One integrator step; returns (next state, warm-start stages)."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if self.structure == SEPARABLE:
            d = self.model.half_dim
            p_new, q_new = symplectic_euler_step(
                lambda q: np.array([sf.value(q) for sf in self.v_draws]),
                lambda p: np.array([sf.value(p) for sf in self.t_draws]),
                x[:d],
                x[d:],
                self.step_size,
            )
            return np.concatenate([p_new, q_new]), None
        stepper = Stepper(self.tableau, self.step_size, self.solver)
        stages = solve_stages(stepper, self.field(), x, initial_stages=warm_stages)
        x_new = x + self.step_size * (self.tableau.weights @ stages)
        return x_new, stages

    def model_step(self, x: np.ndarray) -> np.ndarray:
        return self.step(x)[0]

    def rollout(self, x_0: np.ndarray, n_steps: int) -> Trajectory:
        """Repeated stepping on the uniform grid t_k = k * h."""
        x = np.atleast_1d(np.asarray(x_0, dtype=float))
        states = np.empty((n_steps + 1, x.shape[0]))
        states[0] = x
        warm = None
        for k in range(n_steps):
            try:
                x, warm = self.step(x, warm)
            except NonConvergenceError as err:
                raise NonConvergenceError(err.residual, err.iterations, step_index=k) from None
            states[k + 1] = x
        return Trajectory(times=self.step_size * np.arange(n_steps + 1), states=states)


def sample_model(
    model: Model, feature_count: int, rng: np.random.Generator
) -> SampledModel:
    """One posterior draw per constituent GP, frozen into a SampledModel."""
    draws = [SampledFunction(gp, DrawNoise.sample(gp, feature_count, rng)) for gp in model.gps()]
    return SampledModel(model, draws)


def assemble_model(model: Model, noises: list[DrawNoise]) -> SampledModel:
    """Rebuild a SampledModel from frozen draw noise at the current parameters."""
    gps = model.gps()
    if len(noises) != len(gps):
        raise ValueError(f"expected {len(gps)} noise records, got {len(noises)}")
    return SampledModel(model, [SampledFunction(gp, nz) for gp, nz in zip(gps, noises)])


def mean_model(model: Model) -> SampledModel:
    """Posterior-mean field rollouts (no sampling)."""
    return SampledModel(model, [mean_function(gp) for gp in model.gps()])


def field_eval(sm: SampledModel, x: np.ndarray) -> np.ndarray:
    return sm.field_value(x)


def model_step(sm: SampledModel, x: np.ndarray) -> np.ndarray:
    return sm.model_step(x)


def rollout(sm: SampledModel, x_0: np.ndarray, n_steps: int) -> Trajectory:
    return sm.rollout(x_0, n_steps)
