import math

import numpy as np
import pytest
import sympy
from numpy.testing import assert_allclose

from gpdyn.integrators import HEUN, IMPLICIT_MIDPOINT, RADAU_IA, Stepper, solve_stages
from gpdyn.kernels import ArdKernelParams
from gpdyn.models import (
    ConstrainedRigidBodyModel,
    GenericEulerModel,
    NonSeparableHamiltonianModel,
    SampledModel,
    SeparableHamiltonianModel,
    assemble_model,
)
from gpdyn.sparse_gp import DrawNoise, MultiGp, SampledFunction, SparseGp
from gpdyn.gradients import (
    GpCotangent,
    ParameterLayout,
    backward_from_records,
    check_gradient,
    finalize_cotangent,
    forward_records,
    get_params,
    ift_stage_sensitivities,
    ift_step_jacobian,
    kl_value_and_gradient,
    model_layout,
    pick_check_coords,
    rollout_gradient,
    set_params,
    vjp_gradient_x,
    vjp_value,
)


def make_gp(P, d, sf2=0.5, seed=0, spread=2.0):
    rng = np.random.default_rng(seed)
    # Spread-out inducing points keep the Gram matrix well conditioned, so
    # central differences stay meaningful against the analytic path.
    xi = rng.uniform(-spread, spread, size=(P, d)) + 0.2 * rng.standard_normal((P, d))
    return SparseGp(
        xi,
        0.4 * rng.standard_normal(P),
        np.log(np.full(P, 0.05)),
        ArdKernelParams(sf2, 0.8 + rng.random(d)),
    )


def fd_gradient(loss, theta, eps=1e-5):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        tp = theta.copy(); tp[i] += eps
        tm = theta.copy(); tm[i] -= eps
        g[i] = (loss(tp) - loss(tm)) / (2.0 * eps)
    return g


def max_rel_err(a, b, floor=1e-6):
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


class TestParameterLayout:
    def test_round_trip(self):
        gps = [make_gp(4, 2, seed=1), make_gp(3, 2, seed=2)]
        layout = ParameterLayout(gps)
        vec = layout.flatten(gps)
        vec2 = vec + np.arange(vec.size) * 0.01
        layout.assign(gps, vec2)
        assert_allclose(layout.flatten(gps), vec2, atol=0.0)

    def test_length_check(self):
        gps = [make_gp(2, 1, seed=3)]
        layout = ParameterLayout(gps)
        with pytest.raises(ValueError):
            layout.assign(gps, np.zeros(layout.n_params + 1))


class TestDrawVjps:
    def _setup(self, seed):
        gp = make_gp(5, 3, seed=seed)
        noise = DrawNoise.sample(gp, 16, np.random.default_rng(seed + 100))
        layout = ParameterLayout([gp])
        return gp, noise, layout

    def test_value_vjp(self):
        gp, noise, layout = self._setup(4)
        theta0 = layout.flatten([gp])
        x = np.array([0.3, -0.5, 0.8])

        def loss(theta):
            layout.assign([gp], theta)
            return 2.5 * SampledFunction(gp, noise).value(x)

        layout.assign([gp], theta0)
        sf = SampledFunction(gp, noise)
        cot = GpCotangent.zeros(sf)
        _, cache = sf.value_with_cache(x)
        vjp_value(sf, cache, cot, 2.5)
        finalize_cotangent(sf, cot)
        assert max_rel_err(layout.flatten_cotangents([cot]), fd_gradient(loss, theta0)) <= 1e-5

    def test_gradient_vjp(self):
        gp, noise, layout = self._setup(5)
        theta0 = layout.flatten([gp])
        x = np.array([0.1, 0.6, -0.2])
        cg = np.array([0.7, -1.1, 0.4])

        def loss(theta):
            layout.assign([gp], theta)
            return float(SampledFunction(gp, noise).gradient(x) @ cg)

        layout.assign([gp], theta0)
        sf = SampledFunction(gp, noise)
        cot = GpCotangent.zeros(sf)
        _, cache = sf.value_with_cache(x)
        vjp_gradient_x(sf, cache, cot, cg)
        finalize_cotangent(sf, cot)
        assert max_rel_err(layout.flatten_cotangents([cot]), fd_gradient(loss, theta0)) <= 1e-5

    def test_kl_gradient(self):
        gp, _, layout = self._setup(6)
        theta0 = layout.flatten([gp])

        def loss(theta):
            layout.assign([gp], theta)
            from gpdyn.sparse_gp import kl_to_prior

            return kl_to_prior(gp)

        layout.assign([gp], theta0)
        value, cot = kl_value_and_gradient(gp)
        assert value == pytest.approx(loss(theta0), rel=1e-12)
        assert max_rel_err(layout.flatten_cotangents([cot]), fd_gradient(loss, theta0)) <= 1e-5


def _rollout_check(model, x0, n_steps, seed, rtol):
    gps = model.gps()
    layout = model_layout(model)
    theta0 = get_params(model)
    rng = np.random.default_rng(seed)
    noises = [DrawNoise.sample(gp, 24, rng) for gp in gps]
    targets = rng.normal(size=(n_steps + 1, len(x0)))

    def loss(theta):
        set_params(model, theta)
        traj, _ = forward_records(assemble_model(model, noises), x0, n_steps)
        return 0.5 * float(np.sum((traj.states - targets) ** 2))

    set_params(model, theta0)
    sm = assemble_model(model, noises)
    traj, records = forward_records(sm, x0, n_steps)
    terms = traj.states - targets
    terms[0] = 0.0
    analytic = backward_from_records(sm, records, terms, layout).gradient
    numeric = fd_gradient(loss, theta0)
    set_params(model, theta0)
    assert max_rel_err(analytic, numeric) <= rtol, max_rel_err(analytic, numeric)


class TestRolloutGradients:
    def test_separable(self):
        model = SeparableHamiltonianModel(
            v_prime=MultiGp([make_gp(4, 1, seed=7)]),
            t_prime=MultiGp([make_gp(4, 1, seed=8)]),
            step_size=0.1,
        )
        _rollout_check(model, np.array([0.8, -0.4]), 6, seed=9, rtol=1e-4)

    def test_nonseparable_midpoint(self):
        model = NonSeparableHamiltonianModel(hamiltonian=make_gp(6, 2, seed=10), step_size=0.1)
        _rollout_check(model, np.array([0.3, -0.2]), 5, seed=11, rtol=1e-4)

    def test_rigid_body_midpoint(self):
        model = ConstrainedRigidBodyModel(
            f1=make_gp(4, 3, sf2=0.1, seed=12),
            f2=make_gp(4, 3, sf2=0.1, seed=13),
            step_size=0.1,
        )
        _rollout_check(model, np.array([0.45, 0.1, 0.88]), 5, seed=14, rtol=1e-4)

    def test_generic_heun(self):
        model = GenericEulerModel(
            field=MultiGp([make_gp(4, 2, seed=15), make_gp(4, 2, seed=16)]),
            step_size=0.1,
            tableau=HEUN,
        )
        _rollout_check(model, np.array([0.3, 0.4]), 5, seed=17, rtol=1e-4)

    def test_generic_radau(self):
        model = GenericEulerModel(
            field=MultiGp([make_gp(4, 2, seed=18), make_gp(4, 2, seed=19)]),
            step_size=0.1,
            tableau=RADAU_IA,
        )
        _rollout_check(model, np.array([0.3, 0.4]), 4, seed=20, rtol=1e-4)

    def test_zero_loss_terms_zero_gradient(self):
        model = GenericEulerModel(
            field=MultiGp([make_gp(3, 2, seed=21), make_gp(3, 2, seed=22)]), step_size=0.1
        )
        sm = assemble_model(
            model, [DrawNoise.sample(gp, 16, np.random.default_rng(23)) for gp in model.gps()]
        )
        report = rollout_gradient(sm, np.array([0.1, 0.2]), 4, np.zeros((5, 2)))
        assert np.all(report.gradient == 0.0)

    def test_deterministic_given_draw(self):
        model = NonSeparableHamiltonianModel(hamiltonian=make_gp(5, 2, seed=24), step_size=0.1)
        noises = [DrawNoise.sample(gp, 16, np.random.default_rng(25)) for gp in model.gps()]
        terms = np.random.default_rng(26).normal(size=(6, 2))
        g1 = rollout_gradient(assemble_model(model, noises), np.array([0.2, 0.1]), 5, terms)
        g2 = rollout_gradient(assemble_model(model, noises), np.array([0.2, 0.1]), 5, terms)
        assert np.array_equal(g1.gradient, g2.gradient)


class TestOneStepSymbolicOracle:
    def test_explicit_euler_quadratic_loss(self):
        # P = 1, S = 1, d = 1: the whole one-step loss is small enough to
        # differentiate symbolically and compare coordinate by coordinate.
        xi_v, mu_v, logvar_v, logsf2_v, logls2_v = sympy.symbols(
            "xi mu logvar logsf2 logls2", real=True
        )
        omega, w_c, w_s, eps_z, x0, h, target, jr = sympy.symbols(
            "omega w_c w_s eps_z x0 h target jr", real=True
        )
        sf2 = sympy.exp(logsf2_v)
        ls2 = sympy.exp(logls2_v)
        scale = sympy.sqrt(sf2)  # sqrt(sf2 / S) with S = 1
        z = mu_v + sympy.exp(logvar_v / 2) * eps_z

        def phi_dot_w(point):
            return scale * (w_c * sympy.cos(point * omega) + w_s * sympy.sin(point * omega))

        K = sf2 + jr * sf2
        v = (z - phi_dot_w(xi_v)) / K

        def f(point):
            kx = sf2 * sympy.exp(-((point - xi_v) ** 2) / (2 * ls2))
            return phi_dot_w(point) + kx * v

        x1 = x0 + h * f(x0)
        loss = (x1 - target) ** 2 / 2
        subs = {
            xi_v: 0.4, mu_v: 0.3, logvar_v: math.log(0.04), logsf2_v: math.log(0.7),
            logls2_v: math.log(1.3), omega: 0.9, w_c: 0.5, w_s: -0.8, eps_z: 0.6,
            x0: 0.2, h: 0.1, target: 0.35, jr: 1e-8,
        }
        symbolic = [
            float(sympy.diff(loss, s).evalf(subs=subs))
            for s in (xi_v, mu_v, logvar_v, logsf2_v, logls2_v)
        ]

        gp = SparseGp([[0.4]], [0.3], [math.log(0.04)], ArdKernelParams(0.7, [1.3]))
        noise = DrawNoise(
            frequencies=np.array([[0.9]]),
            weights=np.array([0.5, -0.8]),
            target_noise=np.array([0.6]),
        )
        model = GenericEulerModel(field=MultiGp([gp]), step_size=0.1)
        sm = assemble_model(model, [noise])
        traj, records = forward_records(sm, np.array([0.2]), 1)
        terms = np.zeros((2, 1))
        terms[1, 0] = traj.states[1, 0] - 0.35
        got = backward_from_records(sm, records, terms).gradient
        assert_allclose(got, symbolic, rtol=1e-9, atol=1e-14)


class TestIftStageSensitivities:
    def _model(self, seed=27):
        return NonSeparableHamiltonianModel(hamiltonian=make_gp(5, 2, seed=seed), step_size=0.1)

    def test_linear_field_midpoint_formula(self):
        # On f(x) = J x the stage sensitivity is (I - h/2 J)^{-1} J; check
        # the solver-differentiated stages against that closed form.
        J = np.array([[0.0, -1.3], [0.7, 0.2]])
        from gpdyn.integrators import VectorField

        field = VectorField(lambda x: J @ x, lambda x: J)
        h = 0.1
        stepper = Stepper(IMPLICIT_MIDPOINT, h)
        x = np.array([0.4, -0.2])
        eps = 1e-6
        fd = np.empty((2, 2))
        for i in range(2):
            xp = x.copy(); xp[i] += eps
            xm = x.copy(); xm[i] -= eps
            fd[:, i] = (
                solve_stages(stepper, field, xp).ravel()
                - solve_stages(stepper, field, xm).ravel()
            ) / (2 * eps)
        expected = np.linalg.solve(np.eye(2) - 0.5 * h * J, J)
        assert_allclose(fd, expected, atol=1e-7)

    def test_matches_fd_of_resolved_stages(self):
        model = self._model()
        layout = model_layout(model)
        theta0 = get_params(model)
        noises = [DrawNoise.sample(gp, 24, np.random.default_rng(28)) for gp in model.gps()]
        x0 = np.array([0.25, -0.15])
        h = 0.1

        def stages_of(theta, x):
            set_params(model, theta)
            sm = assemble_model(model, noises)
            return solve_stages(Stepper(sm.tableau, h, sm.solver), sm.field(), x).ravel()

        sm = assemble_model(model, noises)
        g0 = solve_stages(Stepper(sm.tableau, h, sm.solver), sm.field(), x0)
        dg_dx, dg_dth = ift_stage_sensitivities(sm, x0, h, g0, layout)
        eps = 1e-6
        fd_dx = np.empty_like(dg_dx)
        for i in range(2):
            xp = x0.copy(); xp[i] += eps
            xm = x0.copy(); xm[i] -= eps
            fd_dx[:, i] = (stages_of(theta0, xp) - stages_of(theta0, xm)) / (2 * eps)
        assert max_rel_err(dg_dx, fd_dx, floor=1e-4) <= 1e-4
        fd_dth = np.empty_like(dg_dth)
        for i in range(theta0.size):
            tp = theta0.copy(); tp[i] += eps
            tm = theta0.copy(); tm[i] -= eps
            fd_dth[:, i] = (stages_of(tp, x0) - stages_of(tm, x0)) / (2 * eps)
        set_params(model, theta0)
        assert max_rel_err(dg_dth, fd_dth, floor=1e-4) <= 1e-4

    def test_explicit_tableau_equals_chain_rule_recursion(self):
        model = GenericEulerModel(
            field=MultiGp([make_gp(4, 2, seed=29), make_gp(4, 2, seed=30)]),
            step_size=0.1,
            tableau=HEUN,
        )
        sm = assemble_model(
            model, [DrawNoise.sample(gp, 16, np.random.default_rng(31)) for gp in model.gps()]
        )
        x0 = np.array([0.3, -0.1])
        h = sm.step_size
        stepper = Stepper(HEUN, h, sm.solver)
        stages = solve_stages(stepper, sm.field(), x0)
        dg_dx, _ = ift_stage_sensitivities(sm, x0, h, stages)
        # Direct forward recursion over the strictly lower-triangular tableau.
        A = HEUN.stage_matrix
        us = x0[None, :] + h * (A @ stages)
        sens = []
        for j in range(2):
            Jj = sm.field_jacobian(us[j])
            inner = np.eye(2)
            for l in range(j):
                inner = inner + h * A[j, l] * sens[l]
            sens.append(Jj @ inner)
        recursion = np.vstack(sens)
        assert_allclose(dg_dx, recursion, atol=1e-10)

    def test_separable_rejected(self):
        model = SeparableHamiltonianModel(
            v_prime=MultiGp([make_gp(3, 1, seed=32)]),
            t_prime=MultiGp([make_gp(3, 1, seed=33)]),
            step_size=0.1,
        )
        sm = assemble_model(
            model, [DrawNoise.sample(gp, 8, np.random.default_rng(34)) for gp in model.gps()]
        )
        with pytest.raises(ValueError):
            ift_stage_sensitivities(sm, np.array([0.1, 0.2]), 0.1, np.zeros((1, 2)))


class TestIftStepJacobian:
    def test_matches_fd_step_jacobian(self):
        model = NonSeparableHamiltonianModel(hamiltonian=make_gp(5, 2, seed=35), step_size=0.1)
        sm = assemble_model(
            model, [DrawNoise.sample(gp, 24, np.random.default_rng(36)) for gp in model.gps()]
        )
        x = np.array([0.2, -0.3])
        J = ift_step_jacobian(sm, x)
        eps = 1e-6
        fd = np.empty((2, 2))
        for i in range(2):
            xp = x.copy(); xp[i] += eps
            xm = x.copy(); xm[i] -= eps
            fd[:, i] = (sm.model_step(xp) - sm.model_step(xm)) / (2 * eps)
        assert_allclose(J, fd, atol=1e-6)


class TestCheckGradient:
    def test_quadratic_loss_exact(self):
        theta = np.array([0.3, -1.2, 0.8])
        loss = lambda t: 0.5 * float(t @ t)
        report = check_gradient(loss, theta, theta, coords=range(3))
        assert report.ok
        assert report.max_rel_err <= 1e-9

    def test_central_difference_order(self):
        theta = np.array([0.7])
        loss = lambda t: float(t[0] ** 4)
        grad = np.array([4 * 0.7**3])
        errs = []
        for eps in (1e-2, 5e-3):
            rep = check_gradient(loss, theta, grad, coords=[0], eps=eps)
            errs.append(abs(rep.entries[0].numeric - rep.entries[0].analytic))
        # central differences: error ~ eps^2, so halving eps quarters it
        assert errs[1] <= errs[0] / 3.0

    def test_flags_failures(self):
        theta = np.zeros(2)
        loss = lambda t: float(t[0])
        report = check_gradient(loss, theta, np.array([2.0, 0.0]), coords=[0], threshold=1e-3)
        assert not report.ok

    def test_pick_coords_avoids_negligible(self):
        grad = np.array([1.0, 1e-12, 0.5, 0.0, 2.0])
        coords = pick_check_coords(grad, 3, np.random.default_rng(0))
        assert set(coords).issubset({0, 2, 4})
