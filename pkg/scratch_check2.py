"""Scratch FD verification of rollout gradients for all structures."""
import numpy as np

from gpdyn.integrators import HEUN, IMPLICIT_MIDPOINT, RADAU_IA
from gpdyn.kernels import ArdKernelParams
from gpdyn.models import (
    ConstrainedRigidBodyModel, GenericEulerModel, NonSeparableHamiltonianModel,
    SampledModel, SeparableHamiltonianModel,
)
from gpdyn.sparse_gp import DrawNoise, MultiGp, SampledFunction, SparseGp
from gpdyn.gradients import (
    ParameterLayout, backward_from_records, forward_records, model_layout,
    get_params, set_params, ift_stage_sensitivities,
)

rng = np.random.default_rng(7)
S = 24


def make_gp(P, d, sf2=0.5, seed=0):
    r = np.random.default_rng(seed)
    return SparseGp(
        r.normal(size=(P, d)), r.normal(size=P) * 0.4,
        np.log(np.full(P, 0.05)), ArdKernelParams(sf2, 0.8 + r.random(d)),
    )


def check(name, model, x0, n_steps):
    gps = model.gps()
    layout = model_layout(model)
    theta0 = get_params(model)
    noises = [DrawNoise.sample(gp, S, rng) for gp in gps]
    targets = rng.normal(size=(n_steps + 1, len(x0)))

    def assemble():
        return SampledModel(model, [SampledFunction(gp, nz) for gp, nz in zip(gps, noises)])

    def loss(theta):
        set_params(model, theta)
        traj, _ = forward_records(assemble(), x0, n_steps)
        return 0.5 * float(np.sum((traj.states - targets) ** 2))

    set_params(model, theta0)
    sm = assemble()
    traj, rec = forward_records(sm, x0, n_steps)
    loss_terms = traj.states - targets
    loss_terms[0] = 0.0  # x0 held fixed
    rep = backward_from_records(sm, rec, loss_terms, layout)
    a = rep.gradient
    n = np.zeros_like(a)
    eps = 1e-6
    for i in range(a.size):
        tp = theta0.copy(); tp[i] += eps
        tm = theta0.copy(); tm[i] -= eps
        n[i] = (loss(tp) - loss(tm)) / (2 * eps)
    set_params(model, theta0)
    err = np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6))
    print(f"{name}: ||grad||={np.linalg.norm(a):.4f} max rel err {err:.3e}")
    return sm


# separable, 2-D state
sep = SeparableHamiltonianModel(
    v_prime=MultiGp([make_gp(4, 1, seed=1)]),
    t_prime=MultiGp([make_gp(4, 1, seed=2)]),
    step_size=0.1,
)
check("separable", sep, np.array([0.8, -0.4]), 6)

# separable 4-D
sep4 = SeparableHamiltonianModel(
    v_prime=MultiGp([make_gp(3, 2, seed=3), make_gp(3, 2, seed=4)]),
    t_prime=MultiGp([make_gp(3, 2, seed=5), make_gp(3, 2, seed=6)]),
    step_size=0.08,
)
check("separable4", sep4, np.array([0.2, -0.1, 0.5, 0.3]), 4)

# nonseparable midpoint
nonsep = NonSeparableHamiltonianModel(hamiltonian=make_gp(6, 2, seed=7), step_size=0.1)
sm = check("nonseparable", nonsep, np.array([0.3, -0.2]), 5)

# rigid body midpoint
rigid = ConstrainedRigidBodyModel(f1=make_gp(4, 3, sf2=0.1, seed=8), f2=make_gp(4, 3, sf2=0.1, seed=9), step_size=0.1)
check("rigid", rigid, np.array([0.45, 0.1, 0.88]), 5)

# generic explicit euler
gen = GenericEulerModel(field=MultiGp([make_gp(4, 2, seed=10), make_gp(4, 2, seed=11)]), step_size=0.1)
check("generic euler", gen, np.array([0.3, 0.4]), 6)

# generic heun
gen2 = GenericEulerModel(field=MultiGp([make_gp(4, 2, seed=12), make_gp(4, 2, seed=13)]), step_size=0.1, tableau=HEUN)
check("generic heun", gen2, np.array([0.3, 0.4]), 5)

# generic radau (implicit, 2 stages)
gen3 = GenericEulerModel(field=MultiGp([make_gp(4, 2, seed=14), make_gp(4, 2, seed=15)]), step_size=0.1, tableau=RADAU_IA)
check("generic radau", gen3, np.array([0.3, 0.4]), 4)

# IFT stage sensitivities vs FD (nonseparable midpoint)
from gpdyn.integrators import Stepper, solve_stages
model = nonsep
gps = model.gps()
layout = model_layout(model)
theta0 = get_params(model)
noises = [DrawNoise.sample(gp, S, rng) for gp in gps]


def assemble():
    return SampledModel(model, [SampledFunction(gp, nz) for gp, nz in zip(gps, noises)])


x0 = np.array([0.25, -0.15])
h = 0.1
sm = assemble()
stepper = Stepper(sm.tableau, h, sm.solver)
g0 = solve_stages(stepper, sm.field(), x0)
dg_dx, dg_dth = ift_stage_sensitivities(sm, x0, h, g0, layout)


def stages_of(theta, x):
    set_params(model, theta)
    smx = assemble()
    return solve_stages(Stepper(smx.tableau, h, smx.solver), smx.field(), x).ravel()


eps = 1e-6
fd_dx = np.zeros_like(dg_dx)
for i in range(x0.size):
    xp = x0.copy(); xp[i] += eps
    xm = x0.copy(); xm[i] -= eps
    fd_dx[:, i] = (stages_of(theta0, xp) - stages_of(theta0, xm)) / (2 * eps)
err = np.max(np.abs(dg_dx - fd_dx) / np.maximum(np.abs(fd_dx).max(), 1e-8))
print(f"ift dg/dx: max abs-scaled err {err:.3e}")

fd_dth = np.zeros_like(dg_dth)
for i in range(theta0.size):
    tp = theta0.copy(); tp[i] += eps
    tm = theta0.copy(); tm[i] -= eps
    fd_dth[:, i] = (stages_of(tp, x0) - stages_of(tm, x0)) / (2 * eps)
set_params(model, theta0)
err = np.max(np.abs(dg_dth - fd_dth)) / max(np.abs(fd_dth).max(), 1e-8)
print(f"ift dg/dtheta: max abs-scaled err {err:.3e}")
