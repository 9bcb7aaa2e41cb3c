"""Scratch FD verification of hand-derived VJPs (not part of the package)."""
import numpy as np

from gpdyn.kernels import ArdKernelParams
from gpdyn.sparse_gp import DrawNoise, SampledFunction, SparseGp
from gpdyn.gradients import (
    GpCotangent, ParameterLayout, finalize_cotangent, vjp_value, vjp_gradient_x,
    kl_value_and_gradient,
)

rng = np.random.default_rng(0)
P, d, S = 5, 3, 16
kern = ArdKernelParams(0.7, np.array([0.9, 1.4, 2.2]))
gp = SparseGp(rng.normal(size=(P, d)), rng.normal(size=P) * 0.3,
              np.log(np.full(P, 0.04)), kern)
noise = DrawNoise.sample(gp, S, rng)
layout = ParameterLayout([gp])
theta0 = layout.flatten([gp])

x = rng.normal(size=d)
cvec = rng.normal(size=d)


def assemble(theta):
    layout.assign([gp], theta)
    return SampledFunction(gp, noise)


def loss_value(theta):
    return 3.7 * assemble(theta).value(x)


def loss_grad(theta):
    return float(assemble(theta).gradient(x) @ cvec)


def analytic(loss_kind):
    sf = assemble(theta0)
    cot = GpCotangent.zeros(sf)
    val, cache = sf.value_with_cache(x)
    if loss_kind == "value":
        vjp_value(sf, cache, cot, 3.7)
    else:
        vjp_gradient_x(sf, cache, cot, cvec)
    finalize_cotangent(sf, cot)
    return layout.flatten_cotangents([cot])


def fd(loss, theta, eps=1e-6):
    g = np.zeros_like(theta)
    for i in range(theta.size):
        tp = theta.copy(); tp[i] += eps
        tm = theta.copy(); tm[i] -= eps
        g[i] = (loss(tp) - loss(tm)) / (2 * eps)
    return g


for kind, loss in [("value", loss_value), ("grad", loss_grad)]:
    a = analytic(kind)
    n = fd(loss, theta0)
    err = np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8))
    print(f"{kind}: max rel err {err:.3e}")
    if err > 1e-5:
        bad = np.argsort(-np.abs(a - n))[:6]
        for i in bad:
            print(f"  i={i} analytic={a[i]: .8e} numeric={n[i]: .8e}")

# KL gradient
layout.assign([gp], theta0)
kl0, cot = kl_value_and_gradient(gp)
a = layout.flatten_cotangents([cot])


def kl_loss(theta):
    layout.assign([gp], theta)
    from gpdyn.sparse_gp import kl_to_prior
    return kl_to_prior(gp)


n = fd(kl_loss, theta0)
err = np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8))
print(f"kl: value {kl0:.6f} max rel err {err:.3e}")
