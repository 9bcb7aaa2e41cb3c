"""Scratch: best-achievable tracking of the separable pendulum model.

Directly minimises the whole-trajectory squared error to the clean
reference over the 10 s training horizon (mean propagation, true x0), then
reports the 40 s sampled L2. This is the model-class ceiling, independent
of the windowed ELBO protocol.
"""
import numpy as np

from gpdyn.evaluation import RolloutEnsemble, l2_error
from gpdyn.gradients import backward_from_records, forward_records, get_params, model_layout, set_params
from gpdyn.models import assemble_model, mean_model, sample_model
from gpdyn.rng import stream
from gpdyn.sparse_gp import DrawNoise
from gpdyn.systems import default_experiment, get_system, init_model, reference_trajectory

SEED = 1234
spec = get_system("pendulum")
cfg = default_experiment("pendulum", "structured", seed=SEED)
truth = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
model = init_model(cfg, stream(SEED, "init"))
layout = model_layout(model)
params = get_params(model)

m = np.zeros_like(params); v = np.zeros_like(params); t = 0
lr = 1e-2
n = cfg.train_steps
for it in range(400):
    sm = mean_model(model)
    traj, rec = forward_records(sm, cfg.x0, n)
    terms = 2.0 * (traj.states - truth.states)
    terms[0] = 0
    loss = float(np.sum((traj.states - truth.states) ** 2))
    rep = backward_from_records(sm, rec, terms, layout)
    g = rep.gradient
    t += 1
    m = 0.9 * m + 0.1 * g
    v = 0.999 * v + 0.001 * g * g
    params = params - lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
    set_params(model, params)
    if it % 50 == 0 or it == 399:
        print(f"it {it:4d} traj loss {loss:10.4f}", flush=True)

# evaluate
truth_pred = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.predict_steps)
mm = mean_model(model)
roll = mm.rollout(cfg.x0, cfg.predict_steps)
l2_mean = float(np.sqrt(np.mean(np.sum((roll.states - truth_pred.states) ** 2, axis=1))))
print("mean rollout 40s L2:", l2_mean)
rng = stream(SEED, "rollout-draws")
rolls = [sample_model(model, 10000, rng).rollout(cfg.x0, cfg.predict_steps) for _ in range(5)]
print("sampled 40s L2:", l2_error(RolloutEnsemble(rolls), truth_pred)[1])
