"""Scratch: does structured pendulum training work on (nearly) clean data?"""
import numpy as np
from dataclasses import replace

from gpdyn.gradients import set_params
from gpdyn.models import mean_model, sample_model
from gpdyn.rng import stream
from gpdyn.sparse_gp import mean_function
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, train, select_model

SEED = 1234
spec = get_system("pendulum")
cfg = default_experiment("pendulum", "structured", seed=SEED)
cfg = replace(cfg, train=replace(cfg.train, epochs=60))
truth = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
tiny = np.array([1e-6, 1e-6])
noisy = add_noise(truth, tiny, stream(SEED, "data-noise"))
model = init_model(cfg, stream(SEED, "init"))
ds = make_windows(noisy, cfg.train.window_length)
res = train(model, ds, cfg.train, progress=lambda r: (r.epoch % 10 == 0) and print(
    f"ep {r.epoch:3d} loss {r.mean_window_loss:12.2f} sel {r.selection_error:10.4f}", flush=True))
best = select_model(res.checkpoints, cfg.train.selection)
print("best", best.epoch, best.selection_error)
set_params(model, best.params)
qs = np.linspace(-2.4, 2.4, 7)
vm = mean_function(model.v_prime.components[0])
tm = mean_function(model.t_prime.components[0])
print("V':", [round(float(vm.value(np.array([q]))), 2) for q in qs])
print("tr:", [round(6 * np.sin(q), 2) for q in qs])
ps = np.linspace(-4.5, 4.5, 7)
print("T':", [round(float(tm.value(np.array([p]))), 2) for p in ps])
print("tr:", [round(p, 2) for p in ps])
# 40-s sampled rollouts
truth_pred = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.predict_steps)
from gpdyn.evaluation import RolloutEnsemble, l2_error
rng = stream(SEED, "rollout-draws")
rolls = [sample_model(model, cfg.train.feature_count, rng).rollout(noisy.states[0], cfg.predict_steps) for _ in range(5)]
print("40s L2:", l2_error(RolloutEnsemble(rolls), truth_pred)[1])
