"""Scratch: does averaging the window loss over several draws stabilize training?"""
import sys
import numpy as np
from dataclasses import replace

import gpdyn.training as T
from gpdyn.gradients import set_params
from gpdyn.models import mean_model, sample_model
from gpdyn.rng import stream
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, train, select_model
from gpdyn.evaluation import RolloutEnsemble, l2_error

SEED = int(sys.argv[3]) if len(sys.argv) > 3 else 1234
MODE = sys.argv[1] if len(sys.argv) > 1 else "mean"  # mean | multiN
EPOCHS = int(sys.argv[2]) if len(sys.argv) > 2 else 60

spec = get_system("pendulum")
cfg = default_experiment("pendulum", "structured", seed=SEED)
tr = replace(cfg.train, epochs=EPOCHS)
if MODE.startswith("multi"):
    tr = replace(tr, draws_per_batch=int(MODE[5:]))
cfg = replace(cfg, train=tr)
truth = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
noisy = add_noise(truth, cfg.noise_variances, stream(SEED, "data-noise"))
model = init_model(cfg, stream(SEED, "init"))
ds = make_windows(noisy, cfg.train.window_length)

if MODE == "mean":
    orig = T.assemble_model
    T.assemble_model = lambda model_arg, noises: mean_model(model_arg)

res = train(model, ds, cfg.train, progress=lambda r: (r.epoch % 10 == 0) and print(
    f"ep {r.epoch:3d} loss {r.mean_window_loss:10.2f} sel {r.selection_error:10.2f}", flush=True))
if MODE == "mean":
    T.assemble_model = orig

best = select_model(res.checkpoints, cfg.train.selection)
print("best epoch", best.epoch, "e", best.selection_error)
set_params(model, best.params)
truth_pred = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.predict_steps)
rng = stream(SEED, "rollout-draws")
rolls = [sample_model(model, 10000, rng).rollout(noisy.states[0], cfg.predict_steps) for _ in range(5)]
print(f"{MODE} seed={SEED} epochs={EPOCHS}: 40s sampled L2:", l2_error(RolloutEnsemble(rolls), truth_pred)[1], flush=True)
