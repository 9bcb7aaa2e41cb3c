"""Scratch: pendulum training with kernel hyperparameters fully frozen."""
import sys
import numpy as np
from dataclasses import replace

import gpdyn.training as T
from gpdyn.gradients import set_params, model_layout
from gpdyn.models import sample_model
from gpdyn.rng import stream
from gpdyn.sparse_gp import mean_function
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, train, select_model
from gpdyn.evaluation import RolloutEnsemble, l2_error

SEED = int(sys.argv[2]) if len(sys.argv) > 2 else 1234
EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 60
FREEZE = ("xi",) if len(sys.argv) > 3 and sys.argv[3] == "xi" else ("log_sf2", "log_ls2")

spec = get_system("pendulum")
cfg = default_experiment("pendulum", "structured", seed=SEED)
cfg = replace(cfg, train=replace(cfg.train, epochs=EPOCHS))
truth = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
noisy = add_noise(truth, cfg.noise_variances, stream(SEED, "data-noise"))
model = init_model(cfg, stream(SEED, "init"))
ds = make_windows(noisy, cfg.train.window_length)
layout = model_layout(model)

orig_bfr = T.backward_from_records
orig_kl = T.kl_value_and_gradient

def mask(vec):
    for sl in layout.slices:
        for name in FREEZE:
            s = getattr(sl, name)
            if isinstance(s, slice):
                vec[s] = 0.0
            else:
                vec[s] = 0.0
    return vec

def bfr(sm, records, terms, lay=None, collect=False):
    rep = orig_bfr(sm, records, terms, lay)
    mask(rep.gradient)
    return rep

def klg(gp):
    value, cot = orig_kl(gp)
    for name in FREEZE:
        arr = getattr(cot, name)
        if name == "log_sf2":
            cot.log_sf2 = 0.0
        else:
            getattr(cot, name)[...] = 0.0
    return value, cot

T.backward_from_records = bfr
T.kl_value_and_gradient = klg
try:
    res = train(model, ds, cfg.train, progress=lambda r: (r.epoch % 10 == 0) and print(
        f"ep {r.epoch:3d} loss {r.mean_window_loss:10.2f} sel {r.selection_error:10.2f}", flush=True))
finally:
    T.backward_from_records = orig_bfr
    T.kl_value_and_gradient = orig_kl

best = select_model(res.checkpoints, cfg.train.selection)
print("best epoch", best.epoch, "e", best.selection_error)
set_params(model, best.params)
vg = model.v_prime.components[0]
print("V ls2", np.exp(vg.log_ls2), "V sf2", np.exp(vg.log_sf2), "V xi", np.sort(vg.xi.ravel()).round(2))
truth_pred = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.predict_steps)
rng = stream(SEED, "rollout-draws")
rolls = [sample_model(model, 10000, rng).rollout(noisy.states[0], cfg.predict_steps) for _ in range(5)]
print(f"freeze={FREEZE} seed={SEED} ep={EPOCHS}: 40s sampled L2:", l2_error(RolloutEnsemble(rolls), truth_pred)[1])
