"""Scratch: fine-grained look at structured-pendulum rollout degradation."""
import numpy as np
from dataclasses import replace

from gpdyn.gradients import set_params
from gpdyn.models import mean_model, sample_model
from gpdyn.rng import stream
from gpdyn.sparse_gp import mean_function
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, train

SEED = 1234
spec = get_system("pendulum")
cfg = default_experiment("pendulum", "structured", seed=SEED)
cfg = replace(cfg, train=replace(cfg.train, epochs=60))
truth = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
noisy = add_noise(truth, cfg.noise_variances, stream(SEED, "data-noise"))
model = init_model(cfg, stream(SEED, "init"))
ds = make_windows(noisy, cfg.train.window_length)

res = train(model, ds, cfg.train)

qs = np.linspace(-2.4, 2.4, 7)
ps = np.linspace(-4.5, 4.5, 7)
for ep in (0, 10, 20, 30, 40, 50, 59):
    cp = res.checkpoints[ep]
    set_params(model, cp.params)
    mm = mean_model(model)
    try:
        roll = mm.rollout(noisy.states[0], 100)
        finite = np.all(np.isfinite(roll.states))
        dev = float(np.sqrt(np.mean(np.sum((roll.states - truth.states) ** 2, axis=1)))) if finite else np.nan
        pmax = np.abs(roll.states[:, 0]).max() if finite else np.nan
    except Exception as e:
        dev, pmax = np.nan, np.nan
    vg = model.v_prime.components[0]
    tg = model.t_prime.components[0]
    vm = mean_function(vg)
    tm = mean_function(tg)
    v_vals = [float(vm.value(np.array([q]))) for q in qs]
    t_vals = [float(tm.value(np.array([p]))) for p in ps]
    print(f"ep{ep:3d} e={cp.selection_error:10.2f} meanL2(10s)={dev:8.3f} |p|max={pmax:6.2f} "
          f"Vls2={np.exp(vg.log_ls2)[0]:.3f} Tls2={np.exp(tg.log_ls2)[0]:.3f} "
          f"Vsf2={np.exp(vg.log_sf2):.4f} Tsf2={np.exp(tg.log_sf2):.4f}")
    print("   V'(q): " + " ".join(f"{v:7.2f}" for v in v_vals) + "   truth: " + " ".join(f"{6*np.sin(q):7.2f}" for q in qs))
    print("   T'(p): " + " ".join(f"{v:7.2f}" for v in t_vals) + "   truth: " + " ".join(f"{p:7.2f}" for p in ps))
    print("   V xi:", np.sort(vg.xi.ravel()).round(2))
    print("   T xi:", np.sort(tg.xi.ravel()).round(2))
