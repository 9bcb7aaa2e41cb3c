"""Scratch: diagnose structured pendulum training dynamics."""
import sys
import numpy as np

from gpdyn.gradients import set_params
from gpdyn.models import sample_model, mean_model
from gpdyn.rng import stream
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, train, select_model
from gpdyn.sparse_gp import mean_function

SEED = 1234
EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 149

spec = get_system("pendulum")
cfg = default_experiment("pendulum", "structured", seed=SEED)
from dataclasses import replace
cfg = replace(cfg, train=replace(cfg.train, epochs=EPOCHS))
truth_train = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
noisy = add_noise(truth_train, cfg.noise_variances, stream(SEED, "data-noise"))
model = init_model(cfg, stream(SEED, "init"))
ds = make_windows(noisy, cfg.train.window_length)

rows = []
res = train(model, ds, cfg.train, progress=lambda r: rows.append(r))
for r in rows:
    if r.epoch % 10 == 0 or r.epoch == EPOCHS - 1:
        print(f"ep {r.epoch:4d} loss {r.mean_window_loss:10.2f} sel {r.selection_error:12.2f} kl {r.kl:10.1f}")

best = select_model(res.checkpoints, cfg.train.selection)
print("best epoch", best.epoch, "e", best.selection_error)

# learned functions at best vs final
qs = np.linspace(-2.6, 2.6, 13)
ps = np.linspace(-4.6, 4.6, 13)
for label, params in (("best", best.params), ("final", res.checkpoints[-1].params)):
    set_params(model, params)
    v_mean = mean_function(model.v_prime.components[0])
    t_mean = mean_function(model.t_prime.components[0])
    v_err = max(abs(v_mean.value(np.array([q])) - 6*np.sin(q)) for q in qs)
    t_err = max(abs(t_mean.value(np.array([p])) - p) for p in ps)
    print(f"{label}: max|V'-6sin| {v_err:.3f}  max|T'-p| {t_err:.3f}")
    gp = model.v_prime.components[0]
    print(f"  V' gp: sf2 {np.exp(gp.log_sf2):.4f} ls2 {np.exp(gp.log_ls2)} var range {np.exp(gp.log_var).min():.2e}..{np.exp(gp.log_var).max():.2e}")
    gp = model.t_prime.components[0]
    print(f"  T' gp: sf2 {np.exp(gp.log_sf2):.4f} ls2 {np.exp(gp.log_ls2)}")
