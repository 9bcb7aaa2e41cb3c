"""Scratch: per-epoch true rollout quality vs the selection error."""
import numpy as np
from dataclasses import replace

from gpdyn.evaluation import RolloutEnsemble, l2_error
from gpdyn.gradients import set_params
from gpdyn.models import mean_model, sample_model
from gpdyn.rng import stream
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, train

SEED = 1234
spec = get_system("pendulum")
cfg = default_experiment("pendulum", "structured", seed=SEED)
truth = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
noisy = add_noise(truth, cfg.noise_variances, stream(SEED, "data-noise"))
model = init_model(cfg, stream(SEED, "init"))
ds = make_windows(noisy, cfg.train.window_length)
res = train(model, ds, cfg.train)

truth_pred = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.predict_steps)
rows = []
for cp in res.checkpoints:
    set_params(model, cp.params)
    mm = mean_model(model)
    try:
        roll = mm.rollout(noisy.states[0], cfg.predict_steps)
        ok = np.all(np.isfinite(roll.states))
        l2m = float(np.sqrt(np.mean(np.sum((roll.states - truth_pred.states) ** 2, axis=1)))) if ok else np.inf
    except Exception:
        l2m = np.inf
    rows.append((cp.epoch, cp.selection_error, l2m))

rows.sort(key=lambda r: r[2])
print("top 12 epochs by TRUE mean-rollout 40s L2:")
for ep, e, l2m in rows[:12]:
    print(f"  ep {ep:3d} e {e:10.2f} L2mean {l2m:8.3f}")
print("\nselected-by-e epoch:", min(rows, key=lambda r: r[1])[:3])

# sampled L2 for the best few by true quality
for ep, e, l2m in rows[:3]:
    cp = res.checkpoints[ep]
    set_params(model, cp.params)
    rng = stream(SEED, "rollout-draws")
    rolls = [sample_model(model, 10000, rng).rollout(noisy.states[0], cfg.predict_steps) for _ in range(5)]
    print(f"ep {ep}: sampled 40s L2 = {l2_error(RolloutEnsemble(rolls), truth_pred)[1]:.3f}")
np.save("scratch_sweep_rows.npy", np.array(rows))
