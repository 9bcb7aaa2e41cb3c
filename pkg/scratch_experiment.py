"""Scratch: run one benchmark experiment end to end and print acceptance metrics."""
import json
import sys
import time

import numpy as np

from gpdyn.evaluation import RolloutEnsemble, determinant_series, energy_stats, l2_error
from gpdyn.gradients import set_params
from gpdyn.models import sample_model
from gpdyn.rng import stream
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, select_model, train

system = sys.argv[1]
method = sys.argv[2] if len(sys.argv) > 2 else "structured"
SEED = int(sys.argv[3]) if len(sys.argv) > 3 else 1234

t0 = time.time()
spec = get_system(system)
cfg = default_experiment(system, method, seed=SEED)
truth_train = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
noisy = add_noise(truth_train, cfg.noise_variances, stream(SEED, "data-noise"))
model = init_model(cfg, stream(SEED, "init"))
ds = make_windows(noisy, cfg.train.window_length)
res = train(model, ds, cfg.train, progress=lambda r: print(
    f"  ep {r.epoch:3d} lr {r.lr:.0e} loss {r.mean_window_loss:12.4f} sel {r.selection_error:12.4f} skip {r.skipped_windows}", flush=True))
best = select_model(res.checkpoints, cfg.train.selection)
set_params(model, best.params)
print(f"[{system}/{method}] best epoch {best.epoch} e={best.selection_error:.4f} ({(time.time()-t0)/60:.1f} min)", flush=True)

n_pred = cfg.predict_steps
truth_pred = reference_trajectory(spec, cfg.x0, cfg.dt, n_pred)
rng = stream(SEED, "rollout-draws")
rolls = [sample_model(model, cfg.train.feature_count, rng).rollout(noisy.states[0], n_pred) for _ in range(5)]
ens = RolloutEnsemble(rolls)
series, total = l2_error(ens, truth_pred)
out = {"system": system, "method": method, "seed": SEED, "best_epoch": best.epoch,
       "sel_e": best.selection_error, "l2_total": total}

sm = sample_model(model, cfg.train.feature_count, stream(SEED, "det-draw"))
det = determinant_series(sm, rolls[0])
out["det_max_dev"] = float(np.max(np.abs(det - 1.0)))

e_true = float(spec.energy(cfg.x0))
stats = energy_stats(ens, spec.energy, e_true)
out["energy_error"] = stats.error
out["energy_std"] = stats.std

if system == "rigid_body":
    drift = [float(np.max(np.abs(np.sum(r.states**2, axis=1) - 1.0))) for r in rolls]
    out["invariant_drift_max"] = max(drift)

out["minutes"] = (time.time() - t0) / 60
print(json.dumps(out, indent=2), flush=True)
with open(f"scratch_exp_{system}_{method}_{SEED}.json", "w") as f:
    json.dump(out, f, indent=2)
