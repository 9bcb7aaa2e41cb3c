"""Scratch: full pendulum reproduction (structured + euler), acceptance metrics."""
import json
import sys
import time

import numpy as np

from gpdyn.evaluation import RolloutEnsemble, determinant_series, l2_error
from gpdyn.gradients import set_params
from gpdyn.models import sample_model
from gpdyn.rng import stream
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, select_model, train

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 1234

spec = get_system("pendulum")
results = {}
for method in ("structured", "euler"):
    t0 = time.time()
    cfg = default_experiment("pendulum", method, seed=SEED)
    truth_train = reference_trajectory(spec, cfg.x0, cfg.dt, cfg.train_steps)
    noisy = add_noise(truth_train, cfg.noise_variances, stream(SEED, "data-noise"))
    model = init_model(cfg, stream(SEED, "init"))
    ds = make_windows(noisy, cfg.train.window_length)
    res = train(model, ds, cfg.train)
    best = select_model(res.checkpoints, cfg.train.selection)
    set_params(model, best.params)
    print(f"[{method}] trained in {(time.time()-t0)/60:.1f} min; best epoch {best.epoch} e={best.selection_error:.2f}", flush=True)

    # prediction: 40 s horizon from the noisy first point
    n_pred = cfg.predict_steps
    truth_pred = reference_trajectory(spec, cfg.x0, cfg.dt, n_pred)
    rng = stream(SEED, "rollout-draws")
    rollouts = []
    for i in range(5):
        sm = sample_model(model, cfg.train.feature_count, rng)
        rollouts.append(sm.rollout(noisy.states[0], n_pred))
    ens = RolloutEnsemble(rollouts)
    series, total = l2_error(ens, truth_pred)
    sm = sample_model(model, cfg.train.feature_count, stream(SEED, "det-draw"))
    det = determinant_series(sm, rollouts[0])
    results[method] = {
        "best_epoch": best.epoch,
        "sel_error": best.selection_error,
        "l2_total": total,
        "det_max_dev": float(np.max(np.abs(det - 1.0))),
        "minutes": (time.time() - t0) / 60,
    }
    print(f"[{method}] L2={total:.4f} max|det-1|={results[method]['det_max_dev']:.3e}", flush=True)

print(json.dumps(results, indent=2))
with open(f"scratch_pendulum_{SEED}.json", "w") as f:
    json.dump(results, f, indent=2)
