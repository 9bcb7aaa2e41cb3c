"""Scratch: ablations for structured pendulum instability."""
import sys
from dataclasses import replace

import numpy as np

from gpdyn.gradients import set_params, get_params, model_layout
from gpdyn.rng import stream
from gpdyn.sparse_gp import mean_function
from gpdyn.systems import add_noise, default_experiment, get_system, init_model, reference_trajectory
from gpdyn.training import make_windows, train, select_model

SEED = 1234
spec = get_system("pendulum")
cfg0 = default_experiment("pendulum", "structured", seed=SEED)
truth = reference_trajectory(spec, cfg0.x0, cfg0.dt, cfg0.train_steps)
noisy = add_noise(truth, cfg0.noise_variances, stream(SEED, "data-noise"))


def run(tag, epochs=50, lr=None, freeze_kernel=False, seed=SEED):
    cfg = default_experiment("pendulum", "structured", seed=seed)
    tr = replace(cfg.train, epochs=epochs)
    if lr is not None:
        tr = replace(tr, lr_schedule=((0, lr),))
    cfg = replace(cfg, train=tr)
    model = init_model(cfg, stream(seed, "init"))
    ds = make_windows(noisy, cfg.train.window_length)

    if freeze_kernel:
        # monkey-patch: zero kernel-hyper gradients inside training by wrapping
        import gpdyn.training as T
        layout = model_layout(model)
        orig = T.backward_from_records

        def wrapped(sm, records, terms, layout_arg=None, collect=False):
            rep = orig(sm, records, terms, layout_arg)
            for sl in layout.slices:
                rep.gradient[sl.log_sf2] = 0.0
                rep.gradient[sl.log_ls2] = 0.0
            return rep

        T.backward_from_records = wrapped
        try:
            res = train(model, ds, cfg.train)
        finally:
            T.backward_from_records = orig
    else:
        res = train(model, ds, cfg.train)

    best = select_model(res.checkpoints, cfg.train.selection)
    sels = [r.selection_error for r in res.history]
    set_params(model, best.params)
    qs = np.linspace(-2.4, 2.4, 9)
    ps = np.linspace(-4.5, 4.5, 9)
    vm = mean_function(model.v_prime.components[0])
    tm = mean_function(model.t_prime.components[0])
    v_err = max(abs(vm.value(np.array([q])) - 6 * np.sin(q)) for q in qs)
    t_err = max(abs(tm.value(np.array([p])) - p) for p in ps)
    v_ls = float(np.exp(model.v_prime.components[0].log_ls2)[0])
    print(
        f"{tag:28s} best_ep {best.epoch:3d} e {best.selection_error:9.2f} "
        f"final_e {sels[-1]:10.2f} min_e {min(sels):9.2f} Verr {v_err:5.2f} Terr {t_err:5.2f} Vls2 {v_ls:.3f}",
        flush=True,
    )


which = sys.argv[1] if len(sys.argv) > 1 else "all"
if which in ("all", "a"):
    run("A baseline lr1e-2")
if which in ("all", "b"):
    run("B lr 1e-3", lr=1e-3)
if which in ("all", "f"):
    run("F freeze kernel hypers", freeze_kernel=True)
if which in ("all", "s"):
    run("S2 seed 77", seed=77)
    run("S3 seed 2024", seed=2024)
