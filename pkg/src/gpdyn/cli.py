"""Command-line surface: generate -> train -> rollout -> eval.

Run configurations are strict JSON documents (unknown keys rejected);
checkpoints are JSON with inline parameter arrays so they diff cleanly and
round-trip exactly. Exit codes: 0 success, 2 usage or configuration error,
3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .evaluation import (
    EnergyStats,
    RolloutEnsemble,
    determinant_series,
    energy_stats,
    l2_error,
    uncertainty_stats,
)
from .gradients import get_params, set_params
from .integrators import (
    NonConvergenceError,
    StepSizeUnderflowError,
    integrate_to_grid,
)
from .models import ConstraintSingularityError, sample_model
from .rng import stream
from .systems import (
    METHODS,
    SYSTEM_NAMES,
    default_experiment,
    get_system,
    init_model,
    add_noise,
    reference_trajectory,
)
from .trajectory import Trajectory
from .training import TrainingAbort, make_windows, select_model, train

SCHEMA_VERSION = 1
_FMT = "{:.17g}"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

_NUMERICAL_ERRORS = (
    TrainingAbort,
    NonConvergenceError,
    StepSizeUnderflowError,
    ConstraintSingularityError,
    FloatingPointError,
)

_OVERRIDE_KEYS = ("epochs", "feature_count", "batch_size", "window_length", "train_horizon")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    system: str
    method: str
    seed: int
    data_dir: Path
    out_dir: Path
    overrides: dict

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        required = {"schema_version", "system", "method", "seed", "data_dir", "out_dir"}
        allowed = required | {"overrides"}
        unknown = set(doc) - allowed
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        missing = required - set(doc)
        if missing:
            raise ConfigError(f"{path}: missing keys {sorted(missing)}")
        if doc["schema_version"] != SCHEMA_VERSION:
            raise ConfigError(f"{path}: unsupported schema_version {doc['schema_version']}")
        if doc["system"] not in SYSTEM_NAMES:
            raise ConfigError(f"{path}: unknown system {doc['system']!r}")
        if doc["method"] not in METHODS:
            raise ConfigError(f"{path}: unknown method {doc['method']!r}")
        overrides = doc.get("overrides", {})
        bad = set(overrides) - set(_OVERRIDE_KEYS)
        if bad:
            raise ConfigError(f"{path}: unknown override keys {sorted(bad)}")
        base = path.parent
        return cls(
            system=doc["system"],
            method=doc["method"],
            seed=int(doc["seed"]),
            data_dir=(base / doc["data_dir"]).resolve(),
            out_dir=(base / doc["out_dir"]).resolve(),
            overrides=dict(overrides),
        )


def build_experiment(system: str, method: str, seed: int, overrides: dict):
    """Default experiment configuration with run-config overrides applied."""
    from dataclasses import replace

    config = default_experiment(system, method, seed=seed)
    kwargs = {
        key: int(overrides[key])
        for key in ("epochs", "feature_count", "batch_size", "window_length")
        if key in overrides
    }
    if kwargs:
        config = replace(config, train=replace(config.train, **kwargs))
    if "train_horizon" in overrides:
        config = replace(config, train_horizon=float(overrides["train_horizon"]))
    return config


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _read_json(path: Path) -> dict:
    if not path.exists():
        raise ConfigError(f"file not found: {path}")
    return json.loads(path.read_text())


# ---------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    seed = args.seed
    system = args.system
    out = None
    overrides = {}
    if args.config:
        cfg = RunConfig.load(args.config)
        system = system or cfg.system
        seed = seed if seed is not None else cfg.seed
        out = cfg.data_dir
        overrides = cfg.overrides
    if args.out:
        out = Path(args.out)
    if system is None or out is None:
        raise ConfigError("generate needs --system and --out (or --config)")
    seed = 0 if seed is None else seed
    spec = get_system(system)
    config = build_experiment(system, "structured", seed, overrides)
    n_steps = args.steps if args.steps is not None else config.train_steps
    truth = reference_trajectory(spec, config.x0, config.dt, n_steps)
    variances = np.zeros(spec.state_dim) if args.zero_noise else config.noise_variances
    noisy = add_noise(truth, variances, stream(seed, "data-noise"))
    out.mkdir(parents=True, exist_ok=True)
    truth.to_csv(out / "truth.csv")
    noisy.to_csv(out / "noisy.csv")
    _write_json(
        out / "manifest.json",
        {
            "schema_version": SCHEMA_VERSION,
            "system": system,
            "seed": seed,
            "dt": config.dt,
            "n_steps": n_steps,
            "noise_variances": list(variances),
            "x0": list(config.x0),
            "zero_noise": bool(args.zero_noise),
        },
    )
    print(f"wrote {n_steps + 1} rows to {out/'truth.csv'} and {out/'noisy.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _checkpoint_payload(run: RunConfig, config, cp, x0, noise_variances) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "system": run.system,
        "method": run.method,
        "seed": run.seed,
        "overrides": run.overrides,
        "epoch": cp.epoch,
        "lr": cp.lr,
        "selection_error": cp.selection_error,
        "params": [float(v) for v in cp.params],
        "feature_count": config.train.feature_count,
        "step_size": config.dt,
        "initial_state": [float(v) for v in x0],
        "noise_variances": [float(v) for v in noise_variances],
    }


def _write_history(path: Path, history) -> None:
    lines = ["epoch,lr,mean_window_loss,kl,selection_error,skipped_windows"]
    for row in history:
        lines.append(
            ",".join(
                [
                    str(row.epoch),
                    _FMT.format(row.lr),
                    _FMT.format(row.mean_window_loss),
                    _FMT.format(row.kl),
                    _FMT.format(row.selection_error),
                    str(row.skipped_windows),
                ]
            )
        )
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")


def load_model_from_checkpoint(payload: dict):
    """Rebuild the model skeleton of a checkpoint and load its parameters."""
    config = build_experiment(
        payload["system"], payload["method"], payload["seed"], payload.get("overrides", {})
    )
    model = init_model(config, stream(payload["seed"], "init"))
    set_params(model, np.asarray(payload["params"], dtype=float))
    return model, config


def cmd_train(args) -> int:
    run = RunConfig.load(args.config)
    config = build_experiment(run.system, run.method, run.seed, run.overrides)
    manifest = _read_json(run.data_dir / "manifest.json")
    if manifest["system"] != run.system:
        raise ConfigError(
            f"data in {run.data_dir} is for system {manifest['system']!r}, not {run.system!r}"
        )
    noisy = Trajectory.from_csv(run.data_dir / "noisy.csv")
    noisy.noise_variances = np.asarray(manifest["noise_variances"], dtype=float)
    if np.any(noisy.noise_variances <= 0):
        raise ConfigError("training data was generated without noise; nothing to fit")
    train_points = config.train_steps + 1
    if noisy.n_points < train_points:
        raise ConfigError(
            f"training needs {train_points} points, data has {noisy.n_points}"
        )
    data = Trajectory(
        times=noisy.times[:train_points],
        states=noisy.states[:train_points],
        noise_variances=noisy.noise_variances,
    )
    dataset = make_windows(data, config.train.window_length)
    model = init_model(config, stream(run.seed, "init"))
    start_epoch = 0
    ckpt_dir = run.out_dir / "checkpoints"
    if args.resume:
        existing = sorted(ckpt_dir.glob("epoch_*.json"))
        if existing:
            payload = _read_json(existing[-1])
            set_params(model, np.asarray(payload["params"], dtype=float))
            start_epoch = payload["epoch"] + 1
            print(f"resuming from epoch {payload['epoch']}")

    def progress(row):
        print(
            f"epoch {row.epoch:4d} lr {row.lr:.1e} loss {row.mean_window_loss:.6g} "
            f"sel {row.selection_error:.6g} skipped {row.skipped_windows}",
            flush=True,
        )

    aborted = None
    try:
        result = train(model, dataset, config.train, progress=progress, start_epoch=start_epoch)
        checkpoints, history = result.checkpoints, result.history
    except TrainingAbort as err:
        aborted = err
        checkpoints, history = err.checkpoints, err.history
    x0 = data.states[0]
    for cp in checkpoints:
        _write_json(
            ckpt_dir / f"epoch_{cp.epoch:04d}.json",
            _checkpoint_payload(run, config, cp, x0, data.noise_variances),
        )
    _write_history(run.out_dir / "history.csv", history)
    if aborted is not None:
        print(f"training aborted: {aborted}", file=sys.stderr)
        return EXIT_NUMERICAL
    if checkpoints or start_epoch > 0:
        all_ckpts = []
        for path in sorted(ckpt_dir.glob("epoch_*.json")):
            payload = _read_json(path)
            from .training import Checkpoint

            all_ckpts.append(
                Checkpoint(
                    epoch=payload["epoch"],
                    params=np.asarray(payload["params"], dtype=float),
                    selection_error=payload["selection_error"],
                    lr=payload["lr"],
                )
            )
        best = select_model(all_ckpts, config.train.selection)
        payload = _read_json(ckpt_dir / f"epoch_{best.epoch:04d}.json")
        payload["selected_epoch"] = best.epoch
        payload["selection_rule"] = config.train.selection.rule
        _write_json(run.out_dir / "selected.json", payload)
        print(
            f"selected epoch {best.epoch} (selection error {best.selection_error:.6g}) "
            f"-> {run.out_dir/'selected.json'}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# rollout


def cmd_rollout(args) -> int:
    payload = _read_json(Path(args.checkpoint))
    model, config = load_model_from_checkpoint(payload)
    if args.step_size is not None:
        model.step_size = float(args.step_size)
    seed = args.seed if args.seed is not None else payload["seed"]
    x0 = np.asarray(payload["initial_state"], dtype=float)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = stream(seed, "rollout-draws")
    grid = model.step_size * np.arange(args.steps + 1)
    written = []
    failure = None
    for i in range(args.samples):
        sm = sample_model(model, payload["feature_count"], rng)
        try:
            if args.adaptive:
                if sm.tableau is None:
                    raise ConfigError("adaptive rollouts need a tableau-based model")
                traj = integrate_to_grid(
                    sm.tableau, sm.field(), x0, grid, rtol=args.rtol, atol=args.atol,
                    solver=sm.solver,
                )
            else:
                traj = sm.rollout(x0, args.steps)
        except _NUMERICAL_ERRORS as err:
            failure = f"rollout {i}: {err}"
            break
        path = out / f"rollout_{i:02d}.csv"
        traj.to_csv(path)
        written.append(path.name)
    _write_json(
        out / "ensemble.json",
        {
            "schema_version": SCHEMA_VERSION,
            "system": payload["system"],
            "checkpoint": str(Path(args.checkpoint).resolve()),
            "seed": seed,
            "n_steps": args.steps,
            "step_size": model.step_size,
            "adaptive": bool(args.adaptive),
            "rtol": args.rtol,
            "atol": args.atol,
            "rollouts": written,
            "failure": failure,
        },
    )
    if failure is not None:
        print(f"partial ensemble ({len(written)}/{args.samples}): {failure}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(f"wrote {len(written)} rollouts to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _write_series_csv(path: Path, times: np.ndarray, columns: dict[str, np.ndarray]) -> None:
    names = list(columns)
    lines = [",".join(["t"] + names)]
    for k in range(times.shape[0]):
        cells = [_FMT.format(times[k])] + [_FMT.format(columns[n][k]) for n in names]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def cmd_eval(args) -> int:
    ens_dir = Path(args.ensemble)
    manifest = _read_json(ens_dir / "ensemble.json")
    rollouts = [Trajectory.from_csv(ens_dir / name) for name in manifest["rollouts"]]
    if not rollouts:
        raise ConfigError(f"{ens_dir}: ensemble has no rollouts")
    ensemble = RolloutEnsemble(rollouts)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    known = {"l2", "det", "energy", "uncertainty"}
    bad = set(metrics) - known
    if bad:
        raise ConfigError(f"unknown metrics {sorted(bad)}; choose from {sorted(known)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scalars: dict[str, float] = {}
    times = ensemble.times
    if "l2" in metrics or args.truth:
        if not args.truth:
            raise ConfigError("--truth is required for the l2 metric")
        truth = Trajectory.from_csv(Path(args.truth))
    if "l2" in metrics:
        series, total = l2_error(ensemble, truth)
        scalars["l2_total"] = total
        _write_series_csv(out / "l2_series.csv", times, {"l2": series})
    if "uncertainty" in metrics:
        mean, std = uncertainty_stats(ensemble)
        cols = {f"mean_x{i}": mean[:, i] for i in range(mean.shape[1])}
        cols.update({f"std_x{i}": std[:, i] for i in range(std.shape[1])})
        _write_series_csv(out / "uncertainty.csv", times, cols)
        scalars["uncertainty_mean_std"] = float(np.mean(std))
    if "energy" in metrics:
        spec = get_system(manifest["system"])
        if not args.truth:
            raise ConfigError("--truth is required for the energy metric")
        true_energy = float(spec.energy(truth.states[0]))
        stats = energy_stats(ensemble, spec.energy, true_energy)
        scalars["energy_true"] = true_energy
        scalars["energy_average"] = stats.average
        scalars["energy_error"] = stats.error
        scalars["energy_std"] = stats.std
        _write_series_csv(out / "energy_series.csv", times, {"energy": stats.series})
    if "det" in metrics:
        ckpt_path = args.checkpoint or manifest["checkpoint"]
        payload = _read_json(Path(ckpt_path))
        model, _ = load_model_from_checkpoint(payload)
        if manifest.get("step_size"):
            model.step_size = float(manifest["step_size"])
        sm = sample_model(model, payload["feature_count"], stream(manifest["seed"], "det-draw"))
        series = determinant_series(sm, rollouts[0])
        scalars["det_max_abs_dev"] = float(np.max(np.abs(series - 1.0)))
        _write_series_csv(out / "det_series.csv", times, {"det": series})
    _write_json(out / "metrics.json", {"schema_version": SCHEMA_VERSION, "scalars": scalars})
    for name, value in sorted(scalars.items()):
        print(f"{name} = {value:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gpdyn",
        description="GP dynamics with structure-preserving integrators",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write ground-truth and noisy training data")
    g.add_argument("--system", choices=SYSTEM_NAMES)
    g.add_argument("--config", help="run config supplying system/seed/data_dir")
    g.add_argument("--out", help="output directory")
    g.add_argument("--seed", type=int)
    g.add_argument("--steps", type=int, help="override the number of grid steps")
    g.add_argument("--zero-noise", action="store_true")
    g.set_defaults(fn=cmd_generate)

    t = sub.add_parser("train", help="train a model per a run config")
    t.add_argument("--config", required=True)
    t.add_argument("--resume", action="store_true")
    t.set_defaults(fn=cmd_train)

    r = sub.add_parser("rollout", help="sample rollouts from a checkpoint")
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--steps", type=int, required=True)
    r.add_argument("--samples", type=int, default=5)
    r.add_argument("--step-size", type=float, dest="step_size")
    r.add_argument("--adaptive", action="store_true")
    r.add_argument("--rtol", type=float, default=1e-6)
    r.add_argument("--atol", type=float, default=1e-8)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", required=True)
    r.set_defaults(fn=cmd_rollout)

    e = sub.add_parser("eval", help="compute metrics over a rollout ensemble")
    e.add_argument("--ensemble", required=True)
    e.add_argument("--truth")
    e.add_argument("--metrics", default="l2")
    e.add_argument("--checkpoint", help="checkpoint for the det metric")
    e.add_argument("--out", required=True)
    e.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
