"""Time-indexed state trajectories and their on-disk CSV form."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

# 17 significant digits round-trip IEEE doubles exactly.
_FLOAT_FMT = "{:.17g}"


@dataclass
class Trajectory:
    """A grid of time points with one state row per point.

    ``noise_variances`` records the per-dimension observation noise that was
    applied to the states (None for noise-free trajectories).
    """

    times: np.ndarray
    states: np.ndarray
    noise_variances: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.times.ndim != 1:
            raise ValueError("times must be 1-D and states 2-D")
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError(
                f"{self.times.shape[0]} time points but {self.states.shape[0]} state rows"
            )
        if self.times.shape[0] > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("times must be strictly increasing")
        if self.noise_variances is not None:
            self.noise_variances = np.asarray(self.noise_variances, dtype=float)
            if self.noise_variances.shape != (self.states.shape[1],):
                raise ValueError("noise_variances must have one entry per state dimension")

    @property
    def n_points(self) -> int:
        return self.times.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def to_csv(self, path: str | Path) -> None:
        """Write `t,x0,...,x{d-1}` rows with full double precision."""
        path = Path(path)
        header = ",".join(["t"] + [f"x{i}" for i in range(self.dim)])
        lines = [header]
        for t, row in zip(self.times, self.states):
            cells = [_FLOAT_FMT.format(t)] + [_FLOAT_FMT.format(v) for v in row]
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "Trajectory":
        path = Path(path)
        lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("t,"):
            raise ValueError(f"{path}: not a trajectory CSV (missing 't,x0,...' header)")
        rows = [[float(c) for c in ln.split(",")] for ln in lines[1:]]
        data = np.asarray(rows, dtype=float)
        return cls(times=data[:, 0], states=data[:, 1:])
