"""
Trajectory container and CSV codec

A Trajectory is a uniformly sampled multichannel time series. Rows are time
steps on the grid t_i = t0 + i·dt, columns are channels.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from rc_denoise.exceptions import InvalidArgumentError

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Trajectory:
    t0: float
    dt: float
    values: np.ndarray
    channel_names: Tuple[str, ...]
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2:
            raise InvalidArgumentError("trajectory values must be a 2-D matrix")
        names = tuple(self.channel_names)
        if values.shape[1] != len(names):
            raise InvalidArgumentError(
                f"{values.shape[1]} columns but {len(names)} channel names"
            )
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgumentError("trajectory contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "channel_names", names)
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "dt", float(self.dt))

    @property
    def n_steps(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps)

    def channel(self, name: str) -> np.ndarray:
        return self.values[:, self._index(name)]

    def select(self, names: Sequence[str]) -> "Trajectory":
        """Keep only the named channels, in the given order"""
        columns = [self._index(name) for name in names]
        return Trajectory(self.t0, self.dt, self.values[:, columns], tuple(names), dict(self.metadata))

    def slice(self, start: int, stop: Optional[int] = None) -> "Trajectory":
        """Rows [start, stop) with t0 shifted accordingly"""
        rows = self.values[start:stop]
        if rows.shape[0] == 0:
            raise InvalidArgumentError(f"empty slice [{start}, {stop})")
        first = range(self.n_steps)[start]
        return Trajectory(self.t0 + first * self.dt, self.dt, rows, self.channel_names)

    def split_at(self, t_split: float) -> Tuple["Trajectory", "Trajectory"]:
        """Split into rows with t < t_split and rows with t >= t_split"""
        index = int(math.ceil((t_split - self.t0) / self.dt - 1e-9))
        if not 0 < index < self.n_steps:
            raise InvalidArgumentError(f"split time {t_split} outside the trajectory")
        return self.slice(0, index), self.slice(index)

    def with_values(self, values: np.ndarray, channel_names: Optional[Sequence[str]] = None) -> "Trajectory":
        """Same time grid, new values"""
        names = tuple(channel_names) if channel_names is not None else self.channel_names
        return Trajectory(self.t0, self.dt, values, names)

    def _index(self, name: str) -> int:
        try:
            return self.channel_names.index(name)
        except ValueError:
            raise InvalidArgumentError(
                f"unknown channel '{name}' (have {', '.join(self.channel_names)})"
            ) from None


# MARK: - CSV codec

def write_csv(trajectory: Trajectory, path: PathLike) -> Path:
    """Write `t,<ch0>,<ch1>,...` with 17 significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    table = np.column_stack([trajectory.times, trajectory.values])
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t", *trajectory.channel_names])
        for row in table:
            writer.writerow([format(value, ".17g") for value in row])
    return path


def read_csv(path: PathLike) -> Trajectory:
    path = Path(path)
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[0] != "t":
            raise InvalidArgumentError(f"{path}: missing 't,...' header")
        rows = [[float(value) for value in row] for row in reader if row]
    if not rows:
        raise InvalidArgumentError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=float)
    times = table[:, 0]
    dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
    return Trajectory(float(times[0]), dt, table[:, 1:], tuple(header[1:]))


def write_spike_times(spike_times: Sequence[float], path: PathLike) -> Path:
    """Sidecar CSV with one firing time per row under header `t_f`"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["t_f"])
        for t_f in spike_times:
            writer.writerow([format(t_f, ".17g")])
    return path


def read_spike_times(path: PathLike) -> List[float]:
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        next(reader, None)
        return [float(row[0]) for row in reader if row]
