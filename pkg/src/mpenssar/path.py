"""Multivariate discrete paths: validation, augmentation, interpolation, CSV I/O."""

from __future__ import annotations

import csv
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np

from .errors import ContractError

__all__ = [
    "Path",
    "AugmentedPath",
    "augment",
    "total_variation",
    "interpolate_missing",
    "read_paths_csv",
    "write_paths_csv",
]


@dataclass(frozen=True, eq=False)
class Path:
    """A P-channel path observed at strictly increasing time stamps.

    Parameters
    ----------
    times : array_like, shape (N,)
    values : array_like, shape (N, P) or (N,) for a single channel
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.array(self.times, dtype=float)
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if times.ndim != 1 or values.ndim != 2:
            raise ContractError("times must be 1-D and values 2-D")
        if len(times) < 2 or len(times) != len(values):
            raise ContractError(
                f"need len(times) == len(values) >= 2, got {len(times)} and {len(values)}"
            )
        if values.shape[1] < 1:
            raise ContractError("a path needs at least one channel")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise ContractError("path contains non-finite entries")
        if np.any(np.diff(times) <= 0):
            raise ContractError("times must be strictly increasing")
        times.setflags(write=False)
        values.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True, eq=False)
class AugmentedPath:
    """Basepointed path whose last channel is time rescaled to [0, 1]."""

    inner: Path
    basepointed: bool = True

    def __post_init__(self):
        t = self.inner.values[:, -1]
        if self.inner.channels < 2:
            raise ContractError("augmented path needs a time channel")
        if t[0] != 0.0 or t[-1] != 1.0 or np.any(np.diff(t) <= 0):
            raise ContractError("time channel must increase strictly from 0 to 1")
        if self.basepointed and np.any(self.inner.values[0] != 0.0):
            raise ContractError("basepointed path must start at the zero vector")

    @property
    def channels(self) -> int:
        return self.inner.channels


def _rescale(times: np.ndarray) -> np.ndarray:
    out = (times - times[0]) / (times[-1] - times[0])
    out[0], out[-1] = 0.0, 1.0
    return out


def augment(p: Path, basepoint: bool = True) -> AugmentedPath:
    """Prepend a zero observation and append a rescaled time channel.

    The zero vector sits one first-spacing step before ``p.times[0]``.
    With ``basepoint=False`` only the time channel is added; this is the
    translation-invariant variant used in tests.
    """
    if not isinstance(p, Path):
        p = Path(*p)
    times, values = p.times, p.values
    if basepoint:
        step = times[1] - times[0]
        times = np.concatenate([[times[0] - step], times])
        values = np.vstack([np.zeros((1, p.channels)), values])
    tau = _rescale(times)
    aug_values = np.column_stack([values, tau])
    if basepoint:
        aug_values[0] = 0.0
    return AugmentedPath(Path(tau, aug_values), basepointed=basepoint)


def total_variation(p: Path | AugmentedPath) -> float:
    """Sum of Euclidean increment norms over the observed partition."""
    if isinstance(p, AugmentedPath):
        p = p.inner
    inc = np.diff(p.values, axis=0)
    return float(np.sum(np.sqrt(np.sum(inc * inc, axis=1))))


def interpolate_missing(
    raw: Iterable[tuple[float, Sequence[float | None] | float | None]],
    channel_names: Sequence[str] | None = None,
) -> Path:
    """Fill missing entries channel by channel with linear interpolation.

    ``raw`` yields ``(time, vector)`` pairs where the vector (or one of its
    entries) may be ``None`` / NaN. Leading and trailing gaps are filled flat
    from the nearest observation.
    """
    rows = list(raw)
    if not rows:
        raise ContractError("no observations")
    times = np.array([r[0] for r in rows], dtype=float)
    vecs = []
    width = None
    for _, v in rows:
        if v is None or np.isscalar(v):
            v = [v]
        v = [np.nan if x is None else float(x) for x in v]
        if width is None:
            width = len(v)
        elif len(v) != width:
            raise ContractError("inconsistent channel count")
        vecs.append(v)
    values = np.array(vecs, dtype=float)
    for c in range(values.shape[1]):
        col = values[:, c]
        obs = np.isfinite(col)
        if obs.sum() < 2:
            name = channel_names[c] if channel_names else f"x{c + 1}"
            raise ContractError(f"channel {name} has fewer than 2 observed values")
        if not obs.all():
            # np.interp holds the boundary values flat outside the observed range
            col[~obs] = np.interp(times[~obs], times[obs], col[obs])
    return Path(times, values)


def read_paths_csv(path: str | FsPath) -> dict[str, Path]:
    """Read ``unit_id,t,x1,...,xP`` rows; empty cells are interpolated."""
    units: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["unit_id", "t"] or len(header) < 3:
            raise ContractError(f"{path}: expected header unit_id,t,x1,...")
        names = header[2:]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ContractError(f"{path}:{lineno}: expected {len(header)} fields")
            vec = [None if cell.strip() == "" else float(cell) for cell in row[2:]]
            units.setdefault(row[0], []).append((float(row[1]), vec))
    return {uid: interpolate_missing(rows, names) for uid, rows in units.items()}


def write_paths_csv(
    path: str | FsPath, paths: Mapping[str, Path] | Sequence[Path]
) -> None:
    if not isinstance(paths, Mapping):
        paths = {str(i + 1): p for i, p in enumerate(paths)}
    channels = {p.channels for p in paths.values()}
    if len(channels) != 1:
        raise ContractError("paths must share a channel count")
    (P,) = channels
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["unit_id", "t", *[f"x{k + 1}" for k in range(P)]])
        for uid, p in paths.items():
            for t, v in zip(p.times, p.values):
                w.writerow([uid, repr(float(t)), *[repr(float(x)) for x in v]])
