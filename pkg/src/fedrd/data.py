"""Right-censored survival data, CSV ingestion and ordered time grids."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import DataError

__all__ = [
    "Subject",
    "SurvivalDataset",
    "TimeGrid",
    "build_time_grid",
    "concat_datasets",
    "format_float",
    "load_dataset",
    "save_dataset",
]


def format_float(value: float) -> str:
    """Shortest string that parses back to exactly ``value``.

    Integral values drop the trailing ``.0`` so ``1.0`` renders as ``1``.
    """
    text = repr(float(value))
    if text.endswith(".0"):
        text = text[:-2]
    return text


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Subject:
    time: float
    status: int
    covariates: tuple[float, ...]

    def __post_init__(self):
        if not np.isfinite(self.time) or self.time < 0:
            raise DataError(f"time must be finite and nonnegative, got {self.time}")
        if self.status not in (0, 1):
            raise DataError(f"status not in {{0,1}}: {self.status}")
        if not all(np.isfinite(self.covariates)):
            raise DataError("covariates must be finite")


class SurvivalDataset:
    """Observations ``(y, delta, x)`` held by a single site.

    Stored column-wise as read-only numpy arrays; the per-subject view is
    available through :attr:`subjects`.

    Parameters
    ----------
    time : array_like, shape (n,)
        Observed times ``min(T, C)``.
    status : array_like, shape (n,)
        Event indicators, 1 for an observed event and 0 for censoring.
    x : array_like, shape (n, p)
        Covariate matrix. A 1-d array is read as a single covariate.
    site_id : str, optional
    """

    __slots__ = ("_time", "_status", "_x", "site_id")

    def __init__(self, time, status, x, site_id: str | None = None):
        time = np.array(time, dtype=float, ndmin=1)
        status_raw = np.array(status, ndmin=1)
        x = np.array(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        n = time.shape[0]
        if n == 0:
            raise DataError("dataset must contain at least one subject")
        if time.ndim != 1 or status_raw.shape != (n,) or x.ndim != 2 or x.shape[0] != n:
            raise DataError("time, status and x must describe the same subjects")
        if x.shape[1] == 0:
            raise DataError("at least one covariate is required (p = 0)")
        if not np.all(np.isfinite(time)) or not np.all(np.isfinite(x)):
            raise DataError("all values must be finite")
        if np.any(time < 0):
            raise DataError("negative time")
        if not np.all((status_raw == 0) | (status_raw == 1)):
            raise DataError("status not in {0,1}")
        object.__setattr__(self, "_time", _readonly(time))
        object.__setattr__(self, "_status", _readonly(status_raw.astype(np.int64)))
        object.__setattr__(self, "_x", _readonly(x))
        object.__setattr__(self, "site_id", site_id)

    def __setattr__(self, name, value):
        raise AttributeError("SurvivalDataset is immutable")

    @classmethod
    def from_subjects(cls, subjects: Sequence[Subject], site_id: str | None = None) -> "SurvivalDataset":
        if not subjects:
            raise DataError("dataset must contain at least one subject")
        p = len(subjects[0].covariates)
        if any(len(s.covariates) != p for s in subjects):
            raise DataError("covariate length differs between subjects")
        return cls(
            [s.time for s in subjects],
            [s.status for s in subjects],
            np.array([s.covariates for s in subjects], dtype=float).reshape(len(subjects), p),
            site_id=site_id,
        )

    @property
    def time(self) -> np.ndarray:
        return self._time

    @property
    def status(self) -> np.ndarray:
        return self._status

    @property
    def x(self) -> np.ndarray:
        return self._x

    @property
    def n(self) -> int:
        return self._time.shape[0]

    @property
    def p(self) -> int:
        return self._x.shape[1]

    @property
    def n_events(self) -> int:
        return int(self._status.sum())

    @property
    def subjects(self) -> list[Subject]:
        return list(iter(self))

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[Subject]:
        for t, d, row in zip(self._time, self._status, self._x):
            yield Subject(float(t), int(d), tuple(float(v) for v in row))

    def __eq__(self, other) -> bool:
        if not isinstance(other, SurvivalDataset):
            return NotImplemented
        return (
            np.array_equal(self._time, other._time)
            and np.array_equal(self._status, other._status)
            and np.array_equal(self._x, other._x)
        )

    __hash__ = None

    def __repr__(self) -> str:
        site = f", site_id={self.site_id!r}" if self.site_id is not None else ""
        return f"SurvivalDataset(n={self.n}, p={self.p}, events={self.n_events}{site})"

    def subset(self, index, site_id: str | None = None) -> "SurvivalDataset":
        return SurvivalDataset(self._time[index], self._status[index], self._x[index], site_id=site_id)


def concat_datasets(datasets: Sequence[SurvivalDataset], site_id: str | None = None) -> SurvivalDataset:
    if not datasets:
        raise DataError("no datasets to concatenate")
    p = datasets[0].p
    if any(d.p != p for d in datasets):
        raise DataError("datasets disagree on covariate dimension p")
    return SurvivalDataset(
        np.concatenate([d.time for d in datasets]),
        np.concatenate([d.status for d in datasets]),
        np.vstack([d.x for d in datasets]),
        site_id=site_id,
    )


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Ordered observation times and their increments.

    ``deltas[i] = times[i] - times[i - 1]`` with an implicit ``times[-1] = 0``.
    Tied times are kept as separate entries with a zero increment.
    """

    times: np.ndarray
    deltas: np.ndarray

    def __post_init__(self):
        if self.times.shape != self.deltas.shape or self.times.ndim != 1:
            raise DataError("times and deltas must be 1-d arrays of equal length")

    def __len__(self) -> int:
        return self.times.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, TimeGrid):
            return NotImplemented
        return np.array_equal(self.times, other.times) and np.array_equal(self.deltas, other.deltas)

    __hash__ = None

    @property
    def tau(self) -> float:
        return float(self.times[-1])


def build_time_grid(times) -> TimeGrid:
    """Sort observed times (duplicates kept) and difference them against the previous entry."""
    arr = np.sort(np.asarray(times, dtype=float).ravel(), kind="stable")
    if arr.size == 0:
        raise DataError("cannot build a time grid from no times")
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DataError("grid times must be finite and nonnegative")
    deltas = np.diff(arr, prepend=0.0)
    return TimeGrid(_readonly(arr), _readonly(deltas))


def load_dataset(path, site_id: str | None = None) -> SurvivalDataset:
    """Read a ``time,status,x1,...,xp`` CSV file.

    Row numbers in error messages are file line numbers, so the first data
    row is row 2.
    """
    if not os.path.isfile(path):
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[0] != "time" or header[1] != "status":
            raise DataError(f"{path}: header must start with 'time,status'")
        p = len(header) - 2
        if p == 0:
            raise DataError(f"{path}: no covariate columns (p = 0)")
        times, statuses, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2 + p:
                raise DataError(f"malformed row {lineno}: expected {2 + p} fields, got {len(row)}")
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise DataError(f"malformed row {lineno}: non-numeric field") from None
            if not all(np.isfinite(vals)):
                raise DataError(f"malformed row {lineno}: non-finite value")
            if vals[0] < 0:
                raise DataError(f"negative time at row {lineno}")
            if vals[1] not in (0.0, 1.0):
                raise DataError(f"status not in {{0,1}} at row {lineno}")
            times.append(vals[0])
            statuses.append(int(vals[1]))
            rows.append(vals[2:])
    if not times:
        raise DataError(f"{path}: no data rows")
    return SurvivalDataset(times, statuses, np.array(rows, dtype=float), site_id=site_id)


def save_dataset(data: SurvivalDataset, path) -> None:
    """Write ``data`` in the CSV layout read by :func:`load_dataset`, losslessly."""
    header = ["time", "status"] + [f"x{j + 1}" for j in range(data.p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t, d, row in zip(data.time, data.status, data.x):
            writer.writerow([format_float(t), int(d)] + [format_float(v) for v in row])
