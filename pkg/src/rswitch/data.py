"""Observation container and its comma-separated file format.

Files carry a header ``t,n,y,<covariate names>``; ``t`` and ``n`` count from 1.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import DataFormatError, DimensionError

log = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Observations ``y`` at real time ``t`` for unit ``n`` with covariates ``X``.

    Attributes
    ----------
    t, n : ndarray of int
        Real period and unit (from 1).
    y : ndarray of int
        Counts, or outcome indices from 1.
    X : ndarray, shape (n_obs, K)
        Covariates; column 0 is the intercept.
    names : list of str
        Covariate names.
    """

    t: NDArray[np.int64]
    n: NDArray[np.int64]
    y: NDArray[np.int64]
    X: NDArray[np.float64]
    names: list[str]

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.n = np.asarray(self.n, dtype=np.int64)
        self.y = np.asarray(self.y, dtype=np.int64)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        m = len(self.y)
        if not (len(self.t) == len(self.n) == m == self.X.shape[0]):
            raise DimensionError("t, n, y and X must have one row per observation")
        if self.X.shape[1] != len(self.names):
            raise DimensionError("one covariate name per column required")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def K(self) -> int:
        return self.X.shape[1]

    @property
    def T(self) -> int:
        return int(self.t.max()) if len(self) else 0

    @property
    def N(self) -> int:
        return int(self.n.max()) if len(self) else 0

    @classmethod
    def from_arrays(cls, t, n, y, X, names=None) -> "Dataset":
        """Build a dataset, inserting an intercept column when absent."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[0] != len(np.atleast_1d(y)) and X.shape[1] == len(np.atleast_1d(y)):
            X = X.T
        names = list(names) if names is not None else [f"x{k}" for k in range(X.shape[1])]
        if X.shape[1] == 0 or not np.all(X[:, 0] == 1.0):
            log.info("no intercept column found; inserting one")
            X = np.column_stack([np.ones(X.shape[0]), X])
            names = ["intercept"] + names
        return cls(t, n, y, X, names)

    def subset(self, mask: ArrayLike) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.t[mask], self.n[mask], self.y[mask], self.X[mask], list(self.names))


def _int_field(text: str, what: str, line: int) -> int:
    try:
        val = float(text)
    except ValueError:
        raise DataFormatError(f"{what} {text!r} is not a number", line) from None
    if not np.isfinite(val) or val != int(val):
        raise DataFormatError(f"{what} {text!r} is not an integer", line)
    return int(val)


def load_dataset(path: str | Path) -> Dataset:
    """Read and validate a dataset file.

    Raises
    ------
    DataFormatError
        On ragged rows, non-integer or negative ``y``, non-positive indices or
        duplicated ``(t, n)`` pairs. The message names the offending line.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty file", 1) from None
        if header[:3] != ["t", "n", "y"]:
            raise DataFormatError("header must start with t,n,y", 1)
        names = header[3:]
        width = len(header)
        t, n, y, X = [], [], [], []
        seen: dict[tuple[int, int], int] = {}
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DataFormatError(f"expected {width} fields, found {len(row)}", line)
            ti = _int_field(row[0], "t", line)
            ni = _int_field(row[1], "n", line)
            yi = _int_field(row[2], "y", line)
            if ti < 1 or ni < 1:
                raise DataFormatError("t and n must be at least 1", line)
            if yi < 0:
                raise DataFormatError(f"negative y {yi}", line)
            if (ti, ni) in seen:
                raise DataFormatError(
                    f"duplicate (t, n) = ({ti}, {ni}), first seen on line {seen[ti, ni]}", line)
            seen[ti, ni] = line
            try:
                xi = [float(c) for c in row[3:]]
            except ValueError:
                raise DataFormatError("non-numeric covariate", line) from None
            t.append(ti)
            n.append(ni)
            y.append(yi)
            X.append(xi)
    X = np.array(X, dtype=float).reshape(len(y), len(names))
    return Dataset.from_arrays(t, n, y, X, names)


def save_dataset(data: Dataset, path: str | Path) -> None:
    """Write a dataset with full float precision."""
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "n", "y"] + list(data.names))
        for i in range(len(data)):
            w.writerow([int(data.t[i]), int(data.n[i]), int(data.y[i])]
                       + [repr(float(v)) for v in data.X[i]])
