"""Partly interval-censored survival observations.

Each subject contributes a pair ``(t_left, t_right)`` and a covariate row.
The pair alone determines the censoring type:

* ``t_left == t_right``          exact event time
* ``t_left == 0``                left censored at ``t_right``
* ``t_right == inf``             right censored at ``t_left``
* ``0 < t_left < t_right < inf`` interval censored
"""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TIE_RTOL = 1e-12
INF_TOKENS = {"inf", "+inf", "infinity", "+infinity"}


class DataError(ValueError):
    """Raised for malformed or inconsistent survival data."""


class CensorKind(enum.IntEnum):
    EVENT = 0
    LEFT = 1
    RIGHT = 2
    INTERVAL = 3


def classify_censoring(t_left: float, t_right: float) -> CensorKind:
    """Return the censoring type of an observed pair ``(t_left, t_right)``.

    Pairs equal within a relative tolerance of 1e-12 count as events.
    """
    t_left = float(t_left)
    t_right = float(t_right)
    if math.isnan(t_left) or math.isnan(t_right):
        raise DataError("time endpoints must not be NaN")
    if t_left < 0:
        raise DataError(f"t_left must be >= 0, got {t_left}")
    if math.isinf(t_left):
        raise DataError("t_left must be finite")
    if t_right < t_left and not _tied(t_left, t_right):
        raise DataError(f"t_right ({t_right}) < t_left ({t_left})")
    if t_left == 0 and t_right == 0:
        raise DataError("t_left and t_right are both zero")
    if _tied(t_left, t_right):
        return CensorKind.EVENT
    if math.isinf(t_right):
        return CensorKind.RIGHT
    if t_left == 0:
        return CensorKind.LEFT
    return CensorKind.INTERVAL


def _tied(a: float, b: float) -> bool:
    if math.isinf(a) or math.isinf(b):
        return False
    return abs(a - b) <= TIE_RTOL * max(abs(a), abs(b))


@dataclass(frozen=True)
class Observation:
    t_left: float
    t_right: float
    kind: CensorKind
    covariates: tuple[float, ...]


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable column-oriented container of observations.

    Attributes
    ----------
    t_left, t_right : numpy.ndarray, shape (n,)
        Interval endpoints; ``t_right`` is ``inf`` for right censoring and
        equals ``t_left`` for events.
    kind : numpy.ndarray of int, shape (n,)
        :class:`CensorKind` codes.
    X : numpy.ndarray, shape (n, p)
        Covariate matrix (may have zero columns).
    covariate_names : tuple of str
    """

    t_left: np.ndarray
    t_right: np.ndarray
    kind: np.ndarray
    X: np.ndarray
    covariate_names: tuple[str, ...] = field(default=())

    def __post_init__(self):
        tl = np.asarray(self.t_left, dtype=float).reshape(-1)
        tr = np.asarray(self.t_right, dtype=float).reshape(-1)
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(len(tl), -1) if len(tl) else X.reshape(0, 0)
        kind = np.asarray(self.kind, dtype=np.int8).reshape(-1)
        n = len(tl)
        if n == 0:
            raise DataError("dataset has no observations")
        if len(tr) != n or len(kind) != n or X.shape[0] != n:
            raise DataError("column lengths disagree")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates must be finite")
        if np.all(kind == CensorKind.RIGHT):
            raise DataError("all observations are right censored; the hazard is not identifiable")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError(f"{len(names)} covariate names for {X.shape[1]} columns")
        for arr in (tl, tr, kind, X):
            arr.setflags(write=False)
        object.__setattr__(self, "t_left", tl)
        object.__setattr__(self, "t_right", tr)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "covariate_names", names)

    @classmethod
    def from_intervals(
        cls,
        t_left: Iterable[float],
        t_right: Iterable[float],
        X=None,
        covariate_names: Sequence[str] = (),
    ) -> "Dataset":
        """Build a dataset, classifying each pair with :func:`classify_censoring`."""
        tl = np.asarray(list(t_left), dtype=float)
        tr = np.asarray(list(t_right), dtype=float)
        if len(tl) != len(tr):
            raise DataError("t_left and t_right lengths differ")
        if len(tl) == 0:
            raise DataError("dataset is empty")
        kinds = np.empty(len(tl), dtype=np.int8)
        for i, (a, b) in enumerate(zip(tl, tr)):
            try:
                kinds[i] = classify_censoring(a, b)
            except DataError as exc:
                raise DataError(f"row {i}: {exc}") from None
            if kinds[i] == CensorKind.EVENT:
                tr[i] = tl[i]
        if X is None:
            X = np.zeros((len(tl), 0))
        return cls(tl, tr, kinds, np.asarray(X, dtype=float).reshape(len(tl), -1), tuple(covariate_names))

    @property
    def n(self) -> int:
        return len(self.t_left)

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(float(a), float(b), CensorKind(int(k)), tuple(float(v) for v in x))
            for a, b, k, x in zip(self.t_left, self.t_right, self.kind, self.X)
        ]

    def indicators(self) -> np.ndarray:
        """One-hot ``(n, 4)`` matrix of censoring indicators in :class:`CensorKind` order."""
        out = np.zeros((self.n, 4), dtype=np.int8)
        out[np.arange(self.n), self.kind] = 1
        return out

    def counts(self) -> dict[str, int]:
        return {k.name.lower(): int(np.sum(self.kind == k)) for k in CensorKind}

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(self.t_left[index], self.t_right[index], self.kind[index], self.X[index], self.covariate_names)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.covariate_names == other.covariate_names
            and np.array_equal(self.t_left, other.t_left)
            and np.array_equal(self.t_right, other.t_right)
            and np.array_equal(self.kind, other.kind)
            and np.array_equal(self.X, other.X)
        )

    __hash__ = None


def endpoint_pool(data: Dataset) -> np.ndarray:
    """Sorted finite, strictly positive observed endpoints.

    Event times appear once; zeros from left censoring and infinite right
    endpoints are dropped.
    """
    ev = data.kind == CensorKind.EVENT
    pts = np.concatenate([data.t_left, data.t_right[~ev]])
    pts = pts[np.isfinite(pts) & (pts > 0)]
    return np.sort(pts)


def time_support(data: Dataset) -> tuple[float, float]:
    """Smallest and largest finite positive observed endpoint."""
    pool = endpoint_pool(data)
    if pool.size == 0:
        raise DataError("no finite positive endpoints")
    return float(pool[0]), float(pool[-1])


@dataclass(frozen=True)
class Schema:
    """Column mapping for delimited input.

    Columns may be given by header name or by zero-based position.
    ``covariates=None`` means every column other than the two time columns.
    """

    t_left: str | int = "t_left"
    t_right: str | int = "t_right"
    covariates: Sequence[str | int] | None = None


def _parse_time(cell: str, *, allow_empty_inf: bool) -> float:
    s = cell.strip()
    if s == "":
        if allow_empty_inf:
            return math.inf
        raise ValueError("empty cell")
    if s.lower() in INF_TOKENS:
        return math.inf
    return float(s)


def _resolve(header: list[str], col: str | int) -> int:
    if isinstance(col, int):
        if not 0 <= col < len(header):
            raise DataError(f"column index {col} out of range (have {len(header)} columns)")
        return col
    try:
        return header.index(col)
    except ValueError:
        raise DataError(f"missing column {col!r}; header is {header}") from None


def _read_text(source) -> str:
    if isinstance(source, bytes):
        return source.decode("utf-8")
    if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
        with open(source, encoding="utf-8", newline="") as fh:
            return fh.read()
    if hasattr(source, "read"):
        data = source.read()
        return data.decode("utf-8") if isinstance(data, bytes) else data
    if isinstance(source, str):
        return source
    raise DataError(f"cannot read data from {type(source).__name__}")


def load_dataset(source, schema: Schema | None = None) -> Dataset:
    """Parse delimited text (comma or tab, with header) into a :class:`Dataset`.

    Parameters
    ----------
    source : path, bytes, text, or file object
    schema : Schema, optional
        Defaults to columns named ``t_left`` and ``t_right`` with every other
        column treated as a covariate.

    Right endpoints written as ``inf``, ``Inf`` or left empty are read as
    infinity.  Row numbers in error messages count data rows from 1.
    """
    schema = schema or Schema()
    text = _read_text(source)
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError("input is empty")
    delim = "\t" if "\t" in lines[0] else ","
    rows = list(csv.reader(lines, delimiter=delim))
    header = [h.strip() for h in rows[0]]
    il = _resolve(header, schema.t_left)
    ir = _resolve(header, schema.t_right)
    if schema.covariates is None:
        ic = [j for j in range(len(header)) if j not in (il, ir)]
    else:
        ic = [_resolve(header, c) for c in schema.covariates]
    names = tuple(header[j] for j in ic)

    tl, tr, xs = [], [], []
    for r, row in enumerate(rows[1:], start=1):
        if len(row) < len(header):
            row = row + [""] * (len(header) - len(row))
        try:
            a = _parse_time(row[il], allow_empty_inf=False)
            b = _parse_time(row[ir], allow_empty_inf=True)
        except ValueError:
            raise DataError(f"row {r}: malformed time value in {row!r}") from None
        try:
            x = [float(row[j]) for j in ic]
        except ValueError:
            raise DataError(f"row {r}: malformed covariate value in {row!r}") from None
        try:
            classify_censoring(a, b)
        except DataError as exc:
            raise DataError(f"row {r}: {exc}") from None
        tl.append(a)
        tr.append(b)
        xs.append(x)
    if not tl:
        raise DataError("no data rows")
    return Dataset.from_intervals(tl, tr, np.array(xs, dtype=float).reshape(len(tl), len(ic)), names)


def serialize(data: Dataset, delimiter: str = ",") -> str:
    """Write a dataset as delimited text readable by :func:`load_dataset`."""
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(["t_left", "t_right", *data.covariate_names])
    for a, b, x in zip(data.t_left, data.t_right, data.X):
        w.writerow([repr(float(a)), "inf" if math.isinf(b) else repr(float(b)), *(repr(float(v)) for v in x)])
    return buf.getvalue()
