"""Domain types for grouped repeated-measurements data.

A dataset is an ordered collection of :class:`Group` objects. Each group holds
the response ``y`` (length ``n_i``), linear covariates ``x`` (``n_i x d``),
nonparametric covariates ``w`` (``n_i x v``) and the random-effects design
``z`` (``n_i x q``).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Hashable, Mapping, Sequence

import numpy as np

from .exceptions import DataError

PSD_TOL = -1e-10
SYM_TOL = 1e-12


def _frozen(a, ndim):
    arr = np.array(a, dtype=np.float64)
    if ndim == 2 and arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Group:
    """Observations of one experimental unit.

    Arrays are copied to read-only float64; 1-D ``x``, ``w`` or ``z`` are
    taken as a single column.
    """

    group_id: Hashable
    y: np.ndarray
    x: np.ndarray
    w: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", _frozen(self.y, 1))
        object.__setattr__(self, "x", _frozen(self.x, 2))
        object.__setattr__(self, "w", _frozen(self.w, 2))
        object.__setattr__(self, "z", _frozen(self.z, 2))

    @property
    def n(self) -> int:
        return self.y.shape[0]


@dataclass(frozen=True, eq=False)
class GroupedDataset:
    """An ordered list of groups sharing the dimensions ``d``, ``v``, ``q``.

    Dimensions are ``None`` until :func:`validate_dataset` has run.
    """

    groups: tuple
    d: int | None = None
    v: int | None = None
    q: int | None = None
    n_total: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    @property
    def group_ids(self) -> list:
        return [g.group_id for g in self.groups]

    @property
    def n_max(self) -> int:
        return max(g.n for g in self.groups)

    @property
    def validated(self) -> bool:
        return self.n_total is not None

    def subset(self, ids) -> "GroupedDataset":
        """Groups whose id is in ``ids``, in dataset order."""
        keep = set(ids)
        return GroupedDataset(
            [g for g in self.groups if g.group_id in keep],
            self.d, self.v, self.q,
            sum(g.n for g in self.groups if g.group_id in keep) if self.validated else None,
        )


def validate_dataset(dataset: GroupedDataset) -> GroupedDataset:
    """Check every invariant of ``dataset`` and record its dimensions.

    Raises
    ------
    DataError
        On fewer than two groups, duplicate ids, row-count or column-count
        mismatches, or non-finite entries. Messages name the offending group
        and, for non-finite values, the array and (row, column).
    """
    groups = tuple(dataset.groups)
    if len(groups) < 2:
        raise DataError(
            f"need at least 2 groups for sample splitting, got {len(groups)}"
        )
    seen = set()
    for g in groups:
        if g.group_id in seen:
            raise DataError(f"duplicate group id {g.group_id!r}")
        seen.add(g.group_id)

    first = groups[0]
    dims = {"x": None, "w": None, "z": None}
    for g in groups:
        if g.y.ndim != 1:
            raise DataError(f"group {g.group_id!r}: y must be a vector")
        n = g.y.shape[0]
        if n < 1:
            raise DataError(f"group {g.group_id!r} has no observations")
        for name in ("x", "w", "z"):
            arr = getattr(g, name)
            if arr.ndim != 2 or arr.shape[0] != n:
                raise DataError(
                    f"group {g.group_id!r}: dimension mismatch, y has {n} rows "
                    f"but {name} has shape {arr.shape}"
                )
            if dims[name] is None:
                dims[name] = arr.shape[1]
            elif arr.shape[1] != dims[name]:
                raise DataError(
                    f"group {g.group_id!r}: {name} has {arr.shape[1]} columns, "
                    f"expected {dims[name]} (from group {first.group_id!r})"
                )
        for name in ("y", "x", "w", "z"):
            arr = getattr(g, name)
            bad = ~np.isfinite(arr)
            if bad.any():
                loc = tuple(int(i) for i in np.argwhere(bad)[0])
                raise DataError(
                    f"group {g.group_id!r}: non-finite value in {name} at {loc}"
                )
    for name in ("x", "w", "z"):
        if dims[name] < 1:
            raise DataError(f"{name} must have at least one column")

    n_total = sum(g.n for g in groups)
    if dataset.n_total is not None and dataset.n_total != n_total:
        raise DataError(
            f"cached total observation count {dataset.n_total} != {n_total}"
        )
    return GroupedDataset(groups, dims["x"], dims["w"], dims["z"], n_total)


@dataclass(frozen=True, eq=False)
class Theta:
    """Model parameters ``(beta, sigma2, sigma_mat)``.

    ``sigma_mat`` is the random-effects covariance scaled by ``1/sigma2``.
    Eigenvalues of ``sigma_mat`` down to ``-1e-10`` are clamped to zero.
    """

    beta: np.ndarray
    sigma2: float
    sigma_mat: np.ndarray

    def __post_init__(self):
        beta = np.atleast_1d(np.asarray(self.beta, dtype=np.float64)).copy()
        s = np.atleast_2d(np.asarray(self.sigma_mat, dtype=np.float64)).copy()
        if not (np.isfinite(self.sigma2) and self.sigma2 > 0):
            raise DataError(f"sigma2 must be positive and finite, got {self.sigma2}")
        if s.shape[0] != s.shape[1]:
            raise DataError(f"sigma_mat must be square, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise DataError("sigma_mat has non-finite entries")
        if np.max(np.abs(s - s.T), initial=0.0) > SYM_TOL * max(1.0, np.abs(s).max()):
            raise DataError("sigma_mat is not symmetric")
        s = 0.5 * (s + s.T)
        evals, evecs = np.linalg.eigh(s)
        if evals.min() < PSD_TOL:
            raise DataError(
                f"sigma_mat is not positive semidefinite (min eigenvalue {evals.min():.3g})"
            )
        if evals.min() < 0:
            s = (evecs * np.clip(evals, 0, None)) @ evecs.T
            s = 0.5 * (s + s.T)
        beta.setflags(write=False)
        s.setflags(write=False)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "sigma2", float(self.sigma2))
        object.__setattr__(self, "sigma_mat", s)


@dataclass(frozen=True)
class FoldPartition:
    """Assignment of group ids to folds ``0..k-1``."""

    assignments: Mapping[Any, int]
    k: int
    _folds: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        folds = [[] for _ in range(self.k)]
        for gid, f in self.assignments.items():
            if not 0 <= f < self.k:
                raise DataError(f"group {gid!r} assigned to invalid fold {f}")
            folds[f].append(gid)
        sizes = [len(f) for f in folds]
        if min(sizes) == 0:
            raise DataError(f"empty fold in partition with sizes {sizes}")
        if max(sizes) - min(sizes) > 1:
            raise DataError(f"fold sizes {sizes} differ by more than one")
        object.__setattr__(self, "_folds", tuple(tuple(f) for f in folds))

    def fold(self, k: int) -> tuple:
        """Group ids in fold ``k``."""
        return self._folds[k]

    def complement(self, k: int) -> tuple:
        return tuple(g for j, f in enumerate(self._folds) if j != k for g in f)

    @property
    def sizes(self) -> list[int]:
        return [len(f) for f in self._folds]


def make_groups(ids: Sequence, y, x, w, z) -> GroupedDataset:
    """Build a dataset from row-stacked arrays and a per-row group label.

    Groups appear in first-appearance order; row order within a group is kept.
    """
    ids = list(ids)
    y, x, w, z = (np.asarray(a, dtype=np.float64) for a in (y, x, w, z))
    order: dict = {}
    for row, gid in enumerate(ids):
        order.setdefault(gid, []).append(row)
    groups = [
        Group(gid, y[rows], x[rows], w[rows], z[rows]) for gid, rows in order.items()
    ]
    return GroupedDataset(groups)
