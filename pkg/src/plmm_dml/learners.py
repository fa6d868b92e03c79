"""Nuisance regression learners and residualization.

The nuisance functions are the conditional means of the linear covariates and
of the response given the nonparametric covariates. Each output is fitted by
an independent single-output regressor on row-stacked observations pooled
across the training groups.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import _cart
from .exceptions import DataError, LearnerError
from .lmm import GroupResidual, ResidualSet

LEARNER_KINDS = ("random_forest", "linear", "oracle")
RIDGE = 1e-8


@dataclass(frozen=True)
class LearnerSpec:
    """Configuration of the nuisance learner.

    ``rf_mtry=None`` resolves to ``max(1, v // 3)`` at fit time.
    ``oracle_hooks`` is a pair ``(m_x, m_y)`` of exact functions taking an
    ``(n, v)`` array and returning ``(n, d)`` and ``(n,)`` arrays; it is only
    meaningful for ``kind="oracle"``.
    """

    kind: str = "random_forest"
    rf_num_trees: int = 500
    rf_min_node_size: int = 5
    rf_mtry: int | None = None
    rf_bootstrap: bool = True
    oracle_hooks: tuple[Callable, Callable] | None = None

    def __post_init__(self):
        if self.kind not in LEARNER_KINDS:
            raise LearnerError(f"unknown learner kind {self.kind!r}")
        if self.rf_num_trees < 1 or self.rf_min_node_size < 1:
            raise LearnerError("rf_num_trees and rf_min_node_size must be positive")
        if self.rf_mtry is not None and self.rf_mtry < 1:
            raise LearnerError("rf_mtry must be positive")
        if self.kind == "oracle" and self.oracle_hooks is None:
            raise LearnerError("oracle learner needs oracle_hooks")


class LinearRegressor:
    """Affine least squares with a tiny ridge on the centred normal equations."""

    def fit(self, features, targets):
        features = np.asarray(features, dtype=np.float64)
        targets = np.asarray(targets, dtype=np.float64)
        mx = features.mean(axis=0)
        my = targets.mean()
        xc = features - mx
        gram = xc.T @ xc + RIDGE * np.eye(features.shape[1])
        self.coef_ = np.linalg.solve(gram, xc.T @ (targets - my))
        self.intercept_ = my - mx @ self.coef_
        return self

    def predict(self, features):
        return np.asarray(features, dtype=np.float64) @ self.coef_ + self.intercept_


class RandomForestRegressor:
    """Bagged CART regression trees with per-node feature subsampling.

    Splits maximise the reduction in within-node sum of squares. A node with
    at most ``min_node_size`` rows, or constant targets, becomes a leaf; there
    is no depth limit. Ties go to the lowest feature index, then the lowest
    threshold. With ``bootstrap=True`` each tree sees ``M`` rows drawn with
    replacement.
    """

    def __init__(self, n_trees=500, min_node_size=5, mtry=None, bootstrap=True):
        self.n_trees = n_trees
        self.min_node_size = min_node_size
        self.mtry = mtry
        self.bootstrap = bootstrap

    def fit(self, features, targets, rng):
        x = np.ascontiguousarray(features, dtype=np.float64)
        y = np.ascontiguousarray(targets, dtype=np.float64)
        m, v = x.shape
        mtry = self.mtry if self.mtry is not None else max(1, v // 3)
        if mtry > v:
            raise LearnerError(f"mtry={mtry} exceeds the number of features {v}")
        if self.bootstrap:
            samples = rng.integers(0, m, size=(self.n_trees, m), dtype=np.int64)
        else:
            samples = np.tile(np.arange(m, dtype=np.int64), (self.n_trees, 1))
        seeds = rng.integers(0, 2**63, size=self.n_trees, dtype=np.int64).astype(np.uint64)
        (self.feature_, self.threshold_, self.left_, self.right_,
         self.value_, self.node_counts_) = _cart.build_forest(
            x, y, samples, seeds, mtry, self.min_node_size)
        self.samples_ = samples
        self.n_features_ = v
        return self

    def predict(self, features):
        x = np.ascontiguousarray(features, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features_:
            raise DataError(f"expected {self.n_features_} features, got shape {x.shape}")
        return _cart.predict_forest(
            x, self.feature_, self.threshold_, self.left_, self.right_, self.value_)


def fit_learner(spec: LearnerSpec, features, targets, rng):
    """Fit one single-output regressor of ``targets`` on ``features``."""
    features = np.asarray(features, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if features.ndim != 2 or targets.ndim != 1 or features.shape[0] != targets.shape[0]:
        raise LearnerError(
            f"features {features.shape} and targets {targets.shape} are not aligned"
        )
    if features.shape[0] < 2:
        raise LearnerError(f"need at least 2 rows to fit a learner, got {features.shape[0]}")
    if spec.kind == "linear":
        return LinearRegressor().fit(features, targets)
    if spec.kind == "random_forest":
        return RandomForestRegressor(
            spec.rf_num_trees, spec.rf_min_node_size, spec.rf_mtry, spec.rf_bootstrap
        ).fit(features, targets, rng)
    raise LearnerError("oracle learners are not fitted")


@dataclass(frozen=True)
class NuisanceModel:
    """Fitted conditional means ``m_x: R^v -> R^d`` and ``m_y: R^v -> R``."""

    m_x: Callable[[np.ndarray], np.ndarray]
    m_y: Callable[[np.ndarray], np.ndarray]
    d: int
    fold: int | None = None

    def predict_x(self, w):
        out = np.asarray(self.m_x(np.asarray(w, dtype=np.float64)), dtype=np.float64)
        return out.reshape(out.shape[0], -1)

    def predict_y(self, w):
        return np.asarray(self.m_y(np.asarray(w, dtype=np.float64)), dtype=np.float64).reshape(-1)


def _stack_columns(regressors):
    def m_x(w):
        return np.column_stack([r.predict(w) for r in regressors])
    return m_x


def fit_nuisance(train_groups, spec: LearnerSpec, rng, fold=None) -> NuisanceModel:
    """Fit ``d`` column regressors for X and one regressor for Y.

    Regressor ``j`` (X columns first, Y last) uses the ``j``-th child of
    ``rng.spawn(d + 1)``.
    """
    train_groups = list(train_groups)
    if not train_groups:
        raise LearnerError("no training groups")
    d = train_groups[0].x.shape[1]
    if spec.kind == "oracle":
        m_x, m_y = spec.oracle_hooks
        return NuisanceModel(m_x, m_y, d, fold)
    w = np.vstack([g.w for g in train_groups])
    x = np.vstack([g.x for g in train_groups])
    y = np.concatenate([g.y for g in train_groups])
    if w.shape[0] < 2:
        raise LearnerError(f"need at least 2 training rows, got {w.shape[0]}")
    children = rng.spawn(d + 1)
    x_models = [fit_learner(spec, w, x[:, j], children[j]) for j in range(d)]
    y_model = fit_learner(spec, w, y, children[d])
    return NuisanceModel(_stack_columns(x_models), y_model.predict, d, fold)


def residualize(model: NuisanceModel, eval_groups) -> ResidualSet:
    """Subtract nuisance predictions from each group's ``x`` and ``y``."""
    eval_groups = list(eval_groups)
    if not eval_groups:
        raise DataError("no evaluation groups to residualize")
    w = np.vstack([g.w for g in eval_groups])
    cuts = np.cumsum([g.n for g in eval_groups])[:-1]
    mx_all = np.split(model.predict_x(w), cuts)
    my_all = np.split(model.predict_y(w), cuts)
    out = []
    for g, mx, my in zip(eval_groups, mx_all, my_all):
        if mx.shape != g.x.shape or my.shape != g.y.shape:
            raise DataError(
                f"group {g.group_id!r}: nuisance predictions {mx.shape}/{my.shape} "
                f"do not match x {g.x.shape} / y {g.y.shape}"
            )
        out.append(GroupResidual(g.group_id, g.x - mx, g.y - my, g.z))
    return ResidualSet(out, fold=model.fold)
