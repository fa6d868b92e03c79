"""Synthetic partially linear mixed-effects data.

Three scenarios share the covariate law, the linear-covariate mean ``h`` and
the random-effects structure, and differ in the nonlinear response term ``g``
and the group-size law:

* ``nonsmooth_balanced``: piecewise-constant ``g``; ``n_i`` uniform on ``n-3..n+3``
* ``smooth_balanced``: smooth surrogate ``g``; same group sizes
* ``nonsmooth_unbalanced``: piecewise-constant ``g``; ``n_i`` uniform on ``1..2n-1``

Randomness: group sizes come from the supplied generator; each group then
draws ``W`` (row-major), the X noise, the random effect and the error from its
own child generator ``rng.spawn(N)[i]``. Changing the scenario therefore
leaves the covariates of every group untouched.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Group, GroupedDataset, validate_dataset
from .exceptions import DataError
from .learners import LearnerSpec, NuisanceModel

SCENARIOS = ("nonsmooth_balanced", "smooth_balanced", "nonsmooth_unbalanced")


@dataclass(frozen=True)
class SimScenario:
    kind: str = "nonsmooth_balanced"
    n_groups: int = 100
    base_n: int = 15
    beta0: float = 0.5
    sigma0: float = 1.0
    re_sds: tuple = (1.5, 1.8, 1.8)

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise DataError(f"unknown scenario {self.kind!r}; choose from {SCENARIOS}")
        if self.n_groups < 2:
            raise DataError("need at least 2 groups")

    @property
    def balanced(self) -> bool:
        return self.kind != "nonsmooth_unbalanced"

    def g(self, w):
        return eval_g_smooth(w) if self.kind == "smooth_balanced" else eval_g_nonsmooth(w)


def _cols(w):
    w = np.asarray(w, dtype=np.float64)
    return w[..., 0], w[..., 1], w[..., 2]


def eval_h(w):
    """Mean of the linear covariate given ``w``; vectorized over leading axes."""
    w1, w2, w3 = _cols(w)
    inner = np.where(w2 > 0, -2.0, np.where(w1 > 0.75, -3.0, 1.0))
    neg = np.where(w3 <= -1, -1.0, inner)
    return np.where(w3 > 0, np.where(w1 > 0, -3.0, 2.0), neg)


def eval_g_nonsmooth(w):
    """Piecewise-constant response term with twelve leaves."""
    w1, w2, w3 = _cols(w)
    right = np.where(
        w2 > 0,
        np.where(w3 > 1, 1.0, -1.5),
        np.where(
            w2 > -0.5,
            0.75,
            np.where(w1 > 1, np.where(w3 > 1.25, -2.7, -0.5), 3.2),
        ),
    )
    left = np.where(
        w3 > 0,
        np.where(w2 > -1, -2.3, np.where(w1 <= -1.3, 3.0, 1.5)),
        np.where(w3 <= -0.75, 2.8, np.where(w1 <= -0.5, 2.0, -1.75)),
    )
    return np.where(w1 > 0, right, left)


def eval_g_smooth(w):
    """Smooth stand-in: ``2 sin(w1) + w2 w3 - cos(w1 + w2)``."""
    w1, w2, w3 = _cols(w)
    return 2.0 * np.sin(w1) + w2 * w3 - np.cos(w1 + w2)


def gen_group_sizes(scenario: SimScenario, rng) -> np.ndarray:
    n = scenario.base_n
    if scenario.balanced:
        return rng.integers(n - 3, n + 4, size=scenario.n_groups)
    return rng.integers(1, 2 * n, size=scenario.n_groups)


def build_z(n_i: int) -> np.ndarray:
    """Random-effects design: two nested levels plus an intercept."""
    if n_i < 1:
        raise DataError("group size must be positive")
    z = np.zeros((n_i, 3))
    half = n_i // 2
    z[:half, 0] = 1.0
    z[half:, 1] = 1.0
    z[:, 2] = 1.0
    return z


def gen_dataset(scenario: SimScenario, rng) -> GroupedDataset:
    sizes = gen_group_sizes(scenario, rng)
    children = rng.spawn(scenario.n_groups)
    re_sds = np.asarray(scenario.re_sds, dtype=np.float64)
    groups = []
    for i, (n_i, child) in enumerate(zip(sizes, children)):
        n_i = int(n_i)
        w = child.standard_normal((n_i, 3))
        x = eval_h(w) + child.standard_normal(n_i)
        b = re_sds * child.standard_normal(3)
        eps = scenario.sigma0 * child.standard_normal(n_i)
        z = build_z(n_i)
        y = scenario.beta0 * x + scenario.g(w) + z @ b + eps
        groups.append(Group(i, y, x[:, None], w, z))
    return validate_dataset(GroupedDataset(groups))


def oracle_nuisance(scenario: SimScenario) -> NuisanceModel:
    """The true conditional means ``E[X|W] = h`` and ``E[Y|W] = beta0 h + g``."""
    beta0 = scenario.beta0

    def m_x(w):
        return eval_h(w)[:, None]

    def m_y(w):
        return beta0 * eval_h(w) + scenario.g(w)

    return NuisanceModel(m_x, m_y, d=1)


def oracle_spec(scenario: SimScenario) -> LearnerSpec:
    model = oracle_nuisance(scenario)
    return LearnerSpec(kind="oracle", oracle_hooks=(model.m_x, model.m_y))
