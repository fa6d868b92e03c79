"""Cross-fitted double machine learning for the fixed-effects coefficient.

For each of ``repetitions`` independent sample splits the groups are divided
into ``k_folds`` folds. Nuisances are fitted on the complement of each fold,
the fold's residuals get a Gaussian mixed-model fit, and the fold estimates
are averaged. Repetitions are combined by the componentwise median. Each
split's covariance is inflated by its squared deviation from the median,
and the elementwise median of these matrices is the reported covariance.

Seeding: repetition ``s`` uses ``Philox(SeedSequence(seed, spawn_key=(s,)))``
for its fold partition and hands ``rng.spawn(k_folds)[k]`` to fold ``k``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtri

from .data import FoldPartition, GroupedDataset, validate_dataset
from .exceptions import DataError, FoldError, PlmmError
from .learners import LearnerSpec, fit_nuisance, residualize
from .lmm import LmmFit, fit_variance_components

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class DmlConfig:
    k_folds: int = 2
    repetitions: int = 10
    learner: LearnerSpec = field(default_factory=LearnerSpec)
    alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.k_folds < 2:
            raise DataError(f"k_folds must be at least 2, got {self.k_folds}")
        if self.repetitions < 1:
            raise DataError(f"repetitions must be at least 1, got {self.repetitions}")
        if not 0 < self.alpha <= 1:
            raise DataError(f"alpha must lie in (0, 1], got {self.alpha}")


@dataclass
class SplitEstimate:
    beta_s: np.ndarray
    cov_s: np.ndarray
    sigma2_s: float = np.nan
    sigma_mat_s: np.ndarray | None = None
    fold_fits: list = field(default_factory=list)
    partition: FoldPartition | None = None
    repetition: int | None = None


@dataclass
class DmlFit:
    beta_hat: np.ndarray
    cov_hat: np.ndarray
    std_errors: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    splits: list
    config: DmlConfig | None = None
    failed_repetitions: list = field(default_factory=list)

    @property
    def sigma2(self) -> float:
        """Median over splits of the fold-averaged error variance."""
        return float(np.median([s.sigma2_s for s in self.splits]))

    @property
    def sigma_mat(self) -> np.ndarray:
        return np.median(np.stack([s.sigma_mat_s for s in self.splits]), axis=0)


def split_folds(group_ids, k: int, rng) -> FoldPartition:
    """Shuffle the ids and deal them round-robin into ``k`` folds."""
    group_ids = list(group_ids)
    if k > len(group_ids):
        raise DataError(f"cannot split {len(group_ids)} groups into {k} folds")
    if k < 2:
        raise DataError(f"need at least 2 folds, got {k}")
    perm = rng.permutation(len(group_ids))
    return FoldPartition({group_ids[j]: pos % k for pos, j in enumerate(perm)}, k)


def estimate_single_split(dataset: GroupedDataset, config: DmlConfig, rng,
                          partition: FoldPartition | None = None) -> SplitEstimate:
    """Cross-fit over one fold partition (drawn from ``rng`` unless given)."""
    if not dataset.validated:
        dataset = validate_dataset(dataset)
    k = config.k_folds
    if partition is None:
        partition = split_folds(dataset.group_ids, k, rng)
    elif partition.k != k:
        raise DataError(f"partition has {partition.k} folds, config says {k}")
    all_ids = set(dataset.group_ids)
    if set(partition.assignments) != all_ids:
        raise DataError("partition does not cover exactly the dataset's groups")
    fold_rngs = rng.spawn(k)

    fits: list[LmmFit] = []
    for f in range(k):
        eval_ids = set(partition.fold(f))
        train_ids = set(partition.complement(f))
        assert not (eval_ids & train_ids), "training and evaluation groups overlap"
        assert eval_ids | train_ids == all_ids
        train = [g for g in dataset.groups if g.group_id in train_ids]
        evaluate = [g for g in dataset.groups if g.group_id in eval_ids]
        try:
            nuisance = fit_nuisance(train, config.learner, fold_rngs[f], fold=f)
            res = residualize(nuisance, evaluate)
            fits.append(fit_variance_components(res))
        except PlmmError as exc:
            raise FoldError(f, exc) from exc

    betas = np.stack([fit.theta.beta for fit in fits])
    covs = np.stack([fit.beta_cov for fit in fits])
    return SplitEstimate(
        beta_s=betas.mean(axis=0),
        cov_s=covs.sum(axis=0) / k**2,
        sigma2_s=float(np.mean([fit.theta.sigma2 for fit in fits])),
        sigma_mat_s=np.mean([fit.theta.sigma_mat for fit in fits], axis=0),
        fold_fits=fits,
        partition=partition,
    )


def aggregate_splits(estimates) -> DmlFit:
    """Median point estimate and median deviation-corrected covariance."""
    estimates = list(estimates)
    if not estimates:
        raise DataError("no split estimates to aggregate")
    if len(estimates) == 1:
        beta = np.array(estimates[0].beta_s, dtype=np.float64)
        cov = np.array(estimates[0].cov_s, dtype=np.float64)
    else:
        betas = np.stack([e.beta_s for e in estimates])
        beta = np.median(betas, axis=0)
        corrected = np.stack(
            [e.cov_s + np.outer(beta - e.beta_s, beta - e.beta_s) for e in estimates]
        )
        cov = np.median(corrected, axis=0)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return DmlFit(beta, cov, se, beta.copy(), beta.copy(), estimates)


def normal_quantile(p):
    return ndtri(p)


def confidence_interval(fit: DmlFit, alpha: float = 0.05):
    """Two-sided Gaussian intervals ``beta_j +- z_{1-alpha/2} se_j``."""
    if not 0 < alpha <= 1:
        raise DataError(f"alpha must lie in (0, 1], got {alpha}")
    z = 0.0 if alpha == 1 else float(normal_quantile(1.0 - alpha / 2.0))
    se = np.asarray(fit.std_errors, dtype=np.float64)
    if np.any(se == 0):
        warnings.warn("zero standard error: degenerate confidence interval", RuntimeWarning,
                      stacklevel=2)
    return fit.beta_hat - z * se, fit.beta_hat + z * se


def repetition_rng(seed: int, s: int):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(s,))))


def dml_fit(dataset: GroupedDataset, config: DmlConfig) -> DmlFit:
    """Run all repetitions, aggregate the survivors and attach intervals.

    A failing repetition is logged and skipped (with a warning); the call
    fails only when every repetition fails.
    """
    dataset = validate_dataset(dataset)
    if config.k_folds > len(dataset):
        raise DataError(f"k_folds={config.k_folds} exceeds the number of groups {len(dataset)}")
    estimates, failed = [], []
    last_exc = None
    for s in range(config.repetitions):
        try:
            est = estimate_single_split(dataset, config, repetition_rng(config.seed, s))
            est.repetition = s
            estimates.append(est)
        except FoldError as exc:
            log.warning("repetition %d failed: %s", s, exc)
            failed.append({"repetition": s, "fold": exc.fold, "error": str(exc.cause)})
            last_exc = exc
    if not estimates:
        raise last_exc.cause from last_exc
    if failed:
        warnings.warn(
            f"{len(failed)} of {config.repetitions} repetitions failed; aggregating the rest",
            RuntimeWarning, stacklevel=2,
        )
    fit = aggregate_splits(estimates)
    fit.config = config
    fit.failed_repetitions = failed
    fit.ci_lower, fit.ci_upper = confidence_interval(fit, config.alpha)
    return fit
