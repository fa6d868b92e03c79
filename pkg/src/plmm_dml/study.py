"""Monte-Carlo coverage study on simulated data.

Replicate ``r`` generates its dataset from
``Philox(SeedSequence(seed, spawn_key=(r, 0)))`` and runs the estimator with
the integer seed drawn from ``SeedSequence(seed, spawn_key=(r, 1))``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from .dml import DmlConfig, dml_fit
from .exceptions import PlmmError
from .simulate import SimScenario, gen_dataset, oracle_spec

log = logging.getLogger(__name__)

REPLICATE_FIELDS = ("replicate", "beta_hat", "se", "ci_lo", "ci_hi", "covered", "bias")


@dataclass
class StudyResult:
    rows: list
    failures: list

    @property
    def summary(self) -> dict:
        if not self.rows:
            return {"replicates": 0, "failed": len(self.failures), "coverage": None,
                    "median_ci_length": None, "median_bias": None, "mean_beta_hat": None}
        cov = np.array([r["covered"] for r in self.rows], dtype=np.float64)
        length = np.array([r["ci_hi"] - r["ci_lo"] for r in self.rows])
        bias = np.array([r["bias"] for r in self.rows])
        beta = np.array([r["beta_hat"] for r in self.rows])
        return {
            "replicates": len(self.rows),
            "failed": len(self.failures),
            "coverage": float(cov.mean()),
            "median_ci_length": float(np.median(length)),
            "median_bias": float(np.median(bias)),
            "mean_beta_hat": float(beta.mean()),
        }


def replicate_seeds(seed: int, r: int):
    data_rng = np.random.Generator(
        np.random.Philox(np.random.SeedSequence(seed, spawn_key=(r, 0))))
    fit_seed = int(np.random.SeedSequence(seed, spawn_key=(r, 1)).generate_state(1, np.uint64)[0])
    return data_rng, fit_seed


def run_study(scenario: SimScenario, config: DmlConfig, replicates: int, seed: int = 0,
              oracle: bool = False, progress=None) -> StudyResult:
    """Fit ``replicates`` simulated datasets; ``bias`` is ``beta_hat - beta0``.

    With ``oracle=True`` the learner in ``config`` is replaced by the true
    nuisance functions of ``scenario``.
    """
    if oracle:
        config = replace(config, learner=oracle_spec(scenario))
    beta0 = scenario.beta0
    rows, failures = [], []
    for r in range(replicates):
        data_rng, fit_seed = replicate_seeds(seed, r)
        dataset = gen_dataset(scenario, data_rng)
        try:
            fit = dml_fit(dataset, replace(config, seed=fit_seed))
        except PlmmError as exc:
            log.warning("replicate %d failed: %s", r, exc)
            failures.append({"replicate": r, "error": str(exc)})
            continue
        lo, hi = float(fit.ci_lower[0]), float(fit.ci_upper[0])
        rows.append({
            "replicate": r,
            "beta_hat": float(fit.beta_hat[0]),
            "se": float(fit.std_errors[0]),
            "ci_lo": lo,
            "ci_hi": hi,
            "covered": int(lo <= beta0 <= hi),
            "bias": float(fit.beta_hat[0]) - beta0,
        })
        if progress is not None:
            progress(r, rows[-1])
    return StudyResult(rows, failures)
