import numpy as np

from plmm_dml.dml import DmlConfig
from plmm_dml.learners import LearnerSpec
from plmm_dml.simulate import SimScenario
from plmm_dml.study import REPLICATE_FIELDS, StudyResult, replicate_seeds, run_study


def test_replicate_seeds_distinct_and_stable():
    a_rng, a_seed = replicate_seeds(1, 0)
    b_rng, b_seed = replicate_seeds(1, 0)
    assert a_seed == b_seed and a_rng.random() == b_rng.random()
    assert len({replicate_seeds(1, r)[1] for r in range(20)}) == 20


def test_summary_definitions():
    rows = [dict(replicate=i, beta_hat=b, se=0.1, ci_lo=b - 0.2, ci_hi=b + 0.2,
                 covered=int(b - 0.2 <= 0.5 <= b + 0.2), bias=b - 0.5)
            for i, b in enumerate([0.4, 0.55, 0.9, 0.5])]
    s = StudyResult(rows, []).summary
    assert s["coverage"] == 0.75
    assert s["median_bias"] == np.median([r["bias"] for r in rows])
    assert s["median_ci_length"] == 0.4 or abs(s["median_ci_length"] - 0.4) < 1e-15
    assert StudyResult([], [{"replicate": 0}]).summary["coverage"] is None


def test_run_study_oracle_small():
    calls = []
    res = run_study(SimScenario(n_groups=30), DmlConfig(repetitions=1,
                    learner=LearnerSpec(kind="linear")), 4, seed=3, oracle=True,
                    progress=lambda r, row: calls.append(r))
    assert calls == [0, 1, 2, 3] and not res.failures
    assert all(set(r) == set(REPLICATE_FIELDS) for r in res.rows)
    again = run_study(SimScenario(n_groups=30), DmlConfig(repetitions=1,
                      learner=LearnerSpec(kind="linear")), 4, seed=3, oracle=True)
    assert again.rows == res.rows
