import numpy as np
import pytest

from plmm_dml.data import validate_dataset
from plmm_dml.exceptions import DataError
from plmm_dml.learners import residualize
from plmm_dml.simulate import (
    SCENARIOS,
    SimScenario,
    build_z,
    eval_g_nonsmooth,
    eval_g_smooth,
    eval_h,
    gen_dataset,
    gen_group_sizes,
    oracle_nuisance,
)

from conftest import make_rng
from oracles import g_truth, h_truth, threshold_grid


def test_scenario_defaults():
    sc = SimScenario()
    assert (sc.n_groups, sc.base_n, sc.beta0, sc.sigma0) == (100, 15, 0.5, 1.0)
    assert sc.re_sds == (1.5, 1.8, 1.8)
    with pytest.raises(DataError):
        SimScenario("wiggly")


@pytest.mark.parametrize("w, expected", [((1, 1, 1), -3.0), ((-1, 0, 1), 2.0),
                                         ((0.5, 0.5, -2), -1.0)])
def test_h_examples(w, expected):
    assert eval_h(np.array(w, float)) == expected


@pytest.mark.parametrize("w, expected", [((1, 1, 2), 1.0), ((-1, 0, 1), -2.3)])
def test_g_examples(w, expected):
    assert eval_g_nonsmooth(np.array(w, float)) == expected


def test_h_output_set(rng):
    vals = set(np.unique(eval_h(rng.normal(size=(20000, 3)) * 2)))
    assert vals == {-3.0, 2.0, -1.0, -2.0, 1.0}


def test_piecewise_threshold_grid_against_truth_table():
    grid = threshold_grid()
    h = np.array([h_truth(*w) for w in grid])
    g = np.array([g_truth(*w) for w in grid])
    assert np.count_nonzero(eval_h(grid) != h) == 0
    assert np.count_nonzero(eval_g_nonsmooth(grid) != g) == 0


def test_g_cube_grid_against_truth_table():
    axis = np.linspace(-2, 2, 21)
    grid = np.array(np.meshgrid(axis, axis, axis, indexing="ij")).reshape(3, -1).T
    g = np.array([g_truth(*w) for w in grid])
    assert np.count_nonzero(eval_g_nonsmooth(grid) != g) == 0


def test_g_smooth_values():
    assert eval_g_smooth(np.zeros(3)) == -1.0
    for a, b in [(0.3, -1.2), (2.0, 0.5), (-0.7, -0.1)]:
        diff = eval_g_smooth(np.array([0, a, b])) - eval_g_smooth(np.array([0, b, a]))
        assert diff == pytest.approx(np.cos(b) - np.cos(a), abs=1e-14)


def test_g_smooth_bounded_on_unit_cube():
    w = make_rng(1).uniform(-1, 1, size=(10**6, 3))
    assert np.abs(eval_g_smooth(w)).max() <= 4.0


def test_g_smooth_is_differentiable(rng):
    w = rng.normal(size=(50, 3))
    h = 1e-6
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        fd = (eval_g_smooth(w + e) - eval_g_smooth(w - e)) / (2 * h)
        w1, w2, w3 = w.T
        exact = [2 * np.cos(w1) + np.sin(w1 + w2), w3 + np.sin(w1 + w2), w2][j]
        np.testing.assert_allclose(fd, exact, atol=1e-8)


@pytest.mark.parametrize("kind, support", [("nonsmooth_balanced", range(12, 19)),
                                           ("nonsmooth_unbalanced", range(1, 30))])
def test_group_size_support_and_uniformity(kind, support):
    sizes = gen_group_sizes(SimScenario(kind, n_groups=10**5), make_rng(5))
    assert set(np.unique(sizes)) == set(support)
    k = len(support)
    counts = np.bincount(sizes - support[0], minlength=k)
    p = 1 / k
    band = 3 * np.sqrt(10**5 * p * (1 - p))
    assert np.all(np.abs(counts - 10**5 * p) <= band)


def test_build_z():
    np.testing.assert_array_equal(build_z(4), [[1, 0, 1], [1, 0, 1], [0, 1, 1], [0, 1, 1]])
    np.testing.assert_array_equal(build_z(1), [[0, 1, 1]])
    for n in range(1, 30):
        np.testing.assert_array_equal(build_z(n).sum(axis=0), [n // 2, (n + 1) // 2, n])
    with pytest.raises(DataError):
        build_z(0)


@pytest.mark.parametrize("kind", SCENARIOS)
def test_gen_dataset_shapes_and_validity(kind):
    ds = gen_dataset(SimScenario(kind, n_groups=30), make_rng(2))
    assert (len(ds), ds.d, ds.v, ds.q) == (30, 1, 3, 3)
    assert validate_dataset(ds).n_total == ds.n_total
    for g in ds.groups:
        np.testing.assert_array_equal(g.z, build_z(g.n))


def test_gen_dataset_deterministic():
    sc = SimScenario(n_groups=20)
    a, b = gen_dataset(sc, make_rng(4)), gen_dataset(sc, make_rng(4))
    for ga, gb in zip(a.groups, b.groups):
        for name in ("y", "x", "w", "z"):
            assert np.array_equal(getattr(ga, name), getattr(gb, name))


def test_scenario_changes_only_g_and_sizes():
    base = gen_dataset(SimScenario("nonsmooth_balanced", n_groups=20), make_rng(6))
    smooth = gen_dataset(SimScenario("smooth_balanced", n_groups=20), make_rng(6))
    unbal = gen_dataset(SimScenario("nonsmooth_unbalanced", n_groups=20), make_rng(6))
    for a, b, c in zip(base.groups, smooth.groups, unbal.groups):
        assert np.array_equal(a.w, b.w) and np.array_equal(a.x, b.x)
        np.testing.assert_allclose(a.y - eval_g_nonsmooth(a.w), b.y - eval_g_smooth(b.w),
                                   atol=1e-12)
        m = min(a.n, c.n)
        assert np.array_equal(a.w[:m], c.w[:m])


def test_x_conditional_mean_is_h():
    ds = gen_dataset(SimScenario(n_groups=7000), make_rng(7))
    w = np.vstack([g.w for g in ds.groups])
    x = np.concatenate([g.x[:, 0] for g in ds.groups])
    assert len(x) >= 10**5 * 0.8
    resid = x - eval_h(w)
    assert abs(resid.mean()) <= 3 / np.sqrt(len(resid))
    assert resid.std() == pytest.approx(1.0, abs=0.02)


def test_response_variance_on_first_level_rows():
    # rows with z = (1, 0, 1): var(Y | W, X) = 1.5^2 + 1.8^2 + 1 = 6.49
    sc = SimScenario(n_groups=20000)
    ds = gen_dataset(sc, make_rng(8))
    first = np.array([g.y[0] - 0.5 * g.x[0, 0] - eval_g_nonsmooth(g.w[:1])[0]
                      for g in ds.groups])
    assert first.var() == pytest.approx(1.5**2 + 1.8**2 + 1.0, rel=0.05)


def test_oracle_nuisance():
    sc = SimScenario()
    model = oracle_nuisance(sc)
    w = make_rng(9).normal(size=(200, 3))
    np.testing.assert_allclose(model.predict_y(w) - 0.5 * model.predict_x(w)[:, 0],
                               eval_g_nonsmooth(w), atol=1e-15)
    one = np.array([[1.0, 1.0, 2.0]])
    assert model.predict_x(one)[0, 0] == -3.0
    assert model.predict_y(one)[0] == -0.5


def test_oracle_residual_mean():
    sc = SimScenario(n_groups=7000)
    ds = gen_dataset(sc, make_rng(10))
    res = residualize(oracle_nuisance(sc), ds.groups)
    r_x = np.concatenate([g.r_x[:, 0] for g in res.groups])
    assert abs(r_x.mean()) <= 3 / np.sqrt(len(r_x))
