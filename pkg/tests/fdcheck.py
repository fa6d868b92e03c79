"""Shared gradient-consistency harness."""
import numpy as np

from plmm_dml.data import Theta
from plmm_dml.lmm import log_likelihood, score

from conftest import random_residuals
from oracles import fd_gradient


def pack(theta):
    iu = np.triu_indices(theta.sigma_mat.shape[0])
    return np.concatenate([theta.beta, [theta.sigma2], theta.sigma_mat[iu]])


def unpack(vec, d, q):
    iu = np.triu_indices(q)
    s = np.zeros((q, q))
    s[iu] = vec[d + 1:]
    s = s + np.triu(s, 1).T
    return Theta(vec[:d], vec[d], s)


def random_config(rng):
    q = int(rng.integers(1, 4))
    d = int(rng.integers(1, 3))
    res = random_residuals(rng, int(rng.integers(1, 5)), q, d=d, n_max=6)
    a = rng.normal(size=(q, q))
    sigma_mat = a @ a.T / q + 0.1 * np.eye(q)
    theta = Theta(rng.normal(size=d), float(rng.uniform(0.1, 10.0)), sigma_mat)
    return res, theta


def gradient_error(res, theta):
    """Largest componentwise relative error of the score against FD."""
    d, q = res.d, res.q
    analytic = score(res, theta)
    numeric = fd_gradient(lambda v: log_likelihood(res, unpack(v, d, q)), pack(theta))
    rel = np.abs(numeric - analytic) / np.maximum(np.abs(analytic), 1e-6)
    return float(rel.max()), analytic, numeric
