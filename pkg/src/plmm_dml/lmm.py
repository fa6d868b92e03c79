"""Gaussian linear mixed-effects machinery on residualized data.

The working model for group ``i`` is ``r_y = r_x beta + z b + eps`` with
``cov(r_y) = sigma2 * V`` and ``V = z sigma_mat z^T + I``. Everything here
operates on a :class:`ResidualSet`; groups of equal size are stacked so
per-group linear algebra runs batched.

Score vectors are laid out as ``(beta, sigma2, vech(sigma_mat))`` where
``vech`` lists the upper triangle row by row: ``(0,0), (0,1), ..., (q-1,q-1)``.
The off-diagonal score entries are derivatives along the symmetric direction,
i.e. they carry both ``(k, l)`` and ``(l, k)`` contributions.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .data import Theta
from .exceptions import ConvergenceError, ConvergenceWarning, DataError, SingularDesignError

SIGMA2_FLOOR = 1e-12
SINGULAR_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class GroupResidual:
    group_id: Hashable
    r_x: np.ndarray
    r_y: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        r_x = np.asarray(self.r_x, dtype=np.float64)
        if r_x.ndim == 1:
            r_x = r_x.reshape(-1, 1)
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim == 1:
            z = z.reshape(-1, 1)
        r_y = np.asarray(self.r_y, dtype=np.float64).reshape(-1)
        if not (r_x.shape[0] == r_y.shape[0] == z.shape[0]):
            raise DataError(
                f"group {self.group_id!r}: residual shapes {r_x.shape}, {r_y.shape}, {z.shape} disagree"
            )
        for name, arr in (("r_x", r_x), ("r_y", r_y), ("z", z)):
            if not np.all(np.isfinite(arr)):
                raise DataError(f"group {self.group_id!r}: non-finite {name}")
        object.__setattr__(self, "r_x", r_x)
        object.__setattr__(self, "r_y", r_y)
        object.__setattr__(self, "z", z)


class ResidualSet:
    """Residualized groups of one evaluation fold.

    Reductions over groups run in a canonical order (group size, then
    ``repr(group_id)``), so results do not depend on the input order.
    """

    def __init__(self, groups, fold=None):
        self.groups = list(groups)
        self.fold = fold
        if not self.groups:
            raise DataError("empty residual set")
        d = {g.r_x.shape[1] for g in self.groups}
        q = {g.z.shape[1] for g in self.groups}
        if len(d) != 1 or len(q) != 1:
            raise DataError(f"inconsistent residual dimensions d={d}, q={q}")
        self.d = d.pop()
        self.q = q.pop()
        self.n_total = sum(g.r_y.shape[0] for g in self.groups)
        ordered = sorted(self.groups, key=lambda g: (g.r_y.shape[0], repr(g.group_id)))
        buckets = {}
        for g in ordered:
            buckets.setdefault(g.r_y.shape[0], []).append(g)
        self._buckets = [
            (
                np.stack([g.r_x for g in gs]),
                np.stack([g.r_y for g in gs]),
                np.stack([g.z for g in gs]),
            )
            for _, gs in sorted(buckets.items())
        ]

    def __len__(self):
        return len(self.groups)

    @classmethod
    def from_arrays(cls, r_x, r_y, z, group_ids, fold=None):
        """Split row-stacked residual arrays by group label."""
        r_x = np.asarray(r_x, dtype=np.float64)
        if r_x.ndim == 1:
            r_x = r_x[:, None]
        z = np.asarray(z, dtype=np.float64)
        if z.ndim == 1:
            z = z[:, None]
        r_y = np.asarray(r_y, dtype=np.float64)
        rows: dict = {}
        for i, gid in enumerate(group_ids):
            rows.setdefault(gid, []).append(i)
        return cls([GroupResidual(g, r_x[ix], r_y[ix], z[ix]) for g, ix in rows.items()], fold)


def build_v(z, sigma_mat):
    """``z @ sigma_mat @ z.T + I`` for one group (or a stack of groups)."""
    z = np.asarray(z, dtype=np.float64)
    sigma_mat = np.atleast_2d(np.asarray(sigma_mat, dtype=np.float64))
    zs = z @ sigma_mat @ np.swapaxes(z, -1, -2)
    return zs + np.eye(z.shape[-2])


class _Moments:
    """Sufficient quantities of a residual set at a fixed ``sigma_mat``."""

    def __init__(self, res: ResidualSet, sigma_mat):
        d = res.d
        self.res = res
        self.gram = np.zeros((d, d))
        self.cross = np.zeros(d)
        self.logdet = 0.0
        self._parts = []
        for r_x, r_y, z in res._buckets:
            v = build_v(z, sigma_mat)
            sign, logdet = np.linalg.slogdet(v)
            if np.any(sign <= 0):
                raise SingularDesignError("V_i is not positive definite")
            rhs = np.concatenate([r_x, r_y[..., None], z], axis=2)
            sol = np.linalg.solve(v, rhs)
            vx, vy, vz = sol[..., :d], sol[..., d], sol[..., d + 1:]
            self.logdet += logdet.sum()
            self.gram += np.einsum("bni,bnj->ij", r_x, vx)
            self.cross += np.einsum("bni,bn->i", r_x, vy)
            self._parts.append((r_x, r_y, z, vx, vy, vz))
        self.gram = 0.5 * (self.gram + self.gram.T)

    def beta_gls(self):
        gram = self.gram
        evals = np.linalg.eigvalsh(gram)
        top = evals.max() if evals.size else 0.0
        rank = int(np.sum(evals > SINGULAR_RTOL * max(top, 0.0))) if top > 0 else 0
        if rank < gram.shape[0]:
            raise SingularDesignError(
                f"GLS normal matrix has rank {rank} < {gram.shape[0]}: residualized "
                "X is collinear or there are too few observations",
                rank=rank, dim=gram.shape[0],
            )
        return np.linalg.solve(gram, self.cross)

    def at_beta(self, beta):
        """Quadratic form ``sum r'V^-1 r`` and the q x q pieces of the score."""
        q = self.res.q
        quad = 0.0
        ztvz = np.zeros((q, q))
        outer = np.zeros((q, q))
        for r_x, r_y, z, vx, vy, vz in self._parts:
            vr = vy - vx @ beta
            r = r_y - r_x @ beta
            quad += np.einsum("bn,bn->", r, vr)
            ztvz += np.einsum("bnk,bnl->kl", z, vz)
            u = np.einsum("bnk,bn->bk", z, vr)
            outer += u.T @ u
        ztvz = 0.5 * (ztvz + ztvz.T)
        return quad, ztvz, outer


def _vech(mat, offdiag_factor=1.0):
    q = mat.shape[0]
    iu = np.triu_indices(q)
    out = mat[iu].copy()
    out[iu[0] != iu[1]] *= offdiag_factor
    return out


def _theta_dims(res, theta):
    if theta.beta.shape[0] != res.d or theta.sigma_mat.shape[0] != res.q:
        raise DataError(
            f"theta dimensions (d={theta.beta.shape[0]}, q={theta.sigma_mat.shape[0]}) "
            f"do not match residuals (d={res.d}, q={res.q})"
        )


def log_likelihood(res: ResidualSet, theta: Theta) -> float:
    """Gaussian log-likelihood summed over groups, without additive constants."""
    _theta_dims(res, theta)
    mom = _Moments(res, theta.sigma_mat)
    quad, _, _ = mom.at_beta(theta.beta)
    return float(-0.5 * res.n_total * np.log(theta.sigma2) - 0.5 * mom.logdet
                 - quad / (2.0 * theta.sigma2))


def _sigma_gradient(ztvz, outer, sigma2):
    # d loglik / d sigma_mat[k, l], entries treated as independent
    return -0.5 * ztvz + outer / (2.0 * sigma2)


def score(res: ResidualSet, theta: Theta) -> np.ndarray:
    """Gradient of :func:`log_likelihood` in ``(beta, sigma2, vech(sigma_mat))``."""
    _theta_dims(res, theta)
    mom = _Moments(res, theta.sigma_mat)
    beta, s2 = theta.beta, theta.sigma2
    quad, ztvz, outer = mom.at_beta(beta)
    psi_beta = (mom.cross - mom.gram @ beta) / s2
    psi_s2 = -res.n_total / (2.0 * s2) + quad / (2.0 * s2 * s2)
    psi_sig = _vech(_sigma_gradient(ztvz, outer, s2), offdiag_factor=2.0)
    return np.concatenate([psi_beta, [psi_s2], psi_sig])


def solve_beta_gls(res: ResidualSet, sigma2, sigma_mat) -> np.ndarray:
    """GLS coefficient; ``sigma2`` cancels and is accepted for symmetry only."""
    del sigma2
    return _Moments(res, sigma_mat).beta_gls()


def estimate_t0(res: ResidualSet, sigma_mat) -> np.ndarray:
    """Average weighted Gram matrix ``(1/n_T) sum r_x' V^-1 r_x``."""
    return _Moments(res, sigma_mat).gram / res.n_total


def beta_covariance(res: ResidualSet, sigma2, sigma_mat) -> np.ndarray:
    """GLS covariance ``sigma2 * (sum r_x' V^-1 r_x)^-1`` of the coefficient."""
    mom = _Moments(res, sigma_mat)
    mom.beta_gls()  # raises on a singular design
    cov = sigma2 * np.linalg.inv(mom.gram)
    return 0.5 * (cov + cov.T)


@dataclass
class LmmFit:
    theta: Theta
    loglik: float
    t0_hat: np.ndarray
    beta_cov: np.ndarray
    converged: bool
    iterations: int
    score_norm: float = np.nan
    n_total: int = 0
    message: str = ""


# -- optimizer ---------------------------------------------------------------

def _chol_from_params(phi, q):
    chol = np.zeros((q, q))
    chol[np.tril_indices(q)] = phi
    diag = np.diag_indices(q)
    chol[diag] = np.exp(chol[diag])
    return chol


def _params_from_sigma(sigma_mat):
    q = sigma_mat.shape[0]
    chol = np.linalg.cholesky(sigma_mat)
    diag = np.diag_indices(q)
    chol[diag] = np.log(chol[diag])
    return chol[np.tril_indices(q)]


class _Profile:
    """Profiled log-likelihood in the log-Cholesky parameters of sigma_mat.

    ``beta`` and ``sigma2`` are set to their closed-form maximizers at every
    evaluation, so by the envelope theorem the gradient only involves the
    sigma_mat block of the score.
    """

    def __init__(self, res: ResidualSet):
        self.res = res
        self.q = res.q
        self.zero_residual = False

    def evaluate(self, phi):
        q, n = self.q, self.res.n_total
        chol = _chol_from_params(phi, q)
        sigma_mat = chol @ chol.T
        mom = _Moments(self.res, sigma_mat)
        beta = mom.beta_gls()
        quad, ztvz, outer = mom.at_beta(beta)
        self.zero_residual = quad <= SIGMA2_FLOOR * n
        sigma2 = max(quad / n, SIGMA2_FLOOR)
        loglik = -0.5 * n * np.log(sigma2) - 0.5 * mom.logdet - quad / (2.0 * sigma2)
        grad_sigma = _sigma_gradient(ztvz, outer, sigma2)
        grad_chol = 2.0 * grad_sigma @ chol
        diag = np.diag_indices(q)
        grad_chol[diag] *= chol[diag]
        grad_phi = grad_chol[np.tril_indices(q)]
        natural = _vech(grad_sigma, offdiag_factor=2.0)
        return {
            "loglik": loglik, "grad_phi": grad_phi, "natural": natural,
            "beta": beta, "sigma2": sigma2, "sigma_mat": sigma_mat, "moments": mom,
        }


def _finish(state, res, converged, iterations, message=""):
    mom = state["moments"]
    theta = Theta(state["beta"], state["sigma2"], state["sigma_mat"])
    t0 = mom.gram / res.n_total
    cov = state["sigma2"] * np.linalg.inv(mom.gram)
    return LmmFit(
        theta=theta,
        loglik=float(state["loglik"]),
        t0_hat=t0,
        beta_cov=0.5 * (cov + cov.T),
        converged=converged,
        iterations=iterations,
        score_norm=float(np.linalg.norm(state["natural"])),
        n_total=res.n_total,
        message=message,
    )


def fit_variance_components(res: ResidualSet, tol=None, max_iter=200, sigma_init=None,
                            raise_on_failure=True) -> LmmFit:
    """Maximum-likelihood fit of ``(beta, sigma2, sigma_mat)``.

    ``beta`` and ``sigma2`` are profiled out; the remaining log-Cholesky
    parameters of ``sigma_mat`` are optimized by BFGS with Armijo
    backtracking. Iteration stops when the score norm drops below ``tol``
    (default ``1e-6 * n_total``), when the gradient in the unconstrained
    parameters does (this covers estimates on the boundary of the PSD cone),
    when a step shorter than ``1e-10`` is taken, or when neither the quasi-Newton
    nor the steepest-ascent direction yields any increase.

    Raises
    ------
    SingularDesignError
        If the GLS normal matrix is singular.
    ConvergenceError
        After ``max_iter`` iterations without convergence; ``.best`` carries
        the last iterate.
    """
    n, q, d = res.n_total, res.q, res.d
    n_params = d + 1 + q * (q + 1) // 2
    if n < n_params + 1:
        raise DataError(
            f"{n} observations cannot identify {n_params} parameters (need at least {n_params + 1})"
        )
    tol = 1e-6 * n if tol is None else tol
    prof = _Profile(res)
    sigma0 = 0.1 * np.eye(q) if sigma_init is None else np.asarray(sigma_init, dtype=np.float64)
    phi = _params_from_sigma(sigma0)
    state = prof.evaluate(phi)
    if prof.zero_residual:
        warnings.warn(
            "residual variance is zero; sigma2 floored at 1e-12", ConvergenceWarning, stacklevel=2
        )
        return _finish(state, res, True, 0, "zero residual variance")

    # minimize f = -loglik / n
    f = -state["loglik"] / n
    g = -state["grad_phi"] / n
    h_inv = np.eye(phi.size)
    max_step = 5.0

    def converged(st, gphi):
        return (np.linalg.norm(st["natural"]) <= tol
                or np.linalg.norm(gphi) * n <= tol)

    if converged(state, g):
        return _finish(state, res, True, 0)

    for it in range(1, max_iter + 1):
        accepted = None
        for direction in (-h_inv @ g, -g):
            slope = g @ direction
            if slope >= 0:
                continue
            norm = np.linalg.norm(direction)
            step = min(1.0, max_step / norm) if norm > 0 else 1.0
            for _ in range(60):
                trial = phi + step * direction
                try:
                    st = prof.evaluate(trial)
                    f_new = -st["loglik"] / n
                except (np.linalg.LinAlgError, SingularDesignError, FloatingPointError):
                    f_new = np.inf
                if np.isfinite(f_new) and f_new <= f + 1e-4 * step * slope:
                    accepted = (trial, st, f_new)
                    break
                step *= 0.5
            if accepted is not None:
                break
            h_inv = np.eye(phi.size)
        if accepted is None:
            return _finish(state, res, True, it - 1, "no ascent direction")

        trial, st, f_new = accepted
        g_new = -st["grad_phi"] / n
        s = trial - phi
        y = g_new - g
        sy = s @ y
        if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            eye = np.eye(phi.size)
            if it == 1:
                h_inv = eye * (sy / (y @ y))
            h_inv = (eye - rho * np.outer(s, y)) @ h_inv @ (eye - rho * np.outer(y, s)) \
                + rho * np.outer(s, s)
        phi, state, f, g = trial, st, f_new, g_new
        if converged(state, g) or np.linalg.norm(s) <= 1e-10:
            return _finish(state, res, True, it)

    best = _finish(state, res, False, max_iter, "iteration limit")
    if raise_on_failure:
        raise ConvergenceError(
            f"variance components did not converge in {max_iter} iterations "
            f"(score norm {best.score_norm:.3g})",
            best=best,
        )
    return best
