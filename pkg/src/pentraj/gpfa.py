"""Gaussian-process factor analysis with exact EM fitting.

Observation model per timestep: y_t = C x_t + d + eps, eps ~ N(0, diag(R)).
Each latent dimension follows an independent zero-mean GP over timesteps
with a squared-exponential kernel of unit marginal variance,

    K[t1, t2] = (1 - sigma_n2) * exp(-(t1 - t2)^2 / (2 tau_i^2)) + sigma_n2 * delta,

so only the timescales tau are learned for the state model.  The E-step
computes the exact Gaussian posterior of the stacked latent vector given
all T observations of a trial (smoothing); the M-step updates [C d]
jointly by expected least squares, R by expected residual variances, and
tau by backtracked gradient ascent on the expected log prior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .tensorio import load_tensors, save_tensors

DEFAULT_SIGMA_N2 = 1e-3
DEFAULT_TAU_INIT = 20.0
DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-6
RANK_CUTOFF = 1e-10
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class GpfaModel:
    C: np.ndarray          # q x p loading
    d: np.ndarray          # q offset
    R: np.ndarray          # q diagonal observation noise variances
    tau: np.ndarray        # p GP timescales, in timesteps
    sigma_n2: float = DEFAULT_SIGMA_N2

    @property
    def q(self) -> int:
        return self.C.shape[0]

    @property
    def p(self) -> int:
        return self.C.shape[1]

    def save(self, path):
        save_tensors(
            path,
            {"C": self.C, "d": self.d, "R": self.R, "tau": self.tau},
            scalars={"sigma_n2": float(self.sigma_n2)},
            kind="gpfa",
        )

    @classmethod
    def load(cls, path):
        tensors, scalars = load_tensors(path, kind="gpfa")
        return cls(
            C=tensors["C"],
            d=tensors["d"],
            R=tensors["R"],
            tau=tensors["tau"],
            sigma_n2=float(scalars["sigma_n2"]),
        )


@dataclass
class Posterior:
    mean: np.ndarray       # T x p posterior mean
    cov: np.ndarray        # T x p x p per-timestep posterior covariance blocks


@dataclass
class FitReport:
    loglik_per_iter: list
    iterations: int
    converged: bool

    def to_dict(self):
        return {
            "loglik_per_iter": [float(v) for v in self.loglik_per_iter],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
        }


def gp_kernel(tau_i: float, sigma_n2: float, T: int) -> np.ndarray:
    """T x T squared-exponential kernel with unit diagonal."""
    if T < 1:
        raise ValueError("T must be >= 1")
    t = np.arange(T, dtype=np.float64)
    diff = t[:, None] - t[None, :]
    K = (1.0 - sigma_n2) * np.exp(-(diff**2) / (2.0 * tau_i**2))
    K[np.diag_indices(T)] += sigma_n2
    return K


def _inv_pd(m: np.ndarray):
    """Inverse and log-determinant of a symmetric positive definite matrix."""
    L = linalg.cholesky(m, lower=True)
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    inv, info = linalg.lapack.dpotri(L, lower=1)
    if info != 0:
        raise linalg.LinAlgError(f"dpotri failed with info={info}")
    inv = np.tril(inv) + np.tril(inv, -1).T
    return inv, logdet


def _kernel_inverses(tau: np.ndarray, sigma_n2: float, T: int):
    """Per-latent kernel inverses and the total log-determinant."""
    inverses = []
    logdet = 0.0
    for tau_i in tau:
        K = gp_kernel(float(tau_i), sigma_n2, T)
        inv, ld = _inv_pd(K)
        inverses.append(inv)
        logdet += ld
    return inverses, logdet


def _posterior_precision(kernel_inverses, c_rinv_c: np.ndarray, T: int):
    """Tp x Tp posterior precision, time-major latent stacking."""
    p = c_rinv_c.shape[0]
    M = np.zeros((T * p, T * p))
    for i, kinv in enumerate(kernel_inverses):
        M[i::p, i::p] = kinv
    for t in range(T):
        M[t * p : (t + 1) * p, t * p : (t + 1) * p] += c_rinv_c
    return M


def _group_by_length(trials):
    groups = {}
    for idx, y in enumerate(trials):
        groups.setdefault(y.shape[0], []).append(idx)
    return groups


def _check_trials(trials, q=None):
    arrays = []
    for y in trials:
        y = np.asarray(y, dtype=np.float64)
        if y.ndim != 2 or y.shape[0] < 1:
            raise ValueError("each trial must be a T x q matrix")
        if not np.all(np.isfinite(y)):
            raise ValueError("non-finite input in trial data")
        if q is None:
            q = y.shape[1]
        elif y.shape[1] != q:
            raise ValueError("all trials must share the column count q")
        arrays.append(y)
    if not arrays:
        raise ValueError("no trials given")
    return arrays, q


def log_likelihood(model: GpfaModel, trials) -> float:
    """Sum over trials of the log marginal density of the stacked observations."""
    trials, q = _check_trials(trials, q=model.q)
    p = model.p
    rinv = 1.0 / model.R
    c_rinv = model.C.T * rinv[None, :]
    c_rinv_c = c_rinv @ model.C
    c_rinv_c = 0.5 * (c_rinv_c + c_rinv_c.T)
    logdet_r = float(np.sum(np.log(model.R)))

    ll = 0.0
    for T, idxs in _group_by_length(trials).items():
        kinvs, logdet_k = _kernel_inverses(model.tau, model.sigma_n2, T)
        M = _posterior_precision(kinvs, c_rinv_c, T)
        L = linalg.cholesky(M, lower=True)
        logdet_m = 2.0 * float(np.sum(np.log(np.diag(L))))
        const = -T * logdet_r - logdet_k - logdet_m - q * T * _LOG_2PI
        for idx in idxs:
            diff = trials[idx] - model.d[None, :]
            term1 = (diff @ c_rinv.T).ravel()
            solved = linalg.cho_solve((L, True), term1)
            quad = float(np.sum(diff * diff * rinv[None, :])) - float(term1 @ solved)
            ll += 0.5 * (const - quad)
    return ll


def infer(model: GpfaModel, trial) -> Posterior:
    """Exact Gaussian posterior of the latent trajectory given one trial."""
    y = np.asarray(trial, dtype=np.float64)
    if y.ndim != 2 or y.shape[1] != model.q:
        raise ValueError(f"trial must be T x {model.q}")
    if not np.all(np.isfinite(y)):
        raise ValueError("non-finite input in trial data")
    T = y.shape[0]
    p = model.p
    rinv = 1.0 / model.R
    c_rinv = model.C.T * rinv[None, :]
    c_rinv_c = c_rinv @ model.C
    c_rinv_c = 0.5 * (c_rinv_c + c_rinv_c.T)

    kinvs, _ = _kernel_inverses(model.tau, model.sigma_n2, T)
    M = _posterior_precision(kinvs, c_rinv_c, T)
    minv, _ = _inv_pd(M)
    term1 = ((y - model.d[None, :]) @ c_rinv.T).ravel()
    mean = (minv @ term1).reshape(T, p)
    cov = np.empty((T, p, p))
    for t in range(T):
        cov[t] = minv[t * p : (t + 1) * p, t * p : (t + 1) * p]
    return Posterior(mean=mean, cov=cov)


@dataclass
class OrthTrajectory:
    values: np.ndarray            # T x p, dimensions ordered by singular value
    singular_values: np.ndarray   # p, non-increasing


def orthonormalize(model: GpfaModel, posterior_mean: np.ndarray) -> OrthTrajectory:
    """Re-express latents through the SVD of the loading matrix.

    With C = U S V^T the orthonormalized state is x~ = S V^T x, ordered by
    singular value, so that C x = U x~ exactly and the dimensions are
    observation-space orthonormal.
    """
    _, svals, vt = np.linalg.svd(model.C, full_matrices=False)
    x = np.atleast_2d(posterior_mean)
    values = (x @ vt.T) * svals[None, :]
    return OrthTrajectory(values=values, singular_values=svals)


def orthonormal_basis(model: GpfaModel) -> np.ndarray:
    """The observation-space basis U from C = U S V^T."""
    u, _, _ = np.linalg.svd(model.C, full_matrices=False)
    return u


def project(model: GpfaModel, trial, k: int) -> np.ndarray:
    """Posterior mean -> orthonormalized trajectory -> first k dimensions."""
    if not 1 <= k <= model.p:
        raise ValueError(f"k out of range: need 1 <= k <= {model.p}, got {k}")
    post = infer(model, trial)
    return orthonormalize(model, post.mean).values[:, :k]


def _factor_analysis_init(centered: np.ndarray, p: int, seed, iterations: int = 50):
    """Static factor analysis warm start for C and R (EM, seeded random start)."""
    n, q = centered.shape
    rng = np.random.default_rng(seed)
    var = centered.var(axis=0, ddof=1)
    var_floor = np.maximum(1e-10 * var, 1e-12)
    C = rng.standard_normal((q, p)) * math.sqrt(max(float(var.mean()), 1e-12) / p)
    R = np.maximum(var.copy(), 1e-8)
    yty_diag = np.sum(centered**2, axis=0)
    for _ in range(iterations):
        W = C / R[:, None]                      # q x p, R^-1 C
        G = np.eye(p) + C.T @ W
        G = 0.5 * (G + G.T)
        ginv, _ = _inv_pd(G)
        ex = centered @ W @ ginv                # n x p posterior means
        sxx = n * ginv + ex.T @ ex
        syx = centered.T @ ex                   # q x p
        C = linalg.solve(sxx, syx.T, assume_a="sym").T
        R = np.maximum((yty_diag - np.sum(C * syx, axis=1)) / n, var_floor)
    return C, R


class _EStepStats:
    """Sufficient statistics accumulated over all trials in one E-step."""

    def __init__(self, p: int, q: int):
        self.sxx = np.zeros((p, p))
        self.sx = np.zeros(p)
        self.syx = np.zeros((q, p))
        self.sy = np.zeros(q)
        self.syy_diag = np.zeros(q)
        self.t_total = 0
        self.prior = {}     # T -> (n_trials, list over latents of summed E[x_i x_i^T])


def _estep(trials, C, d, R, tau, sigma_n2):
    """Posterior statistics and the log likelihood at the current parameters."""
    q, p = C.shape
    rinv = 1.0 / R
    c_rinv = C.T * rinv[None, :]
    c_rinv_c = c_rinv @ C
    c_rinv_c = 0.5 * (c_rinv_c + c_rinv_c.T)
    logdet_r = float(np.sum(np.log(R)))

    stats = _EStepStats(p, q)
    ll = 0.0
    for T, idxs in _group_by_length(trials).items():
        kinvs, logdet_k = _kernel_inverses(tau, sigma_n2, T)
        M = _posterior_precision(kinvs, c_rinv_c, T)
        L = linalg.cholesky(M, lower=True)
        logdet_m = 2.0 * float(np.sum(np.log(np.diag(L))))
        minv, info = linalg.lapack.dpotri(L, lower=1)
        if info != 0:
            raise linalg.LinAlgError(f"dpotri failed with info={info}")
        minv = np.tril(minv) + np.tril(minv, -1).T

        n_tr = len(idxs)
        Y = np.stack([trials[i] for i in idxs])            # n_tr x T x q
        diff = Y - d[None, None, :]
        term1 = np.einsum("ntq,pq->ntp", diff, c_rinv).reshape(n_tr, T * p)
        means_flat = term1 @ minv                          # n_tr x Tp (minv symmetric)
        means = means_flat.reshape(n_tr, T, p)

        vsm_sum = np.zeros((p, p))
        for t in range(T):
            vsm_sum += minv[t * p : (t + 1) * p, t * p : (t + 1) * p]
        stats.sxx += n_tr * vsm_sum + np.einsum("nti,ntj->ij", means, means)
        stats.sx += means.sum(axis=(0, 1))
        stats.syx += np.einsum("ntq,ntp->qp", Y, means)
        stats.sy += Y.sum(axis=(0, 1))
        stats.syy_diag += np.einsum("ntq,ntq->q", Y, Y)
        stats.t_total += n_tr * T

        prior_cov = []
        for i in range(p):
            vsm_gp = minv[i::p, i::p]
            mi = means[:, :, i]
            prior_cov.append(n_tr * vsm_gp + mi.T @ mi)
        stats.prior[T] = (n_tr, prior_cov)

        const = -T * logdet_r - logdet_k - logdet_m - q * T * _LOG_2PI
        quad = float(np.sum(diff * diff * rinv[None, None, :])) - float(
            np.sum(term1 * means_flat)
        )
        ll += 0.5 * (n_tr * const - quad)
    return stats, ll


def _mstep_observation(stats: _EStepStats, r_floor: np.ndarray):
    p = stats.sxx.shape[0]
    gram = np.zeros((p + 1, p + 1))
    gram[:p, :p] = stats.sxx
    gram[:p, p] = stats.sx
    gram[p, :p] = stats.sx
    gram[p, p] = stats.t_total
    rhs = np.concatenate([stats.syx, stats.sy[:, None]], axis=1)   # q x (p+1)
    cd = linalg.solve(gram, rhs.T, assume_a="sym").T
    C = cd[:, :p]
    d = cd[:, p]
    r = (stats.syy_diag - np.sum(cd * rhs, axis=1)) / stats.t_total
    R = np.maximum(r, r_floor)
    return C, d, R


def _expected_log_prior(log_tau: float, sigma_n2: float, prior_stats) -> float:
    """Expected GP log prior of one latent, up to constants, at a timescale."""
    tau = math.exp(log_tau)
    total = 0.0
    for T, (n_tr, s) in prior_stats.items():
        K = gp_kernel(tau, sigma_n2, T)
        L = linalg.cholesky(K, lower=True)
        logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
        total += -0.5 * (float(np.trace(linalg.cho_solve((L, True), s))) + n_tr * logdet)
    return total


def _update_tau(tau, sigma_n2: float, prior, max_backtracks: int = 10):
    """One gradient-ascent step on the expected log prior wrt log tau.

    The step is accepted only if it improves the objective; otherwise it
    is halved, up to max_backtracks times, falling back to the current
    value.  This keeps the EM objective monotone.
    """
    new_tau = tau.copy()
    for i in range(tau.shape[0]):
        stats_i = {T: (n_tr, s[i]) for T, (n_tr, s) in prior.items()}
        log_tau = math.log(tau[i])
        grad = 0.0
        for T, (n_tr, s) in stats_i.items():
            K = gp_kernel(float(tau[i]), sigma_n2, T)
            kinv, _ = _inv_pd(K)
            t = np.arange(T, dtype=np.float64)
            diff2 = (t[:, None] - t[None, :]) ** 2
            dk = (1.0 - sigma_n2) * np.exp(-diff2 / (2.0 * tau[i] ** 2)) * (diff2 / tau[i] ** 2)
            inner = kinv @ s @ kinv - n_tr * kinv
            grad += 0.5 * float(np.sum(inner * dk))
        if grad == 0.0:
            continue
        current = _expected_log_prior(log_tau, sigma_n2, stats_i)
        step = 1.0 / max(1.0, abs(grad))
        for _ in range(max_backtracks):
            candidate = log_tau + step * grad
            if _expected_log_prior(candidate, sigma_n2, stats_i) >= current:
                new_tau[i] = math.exp(candidate)
                break
            step *= 0.5
    return new_tau


def fit(
    trials,
    p: int,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    seed=0,
    tau_init: float = DEFAULT_TAU_INIT,
    sigma_n2: float = DEFAULT_SIGMA_N2,
    fa_iterations: int = 50,
):
    """Fit a GPFA model to a list of T_m x q trials by EM.

    Returns (GpfaModel, FitReport).  The log likelihood recorded per
    iteration is evaluated at the parameters entering the iteration, so
    the sequence is non-decreasing for this exact EM.

    Raises if p is out of range or the pooled sample covariance of the
    trials is numerically rank deficient (constant or duplicated unit
    columns; see the preprocessing module).
    """
    trials, q = _check_trials(trials)
    if p < 1:
        raise ValueError("p must be >= 1")
    if p > q:
        raise ValueError(f"p must not exceed the unit count: {p} > {q}")
    pooled = np.vstack(trials)
    if pooled.shape[0] < 2:
        raise ValueError("need at least 2 pooled timesteps")
    cov = np.cov(pooled, rowvar=False, ddof=1).reshape(q, q)
    svals = np.linalg.svd(cov, compute_uv=False)
    if svals[0] == 0.0 or np.sum(svals > RANK_CUTOFF * svals[0]) < q:
        raise ValueError(
            "covariance rank deficiency: pooled observation covariance is singular; "
            "drop constant or duplicated units before fitting"
        )

    d = pooled.mean(axis=0)
    C, R = _factor_analysis_init(pooled - d[None, :], p, seed, iterations=fa_iterations)
    tau = np.full(p, float(tau_init))
    r_floor = np.maximum(1e-10 * np.diag(cov), 1e-12)

    lls = []
    converged = False
    for _ in range(max_iter):
        stats, ll = _estep(trials, C, d, R, tau, sigma_n2)
        if not math.isfinite(ll):
            raise FloatingPointError("log likelihood became non-finite during EM")
        lls.append(ll)
        C, d, R = _mstep_observation(stats, r_floor)
        tau = _update_tau(tau, sigma_n2, stats.prior)
        if len(lls) >= 2:
            improvement = lls[-1] - lls[-2]
            if improvement < tol * max(1.0, abs(lls[-2])):
                converged = True
                break
    model = GpfaModel(C=C, d=d, R=R, tau=tau, sigma_n2=sigma_n2)
    return model, FitReport(loglik_per_iter=lls, iterations=len(lls), converged=converged)
