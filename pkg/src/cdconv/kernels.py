"""MCMC transition kernels with equilibrium ``p_theta``.

Kernels act on batches: ``x`` may be a single point ``(p,)`` or a stack of
independent chain states ``(n, p)``.  Row ``i`` of a batch consumes row ``i``
of each uniform/normal block drawn from the supplied generator, so a chain's
randomness depends only on the generator state and its index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, log_expit

from . import expfam, oracle, rng as rngmod
from .errors import InputError, UnsupportedFamilyError
from .expfam import Family

RBM_GIBBS = "rbm_gibbs"
GAUSSIAN_GIBBS = "gaussian_gibbs"
EXACT_RESAMPLE = "exact_resample"
KINDS = (RBM_GIBBS, GAUSSIAN_GIBBS, EXACT_RESAMPLE)

DENSE_LIMIT = 64


@dataclass(frozen=True, eq=False)
class Kernel:
    """A theta-indexed kernel.

    ``rbm_gibbs`` scans the hidden block given ``v`` and then the visible block
    given ``h``; ``gaussian_gibbs`` scans coordinates in index order;
    ``exact_resample`` ignores the current state and draws from ``p_theta``.
    """

    kind: str
    family: Family = field(repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown kernel kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == RBM_GIBBS and self.family.kind != expfam.RBM:
            raise InputError("rbm_gibbs requires the binary_rbm family")
        if self.kind == GAUSSIAN_GIBBS and self.family.kind != expfam.GAUSSIAN:
            raise InputError("gaussian_gibbs requires the gaussian_mean family")


def kernel_step(kernel: Kernel, theta, x, rng: np.random.Generator) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if kernel.kind == RBM_GIBBS:
        out = _rbm_gibbs(kernel.family, theta, xb, rng)
    elif kernel.kind == GAUSSIAN_GIBBS:
        out = _gaussian_gibbs(kernel.family, theta, xb, rng)
    else:
        out = expfam.draw(kernel.family, theta, xb.shape[0], rng)
    return out[0] if single else out


def m_step(kernel: Kernel, theta, x, m: int, rng: np.random.Generator) -> np.ndarray:
    if m < 1:
        raise InputError(f"m must be at least 1, got {m}")
    if kernel.kind == EXACT_RESAMPLE:
        # Only the last draw survives; one draw has the same law as m draws.
        return kernel_step(kernel, theta, x, rng)
    if kernel.kind == RBM_GIBBS:
        x = np.asarray(x, dtype=float)
        v, h = rbm_gibbs_run(kernel.family, np.asarray(theta, dtype=float), np.atleast_2d(x), m, rng)
        out = np.concatenate([v, h], axis=1).astype(float)
        return out[0] if x.ndim == 1 else out
    for _ in range(m):
        x = kernel_step(kernel, theta, x, rng)
    return x


def _rbm_gibbs(family: Family, theta, x, rng):
    v, h = rbm_gibbs_run(family, theta, x, 1, rng)
    return np.concatenate([v, h], axis=1).astype(float)


def _bit_codes(b: np.ndarray) -> np.ndarray:
    dtype = np.uint8 if b.shape[1] <= 8 else np.uint32
    code = np.zeros(b.shape[0], dtype=dtype)
    for k in range(b.shape[1]):
        code |= b[:, k].view(np.uint8).astype(dtype, copy=False) << dtype(k)
    return code


def _conditional_table(W: np.ndarray) -> np.ndarray:
    """``expit(pattern @ W)`` for every binary pattern, indexed by bit code."""
    k = W.shape[0]
    patterns = (np.arange(2**k)[:, None] >> np.arange(k)) & 1
    return expit(patterns.astype(float) @ W)


def rbm_gibbs_run(family: Family, theta, x, m: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """``m`` hidden-then-visible sweeps from the visible part of ``x``.

    Returns boolean ``(v, h)`` arrays.  The unit probabilities depend on the
    other layer only through its bit pattern, so they are looked up in a
    ``2^k``-row table; the uniforms are drawn exactly as in a direct sweep.
    """
    nv, nh = family.nv, family.nh
    W = theta.reshape(nh, nv)
    p_h, p_v = _conditional_table(W.T), _conditional_table(W)
    n = x.shape[0]
    v = x[:, :nv] > 0.5
    h = x[:, nv:] > 0.5
    for _ in range(m):
        code = _bit_codes(v)
        h = rng.random((n, nh)) < np.take(p_h, code, axis=0)
        code = _bit_codes(h)
        v = rng.random((n, nv)) < np.take(p_v, code, axis=0)
    return v, h


def _gaussian_gibbs(family: Family, theta, x, rng):
    Q = family.sigma0_inv
    mu = family.sigma0 @ theta
    x = x.copy()
    z = rng.standard_normal(x.shape)
    for k in range(family.p):
        dev = x - mu
        dev[:, k] = 0.0
        cond_mean = mu[k] - dev @ Q[k] / Q[k, k]
        x[:, k] = cond_mean + z[:, k] / np.sqrt(Q[k, k])
    return x


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    states: np.ndarray
    P: np.ndarray
    stationary: np.ndarray | None = None

    def power(self, m: int) -> np.ndarray:
        return np.linalg.matrix_power(self.P, m)


def _block_update(states, W, nv, hidden: bool) -> np.ndarray:
    """Exact matrix of one block update (hidden given visible or visible given hidden)."""
    v = states[:, :nv].astype(float)
    h = states[:, nv:].astype(float)
    if hidden:
        act, keep, target = v @ W.T, v, h
    else:
        act, keep, target = h @ W, h, v
    logp = log_expit(act) @ target.T + log_expit(-act) @ (1.0 - target).T
    same = np.all(keep[:, None, :] == keep[None, :, :], axis=-1)
    return np.where(same, np.exp(logp), 0.0)


def transition_matrix(kernel: Kernel, theta) -> TransitionMatrix:
    family = kernel.family
    if not family.is_discrete:
        raise UnsupportedFamilyError("transition matrices need the discrete binary_rbm family")
    theta = np.asarray(theta, dtype=float)
    table = family.table
    pi = oracle.exact_distribution(table, theta)
    if kernel.kind == EXACT_RESAMPLE:
        P = np.tile(pi, (table.size, 1))
    else:
        W = theta.reshape(family.nh, family.nv)
        P = _block_update(table.states, W, family.nv, hidden=True) @ \
            _block_update(table.states, W, family.nv, hidden=False)
    return TransitionMatrix(states=table.states, P=P, stationary=pi)


def _as_matrix(P) -> tuple[np.ndarray, np.ndarray | None]:
    if isinstance(P, TransitionMatrix):
        return P.P, P.stationary
    return np.asarray(P, dtype=float), None


def _check_stochastic(P: np.ndarray) -> None:
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise InputError("transition matrix must be square")
    if np.any(P < -1e-12) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-10:
        raise InputError("matrix is not row-stochastic")


def stationary_vector(P: np.ndarray) -> np.ndarray:
    w, vl = np.linalg.eig(P.T)
    k = np.argmin(np.abs(w - 1.0))
    pi = np.real(vl[:, k])
    return pi / pi.sum()


def spectral_alpha(P, method: str = "auto", tol: float = 1e-14,
                   max_iter: int = 1_000_000, seed: int = 0) -> float:
    """Second largest absolute eigenvalue of a row-stochastic matrix.

    The known eigenpair ``(1, pi)`` is deflated via ``D = P - 1 pi^T``, whose
    spectrum is that of ``P`` with the unit eigenvalue replaced by zero.
    ``method`` is ``"dense"`` (eigendecomposition of ``D``), ``"power"``
    (power iteration on ``D``) or ``"auto"`` (dense up to 64 states).
    """
    M, pi = _as_matrix(P)
    _check_stochastic(M)
    if pi is None:
        pi = stationary_vector(M)
    D = M - np.outer(np.ones(M.shape[0]), pi)
    if method == "auto":
        method = "dense" if M.shape[0] <= DENSE_LIMIT else "power"
    if method == "dense":
        return float(min(np.max(np.abs(np.linalg.eigvals(D))), 1.0))
    if method != "power":
        raise InputError(f"unknown method {method!r}")
    return _power_alpha(D, tol, max_iter, seed)


def _power_alpha(D: np.ndarray, tol: float, max_iter: int, seed: int) -> float:
    # Two-step ratio tolerates a +/- pair of dominant eigenvalues.
    x = np.random.default_rng(seed).standard_normal(D.shape[0])
    D2 = D @ D
    est = np.inf
    for _ in range(max_iter):
        nx = np.linalg.norm(x)
        if nx == 0.0:
            return 0.0
        x = x / nx
        y = D2 @ x
        new = np.sqrt(np.linalg.norm(y))
        if abs(new - est) <= tol * max(new, 1e-300):
            return float(min(new, 1.0))
        est, x = new, y
    return float(min(est, 1.0))


@dataclass(frozen=True)
class SpectralReport:
    grid: np.ndarray
    alpha_at: np.ndarray
    points_per_dim: int
    alpha_sup: float
    near_one: bool

    def as_dict(self) -> dict:
        return {"points_per_dim": self.points_per_dim, "alpha_sup": self.alpha_sup,
                "near_one": self.near_one, "n_points": int(self.grid.shape[0])}


def alpha_sup_over_grid(kernel: Kernel, domain: expfam.ParamDomain,
                        grid_points_per_dim: int) -> SpectralReport:
    grid = domain.grid(grid_points_per_dim)
    alphas = np.array([spectral_alpha(transition_matrix(kernel, th)) for th in grid])
    sup = float(alphas.max())
    return SpectralReport(grid=grid, alpha_at=alphas, points_per_dim=grid_points_per_dim,
                          alpha_sup=sup, near_one=sup >= 1 - 1e-6)


def gaussian_chain(kernel: Kernel, theta, length: int, seed: int, burn_in: int = 1000) -> np.ndarray:
    """Single long chain of ``length`` post-burn-in states started at the mean."""
    family = kernel.family
    theta = np.asarray(theta, dtype=float)
    g = rngmod.stream(seed, rngmod.ALPHA_CHAIN)
    total = length + burn_in
    if kernel.kind == EXACT_RESAMPLE:
        return expfam.draw(family, theta, total, g)[burn_in:]
    # Systematic-scan Gibbs is an affine recursion in the state; unroll it
    # coordinate by coordinate with pre-drawn noise.
    Q = family.sigma0_inv
    mu = family.sigma0 @ theta
    p = family.p
    sd = 1.0 / np.sqrt(np.diag(Q))
    coef = [[-Q[k, j] / Q[k, k] for j in range(p)] for k in range(p)]
    z = g.standard_normal((total, p)) * sd
    dev = [0.0] * p
    out = np.empty((total, p))
    mu_l = mu.tolist()
    for t in range(total):
        zt = z[t]
        for k in range(p):
            ck = coef[k]
            s = 0.0
            for j in range(p):
                if j != k:
                    s += ck[j] * dev[j]
            dev[k] = s + zt[k]
        out[t] = dev
    return out[burn_in:] + np.asarray(mu_l)


def autocorrelation(series: np.ndarray, max_lag: int) -> np.ndarray:
    s = series - series.mean()
    var = s @ s / len(s)
    return np.array([s[:-k] @ s[k:] / len(s) / var for k in range(1, max_lag + 1)])


def slowest_linear_statistic(chain: np.ndarray) -> np.ndarray:
    """Direction maximizing the symmetrized lag-1 autocorrelation (TICA)."""
    c = chain - chain.mean(axis=0)
    C0 = c.T @ c / len(c)
    C1 = c[:-1].T @ c[1:] / (len(c) - 1)
    C1 = 0.5 * (C1 + C1.T)
    L = np.linalg.cholesky(C0)
    Li = np.linalg.inv(L)
    w, V = np.linalg.eigh(Li @ C1 @ Li.T)
    return Li.T @ V[:, np.argmax(w)]


def fit_geometric_rate(acf: np.ndarray, n_samples: int) -> float:
    """Decay rate of ``acf[k-1] ~ c * rate**k`` fitted over lags 1..len(acf).

    Only the leading run of lags whose autocorrelation clears three standard
    errors of white noise (``3/sqrt(n)``) enters the weighted log-linear fit;
    with fewer than two such lags the lag-1 value itself is returned.
    """
    floor = 3.0 / np.sqrt(n_samples)
    lags = np.arange(1, len(acf) + 1)
    sig = acf > floor
    # Stop at the first insignificant lag so noise does not enter the fit.
    if not sig.all():
        sig[np.argmin(sig):] = False
    if sig.sum() < 2:
        return float(max(acf[0], 0.0))
    # Delta method: sd(log r_k) ~ sd(r_k) / r_k, so weight each lag by r_k.
    slope = np.polyfit(lags[sig], np.log(acf[sig]), 1, w=acf[sig])[0]
    return float(min(np.exp(slope), 1.0))


def gaussian_gibbs_alpha_estimate(sigma0, theta, chain_length: int, seed: int,
                                  kind: str = GAUSSIAN_GIBBS, max_lag: int = 10) -> float:
    if chain_length < 100_000:
        raise InputError("chain_length must be at least 1e5")
    family = expfam.Family.gaussian(sigma0)
    kernel = Kernel(kind, family)
    chain = gaussian_chain(kernel, theta, chain_length, seed)
    a = slowest_linear_statistic(chain)
    acf = autocorrelation(chain @ a, max_lag)
    return fit_geometric_rate(acf, len(chain))


def exact_alpha(kernel: Kernel, theta=None) -> float | None:
    """Closed-form alpha where one is known: 0 for exact resampling.

    Returns ``None`` when no closed form applies.
    """
    if kernel.kind == EXACT_RESAMPLE:
        return 0.0
    return None
