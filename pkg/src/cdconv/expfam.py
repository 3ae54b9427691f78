"""Exponential families ``p_theta(x) = c(x) exp(theta . phi(x) - Lambda(theta))``.

Two concrete families are supported:

``gaussian_mean``
    ``N(Sigma0 theta, Sigma0)`` on R^p with known covariance.  The carrier is
    the centered ``N(0, Sigma0)`` density and ``phi(x) = x``, so
    ``Lambda(theta) = theta^T Sigma0 theta / 2`` and ``mu(theta) = Sigma0 theta``.

``binary_rbm``
    Fully observed binary RBM with zero biases.  A data point is a complete
    configuration ``x = (v, h)`` in ``{0,1}^(nv+nh)`` (visible bits first) and
    ``phi(x) = vec(h v^T)``, ordered ``(h1v1, h1v2, ..., h2v1, ...)``.
    Moments come from exact enumeration (see :mod:`cdconv.oracle`).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import oracle, rng as rngmod
from .errors import ConvergenceError, InputError, NoInteriorMLEError

GAUSSIAN = "gaussian_mean"
RBM = "binary_rbm"


@dataclass(frozen=True, eq=False)
class Family:
    kind: str
    d: int
    p: int
    stat_bound_C: float
    sigma0: np.ndarray | None = None
    nv: int | None = None
    nh: int | None = None

    @classmethod
    def gaussian(cls, sigma0, stat_bound_C: float = 6.0) -> "Family":
        sigma0 = np.array(sigma0, dtype=float)
        if sigma0.ndim != 2 or sigma0.shape[0] != sigma0.shape[1]:
            raise InputError(f"Sigma0 must be square, got shape {sigma0.shape}")
        if not np.allclose(sigma0, sigma0.T, rtol=0, atol=1e-12):
            raise InputError("Sigma0 must be symmetric")
        if np.linalg.eigvalsh(sigma0).min() <= 0:
            raise InputError("Sigma0 must be positive definite")
        if stat_bound_C <= 0:
            raise InputError("stat_bound_C must be positive")
        sigma0.setflags(write=False)
        p = sigma0.shape[0]
        return cls(kind=GAUSSIAN, d=p, p=p, stat_bound_C=float(stat_bound_C), sigma0=sigma0)

    @classmethod
    def rbm(cls, nv: int = 2, nh: int = 2) -> "Family":
        if nv < 1 or nh < 1:
            raise InputError("nv and nh must be positive")
        oracle.state_table(nv, nh)  # enforces the enumeration cap early
        return cls(kind=RBM, d=nv * nh, p=nv + nh, stat_bound_C=1.0, nv=nv, nh=nh)

    @property
    def is_discrete(self) -> bool:
        return self.kind == RBM

    @property
    def table(self) -> oracle.StateTable:
        if self.kind != RBM:
            raise InputError("state table only exists for binary_rbm")
        return oracle.state_table(self.nv, self.nh)

    @cached_property
    def sigma0_inv(self) -> np.ndarray:
        return np.linalg.inv(self.sigma0)

    def describe(self) -> dict:
        if self.kind == GAUSSIAN:
            return {"kind": self.kind, "Sigma0": self.sigma0.tolist(),
                    "stat_bound_C": self.stat_bound_C}
        return {"kind": self.kind, "nv": self.nv, "nh": self.nh}


@dataclass(frozen=True, eq=False)
class ParamDomain:
    """Axis-aligned box ``[lower, upper]`` standing in for the compact set Theta."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=float).ravel()
        hi = np.array(self.upper, dtype=float).ravel()
        if lo.shape != hi.shape:
            raise InputError("domain bounds differ in length")
        if not np.all(lo < hi):
            raise InputError("domain requires lower < upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def box(cls, d: int, half_width: float, center=0.0) -> "ParamDomain":
        c = np.broadcast_to(np.asarray(center, dtype=float), (d,))
        return cls(c - half_width, c + half_width)

    @classmethod
    def default_for(cls, family: Family) -> "ParamDomain":
        if family.kind == GAUSSIAN:
            return cls.box(family.d, 4.0)
        # On [0,1]^d the RBM covariance stays well conditioned (lambda_min ~ 0.03);
        # wider boxes push lambda_min toward zero and the drift condition fails.
        return cls(np.zeros(family.d), np.ones(family.d))

    @property
    def d(self) -> int:
        return self.lower.size

    def contains(self, theta, strict: bool = False) -> bool:
        theta = np.asarray(theta, dtype=float)
        if strict:
            return bool(np.all(theta > self.lower) and np.all(theta < self.upper))
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def clamp(self, theta) -> np.ndarray:
        return np.clip(theta, self.lower, self.upper)

    def axes(self, points_per_dim: int) -> list[np.ndarray]:
        return [np.linspace(lo, hi, points_per_dim) for lo, hi in zip(self.lower, self.upper)]

    def grid(self, points_per_dim: int) -> np.ndarray:
        """Cartesian grid as a ``(points_per_dim**d, d)`` array."""
        mesh = np.meshgrid(*self.axes(points_per_dim), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def uniform(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(size, self.d))


@dataclass(frozen=True, eq=False)
class DataSample:
    points: np.ndarray
    family: Family = field(repr=False)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[None, :]
        if pts.ndim != 2 or pts.shape[0] < 1:
            raise InputError("data sample needs at least one point")
        if pts.shape[1] != self.family.p:
            raise InputError(
                f"data points have dimension {pts.shape[1]}, family expects {self.family.p}")
        if self.family.is_discrete and not np.all((pts == 0) | (pts == 1)):
            raise InputError("binary_rbm data must be 0/1 configurations")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @cached_property
    def phi(self) -> np.ndarray:
        return suff_stat(self.family, self.points)

    @cached_property
    def phibar(self) -> np.ndarray:
        return self.phi.mean(axis=0)

    @cached_property
    def state_index(self) -> np.ndarray:
        return self.family.table.index_of(self.points)


def _theta(family: Family, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (family.d,):
        raise InputError(f"theta must have length {family.d}, got shape {theta.shape}")
    if not np.all(np.isfinite(theta)):
        raise InputError("theta must be finite")
    return theta


def suff_stat(family: Family, x) -> np.ndarray:
    """Sufficient statistic of one point ``(p,)`` or a batch ``(n, p)``."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != family.p:
        raise InputError(f"point dimension {x.shape[-1]} != {family.p}")
    if family.kind == GAUSSIAN:
        return x.copy()
    return oracle.rbm_phi(x, family.nv, family.nh)


def cumulant(family: Family, theta) -> float:
    theta = _theta(family, theta)
    if family.kind == GAUSSIAN:
        return 0.5 * float(theta @ family.sigma0 @ theta)
    return oracle.log_partition(family.table, theta)


def mean_param(family: Family, theta) -> np.ndarray:
    theta = _theta(family, theta)
    if family.kind == GAUSSIAN:
        return family.sigma0 @ theta
    return oracle.exact_moments(family.table, theta)[0]


def covariance(family: Family, theta) -> np.ndarray:
    theta = _theta(family, theta)
    if family.kind == GAUSSIAN:
        return np.array(family.sigma0)
    return oracle.exact_moments(family.table, theta)[1]


def log_carrier(family: Family, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if family.kind == RBM:
        return np.zeros(points.shape[0])
    _, logdet = np.linalg.slogdet(2 * np.pi * family.sigma0)
    quad = np.einsum("ij,jk,ik->i", points, family.sigma0_inv, points)
    return -0.5 * quad - 0.5 * logdet


def log_likelihood(family: Family, data: DataSample, theta) -> float:
    theta = _theta(family, theta)
    carrier = float(log_carrier(family, data.points).mean())
    return carrier + float(theta @ data.phibar) - cumulant(family, theta)


def exact_gradient(family: Family, data: DataSample, theta) -> np.ndarray:
    return data.phibar - mean_param(family, theta)


def mle(family: Family, data: DataSample, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Moment-matching MLE by damped Newton.

    Raises
    ------
    NoInteriorMLEError
        Some coordinate of the RBM sample mean is exactly 0 or 1.
    ConvergenceError
        Residual still above ``tol`` after ``max_iter`` iterations.
    """
    target = data.phibar
    if family.kind == GAUSSIAN:
        return family.sigma0_inv @ target
    if np.any(target <= 0) or np.any(target >= 1):
        raise NoInteriorMLEError(
            f"sample mean of phi {target.tolist()} touches the boundary of [0,1]^d")

    theta = np.zeros(family.d)
    mu, cov = oracle.exact_moments(family.table, theta)
    resid = np.linalg.norm(target - mu)
    for _ in range(max_iter):
        if resid <= tol:
            return theta
        step = np.linalg.solve(cov, target - mu)
        t = 1.0
        while True:
            cand = theta + t * step
            mu_c, cov_c = oracle.exact_moments(family.table, cand)
            r_c = np.linalg.norm(target - mu_c)
            if r_c < resid or t < 1e-12:
                break
            t *= 0.5
        if r_c >= resid:
            raise ConvergenceError("damped Newton stalled", resid)
        theta, mu, cov, resid = cand, mu_c, cov_c, r_c
    if resid <= tol:
        return theta
    raise ConvergenceError(f"MLE did not converge in {max_iter} iterations", resid)


def draw(family: Family, theta, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` exact i.i.d. draws from ``p_theta`` as an ``(n, p)`` array."""
    theta = np.asarray(theta, dtype=float)
    if family.kind == GAUSSIAN:
        chol = np.linalg.cholesky(family.sigma0)
        z = rng.standard_normal((n, family.p))
        return family.sigma0 @ theta + z @ chol.T
    table = family.table
    cdf = np.cumsum(oracle.exact_distribution(table, theta))
    idx = np.searchsorted(cdf, rng.random(n) * cdf[-1], side="right")
    idx = np.minimum(idx, table.size - 1)
    return table.states[idx].astype(float)


def sample_from_model(family: Family, theta, n: int, seed: int) -> DataSample:
    if n < 1:
        raise InputError("n must be at least 1")
    theta = _theta(family, theta)
    return DataSample(draw(family, theta, n, rngmod.stream(seed, rngmod.DATA)), family)
