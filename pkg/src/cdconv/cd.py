"""CD-m parameter updates and the resulting parameter chain."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels, rng as rngmod
from .errors import InputError
from .expfam import DataSample, Family, ParamDomain, suff_stat


@dataclass(frozen=True, eq=False)
class CDConfig:
    eta: float
    m: int
    steps: int
    theta0: np.ndarray
    domain: ParamDomain
    projection: bool = False
    seed: int = 0

    def __post_init__(self):
        theta0 = np.array(self.theta0, dtype=float).ravel()
        object.__setattr__(self, "theta0", theta0)
        if not self.eta > 0:
            raise InputError(f"eta must be positive, got {self.eta}")
        if self.m < 1:
            raise InputError(f"m must be at least 1, got {self.m}")
        if self.steps < 0:
            raise InputError(f"steps must be non-negative, got {self.steps}")
        if theta0.size != self.domain.d:
            raise InputError("theta0 and domain differ in dimension")
        if not self.domain.contains(theta0):
            raise InputError(f"theta0 {theta0.tolist()} lies outside the domain")


@dataclass(frozen=True, eq=False)
class Trajectory:
    """``thetas[t]`` for ``t = 0..T`` and ``cd_grads[t-1]`` the gradient used to reach it."""

    thetas: np.ndarray
    cd_grads: np.ndarray
    config: CDConfig
    data: DataSample = field(repr=False)
    clamped_steps: int = 0

    @property
    def steps(self) -> int:
        return self.cd_grads.shape[0]


def cd_gradient(family: Family, kernel: kernels.Kernel, data: DataSample, theta, m: int,
                rng: np.random.Generator) -> np.ndarray:
    """``phibar - mean(phi(X_i^(m)))`` with one m-step chain per data point."""
    if m < 1:
        raise InputError(f"m must be at least 1, got {m}")
    if kernel.kind == kernels.RBM_GIBBS:
        # phi = vec(h v^T) is 0/1, so h^T v holds exact integer counts
        v, h = kernels.rbm_gibbs_run(family, np.asarray(theta, dtype=float), data.points, m, rng)
        counts = h.T.astype(float) @ v.astype(float)
        return data.phibar - counts.ravel() / data.n
    xm = kernels.m_step(kernel, theta, data.points, m, rng)
    return data.phibar - suff_stat(family, xm).mean(axis=0)


def cd_update(theta, g_cd, eta: float, domain: ParamDomain | None = None,
              projection: bool = False) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g_cd = np.asarray(g_cd, dtype=float)
    if theta.shape != g_cd.shape:
        raise InputError("theta and gradient differ in shape")
    new = theta + eta * g_cd
    if projection:
        new = domain.clamp(new)
    return new


def run_cd(family: Family, kernel: kernels.Kernel, data: DataSample, config: CDConfig) -> Trajectory:
    """Iterate CD updates for ``config.steps`` steps.

    Step ``t`` draws its randomness from ``stream(seed, CD_STEP, t)`` only, so
    a run is reproducible and each step depends on the past through
    ``theta_{t-1}`` alone.  Without projection, the parameter is accumulated
    with Neumaier-compensated summation of ``eta * g_t``.
    """
    T, d = config.steps, family.d
    thetas = np.empty((T + 1, d))
    grads = np.empty((T, d))
    thetas[0] = config.theta0
    total = config.theta0.copy()
    comp = np.zeros(d)
    theta = config.theta0.copy()
    clamped = 0
    for t in range(1, T + 1):
        g = cd_gradient(family, kernel, data, theta, config.m,
                        rngmod.stream(config.seed, rngmod.CD_STEP, t))
        grads[t - 1] = g
        if config.projection:
            raw = theta + config.eta * g
            theta = cd_update(theta, g, config.eta, config.domain, True)
            clamped += int(np.any(raw != theta))
        else:
            inc = config.eta * g
            s = total + inc
            comp += np.where(np.abs(total) >= np.abs(inc), (total - s) + inc, (inc - s) + total)
            total = s
            theta = total + comp
        thetas[t] = theta
    return Trajectory(thetas=thetas, cd_grads=grads, config=config, data=data,
                      clamped_steps=clamped)


def ergodic_average(traj: Trajectory, burn_in: int = 0) -> np.ndarray:
    """Mean of ``theta_{burn_in+1}, ..., theta_T``."""
    if not 0 <= burn_in < traj.steps:
        raise InputError(f"burn_in must lie in [0, {traj.steps}), got {burn_in}")
    return traj.thetas[burn_in + 1:].mean(axis=0)
