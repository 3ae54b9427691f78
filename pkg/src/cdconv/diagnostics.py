"""Empirical checks of the CD convergence bounds.

Each check returns a :class:`Record` carrying the closed-form bound, the
empirical (or exact) estimate, its Monte Carlo standard error and a pass
verdict.  Inequality checks pass when ``bound >= estimate - 3 SE`` unless a
different slack is requested.  ``passed`` is ``None`` for records that could
not be evaluated (the reason is listed in ``flags``).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cd, expfam, kernels, oracle, rng as rngmod
from .errors import InputError, UnsupportedFamilyError
from .expfam import DataSample, Family, ParamDomain

SE_SLACK = 3.0
Z99 = 2.3263478740408408  # one-sided 99% normal quantile

ASSUMPTION_A1 = "A1-violated:phi-unbounded"
CONDITION_VIOLATED = "condition-violated:a<=0"
NOT_COMPUTED = "not-computed"
INCONCLUSIVE = "inconclusive:cap-fraction"
CONSTRAINT_UNMET = "data-constraint-unmet"
OUTSIDE_DOMAIN = "outside-domain:quadratic-bound-not-applicable"


@dataclass
class Record:
    check: str
    inputs: dict
    bound: float | None
    estimate: float | None
    std_error: float | None
    replicates: int
    passed: bool | None
    flags: list[str] = field(default_factory=list)

    def as_dict(self) -> dict:
        return {"check": self.check, "inputs": _jsonable(self.inputs),
                "bound": _num(self.bound), "estimate": _num(self.estimate),
                "std_error": _num(self.std_error), "replicates": int(self.replicates),
                "pass": self.passed, "flags": list(self.flags)}


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


def _inequality(bound: float, estimate: float, se: float, slack: float = SE_SLACK) -> bool:
    return bool(bound >= estimate - slack * se)


def family_flags(family: Family) -> list[str]:
    return [ASSUMPTION_A1] if family.kind == expfam.GAUSSIAN else []


# ---------------------------------------------------------------------------
# drift constants

@dataclass(frozen=True)
class DriftConstants:
    lambda_min: float
    lambda_max: float
    C: float
    L: float
    alpha: float
    m: int
    eta: float
    n: int
    gamma1: float
    d: int
    a: float
    b_n: float
    c_n: float
    r_n: float | None

    @property
    def condition_holds(self) -> bool:
        return self.a > 0

    @property
    def mix(self) -> float:
        """``sqrt(d) C L alpha^m``, the MCMC-error coefficient."""
        return _mix(self.d, self.C, self.L, self.alpha, self.m)

    @property
    def rate(self) -> float:
        return self.n ** (-0.5 + self.gamma1)

    def radius(self, beta: float) -> float:
        self._require()
        return beta * self.r_n

    def delta(self, beta: float) -> float:
        """Lower bound ``eta (beta^2 - 1) c_n`` on the drift outside ``B_beta``."""
        return self.eta * (beta**2 - 1.0) * self.c_n

    def quadratic_drift_bound(self, dist) -> np.ndarray:
        dist = np.asarray(dist, dtype=float)
        return -self.eta * (self.a * dist**2 - self.b_n * dist - self.c_n)

    def bias_bound(self, dist_to_mle: float) -> float:
        return (1.0 + self.mix) * self.rate + self.mix * dist_to_mle

    def concentration_bound(self, beta: float) -> float:
        self._require()
        return (self.c_n + self.b_n**2 / (4 * self.a)) / self.c_n / (beta**2 - 1.0)

    def _require(self):
        if not self.condition_holds:
            raise InputError(f"drift condition fails (a = {self.a:.4g} <= 0); no ball exists")

    def as_dict(self) -> dict:
        return asdict(self)


def _mix(d, C, L, alpha, m) -> float:
    if alpha == 0.0:
        return 0.0  # exact sampler: alpha^m = 0 even when L is unbounded
    return math.sqrt(d) * C * L * alpha**m


def drift_constants(lambda_min: float, lambda_max: float, C: float, L: float, alpha: float,
                    m: int, eta: float, n: int, gamma1: float, d: int) -> DriftConstants:
    """Evaluate ``a``, ``b_n``, ``c_n`` and ``r_n`` of the quadratic drift bound.

    ``a <= 0`` is not an error; the result then has ``r_n = None`` and
    ``condition_holds`` is false.
    """
    if not (lambda_min > 0 and lambda_max > 0 and C > 0 and eta > 0 and n >= 1):
        raise InputError("lambda_min, lambda_max, C, eta and n must be positive")
    if L < 0 or not 0 <= alpha <= 1:
        raise InputError("L must be non-negative and alpha in [0, 1]")
    if m < 1:
        raise InputError("m must be at least 1")
    if not 0 < gamma1 < 0.5:
        raise InputError("gamma1 must lie in (0, 1/2)")
    s = _mix(d, C, L, alpha, m)
    rate = n ** (-0.5 + gamma1)
    a = lambda_min**2 - s * lambda_max - 0.5 * eta * lambda_max * (lambda_max + s) ** 2
    b_n = lambda_max * (1 + s) * (1 + eta * lambda_max + eta * s) * rate
    c_n = 0.5 * eta * lambda_max * (d * C**2 * n ** (-2 * gamma1) + (1 + s) ** 2) * rate**2
    r_n = (b_n + math.sqrt(b_n**2 + 4 * a * c_n)) / (2 * a) if a > 0 else None
    return DriftConstants(lambda_min=float(lambda_min), lambda_max=float(lambda_max), C=float(C),
                          L=float(L), alpha=float(alpha), m=int(m), eta=float(eta), n=int(n),
                          gamma1=float(gamma1), d=int(d), a=float(a), b_n=float(b_n),
                          c_n=float(c_n), r_n=None if r_n is None else float(r_n))


def drift_constants_record(c: DriftConstants, flags=()) -> Record:
    flags = list(flags)
    if not c.condition_holds:
        flags.append(CONDITION_VIOLATED)
    return Record("drift_constants", c.as_dict(), bound=0.0, estimate=c.a, std_error=0.0,
                  replicates=0, passed=True if c.condition_holds else None, flags=flags)


def eigen_bounds(family: Family, domain: ParamDomain, points_per_dim: int = 7) -> tuple[float, float]:
    """Smallest and largest covariance eigenvalue over a grid on the domain."""
    if family.kind == expfam.GAUSSIAN:
        w = np.linalg.eigvalsh(family.sigma0)
        return float(w[0]), float(w[-1])
    lo, hi = np.inf, -np.inf
    for th in domain.grid(points_per_dim):
        w = np.linalg.eigvalsh(expfam.covariance(family, th))
        lo, hi = min(lo, w[0]), max(hi, w[-1])
    return float(lo), float(hi)


def chi_square_root(family: Family, theta_star, theta) -> float:
    """``sqrt(exp(-2 Lambda(t*) + Lambda(t) + Lambda(2 t* - t)) - 1)``, radicand floored at 0."""
    theta_star = np.asarray(theta_star, dtype=float)
    expo = (-2 * expfam.cumulant(family, theta_star) + expfam.cumulant(family, theta)
            + expfam.cumulant(family, 2 * theta_star - np.asarray(theta, dtype=float)))
    with np.errstate(over="ignore"):
        return float(np.sqrt(max(np.expm1(expo), 0.0)))


def estimate_lipschitz_L(family: Family, theta_star, domain: ParamDomain,
                         grid_points_per_dim: int = 7) -> float:
    """Largest slope of :func:`chi_square_root` between axis-adjacent grid points."""
    if grid_points_per_dim < 3:
        raise InputError("need at least 3 grid points per dimension")
    k, d = grid_points_per_dim, family.d
    grid = domain.grid(k)
    vals = np.array([chi_square_root(family, theta_star, th) for th in grid]).reshape((k,) * d)
    steps = [ax[1] - ax[0] for ax in domain.axes(k)]
    best = 0.0
    with np.errstate(invalid="ignore"):
        for axis in range(d):
            diff = np.abs(np.diff(vals, axis=axis)) / steps[axis]
            best = max(best, float(np.nanmax(np.where(np.isnan(diff), np.inf, diff))))
    return best


def measure_alpha(kernel: kernels.Kernel, domain: ParamDomain, theta_star, *,
                  grid_points_per_dim: int = 5, chain_length: int = 100_000, seed: int = 0) -> float:
    exact = kernels.exact_alpha(kernel)
    if exact is not None:
        return exact
    if kernel.family.is_discrete:
        return kernels.alpha_sup_over_grid(kernel, domain, grid_points_per_dim).alpha_sup
    # Gaussian Gibbs moves deviations from the mean by a theta-free affine map,
    # so alpha does not depend on theta.
    return kernels.gaussian_gibbs_alpha_estimate(kernel.family.sigma0, theta_star,
                                                 chain_length, seed)


def measured_drift_constants(family: Family, kernel: kernels.Kernel, theta_star, domain: ParamDomain,
                             *, m: int, eta: float, n: int, gamma1: float = 0.1,
                             lambda_grid: int = 7, lipschitz_grid: int = 7, alpha_grid: int = 5,
                             alpha_chain_length: int = 100_000, seed: int = 0) -> DriftConstants:
    lmin, lmax = eigen_bounds(family, domain, lambda_grid)
    alpha = measure_alpha(kernel, domain, theta_star, grid_points_per_dim=alpha_grid,
                          chain_length=alpha_chain_length, seed=seed)
    L = estimate_lipschitz_L(family, theta_star, domain, lipschitz_grid)
    return drift_constants(lmin, lmax, family.stat_bound_C, L, alpha, m, eta, n, gamma1, family.d)


def beta_schedule(n: int, gamma2: float = 0.15) -> float:
    return max(2.0, n**gamma2)


@dataclass(frozen=True)
class Ball:
    center: np.ndarray
    radius: float
    beta: float

    @classmethod
    def from_constants(cls, center, constants: DriftConstants, beta: float) -> "Ball":
        if not beta > 1:
            raise InputError("beta must exceed 1")
        return cls(np.asarray(center, dtype=float), constants.radius(beta), float(beta))

    def contains(self, theta) -> np.ndarray:
        return np.linalg.norm(np.atleast_2d(theta) - self.center, axis=-1) <= self.radius


# ---------------------------------------------------------------------------
# data constraints

def _f_theta_rows(family, kernel, theta, m) -> np.ndarray:
    """``f_theta(x) = E[phi(X^(m)) | X_0 = x]`` for every enumerated state."""
    P = kernels.transition_matrix(kernel, theta).power(m)
    return P @ family.table.phi_matrix


def constraint_deviations(family: Family, data: DataSample, theta_star, kernel: kernels.Kernel,
                          m: int, theta_grid) -> tuple[float, float, float | None]:
    """Sample-mean, MLE and empirical-process deviations from ``theta_star``.

    The third value is ``None`` when no exact ``f_theta`` is available
    (continuous family with a Gibbs kernel).
    """
    theta_star = np.asarray(theta_star, dtype=float)
    dev1 = float(np.linalg.norm(data.phibar - expfam.mean_param(family, theta_star)))
    dev2 = float(np.linalg.norm(expfam.mle(family, data) - theta_star))
    if kernel.kind == kernels.EXACT_RESAMPLE:
        return dev1, dev2, 0.0  # f_theta is the constant mu(theta)
    if not family.is_discrete:
        return dev1, dev2, None
    pstar = oracle.exact_distribution(family.table, theta_star)
    idx = data.state_index
    sup = 0.0
    for th in np.atleast_2d(theta_grid):
        f = _f_theta_rows(family, kernel, th, m)
        sup = max(sup, float(np.linalg.norm(f[idx].mean(axis=0) - pstar @ f)))
    return dev1, dev2, sup


def constraint_records(family, data, theta_star, kernel, m, theta_grid, gamma1: float) -> list[Record]:
    devs = constraint_deviations(family, data, theta_star, kernel, m, theta_grid)
    bound = data.n ** (-0.5 + gamma1)
    names = ("constraint_sample_mean", "constraint_mle", "constraint_empirical_process")
    out = []
    for name, dev in zip(names, devs):
        inputs = {"n": data.n, "gamma1": gamma1, "m": m}
        if dev is None:
            out.append(Record(name, inputs, bound, None, None, 0, None,
                              family_flags(family) + [NOT_COMPUTED]))
        elif dev < bound:
            out.append(Record(name, inputs, bound, dev, 0.0, 0, True, family_flags(family)))
        else:
            # a property of the random sample, not a bound under test
            out.append(Record(name, inputs, bound, dev, 0.0, 0, None,
                              family_flags(family) + [CONSTRAINT_UNMET]))
    return out


# ---------------------------------------------------------------------------
# gradient error

def cd_gradient_replicates(family, kernel, data, theta, m, replicates, seed) -> np.ndarray:
    """``replicates`` independent CD gradients at a fixed ``theta``."""
    return np.array([
        cd.cd_gradient(family, kernel, data, theta, m, rngmod.stream(seed, rngmod.REPLICATE, r))
        for r in range(replicates)])


def exact_delta_g(family, kernel, data, theta, m, theta_star) -> dict:
    """Exact ``E[Delta g]`` for the discrete family and its two components."""
    table = family.table
    theta = np.asarray(theta, dtype=float)
    f = _f_theta_rows(family, kernel, theta, m)
    mu = expfam.mean_param(family, theta)
    model_star = oracle.exact_distribution(table, theta_star) @ f
    model_data = f[data.state_index].mean(axis=0)
    return {"mean": mu - model_data,
            "mcmc_term": mu - model_star,
            "empirical_term": model_star - model_data}


def mcmc_bias_component(family, kernel, theta, m, theta_star) -> np.ndarray:
    """``mu(theta) - E_{k^m p_{theta*}} phi``: the data-free part of the CD bias."""
    f = _f_theta_rows(family, kernel, np.asarray(theta, dtype=float), m)
    return expfam.mean_param(family, theta) - \
        oracle.exact_distribution(family.table, theta_star) @ f


def bias_contraction(family, kernel, theta, theta_star, m_values=range(1, 10),
                     floor: float = 1e-12) -> list[tuple[int, float]]:
    """Two-step ratios ``|b(m+2)| / |b(m)|`` of the MCMC bias component.

    Pairs whose base norm is below ``floor`` are dropped: there both norms
    are rounding noise and the ratio carries no information.
    """
    m_values = list(m_values)
    norms = {m: float(np.linalg.norm(mcmc_bias_component(family, kernel, theta, m, theta_star)))
             for m in m_values}
    return [(m, norms[m + 2] / norms[m]) for m in m_values
            if m + 2 in norms and norms[m] > floor]


def bias_report(family, kernel, data, theta, m, replicates, constants: DriftConstants,
                theta_star=None, seed: int = 0, theta_hat=None) -> Record:
    theta = np.asarray(theta, dtype=float)
    if theta_hat is None:
        theta_hat = expfam.mle(family, data)
    dist = float(np.linalg.norm(theta - theta_hat))
    bound = constants.bias_bound(dist)
    inputs = {"theta": theta, "m": m, "n": data.n, "dist_to_mle": dist}
    if family.is_discrete and theta_star is not None:
        parts = exact_delta_g(family, kernel, data, theta, m, theta_star)
        est = float(np.linalg.norm(parts["mean"]))
        inputs["mcmc_term"] = float(np.linalg.norm(parts["mcmc_term"]))
        inputs["empirical_term"] = float(np.linalg.norm(parts["empirical_term"]))
        return Record("bias", inputs, bound, est, 0.0, 0, _inequality(bound, est, 0.0),
                      family_flags(family) + ["exact"])
    g = expfam.exact_gradient(family, data, theta)
    dg = cd_gradient_replicates(family, kernel, data, theta, m, replicates, seed) - g
    mean = dg.mean(axis=0)
    est = float(np.linalg.norm(mean))
    # delta method for the norm of a mean vector
    cov = np.cov(dg, rowvar=False) / replicates
    se = float(np.sqrt(max(mean @ np.atleast_2d(cov) @ mean, 0.0)) / est) if est > 0 else \
        float(np.sqrt(np.trace(np.atleast_2d(cov))))
    return Record("bias", inputs, bound, est, se, replicates, _inequality(bound, est, se),
                  family_flags(family))


def trace_cov_estimate(samples: np.ndarray) -> tuple[float, float]:
    """Unbiased trace of the sample covariance and its standard error."""
    R = samples.shape[0]
    q = np.sum((samples - samples.mean(axis=0)) ** 2, axis=1) * R / (R - 1)
    return float(q.mean()), float(q.std(ddof=1) / np.sqrt(R))


def variance_report(family, kernel, data, theta, m, replicates, seed: int = 0) -> Record:
    theta = np.asarray(theta, dtype=float)
    samples = cd_gradient_replicates(family, kernel, data, theta, m, replicates, seed)
    est, se = trace_cov_estimate(samples)
    bound = family.d * family.stat_bound_C**2 / data.n
    inputs = {"theta": theta, "m": m, "n": data.n}
    flags = family_flags(family)
    passed = _inequality(bound, est, se)
    if family.is_discrete:
        P = kernels.transition_matrix(kernel, theta).power(m)
        exact = float(np.trace(oracle.exact_cd_gradient_cov(family.table, P, data.state_index)))
        inputs["exact_trace"] = exact
        inputs["exact_within_4se"] = bool(abs(est - exact) <= 4 * se)
        passed = passed and inputs["exact_within_4se"]
    return Record("variance", inputs, bound, est, se, replicates, passed, flags)


# ---------------------------------------------------------------------------
# drift and hitting times

def lyapunov_u(family: Family, data: DataSample, theta, theta_hat=None) -> float:
    """Log-likelihood gap ``l(theta_hat) - l(theta)``, floored at zero."""
    if theta_hat is None:
        theta_hat = expfam.mle(family, data)
    theta = np.asarray(theta, dtype=float)
    theta_hat = np.asarray(theta_hat, dtype=float)
    gap = float((theta_hat - theta) @ data.phibar) - expfam.cumulant(family, theta_hat) \
        + expfam.cumulant(family, theta)
    return max(gap, 0.0)


def drift_estimate(family, kernel, data, theta, eta, m, replicates, seed, theta_hat) -> tuple[float, float]:
    """Monte Carlo mean and SE of ``u(theta_1) - u(theta)`` for one CD step."""
    u0 = lyapunov_u(family, data, theta, theta_hat)
    grads = cd_gradient_replicates(family, kernel, data, theta, m, replicates, seed)
    diffs = np.array([lyapunov_u(family, data, theta + eta * g, theta_hat) for g in grads]) - u0
    return float(diffs.mean()), float(diffs.std(ddof=1) / np.sqrt(replicates))


def drift_check(family, kernel, data, theta, eta: float, m: int, constants: DriftConstants,
                replicates: int, beta: float | None = None, seed: int = 0, theta_hat=None,
                se_slack: float = SE_SLACK, domain: ParamDomain | None = None) -> Record:
    """Compare the Monte Carlo one-step drift of ``u`` with the quadratic bound.

    ``inputs["ucl99"]`` is the one-sided 99% upper confidence limit of the
    drift; outside ``B_beta`` it should be negative.  The quadratic bound
    uses eigenvalue bounds over ``domain``; for ``theta`` outside it the
    record instead passes on ``ucl99 < 0`` (outside the ball) or is left
    unevaluated (inside).
    """
    if theta_hat is None:
        theta_hat = expfam.mle(family, data)
    theta = np.asarray(theta, dtype=float)
    dist = float(np.linalg.norm(theta - theta_hat))
    est, se = drift_estimate(family, kernel, data, theta, eta, m, replicates, seed, theta_hat)
    bound = float(constants.quadratic_drift_bound(dist))
    inputs = {"theta": theta, "dist_to_mle": dist, "eta": eta, "m": m, "n": data.n,
              "ucl99": est + Z99 * se}
    flags = family_flags(family)
    if beta is not None and constants.condition_holds:
        radius = constants.radius(beta)
        inputs.update(beta=beta, ball_radius=radius, minus_delta=-constants.delta(beta),
                      outside_ball=dist > radius)
        if dist <= radius:
            flags.append("inside-ball")
    passed = _inequality(bound, est, se, se_slack)
    if domain is not None and not domain.contains(theta):
        flags.append(OUTSIDE_DOMAIN)
        outside = inputs.get("outside_ball", False)
        passed = bool(inputs["ucl99"] < 0) if outside else None
    return Record("drift", inputs, bound, est, se, replicates, passed, flags)


def hitting_times(family, kernel, data, start, eta, m, ball: Ball, replicates: int,
                  max_horizon: int, seed: int, start_id: int = 0) -> np.ndarray:
    """First times ``t >= 1`` with ``theta_t`` in the ball; ``-1`` marks capped runs."""
    out = np.empty(replicates, dtype=np.int64)
    start = np.asarray(start, dtype=float)
    for r in range(replicates):
        g = rngmod.stream(seed, rngmod.REPLICATE, start_id, r)
        theta = start.copy()
        T = -1
        for t in range(1, max_horizon + 1):
            theta = theta + eta * cd.cd_gradient(family, kernel, data, theta, m, g)
            if np.linalg.norm(theta - ball.center) <= ball.radius:
                T = t
                break
        out[r] = T
    return out


def hitting_time_check(family, kernel, data, eta: float, m: int, constants: DriftConstants,
                       ball: Ball, starts, replicates: int, max_horizon: int = 1_000_000,
                       seed: int = 0) -> list[Record]:
    """Empirical mean hitting time of ``ball`` against ``u(z) / delta`` for each start."""
    delta = constants.delta(ball.beta)
    records = []
    for k, z in enumerate(np.atleast_2d(starts)):
        u = lyapunov_u(family, data, z, ball.center)
        inputs = {"start": z, "beta": ball.beta, "ball_radius": ball.radius, "delta": delta,
                  "u_start": u, "dist_to_mle": float(np.linalg.norm(z - ball.center))}
        flags = family_flags(family)
        bound = u / delta
        if ball.contains(z)[0]:
            records.append(Record("hitting_time", inputs, bound, None, None, 0, None,
                                  flags + ["start-inside-ball"]))
            continue
        T = hitting_times(family, kernel, data, z, eta, m, ball, replicates, max_horizon, seed, k)
        hit = T[T >= 0]
        cap_frac = 1.0 - hit.size / replicates
        inputs["cap_fraction"] = cap_frac
        if hit.size < 2 or cap_frac > 0.05:
            records.append(Record("hitting_time", inputs, bound,
                                  float(hit.mean()) if hit.size else None, None,
                                  replicates, None, flags + [INCONCLUSIVE]))
            continue
        est = float(hit.mean())
        se = float(hit.std(ddof=1) / np.sqrt(hit.size))
        records.append(Record("hitting_time", inputs, bound, est, se, replicates,
                              _inequality(bound, est, se), flags))
    return records


# ---------------------------------------------------------------------------
# invariant distribution

def occupancy_outside(thetas: np.ndarray, center, radius: float) -> float:
    return float(np.mean(np.linalg.norm(thetas - center, axis=1) > radius))


def batch_means_se(x: np.ndarray, n_batches: int = 20) -> float:
    """Standard error of the mean of a correlated series by non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    size = len(x) // n_batches
    if size < 1:
        return float("nan")
    means = x[: size * n_batches].reshape(n_batches, size).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def concentration_report(family, traj: cd.Trajectory, constants: DriftConstants, beta: float,
                         burn_in: int, theta_hat=None) -> Record:
    """Long-run occupancy of ``B_beta^c`` along a trajectory against the concentration bound."""
    if not 0 <= burn_in < traj.steps:
        raise InputError("burn_in must be smaller than the number of steps")
    if theta_hat is None:
        theta_hat = expfam.mle(family, traj.data)
    tail = traj.thetas[burn_in + 1:]
    dist = np.linalg.norm(tail - theta_hat, axis=1)
    inputs = {"beta": beta, "burn_in": burn_in, "steps": traj.steps, "n": traj.data.n,
              "mean_dist": float(dist.mean()), "median_dist": float(np.median(dist))}
    flags = family_flags(family)
    if not constants.condition_holds:
        return Record("concentration", inputs, None, None, None, len(tail), None,
                      flags + [CONDITION_VIOLATED])
    radius = constants.radius(beta)
    outside = (dist > radius).astype(float)
    frac = float(outside.mean())
    frac_se = batch_means_se(outside)
    inside = 1.0 - frac
    ratio = frac / inside if inside > 0 else float("inf")
    ratio_se = frac_se / inside**2 if inside > 0 else float("inf")
    bound = constants.concentration_bound(beta)
    inputs.update(ball_radius=radius, occupancy_outside=frac, occupancy_se=frac_se)
    return Record("concentration", inputs, bound, ratio, ratio_se, len(tail),
                  _inequality(bound, ratio, ratio_se), flags)


# ---------------------------------------------------------------------------
# n-sweep

def sweep_seed(base_seed: int, n: int, k: int) -> int:
    return int(np.random.SeedSequence([base_seed, n, k]).generate_state(1)[0])


@dataclass(frozen=True)
class SweepRow:
    n: int
    seed: int
    total_from_start: float
    total_burned: float
    term_ergodic: float
    term_invariant: float
    term_mle: float


def sweep_one(family, kernel, theta_star, n: int, eta: float, m: int, steps: int, theta0,
              domain: ParamDomain, seed: int, burn_in: int | None = None) -> SweepRow:
    theta_star = np.asarray(theta_star, dtype=float)
    data = expfam.sample_from_model(family, theta_star, n, seed)
    theta_hat = expfam.mle(family, data)
    config = cd.CDConfig(eta=eta, m=m, steps=steps, theta0=theta0, domain=domain, seed=seed)
    traj = cd.run_cd(family, kernel, data, config)
    burn = steps // 2 if burn_in is None else burn_in
    avg_all = cd.ergodic_average(traj, 0)
    tail_mean = cd.ergodic_average(traj, burn)
    return SweepRow(n=n, seed=seed,
                    total_from_start=float(np.linalg.norm(avg_all - theta_star)),
                    total_burned=float(np.linalg.norm(tail_mean - theta_star)),
                    term_ergodic=float(np.linalg.norm(avg_all - tail_mean)),
                    term_invariant=float(np.linalg.norm(tail_mean - theta_hat)),
                    term_mle=float(np.linalg.norm(theta_hat - theta_star)))


SWEEP_FIELDS = ("total_from_start", "total_burned", "term_ergodic", "term_invariant", "term_mle")


def summarize_sweep(rows: list[SweepRow]) -> list[dict]:
    out = []
    for n in sorted({r.n for r in rows}):
        sub = [r for r in rows if r.n == n]
        row = {"n": n, "seeds": len(sub)}
        for f in SWEEP_FIELDS:
            vals = np.array([getattr(r, f) for r in sub])
            q1, med, q3 = np.quantile(vals, [0.25, 0.5, 0.75])
            row[f"{f}_q1"], row[f"{f}_median"], row[f"{f}_q3"] = float(q1), float(med), float(q3)
        out.append(row)
    return out


def ergodic_sweep(family, kernel, theta_star, n_list, eta: float, m: int, steps: int, theta0,
                  domain: ParamDomain, seeds: int, base_seed: int = 0,
                  burn_in: int | None = None) -> list[SweepRow]:
    n_list = list(n_list)
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise InputError("n_list must be strictly increasing")
    return [sweep_one(family, kernel, theta_star, n, eta, m, steps, theta0, domain,
                      sweep_seed(base_seed, n, k), burn_in)
            for n in n_list for k in range(seeds)]


def mle_error_medians(family, theta_star, n_list, seeds: int, base_seed: int = 0) -> dict[int, float]:
    """Median of ``||theta_hat_n - theta*||`` over independent samples, per n."""
    theta_star = np.asarray(theta_star, dtype=float)
    out = {}
    for n in n_list:
        errs = [np.linalg.norm(expfam.mle(family, expfam.sample_from_model(
            family, theta_star, n, sweep_seed(base_seed, n, k))) - theta_star) for k in range(seeds)]
        out[n] = float(np.median(errs))
    return out


# ---------------------------------------------------------------------------
# lattice structure

def lattice_check(traj: cd.Trajectory, family: Family, data: DataSample | None = None,
                  tolerance: float = 1e-9) -> Record:
    """Distance of every ``theta_t - theta_0`` from the ``(eta/n)``-integer lattice.

    Per-step integer counts ``k_t = n g_t`` are accumulated exactly as
    integers; ``theta_t`` must equal ``theta_0 + (eta/n) sum_s k_s``.
    """
    if not family.is_discrete:
        raise UnsupportedFamilyError("lattice structure needs the discrete family")
    data = traj.data if data is None else data
    n, eta = data.n, traj.config.eta
    scaled = traj.cd_grads * n
    counts = np.rint(scaled).astype(np.int64)
    count_residual = float(np.max(np.abs(scaled - counts))) if counts.size else 0.0
    support = oracle.exact_cd_gradient_support(family.table, data.state_index, n, eta)
    in_support = bool(np.all(counts <= support.data_counts) and
                      np.all(counts >= support.data_counts - n))
    cum = np.vstack([np.zeros((1, family.d), dtype=np.int64), np.cumsum(counts, axis=0)])
    expected = traj.config.theta0 + eta * cum / n
    deviation = float(np.max(np.abs(traj.thetas - expected)))
    flags = []
    if traj.config.projection:
        flags.append("projection-on")
    inputs = {"n": n, "eta": eta, "steps": traj.steps, "spacing": support.spacing,
              "count_residual": count_residual, "in_support": in_support}
    return Record("lattice", inputs, tolerance, deviation, 0.0, traj.steps,
                  bool(deviation <= tolerance and in_support), flags)


# ---------------------------------------------------------------------------
# reports

@dataclass
class DiagnosticsReport:
    records: list[Record] = field(default_factory=list)

    def extend(self, recs) -> None:
        self.records.extend(recs)

    def add(self, rec: Record) -> None:
        self.records.append(rec)

    @property
    def failed(self) -> bool:
        return any(r.passed is False for r in self.records)

    def as_list(self) -> list[dict]:
        return [r.as_dict() for r in self.records]
