"""Brute-force enumeration for the binary RBM.

Everything here is exact: the state space is listed explicitly and every
expectation is a finite weighted sum.  Tests and the discrete diagnostics use
these routines as ground truth.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import logsumexp

from .errors import InputError

MAX_STATES = 2**20


@dataclass(frozen=True, eq=False)
class StateTable:
    """All ``2**(nv+nh)`` configurations ``x = (v, h)`` in lexicographic order.

    Attributes
    ----------
    nv, nh : int
        Visible and hidden unit counts.
    states : (S, nv+nh) ndarray of int8
        Row ``s`` is configuration ``s``; visible bits first.
    phi_matrix : (S, nv*nh) ndarray of float
        Row ``s`` is ``vec(h v^T)``, entry ``i*nv + j`` equal to ``h_i v_j``.
    """

    nv: int
    nh: int
    states: np.ndarray
    phi_matrix: np.ndarray

    @property
    def size(self) -> int:
        return self.states.shape[0]

    def log_weights(self, theta) -> np.ndarray:
        return self.phi_matrix @ np.asarray(theta, dtype=float)

    def index_of(self, x) -> np.ndarray:
        """Row indices of configurations ``x`` (shape ``(p,)`` or ``(n, p)``)."""
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        p = self.nv + self.nh
        powers = 1 << np.arange(p - 1, -1, -1, dtype=np.int64)
        return x @ powers


def rbm_phi(x, nv: int, nh: int) -> np.ndarray:
    """``vec(h v^T)`` for configurations ``x = (v, h)``; batched over leading axis."""
    x = np.asarray(x, dtype=float)
    v = x[..., :nv]
    h = x[..., nv:nv + nh]
    return (h[..., :, None] * v[..., None, :]).reshape(x.shape[:-1] + (nh * nv,))


@lru_cache(maxsize=16)
def state_table(nv: int, nh: int) -> StateTable:
    p = nv + nh
    if 2**p > MAX_STATES:
        raise InputError(
            f"enumeration of 2**{p} states exceeds the cap of {MAX_STATES}")
    states = np.array(list(itertools.product((0, 1), repeat=p)), dtype=np.int8)
    phi = rbm_phi(states, nv, nh)
    states.setflags(write=False)
    phi.setflags(write=False)
    return StateTable(nv=nv, nh=nh, states=states, phi_matrix=phi)


def log_partition(table: StateTable, theta) -> float:
    return float(logsumexp(table.log_weights(theta)))


def exact_distribution(table: StateTable, theta) -> np.ndarray:
    """Normalized ``exp(theta . phi(x))`` over the table, via log-sum-exp."""
    lw = table.log_weights(theta)
    return np.exp(lw - logsumexp(lw))


def exact_moments(table: StateTable, theta) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of ``phi`` under ``p_theta``."""
    p = exact_distribution(table, theta)
    mean = p @ table.phi_matrix
    centered = table.phi_matrix - mean
    cov = (centered * p[:, None]).T @ centered
    return mean, 0.5 * (cov + cov.T)


def exact_cd_gradient_mean(table: StateTable, Pm: np.ndarray, data_idx) -> np.ndarray:
    """Exact expectation of the CD gradient given the m-step matrix ``Pm``.

    ``E g_cd = phibar - (1/n) sum_i Pm[x_i] @ phi``.  Passing a matrix whose
    rows all equal ``p_theta`` gives the exact-resample case, i.e. the exact
    log-likelihood gradient.
    """
    data_idx = np.asarray(data_idx)
    phibar = table.phi_matrix[data_idx].mean(axis=0)
    model = _mean_rows(Pm, data_idx) @ table.phi_matrix
    return phibar - model


def exact_cd_gradient_cov(table: StateTable, Pm: np.ndarray, data_idx) -> np.ndarray:
    """Exact covariance of the CD gradient: ``(1/n^2) sum_i Cov_{Pm[x_i]}(phi)``."""
    data_idx = np.asarray(data_idx)
    counts = np.bincount(data_idx, minlength=table.size)
    rows = np.nonzero(counts)[0]
    phi = table.phi_matrix
    cov = np.zeros((phi.shape[1], phi.shape[1]))
    for s in rows:
        q = Pm[s]
        mean = q @ phi
        c = phi - mean
        cov += counts[s] * ((c * q[:, None]).T @ c)
    return cov / len(data_idx) ** 2


def _mean_rows(Pm: np.ndarray, data_idx: np.ndarray) -> np.ndarray:
    counts = np.bincount(data_idx, minlength=Pm.shape[0])
    return counts @ Pm / len(data_idx)


@dataclass(frozen=True)
class GradientLattice:
    """Implicit description of the set of attainable CD gradients.

    Every CD gradient equals ``(1/n) * k`` for an integer vector ``k`` with
    ``k_j`` in ``[S_j - n, S_j]`` where ``S = sum_i phi(x_i)``; each update
    moves ``theta`` by ``eta/n`` times an integer vector.
    """

    n: int
    eta: float
    data_counts: np.ndarray  # S, integer per coordinate

    @property
    def spacing(self) -> float:
        return self.eta / self.n

    def integer_coords(self, g) -> np.ndarray:
        """Nearest integer vector ``k`` with ``g ~= k / n``."""
        return np.rint(np.asarray(g) * self.n)

    def contains(self, g, tol: float = 1e-9) -> bool:
        g = np.asarray(g, dtype=float)
        k = self.integer_coords(g)
        if np.max(np.abs(g - k / self.n)) > tol:
            return False
        return bool(np.all(k <= self.data_counts) and np.all(k >= self.data_counts - self.n))


def exact_cd_gradient_support(table: StateTable, data_idx, n: int, eta: float) -> GradientLattice:
    data_idx = np.asarray(data_idx)
    if len(data_idx) != n:
        raise InputError(f"n={n} does not match {len(data_idx)} data points")
    counts = np.rint(table.phi_matrix[data_idx].sum(axis=0)).astype(np.int64)
    return GradientLattice(n=n, eta=float(eta), data_counts=counts)
