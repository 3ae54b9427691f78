import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cdconv import expfam, kernels, oracle
from cdconv.errors import InputError

TABLE = oracle.state_table(2, 2)
FAM = expfam.Family.rbm()
GIBBS = kernels.Kernel(kernels.RBM_GIBBS, FAM)
EXACT = kernels.Kernel(kernels.EXACT_RESAMPLE, FAM)

thetas = st.lists(st.floats(-3, 3, allow_nan=False), min_size=4, max_size=4).map(np.array)


def direct_probabilities(theta):
    """Unnormalized 16-term evaluation followed by explicit normalization."""
    weights = []
    for s in itertools.product((0, 1), repeat=4):
        v, h = s[:2], s[2:]
        phi = [h[0] * v[0], h[0] * v[1], h[1] * v[0], h[1] * v[1]]
        weights.append(math.exp(sum(t * f for t, f in zip(theta, phi))))
    z = sum(weights)
    return np.array([w / z for w in weights])


def test_state_table_layout():
    assert TABLE.size == 16
    # lexicographic over (v1, v2, h1, h2)
    np.testing.assert_array_equal(TABLE.states[1], [0, 0, 0, 1])
    np.testing.assert_array_equal(TABLE.states[8], [1, 0, 0, 0])
    assert set(np.unique(TABLE.phi_matrix)) <= {0.0, 1.0}
    np.testing.assert_array_equal(TABLE.index_of(TABLE.states), np.arange(16))
    assert oracle.state_table(2, 2) is TABLE


def test_enumeration_cap():
    with pytest.raises(InputError):
        oracle.state_table(11, 10)


def test_uniform_at_zero():
    np.testing.assert_allclose(oracle.exact_distribution(TABLE, np.zeros(4)), 1 / 16, atol=1e-16)


def test_distribution_matches_direct_sum():
    np.testing.assert_allclose(oracle.exact_distribution(TABLE, np.full(4, 0.5)),
                               direct_probabilities([0.5] * 4), rtol=1e-13)


@settings(max_examples=50, deadline=None)
@given(thetas)
def test_distribution_normalized_and_matches_direct(theta):
    p = oracle.exact_distribution(TABLE, theta)
    assert abs(p.sum() - 1.0) <= 1e-14
    np.testing.assert_allclose(p, direct_probabilities(theta), rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(thetas, st.permutations(list(range(16))))
def test_distribution_invariant_under_reordering(theta, perm):
    perm = np.array(perm)
    lw = TABLE.phi_matrix[perm] @ theta
    p_perm = np.exp(lw - lw.max())
    p_perm /= p_perm.sum()
    np.testing.assert_allclose(p_perm, oracle.exact_distribution(TABLE, theta)[perm], rtol=1e-13)


def test_equal_phi_states_have_equal_probability():
    p = oracle.exact_distribution(TABLE, np.array([0.3, -1.2, 0.7, 2.0]))
    zero = np.all(TABLE.phi_matrix == 0, axis=1)
    assert zero.sum() > 1
    np.testing.assert_allclose(p[zero], p[zero][0], rtol=0, atol=0)


def test_large_theta_is_stable():
    p = oracle.exact_distribution(TABLE, np.full(4, 400.0))
    assert np.all(np.isfinite(p)) and p[-1] == pytest.approx(1.0)


# exact CD gradient ----------------------------------------------------------

def test_cd_mean_with_resample_rows_is_exact_gradient():
    data = expfam.sample_from_model(FAM, np.full(4, 0.5), 200, 4)
    th = np.array([0.1, 0.9, -0.4, 0.3])
    P = kernels.transition_matrix(EXACT, th).power(3)
    np.testing.assert_allclose(oracle.exact_cd_gradient_mean(TABLE, P, data.state_index),
                               expfam.exact_gradient(FAM, data, th), atol=1e-14)


def test_cd_mean_at_zero():
    data = expfam.sample_from_model(FAM, np.full(4, 0.5), 200, 4)
    for m in (1, 2, 5):
        P = kernels.transition_matrix(GIBBS, np.zeros(4)).power(m)
        np.testing.assert_allclose(oracle.exact_cd_gradient_mean(TABLE, P, data.state_index),
                                   data.phibar - 0.25, atol=1e-15)


def test_cd_mean_matches_monte_carlo():
    from cdconv import cd
    data = expfam.sample_from_model(FAM, np.full(4, 0.5), 20, 9)
    th = np.random.default_rng(3).uniform(-1, 1, 4)
    P = kernels.transition_matrix(GIBBS, th).power(3)
    exact = oracle.exact_cd_gradient_mean(TABLE, P, data.state_index)
    reps = 20_000
    rng = np.random.default_rng(17)
    g = np.array([cd.cd_gradient(FAM, GIBBS, data, th, 3, rng) for _ in range(reps)])
    se = g.std(axis=0, ddof=1) / np.sqrt(reps)
    assert np.all(np.abs(g.mean(axis=0) - exact) <= 4 * se)


def test_cd_mean_approaches_exact_gradient_geometrically():
    data = expfam.sample_from_model(FAM, np.full(4, 0.5), 100, 1)
    rng = np.random.default_rng(8)
    for theta in rng.uniform(-3, 3, (10, 4)):
        tm = kernels.transition_matrix(GIBBS, theta)
        alpha = kernels.spectral_alpha(tm)
        g = expfam.exact_gradient(FAM, data, theta)
        gaps = [np.linalg.norm(oracle.exact_cd_gradient_mean(TABLE, tm.power(m), data.state_index)
                               - g) for m in (1, 9)]
        # single-step ratios can exceed alpha (non-normal operator); the
        # average rate over eight steps may not
        assert (gaps[1] / gaps[0]) ** (1 / 8) <= alpha + 0.05


def test_cd_cov_hand_formula():
    data = expfam.sample_from_model(FAM, np.full(4, 0.5), 30, 2)
    th = np.array([0.5, -0.2, 0.1, 0.8])
    P = kernels.transition_matrix(GIBBS, th).power(2)
    phi = TABLE.phi_matrix
    expected = np.zeros((4, 4))
    for i in data.state_index:
        row = P[i]
        mean = row @ phi
        expected += sum(row[s] * np.outer(phi[s] - mean, phi[s] - mean) for s in range(16))
    np.testing.assert_allclose(oracle.exact_cd_gradient_cov(TABLE, P, data.state_index),
                               expected / 30**2, atol=1e-15)


# lattice description ----------------------------------------------------------

def test_support_single_point():
    fam = expfam.Family.rbm(1, 1)
    table = fam.table
    for x, phi_x in (([1, 1], 1.0), ([0, 1], 0.0)):
        idx = table.index_of(np.array([x]))
        lat = oracle.exact_cd_gradient_support(table, idx, 1, 0.1)
        assert lat.contains(np.array([phi_x - 0.0]))
        assert lat.contains(np.array([phi_x - 1.0]))
        assert not lat.contains(np.array([phi_x - 1.0 - 1.0]))


def test_support_spacing_and_membership():
    data = expfam.sample_from_model(FAM, np.full(4, 0.5), 100, 0)
    lat = oracle.exact_cd_gradient_support(TABLE, data.state_index, 100, 0.2)
    assert lat.spacing == pytest.approx(0.002)
    np.testing.assert_array_equal(lat.data_counts, data.phi.sum(axis=0))
    assert lat.contains(np.zeros(4))
    assert not lat.contains(np.full(4, 0.005))
    with pytest.raises(InputError):
        oracle.exact_cd_gradient_support(TABLE, data.state_index, 99, 0.2)
