import math

import numpy as np
import pytest

from maskedggm.covest import PairwiseCovariance, unbiased_cov
from maskedggm.edgewise import (
    EdgeInference,
    build_theta_bar,
    debiased_stat,
    edge_test,
    edges_to_neighbors,
    normal_cdf,
    normal_quantile,
    s1_s2_sets,
    infer_all_edges,
    threshold_test,
    variance_estimate,
)
from maskedggm.nblasso import (
    DebiasRow,
    DegenerateVarianceError,
    NeighborhoodFit,
    PenaltyVector,
    solve_penalized_quadratic,
    tau_and_row,
)
from maskedggm.obsmodel import MaskedDataset, ObservationIndex, PairCounts, pairwise_counts
from maskedggm.psdproj import project_psd_weighted

from test_obsmodel import random_masked


def make_fit(theta, target, excluded):
    pen = PenaltyVector(np.zeros(theta.size), 0.0, np.zeros(theta.size))
    return NeighborhoodFit(theta=np.asarray(theta, float), target=target,
                           excluded=frozenset(excluded), penalties=pen,
                           kkt_residual=0.0, iterations=1, converged=True)


def make_row(row_vec, a, b):
    row_vec = np.asarray(row_vec, float)
    return DebiasRow(row=row_vec, tau=float(row_vec[b]),
                     support=frozenset(np.nonzero(row_vec)[0].tolist()), a=a, b=b)


def population_pieces(theta_star, a, b):
    """theta^(a), theta-bar^(a) and the b-row of the a-excluded inverse."""
    p = theta_star.shape[0]
    sigma = np.linalg.inv(theta_star)
    th = np.zeros(p)
    mask = [j for j in range(p) if j != a]
    th[mask] = -theta_star[mask, a] / theta_star[a, a]
    tbar = -th.copy()
    tbar[a] = 1.0
    row = np.zeros(p)
    inv = np.linalg.inv(sigma[np.ix_(mask, mask)])
    for pos, j in enumerate(mask):
        row[j] = inv[mask.index(b), pos]
    return sigma, th, tbar, row


# ----------------------------------------------------------------------
# normal distribution helpers

def test_cdf_values():
    assert normal_cdf(0.0) == pytest.approx(0.5, abs=1e-15)
    assert normal_cdf(1.959964) == pytest.approx(0.975, abs=1e-6)
    assert normal_cdf(-8.0) == pytest.approx(6.22096057427178e-16, rel=1e-9)


def test_quantile_inverts_cdf():
    assert normal_quantile(0.975) == pytest.approx(1.959964, abs=1e-6)
    for q in (1e-9, 1e-4, 0.025, 0.3, 0.5, 0.7, 0.999999):
        assert normal_cdf(normal_quantile(q)) == pytest.approx(q, abs=1e-12)
    with pytest.raises(ValueError):
        normal_quantile(0.0)
    with pytest.raises(ValueError):
        normal_quantile(1.0)


# ----------------------------------------------------------------------
# index sets

def test_s1_s2_chain_example():
    # Chain on 6 nodes, testing the non-adjacent pair (0, 2).
    edges = [(j, j + 1) for j in range(5)]
    nbrs = edges_to_neighbors(edges, 6)
    s1, s2 = s1_s2_sets(nbrs, 0, 2)
    nbar_a = {0, 1}
    nbar_b_a = {1, 2, 3}
    expect_s2 = {(j, k) for j in nbar_a for k in nbar_b_a}
    expect_s2 |= {(k, j) for j, k in expect_s2}
    assert s2 == expect_s2
    core = {1} | nbar_b_a
    assert s1 == {(j, k) for j in range(6) for k in range(6) if j in core or k in core}


def test_s1_s2_empty_graph():
    nbrs = [set() for _ in range(4)]
    _, s2 = s1_s2_sets(nbrs, 0, 3)
    assert s2 == {(0, 3), (3, 0)}


def test_s1_s2_adjacent_pair_merges_neighborhoods():
    # Star with hub 0: testing hub against a leaf makes the b-given-a
    # closed neighborhood the union of both closed neighborhoods.
    edges = [(0, j) for j in range(1, 5)]
    nbrs = edges_to_neighbors(edges, 5)
    _, s2 = s1_s2_sets(nbrs, 0, 1)
    nbar_a = {0, 1, 2, 3, 4}
    nbar_b_a = nbar_a | {0, 1}
    expect = {(j, k) for j in nbar_a for k in nbar_b_a}
    expect |= {(k, j) for j, k in expect}
    assert s2 == expect


# ----------------------------------------------------------------------
# debiased statistic

def test_debiased_stat_zero_at_population_values():
    rng = np.random.default_rng(53)
    p, a, b = 5, 0, 2
    G = rng.standard_normal((p, p))
    theta_star = G @ G.T / p + 0.8 * np.eye(p)
    sigma, th, tbar, row_vec = population_pieces(theta_star, a, b)
    counts = PairCounts(np.full((p, p), 100, dtype=np.int64), 100)
    cov = PairwiseCovariance(sigma, counts, counts.counts == 0)
    stat = debiased_stat(make_fit(th, a, [a]), make_row(row_vec, a, b), cov, a, b)
    assert stat == pytest.approx(th[b], abs=1e-12)
    assert stat == pytest.approx(-theta_star[a, b] / theta_star[a, a], abs=1e-10)


def test_debiased_stat_identity_zero_fits():
    p, a, b = 4, 0, 1
    counts = PairCounts(np.full((p, p), 10, dtype=np.int64), 10)
    cov = PairwiseCovariance(np.eye(p), counts, counts.counts == 0)
    row = np.zeros(p)
    row[b] = 1.0
    stat = debiased_stat(make_fit(np.zeros(p), a, [a]), make_row(row, a, b), cov, a, b)
    assert stat == 0.0


def test_debiased_stat_matches_dense_algebra():
    rng = np.random.default_rng(59)
    for trial in range(20):
        p = 6
        a, b = rng.choice(p, size=2, replace=False)
        sig = rng.standard_normal((p, p))
        sig = 0.5 * (sig + sig.T)
        counts = PairCounts(np.full((p, p), 30, dtype=np.int64), 30)
        cov = PairwiseCovariance(sig, counts, counts.counts == 0)
        theta = rng.standard_normal(p) * (rng.random(p) < 0.6)
        theta[a] = 0.0
        row = rng.standard_normal(p) * (rng.random(p) < 0.6)
        row[a] = 0.0
        row[b] = rng.uniform(0.5, 2.0)
        stat = debiased_stat(make_fit(theta, a, [a]), make_row(row, int(a), int(b)),
                             cov, int(a), int(b))
        dense = theta[b] - row @ (sig @ theta - sig[:, a])
        assert stat == pytest.approx(dense, rel=1e-12, abs=1e-14)


# ----------------------------------------------------------------------
# variance estimation

def dense_variance_oracle(sig, counts, idx, row, tbar):
    p = sig.shape[0]
    total = 0.0
    for j in range(p):
        for k in range(p):
            if row[j] == 0 or tbar[k] == 0 or counts[j, k] == 0:
                continue
            for j2 in range(p):
                for k2 in range(p):
                    if row[j2] == 0 or tbar[k2] == 0 or counts[j2, k2] == 0:
                        continue
                    n4 = idx.quad_count(j, k, j2, k2)
                    if n4 == 0:
                        continue
                    t = (sig[j, j2] * sig[k, k2] + sig[j, k2] * sig[k, j2])
                    t *= n4 / (counts[j, k] * counts[j2, k2])
                    total += t * row[j] * tbar[k] * row[j2] * tbar[k2]
    return total


def test_variance_equal_counts_closed_form():
    # With every pair observed in all n samples and population inputs, the
    # contraction collapses to (t_aa t_bb - t_ab^2) / (n t_aa^2).
    rng = np.random.default_rng(61)
    for trial in range(8):
        p, n = 5, 173
        G = rng.standard_normal((p, p))
        theta_star = G @ G.T / p + 0.9 * np.eye(p)
        a, b = rng.choice(p, size=2, replace=False)
        sigma, th, tbar, row_vec = population_pieces(theta_star, int(a), int(b))
        counts = PairCounts(np.full((p, p), n, dtype=np.int64), n)
        cov = PairwiseCovariance(sigma, counts, counts.counts == 0)
        data = MaskedDataset.from_full(np.zeros((n, p)))
        idx = ObservationIndex(data)
        var = variance_estimate(cov, idx, make_row(row_vec, int(a), int(b)),
                                build_theta_bar(make_fit(th, int(a), [int(a)]), int(a)))
        ta, tb, tab = theta_star[a, a], theta_star[b, b], theta_star[a, b]
        expected = (ta * tb - tab ** 2) / (n * ta ** 2)
        assert var == pytest.approx(expected, abs=1e-10, rel=1e-10)


def test_variance_matches_dense_quadruple_loop():
    rng = np.random.default_rng(67)
    for trial in range(6):
        p = 8
        data = random_masked(rng, n=60, p=p, obs_prob=0.7)
        counts = pairwise_counts(data)
        cov = unbiased_cov(data, counts)
        idx = ObservationIndex(data)
        a, b = 0, 3
        row = rng.standard_normal(p) * (rng.random(p) < 0.5)
        row[a] = 0.0
        row[b] = rng.uniform(0.5, 1.5)
        tbar_vec = rng.standard_normal(p) * (rng.random(p) < 0.5)
        tbar_vec[a] = 1.0
        fit = make_fit(-tbar_vec, a, [a])  # build_theta_bar negates
        tbar = build_theta_bar(fit, a)
        assert np.allclose(tbar.vec, tbar_vec)
        oracle = dense_variance_oracle(cov.sigma_hat, counts.counts, idx, row, tbar_vec)
        if oracle <= 0:
            with pytest.raises(DegenerateVarianceError):
                variance_estimate(cov, idx, make_row(row, a, b), tbar)
            continue
        var = variance_estimate(cov, idx, make_row(row, a, b), tbar)
        assert var == pytest.approx(oracle, rel=1e-12, abs=1e-14)


def test_variance_disjoint_support_degenerates():
    # Supports observed in disjoint sample blocks: every quadruple count
    # crossing them is zero, so the variance sums to zero and errors out.
    rows = [((0, 1), (1.0, 2.0))] * 5 + [((2, 3), (1.5, -0.5))] * 5
    data = MaskedDataset.from_rows(rows, n_vars=4)
    counts = pairwise_counts(data)
    cov = unbiased_cov(data, counts)
    idx = ObservationIndex(data)
    row = np.array([0.0, 0.0, 0.0, 1.0])  # support {3}
    tbar_fit = make_fit(np.array([0.0, -1.0, 0.0, 0.0]), 0, [0])
    tbar = build_theta_bar(tbar_fit, 0)  # support {0, 1}
    with pytest.raises(DegenerateVarianceError):
        variance_estimate(cov, idx, make_row(row, 0, 3), tbar)


# ----------------------------------------------------------------------
# threshold test

def test_threshold_zero_reduces_to_plain_pvalue():
    e = EdgeInference(a=0, b=1, theta_tilde=0.3, sigma_hat_n=0.1, z=3.0,
                      p_value=2 * (1 - normal_cdf(3.0)), ci_low=0.1, ci_high=0.5,
                      n1=10, n2=10, alpha=0.05)
    assert threshold_test(e, 0.0) == e.p_value


def test_threshold_inside_null_gives_one():
    e = EdgeInference(a=0, b=1, theta_tilde=0.05, sigma_hat_n=0.1, z=0.5,
                      p_value=0.6, ci_low=-0.1, ci_high=0.2, n1=10, n2=10, alpha=0.05)
    assert threshold_test(e, 0.12) == 1.0


def test_threshold_scalar_example():
    e = EdgeInference(a=0, b=1, theta_tilde=0.3, sigma_hat_n=0.05, z=6.0,
                      p_value=0.0, ci_low=0.2, ci_high=0.4, n1=10, n2=10, alpha=0.05)
    expected = 2 * (1 - normal_cdf((0.3 - 0.12) / 0.05))
    assert threshold_test(e, 0.12) == pytest.approx(expected, rel=1e-12)
    assert threshold_test(e, 0.12) == pytest.approx(2 * (1 - normal_cdf(3.6)), rel=1e-12)


# ----------------------------------------------------------------------
# end-to-end edge test

def _full_data_test(rng, n=300, p=8, a=0, b=1, alpha=0.05, C=0.7):
    X = rng.standard_normal((n, p))
    data = MaskedDataset.from_full(X)
    counts = pairwise_counts(data)
    cov = unbiased_cov(data, counts)
    proj = project_psd_weighted(cov)
    return edge_test(data, counts, proj.sigma_tilde, a, b, penalty_c=C,
                     alpha=alpha, cov=cov)


def test_edge_test_record_consistency():
    res = _full_data_test(np.random.default_rng(71))
    assert res.p_value == pytest.approx(2 * (1 - normal_cdf(abs(res.z))), rel=1e-12)
    assert res.ci_low <= res.theta_tilde <= res.ci_high
    width = res.ci_high - res.ci_low
    assert width == pytest.approx(2 * normal_quantile(0.975) * res.sigma_hat_n, rel=1e-10)
    rec = res.to_record()
    assert rec["a"] == 0 and rec["b"] == 1 and len(rec["ci"]) == 2


def test_ci_duality_with_rejection():
    rng = np.random.default_rng(73)
    for trial in range(20):
        res = _full_data_test(rng, n=150, p=5)
        rejected = res.p_value <= res.alpha
        zero_outside = not (res.ci_low <= 0.0 <= res.ci_high)
        assert rejected == zero_outside


def test_null_z_scores_are_standard_normal():
    # Identity covariance, full observation: the z statistic over replicates
    # should track N(0, 1); compare empirical and normal CDFs.
    rng = np.random.default_rng(79)
    reps = 500
    zs = []
    for _ in range(reps):
        res = _full_data_test(rng, n=120, p=6, C=0.8)
        zs.append(res.z)
    zs = np.sort(zs)
    ecdf = (np.arange(reps) + 0.5) / reps
    gauss = np.array([normal_cdf(z) for z in zs])
    ks = np.max(np.abs(ecdf - gauss))
    assert ks < 0.1


def test_pvalue_invariant_under_far_node_relabeling():
    # Swapping two nodes outside both neighborhoods (and permuting the data
    # consistently) must not change the test for the original pair.
    rng = np.random.default_rng(83)
    n, p, a, b = 200, 7, 0, 1
    X = rng.standard_normal((n, p))
    perm = np.arange(p)
    perm[[5, 6]] = perm[[6, 5]]
    data1 = MaskedDataset.from_full(X)
    data2 = MaskedDataset.from_full(X[:, perm])
    out = []
    for data in (data1, data2):
        counts = pairwise_counts(data)
        cov = unbiased_cov(data, counts)
        proj = project_psd_weighted(cov)
        out.append(edge_test(data, counts, proj.sigma_tilde, a, b,
                             penalty_c=0.8, cov=cov))
    assert out[0].p_value == pytest.approx(out[1].p_value, rel=1e-9)
    assert out[0].theta_tilde == pytest.approx(out[1].theta_tilde, rel=1e-9)


def test_all_edges_parallel_matches_serial():
    rng = np.random.default_rng(89)
    X = rng.standard_normal((150, 6))
    data = MaskedDataset.from_full(X)
    counts = pairwise_counts(data)
    cov = unbiased_cov(data, counts)
    proj = project_psd_weighted(cov)
    serial = infer_all_edges(data, counts, proj.sigma_tilde, 0.7, threads=1, cov=cov)
    parallel = infer_all_edges(data, counts, proj.sigma_tilde, 0.7, threads=4, cov=cov)
    assert [(r.a, r.b) for r in serial] == [(r.a, r.b) for r in parallel]
    for r1, r2 in zip(serial, parallel):
        assert r1.p_value == r2.p_value
        assert r1.theta_tilde == r2.theta_tilde


def test_edge_test_rejects_bad_pair():
    rng = np.random.default_rng(97)
    X = rng.standard_normal((50, 4))
    data = MaskedDataset.from_full(X)
    counts = pairwise_counts(data)
    cov = unbiased_cov(data, counts)
    proj = project_psd_weighted(cov)
    with pytest.raises(ValueError):
        edge_test(data, counts, proj.sigma_tilde, 1, 1, penalty_c=0.5, cov=cov)
    with pytest.raises(IndexError):
        edge_test(data, counts, proj.sigma_tilde, 0, 9, penalty_c=0.5, cov=cov)
