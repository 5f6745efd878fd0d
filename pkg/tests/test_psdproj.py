import numpy as np
import pytest

from maskedggm.covest import PairwiseCovariance, unbiased_cov
from maskedggm.obsmodel import MaskedDataset, PairCounts, pairwise_counts
from maskedggm.psdproj import (
    ProjectionConfig,
    eig_threshold,
    project_psd_weighted,
    project_weighted_l1_ball,
)


def bisect_ball_projection(A, inv_w, radius, iters=200):
    """Independent oracle: bisection on the threshold level c."""
    finite = ~np.isinf(inv_w)

    def weighted_norm(c):
        d = np.maximum(np.abs(A[finite]) - c * inv_w[finite], 0.0)
        return (inv_w[finite] * d).sum()

    if weighted_norm(0.0) <= radius:
        out = A.copy()
        out[~finite] = 0.0
        return out
    pos = finite & (inv_w > 0)
    lo, hi = 0.0, float(np.max(np.abs(A[pos]) / inv_w[pos])) + 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if weighted_norm(mid) > radius:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    out = np.sign(A) * np.maximum(np.abs(A) - c * inv_w, 0.0)
    out[~finite] = 0.0
    return out


# ----------------------------------------------------------------------
# eigenvalue thresholding

def test_eig_threshold_fixed_point():
    rng = np.random.default_rng(0)
    G = rng.standard_normal((6, 6))
    A = G @ G.T + 0.5 * np.eye(6)  # comfortably feasible
    out = eig_threshold(A, 0.1)
    assert np.linalg.norm(out - A) < 1e-10


def test_eig_threshold_diagonal_clamp():
    A = np.diag([2.0, -1.0])
    out = eig_threshold(A, 0.1)
    assert np.allclose(out, np.diag([2.0, 0.1]), atol=1e-12)


def test_eig_threshold_is_nearest_feasible_point():
    # Projection onto a convex set: <A - out, M - out> <= 0 for feasible M,
    # and out is no farther than any sampled feasible candidate.
    rng = np.random.default_rng(1)
    eps = 0.05
    A = rng.standard_normal((6, 6))
    A = 0.5 * (A + A.T)
    out = eig_threshold(A, eps)
    assert np.linalg.eigvalsh(out).min() >= eps - 1e-10
    d_out = np.linalg.norm(A - out)
    for _ in range(300):
        G = rng.standard_normal((6, 6))
        M = eps * np.eye(6) + G @ G.T * rng.uniform(0.01, 2.0)
        M = M + rng.standard_normal() * np.eye(6) * 0.0  # symmetric PSD-floored
        assert np.linalg.norm(A - M) >= d_out - 1e-10
        assert ((A - out) * (M - out)).sum() <= 1e-8


# ----------------------------------------------------------------------
# weighted l1-ball projection

def test_ball_interior_point_unchanged():
    A = np.array([[0.1, -0.2], [0.05, 0.0]])
    w = np.ones((2, 2))
    out = project_weighted_l1_ball(A, w, radius=1.0)
    assert np.allclose(out, A)


def test_ball_scalar_soft_threshold():
    A = np.array([[5.0]])
    out = project_weighted_l1_ball(A, np.ones((1, 1)), radius=2.0)
    assert np.allclose(out, [[2.0]])


def test_ball_matches_bisection_oracle():
    rng = np.random.default_rng(3)
    for trial in range(20):
        A = rng.standard_normal((4, 4)) * rng.uniform(0.5, 3.0)
        inv_w = rng.uniform(0.2, 2.0, size=(4, 4))
        radius = rng.uniform(0.3, 2.0)
        out = project_weighted_l1_ball(A, inv_w, radius)
        oracle = bisect_ball_projection(A, inv_w, radius)
        assert np.max(np.abs(out - oracle)) < 1e-10
        norm = (inv_w * np.abs(out)).sum()
        if norm < radius - 1e-8:  # interior case
            assert np.allclose(out, A)
        else:
            assert abs(norm - radius) < 1e-8


def test_ball_subgradient_certificate():
    # With radius mu/2, z = (2/mu) * projection must have unit weighted-l1
    # norm and align with the residual's weighted sup norm.
    rng = np.random.default_rng(4)
    for trial in range(20):
        p = 5
        A = rng.standard_normal((p, p)) * 2.0
        weights = rng.uniform(0.5, 3.0, size=(p, p))  # omega
        inv_w = 1.0 / weights
        mu = rng.uniform(0.2, 1.5)
        delta = project_weighted_l1_ball(A, inv_w, radius=mu / 2.0)
        if (inv_w * np.abs(A)).sum() <= mu / 2.0:
            continue
        z = (2.0 / mu) * delta
        assert abs((inv_w * np.abs(z)).sum() - 1.0) < 1e-8
        resid = A - delta
        lhs = (resid * z).sum()
        rhs = (weights * np.abs(resid)).max()
        assert abs(lhs - rhs) < 1e-8


def test_ball_infinite_inverse_weight_forces_zero():
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    inv_w = np.array([[1.0, np.inf], [1.0, 1.0]])
    out = project_weighted_l1_ball(A, inv_w, radius=2.0)
    assert out[0, 1] == 0.0
    finite_mask = ~np.isinf(inv_w)
    assert abs((inv_w[finite_mask] * np.abs(out[finite_mask])).sum() - 2.0) < 1e-8


def test_ball_rejects_bad_radius():
    with pytest.raises(ValueError):
        project_weighted_l1_ball(np.ones((2, 2)), np.ones((2, 2)), radius=0.0)


# ----------------------------------------------------------------------
# full ADMM projection

def _cov_from_matrix(S, counts_value, n_samples=None):
    p = S.shape[0]
    counts = PairCounts(
        counts=np.full((p, p), counts_value, dtype=np.int64),
        n_samples=n_samples or counts_value,
    )
    return PairwiseCovariance(
        sigma_hat=S, counts=counts, zero_count_mask=counts.counts == 0
    )


def test_feasible_input_is_fixed_point():
    rng = np.random.default_rng(5)
    X = rng.standard_normal((60, 5))
    data = MaskedDataset.from_full(X)
    cov = unbiased_cov(data, pairwise_counts(data))
    proj = project_psd_weighted(cov)
    assert proj.converged
    assert np.max(np.abs(proj.sigma_tilde - cov.sigma_hat)) < 1e-6
    assert proj.objective < 1e-6


def test_indefinite_two_by_two_beats_random_candidates():
    S = np.array([[1.0, 2.0], [2.0, 1.0]])
    cov = _cov_from_matrix(S, counts_value=4)
    proj = project_psd_weighted(cov, ProjectionConfig(eps=1e-3))
    assert np.linalg.eigvalsh(proj.sigma_tilde).min() >= 1e-3 - 1e-8
    rng = np.random.default_rng(6)
    w = np.sqrt(cov.counts.counts)
    best = np.inf
    for _ in range(10_000):
        G = rng.standard_normal((2, 2))
        cand = 1e-3 * np.eye(2) + G @ G.T
        best = min(best, (w * np.abs(cand - S)).max())
    assert proj.objective <= best + 1e-9


def test_psd_floor_always_enforced():
    rng = np.random.default_rng(7)
    for trial in range(5):
        S = rng.standard_normal((8, 8))
        S = 0.5 * (S + S.T)
        counts_value = int(rng.integers(5, 200))
        cov = _cov_from_matrix(S, counts_value)
        proj = project_psd_weighted(cov, ProjectionConfig(max_iter=400))
        assert np.linalg.eigvalsh(proj.sigma_tilde).min() >= 1e-3 - 1e-8
        if proj.converged:
            assert proj.final_residual <= 1e-7 * 8


def test_zero_weight_entries_do_not_affect_objective():
    rng = np.random.default_rng(8)
    S = rng.standard_normal((4, 4))
    S = 0.5 * (S + S.T)
    counts = np.full((4, 4), 50, dtype=np.int64)
    counts[0, 3] = counts[3, 0] = 0
    S[0, 3] = S[3, 0] = 0.0  # zero-count entries are stored as zero
    cov = PairwiseCovariance(sigma_hat=S, counts=PairCounts(counts, 50),
                             zero_count_mask=counts == 0)
    proj = project_psd_weighted(cov, ProjectionConfig(max_iter=3000))
    w = np.sqrt(counts.astype(float))
    manual = (w * np.abs(proj.sigma_tilde - S)).max()
    assert abs(proj.objective - manual) < 1e-12
    assert np.linalg.eigvalsh(proj.sigma_tilde).min() >= 1e-3 - 1e-8
