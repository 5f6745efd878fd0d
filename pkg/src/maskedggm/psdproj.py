"""Projection of an entrywise covariance estimate onto the PSD cone.

The target problem is

    minimize  max_{j,k} w_{j,k} |S_{j,k} - sigma_hat_{j,k}|
    over      symmetric S with lambda_min(S) >= eps,

with weights w_{j,k} = sqrt(n_{j,k}).  Entries with n_{j,k} = 0 carry zero
weight: the objective ignores them and the matching inverse weight is
treated as +inf inside the l1-ball projection.

Solved by ADMM alternating an eigenvalue-thresholding step (Frobenius
projection onto the eigenvalue-floored cone) with a weighted-l1-ball
projection that realises the prox of the weighted sup-norm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ProjectionError(RuntimeError):
    """Numerical failure inside the projection solver."""


@dataclass(frozen=True)
class ProjectionConfig:
    """ADMM settings: penalty mu, eigenvalue floor eps, stopping rules."""

    mu: float = 1.0
    eps: float = 1e-3
    max_iter: int = 2000
    tol_primal: float = 1e-7
    tol_change: float = 1e-9

    def __post_init__(self):
        if not (self.mu > 0 and self.eps > 0 and self.tol_primal > 0 and self.tol_change > 0):
            raise ValueError("mu, eps and tolerances must all be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class ProjectedCovariance:
    """Result of the weighted PSD projection.

    ``objective`` is max_{j,k} sqrt(n_{j,k}) |sigma_tilde - sigma_hat| and
    ``final_residual`` the Frobenius norm of the ADMM split constraint at
    exit.  ``converged`` is False when max_iter was hit first.
    """

    sigma_tilde: np.ndarray
    iterations_used: int
    final_residual: float
    objective: float
    converged: bool

    @property
    def n_vars(self) -> int:
        return self.sigma_tilde.shape[0]


def eig_threshold(A: np.ndarray, eps: float) -> np.ndarray:
    """Frobenius-nearest symmetric matrix with all eigenvalues >= eps.

    The input is symmetrised first; eigenvalues below eps are clamped to
    eps and the matrix reassembled.
    """
    A = np.asarray(A, dtype=np.float64)
    S = 0.5 * (A + A.T)
    try:
        vals, vecs = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        finite = np.isfinite(S).all()
        raise ProjectionError(
            f"eigendecomposition failed (finite entries: {finite}, "
            f"max |entry|: {np.abs(S).max() if finite else np.inf})"
        ) from exc
    clipped = np.maximum(vals, eps)
    out = (vecs * clipped) @ vecs.T
    return 0.5 * (out + out.T)


def project_weighted_l1_ball(
    A: np.ndarray, inv_weights: np.ndarray, radius: float
) -> np.ndarray:
    """Frobenius projection of A onto {D : sum inv_weights * |D| <= radius}.

    Entries with infinite inverse weight are forced to zero (the limit of
    the soft-threshold formula); they contribute nothing to the ball norm.
    For A outside the ball the projection is an entrywise soft threshold
    D = sign(A) * max(|A| - c * inv_weights, 0) with the threshold level c
    found exactly by sorting the breakpoints |A| / inv_weights and solving
    a linear equation on the active segment.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    A = np.asarray(A, dtype=np.float64)
    w = np.asarray(inv_weights, dtype=np.float64)
    if w.shape != A.shape:
        raise ValueError("inv_weights shape must match A")
    if (w < 0).any():
        raise ValueError("inv_weights must be nonnegative")

    forced = np.isinf(w)
    absA = np.abs(A)
    finite_norm = float((w[~forced] * absA[~forced]).sum())
    out = A.copy()
    out[forced] = 0.0
    if finite_norm <= radius:
        return out

    # Active entries: finite positive inverse weight and nonzero value.
    act = (~forced) & (w > 0) & (absA > 0)
    wa = w[act]
    aa = absA[act]
    c_break = aa / wa
    order = np.argsort(c_break, kind="stable")
    cb = c_break[order]
    wa2 = (wa * wa)[order]
    waa = (wa * aa)[order]
    # Suffix sums: entries still above threshold when c is in segment k.
    S1 = np.concatenate([np.cumsum(waa[::-1])[::-1], [0.0]])
    S2 = np.concatenate([np.cumsum(wa2[::-1])[::-1], [0.0]])
    # Segment k covers c in [cb[k-1], cb[k]) with actives k..end:
    # f(c) = S1[k] - c * S2[k] must equal radius.
    lo = np.concatenate([[0.0], cb])
    hi = np.concatenate([cb, [np.inf]])
    with np.errstate(divide="ignore", invalid="ignore"):
        c_candidates = (S1 - radius) / S2
    valid = (S2 > 0) & (c_candidates >= lo) & (c_candidates <= hi)
    if not valid.any():
        raise ProjectionError("ball projection failed to locate threshold level")
    c = float(c_candidates[np.argmax(valid)])

    # Entries with w == 0 are never shrunk; forced entries stay zero.
    shrink = np.maximum(absA - c * np.where(forced, np.inf, w), 0.0)
    out = np.sign(A) * shrink
    out[forced] = 0.0
    keep = (~forced) & (w == 0)
    out[keep] = A[keep]
    return out


def project_psd_weighted(cov, cfg: ProjectionConfig = ProjectionConfig()) -> ProjectedCovariance:
    """ADMM solve of the weighted sup-norm projection onto the floored PSD cone.

    ``cov`` is a PairwiseCovariance; weights are sqrt of the joint counts.
    Iterates a floored-eigenvalue projection, a weighted l1-ball projection
    of the split variable (radius mu/2), and a dual update.  Stops when the
    split residual falls below tol_primal * p and successive iterates move
    less than tol_change, or at max_iter with ``converged=False``.
    """
    sigma_hat = np.asarray(cov.sigma_hat, dtype=np.float64)
    p = sigma_hat.shape[0]
    weights = np.sqrt(cov.counts.counts.astype(np.float64))
    with np.errstate(divide="ignore"):
        inv_weights = np.where(weights > 0, 1.0 / np.where(weights > 0, weights, 1.0), np.inf)

    mu = cfg.mu
    B = np.zeros_like(sigma_hat)
    Lam = np.zeros_like(sigma_hat)
    sigma = sigma_hat.copy()
    residual = np.inf
    iterations = 0
    converged = False
    for it in range(1, cfg.max_iter + 1):
        sigma_prev = sigma
        sigma = eig_threshold(B + sigma_hat + mu * Lam, cfg.eps)
        A = sigma - mu * Lam - sigma_hat
        B = A - project_weighted_l1_ball(A, inv_weights, mu / 2.0)
        gap = sigma - B - sigma_hat
        Lam = Lam - gap / mu
        residual = float(np.linalg.norm(gap))
        change = float(np.linalg.norm(sigma - sigma_prev))
        iterations = it
        if residual <= cfg.tol_primal * p and change <= cfg.tol_change:
            converged = True
            break

    diff = np.abs(sigma - sigma_hat)
    objective = float((weights * diff).max()) if p else 0.0
    return ProjectedCovariance(
        sigma_tilde=sigma,
        iterations_used=iterations,
        final_residual=residual,
        objective=objective,
        converged=converged,
    )
