"""Entrywise unbiased covariance estimation from masked data.

Each entry (j, k) averages the product x_j * x_k over exactly the samples
that observe both variables, so different entries may rest on very
different sample sizes.  Pairs never observed together are stored as 0 and
flagged so downstream weighting can ignore them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .obsmodel import MaskedDataset, PairCounts, pairwise_counts


@dataclass(frozen=True)
class PairwiseCovariance:
    """Entrywise covariance estimate with its supporting counts.

    ``zero_count_mask[j, k]`` is True exactly when no sample observes both
    j and k; those entries of ``sigma_hat`` are 0 by convention.
    """

    sigma_hat: np.ndarray
    counts: PairCounts
    zero_count_mask: np.ndarray
    centered: bool = False

    @property
    def n_vars(self) -> int:
        return self.sigma_hat.shape[0]


def unbiased_cov(
    data: MaskedDataset,
    counts: PairCounts | None = None,
    center: bool = False,
) -> PairwiseCovariance:
    """Average of observed products per variable pair.

    With ``center=True`` the pairwise-complete means are subtracted per
    pair, i.e. entry (j, k) uses the means of x_j and x_k over the samples
    observing both.  The default matches a zero-mean model and has no
    centering term.
    """
    if counts is None:
        counts = pairwise_counts(data)
    p = data.n_vars
    prod = np.zeros((p, p))
    sums = np.zeros((p, p)) if center else None
    for g in data.groups:
        if not g.indices.size:
            continue
        block = np.ix_(g.indices, g.indices)
        prod[block] += g.values.T @ g.values
        if center:
            colsum = g.values.sum(axis=0)
            sums[block] += colsum[:, None]
    n = counts.counts
    zero = n == 0
    denom = np.where(zero, 1, n).astype(np.float64)
    sigma = prod / denom
    if center:
        # sums[j, k] totals x_j over joint observers of (j, k); its transpose
        # totals x_k, so the cross-mean term is sums * sums.T / n^2.
        sigma = sigma - (sums * sums.T) / (denom * denom)
    sigma[zero] = 0.0
    return PairwiseCovariance(
        sigma_hat=sigma, counts=counts, zero_count_mask=zero, centered=center
    )
