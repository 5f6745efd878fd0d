"""Family-wise and false-discovery-rate control over edge p-values.

Holm's step-down handles FWER.  The FDR procedure is a truncated
Benjamini-Hochberg variant: the p-value threshold is the largest observed
p-value that both clears a lower cut 2(1 - Phi(t)) with
t = sqrt(2 log m - 2 log log m) and keeps the estimated false discovery
proportion below alpha; when no observed p-value qualifies, a fixed
fallback threshold 2(1 - Phi(sqrt(2 log m))) is used instead.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .edgewise import EdgeInference, normal_cdf


@dataclass(frozen=True)
class PvalueTable:
    """Per-pair p-values for pairs a < b, with untestable pairs kept aside.

    ``m`` counts only testable pairs; untestable ones never enter any
    selection and shrink the multiplicity accordingly.
    """

    entries: tuple
    untestable: tuple = ()

    def __post_init__(self):
        seen = set()
        for a, b, p in self.entries:
            if not a < b:
                raise ValueError(f"pairs must satisfy a < b, got ({a}, {b})")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"p-value out of [0, 1] for pair ({a}, {b}): {p}")
            if (a, b) in seen:
                raise ValueError(f"duplicate pair ({a}, {b})")
            seen.add((a, b))

    @property
    def m(self) -> int:
        return len(self.entries)

    @classmethod
    def from_edge_records(
        cls, records: Iterable[EdgeInference], use_threshold_pvalues: Optional[dict] = None
    ) -> "PvalueTable":
        entries, untestable = [], []
        for r in records:
            if r.testable:
                p = use_threshold_pvalues[(r.a, r.b)] if use_threshold_pvalues else r.p_value
                entries.append((r.a, r.b, float(p)))
            else:
                untestable.append((r.a, r.b, ",".join(r.flags)))
        return cls(entries=tuple(entries), untestable=tuple(untestable))


def holm(table: PvalueTable, alpha: float) -> set:
    """Holm step-down rejection set at family-wise level alpha."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    m = table.m
    if m == 0:
        return set()
    ranked = sorted(table.entries, key=lambda e: e[2])
    rejected: set = set()
    for i, (a, b, p) in enumerate(ranked):
        if p <= alpha / (m - i):
            rejected.add((a, b))
        else:
            break
    return rejected


@dataclass(frozen=True)
class FdrSelection:
    """Outcome of the FDR procedure, including the threshold actually used."""

    selected: frozenset
    alpha: float
    m: int
    rho0: float
    branch: str  # "main", "fallback" or "holm"

    def summary(self) -> dict:
        return {"alpha": self.alpha, "m": self.m, "rho0": self.rho0, "branch": self.branch}


def fdr_select(table: PvalueTable, n_nodes: int, alpha: float) -> FdrSelection:
    """Truncated BH-style selection of significant pairs.

    Scans the observed p-values in descending order for the largest k whose
    p-value clears the lower cut and satisfies p <= alpha * k / m; tied
    p-values are kept or dropped as a block.  Falls back to the fixed
    threshold when no observed p-value qualifies, and to Holm (with a
    warning) when fewer than three pairs are testable.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    m = table.m
    if m > n_nodes * (n_nodes - 1) // 2:
        raise ValueError("more testable pairs than node pairs")
    if m < 3:
        warnings.warn(
            "fewer than 3 testable pairs: the FDR threshold is undefined, using Holm",
            RuntimeWarning,
        )
        return FdrSelection(
            selected=frozenset(holm(table, alpha)), alpha=alpha, m=m,
            rho0=math.nan, branch="holm",
        )

    lower_cut = 2.0 * (1.0 - normal_cdf(math.sqrt(2.0 * math.log(m) - 2.0 * math.log(math.log(m)))))
    fallback_cut = 2.0 * (1.0 - normal_cdf(math.sqrt(2.0 * math.log(m))))

    ranked = sorted(table.entries, key=lambda e: e[2])
    pvals = [e[2] for e in ranked]

    # Candidate thresholds: distinct observed p-values in [lower_cut, 1],
    # scanned from the largest; ties share a rank block, so each distinct
    # value is judged at its highest rank.
    rho0 = None
    k = m
    while k >= 1:
        p_k = pvals[k - 1]
        if p_k < lower_cut:
            break
        k_hi = k
        while k >= 1 and pvals[k - 1] == p_k:
            k -= 1
        if p_k <= alpha * k_hi / m:
            rho0 = p_k
            break
    if rho0 is None:
        # The left endpoint of the scan interval can qualify even when no
        # observed p-value does.
        r_at_cut = max(sum(1 for p in pvals if p <= lower_cut), 1)
        if lower_cut <= alpha * r_at_cut / m:
            rho0 = lower_cut

    if rho0 is not None:
        sel = frozenset((a, b) for a, b, p in ranked if p <= rho0)
        return FdrSelection(selected=sel, alpha=alpha, m=m, rho0=rho0, branch="main")
    sel = frozenset((a, b) for a, b, p in ranked if p <= fallback_cut)
    return FdrSelection(selected=sel, alpha=alpha, m=m, rho0=fallback_cut, branch="fallback")


def fdp_fdr_metrics(selected: Iterable, true_edges: Iterable) -> tuple[float, float]:
    """False discovery proportion and power of a selected edge set."""
    sel = {tuple(sorted(e)) for e in selected}
    truth = {tuple(sorted(e)) for e in true_edges}
    n_sel = len(sel)
    false = len(sel - truth)
    fdp = false / max(n_sel, 1)
    power = len(sel & truth) / len(truth) if truth else 0.0
    return fdp, power
