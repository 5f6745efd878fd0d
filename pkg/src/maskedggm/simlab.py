"""Simulation laboratory: graphs, precision matrices, observation patterns,
Gaussian sampling, tuning by stability, a plug-in selection baseline, and
replicate drivers for edge-level and full-graph studies.

Everything is a deterministic function of its spec and seed; replicate
loops derive child seeds from a master seed so reruns are byte-identical.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .covest import unbiased_cov
from .edgewise import (
    DegenerateVarianceError,
    edge_test,
    edges_to_neighbors,
    s1_s2_sets,
    infer_all_edges,
    threshold_test,
)
from .multitest import PvalueTable, fdp_fdr_metrics, fdr_select, holm
from .nblasso import default_penalties, neighborhood_support, solve_penalized_quadratic
from .obsmodel import MaskedDataset, pairwise_counts
from .psdproj import ProjectionConfig, project_psd_weighted


# ----------------------------------------------------------------------
# Specs

@dataclass(frozen=True)
class GraphSpec:
    """Recipe for a simple undirected graph on p nodes."""

    kind: str  # chain | multi_star | erdos_renyi | barabasi_albert | watts_strogatz
    p: int
    seed: int = 0
    stars: int = 3
    expected_degree: float = 3.0
    edges_per_node: int = 1
    ring_degree: int = 2
    rewire_prob: float = 0.5

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "p": self.p, "seed": self.seed, "stars": self.stars,
            "expected_degree": self.expected_degree, "edges_per_node": self.edges_per_node,
            "ring_degree": self.ring_degree, "rewire_prob": self.rewire_prob,
        }


@dataclass(frozen=True)
class PrecisionSpec:
    """Recipe for a precision matrix supported on a given edge set.

    Off-diagonal weights are drawn uniformly from [offdiag_low, offdiag_high]
    (positive, no sign flips); one common diagonal value is then chosen so
    the smallest eigenvalue lands exactly on lambda_min_target.  A single
    entry can be pinned to a prescribed value for signal-strength sweeps.
    """

    offdiag_low: float = 0.6
    offdiag_high: float = 0.8
    lambda_min_target: float = 0.25
    seed: int = 0
    target_entry: Optional[tuple] = None  # (a, b)
    target_value: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "offdiag_low": self.offdiag_low, "offdiag_high": self.offdiag_high,
            "lambda_min_target": self.lambda_min_target, "seed": self.seed,
            "target_entry": list(self.target_entry) if self.target_entry else None,
            "target_value": self.target_value,
        }


@dataclass(frozen=True)
class MeasurementSpec:
    """Recipe for which variables each sample observes.

    Scenarios:
      pairwise_design -- every sample observes exactly one pair; pairs tied
        to the target pair's bias set get n1 samples, its variance set n2,
        all other pairs ``base``.
      block_probs -- nodes split into len(probs) blocks of near-equal size,
        node observed independently with its block's probability.
      degree_missing -- node observed with probability 1 - miss_base^degree.
      fixed_size -- each sample observes exactly ``size`` distinct nodes,
        drawn without replacement with weights 1 - miss_base^degree.
    """

    scenario: str
    n_total: int = 0
    seed: int = 0
    n1: int = 50
    n2: int = 50
    base: int = 50
    target_pair: Optional[tuple] = None
    probs: tuple = (math.sqrt(0.1), math.sqrt(0.5), math.sqrt(0.9))
    miss_base: float = 0.815
    size: int = 20

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario, "n_total": self.n_total, "seed": self.seed,
            "n1": self.n1, "n2": self.n2, "base": self.base,
            "target_pair": list(self.target_pair) if self.target_pair else None,
            "probs": list(self.probs), "miss_base": self.miss_base, "size": self.size,
        }


# ----------------------------------------------------------------------
# Graph generation

def gen_graph(spec: GraphSpec) -> set:
    """Edge set (pairs j < k) for the requested graph family."""
    p = spec.p
    if p < 1:
        raise ValueError("p must be positive")
    rng = np.random.default_rng(spec.seed)
    kind = spec.kind
    if kind == "chain":
        return {(j, j + 1) for j in range(p - 1)}
    if kind == "multi_star":
        k = spec.stars
        if not 1 <= k <= p:
            raise ValueError("number of stars must lie in [1, p]")
        size = p // k
        edges = set()
        starts = [i * size for i in range(k)]
        ends = [*(starts[1:]), p]
        for hub, end in zip(starts, ends):
            for member in range(hub + 1, end):
                edges.add((hub, member))
        return edges
    if kind == "erdos_renyi":
        prob = spec.expected_degree / (p - 1) if p > 1 else 0.0
        if not 0 <= prob <= 1:
            raise ValueError("expected_degree yields a probability outside [0, 1]")
        edges = set()
        for j in range(p):
            for k2 in range(j + 1, p):
                if rng.random() < prob:
                    edges.add((j, k2))
        return edges
    if kind == "barabasi_albert":
        m = spec.edges_per_node
        if m < 1:
            raise ValueError("edges_per_node must be >= 1")
        edges = set()
        targets = [0]  # degree-weighted urn of endpoints
        for new in range(1, p):
            chosen = set()
            while len(chosen) < min(m, new):
                pick = int(targets[rng.integers(len(targets))]) if new > 1 else 0
                chosen.add(pick)
            for t in chosen:
                edges.add((min(t, new), max(t, new)))
                targets.extend([t, new])
        return edges
    if kind == "watts_strogatz":
        half = spec.ring_degree // 2
        if half < 1 or spec.ring_degree % 2:
            raise ValueError("ring degree must be a positive even number")
        edges = set()
        for j in range(p):
            for step in range(1, half + 1):
                k2 = (j + step) % p
                if j != k2:
                    edges.add((min(j, k2), max(j, k2)))
        rewired = set()
        for (j, k2) in sorted(edges):
            if rng.random() < spec.rewire_prob:
                choices = [t for t in range(p) if t != j]
                new_k = int(choices[rng.integers(len(choices))])
                e = (min(j, new_k), max(j, new_k))
                if e not in rewired:
                    rewired.add(e)
                else:
                    rewired.add((j, k2))
            else:
                rewired.add((j, k2))
        return {e for e in rewired if e[0] != e[1]}
    raise ValueError(f"unknown graph kind {kind!r}")


def graph_degrees(edges, p: int) -> np.ndarray:
    deg = np.zeros(p, dtype=np.int64)
    for j, k in edges:
        deg[j] += 1
        deg[k] += 1
    return deg


# ----------------------------------------------------------------------
# Precision matrix generation

def gen_precision(edges, p: int, spec: PrecisionSpec) -> tuple[np.ndarray, np.ndarray]:
    """Precision matrix supported on ``edges`` plus its inverse covariance.

    The common diagonal is lambda_min_target minus the smallest eigenvalue
    of the off-diagonal part, which pins the precision's smallest eigenvalue
    exactly at the target.
    """
    rng = np.random.default_rng(spec.seed)
    theta = np.zeros((p, p))
    for j, k in sorted(edges):
        w = rng.uniform(spec.offdiag_low, spec.offdiag_high)
        theta[j, k] = theta[k, j] = w
    if spec.target_entry is not None:
        a, b = spec.target_entry
        v = spec.target_value if spec.target_value is not None else theta[a, b]
        theta[a, b] = theta[b, a] = v
    lam_min_off = float(np.linalg.eigvalsh(theta).min()) if p else 0.0
    d = spec.lambda_min_target - lam_min_off
    theta[np.diag_indices(p)] = d
    sigma = np.linalg.inv(theta)
    return theta, sigma


# ----------------------------------------------------------------------
# Observation patterns and sampling

def gen_pattern(spec: MeasurementSpec, p: int, graph: Optional[set] = None) -> list[np.ndarray]:
    """List of observed index sets, one per sample, per the scenario."""
    rng = np.random.default_rng(spec.seed)
    if spec.scenario == "pairwise_design":
        if graph is None or spec.target_pair is None:
            raise ValueError("pairwise_design needs the true graph and a target pair")
        a, b = spec.target_pair
        nbrs = edges_to_neighbors(graph, p)
        s1, s2 = s1_s2_sets(nbrs, a, b)
        s1u = {tuple(sorted(e)) for e in s1 if e[0] != e[1]}
        s2u = {tuple(sorted(e)) for e in s2 if e[0] != e[1]}
        pattern = []
        for j in range(p):
            for k in range(j + 1, p):
                pair = (j, k)
                if pair in s2u:
                    cnt = spec.n2
                elif pair in s1u:
                    cnt = spec.n1
                else:
                    cnt = spec.base
                arr = np.array(pair, dtype=np.int64)
                pattern.extend([arr] * cnt)
        return pattern
    if spec.scenario == "block_probs":
        probs = np.asarray(spec.probs, dtype=np.float64)
        nblocks = probs.size
        size = p // nblocks
        node_prob = np.empty(p)
        for i in range(nblocks):
            start = i * size
            end = (i + 1) * size if i < nblocks - 1 else p
            node_prob[start:end] = probs[i]
        draws = rng.random((spec.n_total, p)) < node_prob
        return [np.nonzero(row)[0].astype(np.int64) for row in draws]
    if spec.scenario == "degree_missing":
        if graph is None:
            raise ValueError("degree_missing needs the true graph")
        deg = graph_degrees(graph, p)
        node_prob = 1.0 - spec.miss_base ** deg
        draws = rng.random((spec.n_total, p)) < node_prob
        return [np.nonzero(row)[0].astype(np.int64) for row in draws]
    if spec.scenario == "fixed_size":
        if graph is None:
            raise ValueError("fixed_size needs the true graph")
        if spec.size > p:
            raise ValueError(f"cannot observe {spec.size} distinct nodes out of {p}")
        deg = graph_degrees(graph, p)
        weights = 1.0 - spec.miss_base ** deg
        if weights.sum() <= 0:
            raise ValueError("all sampling weights are zero")
        pattern = []
        for _ in range(spec.n_total):
            w = weights.copy()
            chosen = np.empty(spec.size, dtype=np.int64)
            for t in range(spec.size):
                total = w.sum()
                if total <= 0:  # fewer positive-weight nodes than requested
                    rest = np.nonzero(np.isin(np.arange(p), chosen[:t], invert=True))[0]
                    extra = rng.choice(rest, size=spec.size - t, replace=False)
                    chosen[t:] = extra
                    break
                pick = int(rng.choice(p, p=w / total))
                chosen[t] = pick
                w[pick] = 0.0
            pattern.append(np.sort(chosen))
        return pattern
    raise ValueError(f"unknown measurement scenario {spec.scenario!r}")


def sample_data(
    sigma_star: np.ndarray,
    pattern: Sequence[np.ndarray],
    seed: int,
    var_names: Optional[Sequence[str]] = None,
) -> MaskedDataset:
    """Zero-mean Gaussian samples restricted to each pattern entry.

    Each sample is a full draw with covariance ``sigma_star`` (via its
    Cholesky factor) restricted to the observed set, so the observed
    marginals are exact.
    """
    sigma_star = np.asarray(sigma_star, dtype=np.float64)
    p = sigma_star.shape[0]
    try:
        chol = np.linalg.cholesky(sigma_star)
    except np.linalg.LinAlgError as exc:
        raise ValueError("covariance matrix is not positive definite") from exc
    rng = np.random.default_rng(seed)
    # Group identical masks so large structured designs stay compact.
    buckets: dict[tuple, list[int]] = {}
    for i, idx in enumerate(pattern):
        buckets.setdefault(tuple(int(j) for j in idx), []).append(i)
    groups = []
    from .obsmodel import MaskGroup

    for key in sorted(buckets):
        rows = np.asarray(buckets[key], dtype=np.int64)
        idx = np.asarray(key, dtype=np.int64)
        # Restriction of the full draw chol @ z to the observed rows; the
        # triangular factor makes z components past max(idx) irrelevant, so
        # only that prefix of the latent vector is materialised.
        mx = int(idx.max()) + 1 if idx.size else 0
        z = rng.standard_normal((rows.size, mx))
        vals = z @ chol[idx, :mx].T if idx.size else np.zeros((rows.size, 0))
        groups.append(MaskGroup(indices=idx, rows=rows, values=vals))
    return MaskedDataset(
        groups, n_samples=len(pattern), n_vars=p, var_names=var_names, validate=False
    )


# ----------------------------------------------------------------------
# Selection pipeline, tuning and metrics

def neighborhood_edge_set(sigma_tilde, counts, C: float, rule: str = "AND",
                          tol: float = 1e-8, max_sweeps: int = 10_000,
                          warm: Optional[list] = None) -> tuple[set, list]:
    """Edge set from per-node penalized regressions combined by AND / OR."""
    if rule not in ("AND", "OR"):
        raise ValueError("rule must be AND or OR")
    p = counts.n_vars
    penalties = default_penalties(counts, C)
    fits = []
    for t in range(p):
        ws = warm[t].theta if warm is not None else None
        fits.append(
            solve_penalized_quadratic(
                sigma_tilde, target=t, excluded=[t], penalties=penalties,
                tol=tol, max_iter=max_sweeps, warm_start=ws,
            )
        )
    supports = [neighborhood_support(f) for f in fits]
    edges = set()
    for j in range(p):
        for k in range(j + 1, p):
            hit_j = k in supports[j]
            hit_k = j in supports[k]
            keep = (hit_j and hit_k) if rule == "AND" else (hit_j or hit_k)
            if keep:
                edges.add((j, k))
    return edges, fits


def baseline_nlasso_joe(sigma_tilde, counts, C: float, rule: str = "AND") -> set:
    """Plug-in graph selection: per-node fits with count-aware penalties."""
    edges, _ = neighborhood_edge_set(sigma_tilde, counts, C, rule=rule)
    return edges


def stability_select(
    data: MaskedDataset,
    counts,
    C_grid: Sequence[float],
    n_subsamples: int = 20,
    include_prob: float = 0.8,
    instability_threshold: float = 0.05,
    seed: int = 0,
    rule: str = "AND",
    admm: ProjectionConfig = ProjectionConfig(),
    lasso_tol: float = 1e-8,
    lasso_max_sweeps: int = 10_000,
) -> float:
    """Pick the penalty constant whose selected graph is stable.

    For each constant, the full pipeline (covariance, projection, per-node
    fits, edge set) runs on random subsamples keeping each sample with
    probability ``include_prob``; edge instability is the mean of
    2 q (1 - q) over pairs, with q the selection frequency.  Instability is
    monotonized from the sparse end, and the smallest constant whose
    monotonized instability stays at or below the threshold wins.  If none
    qualifies the largest (sparsest) constant is returned.
    """
    grid = list(C_grid)
    if not grid:
        raise ValueError("C grid must be non-empty")
    if sorted(grid) != grid:
        raise ValueError("C grid must be sorted ascending")
    rng = np.random.default_rng(seed)
    p = data.n_vars
    n_pairs = p * (p - 1) // 2
    freq = {C: np.zeros(n_pairs) for C in grid}
    pair_index = {}
    t = 0
    for j in range(p):
        for k in range(j + 1, p):
            pair_index[(j, k)] = t
            t += 1
    for _ in range(n_subsamples):
        keep = rng.random(data.n_samples) < include_prob
        sub = data.subsample(keep)
        sub_counts = pairwise_counts(sub)
        cov = unbiased_cov(sub, sub_counts)
        proj = project_psd_weighted(cov, admm)
        warm = None
        for C in sorted(grid, reverse=True):  # sparse to dense, warm-started
            edges, fits = neighborhood_edge_set(
                proj.sigma_tilde, sub_counts, C, rule=rule,
                tol=lasso_tol, max_sweeps=lasso_max_sweeps, warm=warm,
            )
            warm = fits
            for e in edges:
                freq[C][pair_index[e]] += 1
    instab = {}
    for C in grid:
        q = freq[C] / n_subsamples
        instab[C] = float(np.mean(2.0 * q * (1.0 - q)))
    mono = {}
    running = 0.0
    for C in sorted(grid, reverse=True):
        running = max(running, instab[C])
        mono[C] = running
    for C in grid:  # ascending: smallest qualifying constant
        if mono[C] <= instability_threshold:
            return float(C)
    warnings.warn(
        "no penalty constant met the instability threshold; using the sparsest",
        RuntimeWarning,
    )
    return float(grid[-1])


def selection_metrics(selected, truth, p: int) -> dict:
    """TPR / TNR / TDR / F1 of a selected edge set against the truth.

    TDR is NaN when nothing is selected; F1 is 0 when undefined.
    """
    sel = {tuple(sorted(e)) for e in selected}
    tru = {tuple(sorted(e)) for e in truth}
    n_pairs = p * (p - 1) // 2
    tp = len(sel & tru)
    fp = len(sel - tru)
    fn = len(tru - sel)
    tn = n_pairs - tp - fp - fn
    tpr = tp / len(tru) if tru else math.nan
    tnr = tn / (n_pairs - len(tru)) if n_pairs > len(tru) else math.nan
    tdr = tp / len(sel) if sel else math.nan
    if math.isnan(tdr) or math.isnan(tpr) or (tdr + tpr) == 0:
        f1 = 0.0
    else:
        f1 = 2.0 * tdr * tpr / (tdr + tpr)
    return {"TPR": tpr, "TNR": tnr, "TDR": tdr, "F1": f1}


# ----------------------------------------------------------------------
# Replicate drivers

def _replicate_seeds(master_seed: int, n: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(master_seed).spawn(n)


def _seed_ints(ss: np.random.SeedSequence, n: int) -> list[int]:
    return [int(x) for x in ss.generate_state(n)]


def _build_replicate(graph_spec, prec_spec, meas_spec, ss):
    """Graph, precision, pattern and data for one replicate seed."""
    s_graph, s_prec, s_meas, s_data = _seed_ints(ss, 4)
    edges = gen_graph(replace(graph_spec, seed=s_graph))
    theta, sigma = gen_precision(edges, graph_spec.p, replace(prec_spec, seed=s_prec))
    pattern = gen_pattern(replace(meas_spec, seed=s_meas), graph_spec.p, graph=edges)
    data = sample_data(sigma, pattern, seed=s_data)
    return edges, theta, sigma, data


def choose_penalty(
    graph_spec: GraphSpec,
    prec_spec: PrecisionSpec,
    meas_spec: MeasurementSpec,
    penalty,
    master_seed: int,
    stability_grid: Sequence[float],
    admm: ProjectionConfig,
    lasso_tol: float,
    lasso_max_sweeps: int,
) -> float:
    """Resolve a penalty setting: a number, or "stability" tuned once on
    the first replicate and reused for all of them."""
    if penalty != "stability":
        return float(penalty)
    ss = _replicate_seeds(master_seed, 1)[0]
    _, _, _, data = _build_replicate(graph_spec, prec_spec, meas_spec, ss)
    counts = pairwise_counts(data)
    return stability_select(
        data, counts, stability_grid, seed=master_seed, admm=admm,
        lasso_tol=lasso_tol, lasso_max_sweeps=lasso_max_sweeps,
    )


def run_edge_study(
    graph_spec: GraphSpec,
    prec_spec: PrecisionSpec,
    meas_spec: MeasurementSpec,
    pair: tuple,
    alpha: float,
    penalty,
    replicates: int,
    master_seed: int,
    signal_values: Optional[Sequence[float]] = None,
    stability_grid: Sequence[float] = (0.25, 0.35, 0.5, 0.7, 1.0),
    admm: ProjectionConfig = ProjectionConfig(),
    lasso_tol: float = 1e-8,
    lasso_max_sweeps: int = 10_000,
    eps_thr: float = 0.0,
) -> dict:
    """Repeatedly test one pair; report per-replicate rows and rejection rates.

    With ``signal_values`` the target precision entry sweeps that list and
    the report groups rejection rates per signal level.
    """
    a, b = pair
    signals = list(signal_values) if signal_values is not None else [None]
    rows = []
    aggregates = []

    def spec_for(sig_val):
        if sig_val is None:
            return prec_spec
        return replace(prec_spec, target_entry=(a, b), target_value=float(sig_val))

    # One penalty constant for the whole study, tuned on the first setting.
    C = choose_penalty(
        graph_spec, spec_for(signals[0]), meas_spec, penalty, master_seed,
        stability_grid, admm, lasso_tol, lasso_max_sweeps,
    )
    for sig_val in signals:
        pspec = spec_for(sig_val)
        rejections = 0
        tested = 0
        n2_used = None
        for r, ss in enumerate(_replicate_seeds(master_seed, replicates)):
            edges, theta, sigma_star, data = _build_replicate(graph_spec, pspec, meas_spec, ss)
            counts = pairwise_counts(data)
            cov = unbiased_cov(data, counts)
            proj = project_psd_weighted(cov, admm)
            try:
                res = edge_test(
                    data, counts, proj.sigma_tilde, a, b, penalty_c=C, alpha=alpha,
                    cov=cov, lasso_tol=lasso_tol, lasso_max_sweeps=lasso_max_sweeps,
                )
            except DegenerateVarianceError:
                rows.append({
                    "signal": sig_val, "replicate": r, "p": math.nan, "z": math.nan,
                    "theta_tilde": math.nan, "rejected": 0, "testable": 0,
                })
                continue
            p_val = threshold_test(res, eps_thr) if eps_thr > 0 else res.p_value
            rej = int(p_val <= alpha)
            rejections += rej
            tested += 1
            n2_used = res.n2
            rows.append({
                "signal": sig_val, "replicate": r, "p": p_val, "z": res.z,
                "theta_tilde": res.theta_tilde, "rejected": rej, "testable": 1,
            })
        rate = rejections / tested if tested else math.nan
        se = math.sqrt(rate * (1 - rate) / tested) if tested else math.nan
        aggregates.append({
            "signal": sig_val, "penalty_c": C, "replicates": replicates,
            "tested": tested, "rejection_rate": rate, "rate_se": se,
            "n2_estimated": n2_used,
        })
    return {"rows": rows, "aggregates": aggregates, "pair": [a, b], "alpha": alpha}


def run_graph_study(
    graph_spec: GraphSpec,
    prec_spec: PrecisionSpec,
    meas_spec: MeasurementSpec,
    method: str,
    alpha: float,
    penalty,
    replicates: int,
    master_seed: int,
    stability_grid: Sequence[float] = (0.25, 0.35, 0.5, 0.7, 1.0),
    admm: ProjectionConfig = ProjectionConfig(),
    lasso_tol: float = 1e-8,
    lasso_max_sweeps: int = 10_000,
    threads: int = 1,
    eps_thr: float = 0.0,
) -> dict:
    """Full-graph selection study; per-replicate TPR/TNR/TDR/F1/FDP rows."""
    if method not in ("holm", "fdr", "nlasso_and", "nlasso_or"):
        raise ValueError("method must be holm, fdr, nlasso_and or nlasso_or")
    p = graph_spec.p
    C = choose_penalty(
        graph_spec, prec_spec, meas_spec, penalty, master_seed, stability_grid,
        admm, lasso_tol, lasso_max_sweeps,
    )
    rows = []
    for r, ss in enumerate(_replicate_seeds(master_seed, replicates)):
        edges, theta, sigma_star, data = _build_replicate(graph_spec, prec_spec, meas_spec, ss)
        counts = pairwise_counts(data)
        cov = unbiased_cov(data, counts)
        proj = project_psd_weighted(cov, admm)
        if method.startswith("nlasso"):
            rule = "AND" if method.endswith("and") else "OR"
            selected = baseline_nlasso_joe(proj.sigma_tilde, counts, C, rule=rule)
        else:
            records = infer_all_edges(
                data, counts, proj.sigma_tilde, C, alpha=alpha, threads=threads,
                cov=cov, lasso_tol=lasso_tol, lasso_max_sweeps=lasso_max_sweeps,
            )
            thr_p = None
            if eps_thr > 0:
                thr_p = {(e.a, e.b): threshold_test(e, eps_thr) for e in records if e.testable}
            table = PvalueTable.from_edge_records(records, use_threshold_pvalues=thr_p)
            if method == "holm":
                selected = holm(table, alpha)
            else:
                selected = set(fdr_select(table, p, alpha).selected)
        mets = selection_metrics(selected, edges, p)
        fdp, power = fdp_fdr_metrics(selected, edges)
        rows.append({
            "replicate": r, "selected": len(selected), "true_edges": len(edges),
            "TPR": mets["TPR"], "TNR": mets["TNR"], "TDR": mets["TDR"],
            "F1": mets["F1"], "FDP": fdp, "power": power,
        })
    agg = {}
    for key in ("TPR", "TNR", "TDR", "F1", "FDP", "power"):
        vals = [row[key] for row in rows if not math.isnan(row[key])]
        agg[f"mean_{key}"] = float(np.mean(vals)) if vals else math.nan
        agg[f"sd_{key}"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
    agg.update({"penalty_c": C, "replicates": replicates, "method": method, "alpha": alpha})
    return {"rows": rows, "aggregate": agg}
