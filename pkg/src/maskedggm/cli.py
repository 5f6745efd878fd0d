"""Command-line interface: estimate, test-edge, test-graph, simulate.

All commands echo their fully resolved configuration into the output files
so a run can be reproduced from its artifacts alone.  Matrices are written
as CSV with full float precision, records as JSON.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .covest import unbiased_cov
from .edgewise import edge_test, infer_all_edges, threshold_test
from .multitest import PvalueTable, fdp_fdr_metrics, fdr_select, holm
from .nblasso import DegenerateVarianceError
from .obsmodel import MaskedDataError, load_masked_csv, pairwise_counts
from .psdproj import ProjectionConfig, project_psd_weighted
from . import simlab


def _add_admm_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--admm-mu", type=float, default=1.0, help="ADMM penalty parameter")
    sp.add_argument("--admm-eps", type=float, default=1e-3, help="eigenvalue floor")
    sp.add_argument("--admm-max-iter", type=int, default=2000)
    sp.add_argument("--admm-tol", type=float, default=1e-7,
                    help="primal tolerance per variable; the iterate-change "
                         "tolerance is one hundredth of this value")


def _add_lasso_flags(sp: argparse.ArgumentParser) -> None:
    sp.add_argument("--lasso-tol", type=float, default=1e-8,
                    help="coordinate-change tolerance for the regression solver")
    sp.add_argument("--lasso-max-sweeps", type=int, default=10_000)


def _admm_config(args) -> ProjectionConfig:
    return ProjectionConfig(
        mu=args.admm_mu, eps=args.admm_eps, max_iter=args.admm_max_iter,
        tol_primal=args.admm_tol, tol_change=args.admm_tol * 1e-2,
    )


def _config_echo(args, extra: dict | None = None) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    if extra:
        cfg.update(extra)
    return cfg


def _write_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_matrix(path, M: np.ndarray, var_names) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(var_names)
        for row in M:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else int(v)
                        for v in row])


def _read_matrix(path) -> tuple[list[str], np.ndarray]:
    with open(path, "r", newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(c) for c in r] for r in rows[1:]])


def _ensure_out(path) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# ----------------------------------------------------------------------
# estimate

def cmd_estimate(args) -> int:
    data = load_masked_csv(args.input)
    counts = pairwise_counts(data)
    cov = unbiased_cov(data, counts, center=args.center)
    proj = project_psd_weighted(cov, _admm_config(args))
    out = _ensure_out(args.out)
    names = data.var_names or [f"v{j}" for j in range(data.n_vars)]
    _write_matrix(os.path.join(out, "counts.csv"), counts.counts, names)
    _write_matrix(os.path.join(out, "sigma_hat.csv"), cov.sigma_hat, names)
    _write_matrix(os.path.join(out, "sigma_tilde.csv"), proj.sigma_tilde, names)
    zero_pairs = [
        [int(j), int(k)] for j in range(data.n_vars) for k in range(j + 1, data.n_vars)
        if cov.zero_count_mask[j, k]
    ]
    summary = {
        "config": _config_echo(args),
        "n_samples": data.n_samples,
        "n_vars": data.n_vars,
        "zero_count_pairs": zero_pairs,
        "projection": {
            "iterations_used": proj.iterations_used,
            "final_residual": proj.final_residual,
            "objective": proj.objective,
            "converged": proj.converged,
        },
    }
    _write_json(os.path.join(out, "estimate_summary.json"), summary)
    print(f"wrote counts, sigma_hat, sigma_tilde and summary to {out}")
    return 0


# ----------------------------------------------------------------------
# test-edge

def cmd_test_edge(args) -> int:
    data = load_masked_csv(args.input)
    counts = pairwise_counts(data)
    cov = unbiased_cov(data, counts, center=args.center)
    proj = project_psd_weighted(cov, _admm_config(args))
    try:
        res = edge_test(
            data, counts, proj.sigma_tilde, args.a, args.b,
            penalty_c=args.penalty_c, alpha=args.alpha, cov=cov,
            lasso_tol=args.lasso_tol, lasso_max_sweeps=args.lasso_max_sweeps,
        )
    except DegenerateVarianceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    record = res.to_record()
    if args.threshold > 0:
        record["p_threshold"] = threshold_test(res, args.threshold)
        record["threshold"] = args.threshold
    payload = {"config": _config_echo(args), "result": record}
    if args.out:
        _ensure_out(os.path.dirname(args.out) or ".")
        _write_json(args.out, payload)
    print(json.dumps(record, sort_keys=True))
    return 0


# ----------------------------------------------------------------------
# test-graph

def cmd_test_graph(args) -> int:
    data = load_masked_csv(args.input)
    counts = pairwise_counts(data)
    cov = unbiased_cov(data, counts, center=args.center)
    proj = project_psd_weighted(cov, _admm_config(args))
    penalty = args.penalty_c
    if args.stability:
        grid = [float(x) for x in args.stability_grid.split(",")]
        penalty = simlab.stability_select(
            data, counts, grid, seed=args.seed, admm=_admm_config(args),
            lasso_tol=args.lasso_tol, lasso_max_sweeps=args.lasso_max_sweeps,
        )
    records = infer_all_edges(
        data, counts, proj.sigma_tilde, penalty, alpha=args.alpha,
        threads=args.threads, cov=cov, lasso_tol=args.lasso_tol,
        lasso_max_sweeps=args.lasso_max_sweeps,
    )
    thr_p = None
    if args.threshold > 0:
        thr_p = {(r.a, r.b): threshold_test(r, args.threshold) for r in records if r.testable}
    table = PvalueTable.from_edge_records(records, use_threshold_pvalues=thr_p)
    if args.method == "holm":
        selected = sorted(holm(table, args.alpha))
        summary = {"alpha": args.alpha, "m": table.m, "method": "holm"}
    else:
        sel = fdr_select(table, data.n_vars, args.alpha)
        selected = sorted(sel.selected)
        summary = {"method": "fdr", **sel.summary()}
    summary["untestable_pairs"] = [[a, b] for a, b, _ in table.untestable]
    payload = {
        "config": _config_echo(args, {"resolved_penalty_c": penalty}),
        "selected_edges": [[a, b] for a, b in selected],
        "summary": summary,
        "edges": [r.to_record() for r in records],
    }
    if args.truth:
        truth_edges = _load_edge_list(args.truth)
        fdp, power = fdp_fdr_metrics(set(map(tuple, selected)), truth_edges)
        mets = simlab.selection_metrics(set(map(tuple, selected)), truth_edges, data.n_vars)
        payload["evaluation"] = {"FDP": fdp, "power": power, **mets}
    out = _ensure_out(args.out)
    _write_json(os.path.join(out, "graph_test.json"), payload)
    print(f"{len(selected)} edges selected ({summary['method']}); results in {out}")
    return 0


def _load_edge_list(path) -> set:
    with open(path) as fh:
        payload = json.load(fh)
    edges = payload["edges"] if isinstance(payload, dict) else payload
    return {tuple(sorted((int(a), int(b)))) for a, b in edges}


# ----------------------------------------------------------------------
# simulate

def _specs_from_config(cfg: dict):
    g = dict(cfg["graph"])
    graph_spec = simlab.GraphSpec(
        kind=g.pop("kind"), p=int(g.pop("p")), seed=int(g.pop("seed", 0)), **g
    )
    pr = dict(cfg.get("precision", {}))
    if pr.get("target_entry"):
        pr["target_entry"] = tuple(pr["target_entry"])
    prec_spec = simlab.PrecisionSpec(**pr)
    ms = dict(cfg["measurement"])
    if ms.get("target_pair"):
        ms["target_pair"] = tuple(ms["target_pair"])
    if ms.get("probs"):
        ms["probs"] = tuple(ms["probs"])
    meas_spec = simlab.MeasurementSpec(**ms)
    return graph_spec, prec_spec, meas_spec


def _write_rows_csv(path, rows: list[dict]) -> None:
    if not rows:
        with open(path, "w") as fh:
            fh.write("\n")
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for row in rows:
            w.writerow([_fmt_cell(row[k]) for k in keys])


def _fmt_cell(v):
    if isinstance(v, float):
        return "NA" if math.isnan(v) else repr(v)
    return v


def cmd_simulate(args) -> int:
    with open(args.config) as fh:
        cfg = json.load(fh)
    graph_spec, prec_spec, meas_spec = _specs_from_config(cfg)
    mode = cfg.get("mode", "graph")
    seed = int(cfg.get("seed", args.seed))
    penalty = cfg.get("penalty_c", "stability")
    admm = ProjectionConfig(
        mu=cfg.get("admm_mu", args.admm_mu),
        eps=cfg.get("admm_eps", args.admm_eps),
        max_iter=cfg.get("admm_max_iter", args.admm_max_iter),
        tol_primal=cfg.get("admm_tol", args.admm_tol),
        tol_change=cfg.get("admm_tol", args.admm_tol) * 1e-2,
    )
    common = dict(
        alpha=cfg.get("alpha", args.alpha),
        penalty=penalty,
        replicates=int(cfg.get("replicates", 20)),
        master_seed=seed,
        stability_grid=tuple(cfg.get("stability_grid", (0.25, 0.35, 0.5, 0.7, 1.0))),
        admm=admm,
        lasso_tol=cfg.get("lasso_tol", args.lasso_tol),
        lasso_max_sweeps=cfg.get("lasso_max_sweeps", args.lasso_max_sweeps),
    )
    out = _ensure_out(args.out)
    if mode == "edge":
        result = simlab.run_edge_study(
            graph_spec, prec_spec, meas_spec,
            pair=tuple(cfg["pair"]),
            signal_values=cfg.get("signal_values"),
            eps_thr=cfg.get("threshold", args.threshold),
            **common,
        )
        _write_rows_csv(os.path.join(out, "replicates.csv"), result["rows"])
        _write_rows_csv(os.path.join(out, "aggregate.csv"), result["aggregates"])
        payload = {
            "config": _config_echo(args, {"resolved": cfg, "seed": seed}),
            "aggregates": result["aggregates"],
        }
        _write_json(os.path.join(out, "simulate_summary.json"), payload)
        if args.figures:
            from . import report

            pts = []
            for agg in result["aggregates"]:
                sig = agg["signal"]
                n2 = agg.get("n2_estimated") or meas_spec.n2
                x = (math.sqrt(n2) * sig) if sig is not None else 0.0
                pts.append({"x": x, **agg})
            report.save_rate_curve(
                pts, os.path.join(out, "rejection_rate.png"),
                xlabel="sqrt(n2) * signal", title="edge test rejection rate",
            )
    elif mode == "graph":
        result = simlab.run_graph_study(
            graph_spec, prec_spec, meas_spec,
            method=cfg.get("method", "fdr"),
            threads=cfg.get("threads", args.threads),
            eps_thr=cfg.get("threshold", args.threshold),
            **common,
        )
        _write_rows_csv(os.path.join(out, "replicates.csv"), result["rows"])
        _write_rows_csv(os.path.join(out, "aggregate.csv"), [result["aggregate"]])
        payload = {
            "config": _config_echo(args, {"resolved": cfg, "seed": seed}),
            "aggregate": result["aggregate"],
        }
        _write_json(os.path.join(out, "simulate_summary.json"), payload)
        if args.figures:
            from . import report

            report.save_metric_bars(
                result["aggregate"], os.path.join(out, "metrics.png"),
                title=f"{cfg.get('method', 'fdr')} selection, {graph_spec.kind} graph",
            )
    else:
        print(f"error: unknown mode {mode!r}", file=sys.stderr)
        return 2
    print(f"simulation outputs written to {out}")
    return 0


# ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="maskedggm",
        description="Graphical-model edge inference from partially observed data "
                    "(variable indices are 0-based throughout)",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("estimate", help="covariance, counts and PSD projection from a masked CSV")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--center", action="store_true", help="subtract pairwise-complete means")
    _add_admm_flags(sp)
    sp.set_defaults(func=cmd_estimate)

    sp = sub.add_parser("test-edge", help="debiased test for one node pair")
    sp.add_argument("--input", required=True)
    sp.add_argument("--a", type=int, required=True)
    sp.add_argument("--b", type=int, required=True)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--penalty-c", type=float, required=True)
    sp.add_argument("--threshold", type=float, default=0.0,
                    help="test |effect| <= threshold instead of = 0")
    sp.add_argument("--center", action="store_true")
    sp.add_argument("--out", default="")
    _add_admm_flags(sp)
    _add_lasso_flags(sp)
    sp.set_defaults(func=cmd_test_edge)

    sp = sub.add_parser("test-graph", help="test all pairs and select edges")
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--alpha", type=float, default=0.1)
    sp.add_argument("--method", choices=["holm", "fdr"], default="fdr")
    group = sp.add_mutually_exclusive_group(required=True)
    group.add_argument("--penalty-c", type=float)
    group.add_argument("--stability", action="store_true",
                       help="tune the penalty constant by stability selection")
    sp.add_argument("--stability-grid", default="0.25,0.35,0.5,0.7,1.0")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--threshold", type=float, default=0.0)
    sp.add_argument("--truth", default="",
                    help="JSON edge list; adds FDP/power evaluation to the output")
    sp.add_argument("--center", action="store_true")
    _add_admm_flags(sp)
    _add_lasso_flags(sp)
    sp.set_defaults(func=cmd_test_graph)

    sp = sub.add_parser("simulate", help="replicate study driven by a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sp.add_argument("--threshold", type=float, default=0.0)
    fig = sp.add_mutually_exclusive_group()
    fig.add_argument("--figures", dest="figures", action="store_true", default=True)
    fig.add_argument("--no-figures", dest="figures", action="store_false")
    _add_admm_flags(sp)
    _add_lasso_flags(sp)
    sp.set_defaults(func=cmd_simulate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except MaskedDataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, IndexError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
