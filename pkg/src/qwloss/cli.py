"""Command line entry point: ``qwloss {train,eval,ot,check,inspect-flow,synth}``.

Exit status: 0 success, 1 failed check or failed run, 2 usage or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .checks import run_all
from .config import ConfigError, RunConfig, config_dict, load_config
from .experiment import evaluate, flow_histogram, predict, split_nodes, train
from .graph import GraphError, NodeMask, build_graph
from .io import (
    DatasetError,
    DatasetNotFound,
    append_record,
    load_dataset,
    load_model,
    read_edges,
    read_measure,
    read_node_list,
    save_edge_list,
    save_model,
)
from .ot import InfeasibleFlowError, partial_w1_flow, w1_flow
from .qw import SolverDivergedError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _metrics_dict(m):
    return {"accuracy": m.accuracy, "mse": m.mse, "count": m.count}


def _flow_stats(F):
    if F is None:
        return None
    h = flow_histogram(F)
    return {"mean": h.mean, "variance": h.variance, "std": h.std, "count": h.count,
            "l1": float(np.abs(F).sum()), "max_abs": float(np.abs(F).max(initial=0.0))}


def _split_for(cfg: RunConfig, dataset, seed):
    if cfg.split_file:
        if len(dataset.train) == 0:
            raise UsageError("split_file = true but the dataset has no split.tsv (or an empty train split)")
        return dataset
    labels = dataset.classes if dataset.task == "classification" else None
    return dataset.with_split(*split_nodes(dataset.graph.num_nodes, labels, cfg.split, seed=seed))


def run_one(cfg: RunConfig, seed: int, dataset=None) -> dict:
    """Train and evaluate one seed; returns the run record (and writes model/figures if asked)."""
    if dataset is None:
        dataset = load_dataset(cfg.dataset, cfg.format, cfg.directed)
    ds = _split_for(cfg, dataset, seed)
    t0 = time.perf_counter()
    tm = train(ds, cfg.model_spec(), cfg.loss, cfg.qw_config(), seed=seed)
    wall = time.perf_counter() - t0
    pred, _ = predict(tm, ds)
    metrics = {}
    for name, mask in (("train", ds.train), ("val", ds.val), ("test", ds.test)):
        if len(mask):
            metrics[name] = _metrics_dict(evaluate(pred, ds, mask))
    rec = {
        "config": config_dict(cfg),
        "seed": seed,
        "loss_kind": cfg.loss,
        "curves": tm.record["history"],
        "metrics": metrics,
        "primal_residual": tm.record["primal_residual"],
        "best_epoch": tm.record["best_epoch"],
        "epochs_run": tm.record["epochs_run"],
        "stop_reason": tm.record["stop_reason"],
        "wall_time": wall,
        "flow": _flow_stats(tm.F),
    }
    tag = f"{cfg.loss}_seed{seed}"
    if cfg.model_dir:
        p = Path(cfg.model_dir) / f"{tag}.npz"
        save_model(tm, p, (ds.train, ds.val, ds.test))
        rec["model_path"] = str(p)
    if cfg.figures:
        from .plotting import plot_curves, plot_flow_histogram

        figs = [str(plot_curves(tm.record["history"], Path(cfg.figures) / f"{tag}_curves.png", tag))]
        if tm.F is not None:
            figs.append(str(plot_flow_histogram(flow_histogram(tm.F), Path(cfg.figures) / f"{tag}_flow.png", tag)))
        rec["figures"] = figs
    return rec


def _worker(args):
    cfg, seed = args
    return run_one(cfg, seed)


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg.output = args.output
    if not Path(cfg.dataset).exists():
        raise DatasetNotFound(f"dataset not found: {cfg.dataset}")
    seeds = cfg.seeds()
    if args.parallel > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            records = pool.map(_worker, [(cfg, s) for s in seeds])
            for rec in records:
                append_record(cfg.output, rec)
                _report(rec)
    else:
        dataset = load_dataset(cfg.dataset, cfg.format, cfg.directed)
        for s in seeds:
            rec = run_one(cfg, s, dataset)
            append_record(cfg.output, rec)
            _report(rec)
    print(f"records appended to {cfg.output}")
    return EXIT_OK


def _report(rec):
    test = rec["metrics"].get("test", {})
    score = test.get("accuracy")
    score = f"acc {score:.4f}" if score is not None else f"mse {test.get('mse', float('nan')):.4g}"
    res = rec["primal_residual"]
    res = "" if res != res else f"  residual {res:.2e}"
    print(f"seed {rec['seed']}: test {score}  epochs {rec['epochs_run']} ({rec['stop_reason']}){res}"
          f"  {rec['wall_time']:.1f}s")


def cmd_eval(args) -> int:
    tm = load_model(args.model)
    ds = load_dataset(args.dataset, args.format, args.directed)
    split = tm.record.get("split")
    if split is not None:
        n = ds.graph.num_nodes
        ds = ds.with_split(*(NodeMask(m, n) for m in split))
    elif len(ds.train) + len(ds.test) == 0:
        labels = ds.classes if ds.task == "classification" else None
        ds = ds.with_split(*split_nodes(ds.graph.num_nodes, labels, seed=tm.seed))
    pred, _ = predict(tm, ds)
    for name, mask in (("train", ds.train), ("val", ds.val), ("test", ds.test)):
        if len(mask):
            m = evaluate(pred, ds, mask)
            acc = "" if m.accuracy is None else f"accuracy {m.accuracy:.4f}  "
            print(f"{name}: {acc}mse {m.mse:.6g}  n={m.count}")
    return EXIT_OK


def cmd_ot(args) -> int:
    index = {}
    pairs, w = read_edges(args.graph, index, allow_new=True)
    mu = read_measure(args.mu, index)
    gamma = read_measure(args.gamma, index)
    mask = read_node_list(args.mask, index) if args.mask else None
    n = len(index)
    g = build_graph(n, pairs, w, directed=args.directed)
    mu_v, gamma_v = np.zeros(n), np.zeros(n)
    for i, v in mu.items():
        mu_v[i] = v
    for i, v in gamma.items():
        gamma_v[i] = v
    if mask is None:
        res = w1_flow(g, mu_v, gamma_v)
    else:
        m = NodeMask(mask, n)
        res = partial_w1_flow(g, m, mu_v[m.members], gamma_v[m.members])
    print(f"cost {res.cost!r}")
    names = list(index)
    lines = [f"{names[h]}\t{names[t]}\t{float(f)!r}" for h, t, f in zip(g.heads, g.tails, res.flow)]
    if args.flows:
        Path(args.flows).write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    else:
        for line in lines:
            print(line)
    return EXIT_OK


def cmd_check(args) -> int:
    results = run_all(seed=args.seed)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}  ({r.seconds:.1f}s)")
    ok = all(r.passed for r in results)
    print("all checks passed" if ok else "some checks FAILED")
    return EXIT_OK if ok else EXIT_FAIL


def cmd_inspect_flow(args) -> int:
    tm = load_model(args.model)
    if tm.F is None:
        raise UsageError("this model was trained without a flow (traditional loss)")
    h = flow_histogram(tm.F, bins=args.bins)
    out = Path(args.out) if args.out else Path(args.model).with_suffix(".hist.csv")
    with open(out, "w", encoding="utf-8") as fh:
        fh.write("bin_left,bin_right,count\n")
        for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
            fh.write(f"{float(lo)!r},{float(hi)!r},{int(c)}\n")
    print(f"flows {h.count}  mean {h.mean:.4e}  variance {h.variance:.4e}  std {h.std:.4e}")
    print(f"histogram written to {out}")
    if args.figure:
        from .plotting import plot_flow_histogram

        print(f"figure written to {plot_flow_histogram(h, args.figure)}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synthetic import make_sbm

    ds = make_sbm(args.nodes, args.classes, args.intra, args.degree, args.features, args.signal, args.seed)
    ds = ds.with_split(*split_nodes(ds.graph.num_nodes, ds.classes, seed=args.seed))
    save_edge_list(ds, args.out)
    print(f"wrote {ds.graph.num_nodes} nodes, {ds.graph.num_edges} edges to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qwloss", description="Graph label-transport losses for GNN training.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a key = value config file; appends JSON-lines records")
    t.add_argument("config")
    t.add_argument("--parallel", type=int, default=1, metavar="N", help="run seeds on N processes")
    t.add_argument("--output", help="override the config's output path")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="metrics of a saved model on a dataset")
    e.add_argument("model")
    e.add_argument("--dataset", required=True)
    e.add_argument("--format", default="edge-list")
    e.add_argument("--directed", action="store_true")
    e.set_defaults(fn=cmd_eval)

    o = sub.add_parser("ot", help="W1 (or partial W1 with --mask) between two node measures")
    o.add_argument("--graph", required=True, help="edge file: u v [w] per line")
    o.add_argument("--mu", required=True, help="measure file: node mass per line")
    o.add_argument("--gamma", required=True)
    o.add_argument("--mask", help="node list restricting conservation (partial W1)")
    o.add_argument("--directed", action="store_true")
    o.add_argument("--flows", help="write the optimal flow here instead of stdout")
    o.set_defaults(fn=cmd_ot)

    c = sub.add_parser("check", help="run the invariant suite")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(fn=cmd_check)

    i = sub.add_parser("inspect-flow", help="histogram of a saved model's label transport")
    i.add_argument("model")
    i.add_argument("--bins", type=int, default=50)
    i.add_argument("--out", help="CSV path (default: next to the model)")
    i.add_argument("--figure", help="also render a PNG/PDF histogram")
    i.set_defaults(fn=cmd_inspect_flow)

    s = sub.add_parser("synth", help="write a stochastic block-model dataset in edge-list format")
    s.add_argument("out")
    s.add_argument("--nodes", type=int, default=200)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--intra", type=float, default=0.2, help="fraction of intra-class edges")
    s.add_argument("--degree", type=float, default=6.0)
    s.add_argument("--features", type=int, default=16)
    s.add_argument("--signal", type=float, default=1.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (DatasetError, ConfigError, GraphError, UsageError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (InfeasibleFlowError, SolverDivergedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
