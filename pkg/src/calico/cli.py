"""Command line entry points.

`calico run` executes an experiment from a config file or preset flags.
`calico serve` resumes a run against the human-annotation HTTP service.
`calico report` re-emits tables and figures from stored logs. `calico
compare` prints a cross-variant table. Relative output paths are rooted at
$CALICO_OUTPUT_ROOT when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np
import torch

from .errors import CalicoError, ValidationError
from .harness import (
    ExperimentConfig,
    compare,
    config_snapshot,
    desk_preset,
    emit_report,
    load_config,
    load_experiment_dataset,
    paper_preset,
    run_experiment,
)
from .models import ArchSpec, build_model
from .orchestrator import RemoteOracle, RunDir, run_al
from .queries import QuerySpec
from .sgld import SGLDConfig
from .service import OracleQueue, serve_oracle
from .training import TrainConfig


def _rooted(path: str) -> str:
    root = os.environ.get("CALICO_OUTPUT_ROOT")
    if root and not os.path.isabs(path):
        return os.path.join(root, path)
    return path


def _build_config(args) -> ExperimentConfig:
    overrides = {
        "dataset": args.dataset,
        "variant": args.variant,
        "protocol": args.protocol,
        "output": args.output,
        "n_q": args.n_q,
        "oracle": args.oracle,
        "bind": args.bind,
        "stop_when": args.stop_when,
        "seeds": args.seeds,
    }
    if args.seed is not None:
        overrides["seeds"] = str(args.seed)
    if args.config:
        cfg = load_config(args.config, overrides)
    else:
        protocol = args.protocol or "desk"
        variant = args.variant or "calico"
        if protocol == "paper":
            cfg = paper_preset(variant, args.dataset or "data/bloodmnist.npz")
        else:
            cfg = desk_preset(variant)
        fields = {}
        if args.dataset:
            fields["dataset"] = args.dataset
        if args.output:
            fields["output"] = args.output
        if args.n_q:
            fields["n_q"] = args.n_q
        if args.oracle:
            fields["oracle"] = args.oracle
        if args.bind:
            fields["bind"] = args.bind
        if args.stop_when:
            fields["stop_when"] = args.stop_when
        if args.seed is not None:
            fields["seeds"] = (args.seed,)
        elif args.seeds:
            fields["seeds"] = tuple(int(s) for s in
                                    args.seeds.replace(",", " ").split())
        cfg = replace(cfg, **fields).validated()
    return replace(cfg, output=_rooted(cfg.output)).validated()


def _cmd_run(args) -> int:
    cfg = _build_config(args)
    oracle = None
    server = None
    if cfg.oracle == "remote":
        # each run binds the log to its own directory before querying
        queue = OracleQueue(n_classes=load_experiment_dataset(cfg).n_classes)
        server = serve_oracle(queue, bind=cfg.bind,
                              static_dir=args.frontend or None)
        oracle = RemoteOracle(queue)
        print(f"annotation service listening on "
              f"http://{server.server_address[0]}:{server.server_address[1]}")
    try:
        out = run_experiment(cfg, oracle=oracle)
    finally:
        if server is not None:
            server.shutdown()
    summary_path = os.path.join(out, "report", "summary.txt")
    if os.path.exists(summary_path):
        with open(summary_path, encoding="utf-8") as fh:
            print(fh.read(), end="")
    failures_path = os.path.join(out, "failures.json")
    if os.path.exists(failures_path):
        with open(failures_path, encoding="utf-8") as fh:
            print("failed seeds:", fh.read(), file=sys.stderr, end="")
        return 1
    print(f"artifacts in {out}")
    return 0


def _config_from_snapshot(doc: dict) -> ExperimentConfig:
    train = TrainConfig(**doc["train"])
    sgld = SGLDConfig(**doc["sgld"]) if doc.get("sgld") else None
    query = QuerySpec(**doc["query"]) if doc.get("query") else None
    return ExperimentConfig(
        dataset=doc["dataset"], dataset_format=doc.get("dataset_format",
                                                       "array-archive"),
        variant=doc["variant"], protocol=doc.get("protocol", "desk"),
        seeds=tuple(doc.get("seeds", (0,))), n_q=doc["n_q"],
        m_bin=doc.get("m_bin", 15),
        initial_labeled=doc.get("initial_labeled", 20),
        eval_fraction=doc.get("eval_fraction", 0.2),
        label_cap=doc.get("label_cap"), output=doc.get("output", "."),
        arch=doc.get("arch", "mlp"), hidden=tuple(doc.get("hidden", (64, 64))),
        dtype=doc.get("dtype", "float32"),
        eval_round0=doc.get("eval_round0", False),
        stop_when=doc.get("stop_when"), oracle=doc.get("oracle", "remote"),
        train=train, sgld=sgld, query=query,
    )


def _cmd_serve(args) -> int:
    run_dir = _rooted(args.run)
    rd = RunDir(run_dir)
    snapshot = os.path.join(run_dir, "config.json")
    if not os.path.exists(snapshot):
        raise ValidationError(f"not a run directory: {run_dir}")
    with open(snapshot, encoding="utf-8") as fh:
        cfg = _config_from_snapshot(json.load(fh))
    dataset = load_experiment_dataset(cfg)
    done = rd.last_completed_round()
    pools = rd.load_pools(done)
    seed = pools.seed
    if done > 0:
        state = rd.load_checkpoint(done)
    else:
        state = build_model(ArchSpec(in_shape=dataset.feature_shape,
                                     n_classes=dataset.n_classes,
                                     kind=cfg.arch, hidden=cfg.hidden,
                                     dtype=cfg.dtype), seed=seed)
    queue = OracleQueue(n_classes=dataset.n_classes,
                        wal_path=os.path.join(run_dir, "labels.wal"))

    def status_fn():
        try:
            return rd.read_status()
        except FileNotFoundError:
            return {}

    server = serve_oracle(queue, bind=args.bind, status_fn=status_fn,
                          static_dir=args.frontend or None)
    print(f"annotation service listening on "
          f"http://{server.server_address[0]}:{server.server_address[1]}")
    print(f"resuming run {run_dir} after round {done} of {cfg.n_q}")
    try:
        log = run_al(dataset, pools, state, cfg.train, cfg.sgld, cfg.query,
                     RemoteOracle(queue), cfg.n_q, m_bin=cfg.m_bin, seed=seed,
                     run_dir=run_dir, config_snapshot=config_snapshot(cfg),
                     stop_when=cfg.stop_when, label_cap=cfg.label_cap)
    finally:
        server.shutdown()
    print(f"run finished: {log.stop_reason} ({len(log.records)} rounds logged)")
    return 0 if log.status == "done" else 1


def _cmd_report(args) -> int:
    report_dir = emit_report(_rooted(args.dir))
    with open(os.path.join(report_dir, "summary.txt"), encoding="utf-8") as fh:
        print(fh.read(), end="")
    print(f"report written to {report_dir}")
    return 0


def _cmd_compare(args) -> int:
    out = _rooted(args.output) if args.output else None
    print(compare([_rooted(d) for d in args.dirs], out_path=out), end="")
    return 0


def main(argv=None) -> int:
    torch.set_num_threads(int(os.environ.get("CALICO_TORCH_THREADS", "1")))
    parser = argparse.ArgumentParser(
        prog="calico",
        description="Calibrated active learning with a joint "
                    "classifier/density objective.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment")
    p_run.add_argument("config", nargs="?", default=None,
                       help="key/value config file (optional with presets)")
    p_run.add_argument("--dataset", help="dataset path or synthetic:... spec")
    p_run.add_argument("--variant",
                       choices=("baseline", "active", "calico", "equal"))
    p_run.add_argument("--protocol", choices=("desk", "paper"))
    p_run.add_argument("--output", help="artifact directory")
    p_run.add_argument("--seed", type=int, help="run a single seed")
    p_run.add_argument("--seeds", help="comma-separated seed list")
    p_run.add_argument("--n-q", dest="n_q", type=int, help="query rounds")
    p_run.add_argument("--oracle", choices=("simulated", "remote"))
    p_run.add_argument("--bind", help="host:port for the remote oracle")
    p_run.add_argument("--stop-when", dest="stop_when",
                       help="early stop, e.g. acc>=0.95")
    p_run.add_argument("--frontend", help="static console bundle to serve")
    p_run.set_defaults(fn=_cmd_run)

    p_serve = sub.add_parser("serve",
                             help="resume a run behind the annotation service")
    p_serve.add_argument("--run", required=True, help="run directory")
    p_serve.add_argument("--bind", default="127.0.0.1:8765")
    p_serve.add_argument("--frontend", help="static console bundle to serve")
    p_serve.set_defaults(fn=_cmd_serve)

    p_report = sub.add_parser("report",
                              help="re-emit tables and figures from logs")
    p_report.add_argument("dir")
    p_report.set_defaults(fn=_cmd_report)

    p_cmp = sub.add_parser("compare", help="cross-variant summary table")
    p_cmp.add_argument("dirs", nargs="+")
    p_cmp.add_argument("--output", help="directory for table and figure")
    p_cmp.set_defaults(fn=_cmd_compare)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except CalicoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
