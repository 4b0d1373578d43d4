"""Experiment front-end: configuration files, variant execution across
seeds, and report emission (tables plus figures) from stored run logs.

Four variants share the machinery. `baseline` trains the softmax classifier
once on the full labeled training split; `active` adds the query loop but
keeps the plain cross-entropy objective; `calico` trains the joint
classifier/density objective inside the loop; `equal` is `calico` with the
per-class quota query. Reports are pure functions of the run directories:
re-emitting from the same logs writes identical bytes.
"""

from __future__ import annotations

import configparser
import csv
import glob
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    Dataset,
    PoolPartition,
    load_dataset,
    parse_synthetic_spec,
    split_pools,
)
from .errors import CalicoError, ValidationError
from .models import ArchSpec, build_model
from .orchestrator import (
    RoundRecord,
    RunDir,
    RunLog,
    SimulatedOracle,
    run_al,
    _evaluate,
)
from .queries import QuerySpec
from .sgld import SGLDConfig
from .training import TrainConfig, train_baseline

VARIANTS = ("baseline", "active", "calico", "equal")

# per-dataset equal-class protocol: (labels per class per round, label cap)
EQUAL_CLASS_PROTOCOLS = {
    "bloodmnist": (50, 4000),
    "organsmnist": (35, 3850),
    "organcmnist": (35, 3850),
    "pneumoniamnist": (100, 2400),
}


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "synthetic:"
    dataset_format: str = "array-archive"
    variant: str = "calico"
    protocol: str = "desk"
    seeds: tuple = (0,)
    n_q: int = 10
    m_bin: int = 15
    initial_labeled: int = 20
    eval_fraction: float = 0.2
    label_cap: int | None = None
    output: str = "runs/experiment"
    arch: str = "mlp"
    hidden: tuple = (64, 64)
    dtype: str = "float32"
    eval_round0: bool = False
    stop_when: str | None = None
    oracle: str = "simulated"
    bind: str = "127.0.0.1:8765"
    train: TrainConfig = field(default_factory=TrainConfig)
    sgld: SGLDConfig | None = None
    query: QuerySpec | None = None

    def validated(self) -> "ExperimentConfig":
        if self.variant not in VARIANTS:
            raise ValidationError(f"unknown variant '{self.variant}'")
        if not self.seeds:
            raise ValidationError("at least one seed required")
        if self.oracle not in ("simulated", "remote"):
            raise ValidationError(f"unknown oracle kind '{self.oracle}'")
        cfg = self
        if self.variant == "baseline":
            if self.query is not None:
                raise ValidationError("baseline takes no query settings")
            if self.train.loss_weight != 0.0:
                cfg = replace(cfg, train=replace(cfg.train, loss_weight=0.0))
            cfg = replace(cfg, sgld=None)
        else:
            query = cfg.query or QuerySpec()
            if self.variant == "equal":
                if query.strategy != "equal_class":
                    query = QuerySpec(strategy="equal_class", q=query.q,
                                      labels_per_class=query.labels_per_class
                                      or query.q, seed=query.seed)
                if query.labels_per_class < 1:
                    raise ValidationError("equal variant needs labels_per_class")
            cfg = replace(cfg, query=query)
            if self.variant == "active":
                if self.train.loss_weight != 0.0:
                    cfg = replace(cfg, train=replace(cfg.train, loss_weight=0.0))
                cfg = replace(cfg, sgld=None)
            else:
                if cfg.train.loss_weight <= 0.0:
                    raise ValidationError(
                        f"{self.variant} requires a positive loss_weight")
                if cfg.sgld is None:
                    cfg = replace(cfg, sgld=SGLDConfig())
        return cfg


def desk_preset(variant: str = "calico") -> ExperimentConfig:
    """CI-scale protocol: overlapping synthetic Gaussians, 10 small rounds.

    batch_all covers the whole pool so the joint variants take the same
    number of optimizer steps per epoch as the softmax-only ones; any
    metric difference is then attributable to the energy term alone.
    """
    return ExperimentConfig(
        dataset="synthetic:k=3,per_class=2000,sigma=0.45,seed=7",
        variant=variant,
        protocol="desk",
        seeds=tuple(range(10)),
        n_q=10,
        initial_labeled=20,
        eval_fraction=0.5,
        hidden=(128, 128),
        train=TrainConfig(epochs_per_round=40, batch_labeled=64,
                          batch_all=1536, loss_weight=0.6),
        sgld=SGLDConfig(steps=10, step_size=0.1, clamp=False)
             if variant in ("calico", "equal") else None,
        query=(None if variant == "baseline" else
               QuerySpec(strategy="equal_class", labels_per_class=4)
               if variant == "equal" else QuerySpec(q=10)),
    ).validated()


def paper_preset(variant: str = "calico",
                 dataset: str = "data/bloodmnist.npz") -> ExperimentConfig:
    """Full image protocol: 250-label queries for 16 rounds, capped at 4000."""
    name = os.path.splitext(os.path.basename(dataset))[0].lower()
    per_class, cap = EQUAL_CLASS_PROTOCOLS.get(name, (50, 4000))
    return ExperimentConfig(
        dataset=dataset,
        variant=variant,
        protocol="paper",
        seeds=(0,),
        n_q=16,
        initial_labeled=250,
        label_cap=cap,
        arch="cnn",
        hidden=(16, 32),
        train=TrainConfig(epochs_per_round=10, augmentation=True),
        sgld=SGLDConfig(steps=20, yopo=True) if variant in ("calico", "equal")
             else None,
        query=(None if variant == "baseline" else
               QuerySpec(strategy="equal_class", labels_per_class=per_class)
               if variant == "equal" else QuerySpec(q=250)),
    ).validated()


def _parse_list(text: str, cast):
    return tuple(cast(v) for v in text.replace(",", " ").split())


_BOOLS = {"true": True, "1": True, "yes": True, "on": True,
          "false": False, "0": False, "no": False, "off": False}


def _bool(text: str) -> bool:
    try:
        return _BOOLS[text.strip().lower()]
    except KeyError:
        raise ValidationError(f"not a boolean value: '{text}'") from None


def load_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Read the key/value config file; CLI overrides win over file values."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ValidationError(f"config file not found: {path}")
    exp = dict(parser["experiment"]) if parser.has_section("experiment") else {}
    overrides = overrides or {}
    for k, v in overrides.items():
        if v is not None:
            exp[k] = str(v)

    protocol = exp.get("protocol", "desk")
    variant = exp.get("variant", "calico")
    if protocol == "paper":
        base = paper_preset(variant, exp.get("dataset", "data/bloodmnist.npz"))
    else:
        base = desk_preset(variant)

    fields = {}
    if "dataset" in exp:
        fields["dataset"] = exp["dataset"]
    if "dataset_format" in exp:
        fields["dataset_format"] = exp["dataset_format"]
    if "seeds" in exp:
        fields["seeds"] = _parse_list(exp["seeds"], int)
    for key, cast in (("n_q", int), ("m_bin", int), ("initial_labeled", int),
                      ("eval_fraction", float), ("label_cap", int)):
        if exp.get(key):
            fields[key] = cast(exp[key])
    if "output" in exp:
        fields["output"] = exp["output"]
    if "arch" in exp:
        fields["arch"] = exp["arch"]
    if "hidden" in exp:
        fields["hidden"] = _parse_list(exp["hidden"], int)
    if "dtype" in exp:
        fields["dtype"] = exp["dtype"]
    if exp.get("eval_round0"):
        fields["eval_round0"] = _bool(exp["eval_round0"])
    if exp.get("stop_when"):
        fields["stop_when"] = exp["stop_when"]
    if "oracle" in exp:
        fields["oracle"] = exp["oracle"]
    if "bind" in exp:
        fields["bind"] = exp["bind"]
    fields["variant"] = variant
    fields["protocol"] = protocol

    if parser.has_section("train"):
        t = dict(parser["train"])
        tkw = {}
        for key, cast in (("optimizer", str), ("learning_rate", float),
                          ("batch_labeled", int), ("batch_all", int),
                          ("epochs_per_round", int), ("loss_weight", float)):
            if key in t:
                tkw[key] = cast(t[key])
        for key in ("warm_start", "augmentation"):
            if key in t:
                tkw[key] = _bool(t[key])
        fields["train"] = replace(base.train, **tkw)

    if parser.has_section("sgld"):
        s = dict(parser["sgld"])
        skw = {}
        for key, cast in (("steps", int), ("step_size", float),
                          ("noise_std", float), ("init_mode", str),
                          ("yopo_inner_steps", int)):
            if key in s:
                skw[key] = cast(s[key])
        for key in ("yopo", "clamp"):
            if key in s:
                skw[key] = _bool(s[key])
        fields["sgld"] = replace(base.sgld or SGLDConfig(), **skw)

    if parser.has_section("query"):
        q = dict(parser["query"])
        qkw = {}
        for key, cast in (("strategy", str), ("q", int),
                          ("labels_per_class", int), ("seed", int)):
            if key in q:
                qkw[key] = cast(q[key])
        if variant == "baseline" and qkw:
            raise ValidationError("baseline takes no query settings")
        fields["query"] = replace(base.query or QuerySpec(), **qkw)

    return replace(base, **fields).validated()


def config_snapshot(cfg: ExperimentConfig) -> dict:
    """Serializable view of every resolved setting."""
    doc = {
        "dataset": cfg.dataset,
        "dataset_format": cfg.dataset_format,
        "variant": cfg.variant,
        "protocol": cfg.protocol,
        "seeds": list(cfg.seeds),
        "n_q": cfg.n_q,
        "m_bin": cfg.m_bin,
        "initial_labeled": cfg.initial_labeled,
        "eval_fraction": cfg.eval_fraction,
        "label_cap": cfg.label_cap,
        "arch": cfg.arch,
        "hidden": list(cfg.hidden),
        "dtype": cfg.dtype,
        "eval_round0": cfg.eval_round0,
        "stop_when": cfg.stop_when,
        "oracle": cfg.oracle,
        "train": {
            "optimizer": cfg.train.optimizer,
            "learning_rate": cfg.train.learning_rate,
            "batch_labeled": cfg.train.batch_labeled,
            "batch_all": cfg.train.batch_all,
            "epochs_per_round": cfg.train.epochs_per_round,
            "warm_start": cfg.train.warm_start,
            "loss_weight": cfg.train.loss_weight,
            "augmentation": cfg.train.augmentation,
        },
        "sgld": None if cfg.sgld is None else {
            "steps": cfg.sgld.steps,
            "step_size": cfg.sgld.step_size,
            "noise_std": cfg.sgld.noise_std,
            "init_mode": cfg.sgld.init_mode,
            "yopo": cfg.sgld.yopo,
            "yopo_inner_steps": cfg.sgld.yopo_inner_steps,
            "clamp": cfg.sgld.clamp,
        },
        "query": None if cfg.query is None else {
            "strategy": cfg.query.strategy,
            "q": cfg.query.q,
            "labels_per_class": cfg.query.labels_per_class,
            "seed": cfg.query.seed,
        },
    }
    return doc


def load_experiment_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.dataset.startswith("synthetic:") or cfg.dataset == "synthetic":
        return parse_synthetic_spec(cfg.dataset)
    return load_dataset(cfg.dataset, format=cfg.dataset_format)


def _arch_for(cfg: ExperimentConfig, dataset: Dataset) -> ArchSpec:
    return ArchSpec(in_shape=dataset.feature_shape, n_classes=dataset.n_classes,
                    kind=cfg.arch, hidden=cfg.hidden, dtype=cfg.dtype)


def _baseline_run(cfg: ExperimentConfig, dataset: Dataset, seed: int,
                  run_dir: str) -> RunLog:
    """No query loop: train once on every labeled training sample."""
    eval_pools = split_pools(dataset, initial_labeled=0,
                             eval_fraction=cfg.eval_fraction, seed=seed)
    labeled_ids = np.sort(np.concatenate([eval_pools.labeled_ids,
                                          eval_pools.unlabeled_ids]))
    labels = {int(i): int(dataset.labels[i]) for i in labeled_ids}
    pools = PoolPartition(labeled_ids=labeled_ids,
                          unlabeled_ids=np.empty(0, dtype=np.int64),
                          eval_ids=eval_pools.eval_ids, seed=seed,
                          labels=labels)
    state = build_model(_arch_for(cfg, dataset), seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(1,)))
    log = RunLog(seed=seed, config=config_snapshot(cfg))
    rd = RunDir(run_dir)
    rd.initialize(log.config, state, pools)
    t0 = time.perf_counter()
    state, metrics = train_baseline(state, labeled_ids, labels, dataset,
                                    cfg.train, rng)
    report, eval_ce = _evaluate(state, dataset, pools, cfg.m_bin)
    rec = RoundRecord(round=1, n_labeled=len(labeled_ids), n_unlabeled=0,
                      query_ids=np.empty(0, dtype=np.int64),
                      query_conf=np.empty(0), query_true=None, report=report,
                      train_metrics=metrics, eval_ce=eval_ce,
                      wall_time=time.perf_counter() - t0)
    log.records.append(rec)
    rd.append_round(rec, state, pools)
    rd.write_status({"state": "done", "round": 1,
                     "n_labeled": len(labeled_ids), "n_unlabeled": 0,
                     "outstanding": 0})
    rd.write_summary(log)
    return log


def run_single(cfg: ExperimentConfig, dataset: Dataset, seed: int,
               run_dir: str, oracle=None) -> RunLog:
    """Execute one seed of the configured variant."""
    cfg = cfg.validated()
    if cfg.variant == "baseline":
        return _baseline_run(cfg, dataset, seed, run_dir)
    pools = split_pools(dataset, initial_labeled=cfg.initial_labeled,
                        eval_fraction=cfg.eval_fraction, seed=seed)
    state = build_model(_arch_for(cfg, dataset), seed=seed)
    if oracle is None:
        oracle = SimulatedOracle(dataset.labels)
    elif hasattr(oracle, "bind_run"):
        os.makedirs(run_dir, exist_ok=True)
        oracle.bind_run(run_dir)
    return run_al(dataset, pools, state, cfg.train, cfg.sgld, cfg.query,
                  oracle, cfg.n_q, m_bin=cfg.m_bin, seed=seed,
                  run_dir=run_dir, config_snapshot=config_snapshot(cfg),
                  eval_round0=cfg.eval_round0, stop_when=cfg.stop_when,
                  label_cap=cfg.label_cap)


def run_experiment(cfg: ExperimentConfig, oracle=None) -> str:
    """All seeds of one variant, then the report. Returns the output dir."""
    cfg = cfg.validated()
    dataset = load_experiment_dataset(cfg)
    out = cfg.output
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(config_snapshot(cfg), fh, indent=2, sort_keys=True)
        fh.write("\n")
    failures = {}
    for seed in cfg.seeds:
        run_dir = os.path.join(out, "runs", f"seed_{seed:03d}")
        try:
            log = run_single(cfg, dataset, seed, run_dir, oracle=oracle)
            if log.status != "done":
                failures[seed] = log.failure or log.status
        except CalicoError as exc:  # isolate per-seed failures
            failures[seed] = str(exc)
    if failures:
        with open(os.path.join(out, "failures.json"), "w",
                  encoding="utf-8") as fh:
            json.dump({str(k): v for k, v in failures.items()}, fh, indent=2,
                      sort_keys=True)
            fh.write("\n")
    if len(failures) < len(cfg.seeds):
        emit_report(out)
    return out


# -- report emission (pure functions of stored run logs) --------------------


def read_run_rounds(run_dir: str) -> list:
    rows = []
    with open(os.path.join(run_dir, "rounds.csv"), newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({
                "round": int(row["round"]),
                "n_labeled": int(row["n_labeled"]),
                "accuracy": float(row["accuracy"]),
                "ece": float(row["ece"]),
                "eval_ce": float(row["eval_ce"]),
            })
    rows.sort(key=lambda r: r["round"])
    return rows


def _best_row(rows: list) -> dict:
    best = rows[0]
    for r in rows[1:]:
        if r["accuracy"] > best["accuracy"]:
            best = r
    return best


def collect_runs(out_dir: str) -> dict:
    """Per-seed round tables for one experiment directory."""
    runs = {}
    for run_dir in sorted(glob.glob(os.path.join(out_dir, "runs", "seed_*"))):
        if not os.path.exists(os.path.join(run_dir, "rounds.csv")):
            continue
        seed = int(os.path.basename(run_dir).split("_")[1])
        rows = read_run_rounds(run_dir)
        if rows:
            runs[seed] = rows
    if not runs:
        raise ValidationError(f"no completed runs under {out_dir}")
    return runs


def _mean_sd(values: list) -> tuple:
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std(ddof=1)) if arr.size > 1 else 0.0


def aggregate_curve(runs: dict) -> list:
    """Round-aligned mean and sd (percent) across seeds."""
    n_rounds = min(len(rows) for rows in runs.values())
    out = []
    for k in range(n_rounds):
        accs = [rows[k]["accuracy"] * 100 for rows in runs.values()]
        eces = [rows[k]["ece"] * 100 for rows in runs.values()]
        acc_m, acc_s = _mean_sd(accs)
        ece_m, ece_s = _mean_sd(eces)
        out.append({
            "round": list(runs.values())[0][k]["round"],
            "n_labeled": list(runs.values())[0][k]["n_labeled"],
            "acc_mean": acc_m, "acc_sd": acc_s,
            "ece_mean": ece_m, "ece_sd": ece_s,
        })
    return out


def summarize_runs(runs: dict) -> dict:
    """Best and final rows (percent) aggregated over seeds."""
    per_seed = {}
    for seed, rows in runs.items():
        best = _best_row(rows)
        final = rows[-1]
        per_seed[seed] = {
            "best_round": best["round"],
            "best_acc": best["accuracy"] * 100,
            "best_ece": best["ece"] * 100,
            "final_acc": final["accuracy"] * 100,
            "final_ece": final["ece"] * 100,
        }
    agg = {}
    for key in ("best_acc", "best_ece", "final_acc", "final_ece"):
        m, s = _mean_sd([v[key] for v in per_seed.values()])
        agg[key] = {"mean": m, "sd": s}
    return {"per_seed": per_seed, "aggregate": agg,
            "n_seeds": len(per_seed)}


def _fmt(ms: dict) -> str:
    return f"{ms['mean']:.2f} ± {ms['sd']:.2f}"


def summary_table(rows: list) -> str:
    """Plain-text table: one line per variant, best/final ACC and ECE."""
    header = (f"{'variant':<10} {'seeds':>5} {'Best ACC':>15} "
              f"{'Best ECE':>15} {'Final ACC':>15} {'Final ECE':>15}")
    lines = [header, "-" * len(header)]
    for r in rows:
        agg = r["summary"]["aggregate"]
        lines.append(
            f"{r['variant']:<10} {r['summary']['n_seeds']:>5} "
            f"{_fmt(agg['best_acc']):>15} {_fmt(agg['best_ece']):>15} "
            f"{_fmt(agg['final_acc']):>15} {_fmt(agg['final_ece']):>15}")
    return "\n".join(lines) + "\n"


def emit_report(out_dir: str) -> str:
    """Write curves, summary tables and figures for one experiment."""
    from .plotting import learning_curve_figure, reliability_figure

    with open(os.path.join(out_dir, "config.json"), encoding="utf-8") as fh:
        cfg_doc = json.load(fh)
    variant = cfg_doc["variant"]
    runs = collect_runs(out_dir)
    report_dir = os.path.join(out_dir, "report")
    fig_dir = os.path.join(report_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)

    curve = aggregate_curve(runs)
    with open(os.path.join(report_dir, "curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("round", "n_labeled", "acc_mean", "acc_sd",
                    "ece_mean", "ece_sd"))
        for c in curve:
            w.writerow([c["round"], c["n_labeled"], f"{c['acc_mean']:.2f}",
                        f"{c['acc_sd']:.2f}", f"{c['ece_mean']:.2f}",
                        f"{c['ece_sd']:.2f}"])

    summary = summarize_runs(runs)
    with open(os.path.join(report_dir, "per_seed.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("seed", "best_round", "best_acc", "best_ece",
                    "final_acc", "final_ece"))
        for seed in sorted(summary["per_seed"]):
            v = summary["per_seed"][seed]
            w.writerow([seed, v["best_round"], f"{v['best_acc']:.2f}",
                        f"{v['best_ece']:.2f}", f"{v['final_acc']:.2f}",
                        f"{v['final_ece']:.2f}"])
    with open(os.path.join(report_dir, "summary.json"), "w",
              encoding="utf-8") as fh:
        json.dump({"variant": variant, "summary": summary}, fh, indent=2,
                  sort_keys=True)
        fh.write("\n")
    table = summary_table([{"variant": variant, "summary": summary}])
    with open(os.path.join(report_dir, "summary.txt"), "w",
              encoding="utf-8") as fh:
        fh.write(table)

    if len(curve) > 1:
        learning_curve_figure(
            {variant: ([c["n_labeled"] for c in curve],
                       [c["acc_mean"] for c in curve],
                       [c["acc_sd"] for c in curve])},
            "accuracy", os.path.join(fig_dir, "accuracy.svg"))
        learning_curve_figure(
            {variant: ([c["n_labeled"] for c in curve],
                       [c["ece_mean"] for c in curve],
                       [c["ece_sd"] for c in curve])},
            "ECE", os.path.join(fig_dir, "ece.svg"))

    first_seed = min(runs)
    final_round = runs[first_seed][-1]["round"]
    rel_path = os.path.join(out_dir, "runs", f"seed_{first_seed:03d}",
                            "reliability", f"round_{final_round:03d}.csv")
    if os.path.exists(rel_path):
        rows = []
        with open(rel_path, newline="") as fh:
            for row in csv.DictReader(fh):
                rows.append({"midpoint": float(row["midpoint"]),
                             "acc": float(row["acc"]),
                             "conf": float(row["conf"]),
                             "count": int(row["count"])})
        reliability_figure(rows, f"{variant}, final round",
                           os.path.join(fig_dir, "reliability_final.svg"))
    return report_dir


def compare(dirs: list, out_path: str | None = None) -> str:
    """Cross-variant table (and optional combined curve figure directory)."""
    rows = []
    curves = {}
    for d in dirs:
        snapshot = os.path.join(d, "config.json")
        if not os.path.exists(snapshot):
            raise ValidationError(f"not an experiment directory: {d}")
        with open(snapshot, encoding="utf-8") as fh:
            variant = json.load(fh)["variant"]
        runs = collect_runs(d)
        rows.append({"variant": variant, "summary": summarize_runs(runs)})
        curve = aggregate_curve(runs)
        if len(curve) > 1:
            curves[variant] = ([c["n_labeled"] for c in curve],
                               [c["acc_mean"] for c in curve],
                               [c["acc_sd"] for c in curve])
    table = summary_table(rows)
    if out_path:
        os.makedirs(out_path, exist_ok=True)
        with open(os.path.join(out_path, "comparison.txt"), "w",
                  encoding="utf-8") as fh:
            fh.write(table)
        if curves:
            from .plotting import learning_curve_figure
            learning_curve_figure(curves, "accuracy",
                                  os.path.join(out_path, "accuracy.svg"))
    return table
