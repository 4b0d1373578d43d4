"""The active learning control loop and its on-disk run record.

Each round trains on the current pools, queries the least-certain unlabeled
samples, hands them to the oracle, folds the new labels in, and evaluates.
Every run writes a resumable directory: per-round CSV rows (bit-stable, so
re-runs diff clean), checkpoints, pool snapshots and query composition. Wall
time lives in its own file to keep the main table reproducible.
"""

from __future__ import annotations

import base64
import csv
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .calibration import (
    CalibrationReport,
    compute_ece,
    evaluate_model,
    negative_log_likelihood,
    reliability_table,
)
from .data import Dataset, PoolPartition
from .errors import TrainingDiverged, ValidationError
from .models import ModelState, load_model, logits, save_model
from .queries import (
    QuerySpec,
    equal_class_query,
    least_confidence_query,
    pool_confidences,
    random_query,
)
from .sgld import SGLDConfig
from .training import TrainConfig, train_round

ROUND_COLUMNS = ("round", "n_labeled", "n_unlabeled", "query_size",
                 "accuracy", "ece", "eval_ce", "train_ce", "energy_gap",
                 "grad_norm", "energy_pos", "energy_neg")


class SimulatedOracle:
    """Ground-truth lookup; answers every query immediately."""

    is_simulated = True

    def __init__(self, labels: np.ndarray):
        self._labels = np.asarray(labels)

    def request_labels(self, ids, confidences, payloads, round_idx) -> dict:
        return {int(i): int(self._labels[int(i)]) for i in ids}


class RemoteOracle:
    """Bridges the loop to a label queue served over HTTP.

    The loop blocks until every queued item is labeled; the queue persists
    submissions in a write-ahead log, so nothing is lost if the process dies
    mid-round.
    """

    is_simulated = False

    def __init__(self, queue, poll_interval: float = 0.5):
        self.queue = queue
        self.poll_interval = poll_interval

    def bind_run(self, run_dir: str) -> None:
        """Point the queue's write-ahead log at this run's directory.

        Round numbers restart for every seed, so a log shared between runs
        would replay one seed's answers into another's queue.
        """
        self.queue.set_wal_path(os.path.join(run_dir, "labels.wal"))

    def request_labels(self, ids, confidences, payloads, round_idx) -> dict:
        self.queue.begin_round(round_idx, ids, confidences, payloads)
        return self.queue.wait_complete(self.poll_interval)


@dataclass
class RoundRecord:
    round: int
    n_labeled: int          # at training time
    n_unlabeled: int        # at training time
    query_ids: np.ndarray
    query_conf: np.ndarray
    query_true: np.ndarray | None
    report: CalibrationReport
    train_metrics: dict
    eval_ce: float
    wall_time: float


@dataclass
class RunLog:
    seed: int
    config: dict = field(default_factory=dict)
    records: list = field(default_factory=list)
    round0: RoundRecord | None = None
    status: str = "done"
    failure: str | None = None
    stop_reason: str = "completed"

    def final_record(self) -> RoundRecord:
        return self.records[-1]

    def best_record(self) -> RoundRecord:
        # highest accuracy; the earliest such round on ties
        best = self.records[0]
        for rec in self.records[1:]:
            if rec.report.accuracy > best.report.accuracy:
                best = rec
        return best

    def curve(self):
        return ([r.n_labeled for r in self.records],
                [r.report.accuracy for r in self.records],
                [r.report.ece for r in self.records])


def sample_payload(dataset: Dataset, sample_id: int) -> dict:
    """Wire form of one sample: base64 8-bit image or a 2-D point."""
    x = dataset.features[sample_id]
    if dataset.is_image:
        raw = np.clip(np.rint((x + 1.0) * 127.5), 0, 255).astype(np.uint8)
        return {"image_b64": base64.b64encode(raw.tobytes()).decode("ascii"),
                "shape": list(dataset.feature_shape)}
    return {"point": [float(v) for v in x[:2]]}


def apply_oracle_update(pools: PoolPartition, query_ids: np.ndarray,
                        labels: dict) -> PoolPartition:
    """Move labeled query members from the unlabeled to the labeled pool.

    A partial label batch moves only what it covers; everything else stays
    queued. Labels for ids outside the query are rejected.
    """
    query_ids = np.asarray(query_ids, dtype=np.int64)
    if np.unique(query_ids).size != query_ids.size:
        raise ValidationError("duplicate id in query")
    query_set = set(int(i) for i in query_ids)
    if not query_set <= set(int(i) for i in pools.unlabeled_ids):
        raise ValidationError("query ids must come from the unlabeled pool")
    for i in labels:
        if int(i) not in query_set:
            raise ValidationError(f"label for id {i} outside the query")
    if not labels:
        return pools
    moved = np.array(sorted(int(i) for i in labels), dtype=np.int64)
    new_labels = dict(pools.labels)
    for i in moved:
        new_labels[int(i)] = int(labels[int(i)])
    return PoolPartition(
        labeled_ids=np.sort(np.concatenate([pools.labeled_ids, moved])),
        unlabeled_ids=np.setdiff1d(pools.unlabeled_ids, moved),
        eval_ids=pools.eval_ids,
        seed=pools.seed,
        labels=new_labels,
    )


def _round_rng(seed: int, round_idx: int) -> np.random.Generator:
    # one child stream per round, so resumed runs replay identically
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(round_idx,)))


def _parse_stop_when(expr: str):
    # e.g. "acc>=0.95" or "ece<=0.05"
    for metric in ("acc", "ece"):
        for op in (">=", "<="):
            if expr.startswith(metric + op):
                return metric, op, float(expr[len(metric) + 2:])
    raise ValidationError(f"cannot parse stop condition '{expr}'")


def _stop_satisfied(cond, report: CalibrationReport) -> bool:
    metric, op, target = cond
    value = report.accuracy if metric == "acc" else report.ece
    return value >= target if op == ">=" else value <= target


class RunDir:
    """Filesystem layout of one run; append-only during the loop."""

    def __init__(self, path: str):
        self.path = path

    def _p(self, *parts) -> str:
        return os.path.join(self.path, *parts)

    @property
    def exists(self) -> bool:
        return os.path.exists(self._p("rounds.csv"))

    def initialize(self, config: dict, state: ModelState,
                   pools: PoolPartition) -> None:
        for sub in ("queries", "reliability", "checkpoints", "pools"):
            os.makedirs(self._p(sub), exist_ok=True)
        with open(self._p("config.json"), "w", encoding="utf-8") as fh:
            json.dump(config, fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(self._p("rounds.csv"), "w", newline="") as fh:
            csv.writer(fh).writerow(ROUND_COLUMNS)
        with open(self._p("timing.csv"), "w", newline="") as fh:
            csv.writer(fh).writerow(("round", "wall_time_s"))
        save_model(state, self._p("checkpoints", "round_000"))
        self.write_pools(0, pools)

    def write_pools(self, round_idx: int, pools: PoolPartition) -> None:
        doc = {
            "seed": int(pools.seed),
            "labeled_ids": [int(i) for i in pools.labeled_ids],
            "unlabeled_ids": [int(i) for i in pools.unlabeled_ids],
            "eval_ids": [int(i) for i in pools.eval_ids],
            "labels": {str(k): int(v) for k, v in sorted(pools.labels.items())},
        }
        with open(self._p("pools", f"round_{round_idx:03d}.json"), "w",
                  encoding="utf-8") as fh:
            json.dump(doc, fh)
            fh.write("\n")

    def load_pools(self, round_idx: int) -> PoolPartition:
        with open(self._p("pools", f"round_{round_idx:03d}.json"),
                  encoding="utf-8") as fh:
            doc = json.load(fh)
        return PoolPartition(
            labeled_ids=np.asarray(doc["labeled_ids"], dtype=np.int64),
            unlabeled_ids=np.asarray(doc["unlabeled_ids"], dtype=np.int64),
            eval_ids=np.asarray(doc["eval_ids"], dtype=np.int64),
            seed=int(doc["seed"]),
            labels={int(k): int(v) for k, v in doc["labels"].items()},
        )

    def load_checkpoint(self, round_idx: int) -> ModelState:
        return load_model(self._p("checkpoints", f"round_{round_idx:03d}"))

    def last_completed_round(self) -> int:
        if not self.exists:
            return 0
        last = 0
        with open(self._p("rounds.csv"), newline="") as fh:
            for row in csv.DictReader(fh):
                last = max(last, int(row["round"]))
        return last

    def append_round(self, rec: RoundRecord, state: ModelState,
                     pools: PoolPartition) -> None:
        m = rec.train_metrics
        with open(self._p("rounds.csv"), "a", newline="") as fh:
            csv.writer(fh).writerow([
                rec.round, rec.n_labeled, rec.n_unlabeled, len(rec.query_ids),
                f"{rec.report.accuracy:.17g}", f"{rec.report.ece:.17g}",
                f"{rec.eval_ce:.17g}", f"{m.get('ce', 0.0):.17g}",
                f"{m.get('energy_gap', 0.0):.17g}",
                f"{m.get('grad_norm', 0.0):.17g}",
                f"{m.get('energy_pos', 0.0):.17g}",
                f"{m.get('energy_neg', 0.0):.17g}",
            ])
        with open(self._p("timing.csv"), "a", newline="") as fh:
            csv.writer(fh).writerow([rec.round, f"{rec.wall_time:.6f}"])
        with open(self._p("queries", f"round_{rec.round:03d}.csv"), "w",
                  newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("id", "confidence", "true_class"))
            for k, i in enumerate(rec.query_ids):
                true = "" if rec.query_true is None else int(rec.query_true[k])
                w.writerow([int(i), f"{rec.query_conf[k]:.17g}", true])
        with open(self._p("reliability", f"round_{rec.round:03d}.csv"), "w",
                  newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("midpoint", "acc", "conf", "count", "deviation"))
            for row in reliability_table(rec.report):
                w.writerow([f"{row['midpoint']:.17g}", f"{row['acc']:.17g}",
                            f"{row['conf']:.17g}", row["count"],
                            f"{row['deviation']:.17g}"])
        save_model(state, self._p("checkpoints", f"round_{rec.round:03d}"))
        self.write_pools(rec.round, pools)

    def write_status(self, doc: dict) -> None:
        os.makedirs(self.path, exist_ok=True)
        with open(self._p("status.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def read_status(self) -> dict:
        with open(self._p("status.json"), encoding="utf-8") as fh:
            return json.load(fh)

    def write_summary(self, log: RunLog) -> None:
        doc = {"status": log.status, "seed": log.seed,
               "rounds": len(log.records), "stop_reason": log.stop_reason}
        if log.failure:
            doc["failure"] = log.failure
        if log.records:
            fin = log.final_record()
            best = log.best_record()
            doc["final"] = {"round": fin.round,
                            "accuracy": fin.report.accuracy,
                            "ece": fin.report.ece}
            doc["best"] = {"round": best.round,
                           "accuracy": best.report.accuracy,
                           "ece": best.report.ece}
        with open(self._p("summary.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _evaluate(state: ModelState, dataset: Dataset, pools: PoolPartition,
              m_bin: int):
    feats = dataset.features[pools.eval_ids]
    labels = dataset.labels[pools.eval_ids]
    report = evaluate_model(state, feats, labels, m_bin)
    ce = negative_log_likelihood(logits(state, feats), labels)
    return report, ce


def _select_query(state, pools, dataset, spec: QuerySpec, oracle,
                  round_idx: int, cap_remaining: int | None):
    ids = pools.unlabeled_ids
    if spec.strategy == "least_confidence":
        q = spec.q if cap_remaining is None else min(spec.q, cap_remaining)
        chosen = least_confidence_query(state, ids, dataset.features, q)
    elif spec.strategy == "equal_class":
        per_class = spec.labels_per_class
        if cap_remaining is not None:
            per_class = min(per_class, cap_remaining // dataset.n_classes)
        if per_class < 1:
            return np.empty(0, dtype=np.int64), np.empty(0)
        chosen = equal_class_query(state, ids, dataset.features,
                                   dataset.labels, dataset.n_classes,
                                   per_class, oracle)
    else:
        q = spec.q if cap_remaining is None else min(spec.q, cap_remaining)
        chosen = random_query(ids, q, seed=spec.seed + round_idx)
    conf = pool_confidences(state, dataset.features[chosen])
    return chosen, conf


def run_al(dataset: Dataset, pools: PoolPartition, state: ModelState,
           train_cfg: TrainConfig, sgld_cfg: SGLDConfig | None,
           query_spec: QuerySpec, oracle, n_q: int, *,
           m_bin: int = 15, seed: int = 0, run_dir: str | None = None,
           config_snapshot: dict | None = None, eval_round0: bool = False,
           stop_when: str | None = None, label_cap: int | None = None,
           resume: bool = True) -> RunLog:
    """Run the full query loop and return its log.

    With run_dir set, every completed round is persisted before the next
    starts, and an interrupted run picks up from its last completed round
    when called again on the same directory (pass resume=False to refuse).
    """
    if n_q < 1:
        raise ValidationError("n_q must be >= 1")
    cond = _parse_stop_when(stop_when) if stop_when else None
    log = RunLog(seed=seed, config=dict(config_snapshot or {}))
    rd = RunDir(run_dir) if run_dir else None

    start_round = 1
    if rd is not None:
        if rd.exists:
            if not resume:
                raise ValidationError(f"run directory {run_dir} already has rounds")
            done = rd.last_completed_round()
            if done > 0:
                state = rd.load_checkpoint(done)
                pools = rd.load_pools(done)
                start_round = done + 1
        else:
            rd.initialize(log.config, state, pools)

    total_ids = pools.n_labeled + pools.n_unlabeled

    if eval_round0 and start_round == 1:
        report, ce = _evaluate(state, dataset, pools, m_bin)
        log.round0 = RoundRecord(
            round=0, n_labeled=pools.n_labeled, n_unlabeled=pools.n_unlabeled,
            query_ids=np.empty(0, dtype=np.int64), query_conf=np.empty(0),
            query_true=None, report=report, train_metrics={}, eval_ce=ce,
            wall_time=0.0)

    for round_idx in range(start_round, n_q + 1):
        if pools.n_unlabeled == 0:
            log.stop_reason = "pool exhausted"
            break
        cap_remaining = None
        if label_cap is not None:
            cap_remaining = label_cap - pools.n_labeled
            if cap_remaining <= 0:
                log.stop_reason = f"label cap {label_cap} reached"
                break

        rng = _round_rng(seed, round_idx)
        t0 = time.perf_counter()
        n_lab, n_unl = pools.n_labeled, pools.n_unlabeled

        if rd is not None:
            rd.write_status({"state": "training", "round": round_idx,
                             "n_labeled": n_lab, "n_unlabeled": n_unl,
                             "outstanding": 0})
        try:
            state, tmetrics = train_round(state, pools, dataset, train_cfg,
                                          sgld_cfg, rng)
        except TrainingDiverged as exc:
            log.status = "failed"
            log.failure = str(exc)
            log.stop_reason = "training diverged"
            if rd is not None:
                rd.write_status({"state": "failed", "round": round_idx,
                                 "n_labeled": n_lab, "n_unlabeled": n_unl,
                                 "outstanding": 0, "failure": str(exc)})
                rd.write_summary(log)
            return log

        query_ids, query_conf = _select_query(state, pools, dataset,
                                              query_spec, oracle, round_idx,
                                              cap_remaining)
        if len(query_ids) == 0:
            log.stop_reason = f"label cap {label_cap} reached"
            break
        query_true = dataset.labels[query_ids] if getattr(
            oracle, "is_simulated", False) else None

        if rd is not None:
            rd.write_status({"state": "waiting_oracle", "round": round_idx,
                             "n_labeled": n_lab, "n_unlabeled": n_unl,
                             "outstanding": int(len(query_ids))})
        payloads = [sample_payload(dataset, int(i)) for i in query_ids]
        labels = oracle.request_labels(query_ids, query_conf, payloads,
                                       round_idx)
        pools = apply_oracle_update(pools, query_ids, labels)
        if pools.n_labeled + pools.n_unlabeled != total_ids:
            raise ValidationError("pool conservation violated")

        report, eval_ce = _evaluate(state, dataset, pools, m_bin)
        rec = RoundRecord(
            round=round_idx, n_labeled=n_lab, n_unlabeled=n_unl,
            query_ids=query_ids, query_conf=query_conf, query_true=query_true,
            report=report, train_metrics=tmetrics, eval_ce=eval_ce,
            wall_time=time.perf_counter() - t0)
        log.records.append(rec)
        if rd is not None:
            rd.append_round(rec, state, pools)
            rd.write_status({"state": "running", "round": round_idx,
                             "n_labeled": pools.n_labeled,
                             "n_unlabeled": pools.n_unlabeled,
                             "outstanding": 0})
        if cond and _stop_satisfied(cond, report):
            log.stop_reason = f"stop condition {stop_when} met"
            break

    if rd is not None:
        status = "done" if log.status == "done" else log.status
        last = log.records[-1].round if log.records else 0
        rd.write_status({"state": status, "round": last,
                         "n_labeled": pools.n_labeled,
                         "n_unlabeled": pools.n_unlabeled, "outstanding": 0})
        rd.write_summary(log)
    return log
