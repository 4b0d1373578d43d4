"""Experiment harness: config files, presets, reports and the CLI."""

import csv
import json
import os
import threading
import time

import numpy as np
import pytest

from calico.cli import main
from calico.errors import ValidationError
from calico.harness import (
    EQUAL_CLASS_PROTOCOLS,
    ExperimentConfig,
    aggregate_curve,
    collect_runs,
    compare,
    config_snapshot,
    desk_preset,
    emit_report,
    load_config,
    load_experiment_dataset,
    paper_preset,
    run_experiment,
    run_single,
    summarize_runs,
    summary_table,
)
from calico.orchestrator import RemoteOracle, SimulatedOracle
from calico.queries import QuerySpec
from calico.service import OracleQueue
from calico.sgld import SGLDConfig
from calico.training import TrainConfig

TINY = "synthetic:k=3,per_class=40,sigma=0.45,seed=3"


def tiny_config(variant, tmp_path, name="exp", seeds=(0,), n_q=2):
    """Small enough to run a full experiment in well under a second."""
    return ExperimentConfig(
        dataset=TINY,
        variant=variant,
        seeds=seeds,
        n_q=n_q,
        initial_labeled=9,
        eval_fraction=0.25,
        hidden=(8,),
        output=str(tmp_path / name),
        train=TrainConfig(epochs_per_round=2, batch_labeled=32, batch_all=64,
                          loss_weight=0.5),
        sgld=SGLDConfig(steps=2, step_size=0.1, clamp=False)
             if variant in ("calico", "equal") else None,
        query=(None if variant == "baseline"
               else QuerySpec(strategy="equal_class", labels_per_class=2)
               if variant == "equal" else QuerySpec(q=6)),
    ).validated()


# -- config validation -------------------------------------------------------


def test_unknown_variant_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig(variant="softmax").validated()


def test_empty_seeds_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig(seeds=()).validated()


def test_unknown_oracle_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig(oracle="human").validated()


def test_baseline_forbids_query():
    with pytest.raises(ValidationError, match="no query"):
        ExperimentConfig(variant="baseline", query=QuerySpec()).validated()


def test_softmax_variants_force_zero_loss_weight():
    for variant in ("baseline", "active"):
        cfg = ExperimentConfig(
            variant=variant,
            train=TrainConfig(loss_weight=1.0),
            sgld=SGLDConfig(),
            query=QuerySpec() if variant == "active" else None,
        ).validated()
        assert cfg.train.loss_weight == 0.0
        assert cfg.sgld is None


def test_joint_variant_requires_positive_loss_weight():
    with pytest.raises(ValidationError, match="positive loss_weight"):
        ExperimentConfig(variant="calico",
                         train=TrainConfig(loss_weight=0.0)).validated()


def test_joint_variant_defaults_sgld():
    cfg = ExperimentConfig(variant="calico", sgld=None).validated()
    assert cfg.sgld is not None


def test_equal_variant_reshapes_query():
    cfg = ExperimentConfig(variant="equal",
                           query=QuerySpec(q=12)).validated()
    assert cfg.query.strategy == "equal_class"
    assert cfg.query.labels_per_class == 12


# -- presets -----------------------------------------------------------------


def test_desk_preset_all_variants_validate():
    for variant in ("baseline", "active", "calico", "equal"):
        cfg = desk_preset(variant)
        assert cfg.protocol == "desk"
        assert cfg.seeds == tuple(range(10))
        assert cfg.n_q == 10
        assert cfg.initial_labeled == 20
        if variant in ("baseline", "active"):
            assert cfg.sgld is None and cfg.train.loss_weight == 0.0
        else:
            assert cfg.sgld is not None and cfg.train.loss_weight > 0.0


def test_paper_preset_per_dataset_quota():
    for name, (per_class, cap) in EQUAL_CLASS_PROTOCOLS.items():
        cfg = paper_preset("equal", dataset=f"data/{name}.npz")
        assert cfg.query.labels_per_class == per_class
        assert cfg.label_cap == cap
    fallback = paper_preset("calico", dataset="data/somethingelse.npz")
    assert fallback.label_cap == 4000
    assert fallback.n_q == 16
    assert fallback.query.q == 250


# -- config files ------------------------------------------------------------


def write_ini(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ValidationError, match="not found"):
        load_config(str(tmp_path / "nope.ini"))


def test_load_config_sections(tmp_path):
    path = write_ini(tmp_path / "exp.ini", f"""
[experiment]
dataset = {TINY}
variant = calico
seeds = 0 1
n_q = 3
initial_labeled = 9
eval_fraction = 0.25
hidden = 8 4
output = out

[train]
epochs_per_round = 2
loss_weight = 0.7
warm_start = no

[sgld]
steps = 4
step_size = 0.2
clamp = off

[query]
q = 5
""")
    cfg = load_config(path)
    assert cfg.dataset == TINY
    assert cfg.seeds == (0, 1)
    assert cfg.n_q == 3
    assert cfg.hidden == (8, 4)
    assert cfg.train.epochs_per_round == 2
    assert cfg.train.loss_weight == 0.7
    assert cfg.train.warm_start is False
    assert cfg.sgld.steps == 4
    assert cfg.sgld.step_size == 0.2
    assert cfg.sgld.clamp is False
    assert cfg.query.q == 5


def test_load_config_overrides_win(tmp_path):
    path = write_ini(tmp_path / "exp.ini", f"""
[experiment]
dataset = {TINY}
variant = calico
n_q = 3
""")
    cfg = load_config(path, overrides={"variant": "active", "n_q": 7,
                                       "bind": None})
    assert cfg.variant == "active"
    assert cfg.n_q == 7
    assert cfg.train.loss_weight == 0.0


def test_load_config_baseline_rejects_query_section(tmp_path):
    path = write_ini(tmp_path / "exp.ini", f"""
[experiment]
dataset = {TINY}
variant = baseline

[query]
q = 5
""")
    with pytest.raises(ValidationError, match="no query"):
        load_config(path)


def test_load_config_bad_bool(tmp_path):
    path = write_ini(tmp_path / "exp.ini", f"""
[experiment]
dataset = {TINY}
variant = calico

[sgld]
yopo = maybe
""")
    with pytest.raises(ValidationError, match="boolean"):
        load_config(path)


def test_snapshot_covers_all_resolved_settings(tmp_path):
    cfg = tiny_config("calico", tmp_path)
    doc = config_snapshot(cfg)
    assert doc["variant"] == "calico"
    assert doc["train"]["loss_weight"] == 0.5
    assert doc["sgld"]["steps"] == 2
    assert doc["query"]["q"] == 6
    json.dumps(doc)  # must be serializable as-is


# -- experiment execution ----------------------------------------------------


def test_run_experiment_artifacts(tmp_path):
    cfg = tiny_config("active", tmp_path, seeds=(0, 1))
    out = run_experiment(cfg)
    assert json.load(open(os.path.join(out, "config.json")))["variant"] == \
        "active"
    assert not os.path.exists(os.path.join(out, "failures.json"))
    for seed in (0, 1):
        rows = list(csv.DictReader(
            open(os.path.join(out, "runs", f"seed_{seed:03d}", "rounds.csv"))))
        assert len(rows) == 2
    for name in ("curve.csv", "per_seed.csv", "summary.json", "summary.txt"):
        assert os.path.exists(os.path.join(out, "report", name))
    for name in ("accuracy.svg", "ece.svg", "reliability_final.svg"):
        assert os.path.exists(os.path.join(out, "report", "figures", name))


def test_baseline_runs_once_on_full_split(tmp_path):
    cfg = tiny_config("baseline", tmp_path)
    out = run_experiment(cfg)
    rows = list(csv.DictReader(
        open(os.path.join(out, "runs", "seed_000", "rounds.csv"))))
    assert len(rows) == 1
    # 120 samples, 25% held out for evaluation, remainder all labeled
    assert int(rows[0]["n_labeled"]) == 90
    assert int(rows[0]["n_unlabeled"]) == 0


def test_report_reemission_is_byte_identical(tmp_path):
    cfg = tiny_config("calico", tmp_path)
    out = run_experiment(cfg)
    report = os.path.join(out, "report")

    def snapshot():
        blobs = {}
        for root, _, files in os.walk(report):
            for name in files:
                p = os.path.join(root, name)
                blobs[os.path.relpath(p, report)] = open(p, "rb").read()
        return blobs

    first = snapshot()
    emit_report(out)
    second = snapshot()
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name


def test_failed_seeds_are_isolated(tmp_path):
    cfg = tiny_config("active", tmp_path, seeds=(0, 1))
    ds = load_experiment_dataset(cfg)

    class FlakyOracle:
        """Raises once (first request), then answers from ground truth."""

        is_simulated = True

        def __init__(self):
            self.inner = SimulatedOracle(ds.labels)
            self.tripped = False

        def request_labels(self, ids, confidences, payloads, round_idx):
            if not self.tripped:
                self.tripped = True
                raise ValidationError("annotator unavailable")
            return self.inner.request_labels(ids, confidences, payloads,
                                             round_idx)

    out = run_experiment(cfg, oracle=FlakyOracle())
    failures = json.load(open(os.path.join(out, "failures.json")))
    assert set(failures) == {"0"}
    summary = json.load(open(os.path.join(out, "report", "summary.json")))
    assert summary["summary"]["n_seeds"] == 1


def test_all_seeds_failing_skips_report(tmp_path):
    cfg = tiny_config("active", tmp_path)

    class DeadOracle:
        is_simulated = True

        def request_labels(self, ids, confidences, payloads, round_idx):
            raise ValidationError("annotator unavailable")

    out = run_experiment(cfg, oracle=DeadOracle())
    assert os.path.exists(os.path.join(out, "failures.json"))
    assert not os.path.exists(os.path.join(out, "report"))


# -- aggregation -------------------------------------------------------------


def test_collect_runs_requires_completed_rounds(tmp_path):
    os.makedirs(tmp_path / "runs" / "seed_000")
    with pytest.raises(ValidationError, match="no completed runs"):
        collect_runs(str(tmp_path))


def fake_runs():
    def row(r, n, acc, ece):
        return {"round": r, "n_labeled": n, "accuracy": acc, "ece": ece,
                "eval_ce": 0.5}

    return {
        0: [row(1, 20, 0.70, 0.10), row(2, 30, 0.80, 0.08)],
        1: [row(1, 20, 0.60, 0.12), row(2, 30, 0.90, 0.04),
            row(3, 40, 0.90, 0.05)],
    }


def test_aggregate_curve_truncates_to_common_rounds():
    curve = aggregate_curve(fake_runs())
    assert [c["round"] for c in curve] == [1, 2]
    assert curve[0]["acc_mean"] == pytest.approx(65.0)
    assert curve[1]["ece_mean"] == pytest.approx(6.0)
    # sample standard deviation across the two seeds, in percent
    assert curve[0]["acc_sd"] == pytest.approx(np.std([70, 60], ddof=1))


def test_summarize_runs_best_and_final():
    summary = summarize_runs(fake_runs())
    assert summary["per_seed"][0]["best_round"] == 2
    # tie on accuracy between rounds 2 and 3 resolves to the earlier round
    assert summary["per_seed"][1]["best_round"] == 2
    assert summary["per_seed"][1]["final_ece"] == pytest.approx(5.0)
    agg = summary["aggregate"]
    assert agg["best_acc"]["mean"] == pytest.approx(85.0)


def test_summary_table_format():
    table = summary_table([{"variant": "active",
                            "summary": summarize_runs(fake_runs())}])
    lines = table.strip().split("\n")
    assert lines[0].split() == ["variant", "seeds", "Best", "ACC", "Best",
                                "ECE", "Final", "ACC", "Final", "ECE"]
    assert "active" in lines[2]
    assert "±" in lines[2]


def test_compare_writes_table_and_figure(tmp_path):
    dirs = []
    for variant in ("active", "calico"):
        cfg = tiny_config(variant, tmp_path, name=variant)
        dirs.append(run_experiment(cfg))
    out = tmp_path / "cmp"
    table = compare(dirs, out_path=str(out))
    assert "active" in table and "calico" in table
    assert (out / "comparison.txt").read_text() == table
    assert (out / "accuracy.svg").exists()


# -- command line ------------------------------------------------------------


def cli_ini(tmp_path, variant="active", output="exp_cli"):
    return write_ini(tmp_path / "cli.ini", f"""
[experiment]
dataset = {TINY}
variant = {variant}
seeds = 0
n_q = 2
initial_labeled = 9
eval_fraction = 0.25
hidden = 8
output = {output}

[train]
epochs_per_round = 2
loss_weight = {0.0 if variant in ("baseline", "active") else 0.5}

{"" if variant in ("baseline", "active") else "[sgld]"}
{"" if variant in ("baseline", "active") else "steps = 2"}
""")


def test_cli_run_and_report(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CALICO_OUTPUT_ROOT", str(tmp_path))
    path = cli_ini(tmp_path)
    assert main(["run", path]) == 0
    out = capsys.readouterr().out
    assert "Final ECE" in out
    assert str(tmp_path / "exp_cli") in out
    # re-emit from the stored logs alone
    assert main(["report", str(tmp_path / "exp_cli")]) == 0
    assert "report written" in capsys.readouterr().out


def test_cli_run_seed_flag_overrides_config(tmp_path, monkeypatch):
    monkeypatch.setenv("CALICO_OUTPUT_ROOT", str(tmp_path))
    path = cli_ini(tmp_path)
    assert main(["run", path, "--seed", "5"]) == 0
    assert os.path.exists(tmp_path / "exp_cli" / "runs" / "seed_005")
    assert not os.path.exists(tmp_path / "exp_cli" / "runs" / "seed_000")


def test_cli_compare(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("CALICO_OUTPUT_ROOT", str(tmp_path))
    for variant in ("active", "calico"):
        assert main(["run", cli_ini(tmp_path, variant, f"exp_{variant}")]) == 0
    capsys.readouterr()
    assert main(["compare", str(tmp_path / "exp_active"),
                 str(tmp_path / "exp_calico")]) == 0
    table = capsys.readouterr().out
    assert "active" in table and "calico" in table


def test_cli_errors_exit_nonzero(tmp_path, capsys):
    assert main(["run", str(tmp_path / "missing.ini")]) == 1
    assert "error:" in capsys.readouterr().err


def test_cli_preset_flags_without_config(tmp_path, monkeypatch):
    # presets carry their own dataset; only shrink the workload via overrides
    monkeypatch.setenv("CALICO_OUTPUT_ROOT", str(tmp_path))
    assert main(["run", "--variant", "baseline", "--dataset", TINY,
                 "--output", "exp_preset", "--seed", "3"]) == 0
    assert os.path.exists(tmp_path / "exp_preset" / "runs" / "seed_003")


def test_run_single_against_loaded_dataset(tmp_path):
    cfg = tiny_config("equal", tmp_path)
    ds = load_experiment_dataset(cfg)
    log = run_single(cfg, ds, 0, str(tmp_path / "single"))
    assert log.status == "done"
    assert len(log.records) == 2
    # equal-class quota: two labels for each of the three classes per round
    assert log.records[0].query_ids.size == 6


def test_run_single_binds_remote_wal_to_run_dir(tmp_path):
    # rounds restart per seed, so the write-ahead log must be per run or a
    # resume would replay another seed's answers
    cfg = tiny_config("active", tmp_path)
    ds = load_experiment_dataset(cfg)
    queue = OracleQueue(n_classes=ds.n_classes)
    oracle = RemoteOracle(queue, poll_interval=0.01)

    def annotate():
        for _ in range(cfg.n_q):
            deadline = time.time() + 30
            while time.time() < deadline:
                items = queue.pending_items()
                if items:
                    break
                time.sleep(0.01)
            for it in items:
                queue.submit(it["id"], it["id"] % ds.n_classes + 1)

    t = threading.Thread(target=annotate, daemon=True)
    t.start()
    run_dir = str(tmp_path / "single")
    log = run_single(cfg, ds, 0, run_dir, oracle=oracle)
    t.join(timeout=30)
    assert log.status == "done"
    assert queue.wal_path == os.path.join(run_dir, "labels.wal")
    with open(queue.wal_path, encoding="utf-8") as fh:
        entries = [json.loads(line) for line in fh if line.strip()]
    assert len(entries) == cfg.n_q * 6
