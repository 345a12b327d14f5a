import json

import numpy as np
import pandas as pd
import pytest

from regime_tta import cli
from regime_tta.datagen import ScenarioSpec, generate, load_csv
from regime_tta.forecast import TrainingDivergedError
from regime_tta.harness import METRIC_NAMES, runner
from regime_tta.policies import AdaptationAbortedError
from regime_tta.policies.adaptive import AdaptivePolicy

GRID = ["--models", "dlinear", "--horizons", "8", "--no-progress"]


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"training": {"epochs": 1}}))
    return str(path)


@pytest.fixture(autouse=True)
def thread_count(monkeypatch):
    monkeypatch.setenv("RG_THREADS", "2")


def bench(out, config_file, *extra, length="1500", seeds="1"):
    return cli.main(
        [
            "bench",
            "--datasets",
            "synth_recurring",
            "--length",
            length,
            "--seeds",
            seeds,
            "--out",
            str(out),
            "--config",
            config_file,
            *GRID,
            *extra,
        ]
    )


def test_no_command_is_usage_error(capsys):
    assert cli.main([]) == 1
    assert "usage" in capsys.readouterr().err


def test_unknown_policy_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as exc_info:
        cli.main(
            ["bench", "--policies", "sgd", "--datasets", "synth_stable", "--out", str(tmp_path)]
        )
    assert exc_info.value.code == 1


def test_unknown_dataset_is_usage_error(tmp_path, config_file):
    code = cli.main(
        [
            "bench",
            "--datasets",
            "synth_sawtooth",
            "--out",
            str(tmp_path / "out"),
            "--config",
            config_file,
        ]
    )
    assert code == 1
    assert not (tmp_path / "out").exists()


def test_invalid_thread_count(tmp_path, config_file, monkeypatch):
    monkeypatch.setenv("RG_THREADS", "zero")
    assert bench(tmp_path, config_file) == 1


def test_invalid_config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"gama": 0.1}))
    assert bench(tmp_path / "out", str(path)) == 1


def test_retrain_needs_dlinear(tmp_path, config_file):
    code = cli.main(
        [
            "bench",
            "--policies",
            "retrain",
            "--models",
            "gru_small",
            "--datasets",
            "synth_stable",
            "--out",
            str(tmp_path),
            "--config",
            config_file,
        ]
    )
    assert code == 1


def test_bench_outputs(tmp_path, config_file):
    out = tmp_path / "run"
    assert bench(out, config_file, "--policies", "tta", "rgtta", seeds="3") == 0

    records = pd.read_csv(out / "records.csv")
    assert len(records) == 6
    assert sorted(records["policy"].unique()) == ["rgtta", "tta"]
    assert sorted(records["seed"].unique()) == [0, 1, 2]

    with open(out / "run_log.jsonl") as f:
        lines = [json.loads(line) for line in f]
    assert len(lines) == 6
    assert all("lr_used" in line for line in lines)

    summary = pd.read_csv(out / "summary.csv")
    assert len(summary) == 2
    assert set(METRIC_NAMES) <= set(summary.columns)
    assert (summary["n_seeds"] == 3).all()

    with open(out / "manifest.json") as f:
        manifest = json.load(f)
    assert manifest["seeds"] == [0, 1, 2]
    assert manifest["training"]["epochs"] == 1
    assert manifest["policies"]["rgtta"]["gamma"] == 0.67
    assert manifest["datasets"][0]["name"] == "synth_recurring"
    assert len(manifest["datasets"][0]["sha256"]) == 64
    assert manifest["aborted"] == []
    assert "numpy" in manifest["versions"]


def test_bench_is_deterministic(tmp_path, config_file):
    assert bench(tmp_path / "a", config_file, "--policies", "rgtta_ewc") == 0
    assert bench(tmp_path / "b", config_file, "--policies", "rgtta_ewc") == 0

    assert (tmp_path / "a" / "summary.csv").read_bytes() == (
        tmp_path / "b" / "summary.csv"
    ).read_bytes()


def test_config_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"gamma": 0.0, "training": {"epochs": 1}}))
    assert bench(tmp_path / "out", str(path), "--policies", "rgtta") == 0

    with open(tmp_path / "out" / "run_log.jsonl") as f:
        row = json.loads(f.readline())
    assert row["mean_lr"] == pytest.approx(3e-4)


def test_aborted_run_exit_code(tmp_path, config_file, monkeypatch):
    def failing(self, live, batch):
        raise AdaptationAbortedError("boom", {"batch_index": batch.index})

    monkeypatch.setattr(AdaptivePolicy, "adapt_batch", failing)
    out = tmp_path / "out"
    assert bench(out, config_file, "--policies", "tta") == 2

    with open(out / "manifest.json") as f:
        manifest = json.load(f)
    assert manifest["aborted"][0]["policy"] == "tta"
    assert manifest["aborted"][0]["completed_batches"] == 0


def test_diverging_training_exit_code(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"training": {"epochs": 1, "lr": float("inf")}}))
    out = tmp_path / "out"

    assert bench(out, str(path), "--policies", "tta", "rgtta") == 2

    with open(out / "manifest.json") as f:
        manifest = json.load(f)
    assert manifest["n_records"] == 0
    assert [a["policy"] for a in manifest["aborted"]] == ["rgtta", "tta"]
    for a in manifest["aborted"]:
        assert a["stage"] == "pretrain"
        assert a["cause"] == "TrainingDivergedError"
        assert a["completed_batches"] == 0


def test_failed_pretrain_keeps_other_runs(tmp_path, config_file, monkeypatch):
    original = runner.pretrain

    def failing(dataset, spec, horizon, seed, *args):
        if seed == 1:
            raise TrainingDivergedError("Non-finite loss after epoch 0")
        return original(dataset, spec, horizon, seed, *args)

    monkeypatch.setattr(runner, "pretrain", failing)
    out = tmp_path / "out"
    assert bench(out, config_file, "--policies", "tta", seeds="2") == 2

    records = pd.read_csv(out / "records.csv")
    assert set(records["seed"]) == {0}
    with open(out / "manifest.json") as f:
        manifest = json.load(f)
    assert len(manifest["aborted"]) == 1
    assert manifest["aborted"][0]["seed"] == 1
    assert manifest["aborted"][0]["stage"] == "pretrain"


def ablate(out, config_file, param, *values, length="1500"):
    return cli.main(
        [
            "ablate",
            "--param",
            *param,
            "--values",
            *values,
            "--datasets",
            "synth_recurring",
            "--length",
            length,
            "--seeds",
            "1",
            "--out",
            str(out),
            "--config",
            config_file,
            *GRID,
        ]
    )


def test_gamma_sweep(tmp_path, config_file):
    assert ablate(tmp_path, config_file, ["gamma"], "0", "0.67") == 0
    table = pd.read_csv(tmp_path / "ablation.csv")

    assert list(table["parameter"]) == ["gamma", "gamma"]
    assert list(table["value"]) == [0.0, 0.67]
    assert table.loc[1, "delta_mse"] == 0.0
    assert table.loc[0, "delta_mse"] == pytest.approx(
        table.loc[0, "mean_mse"] - table.loc[1, "mean_mse"]
    )


def test_early_stop_sweep(tmp_path, config_file):
    assert ablate(tmp_path, config_file, ["early_stop"], "fixed20", "loss_driven") == 0
    table = pd.read_csv(tmp_path / "ablation.csv")
    assert list(table["value"]) == ["fixed20", "loss_driven"]


def test_memory_cap_sweep_eviction_traces(tmp_path, config_file):
    assert ablate(tmp_path, config_file, ["memory_cap"], "1", "5", length="3000") == 0

    with open(tmp_path / "run_log.jsonl") as f:
        rows = [json.loads(line) for line in f]
    evicted = {
        value: [r["evicted_batch"] for r in rows if r["value"] == value] for value in ("1", "5")
    }
    assert evicted["1"] == [None, 1, 2]
    assert evicted["5"] == [None, None, None]


def test_ablate_rejects_several_params(tmp_path, config_file):
    assert ablate(tmp_path, config_file, ["gamma", "loss_gate"], "0.5") == 1


def test_ablate_rejects_bad_values(tmp_path, config_file):
    assert ablate(tmp_path, config_file, ["early_stop"], "sometimes") == 1
    assert ablate(tmp_path, config_file, ["memory_cap"], "1.5") == 1


def test_ablation_table_without_default():
    table = cli.ablation_table("gamma", [0.1, 0.2], {"0.1": 1.0, "0.2": 2.0})
    assert table["delta_mse"].isna().all()


def test_gen_data(tmp_path):
    code = cli.main(
        [
            "gen-data",
            "--scenarios",
            "synth_stable",
            "synth_recurring",
            "--length",
            "1500",
            "--out",
            str(tmp_path),
        ]
    )
    assert code == 0

    loaded = load_csv(tmp_path / "synth_recurring.csv")
    expected = generate(ScenarioSpec("recurring", length=1500, seed=0))
    np.testing.assert_allclose(loaded.values, expected.values, rtol=1e-12)
    assert (tmp_path / "synth_stable.csv").exists()


def test_stats(tmp_path):
    rng = np.random.default_rng(0)
    rows = []
    for i in range(8):
        base = rng.uniform(1.0, 2.0)
        for policy, factor in (("rgtta", 0.8), ("tta", 1.0), ("ewc", 1.1)):
            row = dict.fromkeys(METRIC_NAMES, 0.0)
            row.update(
                model="dlinear", dataset=f"d{i}", horizon=96, policy=policy, mse=base * factor
            )
            rows.append(row)
    summary = tmp_path / "summary.csv"
    pd.DataFrame(rows).to_csv(summary, index=False)

    out = tmp_path / "stats"
    assert cli.main(["stats", "--summary", str(summary), "--out", str(out)]) == 0

    pairwise = pd.read_csv(out / "pairwise.csv")
    assert list(pairwise["policy"]) == ["rgtta"]
    assert pairwise.loc[0, "p_value"] == pytest.approx(1 / 256)

    wins = pd.read_csv(out / "win_counts.csv")
    assert wins.loc[0, "policy"] == "rgtta"
    assert wins.loc[0, "wins"] == 8

    with open(out / "friedman.json") as f:
        report = json.load(f)
    assert report["k"] == 3
    assert report["n"] == 8
    assert report["chi2"] == pytest.approx(16.0)
    assert report["avg_ranks"] == {"ewc": 3.0, "rgtta": 1.0, "tta": 2.0}

    cd = pd.read_csv(out / "cd_diagram.csv")
    assert list(cd["policy"]) == ["rgtta", "tta", "ewc"]


def test_stats_missing_summary(tmp_path):
    assert cli.main(["stats", "--summary", str(tmp_path / "nope.csv"), "--out", str(tmp_path)]) == 1
