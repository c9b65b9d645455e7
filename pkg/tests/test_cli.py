"""End-to-end tests of the command-line verbs, run in-process."""

import csv
import json

import pytest

from uwmmse.cli import main
from uwmmse.scenario import SystemConfig, load_dataset, save_config

FAST_TRAIN = ["--batch-size", "4", "--max-iters", "2", "--val-every", "1",
              "--patience", "2"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train once; later tests reuse the dataset and model."""
    root = tmp_path_factory.mktemp("cli")
    ds = str(root / "ds.bin")
    out = str(root / "run")
    rc = main(["gen-data", "--nt", "4", "--k", "2", "--snr-db", "10",
               "--train", "4", "--val", "2", "--test", "3", "--seed", "5",
               "--out", ds])
    assert rc == 0
    rc = main(["train", "--data", ds, "--layers", "1", "--variant",
               "improved", "--seed", "0", "--out", out] + FAST_TRAIN)
    assert rc == 0
    return root, ds, str(root / "run" / "model.bin")


def test_gen_data_and_train_outputs(pipeline):
    root, ds, model = pipeline
    dataset = load_dataset(ds)
    assert dataset.config.Nt == 4 and dataset.config.K == 2
    assert len(dataset.samples) == 9
    with open(root / "run" / "train_report.json") as f:
        report = json.load(f)
    assert report["iterations"] <= 2
    assert len(report["val_trace"]) >= 1


def test_eval_writes_report(pipeline, tmp_path, capsys):
    _, ds, model = pipeline
    out = str(tmp_path / "eval.json")
    rc = main(["eval", "--model", model, "--data", ds, "--restarts", "1",
               "--out", out])
    assert rc == 0
    assert "test ratio" in capsys.readouterr().out
    with open(out) as f:
        report = json.load(f)
    assert report["samples"] == 3
    assert report["ratio"] > 0


def test_eval_rejects_mismatched_dataset(pipeline, tmp_path, capsys):
    _, _, model = pipeline
    other = str(tmp_path / "other.bin")
    assert main(["gen-data", "--nt", "6", "--k", "2", "--snr-db", "10",
                 "--train", "1", "--val", "1", "--test", "1",
                 "--out", other]) == 0
    rc = main(["eval", "--model", model, "--data", other, "--restarts", "1"])
    assert rc == 2
    assert "does not match" in capsys.readouterr().err


def test_gen_data_config_file_overrides_flags(tmp_path):
    cfg_path = str(tmp_path / "cfg.json")
    save_config(cfg_path, SystemConfig.from_snr(Nt=6, Nr=2, d=1, K=2,
                                                snr_db=5.0))
    out = str(tmp_path / "d.bin")
    rc = main(["gen-data", "--config", cfg_path, "--nt", "4", "--train", "1",
               "--val", "1", "--test", "1", "--out", out])
    assert rc == 0
    assert load_dataset(out).config.Nt == 6  # file wins over --nt


def test_cdf_csv(pipeline, tmp_path):
    _, ds, model = pipeline
    out = str(tmp_path / "cdf.csv")
    rc = main(["cdf", "--model", model, "--data", ds, "--restarts", "1",
               "--out", out])
    assert rc == 0
    with open(out, newline="") as f:
        lines = list(csv.reader(f))
    assert lines[0] == ["schema", "method", "rate_bits", "quantile"]
    assert len(lines) == 1 + 2 * 3  # two methods, three test samples


def test_transfer_fewer_users(pipeline, tmp_path, capsys):
    _, _, model = pipeline
    out = str(tmp_path / "transfer.json")
    rc = main(["transfer", "--model", model, "--k", "1", "--samples", "2",
               "--restarts", "1", "--out", out])
    assert rc == 0
    assert "transfer_Nt4_K2_to_Nt4_K1" in capsys.readouterr().out
    with open(out) as f:
        row = json.load(f)
    assert row["n_test"] == 2
    assert row["ratio"] > 0


def test_time_verb(tmp_path, capsys):
    out = str(tmp_path / "time.json")
    rc = main(["time", "--nt", "4", "--k", "2", "--snr-db", "10", "--layers",
               "1", "--repetitions", "10", "--out", out])
    assert rc == 0
    assert "speedup" in capsys.readouterr().out
    with open(out) as f:
        stats = json.load(f)
    assert stats["net_seconds"] > 0 and stats["speedup"] > 0


def test_gradcheck_verb(capsys):
    rc = main(["gradcheck", "--instances", "3", "--layers", "2"])
    assert rc == 0
    assert "3/3 within" in capsys.readouterr().out


def test_bench_verb(tmp_path, capsys):
    spec = {"Nt": [4], "K": [2], "snr_db": [10.0], "L": [1],
            "variants": ["improved"], "n_train": 4, "n_val": 2, "n_test": 2,
            "restarts": 1, "train": {"batch_size": 4, "max_iters": 2,
                                     "val_every": 1, "patience": 2}}
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    out = str(tmp_path / "bench_out")
    rc = main(["bench", "--config", str(spec_path), "--out", out,
               "--seed", "0"])
    assert rc == 0
    assert "1 rows" in capsys.readouterr().out
    with open(tmp_path / "bench_out" / "results.csv", newline="") as f:
        assert len(list(csv.reader(f))) == 2

    spec["L"] = []
    spec_path.write_text(json.dumps(spec))
    rc = main(["bench", "--config", str(spec_path), "--out",
               str(tmp_path / "empty_out")])
    assert rc == 1
    capsys.readouterr()


def test_missing_required_flag_exits():
    with pytest.raises(SystemExit):
        main(["train"])
    with pytest.raises(SystemExit):
        main(["no-such-verb"])
