import csv
import json

import numpy as np
import pytest

from denseshift import modelfile
from denseshift.cli import EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_OK, main
from denseshift.config import RunConfig
from denseshift.engine import Network
from denseshift.engine import spec as S
from denseshift.engine.models import lenet, mlp, with_auto_bias
from denseshift.errors import ConfigError, FormatError
from denseshift.run import load_data, train_run

BLOBS = ["--dataset", "blobs", "--arch", "mlp", "--epochs", "3", "--lr", "0.05", "--batch-size", "16",
         "--seed", "42"]


def run_cli(capsys, *argv):
    rc = main([str(a) for a in argv])
    out = capsys.readouterr()
    return rc, out.out, out.err


def summary_fields(line):
    return dict(kv.split("=", 1) for kv in line.split())


# -- config -----------------------------------------------------------------

def test_print_config_round_trips(capsys, tmp_path):
    rc, out, _ = run_cli(capsys, "train", "--print-config", *BLOBS, "--bits", "2", "--init", "kaiming")
    assert rc == EXIT_OK
    cfg = RunConfig.from_dict(json.loads(out))
    assert cfg.model.bits == 2 and cfg.init.strategy == "kaiming" and cfg.train.seed == 42
    p = tmp_path / "c.json"
    p.write_text(out)
    rc, again, _ = run_cli(capsys, "train", "--print-config", "--config", p)
    assert rc == EXIT_OK and again == out
    assert RunConfig.load(p) == cfg


def test_print_config_shows_every_default(capsys):
    _, out, _ = run_cli(capsys, "train", "--print-config")
    d = json.loads(out)
    assert d["train"]["base_lr"] == 1e-3 and d["train"]["epochs"] == 200
    assert d["init"] == {"strategy": "low_variance", "sigma": 1e-3}
    assert set(d) == {"train", "model", "data", "init", "metrics", "output_dir"}


def test_config_rejects_unknown_and_bad_values(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"trian": {}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"train": {"lr": 0.1}})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"model": {"weight": "ternary"}})
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(p)


# -- model file -------------------------------------------------------------

@pytest.mark.parametrize("weight", [S.dense_shift(3), S.quantizer("sign_shift", 3),
                                    S.quantizer("symmetric_pot", 2), S.FULL_PRECISION])
def test_modelfile_round_trip(weight):
    net = Network(with_auto_bias(lenet(weight)), seed=3)
    buf = modelfile.dumps(net, {"k": 1})
    back, meta = modelfile.loads(buf)
    assert meta == {"k": 1}
    for i in range(len(net.spec.layers)):
        if net.spec.layers[i].kind in S.WEIGHTED:
            assert np.array_equal(back.weight(i), net.weight(i))
    assert modelfile.dumps(back, {"k": 1}) == buf


def test_modelfile_layout_and_corruption(tmp_path):
    net = Network(with_auto_bias(mlp((4, 3), S.dense_shift(2))), seed=0)
    buf = modelfile.dumps(net)
    assert buf[:4] == b"DSNM"
    p = tmp_path / "m.dsnm"
    digest = modelfile.save(p, net)
    assert modelfile.file_checksum(p) == digest == buf[-8:].hex()
    bad = bytearray(buf)
    bad[20] ^= 1
    with pytest.raises(FormatError, match="checksum"):
        modelfile.loads(bytes(bad))
    with pytest.raises(FormatError):
        modelfile.loads(buf[:10])
    with pytest.raises(FormatError):
        modelfile.load(tmp_path / "missing.dsnm")


# -- train / eval -----------------------------------------------------------

def test_train_writes_artifacts_and_eval_reproduces(capsys, tmp_path):
    out_dir = tmp_path / "run"
    rc, out, _ = run_cli(capsys, "train", *BLOBS, "--output-dir", out_dir)
    assert rc == EXIT_OK
    f = summary_fields(out.strip())
    for name in ("model.dsnm", "train_log.csv", "cosine.csv", "trace.csv", "summary.json", "config.json"):
        assert (out_dir / name).is_file()
    assert set(f["cosine"].split(",")) and f["cosine"] != "-"
    rc, out2, _ = run_cli(capsys, "eval", out_dir / "model.dsnm")
    assert rc == EXIT_OK
    assert summary_fields(out2)["accuracy"] == f["accuracy"]
    with open(out_dir / "confusion.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 4 and sum(int(v) for r in rows[1:] for v in r[1:]) == 150


def test_same_seed_same_checksum(capsys, tmp_path):
    sums = []
    for k in range(2):
        rc, out, _ = run_cli(capsys, "train", *BLOBS, "--output-dir", tmp_path / f"r{k}")
        assert rc == EXIT_OK
        sums.append(summary_fields(out)["checksum"])
    assert sums[0] == sums[1]
    assert modelfile.file_checksum(tmp_path / "r0" / "model.dsnm") == sums[0]


def test_epochs_zero_keeps_initialization(tmp_path):
    cfg = RunConfig.from_dict({"train": {"epochs": 0, "seed": 5}, "data": {"dataset": "blobs"},
                               "model": {"arch": "mlp"}})
    res = train_run(cfg, tmp_path)
    train, test = load_data("blobs", seed=5)
    fresh = Network(cfg.network_spec(train.images.shape[1:], 3), seed=5, init="low_variance")
    for i in fresh.spec.quantized_layers():
        assert np.array_equal(res.net.weight(i), fresh.weight(i))
    untrained = float((fresh.predict(test.images).argmax(1) == test.labels).mean())
    assert res.accuracy == untrained


def test_eval_errors(capsys, tmp_path):
    rc, _, err = run_cli(capsys, "train", *BLOBS, "--output-dir", tmp_path)
    model = tmp_path / "model.dsnm"
    rc, _, err = run_cli(capsys, "eval", model, "--limit", "0")
    assert rc == EXIT_DATA and "empty" in err
    rc, _, err = run_cli(capsys, "eval", model, "--dataset", "mnist", "--data-root", tmp_path / "nowhere")
    assert rc == EXIT_DATA
    rc, _, _ = run_cli(capsys, "eval", tmp_path / "missing.dsnm")
    assert rc == EXIT_DATA


def test_missing_dataset_exit_code(capsys, tmp_path):
    rc, _, err = run_cli(capsys, "train", "--dataset", "mnist", "--data-root", tmp_path / "none",
                         "--epochs", "1", "--output-dir", tmp_path / "o")
    assert rc == EXIT_DATA and err.startswith("error:")


def test_bad_config_exit_code(capsys, tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{"model": {"arch": "resnet"}}')
    rc, _, err = run_cli(capsys, "train", "--config", p)
    assert rc == EXIT_CONFIG and "arch" in err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_exit_code(capsys, tmp_path):
    rc, _, err = run_cli(capsys, "train", *BLOBS[:-2], "--seed", "1", "--lr", "1e30", "--weight", "full_precision",
                         "--output-dir", tmp_path)
    assert rc == EXIT_NUMERIC and "non-finite" in err


# -- export-traces ----------------------------------------------------------

def test_export_traces_fresh_run_header_only(capsys, tmp_path):
    run_cli(capsys, "train", *BLOBS[:-6], "--epochs", "0", "--output-dir", tmp_path)
    rc, out, _ = run_cli(capsys, "export-traces", tmp_path)
    assert rc == EXIT_OK
    exp = tmp_path / "export"
    for name in ("freezing_cosine.csv", "latent_traces.csv", "training_curve.csv"):
        assert len((exp / name).read_text().splitlines()) == 1


def test_export_traces_rows_and_replay(capsys, tmp_path):
    run_cli(capsys, "train", *BLOBS, "--epochs", "4", "--output-dir", tmp_path)
    rc, out, _ = run_cli(capsys, "export-traces", tmp_path, "--out", tmp_path / "x")
    assert rc == EXIT_OK
    rep = json.loads(out)
    assert rep["replay_ok"] is True and rep["trace_rows"] > 0
    spec = S.NetworkSpec.from_dict(json.loads((tmp_path / "network.json").read_text()))
    assert rep["cosine_rows"] == 4 * len(spec.quantized_layers())
    with open(tmp_path / "x" / "freezing_cosine.csv") as fh:
        assert next(csv.reader(fh)) == ["layer", "epoch", "cosine"]


def test_export_traces_missing_logs(capsys, tmp_path):
    rc, _, err = run_cli(capsys, "export-traces", tmp_path)
    assert rc == EXIT_DATA and "missing" in err


# -- convert / bench --------------------------------------------------------

def test_convert_sign_shift_model(capsys, tmp_path):
    run_cli(capsys, "train", *BLOBS, "--weight", "sign_shift", "--output-dir", tmp_path)
    rc, out, _ = run_cli(capsys, "convert", tmp_path / "model.dsnm", tmp_path / "dense.dsnm")
    assert rc == EXIT_OK
    rep = json.loads(out)
    assert rep["pass"] and rep["zero_free"] and rep["max_abs_diff"] <= 1e-5
    net, meta = modelfile.load(tmp_path / "dense.dsnm")
    assert meta["equivalence"]["pass"]
    rc, out2, _ = run_cli(capsys, "eval", tmp_path / "dense.dsnm")
    rc, out1, _ = run_cli(capsys, "eval", tmp_path / "model.dsnm")
    assert summary_fields(out1)["accuracy"] == summary_fields(out2)["accuracy"]


def test_convert_rejects_full_precision(capsys, tmp_path):
    run_cli(capsys, "train", *BLOBS, "--weight", "full_precision", "--output-dir", tmp_path)
    rc, _, err = run_cli(capsys, "convert", tmp_path / "model.dsnm", tmp_path / "o.dsnm")
    assert rc == EXIT_CONFIG and "shift" in err


def test_bench_cli(capsys):
    rc, out, _ = run_cli(capsys, "bench", "--length", "256", "--trials", "30", "--warmup", "2")
    assert rc == EXIT_OK
    rep = json.loads(out)
    assert rep["shift"]["checksum"] == rep["denseshift"]["checksum"]
    assert rep["ratio"] > 0
    rc, _, _ = run_cli(capsys, "bench", "--trials", "5")
    assert rc == EXIT_CONFIG


def test_sweep(capsys, tmp_path):
    rc, out, _ = run_cli(capsys, "sweep", *BLOBS, "--inits", "kaiming,low_variance", "--epoch-list", "1",
                         "--output-dir", tmp_path)
    assert rc == EXIT_OK
    with open(tmp_path / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["init"] for r in rows] == ["kaiming", "low_variance"]


@pytest.mark.slow
def test_packed_kernel_agrees_with_float(mnist_dir, tmp_path):
    """Top-1 agreement of the integer kernel path under 8-bit activations."""
    from denseshift.run import evaluate

    cfg = RunConfig.from_dict({"train": {"epochs": 1, "base_lr": 0.05, "seed": 0},
                               "data": {"dataset": "mnist", "root": str(mnist_dir), "train_limit": 10000,
                                        "test_limit": 2000}})
    res = train_run(cfg)
    _, test = load_data("mnist", str(mnist_dir), test_limit=2000)
    net, _ = modelfile.loads(modelfile.dumps(res.net))
    _, pf, _ = evaluate(net, test, "float")
    _, pp, _ = evaluate(net, test, "packed")
    assert (pf == pp).mean() >= 0.99
