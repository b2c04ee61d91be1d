import json

import numpy as np
import pytest

from parasnn.cli import load_dataset, main
from parasnn.modelio import load_model
from parasnn.synth import make_synth_mlp


def _read_report(path):
    return [json.loads(line) for line in path.read_text().splitlines()]


def test_selftest_exits_zero():
    assert main(["selftest", "--seed", "0"]) == 0


def test_selftest_requires_seed(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["selftest"])
    assert exc.value.code == 2


def test_unknown_flag_exits_two():
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--frobnicate"])
    assert exc.value.code == 2


def test_make_convert_eval_flow(tmp_path):
    ann = tmp_path / "ann.json"
    snn = tmp_path / "snn.json"
    report = tmp_path / "eval.jsonl"

    assert main(["make-synth-model", "--kind", "mlp", "--seed", "3",
                 "--out", str(ann)]) == 0
    assert main(["convert", "--case", "qcfs-eq", "--model", str(ann),
                 "--T", "8", "--out", str(snn)]) == 0
    assert main(["eval", "--model", str(ann), "--snn", str(snn),
                 "--data", "synth:seed=1,n=128", "--backend", "parallel-fast",
                 "--report", str(report)]) == 0

    (record,) = _read_report(report)
    assert record["command"] == "eval"
    assert record["n"] == 128
    assert record["agreement"] >= 0.99  # equal up to staircase-boundary samples


def test_convert_resolution_must_match_for_eq_case(tmp_path, capsys):
    ann = tmp_path / "ann.json"
    main(["make-synth-model", "--seed", "4", "--levels", "8", "--out", str(ann)])
    code = main(["convert", "--case", "qcfs-eq", "--model", str(ann),
                 "--T", "4", "--out", str(tmp_path / "snn.json")])
    assert code == 1
    assert "resolution" in capsys.readouterr().err


def test_eval_serial_backend(tmp_path):
    ann = tmp_path / "ann.json"
    snn = tmp_path / "snn.json"
    main(["make-synth-model", "--seed", "5", "--depth", "2", "--out", str(ann)])
    main(["convert", "--case", "qcfs-eq", "--model", str(ann), "--T", "8",
          "--out", str(snn)])
    report = tmp_path / "serial.jsonl"
    assert main(["eval", "--snn", str(snn), "--data", "synth:seed=2,n=32",
                 "--backend", "serial", "--report", str(report)]) == 0
    (record,) = _read_report(report)
    assert 0.0 <= record["top1_accuracy"] <= 1.0


def test_eval_step_mismatch_is_an_error(tmp_path, capsys):
    ann = tmp_path / "ann.json"
    snn = tmp_path / "snn.json"
    main(["make-synth-model", "--seed", "6", "--depth", "2", "--out", str(ann)])
    main(["convert", "--case", "qcfs-eq", "--model", str(ann), "--T", "8",
          "--out", str(snn)])
    assert main(["eval", "--snn", str(snn), "--data", "synth:seed=2,n=8",
                 "--T", "4"]) == 1
    assert "steps" in capsys.readouterr().err


def test_bench_rows_and_reproducible_reports(tmp_path):
    ann = tmp_path / "ann.json"
    main(["make-synth-model", "--seed", "7", "--depth", "2", "--width", "8",
          "--out", str(ann)])
    r1 = tmp_path / "bench1.jsonl"
    r2 = tmp_path / "bench2.jsonl"
    args = ["bench", "--model", str(ann), "--T-list", "1,2,4", "--repeats", "1",
            "--warmup", "0", "--batch", "4"]
    assert main(args + ["--report", str(r1)]) == 0
    assert main(args + ["--report", str(r2)]) == 0

    rows1, rows2 = _read_report(r1), _read_report(r2)
    assert [r["T"] for r in rows1] == [1, 2, 4]
    for a, b in zip(rows1, rows2):
        a = {k: v for k, v in a.items() if not k.endswith("_time") and k != "ratio"}
        b = {k: v for k, v in b.items() if not k.endswith("_time") and k != "ratio"}
        assert a == b


def test_convert_rejects_snn_input(tmp_path, capsys):
    ann = tmp_path / "ann.json"
    snn = tmp_path / "snn.json"
    main(["make-synth-model", "--seed", "8", "--depth", "2", "--out", str(ann)])
    main(["convert", "--case", "qcfs-eq", "--model", str(ann), "--T", "8",
          "--out", str(snn)])
    assert main(["convert", "--case", "qcfs-eq", "--model", str(snn), "--T", "8",
                 "--out", str(tmp_path / "again.json")]) == 1
    assert "unconverted" in capsys.readouterr().err


def test_relu_training_free_conversion_via_cli(tmp_path):
    ann = tmp_path / "relu.json"
    snn = tmp_path / "snn.json"
    assert main(["make-synth-model", "--seed", "9", "--activation", "relu",
                 "--kind", "conv", "--depth", "2", "--width", "8",
                 "--out", str(ann)]) == 0
    assert main(["convert", "--case", "relu", "--model", str(ann), "--T", "16",
                 "--calib-data", "synth:seed=3,n=256", "--out", str(snn)]) == 0
    net = load_model(str(snn))
    assert net.conversion_case == "relu"
    assert net.steps == 16


def test_dataset_spec_parsing(tmp_path):
    g = make_synth_mlp(seed=10, depth=2)
    data = load_dataset("synth:seed=4,n=32,noise=0.5", g)
    assert data.x.shape == (32, 16)
    assert data.source["noise"] == 0.5

    npz = tmp_path / "d.npz"
    np.savez(npz, x=np.zeros((5, 16), dtype=np.float32), labels=np.arange(5))
    loaded = load_dataset(f"npz:{npz}", g)
    assert loaded.x.shape == (5, 16)
    assert loaded.labels.tolist() == [0, 1, 2, 3, 4]

    with pytest.raises(ValueError, match="unknown dataset spec"):
        load_dataset("csv:somewhere", g)
    with pytest.raises(ValueError, match="unknown dataset option"):
        load_dataset("synth:seeds=1", g)


def test_unknown_data_scheme_is_reported(tmp_path, capsys):
    ann = tmp_path / "ann.json"
    main(["make-synth-model", "--seed", "11", "--depth", "2", "--out", str(ann)])
    snn = tmp_path / "snn.json"
    main(["convert", "--case", "qcfs-eq", "--model", str(ann), "--T", "8",
          "--out", str(snn)])
    assert main(["eval", "--snn", str(snn), "--data", "csv:file"]) == 1
    assert "dataset spec" in capsys.readouterr().err
