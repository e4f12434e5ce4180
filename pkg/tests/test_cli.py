"""Dataset ingestion, experiment runner, and CLI surface."""

import json

import numpy as np
import pytest

from claccel.cli import cycles_table, main, merge_config, run_experiment
from claccel.datasets import gen_synthetic, load_cifar10
from claccel.errors import DataFormatError, SimulatorError
from claccel.report import CSV_COLUMNS

TINY_CONFIG = {
    "seed": 11,
    "model": {"rows": 8, "cols": 8, "channels": 3, "conv_filters": [8],
              "init_range": 0.25},
    "cl": {"n_tasks": 2, "classes_per_task": 2, "epochs": 1, "lr": 0.0625},
    "dataset": {"kind": "synthetic", "n_per_class": 4, "eval_per_class": 3},
}


def write_cifar(path, records):
    blob = b"".join(bytes([label]) + bytes(pixels) for label, pixels in records)
    path.write_bytes(blob)
    return path


class TestCifarLoader:
    def test_two_records(self, tmp_path):
        f = write_cifar(tmp_path / "train.bin",
                        [(3, [0] * 3072), (9, [255] * 3072)])
        ds = load_cifar10(f)
        assert len(ds.samples) == 2
        assert [lbl for _, lbl in ds.samples] == [3, 9]

    def test_pixel_255_encodes_to_one(self, tmp_path):
        f = write_cifar(tmp_path / "train.bin", [(0, [255] * 3072)])
        fm, _ = load_cifar10(f).samples[0]
        assert fm.data[0] == 0x1000

    def test_incomplete_record_names_offset(self, tmp_path):
        f = tmp_path / "short.bin"
        f.write_bytes(bytes(3072))
        with pytest.raises(DataFormatError, match="offset 0"):
            load_cifar10(f)
        f2 = tmp_path / "short2.bin"
        f2.write_bytes(bytes(3073 + 100))
        with pytest.raises(DataFormatError, match="offset 3073"):
            load_cifar10(f2)

    def test_bad_label(self, tmp_path):
        f = write_cifar(tmp_path / "bad.bin", [(10, [0] * 3072)])
        with pytest.raises(DataFormatError, match="label 10"):
            load_cifar10(f)


class TestSynthetic:
    def test_seed_reproducible(self):
        a = gen_synthetic(3, 4, 8, 8, 3, seed=5)
        b = gen_synthetic(3, 4, 8, 8, 3, seed=5)
        for (fa, la), (fb, lb) in zip(a.samples, b.samples):
            assert la == lb
            assert np.array_equal(fa.data, fb.data)

    def test_channels_padded_at_datapath_entry(self):
        from claccel.tensors import pad_channels
        ds = gen_synthetic(2, 1, 6, 6, 3, seed=0)
        fm, _ = ds.samples[0]
        assert fm.channels == 3
        assert pad_channels(fm).channels == 8

    def test_values_in_unit_range(self):
        ds = gen_synthetic(4, 2, 8, 8, 3, seed=1)
        for fm, _ in ds.samples:
            vals = fm.to_real()
            assert vals.min() >= 0.0 and vals.max() <= 1.0


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(SimulatorError):
            merge_config({"model": {"bogus": 1}})

    def test_defaults_fill_in(self):
        cfg = merge_config({})
        assert cfg["device"]["clock_period_ns"] == 3.87
        assert cfg["cl"]["n_tasks"] == 5


class TestRunExperiment:
    def test_report_schema_and_outputs(self, tmp_path):
        rep = run_experiment(TINY_CONFIG, tmp_path)
        for key in ("schema_version", "generated_at", "backend", "seed",
                    "cycle_model", "clock_period_ns", "model", "cl",
                    "dataset", "tasks", "cycles", "wall_time"):
            assert key in rep
        assert (tmp_path / "report.json").exists()
        assert (tmp_path / "cycles.csv").exists()
        assert (tmp_path / "weights.bin").exists()
        header = (tmp_path / "cycles.csv").read_text().splitlines()[0]
        assert header == ",".join(CSV_COLUMNS)

    def test_wall_time_arithmetic(self, tmp_path):
        rep = run_experiment(TINY_CONFIG, tmp_path)
        wt = rep["wall_time"]
        assert wt["seconds_estimate"] == pytest.approx(
            wt["total_cycles"] * wt["clock_period_ns"] * 1e-9)
        assert "estimate" in wt["note"]

    def test_accuracy_fields_present(self, tmp_path):
        rep = run_experiment(TINY_CONFIG, tmp_path)
        assert len(rep["tasks"]) == 2
        for entry in rep["tasks"]:
            assert entry["accuracy"] is not None
            assert entry["per_task_accuracy"] is not None

    def test_cifar_without_eval_reports_nulls(self, tmp_path):
        recs = []
        rng = np.random.default_rng(0)
        for i in range(40):
            recs.append((i % 10, list(rng.integers(0, 256, 3072))))
        train = write_cifar(tmp_path / "train.bin", recs)
        cfg = {
            "seed": 1,
            "cl": {"n_tasks": 5, "classes_per_task": 2, "epochs": 1,
                   "lr": 0.0625},
            "dataset": {"kind": "cifar10", "path": str(train)},
        }
        rep = run_experiment(cfg, tmp_path / "out")
        assert all(t["accuracy"] is None for t in rep["tasks"])


class TestCommandLine:
    def test_run_roundtrip(self, tmp_path, capsys):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps(TINY_CONFIG))
        rc = main(["run", "--config", str(cfg_file),
                   "--out-dir", str(tmp_path / "out"), "--seed", "4"])
        assert rc == 0
        rep = json.loads((tmp_path / "out" / "report.json").read_text())
        assert rep["seed"] == 4

    def test_missing_config_exits_2(self, capsys):
        assert main(["run", "--config", "/nonexistent.json"]) == 2

    def test_bad_dataset_exits_1(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps(
            {"dataset": {"kind": "cifar10", "path": None}}))
        assert main(["run", "--config", str(cfg_file),
                     "--out-dir", str(tmp_path / "out")]) == 1

    def test_cycles_table(self, capsys):
        assert main(["cycles"]) == 0
        out = capsys.readouterr().out
        assert "8192" in out
        assert "1280" in out
        assert "1821" in out

    def test_check_suite_passes(self, capsys):
        assert main(["check"]) == 0
        out = capsys.readouterr().out
        assert "PASS" in out
        assert "FAIL" not in out

    def test_cycle_model_flag(self, tmp_path):
        cfg_file = tmp_path / "cfg.json"
        cfg_file.write_text(json.dumps(TINY_CONFIG))
        rc = main(["run", "--config", str(cfg_file),
                   "--out-dir", str(tmp_path / "out"),
                   "--cycle-model", "formula"])
        assert rc == 0
        rep = json.loads((tmp_path / "out" / "report.json").read_text())
        assert rep["cycle_model"] == "formula"
