"""Config validation and the command-line surface."""

import json

import numpy as np
import pytest

from fedconv.cli import main
from fedconv.config import ConfigValidationError, parse_experiment


def base_doc(**over):
    doc = {
        "seed": 0,
        "arch": {
            "stem": "conv", "block": "invert_up", "channels": [4, 4, 4, 4],
            "depths": [1, 1, 1, 1], "kernel_size": 3, "activation": "silu",
            "act_placement": "act2", "norm_placement": "none",
            "norm_kind": "none", "num_classes": 4, "input_resolution": 32,
        },
        "fl": {"method": {"name": "fedavg"}, "rounds": 1, "local_epochs": 1,
               "batch_size": 16},
        "optimizer": {"kind": "adamw", "base_lr": 1e-3, "warmup_epochs": 0,
                      "total_epochs": 4},
        "data": {"source": "synthetic", "num_clients": 2,
                 "partition": {"kind": "iid"}, "num_classes": 4,
                 "per_class": 8, "test_per_class": 4, "resolution": 32},
    }
    for key, value in over.items():
        parts = key.split(".")
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    return doc


def write_config(tmp_path, doc, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


class TestValidation:
    def test_valid_config_parses(self):
        exp = parse_experiment(base_doc())
        assert exp.seed == 0
        assert exp.arch.kernel_size == 3
        assert exp.fl.method.name == "fedavg"
        assert exp.dtype == np.dtype(np.float32)

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigValidationError, match="bogus: unknown key"):
            parse_experiment(base_doc(bogus=1))

    def test_unknown_nested_key_reports_path(self):
        with pytest.raises(ConfigValidationError, match=r"fl\.extra: unknown key"):
            parse_experiment(base_doc(**{"fl.extra": True}))

    def test_multiple_errors_collected(self):
        doc = base_doc()
        doc["seed"] = -1
        doc["fl"]["rounds"] = "three"
        doc["optimizer"]["base_lr"] = 0
        with pytest.raises(ConfigValidationError) as exc:
            parse_experiment(doc)
        text = str(exc.value)
        assert "seed" in text and "fl.rounds" in text and "optimizer.base_lr" in text

    def test_method_params_validated(self):
        with pytest.raises(ConfigValidationError, match="fraction"):
            parse_experiment(base_doc(**{"fl.method": {"name": "share", "fraction": 1.5}}))
        with pytest.raises(ConfigValidationError, match="unknown key"):
            parse_experiment(base_doc(**{"fl.method": {"name": "fedavg", "mu": 0.1}}))

    def test_partition_target_range(self):
        with pytest.raises(ConfigValidationError, match="target_ks"):
            parse_experiment(base_doc(**{"data.partition": {
                "kind": "label_skew", "target_ks": 1.0}}))

    def test_cross_field_class_count(self):
        with pytest.raises(ConfigValidationError, match="num_classes"):
            parse_experiment(base_doc(**{"arch.num_classes": 7}))

    def test_cifar_requires_path(self):
        doc = base_doc()
        doc["data"] = {"source": "cifar10", "num_clients": 2,
                       "partition": {"kind": "iid"}}
        doc["arch"]["num_classes"] = 10
        with pytest.raises(ConfigValidationError, match=r"data\.path"):
            parse_experiment(doc)

    def test_agc_section(self):
        exp = parse_experiment(base_doc(**{"optimizer.agc": {"clipping": 0.02}}))
        assert exp.optimizer.agc.clipping == 0.02
        assert exp.optimizer.agc.eps == 1e-3
        exp = parse_experiment(base_doc())
        assert exp.optimizer.agc is None

    def test_snapshot_excludes_output_dir(self):
        exp = parse_experiment(base_doc(output_dir="somewhere"))
        assert "output_dir" not in exp.raw
        assert exp.output_dir == "somewhere"


class TestCliTrain:
    def test_train_writes_outputs(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_doc())
        code = main(["train", "--config", cfg, "--out", str(tmp_path / "run")])
        assert code == 0
        assert (tmp_path / "run" / "rounds.csv").exists()
        assert (tmp_path / "run" / "report.json").exists()
        assert (tmp_path / "run" / "checkpoint.manifest").exists()
        assert "final_accuracy" in capsys.readouterr().out

    def test_train_seed_override_lands_in_report(self, tmp_path):
        cfg = write_config(tmp_path, base_doc())
        main(["train", "--config", cfg, "--seed", "9",
              "--out", str(tmp_path / "run")])
        doc = json.loads((tmp_path / "run" / "report.json").read_text())
        assert doc["config"]["seed"] == 9

    def test_missing_out_dir_is_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_doc())
        code = main(["train", "--config", cfg])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "\n" not in err.strip("\n")

    def test_invalid_config_single_error_line(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_doc(bogus=1))
        code = main(["train", "--config", cfg, "--out", str(tmp_path / "o")])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "bogus" in err

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["train", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_central_writes_same_shapes(self, tmp_path):
        cfg = write_config(tmp_path, base_doc())
        code = main(["central", "--config", cfg, "--out", str(tmp_path / "c")])
        assert code == 0
        doc = json.loads((tmp_path / "c" / "report.json").read_text())
        assert doc["partition_mean_ks"] is None
        assert len(doc["records"]) == 2  # round 0 + one epoch


class TestCliPartition:
    def test_iid_prints_zero_ks(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_doc())
        code = main(["partition", "--config", cfg, "--out", str(tmp_path / "p")])
        assert code == 0
        out = capsys.readouterr().out
        assert "mean_ks 0.0000" in out
        payload = json.loads((tmp_path / "p" / "partition.json").read_text())
        assert set(payload.keys()) == {"0", "1"}

    def test_label_skew_within_tolerance(self, tmp_path, capsys):
        doc = base_doc(**{
            "data.per_class": 50,
            "data.partition": {"kind": "label_skew", "target_ks": 0.5,
                               "tolerance": 0.05}})
        cfg = write_config(tmp_path, doc)
        code = main(["partition", "--config", cfg, "--out", str(tmp_path / "p")])
        assert code == 0
        ks = float(capsys.readouterr().out.split("mean_ks ")[1])
        assert abs(ks - 0.5) <= 0.05

    def test_unreachable_target_nonzero_exit(self, tmp_path, capsys):
        doc = base_doc(**{
            "data.num_clients": 8,
            "data.partition": {"kind": "label_skew", "target_ks": 0.95,
                               "tolerance": 0.01}})
        cfg = write_config(tmp_path, doc)
        code = main(["partition", "--config", cfg, "--out", str(tmp_path / "p")])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")


class TestCliFlopsSweepEval:
    def test_flops_prints_counts(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_doc())
        assert main(["flops", "--config", cfg]) == 0
        out = capsys.readouterr().out
        assert out.startswith("params ") and "flops " in out

    def test_flops_calibrate(self, tmp_path, capsys):
        from fedconv.models import count_flops
        from fedconv.config import parse_experiment as pe
        doc = base_doc(**{"arch.depths": [2, 2, 6, 2]})
        target = count_flops(pe(doc).arch)
        cfg = write_config(tmp_path, base_doc())
        assert main(["flops", "--config", cfg, "--calibrate", str(target),
                     "--tolerance", "0.05"]) == 0
        out = capsys.readouterr().out
        assert "calibrated_depths 2 2 6 2" in out

    def test_sweep_kernel_size(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_doc())
        code = main(["sweep", "--config", cfg, "--axis", "kernel_size",
                     "--values", "3", "5", "--out", str(tmp_path / "s")])
        assert code == 0
        text = (tmp_path / "s" / "sweep.csv").read_text()
        assert text.splitlines()[0] == "kernel_size,final_accuracy,best_accuracy,rounds_to_target,tms"
        assert len(text.splitlines()) == 3
        assert (tmp_path / "s" / "sweep_kernel_size_3" / "report.json").exists()

    def test_sweep_shares_partition_across_values(self, tmp_path):
        cfg = write_config(tmp_path, base_doc())
        main(["sweep", "--config", cfg, "--axis", "activation",
              "--values", "relu", "silu", "--out", str(tmp_path / "s")])
        a = json.loads((tmp_path / "s" / "sweep_activation_relu" / "report.json").read_text())
        b = json.loads((tmp_path / "s" / "sweep_activation_silu" / "report.json").read_text())
        assert a["partition_mean_ks"] == b["partition_mean_ks"]
        assert a["records"][0]["client_sizes"] == b["records"][0]["client_sizes"]

    def test_eval_prints_accuracy_from_checkpoint(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_doc())
        main(["train", "--config", cfg, "--out", str(tmp_path / "run")])
        capsys.readouterr()
        code = main(["eval", "--config", cfg,
                     "--checkpoint", str(tmp_path / "run" / "checkpoint")])
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("accuracy ")
        # matches the final accuracy the training run reported
        doc = json.loads((tmp_path / "run" / "report.json").read_text())
        assert abs(float(out.split()[1]) - doc["final_accuracy"]) < 1e-3

    def test_eval_missing_checkpoint(self, tmp_path, capsys):
        cfg = write_config(tmp_path, base_doc())
        code = main(["eval", "--config", cfg,
                     "--checkpoint", str(tmp_path / "nope")])
        assert code == 2
        assert capsys.readouterr().err.startswith("error:")
