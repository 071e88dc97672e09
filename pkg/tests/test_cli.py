import json

import pytest

from cada.cli import main
from cada.datasets import load_feature_csv
from cada.evaluation import parse_raw_csv
from cada.model import ModelConfig, init_params, load_params, save_params


def synth_spec_dict(**overrides):
    spec = {
        "num_classes": 2,
        "feature_dim": 4,
        "class_means": [[1.0, 0.0, 1.0, 0.0], [-1.0, 0.0, -1.0, 0.0]],
        "class_scales": [0.7, 0.7],
        "target_offset": [0.4, -0.3, 0.2, 0.3],
        "target_rotation": 1.1,
        "target_scale_multiplier": 1.2,
        "examples_per_class_source": 30,
        "examples_per_class_target": 30,
        "seed": 5,
    }
    spec.update(overrides)
    return spec


def run_config_dict(tmp_path, **overrides):
    cfg = {
        "data": {"num_classes": 2, "synthetic": synth_spec_dict()},
        "model": {"hidden_dim": 8},
        "train": {"batch_size": 32, "max_epochs": 10, "patience": 3},
        "experiment": {
            "methods": ["all-source", "cada"],
            "n_values": [2],
            "trials": 1,
            "folds": 2,
            "master_seed": 3,
            "save_histories": True,
        },
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(overrides)
    return cfg


def write_json(path, payload):
    path.write_text(json.dumps(payload))
    return path


def test_help_exits_zero(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    with pytest.raises(SystemExit) as exc:
        main(["benchmark", "--help"])
    assert exc.value.code == 0


def test_synth_writes_pair_and_manifest(tmp_path):
    spec_path = write_json(tmp_path / "spec.json", synth_spec_dict())
    out = tmp_path / "data"
    assert main(["synth", "--spec", str(spec_path), "--out", str(out)]) == 0
    source = load_feature_csv(out / "source.csv", "source", 2)
    target = load_feature_csv(out / "target.csv", "target", 2)
    assert len(source) == 60 and len(target) == 60
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["source_rows"] == 60
    assert manifest["spec"]["seed"] == 5


def test_synth_rerun_is_byte_identical(tmp_path):
    spec_path = write_json(tmp_path / "spec.json", synth_spec_dict())
    out1, out2 = tmp_path / "a", tmp_path / "b"
    main(["synth", "--spec", str(spec_path), "--out", str(out1)])
    main(["synth", "--spec", str(spec_path), "--out", str(out2)])
    assert (out1 / "source.csv").read_bytes() == (out2 / "source.csv").read_bytes()
    assert (out1 / "target.csv").read_bytes() == (out2 / "target.csv").read_bytes()


def test_synth_rejects_zero_inflation(tmp_path, capsys):
    spec_path = write_json(
        tmp_path / "bad.json", synth_spec_dict(target_scale_multiplier=0.0)
    )
    assert main(["synth", "--spec", str(spec_path), "--out", str(tmp_path / "o")]) == 2
    assert "target_scale_multiplier" in capsys.readouterr().err


def test_benchmark_small_config_end_to_end(tmp_path, capsys):
    cfg_path = write_json(tmp_path / "run.json", run_config_dict(tmp_path))
    assert main(["benchmark", "--config", str(cfg_path)]) == 0
    out = tmp_path / "out"
    assert (out / "summary.txt").exists()
    raw = (out / "results_raw.csv").read_text()
    records = parse_raw_csv(raw)
    methods = {r.method for r in records}
    assert methods == {"all-source", "cada"}
    resolved = json.loads((out / "resolved_config.json").read_text())
    assert resolved["experiment"]["master_seed"] == 3
    assert resolved["train"]["lr"] == 0.001  # defaults filled in
    histories = list((out / "histories").glob("*.csv"))
    assert len(histories) == len(records)
    assert "all-source:" in capsys.readouterr().out


def test_benchmark_seed_override_lands_in_resolved_config(tmp_path):
    cfg_path = write_json(tmp_path / "run.json", run_config_dict(tmp_path))
    assert main(["benchmark", "--config", str(cfg_path), "--seed", "99"]) == 0
    resolved = json.loads((tmp_path / "out" / "resolved_config.json").read_text())
    assert resolved["experiment"]["master_seed"] == 99


def test_benchmark_missing_dataset_path_names_it(tmp_path, capsys):
    cfg = run_config_dict(tmp_path)
    cfg["data"] = {
        "num_classes": 2,
        "source_csv": str(tmp_path / "missing.csv"),
        "target_csv": str(tmp_path / "missing.csv"),
    }
    cfg_path = write_json(tmp_path / "run.json", cfg)
    assert main(["benchmark", "--config", str(cfg_path)]) == 2
    assert "missing.csv" in capsys.readouterr().err


def test_benchmark_rejects_unknown_method(tmp_path, capsys):
    cfg = run_config_dict(tmp_path)
    cfg["experiment"]["methods"] = ["fada"]
    cfg_path = write_json(tmp_path / "run.json", cfg)
    assert main(["benchmark", "--config", str(cfg_path)]) == 2
    assert "experiment.methods" in capsys.readouterr().err


def test_benchmark_does_not_mutate_config(tmp_path):
    cfg_path = write_json(tmp_path / "run.json", run_config_dict(tmp_path))
    before = cfg_path.read_bytes()
    main(["benchmark", "--config", str(cfg_path)])
    assert cfg_path.read_bytes() == before


def train_config_dict(tmp_path, method="cada", **overrides):
    cfg = run_config_dict(tmp_path)
    cfg["train_run"] = {"method": method, "n_per_class": 3, "model_out": "m.cada"}
    cfg["train"]["seed"] = 1
    cfg.update(overrides)
    return cfg


def test_train_then_evaluate_round_trip(tmp_path, capsys):
    out = tmp_path / "out"
    cfg_path = write_json(tmp_path / "train.json", train_config_dict(tmp_path))
    assert main(["train", "--config", str(cfg_path)]) == 0
    model_path = out / "m.cada"
    assert model_path.exists()
    assert (out / "history.csv").exists()

    # build an evaluation CSV from the synthetic target domain
    data_dir = tmp_path / "data"
    spec_path = write_json(tmp_path / "spec.json", synth_spec_dict())
    main(["synth", "--spec", str(spec_path), "--out", str(data_dir)])
    eval_cfg = write_json(
        tmp_path / "eval.json",
        {
            "evaluate_run": {
                "model": str(model_path),
                "data_csv": str(data_dir / "target.csv"),
            }
        },
    )
    capsys.readouterr()
    assert main(["evaluate", "--config", str(eval_cfg)]) == 0
    out_text = capsys.readouterr().out
    assert out_text.startswith("UA: ")
    ua = float(out_text.split()[1])
    assert 0.0 <= ua <= 1.0

    # a trained model beats an untrained one on its own training domain
    params, meta = load_params(model_path)
    untrained = init_params(
        ModelConfig(input_dim=4, hidden_dim=8, num_classes=2), seed=123
    )
    untrained_path = tmp_path / "untrained.cada"
    save_params(
        untrained_path,
        untrained,
        num_classes=2,
        seed=123,
        feature_min=meta["feature_min"],
        feature_max=meta["feature_max"],
    )
    eval_untrained = write_json(
        tmp_path / "eval_untrained.json",
        {
            "evaluate_run": {
                "model": str(untrained_path),
                "data_csv": str(data_dir / "target.csv"),
            }
        },
    )
    assert main(["evaluate", "--config", str(eval_untrained)]) == 0
    ua_untrained = float(capsys.readouterr().out.split()[1])
    assert ua >= ua_untrained


def test_evaluate_rejects_dimension_mismatch(tmp_path, capsys):
    out = tmp_path / "out"
    cfg_path = write_json(tmp_path / "train.json", train_config_dict(tmp_path))
    main(["train", "--config", str(cfg_path)])

    wrong = tmp_path / "wrong.csv"
    wrong.write_text(
        "utterance_id,speaker_id,label,f1,f2\nu1,s1,0,0.1,0.2\nu2,s1,1,0.3,0.4\n"
    )
    eval_cfg = write_json(
        tmp_path / "eval.json",
        {"evaluate_run": {"model": str(out / "m.cada"), "data_csv": str(wrong)}},
    )
    assert main(["evaluate", "--config", str(eval_cfg)]) == 2
    assert "features" in capsys.readouterr().err


def test_train_model_file_round_trips_bitwise(tmp_path):
    cfg_path = write_json(tmp_path / "train.json", train_config_dict(tmp_path))
    main(["train", "--config", str(cfg_path)])
    path = tmp_path / "out" / "m.cada"
    params, meta = load_params(path)
    second = tmp_path / "copy.cada"
    save_params(
        second,
        params,
        num_classes=meta["num_classes"],
        seed=meta["seed"],
        feature_min=meta["feature_min"],
        feature_max=meta["feature_max"],
    )
    assert path.read_bytes() == second.read_bytes()


def test_mode_mismatch_rejected(tmp_path, capsys):
    cfg = run_config_dict(tmp_path)
    cfg["mode"] = "train"
    cfg_path = write_json(tmp_path / "run.json", cfg)
    assert main(["benchmark", "--config", str(cfg_path)]) == 2
    assert "mode" in capsys.readouterr().err


def test_default_benchmark_config_is_packaged():
    from cada.cli import default_benchmark_config

    path = default_benchmark_config()
    cfg = json.loads(path.read_text())
    assert cfg["experiment"]["trials"] == 20
    assert cfg["experiment"]["folds"] == 5
    assert cfg["data"]["synthetic"]["num_classes"] == 2


def test_wide_feature_smoke_62_columns(tmp_path):
    # GeMAPS-width tables flow through synth -> benchmark end to end
    means = [[0.0] * 62, [0.5] * 62]
    spec = synth_spec_dict(
        feature_dim=62,
        class_means=means,
        target_offset=[0.1] * 62,
        examples_per_class_source=20,
        examples_per_class_target=20,
    )
    data_dir = tmp_path / "wide"
    spec_path = write_json(tmp_path / "spec.json", spec)
    assert main(["synth", "--spec", str(spec_path), "--out", str(data_dir)]) == 0
    cfg = run_config_dict(
        tmp_path,
        data={
            "num_classes": 2,
            "feature_dim": 62,
            "source_csv": str(data_dir / "source.csv"),
            "target_csv": str(data_dir / "target.csv"),
        },
    )
    cfg["experiment"] = {
        "methods": ["all-source"],
        "n_values": [1],
        "trials": 1,
        "folds": 2,
        "master_seed": 1,
        "save_histories": False,
    }
    cfg_path = write_json(tmp_path / "wide.json", cfg)
    assert main(["benchmark", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "out" / "summary.txt").exists()
