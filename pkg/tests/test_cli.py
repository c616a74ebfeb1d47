"""End-to-end command-line workflow on a tiny dataset."""

import numpy as np
import pytest

from taskmix.cli import ConfigError, load_config, main
from taskmix.concepts import ConceptVector
from taskmix.data import parse_libsvm, serialize_libsvm
from taskmix.synth import make_hypercube_pairs


def _write_dataset(tmp_path, n_train=60, n_test=30, d=8, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.normal(size=d)

    def block(n):
        X = rng.normal(size=(n, d))
        y = (X @ w + 0.3 * rng.normal(size=n) > 0).astype(float)
        pairs = [(ConceptVector(np.flatnonzero(r), r[np.flatnonzero(r)], d),
                  float(t)) for r, t in zip(X, y)]
        return serialize_libsvm(pairs)

    train = tmp_path / "demo.train"
    test = tmp_path / "demo.test"
    train.write_text(block(n_train))
    test.write_text(block(n_test))
    return train, test


def _write_config(tmp_path, train, test, **meta_overrides):
    meta = {"epochs": 2, "batch_size": 16, "lr": 0.003, "seed": 0}
    meta.update(meta_overrides)
    meta_lines = "\n".join(f"{k} = {v}" for k, v in meta.items())
    cfg = tmp_path / "run.ini"
    cfg.write_text(f"""
[data]
train_path = {train}
test_path = {test}
task_id = demo
val_fraction = 0.2
split_seed = 0

[tasks]
aux_policy = sample:3
aux_seed = 0

[model]
experts = 2
depth = 1
width = 12
gate_hidden = 4
head_hidden = 4
init_seed = 0
baseline_hidden = 8

[meta_train]
{meta_lines}

[adapt]
epochs = 2
batch_size = 16
lrs = 1e-4,1e-3
seed = 0

[eval]
split = test

[output]
dir = {tmp_path / "out"}
""")
    return cfg


# ---------------------------------------------------------- config errors


def test_unknown_section_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[turbo]\nboost = 9\n")
    assert main(["ingest", "--config", str(cfg)]) == 2
    assert "config error" in capsys.readouterr().err
    assert "turbo" in str(pytest.raises(ConfigError, load_config,
                                        str(cfg)).value)


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[meta_train]\nepocs = 3\n")
    assert main(["ingest", "--config", str(cfg)]) == 2
    err = capsys.readouterr().err
    assert "config error" in err and "epocs" in err


def test_unparseable_value_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[meta_train]\nepochs = soon\n")
    assert main(["ingest", "--config", str(cfg)]) == 2
    assert "cannot parse" in capsys.readouterr().err


def test_bad_aux_policy_exits_2(tmp_path, capsys):
    train, test = _write_dataset(tmp_path)
    cfg = _write_config(tmp_path, train, test)
    assert main(["ingest", "--config", str(cfg), "--aux", "sometimes"]) == 2
    assert "aux_policy" in capsys.readouterr().err


def test_missing_config_file_exits_2(tmp_path, capsys):
    assert main(["ingest", "--config", str(tmp_path / "nope.ini")]) == 2
    assert "not found" in capsys.readouterr().err


def test_missing_data_file_exits_1(tmp_path, capsys):
    train, test = _write_dataset(tmp_path)
    cfg = _write_config(tmp_path, train, tmp_path / "gone.test")
    with pytest.raises(SystemExit) as exc:
        main(["ingest", "--config", str(cfg)])
    assert exc.value.code == 1
    assert "does not exist" in capsys.readouterr().err


def test_missing_checkpoint_exits_1(tmp_path, capsys):
    train, test = _write_dataset(tmp_path)
    cfg = _write_config(tmp_path, train, test)
    with pytest.raises(SystemExit) as exc:
        main(["eval", "--config", str(cfg),
              "--checkpoint", str(tmp_path / "void.bin")])
    assert exc.value.code == 1
    assert "does not exist" in capsys.readouterr().err


def test_malformed_data_exits_1(tmp_path, capsys):
    train, test = _write_dataset(tmp_path)
    bad = tmp_path / "bad.train"
    bad.write_text("1 2:1 1:1\n")
    cfg = _write_config(tmp_path, bad, test)
    assert main(["ingest", "--config", str(cfg)]) == 1
    assert "strictly increasing" in capsys.readouterr().err


# -------------------------------------------------------------- pipeline


def test_full_pipeline_produces_expected_artifacts(tmp_path, capsys):
    train, test = _write_dataset(tmp_path)
    cfg = _write_config(tmp_path, train, test)
    out = tmp_path / "out"

    assert main(["ingest", "--config", str(cfg)]) == 0
    assert (out / "vocab.txt").exists()
    manifest_1 = (out / "manifest.txt").read_text()
    assert "task demo:" in manifest_1
    assert main(["ingest", "--config", str(cfg)]) == 0
    assert (out / "manifest.txt").read_text() == manifest_1

    bl = tmp_path / "bl"
    assert main(["baseline", "--config", str(cfg), "--out", str(bl)]) == 0
    for name in ("checkpoint.bin", "runlog.csv", "metrics.csv"):
        assert (bl / name).exists()
    lines = (bl / "metrics.csv").read_text().strip().split("\n")
    assert len(lines) == 3  # header + val + test
    assert lines[1].startswith("single_task_mlp,demo,val")

    mt = tmp_path / "mt"
    assert main(["train-meta", "--config", str(cfg), "--out", str(mt)]) == 0
    for name in ("checkpoint.bin", "runlog.csv", "metrics.csv",
                 "manifest.txt", "vocab.txt"):
        assert (mt / name).exists()
    runlog = (mt / "runlog.csv").read_text().strip().split("\n")
    assert runlog[0] == "step,epoch,train_meta_loss,val_meta_loss,wall_time"
    assert len(runlog) == 3  # two epochs

    ad = tmp_path / "ad"
    assert main(["adapt", "--config", str(cfg), "--out", str(ad),
                 "--checkpoint", str(mt / "checkpoint.bin")]) == 0
    assert (ad / "checkpoint.bin").exists()
    metrics = (ad / "metrics.csv").read_text()
    assert "mixture+adapt,demo,val" in metrics
    assert "mixture+adapt,demo,test" in metrics

    ev = tmp_path / "ev"
    assert main(["eval", "--config", str(cfg), "--out", str(ev),
                 "--checkpoint", str(ad / "checkpoint.bin")]) == 0
    assert "mixture on demo/test" in capsys.readouterr().out
    assert (ev / "metrics.csv").read_text().count("\n") == 2

    at = tmp_path / "at"
    assert main(["attention", "--config", str(cfg), "--out", str(at),
                 "--checkpoint", str(mt / "checkpoint.bin")]) == 0
    grid = (at / "attention.csv").read_text().strip().split("\n")
    assert len(grid) == 5  # header + 4 tasks (demo + sample:3 aux)
    assert grid[0].startswith("task,demo,")
    diag = [float(grid[i + 1].split(",")[i + 1]) for i in range(4)]
    assert diag == [0.0, 0.0, 0.0, 0.0]


def test_bare_checkpoint_names_resolve_in_output_dir(tmp_path, capsys):
    """A plain --config pipeline sharing one output dir needs no --checkpoint:
    the bare default resolves where train-meta wrote it, not in the cwd."""
    train, test = _write_dataset(tmp_path)
    cfg = _write_config(tmp_path, train, test)
    assert main(["ingest", "--config", str(cfg)]) == 0
    assert main(["train-meta", "--config", str(cfg)]) == 0
    assert main(["eval", "--config", str(cfg)]) == 0
    assert "mixture on demo/test" in capsys.readouterr().out
    assert main(["adapt", "--config", str(cfg)]) == 0
    assert main(["attention", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "attention.csv").exists()


def test_rerun_is_idempotent_except_wall_time(tmp_path):
    train, test = _write_dataset(tmp_path)
    cfg = _write_config(tmp_path, train, test)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train-meta", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["train-meta", "--config", str(cfg), "--out", str(b)]) == 0
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()
    assert (a / "metrics.csv").read_text() == (b / "metrics.csv").read_text()
    assert (a / "manifest.txt").read_text() == (b / "manifest.txt").read_text()
    ra = [l.split(",")[:4] for l in (a / "runlog.csv").read_text().splitlines()]
    rb = [l.split(",")[:4] for l in (b / "runlog.csv").read_text().splitlines()]
    assert ra == rb


def test_eval_rejects_checkpoint_without_matching_head(tmp_path, capsys):
    train, test = _write_dataset(tmp_path)
    cfg = _write_config(tmp_path, train, test)
    mt = tmp_path / "mt"
    assert main(["train-meta", "--config", str(cfg), "--out", str(mt)]) == 0
    other = _write_config(tmp_path, train, test)
    text = other.read_text().replace("task_id = demo", "task_id = stranger")
    other.write_text(text)
    assert main(["eval", "--config", str(other), "--out", str(tmp_path / "x"),
                 "--checkpoint", str(mt / "checkpoint.bin")]) == 1
    assert "no head" in capsys.readouterr().err


def test_eval_works_on_baseline_checkpoints(tmp_path, capsys):
    train, test = _write_dataset(tmp_path)
    cfg = _write_config(tmp_path, train, test)
    bl = tmp_path / "bl"
    assert main(["baseline", "--config", str(cfg), "--out", str(bl)]) == 0
    capsys.readouterr()
    assert main(["eval", "--config", str(cfg), "--out", str(tmp_path / "e"),
                 "--checkpoint", str(bl / "checkpoint.bin")]) == 0
    assert "baseline on demo/test" in capsys.readouterr().out


# -------------------------------------------------------------- gradcheck


def test_gradcheck_passes_at_default_tolerance(capsys):
    assert main(["gradcheck"]) == 0
    assert "OK: within tolerance" in capsys.readouterr().out


def test_gradcheck_fails_at_absurd_tolerance(capsys):
    assert main(["gradcheck", "--tol", "1e-12"]) == 1
    assert "FAIL" in capsys.readouterr().out


# ------------------------------------------------------------------ synth


def test_synth_api_is_deterministic_and_balanced():
    train, test = make_hypercube_pairs(3, n_train=80, n_test=40,
                                       n_features=10, n_informative=3,
                                       n_redundant=2)
    train2, _ = make_hypercube_pairs(3, n_train=80, n_test=40,
                                     n_features=10, n_informative=3,
                                     n_redundant=2)
    assert train == train2
    pairs, width = parse_libsvm(train, from_text=True)
    assert len(pairs) == 80 and width == 10
    labels = np.array([y for _, y in pairs])
    assert 0.2 < labels.mean() < 0.8
    with pytest.raises(ValueError):
        make_hypercube_pairs(0, n_features=4, n_informative=3, n_redundant=3)


def test_synth_command_writes_parseable_files(tmp_path, capsys):
    out = tmp_path / "synth"
    assert main(["synth", "--out", str(out)]) == 0
    pairs, width = parse_libsvm(out / "synth.train")
    assert width == 500 and len(pairs) == 2000
    assert main(["synth", "--kind", "moebius", "--out", str(out)]) == 2
    assert "unknown synth kind" in capsys.readouterr().err
