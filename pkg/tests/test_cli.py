"""End-to-end tests of the command line: synth -> train -> eval -> infer,
plus the standalone reba and gradcheck commands and the error paths.

Everything goes through main(argv) so argument wiring, exit codes, and
stderr formatting are all exercised.
"""

import dataclasses
import os

import numpy as np
import pytest

from skelact.cli import RECORD_HEADER, main
from skelact.data import load_sequence, write_sequence
from skelact.model import load_checkpoint

CONFIG_TEXT = """\
window = 20
stride = 10
eval_stride = 20
batch_size = 8
learning_rate = 0.05
epochs = 2
folds = 2
seed = 1
hidden_size = 6
channels = 3,4,6
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Shared synth + train artifacts for the read-only command tests."""
    root = tmp_path_factory.mktemp("pipeline")
    data = root / "data"
    out = root / "run"
    assert main([
        "synth", "--classes", "2", "--sequences", "4",
        "--noise", "0.02", "--seed", "7", "--out", str(data),
    ]) == 0
    config = root / "train.cfg"
    config.write_text(CONFIG_TEXT)
    assert main([
        "train", "--config", str(config), "--data", str(data), "--out", str(out),
    ]) == 0
    return {"root": root, "data": data, "out": out,
            "checkpoint": out / "best.ckpt"}


def test_synth_writes_deterministic_files(tmp_path, capsys):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for out, seed in ((a, 3), (b, 3), (c, 4)):
        code = main(["synth", "--classes", "2", "--sequences", "2",
                     "--noise", "0.1", "--seed", str(seed), "--out", str(out)])
        assert code == 0
    assert "wrote 2 sequences" in capsys.readouterr().out
    names = sorted(os.listdir(a))
    assert names == sorted(os.listdir(b)) and len(names) == 2
    for name in names:
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / names[0]).read_bytes() != (c / names[0]).read_bytes()


def test_train_outputs(pipeline):
    out = pipeline["out"]
    log = (out / "log.csv").read_text().strip().split("\n")
    assert log[0] == "epoch,fold,lr,loss,map,edit,f1"
    assert len(log) == 1 + 2 * 2  # header + epochs x folds
    summary = (out / "summary.txt").read_text()
    assert summary.startswith("best: lr=")
    model = load_checkpoint(str(pipeline["checkpoint"]))
    assert len(model.config.labels) == 2


def test_eval_command(pipeline, tmp_path, capsys):
    report = tmp_path / "report.csv"
    code = main([
        "eval", "--checkpoint", str(pipeline["checkpoint"]),
        "--data", str(pipeline["data"]),
        "--window", "20", "--stride", "20", "--report", str(report),
    ])
    assert code == 0
    lines = capsys.readouterr().out.strip().split("\n")
    metrics = dict(l.split() for l in lines)
    assert set(metrics) == {"map", "edit", "f1"}
    for v in metrics.values():
        assert 0.0 <= float(v) <= 100.0

    rows = report.read_text().strip().split("\n")
    assert rows[0] == "metric,value"
    names = [r.split(",")[0] for r in rows[1:]]
    assert names[:3] == ["map", "edit", "f1"]
    assert all(n.startswith("ap_") for n in names[3:]) and len(names) == 5


def test_eval_plots(pipeline, tmp_path):
    plots = tmp_path / "plots"
    code = main([
        "eval", "--checkpoint", str(pipeline["checkpoint"]),
        "--data", str(pipeline["data"]),
        "--window", "20", "--stride", "20", "--plots", str(plots),
    ])
    assert code == 0
    assert (plots / "precision.png").stat().st_size > 0
    assert (plots / "confusion.png").stat().st_size > 0


def test_infer_records(pipeline, tmp_path):
    seq_path = sorted(pipeline["data"].glob("*.seq"))[0]
    out = tmp_path / "records.csv"
    code = main([
        "infer", "--checkpoint", str(pipeline["checkpoint"]),
        "--input", str(seq_path), "--window", "20", "--stride", "20",
        "--out", str(out),
    ])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    seq = load_sequence(str(seq_path))
    assert lines[0] == RECORD_HEADER
    assert len(lines) == 1 + seq.frame_count
    model = load_checkpoint(str(pipeline["checkpoint"]))
    for i, line in enumerate(lines[1:]):
        frame, a, b, final, band, label = line.split(",")
        assert int(frame) == i
        assert 1 <= int(final) <= 15 and int(a) >= 1 and int(b) >= 1
        assert band in ("negligible", "low", "medium", "high", "very high")
        assert label in model.config.labels


def test_infer_is_causal_per_window(pipeline, tmp_path):
    seq_path = sorted(pipeline["data"].glob("*.seq"))[0]
    seq = load_sequence(str(seq_path))
    cut = dataclasses.replace(
        seq,
        joints=seq.joints[:25],
        labels=seq.labels[:25],
        image_features=None if seq.image_features is None else seq.image_features[:25],
    )
    cut_path = tmp_path / "cut.seq"
    write_sequence(cut, str(cut_path))

    outputs = []
    for path in (seq_path, cut_path):
        out = tmp_path / f"{os.path.basename(path)}.csv"
        assert main([
            "infer", "--checkpoint", str(pipeline["checkpoint"]),
            "--input", str(path), "--window", "20", "--stride", "20",
            "--out", str(out),
        ]) == 0
        outputs.append(out.read_text().strip().split("\n"))
    # frames [0, 20) came from a window that saw identical input both times
    assert outputs[0][1:21] == outputs[1][1:21]


def test_infer_rejects_wrong_joint_count_before_writing(pipeline, tmp_path, capsys):
    seq = load_sequence(str(sorted(pipeline["data"].glob("*.seq"))[0]))
    small = dataclasses.replace(
        seq,
        joints=seq.joints[:, :5, :],
        joint_names=tuple(seq.joint_names[:5]),
        image_features=None,
    )
    bad_path = tmp_path / "small.seq"
    write_sequence(small, str(bad_path))
    out = tmp_path / "never.csv"
    code = main([
        "infer", "--checkpoint", str(pipeline["checkpoint"]),
        "--input", str(bad_path), "--out", str(out),
    ])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("error:") and "5 joints" in err
    assert not out.exists()


def test_reba_command(pipeline, tmp_path, capsys):
    seq_path = sorted(pipeline["data"].glob("*.seq"))[1]
    seq = load_sequence(str(seq_path))
    code = main(["reba", "--input", str(seq_path)])
    assert code == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert lines[0] == RECORD_HEADER
    assert len(lines) == 1 + seq.frame_count
    # geometry-only records carry the file's own labels
    assert lines[1].split(",")[5] == seq.labels[0]

    # with a mapping the scores get adjusted using those labels
    out = tmp_path / "adjusted.csv"
    from importlib import resources

    mapping_path = tmp_path / "mapping.txt"
    mapping_path.write_text(
        resources.files("skelact.resources").joinpath("action_mapping.txt").read_text()
    )
    assert main(["reba", "--input", str(seq_path), "--mapping", str(mapping_path),
                 "--out", str(out)]) == 0
    assert out.read_text().startswith(RECORD_HEADER)


def test_reba_gravity_flag(pipeline, capsys):
    seq_path = sorted(pipeline["data"].glob("*.seq"))[0]
    assert main(["reba", "--input", str(seq_path), "--gravity", "0,0,-1"]) == 0
    flipped = capsys.readouterr().out.strip().split("\n")
    assert main(["reba", "--input", str(seq_path)]) == 0
    normal = capsys.readouterr().out.strip().split("\n")
    # a different gravity direction must change at least one score
    assert flipped != normal

    assert main(["reba", "--input", str(seq_path), "--gravity", "0,-1"]) == 2
    assert "error:" in capsys.readouterr().err


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seed", "1"]) == 0
    out = capsys.readouterr().out.strip().split("\n")
    assert out[-1].startswith("all ") and "within" in out[-1]
    components = [l.split()[0] for l in out[:-1]]
    assert "gcn" in components and "end_to_end" in components
    assert all("ok" in l for l in out[:-1])


def test_error_paths_exit_2(tmp_path, capsys):
    # missing checkpoint file
    assert main(["eval", "--checkpoint", str(tmp_path / "nope.ckpt"),
                 "--data", str(tmp_path)]) == 2
    assert capsys.readouterr().err.startswith("error:")

    # config with an unknown key
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("winow = 20\n")
    assert main(["train", "--config", str(cfg), "--data", str(tmp_path),
                 "--out", str(tmp_path / "out")]) == 2
    assert "unknown config key" in capsys.readouterr().err

    # synthesis with too few classes
    assert main(["synth", "--classes", "1", "--sequences", "1",
                 "--noise", "0.0", "--seed", "0", "--out", str(tmp_path / "s")]) == 2
    assert "at least 2 classes" in capsys.readouterr().err

    # malformed sequence file
    bad = tmp_path / "bad.seq"
    bad.write_text("version 1\njoints not-a-number\n")
    assert main(["reba", "--input", str(bad)]) == 2
    assert capsys.readouterr().err.startswith("error:")


def test_gradcheck_detects_failure(monkeypatch, capsys):
    import skelact.verify as verify

    def broken(seed=0, tolerance=1e-4, registry=None, epsilon=1e-5):
        results = verify.gradcheck_suite(seed=seed, tolerance=tolerance, epsilon=epsilon)
        report = dataclasses.replace(results[0].report, max_rel_error=1.0)
        results[0] = dataclasses.replace(results[0], report=report)
        return results

    monkeypatch.setattr("skelact.cli.gradcheck_suite", broken)
    assert main(["gradcheck"]) == 1
    captured = capsys.readouterr()
    assert "FAIL" in captured.out
    assert "above tolerance" in captured.err
