# tests/test_main.py
import numpy as np
import pytest

from app.main import build_parser, main
from app.services.evaluator import read_reports
from app.utils.image_io import write_preview
from app.utils.tensor_io import load_tensor

TINY = [
    "height=16", "width=32", "num_levels=5", "b_max=6", "encoder_widths=4,4,4,4", "decoder_widths=4,4,4",
    "decoder_block_width=4", "dtype=float64", "batch=2", "epochs=1", "e1=0", "e2=0", "scale_range=1,1",
]


def _sets(*extra):
    out = []
    for kv in TINY + list(extra):
        out += ["--set", kv]
    return out


@pytest.fixture(autouse=True)
def _isolated_env(monkeypatch):
    for key in ("TIO_SEED", "TIO_DATA_DIR", "TIO_CHECKPOINT_DIR", "TIO_PROFILES_PATH"):
        monkeypatch.delenv(key, raising=False)


@pytest.fixture
def trained(tmp_path):
    data, ckpt = tmp_path / "data", tmp_path / "ckpt"
    assert main(["gen-data", *_sets(), "--count", "2", "--val-count", "1", "--out", str(data)]) == 0
    log_csv = tmp_path / "log.csv"
    assert main(["train", *_sets(f"log_csv={log_csv}"), "--data", str(data), "--checkpoint", str(ckpt)]) == 0
    return data, ckpt, log_csv


def test_gen_data_layout(tmp_path, capsys):
    out = tmp_path / "d"
    code = main(["gen-data", *_sets(), "--count", "2", "--val-count", "1", "--out", str(out), "--no-previews"])
    assert code == 0
    assert (out / "train" / "manifest.txt").read_text(encoding="utf-8").count("\n") == 2
    assert (out / "val" / "val_00000" / "left.tiot").is_file()
    assert not (out / "val" / "val_00000" / "left.png").exists()
    assert "2 train / 1 val" in capsys.readouterr().out


def test_train_eval_infer(trained, tmp_path, capsys):
    data, ckpt, log_csv = trained
    assert (ckpt / "meta.txt").is_file()
    assert log_csv.read_text(encoding="utf-8").splitlines()[0] == "epoch,step_id,loss_name,value"

    csv = tmp_path / "metrics.csv"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--csv-out", str(csv)]) == 0
    rows = read_reports(csv)
    assert [(r.sample_id, r.mode) for r in rows] == [
        ("val_00000", "mono"), ("val_00000", "stereo"), ("all", "mono"), ("all", "stereo"),
    ]
    assert "mono: abs_rel=" in capsys.readouterr().out

    left = data / "val" / "val_00000" / "left.tiot"
    right = data / "val" / "val_00000" / "right.tiot"
    png = write_preview(tmp_path / "left.png", load_tensor(left))
    assert main(["infer-mono", "--checkpoint", str(ckpt), "--image", str(png), "--out", str(tmp_path / "mono")]) == 0
    depth = load_tensor(tmp_path / "mono.tiot")
    assert depth.shape == (1, 16, 32)
    assert np.all(depth >= 54.0 / 6.0 - 1e-9) and np.all(depth <= 54.0 + 1e-9)
    assert (tmp_path / "mono.png").is_file()

    code = main(["infer-stereo", "--checkpoint", str(ckpt), "--left", str(left), "--right", str(right),
                 "--out", str(tmp_path / "stereo.png")])
    assert code == 0
    assert load_tensor(tmp_path / "stereo.tiot").shape == (1, 16, 32)


def test_resume_continues_epochs(trained):
    data, ckpt, log_csv = trained
    code = main(["train", *_sets(f"log_csv={log_csv}", "epochs=2"), "--data", str(data),
                 "--checkpoint", str(ckpt), "--resume"])
    assert code == 0
    lines = log_csv.read_text(encoding="utf-8").splitlines()
    assert lines.count("epoch,step_id,loss_name,value") == 1
    assert {line.split(",")[0] for line in lines[1:]} == {"0", "1"}


def test_errors_exit_one(tmp_path, capsys):
    assert main(["infer-mono", "--checkpoint", str(tmp_path / "none"), "--image", "x.png", "--out", "y"]) == 1
    assert capsys.readouterr().err.startswith("error: ")
    assert main(["gen-data", "--set", "height=20", "--out", str(tmp_path)]) == 1
    assert main(["train", *_sets(), "--checkpoint", str(tmp_path / "nothing"), "--resume"]) == 1
    assert main(["gen-data", "--set", "oops", "--out", str(tmp_path)]) == 1


def test_usage_errors_exit_two():
    with pytest.raises(SystemExit) as exc:
        main(["train", "--no-such-flag"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
