import numpy as np
import pytest
from PIL import Image

from marsseg.checkpoint import load_checkpoint
from marsseg.cli import main, parse_overrides
from marsseg.data import decode_mask, encode_mask, load_manifest, load_mask

CONFIG = """\
network.preset = micro
network.num_classes = 4
network.encoder.stage_channels = 8,16,32
network.sppm.pyramid_sizes = 1,2
augment.crop = 32,32
optim.lr = 0.01
train.batch_size = 2
train.epochs = 1
data.root = data
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--n", "5", "--size", "32", "--seed", "2"]) == 0
    (root / "train.cfg").write_text(CONFIG)
    assert main(["train", "--config", str(root / "train.cfg")]) == 0
    return root


def test_train_writes_checkpoint_and_history(workspace):
    ckpt = load_checkpoint(workspace / "checkpoint.mseg")
    assert ckpt.epoch == 1
    assert (workspace / "history.csv").read_text().startswith("epoch,train_loss,val_miou")


def test_train_echoes_overrides(workspace, capsys):
    code = main(["train", "--config", str(workspace / "train.cfg"), "--optim.lr", "0.005",
                 "--train.checkpoint=" + str(workspace / "other.mseg")])
    out = capsys.readouterr().out
    assert code == 0
    assert "optim.lr = 0.005\n" in out and out.startswith("# resolved config")
    assert load_checkpoint(workspace / "other.mseg").config.optim.lr == 0.005


def test_unknown_override_exits_2(workspace, capsys):
    assert main(["train", "--config", str(workspace / "train.cfg"), "--optimizer.lr_sched", "cosine"]) == 2
    assert "optimizer.lr_sched" in capsys.readouterr().err


def test_override_parsing():
    assert parse_overrides(["--a.b", "1", "--c=2"]) == {"a.b": "1", "c": "2"}


def test_resume_continues_training(workspace):
    cfg = workspace / "train.cfg"
    out = workspace / "resumed.mseg"
    assert main(["train", "--config", str(cfg), "--resume", str(workspace / "checkpoint.mseg"),
                 "--train.epochs", "2", "--train.checkpoint", str(out)]) == 0
    assert load_checkpoint(out).epoch == 2


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_exits_3(workspace, capsys):
    code = main(["train", "--config", str(workspace / "train.cfg"), "--optim.lr", "1e38", "--train.epochs", "3",
                 "--train.checkpoint", str(workspace / "nan.mseg")])
    assert code == 3
    assert "norm" in capsys.readouterr().err


def test_eval_prints_table_and_csv(workspace, capsys):
    ckpt = workspace / "checkpoint.mseg"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(workspace / "data"), "--split", "all"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].split() == ["class", "IoU", "pixels"]
    assert lines[5].startswith("mIoU")
    csv_text = (workspace / "checkpoint.mseg.all.csv").read_text()
    assert csv_text.splitlines()[0] == "class,iou,pixel_fraction"


def test_eval_split_matches_training_split(workspace):
    m = load_manifest(workspace / "data", split_ratio=0.8, seed=0)
    assert len(m.ids("train")) == 4 and len(m.ids("test")) == 1
    assert not set(m.ids("train")) & set(m.ids("test"))


def test_eval_bad_checkpoint_exits_2(workspace, tmp_path):
    bad = tmp_path / "bad.mseg"
    bad.write_bytes(b"not a checkpoint")
    assert main(["eval", "--checkpoint", str(bad), "--data", str(workspace / "data")]) == 2


def test_eval_empty_dataset_exits_4(workspace, tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "masks").mkdir()
    (tmp_path / "classes.txt").write_text("soil\nrock\ntrack\nbig rock\n")
    assert main(["eval", "--checkpoint", str(workspace / "checkpoint.mseg"), "--data", str(tmp_path)]) == 4
    assert main(["stats", "--data", str(tmp_path)]) == 4


def test_infer_writes_mask_and_overlay(workspace, tmp_path):
    image = workspace / "data" / "images" / "synth_000.png"
    out = tmp_path / "pred.png"
    assert main(["infer", "--checkpoint", str(workspace / "checkpoint.mseg"), "--image", str(image),
                 "--out", str(out)]) == 0
    mask = load_mask(out)
    assert mask.shape == (32, 32) and mask.max() < 4
    with Image.open(tmp_path / "pred_overlay.png") as im:
        assert im.size == (32, 32) and im.mode == "RGB"


def test_infer_geometry_and_auto_pad(workspace, tmp_path):
    odd = tmp_path / "odd.png"
    Image.fromarray(np.full((30, 40, 3), 90, dtype=np.uint8)).save(odd)
    ckpt = str(workspace / "checkpoint.mseg")
    assert main(["infer", "--checkpoint", ckpt, "--image", str(odd), "--out", str(tmp_path / "o.png")]) == 5
    assert main(["infer", "--checkpoint", ckpt, "--image", str(odd), "--out", str(tmp_path / "o.png"),
                 "--auto-pad"]) == 0
    assert load_mask(tmp_path / "o.png").shape == (30, 40)


def test_stats_reports_rare_fraction(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d"), "--n", "10", "--size", "64"]) == 0
    assert main(["stats", "--data", str(tmp_path / "d")]) == 0
    out = capsys.readouterr().out
    rare = [line for line in out.splitlines() if line.startswith("big rock")][0]
    assert float(rare.split()[-1]) == pytest.approx(0.02, abs=0.003)
    assert "images: 10 (train 8, test 2)" in out


def test_convert_masks_command(tmp_path):
    (tmp_path / "src").mkdir()
    Image.fromarray(np.zeros((4, 4, 3), dtype=np.uint8)).save(tmp_path / "src" / "m.png")
    (tmp_path / "pal.txt").write_text("0 0 0 2\n")
    assert main(["convert-masks", "--src", str(tmp_path / "src"), "--dst", str(tmp_path / "dst"),
                 "--palette", str(tmp_path / "pal.txt")]) == 0
    mask = load_mask(tmp_path / "dst" / "m.png")
    assert np.all(mask == 2)
    np.testing.assert_array_equal(decode_mask(encode_mask(mask)), mask)
    (tmp_path / "bad.txt").write_text("1 2 3\n")
    assert main(["convert-masks", "--src", str(tmp_path / "src"), "--dst", str(tmp_path / "dst"),
                 "--palette", str(tmp_path / "bad.txt")]) == 2


def test_gradcheck_exit_codes(monkeypatch, capsys):
    import marsseg.cli as cli
    from marsseg.checks import run_gradcheck_suite

    monkeypatch.setattr(cli, "run_gradcheck_suite",
                        lambda seed, tol: run_gradcheck_suite(seed=seed, tol=tol, only=["add", "softmax"]))
    assert main(["gradcheck"]) == 0
    assert "2/2 checks passed" in capsys.readouterr().out
    assert main(["gradcheck", "--tol", "1e-14"]) == 1


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for name in ("train", "eval", "infer", "gradcheck", "stats", "convert-masks"):
        assert name in out
