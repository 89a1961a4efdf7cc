import hashlib

import numpy as np
import pytest

from stsg.cli import main, predict_image
from stsg.config import KEY_HELP, ConfigError, all_keys, load_config, parse_lines
from stsg.data import load_dataset, read_pgm, read_ppm, split_indices
from stsg.network import build
from stsg.checkpoint import apply_checkpoint, load_checkpoint
from stsg.training import evaluate_model

TINY = """# tiny desk run
input_size=32
size=32
base_width=4
n_samples=10
epochs=1
batch_size=5
train_frac=0.6
val_frac=0.2
test_frac=0.2
"""


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data.bin")]) == 0
    assert main(["train", "--config", str(cfg), "--data", str(root / "data.bin"), "--out", str(root / "run")]) == 0
    return root


# -- config ------------------------------------------------------------------------------

def test_every_key_documented():
    assert set(all_keys()) == set(KEY_HELP)


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key in all_keys():
        assert key in out


def test_last_write_wins_and_comments():
    cfg = load_config(None, ["epochs=3", "epochs=5"], env={})
    assert cfg.train.epochs == 5
    pairs = parse_lines("a=1 # note\n\n# x\nb = 2")
    assert [(k, v.strip()) for k, v in pairs] == [("a", "1"), ("b", "2")]


def test_unknown_and_bad_values_rejected():
    with pytest.raises(ConfigError):
        load_config(None, ["nonsense=1"], env={})
    with pytest.raises(ConfigError):
        load_config(None, ["epochs=many"], env={})
    with pytest.raises(ConfigError):
        load_config(None, ["heads=3"], env={})


def test_seed_env_overrides_all_seeds():
    cfg = load_config(None, ["seed=1", "data_seed=2"], env={"STSG_SEED": "42"})
    assert (cfg.net.seed, cfg.train.train_seed, cfg.synth.data_seed) == (42, 42, 42)


def test_config_text_roundtrip(tmp_path):
    cfg = load_config(None, ["lr=0.001", "intensities=0,.1,.2,.3,.4,.5,.6,.7", "ablate_decoder_cross=yes"], env={})
    path = tmp_path / "c.txt"
    path.write_text(cfg.to_text())
    again = load_config(str(path), env={})
    assert again.to_text() == cfg.to_text()
    assert again.train.lr == 0.001 and again.net.ablate_decoder_cross


# -- commands ----------------------------------------------------------------------------

def test_gen_data_summary_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    args = ["--set", "size=32", "--set", "n_samples=4"]
    assert main(["gen-data", *args, "--out", str(a), "--export-pgm", str(tmp_path / "pgm")]) == 0
    assert "wrote 4 samples size 32" in capsys.readouterr().out
    assert main(["gen-data", *args, "--out", str(b)]) == 0
    assert sha(a) == sha(b)
    assert len(list((tmp_path / "pgm").glob("*.pgm"))) == 4


def test_gen_data_validation_exit_2(tmp_path):
    assert main(["gen-data", "--set", "n_samples=0", "--out", str(tmp_path / "x.bin")]) == 2


def test_gen_data_io_error_exit_3(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["gen-data", "--set", "size=32", "--set", "n_samples=1", "--out", str(blocker / "x.bin")]) == 3


def test_train_artifacts(workspace):
    run = workspace / "run"
    assert (run / "model.ckpt").exists() and (run / "config.txt").exists()
    lines = (run / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_mean_dice" and len(lines) == 2


def test_train_twice_same_log(workspace, tmp_path):
    cfg = workspace / "tiny.cfg"
    assert main(["train", "--config", str(cfg), "--data", str(workspace / "data.bin"), "--out", str(tmp_path)]) == 0
    assert (tmp_path / "log.csv").read_text() == (workspace / "run" / "log.csv").read_text()
    assert sha(tmp_path / "model.ckpt") == sha(workspace / "run" / "model.ckpt")


def test_train_resume_checks_compatibility(workspace, tmp_path):
    cfg = workspace / "tiny.cfg"
    ckpt = workspace / "run" / "model.ckpt"
    args = ["train", "--config", str(cfg), "--data", str(workspace / "data.bin")]
    assert main(args + ["--out", str(tmp_path / "ok"), "--resume", str(ckpt)]) == 0
    assert main(args + ["--set", "base_width=8", "--out", str(tmp_path / "bad"), "--resume", str(ckpt)]) == 5


def test_train_nan_abort_exit_4(workspace, tmp_path, capsys):
    code = main(["train", "--config", str(workspace / "tiny.cfg"), "--data", str(workspace / "data.bin"),
                 "--set", "lr=1e300", "--set", "epochs=3", "--out", str(tmp_path)])
    assert code == 4
    assert "non-finite" in capsys.readouterr().err


def test_eval_prints_header_and_row(workspace, capsys):
    code = main(["eval", "--checkpoint", str(workspace / "run" / "model.ckpt"),
                 "--data", str(workspace / "data.bin"), "--split", "test"])
    lines = capsys.readouterr().out.splitlines()
    assert code == 0 and len(lines) == 2
    assert lines[0] == "ILM,NFL-IPL,INL,OPL,ONL-ISM,ISE,OS-RPE,Fluid,Mean"
    assert len(lines[1].split(",")) == 9


def test_eval_mismatch_exit_5(workspace, capsys):
    code = main(["eval", "--checkpoint", str(workspace / "run" / "model.ckpt"), "--data", str(workspace / "data.bin"),
                 "--config", str(workspace / "tiny.cfg"), "--set", "tokens=3"])
    assert code == 5
    assert "parameter tokens has shape (6, 4)" in capsys.readouterr().err


def test_eval_corrupt_inputs_exit_3(workspace, tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOPE" + (workspace / "data.bin").read_bytes()[4:])
    ckpt = str(workspace / "run" / "model.ckpt")
    assert main(["eval", "--checkpoint", ckpt, "--data", str(bad)]) == 3
    short = tmp_path / "short.bin"
    short.write_bytes((workspace / "data.bin").read_bytes()[:-10])
    assert main(["eval", "--checkpoint", ckpt, "--data", str(short)]) == 3
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--data", str(workspace / "data.bin"),
                 "--config", str(workspace / "tiny.cfg")]) == 3


def test_predict_outputs(workspace, tmp_path):
    from stsg.data import export_pgm

    ds = load_dataset(workspace / "data.bin")
    export_pgm(tmp_path, ds, 1)
    img = tmp_path / "sample_0000.pgm"
    ckpt = str(workspace / "run" / "model.ckpt")
    for name in ("a", "b"):
        assert main(["predict", "--checkpoint", ckpt, "--image", str(img), "--out", str(tmp_path / f"{name}.pgm")]) == 0
    labels, _ = read_pgm(tmp_path / "a.pgm")
    assert labels.shape == (32, 32) and labels.max() < 9
    assert read_ppm(tmp_path / "a.ppm").shape == (32, 32, 3)
    assert sha(tmp_path / "a.pgm") == sha(tmp_path / "b.pgm")
    assert sha(tmp_path / "a.ppm") == sha(tmp_path / "b.ppm")


def test_predict_matches_eval_path(workspace):
    cfg = load_config(str(workspace / "run" / "config.txt"), env={})
    model = build(cfg.net)
    apply_checkpoint(model, load_checkpoint(workspace / "run" / "model.ckpt"))
    ds = load_dataset(workspace / "data.bin")
    from stsg.network import predict

    batch = predict(model, ds.images[:3])
    for i in range(3):
        np.testing.assert_array_equal(predict_image(model, ds.images[i, 0]), batch[i])


def test_predict_size_mismatch_exit_3(workspace, tmp_path):
    from stsg.data import write_pgm

    write_pgm(tmp_path / "small.pgm", np.zeros((16, 16), np.uint8))
    code = main(["predict", "--checkpoint", str(workspace / "run" / "model.ckpt"),
                 "--image", str(tmp_path / "small.pgm"), "--out", str(tmp_path / "o.pgm")])
    assert code == 3


def test_bad_arguments_exit_2(capsys):
    assert main(["train"]) == 2
    assert main(["frobnicate"]) == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "block,max_rel_err,tol,status" and all(l.endswith("PASS") for l in out[1:])


def test_gradcheck_corrupted_exit_1(capsys):
    assert main(["gradcheck", "--corrupt", "maximum"]) == 1
    err = capsys.readouterr().err
    assert "dynamic_relu" in err


@pytest.mark.slow
def test_ablate_command(workspace, capsys):
    code = main(["ablate", "--config", str(workspace / "tiny.cfg"), "--data", str(workspace / "data.bin")])
    lines = capsys.readouterr().out.splitlines()
    assert code == 0
    assert lines[0] == "Setting,ILM,NFL-IPL,INL,OPL,ONL-ISM,ISE,OS-RPE,Fluid,Mean"
    assert [l.split(",")[0] for l in lines[1:]] == ["ours", "w/o", "w/o decoder"]
