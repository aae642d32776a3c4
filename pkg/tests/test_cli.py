import json

import numpy as np
import pytest

from mininet.cli import main
from mininet.data import decode_image_file
from mininet.synthetic import make_disk_dataset


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    manifest = make_disk_dataset(root / "data", n_train=6, n_test=2,
                                 size=16, seed=4)
    cfg = root / "synthetic.cfg"
    cfg.write_text(
        f"data.manifest = {manifest}\n"
        "data.height = 16\n"
        "data.width = 16\n"
        "train.epochs = 2\n"
        "train.seed = 9\n"
        "optimizer.lr = 0.001\n",
        encoding="utf-8",
    )
    return root, cfg


@pytest.fixture(scope="module")
def trained_dir(cli_env):
    root, cfg = cli_env
    out = root / "run"
    assert main(["train", "--config", str(cfg), "--out", str(out)]) == 0
    return out


def test_train_writes_expected_artifacts(trained_dir):
    assert (trained_dir / "best.ckpt").is_file()
    assert (trained_dir / "runlog.jsonl").is_file()
    assert (trained_dir / "effective.cfg").is_file()
    rows = [json.loads(line)
            for line in (trained_dir / "runlog.jsonl").read_text().splitlines()]
    epoch_rows = [r for r in rows if "epoch" in r]
    assert {"epoch", "train_loss", "val_loss", "alpha", "seconds"} <= \
        set(epoch_rows[0])
    assert "stop_reason" in rows[-1]


def test_effective_config_echoes_overrides(cli_env, tmp_path):
    root, cfg = cli_env
    out = tmp_path / "params_out"
    code = main(["params", "--config", str(cfg), "--out", str(out),
                 "--optimizer.lr", "1e-4", "--train.epochs", "100",
                 "--train.patience", "4"])
    assert code == 0
    echoed = (out / "effective.cfg").read_text()
    assert "optimizer.lr = 0.0001" in echoed
    assert "train.epochs = 100" in echoed
    assert "train.patience = 4" in echoed


def test_unknown_config_key_exits_2(cli_env, tmp_path):
    root, cfg = cli_env
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "x"),
                 "--train.nonsense", "1"])
    assert code == 2


def test_invalid_value_exits_2(cli_env, tmp_path):
    root, cfg = cli_env
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "x"),
                 "--train.epochs", "many"])
    assert code == 2


def test_missing_mask_exits_3_and_names_record(cli_env, tmp_path, capsys):
    root, cfg = cli_env
    broken = tmp_path / "broken.tsv"
    lines = (root / "data" / "manifest.tsv").read_text().splitlines()
    lines.append(f"ghost\t{root}/data/images/disk000.ppm\t{root}/missing.pgm\ttrain")
    broken.write_text("\n".join(lines) + "\n", encoding="utf-8")
    code = main(["train", "--config", str(cfg), "--out", str(tmp_path / "x"),
                 "--data.manifest", str(broken)])
    assert code == 3
    err = capsys.readouterr().err
    assert "ghost" in err and "code=3" in err


def test_eval_writes_metric_table_and_records(cli_env, trained_dir, tmp_path, capsys):
    root, cfg = cli_env
    out = tmp_path / "eval_out"
    code = main(["eval", "--config", str(cfg), "--out", str(out),
                 "--checkpoint", str(trained_dir / "best.ckpt"),
                 "--split", "test"])
    assert code == 0
    table = (out / "metrics.txt").read_text()
    for col in ("jaccard", "f1", "accuracy", "sensitivity", "specificity", "auc"):
        assert col in table
    records = [json.loads(line)
               for line in (out / "per_image.jsonl").read_text().splitlines()]
    assert len(records) == 2
    assert {"id", "tp", "fp", "tn", "fn"} <= set(records[0])


def test_eval_rerun_is_byte_identical(cli_env, trained_dir, tmp_path):
    root, cfg = cli_env
    out = tmp_path / "eval_idem"
    args = ["eval", "--config", str(cfg), "--out", str(out),
            "--checkpoint", str(trained_dir / "best.ckpt")]
    assert main(args) == 0
    snapshot = {p.name: p.read_bytes() for p in out.iterdir()
                if p.name != ".lock"}
    assert main(args) == 0
    for name, blob in snapshot.items():
        assert (out / name).read_bytes() == blob, name


def test_checkpoint_config_mismatch_exits_5(cli_env, trained_dir, tmp_path):
    root, cfg = cli_env
    code = main(["eval", "--config", str(cfg), "--out", str(tmp_path / "x"),
                 "--checkpoint", str(trained_dir / "best.ckpt"),
                 "--model.base_width", "16"])
    assert code == 5


def test_predict_masks_are_binary_255(cli_env, trained_dir, tmp_path):
    root, cfg = cli_env
    out = tmp_path / "pred_out"
    code = main(["predict", "--config", str(cfg), "--out", str(out),
                 "--checkpoint", str(trained_dir / "best.ckpt"),
                 "--split", "test", "--overlay"])
    assert code == 0
    masks = sorted(out.glob("*_mask.pgm"))
    assert len(masks) == 2
    for path in masks:
        values = set(np.unique(decode_image_file(path)))
        assert values <= {0, 255}


def test_overlay_colors_follow_legend(cli_env, trained_dir, tmp_path):
    root, cfg = cli_env
    out = tmp_path / "ovl_out"
    main(["predict", "--config", str(cfg), "--out", str(out),
          "--checkpoint", str(trained_dir / "best.ckpt"),
          "--split", "test", "--overlay"])
    overlays = sorted(out.glob("*_overlay.ppm"))
    assert overlays
    legend = {(0, 0, 0), (0, 255, 0), (0, 0, 255), (255, 0, 0)}
    for path in overlays:
        rgb = decode_image_file(path)
        pixels = {tuple(px) for px in rgb.reshape(3, -1).T}
        assert pixels <= legend


def test_params_prints_totals_and_reference_delta(capsys):
    assert main(["params"]) == 0
    out = capsys.readouterr().out
    assert "total 30035" in out
    assert "trainable 29053" in out
    assert "non-trainable 982" in out
    assert "37685" in out.replace(",", "") or "37,685" in out
    assert "36657" in out.replace(",", "") or "36,657" in out
    assert "stem.weight" in out  # per-layer rows present


def test_gradcheck_command_exits_zero(capsys):
    assert main(["gradcheck"]) == 0
    out = capsys.readouterr().out
    assert "max rel err" in out
    assert "FAIL" not in out


def test_ablate_writes_comparison_rows(cli_env, tmp_path):
    root, cfg = cli_env
    out = tmp_path / "ablate_out"
    code = main(["ablate", "--config", str(cfg), "--out", str(out),
                 "--specs", "dice,alpha(dice+bce+jacc)",
                 "--train.epochs", "1"])
    assert code == 0
    rows = [json.loads(line)
            for line in (out / "ablation.jsonl").read_text().splitlines()]
    assert [r["spec"] for r in rows] == ["dice", "alpha(dice+bce+jacc)"]
    table = (out / "ablation.txt").read_text()
    assert "jaccard" in table


def test_output_directory_lock_blocks_second_writer(cli_env, tmp_path):
    root, cfg = cli_env
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".lock").write_text("1234")
    code = main(["params", "--config", str(cfg), "--out", str(out)])
    assert code == 2


def test_thread_cap_env_validated(monkeypatch, capsys):
    monkeypatch.setenv("MININET_THREADS", "lots")
    assert main(["params"]) == 2
    monkeypatch.setenv("MININET_THREADS", "0")
    assert main(["params"]) == 0


def test_effective_config_reproduces_run(cli_env, tmp_path):
    root, cfg = cli_env
    first = tmp_path / "first"
    assert main(["train", "--config", str(cfg), "--out", str(first),
                 "--train.epochs", "1"]) == 0
    second = tmp_path / "second"
    assert main(["train", "--config", str(first / "effective.cfg"),
                 "--out", str(second)]) == 0
    assert (first / "best.ckpt").read_bytes() == (second / "best.ckpt").read_bytes()
