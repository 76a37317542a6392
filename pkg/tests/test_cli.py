import json
import subprocess
import sys

import numpy as np
import pytest
from PIL import Image

from xgans.cli import main
from xgans.corruption import load_sample

SIZE = 32


@pytest.fixture
def images(tmp_path):
    folder = tmp_path / "imgs"
    folder.mkdir()
    rng = np.random.default_rng(0)
    for i in range(4):
        Image.fromarray(rng.integers(0, 256, (40, 40, 3), dtype=np.uint8)).save(folder / f"p{i}.png")
    return folder


@pytest.fixture
def tiny_config(tmp_path):
    cfg = {"train": {
        "image_size": SIZE, "max_iterations": 2, "extractor": "random",
        "generator": {"base_channels": 4, "residual_blocks": 1},
        "discriminator": {"base_channels": 4, "layers": 2},
    }}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def snapshot(folder):
    return {p.name: p.read_bytes() for p in sorted(folder.iterdir())}


def test_corrupt_is_deterministic(images, tmp_path):
    for out in ("a", "b"):
        assert main(["corrupt", "--input", str(images), "--output", str(tmp_path / out),
                     "--kind", "uniform", "--keep", "0.1", "--size", str(SIZE), "--seed", "42"]) == 0
    a, b = snapshot(tmp_path / "a"), snapshot(tmp_path / "b")
    assert a == b and len(a) == 16
    s = load_sample(tmp_path / "a", "p0")
    assert s.mask.mean() == pytest.approx(0.1, abs=0.08)


def test_corrupt_keep_one_is_identity(images, tmp_path):
    assert main(["corrupt", "--input", str(images), "--output", str(tmp_path / "o"),
                 "--kind", "feature_points_white", "--keep", "1.0", "--size", str(SIZE)]) == 0
    s = load_sample(tmp_path / "o", "p1")
    assert np.array_equal(s.source, s.real) and s.mask.all()


def test_corrupt_clutter_sizes(images, tmp_path):
    assert main(["corrupt", "--input", str(images), "--output", str(tmp_path / "o"),
                 "--kind", "clutter", "--max-block", "24", "--donor", str(images), "--size", "64"]) == 0
    for i in range(4):
        m = ~load_sample(tmp_path / "o", f"p{i}").mask
        rows, cols = np.nonzero(m)
        side = rows.max() - rows.min() + 1
        assert 16 <= side <= 24 and side == cols.max() - cols.min() + 1


def test_corrupt_config_errors(images, tmp_path):
    assert main(["corrupt", "--input", str(images), "--output", str(tmp_path / "o"), "--kind", "clutter"]) == 2
    assert main(["corrupt", "--input", str(images), "--output", str(tmp_path / "o"),
                 "--kind", "uniform", "--keep", "1.5"]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["corrupt", "--input", str(images), "--output", str(tmp_path / "o"), "--kind", "bogus"])
    assert exc.value.code == 2


def test_train_dry_run(images, tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--data", str(images), "--out", str(out),
                 "--max-iterations", "0"]) == 0
    assert (out / "checkpoints" / "ckpt_0000000.pt").exists()
    assert (out / "manifest.json").exists() and (out / "experiment.json").exists()


def test_train_resume_and_reconstruct(images, tmp_path, tiny_config):
    out = tmp_path / "run"
    base = ["train", "--config", str(tiny_config), "--data", str(images), "--out", str(out)]
    assert main(base) == 0
    assert main(base + ["--max-iterations", "3", "--resume", str(out / "checkpoints" / "latest.pt")]) == 0
    lines = (out / "losses.csv").read_text().splitlines()
    assert [ln.split(",")[0] for ln in lines[1:]] == ["1", "2", "3"]

    corrupted = tmp_path / "corrupted"
    assert main(["corrupt", "--input", str(images), "--output", str(corrupted), "--kind", "uniform",
                 "--keep", "0.2", "--size", str(SIZE)]) == 0
    recon = tmp_path / "recon"
    assert main(["reconstruct", "--checkpoint", str(out / "checkpoints" / "latest.pt"), "--input", str(corrupted),
                 "--sources-only", "--output", str(recon), "--dump-triptych"]) == 0
    for i in range(4):
        assert Image.open(recon / f"p{i}_recon.png").size == (SIZE, SIZE)
        assert Image.open(recon / f"p{i}_triptych.png").size == (3 * SIZE, SIZE)


def test_train_point_loss_follows_task(images, tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--data", str(images), "--out", str(out),
                 "--max-iterations", "0", "--kind", "noise"]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["weights"]["point_loss_enabled"] is False
    assert main(["train", "--config", str(tiny_config), "--data", str(images), "--out", str(out),
                 "--max-iterations", "0", "--kind", "block", "--block-size", "16"]) == 0
    cfg = json.loads((out / "config.json").read_text())
    assert cfg["weights"]["point_loss_enabled"] is True


def test_train_config_errors(images, tmp_path, tiny_config):
    out = str(tmp_path / "run")
    assert main(["train", "--config", str(tiny_config), "--out", out]) == 2  # no data
    assert main(["train", "--config", str(tiny_config), "--data", str(images), "--out", out,
                 "--image-size", "30"]) == 2
    assert main(["train", "--config", str(tiny_config), "--data", str(images), "--out", out,
                 "--kind", "clutter"]) == 2
    assert main(["train", "--config", str(tmp_path / "missing.json"), "--data", str(images)]) == 2
    assert main(["train", "--config", str(tiny_config), "--data", str(images), "--out", out,
                 "--lambda-fm", "-1"]) == 2


def test_reconstruct_rejects_indivisible_size(images, tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--data", str(images), "--out", str(out),
                 "--max-iterations", "0"]) == 0
    odd = tmp_path / "odd.png"
    Image.fromarray(np.zeros((30, 30, 3), np.uint8)).save(odd)
    ckpt = str(out / "checkpoints" / "latest.pt")
    assert main(["reconstruct", "--checkpoint", ckpt, "--input", str(odd)]) == 2
    assert main(["reconstruct", "--checkpoint", ckpt, "--input", str(odd), "--size", "32"]) == 0
    assert main(["reconstruct", "--checkpoint", str(tmp_path / "nope.pt"), "--input", str(odd)]) == 2


def test_evaluate_compare_and_plot(images, tmp_path, tiny_config):
    out = tmp_path / "run"
    assert main(["train", "--config", str(tiny_config), "--data", str(images), "--out", str(out),
                 "--max-iterations", "0"]) == 0
    ev = tmp_path / "eval"
    args = ["evaluate", "--checkpoint", str(out / "checkpoints" / "latest.pt"), "--val", str(images),
            "--out", str(ev), "--compare", "uniform,feature", "--keep", "0.05,0.1"]
    assert main(args) == 0
    text = (ev / "metrics.csv").read_text()
    assert len(text.splitlines()) == 1 + 2 * 2 * 4
    assert (ev / "psnr.png").exists() and (ev / "ssim.png").exists()
    assert main(args) == 0
    assert (ev / "metrics.csv").read_text() == text

    single = tmp_path / "single.csv"
    single.write_text("kind,param,image_id,psnr_db,ssim\nuniform_points_white,0.100000,a,20.000000,0.500000\n")
    assert main(["plot", "--csv", str(single), "--format", "svg", "--out", str(tmp_path / "s.svg")]) == 0
    assert (tmp_path / "s.svg").stat().st_size > 0
    assert main(["plot", "--csv", str(tmp_path / "none.csv")]) == 2


def test_evaluate_empty_val_set(images, tmp_path, tiny_config):
    out = tmp_path / "run"
    main(["train", "--config", str(tiny_config), "--data", str(images), "--out", str(out), "--max-iterations", "0"])
    empty = tmp_path / "empty"
    empty.mkdir()
    code = main(["evaluate", "--checkpoint", str(out / "checkpoints" / "latest.pt"), "--val", str(empty),
                 "--out", str(tmp_path / "ev")])
    assert code != 0


def test_unreadable_image_is_runtime_error(tmp_path):
    folder = tmp_path / "bad"
    folder.mkdir()
    (folder / "x.png").write_bytes(b"not a png")
    assert main(["corrupt", "--input", str(folder), "--output", str(tmp_path / "o"), "--kind", "uniform"]) == 3


def test_output_root_env(images, tmp_path, monkeypatch):
    monkeypatch.setenv("XGANS_OUTPUT_ROOT", str(tmp_path / "root"))
    assert main(["corrupt", "--input", str(images), "--output", "rel", "--kind", "uniform",
                 "--size", str(SIZE)]) == 0
    assert (tmp_path / "root" / "rel" / "p0_source.png").exists()


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "xgans.cli", "--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for cmd in ("corrupt", "train", "reconstruct", "evaluate", "plot"):
        assert cmd in out.stdout


def test_evaluate_ablation(images, tmp_path, tiny_config):
    out = tmp_path / "abl"
    assert main(["evaluate", "--ablate", "--config", str(tiny_config), "--data", str(images), "--val", str(images),
                 "--out", str(out), "--max-iterations", "1", "--keep", "0.1", "--limit", "2"]) == 0
    for variant in ("l2", "l1", "none"):
        assert (out / f"metrics_{variant}.csv").exists()
    assert (out / "ablation.csv").exists()
