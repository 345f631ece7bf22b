import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from fanet.backbone import FANetConfig
from fanet.cli import main
from fanet.enhance import EnhanceParams, contrast_enhance, sharpen
from fanet.head import HeadConfig
from fanet.model import SegModel
from fanet.netpbm import pgm_read, ppm_read, ppm_write
from fanet.synth import SceneSpec, generate_scene

TINY = {
    "model": {"stage_channels": [4, 8, 16, 32], "stage_depths": [1, 1, 1, 1]},
    "head": {"fpn_channels": 8},
    "train": {"max_iters": 6, "eval_interval": 3},
}


def tree_digest(root: Path) -> dict:
    out = {}
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        out[str(path.relative_to(root))] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def write_config(tmp_path, extra=None) -> Path:
    cfg = json.loads(json.dumps(TINY))
    if extra:
        cfg.update(extra)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(cfg, sort_keys=True, indent=2))
    return path


class TestGenData:
    def test_counts_and_manifest(self, tmp_path, capsys):
        out = tmp_path / "data"
        code = main(
            ["gen-data", "--seed", "7", "--out", str(out), "--train", "5", "--val", "2",
             "--test", "2", "--size", "32"]
        )
        assert code == 0
        printed = capsys.readouterr().out
        assert "train: 5 samples" in printed
        assert len(list((out / "train").glob("image_*.ppm"))) == 5
        assert (out / "manifest.json").exists()
        assert (out / "resolved_gen_data.json").exists()

    def test_rerun_byte_identical(self, tmp_path):
        args = ["gen-data", "--seed", "3", "--train", "3", "--val", "1", "--test", "1",
                "--size", "32"]
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b)]) == 0
        da, db = tree_digest(a), tree_digest(b)
        da.pop("resolved_gen_data.json")
        db.pop("resolved_gen_data.json")  # embeds the out path itself
        assert da == db

    def test_zero_train_count_exit_1(self, tmp_path, capsys):
        code = main(["gen-data", "--out", str(tmp_path / "x"), "--train", "0",
                     "--val", "1", "--test", "1"])
        assert code == 1
        assert "train count must be >= 1" in capsys.readouterr().err


class TestTrain:
    def test_train_writes_artifacts(self, tiny_dataset, tmp_path):
        out = tmp_path / "run"
        cfg = write_config(tmp_path)
        code = main(["train", "--config", str(cfg), "--data", str(tiny_dataset),
                     "--out", str(out), "--seed", "1"])
        assert code == 0
        for name in ("model.fant", "loss.csv", "resolved_train.json", "checkpoint.fant"):
            assert (out / name).exists(), name

    def test_resolved_config_reproduces_run(self, tiny_dataset, tmp_path):
        out = tmp_path / "run"
        cfg = write_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--data", str(tiny_dataset),
                     "--out", str(out), "--seed", "2"]) == 0
        first = tree_digest(out)
        # replay from the resolved config alone, no other flags
        assert main(["train", "--config", str(out / "resolved_train.json")]) == 0
        assert tree_digest(out) == first

    def test_toggle_flags_reach_model(self, tiny_dataset, tmp_path):
        out = tmp_path / "ablated"
        cfg = write_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--data", str(tiny_dataset),
                     "--out", str(out), "--seed", "0",
                     "--no-scm", "--no-frm-high", "--no-frm-low"]) == 0
        resolved = json.loads((out / "resolved_train.json").read_text())
        assert resolved["model"]["scm_enabled"] is False
        assert resolved["model"]["frm_high_freq"] is False
        assert resolved["model"]["frm_low_freq"] is False
        from fanet.checkpoint import load_checkpoint

        names = set(load_checkpoint(out / "model.fant"))
        assert not any(".scm." in n or ".frm." in n for n in names)

    def test_unknown_config_key_rejected(self, tiny_dataset, tmp_path, capsys):
        cfg = write_config(tmp_path, {"trian": {}})
        code = main(["train", "--config", str(cfg), "--data", str(tiny_dataset),
                     "--out", str(tmp_path / "x")])
        assert code == 1
        assert "trian" in capsys.readouterr().err

    def test_unknown_section_key_rejected(self, tiny_dataset, tmp_path, capsys):
        cfg = write_config(tmp_path, {"train": {"max_iters": 4, "lr": 1.0}})
        code = main(["train", "--config", str(cfg), "--data", str(tiny_dataset),
                     "--out", str(tmp_path / "x")])
        assert code == 1
        assert "'lr'" in capsys.readouterr().err


@pytest.fixture(scope="module")
def trained_run(tiny_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    cfg_path = out / "config.json"
    cfg_path.write_text(json.dumps(TINY))
    assert main(["train", "--config", str(cfg_path), "--data", str(tiny_dataset),
                 "--out", str(out / "run"), "--seed", "5"]) == 0
    return out / "run"


class TestEval:
    def test_eval_prints_table_and_writes_json(self, tiny_dataset, trained_run, tmp_path, capsys):
        out = tmp_path / "metrics"
        code = main(["eval", "--checkpoint", str(trained_run / "model.fant"),
                     "--data", str(tiny_dataset), "--split", "val", "--out", str(out)])
        assert code == 0
        printed = capsys.readouterr().out
        assert "mIoU" in printed and "pix acc" in printed
        payload = json.loads((out / "metrics_val.json").read_text())
        assert set(payload) >= {"confusion", "miou", "pixel_acc", "per_class_iou"}
        # report JSON is stable under a load/dump round trip
        assert json.dumps(payload, sort_keys=True) == json.dumps(
            json.loads(json.dumps(payload, sort_keys=True)), sort_keys=True
        )

    def test_dump_masks(self, tiny_dataset, trained_run, tmp_path):
        out = tmp_path / "masks"
        code = main(["eval", "--checkpoint", str(trained_run / "model.fant"),
                     "--data", str(tiny_dataset), "--split", "val", "--out", str(out),
                     "--dump-masks"])
        assert code == 0
        masks = sorted(out.glob("pred_val_*.pgm"))
        assert len(masks) == 4
        assert pgm_read(masks[0]).shape == (64, 64)

    def test_missing_checkpoint_exit_1(self, tiny_dataset, tmp_path, capsys):
        code = main(["eval", "--checkpoint", str(tmp_path / "nope.fant"),
                     "--data", str(tiny_dataset)])
        assert code == 1
        assert "nope.fant" in capsys.readouterr().err

    def test_eval_rerun_identical_json(self, tiny_dataset, trained_run, tmp_path):
        out = tmp_path / "m2"
        args = ["eval", "--checkpoint", str(trained_run / "model.fant"),
                "--data", str(tiny_dataset), "--split", "val", "--out", str(out)]
        assert main(args) == 0
        first = (out / "metrics_val.json").read_bytes()
        assert main(args) == 0
        assert (out / "metrics_val.json").read_bytes() == first


class TestGradcheckCommand:
    def test_ops_scope_passes(self, capsys):
        assert main(["gradcheck", "--scope", "ops"]) == 0
        printed = capsys.readouterr().out
        assert "conv2d_dense" in printed and "within" in printed

    def test_invalid_scope_usage_error(self, capsys):
        assert main(["gradcheck", "--scope", "everything"]) == 1
        assert "scope" in capsys.readouterr().err


class TestEnhance:
    def test_four_panels_and_oracle(self, tmp_path):
        sample = generate_scene(SceneSpec(seed=13, size=32), 0)
        src = tmp_path / "scene.ppm"
        ppm_write(src, sample.image)
        out = tmp_path / "panels"
        assert main(["enhance", "--in", str(src), "--out", str(out)]) == 0
        for name in ("sharpened", "contrast_map", "contrast_enhanced", "combined"):
            assert (out / f"{name}.ppm").exists()
        # the combined panel equals the module-level composition before quantization
        params = EnhanceParams()
        f = ppm_read(src).astype(np.float64) / 255.0
        expected = np.stack(
            [
                np.clip(sharpen(f[:, :, c], params.c) + contrast_enhance(f[:, :, c], params), 0, 1)
                for c in range(3)
            ],
            axis=2,
        )
        written = ppm_read(out / "combined.ppm")
        assert np.array_equal(written, np.clip(np.rint(expected * 255), 0, 255).astype(np.uint8))

    def test_constant_gray_sharpen_identity(self, tmp_path):
        src = tmp_path / "gray.pgm"
        from fanet.netpbm import pgm_write

        pgm_write(src, np.full((16, 16), 0.5))
        out = tmp_path / "panels"
        assert main(["enhance", "--in", str(src), "--out", str(out)]) == 0
        assert np.array_equal(pgm_read(out / "sharpened.pgm"), pgm_read(src))

    def test_disabled_enhancement_is_identity(self, tmp_path):
        sample = generate_scene(SceneSpec(seed=14, size=32), 1)
        src = tmp_path / "scene.ppm"
        ppm_write(src, sample.image)
        out = tmp_path / "panels"
        assert main(["enhance", "--in", str(src), "--out", str(out),
                     "--c", "0", "--gamma", "0"]) == 0
        assert np.array_equal(ppm_read(out / "combined.ppm"), ppm_read(src))


def build_frozen_probe_model(tmp_path) -> Path:
    """Stage-1 FRM frozen to a box smoother behind a tap-sampling stem."""
    cfg = FANetConfig(stage_channels=(8, 8, 8, 8), stage_depths=(1, 1, 1, 1))
    model = SegModel(cfg, HeadConfig(fpn_channels=8, num_classes=5), seed=0)
    bb = model.backbone
    w = np.zeros_like(bb.stem.weight.data)
    taps = [(0, 0), (0, 2), (2, 0), (2, 2), (1, 1), (3, 3), (4, 2), (2, 4)]
    for c, (i, j) in enumerate(taps):
        w[c, :, i, j] = 1.0 / 3.0
    bb.stem.weight.data = w
    bb.stem.bias.data = np.array([0.9, -0.3, 0.5, -0.7, 0.2, -0.1, 0.6, -0.5], dtype=np.float32)
    block = bb.stages[0][0]
    block.ce.weight.data = np.zeros_like(block.ce.weight.data)
    block.ce.bias.data = np.zeros_like(block.ce.bias.data)
    squeeze = np.zeros_like(block.squeeze.weight.data)
    for k in range(4):
        squeeze[k, k, 0, 0] = 1.0
    block.squeeze.weight.data = squeeze
    block.squeeze.bias.data = np.zeros_like(block.squeeze.bias.data)
    box = np.zeros_like(block.frm.down.weight.data)
    box[:, 0, 1:3, 1:3] = 0.25
    block.frm.down.weight.data = box
    block.frm.down.bias.data = np.zeros_like(block.frm.down.bias.data)

    run = tmp_path / "frozen"
    run.mkdir()
    model.save(run / "model.fant")
    (run / "resolved_train.json").write_text(
        json.dumps(
            {
                "command": "train",
                "model": {"stage_channels": [8, 8, 8, 8], "stage_depths": [1, 1, 1, 1]},
                "head": {"fpn_channels": 8},
            }
        )
    )
    return run / "model.fant"


class TestDumpFeatures:
    def test_four_files_for_full_model(self, trained_run, tiny_dataset, tmp_path):
        img = next((Path(tiny_dataset) / "val").glob("image_*.ppm"))
        out = tmp_path / "maps"
        code = main(["dump-features", "--checkpoint", str(trained_run / "model.fant"),
                     "--in", str(img), "--stage", "3", "--out", str(out)])
        assert code == 0
        for name in ("f", "r", "s", "fbar"):
            assert (out / f"{name}.pgm").exists()
            # stage 3 sits at stride 16: 64px input gives 4x4 maps
            assert pgm_read(out / f"{name}.pgm").shape == (4, 4)

    def test_scm_only_checkpoint_errors(self, tiny_dataset, tmp_path, capsys):
        out = tmp_path / "scm_run"
        cfg = write_config(tmp_path)
        assert main(["train", "--config", str(cfg), "--data", str(tiny_dataset),
                     "--out", str(out), "--seed", "0", "--no-frm-high", "--no-frm-low"]) == 0
        img = next((Path(tiny_dataset) / "val").glob("image_*.ppm"))
        code = main(["dump-features", "--checkpoint", str(out / "model.fant"),
                     "--in", str(img), "--stage", "2", "--out", str(tmp_path / "maps")])
        assert code == 1
        assert "no FRM" in capsys.readouterr().err

    def test_frequency_separation_on_composite_input(self, tmp_path):
        checkpoint = build_frozen_probe_model(tmp_path)
        img = np.full((64, 64, 3), 0.5)
        yy, xx = np.mgrid[0:64, 0:64]
        checker = (((yy // 4) + (xx // 4)) % 2).astype(np.float64)
        img[:, 32:, :] = checker[:, 32:, None]
        src = tmp_path / "probe.ppm"
        ppm_write(src, img)
        out = tmp_path / "maps"
        assert main(["dump-features", "--checkpoint", str(checkpoint),
                     "--in", str(src), "--stage", "1", "--out", str(out)]) == 0
        r = pgm_read(out / "r.pgm").astype(np.float64)
        s = pgm_read(out / "s.pgm").astype(np.float64)
        # detail map lights up on the checkerboard half, blob map on the flat half
        assert r[:, 8:].mean() > r[:, :8].mean() + 25
        assert s[:, :8].mean() > s[:, 8:].mean() + 25


def test_exit_code_contract(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path / "d"), "--train", "0",
                 "--val", "1", "--test", "1"]) == 1
    capsys.readouterr()
    assert main(["nonsense-command"]) == 1
