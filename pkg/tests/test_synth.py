import json

import numpy as np
import pytest

from fanet.errors import ConfigError, ValidationError
from fanet.netpbm import pgm_read, ppm_read
from fanet.synth import (
    SceneSpec,
    alpha_composite,
    generate_scene,
    generate_split,
    load_split,
)


class TestGenerateScene:
    def test_no_objects_all_background(self):
        spec = SceneSpec(seed=3, size=32, objects_min=0, objects_max=0)
        sample = generate_scene(spec, 0)
        assert sample.mask.max() == 0
        assert sample.meta == []

    def test_deterministic_per_index(self):
        spec = SceneSpec(seed=5, size=48)
        a = generate_scene(spec, 17)
        b = generate_scene(spec, 17)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask, b.mask)
        assert a.meta == b.meta

    def test_different_indices_differ(self):
        spec = SceneSpec(seed=5, size=48)
        a = generate_scene(spec, 0)
        b = generate_scene(spec, 1)
        assert not np.array_equal(a.image, b.image)

    def test_image_range_and_mask_values(self):
        spec = SceneSpec(seed=9, size=40)
        sample = generate_scene(spec, 2)
        assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0
        assert set(np.unique(sample.mask)) <= set(range(5))

    def test_translucent_single_object_compositing(self):
        spec = SceneSpec(
            seed=11,
            size=48,
            objects_min=1,
            objects_max=1,
            translucent_fraction=1.0,
            clutter_patches=0,
        )
        for index in range(5):
            sample = generate_scene(spec, index)
            if not sample.meta:
                continue
            meta = sample.meta[0]
            assert meta["translucent"] is True
            background = generate_scene(
                SceneSpec(
                    seed=11,
                    size=48,
                    objects_min=0,
                    objects_max=0,
                    translucent_fraction=1.0,
                    clutter_patches=0,
                ),
                index,
            )
            inside = sample.mask == meta["class"]
            alpha = meta["alpha"]
            color = np.array(meta["color"])
            expected = alpha * color[None, :] + (1 - alpha) * background.image[inside]
            assert np.abs(sample.image[inside] - expected).max() < 1e-6
            # ground truth stays opaque even though the appearance is blended
            assert inside.sum() > 0 and sample.mask[inside].min() > 0

    def test_mask_meta_consistency(self):
        spec = SceneSpec(seed=21, size=64)
        for index in range(4):
            sample = generate_scene(spec, index)
            boxes = {}
            for rec in sample.meta:
                boxes.setdefault(rec["class"], []).append(rec["bbox"])
            ys, xs = np.nonzero(sample.mask)
            for y, x in zip(ys, xs):
                cls = int(sample.mask[y, x])
                assert any(
                    y0 <= y <= y1 and x0 <= x <= x1 for y0, x0, y1, x1 in boxes.get(cls, [])
                ), f"pixel ({y},{x}) class {cls} outside every object bbox"

    def test_centers_inside_image(self):
        spec = SceneSpec(seed=33, size=32)
        sample = generate_scene(spec, 0)
        for rec in sample.meta:
            cx, cy = rec["center"]
            assert 0 <= cx <= spec.size - 1 and 0 <= cy <= spec.size - 1


def test_alpha_composite_white_disk_on_black():
    canvas = np.zeros((16, 16, 3))
    yy, xx = np.mgrid[0:16, 0:16]
    disk = (yy - 8) ** 2 + (xx - 8) ** 2 <= 16
    alpha_composite(canvas, disk, np.array([1.0, 1.0, 1.0]), 0.5)
    assert np.abs(canvas[disk] - 0.5).max() < 1e-12
    assert np.abs(canvas[~disk]).max() == 0.0


class TestGenerateSplit:
    def test_counts_and_disjoint_indices(self, tmp_path):
        spec = SceneSpec(seed=2, size=32)
        manifest = generate_split(spec, tmp_path, 6, 2, 3)
        names = {}
        for split in ("train", "val", "test"):
            entry = manifest["splits"][split]
            assert entry["count"] == {"train": 6, "val": 2, "test": 3}[split]
            names[split] = set(entry["images"])
            for file_name in entry["images"]:
                assert (tmp_path / split / file_name).exists()
        assert not (names["train"] & names["val"])
        assert not (names["train"] & names["test"])
        assert not (names["val"] & names["test"])

    def test_regeneration_byte_identical(self, tmp_path):
        spec = SceneSpec(seed=4, size=32)
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        generate_split(spec, a_dir, 3, 1, 1)
        generate_split(spec, b_dir, 3, 1, 1)
        for rel in sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file()):
            assert (a_dir / rel).read_bytes() == (b_dir / rel).read_bytes(), rel

    def test_zero_count_rejected(self, tmp_path):
        with pytest.raises(ValidationError, match="train count must be >= 1"):
            generate_split(SceneSpec(seed=1), tmp_path, 0, 1, 1)

    def test_manifest_sorted_and_loadable(self, tmp_path):
        generate_split(SceneSpec(seed=6, size=32), tmp_path, 2, 1, 1)
        raw = (tmp_path / "manifest.json").read_text()
        assert raw == json.dumps(json.loads(raw), sort_keys=True, indent=2) + "\n"
        images, masks = load_split(tmp_path, "val")
        assert images.shape == (1, 3, 32, 32) and masks.shape == (1, 32, 32)
        assert images.dtype == np.float32 and 0.0 <= images.min() <= images.max() <= 1.0

    def test_class_histogram_nondegenerate(self, tmp_path):
        spec = SceneSpec(seed=7, size=32)
        generate_split(spec, tmp_path, 40, 1, 1)
        counts = np.zeros(5, dtype=np.int64)
        for i in range(40):
            mask = pgm_read(tmp_path / "train" / f"mask_{i:04d}.pgm")
            counts += np.bincount(mask.ravel(), minlength=5)
        fractions = counts / counts.sum()
        for cls in range(1, 5):
            assert fractions[cls] >= 0.01, f"class {cls} occupies {fractions[cls]:.2%}"

    def test_written_files_match_scene(self, tmp_path):
        spec = SceneSpec(seed=8, size=32)
        generate_split(spec, tmp_path, 1, 1, 1)
        sample = generate_scene(spec, 0)
        img = ppm_read(tmp_path / "train" / "image_0000.ppm")
        assert np.array_equal(img, np.clip(np.rint(sample.image * 255), 0, 255).astype(np.uint8))
        mask = pgm_read(tmp_path / "train" / "mask_0000.pgm")
        assert np.array_equal(mask, sample.mask)


def test_spec_validation():
    with pytest.raises(ConfigError):
        SceneSpec(alpha_min=0.0)
    with pytest.raises(ConfigError):
        SceneSpec(scale_min=0.0)
    with pytest.raises(ConfigError):
        SceneSpec(num_classes=4)
    with pytest.raises(ConfigError):
        SceneSpec(objects_min=5, objects_max=2)


def test_load_split_missing_manifest(tmp_path):
    with pytest.raises(ValidationError, match="manifest"):
        load_split(tmp_path, "train")
