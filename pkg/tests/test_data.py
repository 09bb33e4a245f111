"""Manifests, splitting, tiling, augmentation, synthetic sets and batching."""
import numpy as np
import pytest
from PIL import Image

from msfcn.core.tensor import IGNORE_INDEX
from msfcn.core.tns import load_tensor, save_tensor
from msfcn.data.augment import AugmentSpec, augment, blur, draw_rng
from msfcn.data.loader import PatchDataset, epoch_order, iter_batches
from msfcn.data.manifest import (
    DatasetManifest,
    ManifestEntry,
    load_image,
    load_label,
    read_manifest,
    split_counts,
    split_dataset,
    write_manifest,
)
from msfcn.data.preview import IGNORE_RGB, PALETTE, colourize, save_png
from msfcn.data.synth import MANIFEST_NAME, synth_shapes, synth_temporal, temporal_sequences
from msfcn.data.tiling import (
    Rect,
    apply_region_mask,
    grid_for,
    read_mask,
    supervised,
    tile_patches,
    untile,
)
from msfcn.errors import ConfigError, DataError


def _pair(tmp_path, name, h, w, c=1, t=1, value=0.0, label=0):
    img = save_tensor(np.full((c, t, h, w), value, np.float32), tmp_path / f"{name}.tns")
    lbl = save_tensor(np.full((h, w), label, np.uint16), tmp_path / f"{name}_lbl.tns")
    return ManifestEntry(img, lbl)


# =============================================================================
# Tiling
# =============================================================================


class TestTiling:
    @pytest.mark.parametrize(
        "h, w, padded, count",
        [(1417, 2652, (1536, 2816), 66), (1163, 2102, (1280, 2304), 45), (256, 256, (256, 256), 1)],
    )
    def test_grid_arithmetic(self, h, w, padded, count):
        grid = grid_for(h, w, 256)
        assert grid.padded == padded
        assert len(grid) == count

    def test_round_trip(self, rng):
        image = rng.standard_normal((2, 1, 10, 13)).astype(np.float32)
        label = rng.integers(0, 3, size=(10, 13)).astype(np.uint16)
        grid, patches = tile_patches(image, label, 4)
        assert (grid.rows, grid.cols) == (3, 4)
        assert [(p.row, p.col) for p in patches[:5]] == [(0, 0), (0, 1), (0, 2), (0, 3), (1, 0)]
        assert all(p.image.shape == (2, 1, 4, 4) for p in patches)
        np.testing.assert_array_equal(untile([(p.image, (p.row, p.col)) for p in patches], grid), image)
        np.testing.assert_array_equal(untile([(p.label, (p.row, p.col)) for p in reversed(patches)], grid), label)

    def test_padding_is_ignored(self, rng):
        label = np.zeros((10, 13), np.uint16)
        grid, patches = tile_patches(np.zeros((1, 1, 10, 13), np.float32), label, 4)
        last = patches[-1]
        assert (last.label[2:, :] == IGNORE_INDEX).all()
        assert (last.label[:, 1:] == IGNORE_INDEX).all()
        assert (last.image[..., 2:, :] == 0).all()

    def test_missing_cell(self, rng):
        grid, patches = tile_patches(np.zeros((1, 1, 8, 8), np.float32), np.zeros((8, 8), np.uint16), 4)
        pieces = [(p.label, (p.row, p.col)) for p in patches if (p.row, p.col) != (1, 0)]
        with pytest.raises(DataError, match=r"missing grid cell \(row=1, col=0\)"):
            untile(pieces, grid)

    def test_duplicate_and_outside_cells(self):
        grid = grid_for(4, 4, 2)
        tile = np.zeros((2, 2))
        with pytest.raises(DataError, match="duplicate"):
            untile([(tile, (0, 0)), (tile, (0, 0))], grid)
        with pytest.raises(DataError, match="outside"):
            untile([(tile, (2, 0))], grid)

    def test_label_extent_mismatch(self):
        with pytest.raises(DataError):
            tile_patches(np.zeros((1, 1, 4, 4), np.float32), np.zeros((4, 5), np.uint16), 2)

    def test_region_mask(self, tmp_path):
        path = tmp_path / "mask.csv"
        path.write_text("x0,y0,x1,y1\n0,0,2,1\n")
        rects = read_mask(path)
        assert rects == [Rect(0, 0, 2, 1)]
        masked = apply_region_mask(np.ones((4, 4), np.uint16), rects)
        assert masked[0, :2].tolist() == [1, 1]
        assert (masked[1:] == IGNORE_INDEX).all() and (masked[0, 2:] == IGNORE_INDEX).all()
        _, patches = tile_patches(np.zeros((1, 1, 4, 4), np.float32), masked, 2)
        kept = supervised(patches)
        assert [(p.row, p.col) for p in kept] == [(0, 0)]

    def test_bad_mask(self, tmp_path):
        path = tmp_path / "mask.csv"
        path.write_text("3,0,1,2\n")
        with pytest.raises(DataError):
            read_mask(path)


# =============================================================================
# Manifests and splits
# =============================================================================


class TestSplit:
    @pytest.mark.parametrize("n, expected", [(7, (4, 1, 2)), (10, (6, 2, 2)), (3, (1, 0, 2)), (100, (60, 20, 20))])
    def test_counts(self, n, expected):
        assert split_counts(n) == expected

    def test_too_few(self):
        with pytest.raises(DataError):
            split_counts(2)

    def test_fractions_must_sum_to_one(self):
        with pytest.raises(DataError):
            split_counts(10, (0.5, 0.2, 0.2))

    def test_seeded_and_disjoint(self):
        entries = [ManifestEntry(f"i{n}.tns", f"l{n}.tns") for n in range(10)]
        a = split_dataset(entries, seed=3)
        b = split_dataset(entries, seed=3)
        assert a.entries == b.entries
        assert a.counts() == {"train": 6, "val": 2, "test": 2}
        assert sorted(str(e.image) for e in a.entries) == sorted(str(e.image) for e in entries)
        others = [[e.split for e in split_dataset(entries, seed=s).entries] for s in range(4, 9)]
        assert any(o != [e.split for e in a.entries] for o in others)


class TestManifest:
    def test_round_trip(self, tmp_path):
        entries = [_pair(tmp_path, f"p{i}", 4, 4, c=2, t=3) for i in range(3)]
        m = DatasetManifest(entries, num_classes=5, channels=2, time_steps=3, patch=4, fractions=(0.6, 0.2, 0.2))
        path = write_manifest(m, tmp_path / "m.csv")
        text = path.read_text()
        assert "# num_classes=5" in text
        assert "p0.tns,p0_lbl.tns,train" in text
        back = read_manifest(path)
        assert (back.num_classes, back.channels, back.time_steps, back.patch) == (5, 2, 3, 4)
        assert back.fractions == (0.6, 0.2, 0.2)
        assert [e.image.resolve() for e in back.entries] == [e.image.resolve() for e in entries]
        back.validate()

    def test_empty_split(self, tmp_path):
        m = DatasetManifest([_pair(tmp_path, "a", 4, 4)])
        with pytest.raises(DataError, match="empty"):
            m.split("test")

    def test_validate_catches_channels(self, tmp_path):
        m = DatasetManifest([_pair(tmp_path, "a", 4, 4, c=2)], channels=3)
        with pytest.raises(DataError):
            m.validate()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("img,lbl,split\n")
        with pytest.raises(DataError):
            read_manifest(path)

    def test_bad_split_name(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("image,label,split\na.tns,b.tns,holdout\n")
        with pytest.raises(DataError):
            read_manifest(path)

    def test_image_promotion(self, tmp_path):
        save_tensor(np.zeros((3, 4), np.float32), tmp_path / "hw.tns")
        save_tensor(np.zeros((2, 3, 4), np.float32), tmp_path / "chw.tns")
        assert load_image(tmp_path / "hw.tns").shape == (1, 1, 3, 4)
        assert load_image(tmp_path / "chw.tns").shape == (2, 1, 3, 4)

    def test_label_dtype(self, tmp_path):
        save_tensor(np.zeros((3, 4), np.float32), tmp_path / "l.tns")
        with pytest.raises(DataError):
            load_label(tmp_path / "l.tns")


# =============================================================================
# Augmentation
# =============================================================================


class TestAugment:
    def _coded(self):
        label = np.arange(12, dtype=np.uint16).reshape(3, 4)
        return label.astype(np.float32)[None, None], label

    @pytest.mark.parametrize("name", ["hflip", "vflip"])
    def test_geometric_moves_label_too(self, name):
        image, label = self._coded()
        spec = AugmentSpec(enabled=(name,))
        outcomes = set()
        for epoch in range(20):
            img, lbl = augment(image, label, spec, draw_rng(spec, epoch, 0))
            np.testing.assert_array_equal(img[0, 0], lbl.astype(np.float32))
            outcomes.add(lbl.tobytes())
        assert len(outcomes) == 2

    @pytest.mark.parametrize("name", ["color_enhance", "gaussian_blur", "random_noise"])
    def test_photometric_keeps_label(self, rng, name):
        image = rng.standard_normal((2, 1, 8, 8)).astype(np.float32)
        label = np.arange(64, dtype=np.uint16).reshape(8, 8)
        spec = AugmentSpec(enabled=(name,))
        for epoch in range(6):
            img, lbl = augment(image, label, spec, draw_rng(spec, epoch, 1))
            assert img.dtype == np.float32 and img.shape == image.shape
            np.testing.assert_array_equal(lbl, label)

    def test_reproducible(self, rng):
        image = rng.standard_normal((2, 1, 8, 8)).astype(np.float32)
        label = np.zeros((8, 8), np.uint16)
        spec = AugmentSpec(enabled=("hflip", "color_enhance", "random_noise"), seed=9)
        a = augment(image, label, spec, draw_rng(spec, 3, 5))
        b = augment(image, label, spec, draw_rng(spec, 3, 5))
        assert a[0].tobytes() == b[0].tobytes()

    def test_blur_keeps_constant(self):
        image = np.full((1, 1, 6, 6), 2.0, np.float32)
        np.testing.assert_allclose(blur(image, 1.0), image)

    def test_unknown_transform(self):
        with pytest.raises(ConfigError):
            AugmentSpec(enabled=("rotate",))

    def test_bad_range(self):
        with pytest.raises(ConfigError):
            AugmentSpec(gain=(1.2, 0.8))


# =============================================================================
# Synthetic datasets
# =============================================================================


class TestSynth:
    def test_shapes(self, shapes_dir):
        m = read_manifest(shapes_dir / MANIFEST_NAME)
        assert len(m.entries) == 6
        assert (m.num_classes, m.channels, m.time_steps) == (4, 3, 1)
        m.validate()
        labels = np.stack([load_label(e.label) for e in m.entries])
        assert labels.max() < 4

    def test_shapes_deterministic(self, tmp_path):
        synth_shapes(2, 16, 3, seed=7, out_dir=tmp_path / "a")
        synth_shapes(2, 16, 3, seed=7, out_dir=tmp_path / "b")
        for name in ("img_000.tns", "lbl_001.tns", MANIFEST_NAME):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_temporal_sequences_share_values(self):
        a, b = temporal_sequences(4)
        np.testing.assert_array_equal(np.sort(a), np.sort(b))
        assert not np.array_equal(a, b)
        assert a.mean() == pytest.approx(b.mean())

    def test_temporal(self, temporal_dir):
        m = read_manifest(temporal_dir / MANIFEST_NAME)
        assert (m.num_classes, m.channels, m.time_steps) == (2, 1, 4)
        image = load_image(m.entries[0].image)
        assert image.shape == (1, 4, 16, 16)
        assert set(np.unique(load_label(m.entries[0].label)).tolist()) <= {0, 1}

    def test_temporal_needs_three_steps(self, tmp_path):
        with pytest.raises(DataError):
            synth_temporal(1, 8, 2, seed=0, out_dir=tmp_path)


# =============================================================================
# Loading and batching
# =============================================================================


class TestLoader:
    def test_pads_to_multiple(self, tmp_path):
        ds = PatchDataset([_pair(tmp_path, "a", 5, 6, value=1.0, label=1)], multiple=4)
        image, label = ds[0]
        assert image.shape == (1, 1, 8, 8)
        assert (label[5:, :] == IGNORE_INDEX).all() and (label[:, 6:] == IGNORE_INDEX).all()
        assert (label[:5, :6] == 1).all()
        assert (image[..., :5, :6] == 1).all() and (image[..., 5:, :] == 0).all()

    def test_epoch_order(self):
        a = epoch_order(10, seed=1, epoch=1)
        assert sorted(a.tolist()) == list(range(10))
        assert a.tolist() == epoch_order(10, seed=1, epoch=1).tolist()
        assert a.tolist() != epoch_order(10, seed=1, epoch=2).tolist()

    def test_batches_keep_order_and_tail(self, tmp_path):
        ds = PatchDataset([_pair(tmp_path, f"p{i}", 4, 4, value=float(i)) for i in range(5)])
        batches = list(iter_batches(ds, [4, 2, 0, 1, 3], 2, workers=3))
        assert [b.indices for b in batches] == [(4, 2), (0, 1), (3,)]
        assert batches[0].images.shape == (2, 1, 1, 4, 4)
        assert batches[0].images[:, 0, 0, 0, 0].tolist() == [4.0, 2.0]
        assert batches[2].labels.shape == (1, 4, 4)

    def test_mixed_shapes(self, tmp_path):
        ds = PatchDataset([_pair(tmp_path, "a", 4, 4), _pair(tmp_path, "b", 4, 8)])
        with pytest.raises(DataError):
            list(iter_batches(ds, [0, 1], 2))

    def test_empty(self):
        with pytest.raises(DataError):
            PatchDataset([])


# =============================================================================
# Previews
# =============================================================================


class TestPreview:
    def test_colourize(self):
        rgb = colourize(np.array([[0, 1], [IGNORE_INDEX, len(PALETTE)]], np.uint16))
        assert rgb.shape == (2, 2, 3)
        assert tuple(rgb[1, 0]) == IGNORE_RGB
        assert tuple(rgb[1, 1]) == tuple(PALETTE[0])

    def test_png(self, tmp_path):
        path = save_png(np.zeros((3, 5), np.uint16), tmp_path / "p.png")
        with Image.open(path) as im:
            assert im.size == (5, 3)
            assert im.mode == "RGB"

    def test_needs_2d(self):
        with pytest.raises(DataError):
            colourize(np.zeros((1, 2, 2), np.uint16))

    def test_tns_label_reads_back(self, tmp_path):
        label = np.array([[0, 1]], np.uint16)
        save_tensor(label, tmp_path / "l.tns")
        np.testing.assert_array_equal(load_tensor(tmp_path / "l.tns"), label)
