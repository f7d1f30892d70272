import numpy as np
import numpy.testing as npt
import pytest
from PIL import Image

from ctcnn.data import (
    SYNTH_CLASSES,
    ClassIndex,
    load_image,
    load_samples,
    make_batches,
    scan_dataset,
    split_dataset,
    synth_dataset,
)
from ctcnn.errors import ConfigError, DecodeError, EmptyDatasetError, FormatError
from ctcnn.tensor import Tensor, write_ctt


def _tree(root, counts, ext=".png"):
    """Create class dirs with the given file counts (files are empty stubs)."""
    for name, n in counts.items():
        d = root / name
        d.mkdir()
        for i in range(n):
            (d / f"img_{i:03d}{ext}").touch()


class TestClassIndex:
    def test_lookup_both_ways(self):
        idx = ClassIndex(("a", "b", "c"))
        assert idx.id_of("b") == 1
        assert idx.name_of(2) == "c"
        assert len(idx) == 3

    def test_unknown_name_and_bad_id(self):
        idx = ClassIndex(("a", "b"))
        with pytest.raises(KeyError):
            idx.id_of("z")
        with pytest.raises(IndexError):
            idx.name_of(2)

    def test_too_few_or_duplicate_classes(self):
        with pytest.raises(ConfigError):
            ClassIndex(("only",))
        with pytest.raises(ConfigError):
            ClassIndex(("a", "a"))


class TestScanDataset:
    def test_classes_sorted_by_code_point(self, tmp_path):
        _tree(tmp_path, {"b": 1, "A": 1, "c0": 1, "a": 1})
        idx, entries = scan_dataset(tmp_path)
        assert idx.names == ("A", "a", "b", "c0")
        assert [label for _, label in entries] == [0, 1, 2, 3]

    def test_files_sorted_within_class(self, tmp_path):
        d = tmp_path / "x"
        d.mkdir()
        for name in ("c.png", "a.png", "b.png"):
            (d / name).touch()
        (tmp_path / "y").mkdir()
        (tmp_path / "y" / "z.png").touch()
        _, entries = scan_dataset(tmp_path)
        assert [e[0].rsplit("/", 1)[-1] for e in entries[:3]] == ["a.png", "b.png", "c.png"]

    def test_unrecognized_extensions_skipped(self, tmp_path):
        _tree(tmp_path, {"a": 2, "b": 2})
        (tmp_path / "a" / "notes.txt").touch()
        (tmp_path / "a" / "volume.npy").touch()
        (tmp_path / "b" / "IMG_9.JPG").touch()  # case-insensitive suffix match
        _, entries = scan_dataset(tmp_path)
        assert len(entries) == 5
        assert all(e[0].lower().endswith((".png", ".jpg")) for e in entries)

    def test_missing_root_rejected(self, tmp_path):
        with pytest.raises(EmptyDatasetError):
            scan_dataset(tmp_path / "nope")

    def test_single_class_rejected(self, tmp_path):
        _tree(tmp_path, {"solo": 3})
        with pytest.raises(EmptyDatasetError):
            scan_dataset(tmp_path)

    def test_empty_class_warns_but_scans(self, tmp_path):
        _tree(tmp_path, {"a": 2, "b": 0})
        with pytest.warns(RuntimeWarning, match="no recognized samples"):
            idx, entries = scan_dataset(tmp_path)
        assert idx.names == ("a", "b")
        assert len(entries) == 2

    def test_entry_count_matches_tree(self, tmp_path):
        counts = {"adeno": 195, "large": 115, "normal": 148, "squamous": 155}
        _tree(tmp_path, counts)
        _, entries = scan_dataset(tmp_path)
        assert len(entries) == 613


class TestSplitDataset:
    def _entries(self, n=613):
        return [(f"p{i:04d}", i % 4) for i in range(n)]

    def test_eighty_twenty_sizes(self):
        split = split_dataset(self._entries(), ratio=0.8, seed=42)
        assert (len(split.train), len(split.val)) == (490, 123)

    def test_disjoint_and_exhaustive(self):
        entries = self._entries()
        split = split_dataset(entries, ratio=0.8, seed=0)
        train, val = set(split.train), set(split.val)
        assert not train & val
        assert train | val == set(entries)

    def test_deterministic_per_seed(self):
        entries = self._entries(50)
        a = split_dataset(entries, ratio=0.6, seed=11)
        b = split_dataset(entries, ratio=0.6, seed=11)
        assert a.train == b.train and a.val == b.val
        c = split_dataset(entries, ratio=0.6, seed=12)
        assert c.train != a.train

    def test_shuffles_rather_than_slices(self):
        entries = self._entries(100)
        split = split_dataset(entries, ratio=0.5, seed=42)
        assert split.train != entries[:50]

    def test_bad_ratio_rejected(self):
        for ratio in (0.0, 1.0, -0.2, 1.7):
            with pytest.raises(ConfigError):
                split_dataset(self._entries(10), ratio=ratio)

    def test_empty_side_rejected(self):
        with pytest.raises(ConfigError, match="empty split"):
            split_dataset(self._entries(5), ratio=0.1)

    def test_too_few_entries_rejected(self):
        with pytest.raises(ConfigError):
            split_dataset([("p", 0)], ratio=0.5)


class TestLoadImage:
    def test_white_png_loads_as_ones(self, tmp_path):
        path = tmp_path / "w.png"
        Image.new("RGB", (8, 8), (255, 255, 255)).save(path)
        img = load_image(path, size=16)
        assert img.shape == (16, 16, 3)
        assert np.all(img.array == 1.0)

    def test_grayscale_replicated_across_channels(self, tmp_path):
        path = tmp_path / "g.png"
        ramp = np.tile(np.arange(16, dtype=np.uint8) * 16, (16, 1))
        Image.fromarray(ramp, mode="L").save(path)
        img = load_image(path, size=16).array
        npt.assert_array_equal(img[:, :, 0], img[:, :, 1])
        npt.assert_array_equal(img[:, :, 0], img[:, :, 2])

    def test_resize_and_range(self, tmp_path):
        path = tmp_path / "r.jpg"
        rng = np.random.default_rng(3)
        Image.fromarray(rng.integers(0, 256, (20, 20, 3), dtype=np.uint8)).save(path)
        img = load_image(path, size=14).array
        assert img.shape == (14, 14, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_ctt_single_channel_replicated_and_scaled(self, tmp_path):
        path = tmp_path / "s.ctt"
        values = np.linspace(0.0, 255.0, 64, dtype=np.float32).reshape(8, 8, 1)
        write_ctt(path, Tensor(values))
        img = load_image(path, size=8).array
        assert img.shape == (8, 8, 3)
        npt.assert_allclose(img[:, :, 0], values[:, :, 0] / 255.0, rtol=1e-6)
        npt.assert_array_equal(img[:, :, 0], img[:, :, 2])

    def test_ctt_resized_when_needed(self, tmp_path):
        path = tmp_path / "s.ctt"
        rng = np.random.default_rng(4)
        write_ctt(path, Tensor(rng.uniform(0, 255, (32, 32, 1)).astype(np.float32)))
        img = load_image(path, size=64).array
        assert img.shape == (64, 64, 3)
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_ctt_bad_rank_rejected(self, tmp_path):
        path = tmp_path / "bad.ctt"
        write_ctt(path, Tensor(np.ones((5, 5), dtype=np.float32)))
        with pytest.raises(FormatError, match=r"\[H,W,1\] or \[H,W,3\]"):
            load_image(path, size=8)

    def test_ctt_bad_channel_count_rejected(self, tmp_path):
        path = tmp_path / "bad.ctt"
        write_ctt(path, Tensor(np.ones((5, 5, 2), dtype=np.float32)))
        with pytest.raises(FormatError):
            load_image(path, size=8)

    def test_ctt_out_of_range_rejected(self, tmp_path):
        path = tmp_path / "hot.ctt"
        write_ctt(path, Tensor(np.full((5, 5, 1), 300.0, dtype=np.float32)))
        with pytest.raises(FormatError, match=r"\[0, 255\]"):
            load_image(path, size=8)

    def test_undecodable_file_raises_decode_error(self, tmp_path):
        path = tmp_path / "fake.png"
        path.write_bytes(b"this is not an image")
        with pytest.raises(DecodeError):
            load_image(path, size=8)

    def test_missing_image_raises_decode_error(self, tmp_path):
        with pytest.raises(DecodeError):
            load_image(tmp_path / "absent.png", size=8)

    def test_load_samples_carries_labels_and_paths(self, tmp_path):
        path = tmp_path / "s.ctt"
        write_ctt(path, Tensor(np.zeros((8, 8, 1), dtype=np.float32)))
        samples = load_samples([(str(path), 2)], size=8)
        assert samples[0].label == 2
        assert samples[0].path == str(path)
        assert samples[0].image.shape == (8, 8, 3)


class TestMakeBatches:
    def test_sizes_keep_short_final_batch(self):
        batches = make_batches(list(range(123)), batch_size=32, seed=1, epoch=0)
        assert [len(b) for b in batches] == [32, 32, 32, 27]

    def test_exact_coverage(self):
        items = list(range(123))
        batches = make_batches(items, batch_size=32, seed=1, epoch=0)
        assert sorted(x for b in batches for x in b) == items

    def test_deterministic_per_seed_and_epoch(self):
        a = make_batches(list(range(40)), 8, seed=5, epoch=3)
        b = make_batches(list(range(40)), 8, seed=5, epoch=3)
        assert a == b

    def test_epochs_reshuffle(self):
        a = make_batches(list(range(40)), 8, seed=5, epoch=0)
        b = make_batches(list(range(40)), 8, seed=5, epoch=1)
        assert a != b

    def test_bad_batch_size_rejected(self):
        with pytest.raises(ConfigError):
            make_batches(list(range(4)), 0, seed=0, epoch=0)


class TestSynthDataset:
    def test_layout_and_counts(self, tmp_path):
        written = synth_dataset(tmp_path, per_class=2, seed=7)
        assert len(written) == 8
        idx, entries = scan_dataset(tmp_path)
        assert idx.names == SYNTH_CLASSES
        assert len(entries) == 8
        assert entries[0][0].endswith("sample_0000.ctt")

    def test_same_seed_byte_identical(self, tmp_path):
        a_dir, b_dir = tmp_path / "a", tmp_path / "b"
        a = synth_dataset(a_dir, per_class=2, seed=9)
        b = synth_dataset(b_dir, per_class=2, seed=9)
        from pathlib import Path

        for pa, pb in zip(a, b):
            assert Path(pa).read_bytes() == Path(pb).read_bytes()

    def test_different_seed_differs(self, tmp_path):
        a = synth_dataset(tmp_path / "a", per_class=1, seed=1)
        b = synth_dataset(tmp_path / "b", per_class=1, seed=2)
        from pathlib import Path

        assert Path(a[0]).read_bytes() != Path(b[0]).read_bytes()

    def test_samples_load_in_unit_range(self, tmp_path):
        synth_dataset(tmp_path, per_class=1, seed=3)
        _, entries = scan_dataset(tmp_path)
        for sample in load_samples(entries, size=64):
            assert sample.image.shape == (64, 64, 3)
            arr = sample.image.array
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_classes_occupy_distinct_quadrants(self, tmp_path):
        synth_dataset(tmp_path, per_class=3, seed=11)
        _, entries = scan_dataset(tmp_path)
        samples = load_samples(entries, size=64)
        h = 32
        quadrants = [(0, 0), (0, 1), (1, 0), (1, 1)]  # (row block, col block) per class id
        for sample in samples:
            arr = sample.image.array[:, :, 0]
            means = [arr[r * h : (r + 1) * h, c * h : (c + 1) * h].mean() for r, c in quadrants]
            assert int(np.argmax(means)) == sample.label

    def test_bad_arguments_rejected(self, tmp_path):
        with pytest.raises(ConfigError):
            synth_dataset(tmp_path, per_class=0)
        with pytest.raises(ConfigError):
            synth_dataset(tmp_path, per_class=1, size=8)
