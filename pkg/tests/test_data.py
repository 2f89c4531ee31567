import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsecnn import Dataset, batch_iter, load_csv, load_idx, synth_generate
from sparsecnn.data import epoch_order, split, synth_templates, write_csv, write_idx
from sparsecnn.errors import CountMismatchError, DataFormatError


def idx_pair(tmp_path, pixels, labels, img_magic=0x803, lbl_magic=0x801, count=None, lcount=None):
    pixels = np.asarray(pixels, dtype=np.uint8)
    n, rows, cols = pixels.shape
    img = struct.pack(">IIII", img_magic, n if count is None else count, rows, cols) + pixels.tobytes()
    lbl = struct.pack(">II", lbl_magic, len(labels) if lcount is None else lcount) + bytes(labels)
    ip, lp = tmp_path / "img.idx", tmp_path / "lbl.idx"
    ip.write_bytes(img)
    lp.write_bytes(lbl)
    return ip, lp


class TestSynth:
    def test_deterministic(self):
        a = synth_generate(7, 50, 12, 12, 3, 0.4)
        b = synth_generate(7, 50, 12, 12, 3, 0.4)
        assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
        c = synth_generate(8, 50, 12, 12, 3, 0.4)
        assert not np.array_equal(a.images, c.images)

    def test_shape_and_range(self):
        ds = synth_generate(0, 20, 10, 14, 4, 1.0)
        assert ds.images.shape == (20, 1, 10, 14) and ds.images.dtype == np.float32
        assert ds.images.min() >= 0 and ds.images.max() <= 1
        assert ds.labels.dtype == np.int64 and set(ds.labels) <= set(range(4))

    def test_noise_free_equals_template(self):
        ds = synth_generate(3, 30, 16, 16, 3, 0.0)
        templates = synth_templates(16, 16, 3)
        for img, y in zip(ds.images, ds.labels):
            assert np.array_equal(img[0], templates[y])

    def test_nearest_template_separable(self):
        ds = synth_generate(11, 400, 16, 16, 2, 0.1)
        t = synth_templates(16, 16, 2).reshape(2, -1).astype(np.float64)
        x = ds.images.reshape(len(ds), -1).astype(np.float64)
        d = ((x[:, None, :] - t[None]) ** 2).sum(-1)
        assert np.mean(d.argmin(1) == ds.labels) >= 0.99

    @pytest.mark.parametrize("classes,noise", [(1, 0.1), (2, -0.1)])
    def test_rejects_bad_args(self, classes, noise):
        with pytest.raises(ValueError):
            synth_generate(0, 10, 8, 8, classes, noise)


class TestIdx:
    def test_hand_built_bytes(self, tmp_path):
        pixels = [[[0, 255], [51, 102]], [[255, 0], [0, 1]]]
        ds = load_idx(*idx_pair(tmp_path, pixels, [1, 0]))
        assert ds.images.shape == (2, 1, 2, 2)
        np.testing.assert_allclose(ds.images[0, 0], [[0, 1], [0.2, 0.4]], rtol=1e-6)
        assert ds.images[1, 0, 1, 1] == np.float32(1) / np.float32(255)
        assert list(ds.labels) == [1, 0] and ds.class_count == 2

    def test_bad_image_magic(self, tmp_path):
        with pytest.raises(DataFormatError, match="bad magic"):
            load_idx(*idx_pair(tmp_path, np.zeros((1, 2, 2)), [0], img_magic=0x802))

    def test_bad_label_magic(self, tmp_path):
        with pytest.raises(DataFormatError, match="bad magic"):
            load_idx(*idx_pair(tmp_path, np.zeros((1, 2, 2)), [0], lbl_magic=0x803))

    def test_count_mismatch(self, tmp_path):
        with pytest.raises(CountMismatchError):
            load_idx(*idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1, 1]))

    def test_dimension_mismatch(self, tmp_path):
        with pytest.raises(DataFormatError, match="dimension"):
            load_idx(*idx_pair(tmp_path, np.zeros((2, 2, 2)), [0, 1], count=3))

    def test_truncated_header(self, tmp_path):
        ip, lp = tmp_path / "i", tmp_path / "l"
        ip.write_bytes(b"\x00\x00\x08")
        lp.write_bytes(b"")
        with pytest.raises(DataFormatError):
            load_idx(ip, lp)

    def test_round_trip(self, tmp_path):
        ds = synth_generate(4, 15, 6, 5, 3, 0.3)
        write_idx(ds, tmp_path / "i", tmp_path / "l")
        back = load_idx(tmp_path / "i", tmp_path / "l", class_count=3)
        assert np.array_equal(back.labels, ds.labels)
        assert np.max(np.abs(back.images - ds.images)) <= 0.5 / 255 + 1e-7


class TestCsv:
    def test_hand_written(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("# label, pixels\n1,0,0.5,1,0.25\n0,1,1,0,0\n")
        ds = load_csv(p, (2, 2))
        assert ds.images.shape == (2, 1, 2, 2)
        assert np.array_equal(ds.images[0, 0], [[0, 0.5], [1, 0.25]])
        assert list(ds.labels) == [1, 0]

    def test_round_trip_exact(self, tmp_path):
        ds = synth_generate(5, 12, 4, 4, 2, 0.5)
        write_csv(ds, tmp_path / "d.csv")
        back = load_csv(tmp_path / "d.csv", (1, 4, 4), 2)
        assert np.array_equal(back.images, ds.images) and np.array_equal(back.labels, ds.labels)

    def test_wrong_field_count(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("1,0,0.5,1\n")
        with pytest.raises(DataFormatError, match=":1:"):
            load_csv(p, (2, 2))

    def test_out_of_range_pixel(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,0,0,0,1.5\n")
        with pytest.raises(DataFormatError):
            load_csv(p, (2, 2))

    def test_non_numeric(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("0,0,x,0,1\n")
        with pytest.raises(DataFormatError):
            load_csv(p, (2, 2))


class TestDataset:
    def test_label_count_mismatch(self):
        with pytest.raises(CountMismatchError):
            Dataset(np.zeros((3, 1, 2, 2), np.float32), np.zeros(2, np.int64), 2)

    def test_label_out_of_range(self):
        with pytest.raises(DataFormatError):
            Dataset(np.zeros((2, 1, 2, 2), np.float32), np.array([0, 2]), 2)

    def test_split_partitions(self):
        ds = synth_generate(0, 50, 4, 4, 2, 0.2)
        tr, te = split(ds, 0.2, 3)
        assert len(tr) == 40 and len(te) == 10
        both = np.concatenate([tr.images, te.images])
        assert sorted(map(bytes, both)) == sorted(map(bytes, ds.images))


class TestBatches:
    def test_sizes(self):
        ds = synth_generate(0, 10, 4, 4, 2, 0.1)
        assert [len(y) for _, y in batch_iter(ds, 4, 0, 0)] == [4, 4, 2]

    def test_reproducible_and_epoch_dependent(self):
        ds = synth_generate(0, 30, 4, 4, 2, 0.1)
        a = [y.tolist() for _, y in batch_iter(ds, 7, 5, 2)]
        b = [y.tolist() for _, y in batch_iter(ds, 7, 5, 2)]
        assert a == b
        assert not np.array_equal(epoch_order(30, 5, 2), epoch_order(30, 5, 3))

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1, 80), st.integers(1, 20), st.integers(0, 10**6), st.integers(0, 50))
    def test_each_sample_once(self, count, batch, seed, epoch):
        ds = Dataset(np.zeros((count, 1, 1, 1), np.float32), np.zeros(count, np.int64), 1)
        order = epoch_order(count, seed, epoch)
        assert sorted(order.tolist()) == list(range(count))
        sizes = [len(y) for _, y in batch_iter(ds, batch, seed, epoch)]
        assert sum(sizes) == count and all(s == batch for s in sizes[:-1])

    def test_rejects_bad_batch(self):
        ds = synth_generate(0, 5, 4, 4, 2, 0.1)
        with pytest.raises(ValueError):
            next(batch_iter(ds, 0, 0, 0))
