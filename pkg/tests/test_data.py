import os
import struct
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from conftest import random_net
from pastacc.data import Dataset, SyntheticSpec, concat, gen_synthetic, read_idx, write_idx
from pastacc.errors import (
    ConfigurationError,
    ConsistencyError,
    FormatError,
    LengthError,
)
from pastacc.estimator import grad_sum, grad_sum_minibatch
from pastacc.nn import accuracy, flatten_params
from pastacc.storage import (
    load_checkpoint,
    load_dataset,
    load_gradsum,
    save_checkpoint,
    save_dataset,
    save_gradsum,
)
from pastacc.train import TrainConfig, init_network, train_round


def idx_fixture(tmp_path, n_labels=2, truncate=0, magic=0x803):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    pixels = bytes([0, 255, 51, 102, 0, 1, 2, 3])
    img.write_bytes(struct.pack(">IIII", magic, 2, 2, 2) + pixels[:len(pixels) - truncate])
    lab.write_bytes(b"\x00\x00\x08\x01" + struct.pack(">I", n_labels) + bytes([7, 3, 1][:n_labels]))
    return img, lab


class TestIdx:
    def test_hand_built_fixture(self, tmp_path):
        ds = read_idx(*idx_fixture(tmp_path))
        assert len(ds) == 2 and ds.n_features == 4
        np.testing.assert_array_equal(ds.features[0], [0.0, 1.0, 0.2, 0.4])
        np.testing.assert_array_equal(ds.features[1], [0.0, 1 / 255, 2 / 255, 3 / 255])
        assert ds.labels.tolist() == [7, 3]

    def test_wrong_magic(self, tmp_path):
        with pytest.raises(FormatError):
            read_idx(*idx_fixture(tmp_path, magic=0x801))

    def test_truncated_pixels(self, tmp_path):
        with pytest.raises(LengthError):
            read_idx(*idx_fixture(tmp_path, truncate=1))

    def test_count_mismatch(self, tmp_path):
        img, _ = idx_fixture(tmp_path)
        (tmp_path / "three").mkdir()
        _, lab = idx_fixture(tmp_path / "three", n_labels=3)
        with pytest.raises(ConsistencyError):
            read_idx(img, lab)

    def test_write_read_round_trip(self, tmp_path):
        imgs = np.random.default_rng(0).integers(0, 256, (5, 3, 4), dtype=np.uint8)
        labels = np.array([0, 1, 2, 1, 0], dtype=np.uint8)
        write_idx(tmp_path / "i", tmp_path / "l", imgs, labels)
        ds = read_idx(tmp_path / "i", tmp_path / "l")
        np.testing.assert_array_equal(np.rint(ds.features * 255).astype(np.uint8), imgs.reshape(5, 12))
        assert ds.labels.tolist() == labels.tolist()

    @pytest.mark.skipif(not os.environ.get("PASTACC_MNIST_DIR"), reason="MNIST files not provided")
    def test_mnist_train_files(self):
        root = Path(os.environ["PASTACC_MNIST_DIR"])
        ds = read_idx(root / "train-images-idx3-ubyte", root / "train-labels-idx1-ubyte")
        assert (len(ds), ds.n_features) == (60_000, 784)

    def test_concat_renumbers(self, tmp_path):
        ds = read_idx(*idx_fixture(tmp_path), n_classes=10)
        both = concat([ds, ds])
        assert both.ids.tolist() == [0, 1, 2, 3]
        assert both.labels.tolist() == [7, 3, 7, 3]


class TestSynthetic:
    def spec(self, **kw):
        args = dict(n_classes=3, n_features=5, separation=2.0, sigma=0.5, samples_per_class=40, seed=11)
        args.update(kw)
        return SyntheticSpec.random_means(**args)

    def test_deterministic(self):
        a, b = gen_synthetic(self.spec()), gen_synthetic(self.spec())
        assert a.features.tobytes() == b.features.tobytes()
        assert a.labels.tobytes() == b.labels.tobytes()

    def test_seed_changes_data(self):
        a, b = gen_synthetic(self.spec()), gen_synthetic(self.spec(seed=12))
        assert not np.array_equal(a.features, b.features)

    def test_class_counts(self):
        ds = gen_synthetic(self.spec(samples_per_class=17))
        assert np.bincount(ds.labels).tolist() == [17, 17, 17]
        assert ds.ids.tolist() == list(range(51))

    def test_cluster_statistics(self):
        spec = self.spec(samples_per_class=4000, sigma=0.7)
        ds = gen_synthetic(spec)
        for k in range(3):
            pts = ds.of_class(k).features
            np.testing.assert_allclose(pts.mean(axis=0), spec.means[k], atol=0.05)
            assert (pts - spec.means[k]).std() == pytest.approx(0.7, rel=0.03)

    def test_tiny_sigma_is_separable(self):
        ds = gen_synthetic(self.spec(sigma=1e-9, separation=1.0))
        net = init_network((5, 8, 3), 0)
        for r in range(10):
            net, _ = train_round(net, ds, TrainConfig(0.1, 8, 5, 0), round_index=r)
            if accuracy(net, ds) == 1.0:
                break
        assert accuracy(net, ds) == 1.0

    @pytest.mark.parametrize("kw", [dict(n_classes=1), dict(n_features=0), dict(sigma=0.0),
                                    dict(samples_per_class=0)])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            self.spec(**kw)


class TestDatasetInvariants:
    def test_duplicate_ids(self):
        with pytest.raises(ConsistencyError):
            Dataset([1, 1], np.zeros((2, 2)), [0, 1], 2)

    def test_label_range(self):
        with pytest.raises(ConsistencyError):
            Dataset([0, 1], np.zeros((2, 2)), [0, 2], 2)

    def test_non_finite(self):
        with pytest.raises(ConsistencyError):
            Dataset([0], np.array([[np.nan, 0.0]]), [0], 2)

    def test_caller_arrays_untouched(self):
        feats = np.zeros((2, 2))
        Dataset([0, 1], feats, [0, 1], 2)
        feats[0, 0] = 1.0  # still writable


class TestStorage:
    def test_checkpoint_round_trip(self, tmp_path, net_483):
        save_checkpoint(tmp_path / "a.ckpt", net_483)
        back = load_checkpoint(tmp_path / "a.ckpt")
        assert back.layer_dims == net_483.layer_dims
        assert flatten_params(back).values.tobytes() == flatten_params(net_483).values.tobytes()

    @pytest.mark.parametrize("mini", [False, True])
    def test_gradsum_round_trip(self, tmp_path, net_483, three_class_set, mini):
        rec = (grad_sum_minibatch(net_483, three_class_set, 1, 9, round=4) if mini
               else grad_sum(net_483, three_class_set, 1, round=4))
        save_gradsum(tmp_path / "g", rec)
        back = load_gradsum(tmp_path / "g", net_483.layer_dims)
        assert back.vector.values.tobytes() == rec.vector.values.tobytes()
        assert (back.round, back.k, back.sample_count, back.failed_count, back.succeeded_count,
                back.batch_size) == (rec.round, rec.k, rec.sample_count, rec.failed_count,
                                     rec.succeeded_count, rec.batch_size)

    def test_dataset_round_trip(self, tmp_path, three_class_set):
        save_dataset(tmp_path / "d", three_class_set)
        back = load_dataset(tmp_path / "d")
        for name in ("ids", "labels", "features"):
            assert getattr(back, name).tobytes() == getattr(three_class_set, name).tobytes()
        assert back.n_classes == 3

    def _corrupt(self, path, offset, fmt, value):
        raw = bytearray(path.read_bytes())
        struct.pack_into(fmt, raw, offset, value)
        path.write_bytes(bytes(raw))

    def test_checkpoint_length_field(self, tmp_path, net_483):
        p = tmp_path / "c"
        save_checkpoint(p, net_483)
        self._corrupt(p, 16, "<I", 5)  # first layer width 4 -> 5
        with pytest.raises(LengthError):
            load_checkpoint(p)

    def test_dataset_length_field(self, tmp_path, three_class_set):
        p = tmp_path / "d"
        save_dataset(p, three_class_set)
        self._corrupt(p, 12, "<Q", 10**12)
        with pytest.raises(LengthError):
            load_dataset(p)

    def test_gradsum_length_field(self, tmp_path, net_483, three_class_set):
        p = tmp_path / "g"
        save_gradsum(p, grad_sum(net_483, three_class_set, 0))
        self._corrupt(p, 37, "<Q", 7)
        with pytest.raises(LengthError):
            load_gradsum(p, net_483.layer_dims)

    def test_truncated_file(self, tmp_path, net_483):
        p = tmp_path / "c"
        save_checkpoint(p, net_483)
        p.write_bytes(p.read_bytes()[:-8])
        with pytest.raises(LengthError):
            load_checkpoint(p)

    @pytest.mark.parametrize("saver,loader", [
        (lambda p, n, d: save_checkpoint(p, n), lambda p, n: load_checkpoint(p)),
        (lambda p, n, d: save_dataset(p, d), lambda p, n: load_dataset(p)),
        (lambda p, n, d: save_gradsum(p, grad_sum(n, d, 0)), lambda p, n: load_gradsum(p, n.layer_dims)),
    ])
    def test_unknown_version_and_magic(self, tmp_path, net_483, three_class_set, saver, loader):
        p = tmp_path / "f"
        saver(p, net_483, three_class_set)
        self._corrupt(p, 8, "<I", 2)
        with pytest.raises(FormatError, match="version"):
            loader(p, net_483)
        self._corrupt(p, 0, "8s", b"NOTMAGIC")
        with pytest.raises(FormatError, match="magic"):
            loader(p, net_483)

    def test_checkpoint_loads_in_another_process(self, tmp_path):
        net = random_net((6, 5, 3), seed=77)
        p = tmp_path / "x.ckpt"
        save_checkpoint(p, net)
        code = ("import sys, hashlib; from pastacc.storage import load_checkpoint; "
                "from pastacc.nn import flatten_params; "
                "print(hashlib.sha256(flatten_params(load_checkpoint(sys.argv[1])).values.tobytes()).hexdigest())")
        out = subprocess.run([sys.executable, "-c", code, str(p)], capture_output=True, text=True, check=True)
        import hashlib
        assert out.stdout.strip() == hashlib.sha256(flatten_params(net).values.tobytes()).hexdigest()
