"""SYNTH generation, label randomisation, minibatches and IDX ingestion."""

import gzip
import shutil
import struct
from pathlib import Path

import numpy as np
import pytest

from dppacbayes.data import (
    DataError,
    Dataset,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    MnistPaths,
    SynthConfig,
    minibatch_stream,
    mnist_load,
    randomize_labels,
    read_idx_images,
    read_idx_labels,
    read_synth_csv,
    synth_generate,
    write_idx,
    write_synth_csv,
)

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_LABELS = [7, 0, 9]


def fixture_pixels(k):
    """Image k of the committed fixture: pixel i is (i*(k+1) + 17k) mod 256."""
    return ((np.arange(784) * (k + 1) + 17 * k) % 256).astype(np.uint8)


def fixture_paths(tmp_path, gz):
    """A full train/t10k layout built from the committed 3-image fixture."""
    ext = ".gz" if gz else ""
    for split in ("train", "t10k"):
        shutil.copy(FIXTURES / f"tiny-images-idx3-ubyte{ext}", tmp_path / f"{split}-images-idx3-ubyte{ext}")
        shutil.copy(FIXTURES / f"tiny-labels-idx1-ubyte{ext}", tmp_path / f"{split}-labels-idx1-ubyte{ext}")
    return MnistPaths.from_dir(tmp_path, gz=gz)


class TestSynth:
    def test_defaults(self):
        train, heldout, w = synth_generate(SynthConfig())
        assert train.inputs.shape == (50, 4) and heldout.inputs.shape == (100, 4)
        assert w.shape == (4,)
        assert train.split == "train" and heldout.split == "heldout"
        assert train.label_mode == "true"

    def test_deterministic(self):
        a = synth_generate(SynthConfig(seed=11))
        b = synth_generate(SynthConfig(seed=11))
        for x, y in zip(a[:2], b[:2]):
            np.testing.assert_array_equal(x.inputs, y.inputs)
            np.testing.assert_array_equal(x.labels, y.labels)
        np.testing.assert_array_equal(a[2], b[2])
        c = synth_generate(SynthConfig(seed=12))
        assert not np.array_equal(a[0].inputs, c[0].inputs)

    @pytest.mark.parametrize("mode", ["abs-normal", "gaussian"])
    def test_sign_rule(self, mode):
        for seed in range(10):
            train, heldout, w = synth_generate(SynthConfig(seed=seed, hyperplane=mode))
            for ds in (train, heldout):
                want = np.where(ds.inputs @ w >= 0, 1, 2)
                np.testing.assert_array_equal(ds.labels, want)

    def test_class_balance(self):
        _, heldout, _ = synth_generate(SynthConfig(n_train=1, n_heldout=10_000, seed=5))
        frac = np.mean(heldout.labels == 1)
        assert 0.47 <= frac <= 0.53

    def test_hyperplane_norm_distribution(self):
        norms = [np.linalg.norm(synth_generate(SynthConfig(n_train=1, n_heldout=1, seed=s))[2])
                 for s in range(2000)]
        # |N(0,1)| has mean sqrt(2/pi)
        assert np.mean(norms) == pytest.approx(np.sqrt(2 / np.pi), abs=0.05)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            SynthConfig(n_train=0)
        with pytest.raises(ValueError):
            SynthConfig(hyperplane="other")

    def test_immutable(self):
        train = synth_generate()[0]
        with pytest.raises(ValueError):
            train.inputs[0, 0] = 1.0
        with pytest.raises(ValueError):
            train.labels[0] = 2


class TestRandomLabels:
    def test_properties(self):
        train = synth_generate(SynthConfig(n_train=10_000, seed=1))[0]
        r = randomize_labels(train, seed=3)
        assert r.label_mode == "random"
        np.testing.assert_array_equal(r.inputs, train.inputs)
        assert set(np.unique(r.labels)) == {1, 2}
        # any fixed classifier, e.g. "always 1", has error near 1/2
        assert abs(np.mean(r.labels != 1) - 0.5) <= 3 * 0.005
        # and so does the true hyperplane
        assert abs(np.mean(r.labels != train.labels) - 0.5) <= 3 * 0.005
        np.testing.assert_array_equal(randomize_labels(train, seed=3).labels, r.labels)
        assert not np.array_equal(randomize_labels(train, seed=4).labels, r.labels)

    def test_k(self):
        ds = Dataset(np.zeros((3000, 2)), np.ones(3000, int))
        r = randomize_labels(ds, K=10, seed=0)
        assert r.n_classes == 10 and set(np.unique(r.labels)) == set(range(1, 11))


class TestMinibatches:
    def test_cover_each_index_once(self):
        for n, b in [(50, 10), (53, 10), (7, 7), (5, 1)]:
            batches = minibatch_stream(n, b, 9)
            assert len(batches) == -(-n // b)
            flat = np.concatenate(batches)
            np.testing.assert_array_equal(np.sort(flat), np.arange(n))
            assert all(len(x) == b for x in batches[:-1])

    def test_full_batch_and_seed(self):
        ds = synth_generate()[0]
        (only,) = minibatch_stream(ds, len(ds), 0)
        assert sorted(only) == list(range(len(ds)))
        a = minibatch_stream(ds, 10, 42)
        b = minibatch_stream(ds, 10, 42)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_generator_is_consumed(self):
        rng = np.random.default_rng(0)
        first = np.concatenate(minibatch_stream(20, 5, rng))
        second = np.concatenate(minibatch_stream(20, 5, rng))
        assert not np.array_equal(first, second)

    def test_bad_batch_size(self):
        with pytest.raises(ValueError):
            minibatch_stream(10, 0, 0)
        with pytest.raises(ValueError):
            minibatch_stream(10, 11, 0)


class TestSynthCsv:
    def test_round_trip(self, tmp_path):
        train = randomize_labels(synth_generate(SynthConfig(seed=2))[0], seed=1)
        p = write_synth_csv(train, tmp_path / "train.csv", {"seed": 2})
        header = p.read_text().splitlines()[0]
        assert header == "x1,x2,x3,x4,label"
        back = read_synth_csv(p)
        np.testing.assert_array_equal(back.inputs, train.inputs)
        np.testing.assert_array_equal(back.labels, train.labels)
        assert back.label_mode == "random"

    def test_malformed(self, tmp_path):
        (tmp_path / "a.csv").write_text("x1,x2\n1,2\n")
        with pytest.raises(DataError):
            read_synth_csv(tmp_path / "a.csv")
        (tmp_path / "b.csv").write_text("x1,label\nfoo,1\n")
        with pytest.raises(DataError):
            read_synth_csv(tmp_path / "b.csv")


class TestIdx:
    def test_fixture_bytes(self):
        raw = (FIXTURES / "tiny-labels-idx1-ubyte").read_bytes()
        assert raw == bytes.fromhex("00000801 00000003 07 00 09".replace(" ", ""))
        img = (FIXTURES / "tiny-images-idx3-ubyte").read_bytes()
        assert img[:16] == struct.pack(">IIII", 0x803, 3, 28, 28)
        assert len(img) == 16 + 3 * 784

    def test_read_fixture(self):
        images = read_idx_images(FIXTURES / "tiny-images-idx3-ubyte")
        assert images.shape == (3, 28, 28)
        for k in range(3):
            np.testing.assert_array_equal(images[k].ravel(), fixture_pixels(k))
        np.testing.assert_array_equal(read_idx_labels(FIXTURES / "tiny-labels-idx1-ubyte"), FIXTURE_LABELS)

    def test_mnist_load(self, tmp_path):
        train, heldout = mnist_load(fixture_paths(tmp_path, gz=False))
        assert train.inputs.shape == (3, 784) and heldout.inputs.shape == (3, 784)
        np.testing.assert_array_equal(train.labels, np.array(FIXTURE_LABELS) + 1)
        np.testing.assert_allclose(train.inputs[1], fixture_pixels(1) / 255.0)
        assert train.inputs.min() >= 0 and train.inputs.max() <= 1
        assert train.n_classes == 10 and heldout.split == "heldout"

    def test_gzip_matches_raw(self, tmp_path):
        (tmp_path / "raw").mkdir()
        (tmp_path / "gz").mkdir()
        a = mnist_load(fixture_paths(tmp_path / "raw", gz=False))
        b = mnist_load(fixture_paths(tmp_path / "gz", gz=True))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.inputs, y.inputs)
            np.testing.assert_array_equal(x.labels, y.labels)

    def test_limit(self, tmp_path):
        train, heldout = mnist_load(fixture_paths(tmp_path, gz=True), limit=2)
        assert len(train) == 2 and len(heldout) == 2
        np.testing.assert_array_equal(train.labels, [8, 1])
        train, heldout = mnist_load(fixture_paths(tmp_path, gz=True), limit=2, heldout_limit=1)
        assert len(heldout) == 1

    def test_bad_magic(self, tmp_path):
        raw = bytearray((FIXTURES / "tiny-images-idx3-ubyte").read_bytes())
        raw[3] = 0x01
        (tmp_path / "x").write_bytes(bytes(raw))
        with pytest.raises(IdxMagicError):
            read_idx_images(tmp_path / "x")
        with pytest.raises(IdxMagicError):
            read_idx_labels(FIXTURES / "tiny-images-idx3-ubyte")

    def test_truncated(self, tmp_path):
        raw = (FIXTURES / "tiny-images-idx3-ubyte").read_bytes()
        (tmp_path / "x").write_bytes(raw[:-1])
        with pytest.raises(IdxTruncatedError):
            read_idx_images(tmp_path / "x")
        (tmp_path / "h").write_bytes(raw[:10])
        with pytest.raises(IdxTruncatedError):
            read_idx_images(tmp_path / "h")
        (tmp_path / "l").write_bytes((FIXTURES / "tiny-labels-idx1-ubyte").read_bytes()[:-1])
        with pytest.raises(IdxTruncatedError):
            read_idx_labels(tmp_path / "l")
        (tmp_path / "g.gz").write_bytes(gzip.compress(raw)[:-20])
        with pytest.raises(IdxTruncatedError):
            read_idx_images(tmp_path / "g.gz")

    def test_count_mismatch(self, tmp_path):
        paths = fixture_paths(tmp_path, gz=False)
        write_idx(np.zeros((3, 28, 28)), np.zeros(2), tmp_path / "i", paths.train_labels)
        with pytest.raises(IdxCountMismatchError):
            mnist_load(paths)

    def test_errors_are_distinct(self):
        kinds = {IdxMagicError, IdxTruncatedError, IdxCountMismatchError}
        assert len(kinds) == 3 and all(issubclass(k, DataError) for k in kinds)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            read_idx_images(tmp_path / "nope")

    def test_write_gzip_is_reproducible(self, tmp_path):
        imgs = np.arange(2 * 4 * 4, dtype=np.uint8).reshape(2, 4, 4)
        write_idx(imgs, [1, 2], tmp_path / "a", tmp_path / "b", compress=True)
        first = (tmp_path / "a").read_bytes()
        write_idx(imgs, [1, 2], tmp_path / "a", tmp_path / "b", compress=True)
        assert (tmp_path / "a").read_bytes() == first
        np.testing.assert_array_equal(read_idx_images(tmp_path / "a"), imgs)
