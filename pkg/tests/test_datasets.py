import numpy as np
import pytest

from natpert import datasets as ds
from natpert import storage
from natpert.model import SgdConfig, SmallConvNet, accuracy, init_params
from natpert.schedules import TrainSchedule, train


def _cifar_file(path, labels, pixel=None):
    rng = np.random.default_rng(0)
    rec = rng.integers(0, 256, (len(labels), ds.CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = labels
    if pixel is not None:
        rec[:, 1:] = pixel
    rec.tofile(path)
    return rec


def test_record_count_and_layout(tmp_path):
    p = tmp_path / "data_batch_1.bin"
    rec = _cifar_file(p, np.arange(10))
    assert p.stat().st_size == 30730
    x, y = ds.read_cifar10_records(p)
    assert x.shape == (10, 3, 32, 32) and list(y) == list(range(10))
    # channel planes, row-major
    assert x[3, 1, 2, 5] == rec[3, 1 + 1024 + 2 * 32 + 5]


def test_byte_255_is_exactly_one(tmp_path):
    p = tmp_path / "b.bin"
    _cifar_file(p, [1], pixel=255)
    x, _ = ds.read_cifar10_records(p)
    assert np.all(ds.to_unit(x) == 1.0)


def test_cifar_errors(tmp_path):
    p = tmp_path / "short.bin"
    p.write_bytes(b"\0" * 3072)
    with pytest.raises(ValueError, match="multiple"):
        ds.read_cifar10_records(p)
    q = tmp_path / "label.bin"
    _cifar_file(q, [3, 10])
    with pytest.raises(ValueError, match="label"):
        ds.read_cifar10_records(q)
    with pytest.raises(FileNotFoundError):
        ds.load_cifar10(_empty(tmp_path))


def _empty(tmp_path):
    d = tmp_path / "empty"
    d.mkdir()
    return str(d)


def test_load_cifar_dir_splits(tmp_path):
    for i in (1, 2):
        _cifar_file(tmp_path / f"data_batch_{i}.bin", np.arange(40) % 10)
    _cifar_file(tmp_path / "test_batch.bin", np.arange(30) % 10)
    d = ds.load_cifar10(str(tmp_path), 23, 17, 12, seed=1)
    assert (len(d.train), len(d.val), len(d.test)) == (23, 17, 12)
    assert d.num_classes == 10 and d.train.images.dtype == np.float32
    for part in (d.train, d.val, d.test):
        counts = np.bincount(part.labels, minlength=10)
        assert counts.max() - counts.min() <= 1
    again = ds.load_cifar10(str(tmp_path), 23, 17, 12, seed=1)
    assert np.array_equal(d.train.images, again.train.images)


def test_stratified_disjoint_and_balanced():
    labels = np.repeat(np.arange(4), 25)
    rng = np.random.default_rng(0)
    parts = ds.stratified_indices(labels, [13, 10, 30], rng)
    assert [len(p) for p in parts] == [13, 10, 30]
    flat = np.concatenate(parts)
    assert len(set(flat)) == len(flat)
    for p in parts:
        c = np.bincount(labels[p], minlength=4)
        assert c.max() - c.min() <= 1
    with pytest.raises(ValueError):
        ds.stratified_indices(labels, [101], rng)


def test_synthetic_deterministic_and_balanced():
    a = ds.synthetic_shapes(30, seed=4)
    b = ds.synthetic_shapes(30, seed=4)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, ds.synthetic_shapes(30, seed=5).images)
    assert a.images.shape == (30, 3, 32, 32) and a.images.dtype == np.float32
    assert a.images.min() >= 0 and a.images.max() <= 1
    assert list(np.bincount(a.labels)) == [10, 10, 10]
    with pytest.raises(ValueError):
        ds.synthetic_shapes(0, 0)
    with pytest.raises(ValueError):
        ds.synthetic_shapes(3, 0, variant="hard")


def test_synthetic_splits_differ():
    d = ds.synthetic_splits(6, 6, 6, seed=0)
    assert not np.array_equal(d.train.images, d.val.images)
    assert d.image_shape == (3, 32, 32)


@pytest.mark.slow
def test_easy_variant_converges():
    d = ds.synthetic_splits(150, 30, 150, seed=0, variant="easy")
    net = SmallConvNet(d.image_shape, 3, (4,))  # one conv layer plus the dense head
    init_params(net, 0)
    train(net, *d.train, TrainSchedule("standard", 20, 0, SgdConfig(lr=0.01, batch_size=16)))
    assert accuracy(net, *d.test) >= 95.0


def test_raw_tensor_dir(tmp_path):
    imgs = np.random.default_rng(0).uniform(0, 1, (24, 1, 4, 4)).astype(np.float32)
    labels = np.arange(24) % 2
    storage.write_tensor(tmp_path / "images.npt", imgs)
    storage.write_tensor(tmp_path / "labels.npt", labels)
    d = ds.DatasetSource("raw_tensor_dir", str(tmp_path), 10, 6, 8).load()
    assert d.num_classes == 2 and d.image_shape == (1, 4, 4)
    idx = np.concatenate([np.flatnonzero((imgs == x).all(axis=(1, 2, 3)))
                          for part in (d.train, d.val, d.test) for x in part.images])
    assert len(set(idx)) == 24
    with pytest.raises(ValueError):
        ds.DatasetSource("raw_tensor_dir", str(tmp_path), 20, 6, 8).load()
    with pytest.raises(ValueError):
        ds.DatasetSource("bogus").load()
