"""数据读取与合成"""
import numpy as np
import pytest

from app.models.dataset import Dataset
from app.services.datasets import load_cifar_binary, make_synthetic, select_samples
from app.utils.errors import DatasetError


def _record(label_bytes, pixel_value):
    return bytes(label_bytes) + bytes([pixel_value]) * 3072


def test_cifar10_records_are_decoded(tmp_path):
    first = bytearray(_record([3], 0))
    first[1] = 255           # R 平面第一个像素
    first[1 + 1024] = 51     # G 平面第一个像素
    first[1 + 2048 + 1023] = 102  # B 平面最后一个像素
    path = tmp_path / "batch.bin"
    path.write_bytes(bytes(first) + _record([7], 255))

    data = load_cifar_binary(path)
    assert len(data) == 2
    assert data.images.shape == (2, 3, 32, 32)
    np.testing.assert_array_equal(data.labels, [3, 7])
    assert data.images[0, 0, 0, 0] == 1.0
    assert data.images[0, 1, 0, 0] == pytest.approx(0.2)
    assert data.images[0, 2, 31, 31] == pytest.approx(0.4)
    assert data.images[0, 0, 0, 1] == 0.0
    assert np.all(data.images[1] == 1.0)
    assert data.num_classes == 10


def test_cifar100_uses_fine_label_by_default(tmp_path):
    path = tmp_path / "train.bin"
    path.write_bytes(_record([4, 42], 10))
    assert load_cifar_binary(path, "cifar100").labels[0] == 42
    assert load_cifar_binary(path, "cifar100_coarse").labels[0] == 4


def test_empty_file_rejected(tmp_path):
    path = tmp_path / "empty.bin"
    path.write_bytes(b"")
    with pytest.raises(DatasetError, match="0"):
        load_cifar_binary(path)


def test_truncated_file_names_record_size(tmp_path):
    path = tmp_path / "cut.bin"
    path.write_bytes(_record([1], 0)[:-5])
    with pytest.raises(DatasetError, match="3073"):
        load_cifar_binary(path)


def test_label_out_of_range_rejected(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(_record([10], 0))
    with pytest.raises(DatasetError):
        load_cifar_binary(path)


def test_synthetic_is_deterministic_and_balanced():
    a = make_synthetic(3, 10, (2, 5, 5), seed=4)
    b = make_synthetic(3, 10, (2, 5, 5), seed=4)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert np.bincount(a.labels).tolist() == [10, 10, 10]
    assert a.images.min() >= 0.0 and a.images.max() <= 1.0


def test_synthetic_needs_two_classes():
    with pytest.raises(DatasetError):
        make_synthetic(1, 10, (1, 4, 4), seed=0)


def test_dataset_validates_labels_and_pixels():
    with pytest.raises(ValueError):
        Dataset(images=np.zeros((1, 1, 2, 2)), labels=[2], num_classes=2)
    with pytest.raises(ValueError):
        Dataset(images=np.full((1, 1, 2, 2), 1.5), labels=[0], num_classes=2)


def test_class_mean_and_select_samples():
    data = make_synthetic(2, 6, (1, 4, 4), seed=0)
    np.testing.assert_allclose(data.class_mean(1), data.images[data.labels == 1].mean(axis=0))
    picked = select_samples(data, 5, seed=1)
    assert len(picked) == 5
    assert len(select_samples(data, 100, seed=1)) == 12
    np.testing.assert_array_equal(select_samples(data, 5, seed=1).labels, picked.labels)
