import hashlib

import numpy as np
import pytest
import torch

from bdharden.harness import (
    ARCHS,
    MAX_PARAMS,
    DatasetError,
    FinetuneConfig,
    TrainConfig,
    TrainingDivergence,
    build_model,
    finetune_baseline,
    load_dataset,
    make_shape_dataset,
    pgd_eval,
    train_model,
    write_cifar10_binary,
)
from bdharden.harness.data import RECORD_BYTES
from bdharden.seeding import state_dict_hash


@pytest.fixture(scope="module")
def shape_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("shapes")
    make_shape_dataset(root, n_train=400, n_test=100, seed=11)
    return root


@pytest.fixture(scope="module")
def dataset(shape_root):
    return load_dataset(shape_root, val_size=80)


@pytest.fixture(scope="module")
def quick_model(dataset):
    model, result = train_model(
        "small-cnn", dataset, TrainConfig(epochs=3, batch_size=64, seed=0)
    )
    return model, result


def _write_pair(root, train_images, train_labels, test_images=None, test_labels=None):
    if test_images is None:
        test_images = train_images[:2]
        test_labels = train_labels[:2]
    write_cifar10_binary(root / "data_batch_1.bin", train_images, train_labels)
    write_cifar10_binary(root / "test_batch.bin", test_images, test_labels)


def test_binary_roundtrip_and_byte_scaling(tmp_path):
    images = np.zeros((12, 3, 32, 32), dtype=np.uint8)
    images[0, 0, 0, 0] = 255
    images[3, 1, 5, 5] = 128
    labels = (np.arange(12) % 10).astype(np.uint8)
    _write_pair(tmp_path, images, labels)
    ds = load_dataset(tmp_path, val_size=4)
    assert ds.train[0].shape[0] + ds.val[0].shape[0] == 12
    everything = torch.cat([ds.train[0], ds.val[0]])
    assert float(everything.max()) == 1.0
    assert everything.min() >= 0.0
    values = everything.unique().tolist()
    assert any(abs(v - 128 / 255) < 1e-7 for v in values)


def test_corrupt_file_reports_record_index(tmp_path):
    images = np.zeros((3, 3, 32, 32), dtype=np.uint8)
    labels = np.array([0, 1, 2], dtype=np.uint8)
    _write_pair(tmp_path, images, labels)
    with open(tmp_path / "data_batch_1.bin", "ab") as fh:
        fh.write(b"\x07" * 100)
    with pytest.raises(DatasetError, match="record 3"):
        load_dataset(tmp_path, val_size=1)


def test_label_out_of_range_reports_record_index(tmp_path):
    images = np.zeros((3, 3, 32, 32), dtype=np.uint8)
    labels = np.array([0, 17, 2], dtype=np.uint8)
    _write_pair(tmp_path, images, labels, images, np.zeros(3, dtype=np.uint8))
    with pytest.raises(DatasetError, match="record 1 has label 17"):
        load_dataset(tmp_path, val_size=1)


def test_missing_inputs(tmp_path):
    with pytest.raises(DatasetError, match="does not exist"):
        load_dataset(tmp_path / "nowhere")
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(DatasetError, match="data_batch"):
        load_dataset(empty)
    images = np.zeros((3, 3, 32, 32), dtype=np.uint8)
    write_cifar10_binary(empty / "data_batch_1.bin", images, np.zeros(3, dtype=np.uint8))
    with pytest.raises(DatasetError, match="test_batch"):
        load_dataset(empty)
    with pytest.raises(DatasetError, match="format"):
        load_dataset(empty, format="parquet")


def test_validation_carve_is_deterministic_and_disjoint(shape_root):
    first = load_dataset(shape_root, val_size=80)
    second = load_dataset(shape_root, val_size=80)
    assert torch.equal(first.val[0], second.val[0])
    assert torch.equal(first.train[1], second.train[1])
    assert first.train[0].shape[0] == 320
    assert first.val[0].shape[0] == 80
    train_digests = {
        hashlib.sha256(row.numpy().tobytes()).hexdigest() for row in first.train[0]
    }
    val_digests = {
        hashlib.sha256(row.numpy().tobytes()).hexdigest() for row in first.val[0]
    }
    assert not train_digests & val_digests


def test_oversized_validation_split_rejected(shape_root):
    with pytest.raises(DatasetError, match="carve"):
        load_dataset(shape_root, val_size=400)


def test_image_folder_loading(tmp_path):
    from PIL import Image

    rng = np.random.default_rng(3)
    for cls in ("ant", "bee"):
        d = tmp_path / cls
        d.mkdir()
        for i in range(6):
            arr = rng.integers(0, 256, size=(8, 8, 3), dtype=np.uint8)
            Image.fromarray(arr).save(d / f"{i}.png")
    ds = load_dataset(tmp_path, format="image-folder", val_size=2)
    assert ds.n_classes == 2
    # test carved first, then val, both of size val_size
    assert ds.test[0].shape == (2, 3, 8, 8)
    assert ds.val[0].shape == (2, 3, 8, 8)
    assert ds.train[0].shape == (8, 3, 8, 8)
    assert ds.train[0].max() <= 1.0

    (tmp_path / "wasp").mkdir()
    with pytest.raises(DatasetError, match="no png"):
        load_dataset(tmp_path, format="image-folder", val_size=2)


def test_image_folder_empty_and_mismatched(tmp_path):
    with pytest.raises(DatasetError, match="class subdirectories"):
        load_dataset(tmp_path, format="image-folder")
    from PIL import Image

    d = tmp_path / "only"
    d.mkdir()
    Image.fromarray(np.zeros((8, 8, 3), dtype=np.uint8)).save(d / "a.png")
    Image.fromarray(np.zeros((9, 9, 3), dtype=np.uint8)).save(d / "b.png")
    with pytest.raises(DatasetError, match="differs"):
        load_dataset(tmp_path, format="image-folder", val_size=1)


def test_make_shape_dataset_deterministic(tmp_path):
    a = make_shape_dataset(tmp_path / "a", n_train=30, n_test=10, seed=5)
    b = make_shape_dataset(tmp_path / "b", n_train=30, n_test=10, seed=5)
    c = make_shape_dataset(tmp_path / "c", n_train=30, n_test=10, seed=6)
    bytes_a = (a / "data_batch_1.bin").read_bytes()
    assert len(bytes_a) == 30 * RECORD_BYTES
    assert bytes_a == (b / "data_batch_1.bin").read_bytes()
    assert bytes_a != (c / "data_batch_1.bin").read_bytes()


def test_shape_dataset_covers_every_class(dataset):
    assert set(dataset.train[1].tolist()) == set(range(10))
    assert set(dataset.test[1].tolist()) == set(range(10))


def test_zoo_parameter_budget_and_seeding():
    for arch in ARCHS:
        model = build_model(arch, n_classes=10, seed=0)
        params = sum(p.numel() for p in model.parameters())
        assert params <= MAX_PARAMS
        again = build_model(arch, n_classes=10, seed=0)
        assert state_dict_hash(model) == state_dict_hash(again)
        other = build_model(arch, n_classes=10, seed=1)
        assert state_dict_hash(model) != state_dict_hash(other)
        model.eval()
        out = model(torch.rand(2, 3, 32, 32))
        assert out.shape == (2, 10)
    with pytest.raises(ValueError, match="unknown architecture"):
        build_model("alexnet", n_classes=10)


def test_zero_epochs_gives_chance_accuracy(dataset):
    model, result = train_model("small-cnn", dataset, TrainConfig(epochs=0, seed=2))
    assert result.epochs == 0
    assert result.history == []
    assert abs(result.accuracy - 0.1) <= 0.15


def test_same_seed_trains_identically(dataset):
    _, first = train_model(
        "small-cnn", dataset, TrainConfig(epochs=1, batch_size=64, seed=4)
    )
    _, second = train_model(
        "small-cnn", dataset, TrainConfig(epochs=1, batch_size=64, seed=4)
    )
    assert first.accuracy == second.accuracy
    assert first.history == second.history


def test_training_divergence_aborts(dataset):
    model = build_model("small-cnn", dataset.n_classes, seed=0)
    with torch.no_grad():
        model.classifier.weight.fill_(float("nan"))
    with pytest.raises(TrainingDivergence, match="epoch 0"):
        train_model(
            "small-cnn", dataset, TrainConfig(epochs=1, seed=0), model=model
        )


def test_pgd_eval_zero_radius_equals_clean_accuracy(dataset, quick_model):
    model, result = quick_model
    images, labels = dataset.test
    clean = pgd_eval(model, images, labels, eps=0.0)
    assert clean == pytest.approx(result.accuracy)
    with pytest.raises(ValueError):
        pgd_eval(model, images, labels, eps=-0.1)


def test_pgd_eval_attacks_reduce_accuracy(dataset, quick_model):
    model, _ = quick_model
    images, labels = dataset.test[0][:60], dataset.test[1][:60]
    clean = pgd_eval(model, images, labels, eps=0.0)
    robust = pgd_eval(model, images, labels, eps=8 / 255, steps=5, seed=0)
    assert 0.0 <= robust <= 1.0
    assert robust < clean
    again = pgd_eval(model, images, labels, eps=8 / 255, steps=5, seed=0)
    assert robust == again
    single_step = pgd_eval(model, images, labels, eps=8 / 255, steps=1, seed=0)
    assert 0.0 <= single_step <= 1.0


def test_finetune_zero_lr_is_bitwise_identical(dataset, quick_model):
    model, _ = quick_model
    images, labels = dataset.train
    tuned = finetune_baseline(
        model, images[:64], labels[:64], FinetuneConfig(epochs=2, lr=0.0)
    )
    assert tuned is not model
    assert state_dict_hash(tuned) == state_dict_hash(model)


def test_finetune_updates_copy_and_keeps_original(dataset, quick_model):
    model, _ = quick_model
    before = state_dict_hash(model)
    images, labels = dataset.train
    tuned = finetune_baseline(
        model, images[:64], labels[:64],
        FinetuneConfig(epochs=1, lr=1e-3, seed=5),
    )
    assert state_dict_hash(model) == before
    assert state_dict_hash(tuned) != before
    plain = finetune_baseline(
        model, images[:64], labels[:64],
        FinetuneConfig(epochs=1, lr=1e-3, seed=5, augment=False),
    )
    assert state_dict_hash(plain) != state_dict_hash(tuned)
