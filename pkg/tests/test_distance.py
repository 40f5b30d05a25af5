"""Distance metric, improvement ratio, and the trial protocol."""

import json

import pytest
import torch

from bdharden.backdoor import generate_backdoor
from bdharden.codec import build_codec_pair, collect_channel_stats
from bdharden.distance import (
    DistanceMatrix,
    MeasurementProtocol,
    PairMeasurement,
    all_ordered_pairs,
    distance_report,
    feature_distance,
    load_matrix,
    measure_matrix,
    measure_pair_distance,
    relative_improvement,
    sample_pairs,
    save_matrix,
    select_victim_samples,
)
from bdharden.seeding import make_rng


def tiny_codec(seed=0, image_size=16):
    clf, encoder, decoder = build_codec_pair(
        width=8, num_classes=10, image_size=image_size,
        truncate_after=1, scheme="gaussian", seed=seed,
    )
    rng = make_rng(seed + 1)
    pool = torch.rand((16, 3, image_size, image_size), generator=rng)
    decoder.set_stats(collect_channel_stats(encoder, pool))
    return clf, encoder, decoder


def matrix_from(n, entries):
    m = DistanceMatrix(n=n)
    for victim, target, dist, converged in entries:
        m.add(PairMeasurement(victim, target, dist, 0.95, converged, [0]))
    return m


def test_feature_distance_matches_brute_force_oracle():
    _, encoder, _ = tiny_codec()
    rng = make_rng(0)
    a = torch.rand((6, 3, 16, 16), generator=rng)
    b = torch.rand((6, 3, 16, 16), generator=rng)
    with torch.no_grad():
        fa = encoder(a).double().numpy()
        fb = encoder(b).double().numpy()
    total = 0.0
    for i in range(fa.shape[0]):
        diff = (fa[i] - fb[i]).ravel()
        acc = 0.0
        for v in diff:
            acc += v * v
        total += acc / diff.size
    oracle = total / fa.shape[0]
    assert feature_distance(encoder, a, b, batch_size=4) == pytest.approx(
        oracle, abs=1e-6
    )


def test_feature_distance_identity_and_symmetry():
    _, encoder, _ = tiny_codec()
    rng = make_rng(1)
    a = torch.rand((4, 3, 16, 16), generator=rng)
    b = torch.rand((4, 3, 16, 16), generator=rng)
    assert feature_distance(encoder, a, a) == 0.0
    assert feature_distance(encoder, a, b) == pytest.approx(
        feature_distance(encoder, b, a), rel=1e-12
    )


def test_feature_distance_rejects_misaligned_batches():
    _, encoder, _ = tiny_codec()
    with pytest.raises(ValueError):
        feature_distance(
            encoder, torch.rand(2, 3, 16, 16), torch.rand(3, 3, 16, 16)
        )


def test_relative_improvement_frozen_example():
    base = matrix_from(3, [(0, 1, 10.0, True), (1, 2, 20.0, True)])
    hard = matrix_from(3, [(0, 1, 15.0, True), (1, 2, 30.0, True)])
    assert relative_improvement(base, hard) == 0.5


def test_relative_improvement_identity_is_exact_zero():
    m = matrix_from(4, [(0, 1, 3.25, True), (2, 3, 7.5, True)])
    assert relative_improvement(m, m) == 0.0


def test_relative_improvement_skips_unconverged_and_uncommon():
    base = matrix_from(3, [(0, 1, 10.0, True), (1, 2, 20.0, False)])
    hard = matrix_from(3, [(0, 1, 20.0, True), (1, 2, 100.0, True)])
    # (1, 2) is unconverged in the baseline, so only (0, 1) counts
    assert relative_improvement(base, hard) == 1.0


def test_relative_improvement_zero_baseline_warns_and_excludes():
    base = matrix_from(3, [(0, 1, 0.0, True), (1, 2, 10.0, True)])
    hard = matrix_from(3, [(0, 1, 5.0, True), (1, 2, 20.0, True)])
    with pytest.warns(RuntimeWarning):
        assert relative_improvement(base, hard) == 1.0


def test_relative_improvement_errors():
    a = matrix_from(3, [(0, 1, 1.0, True)])
    b = matrix_from(4, [(0, 1, 2.0, True)])
    with pytest.raises(ValueError):
        relative_improvement(a, b)
    empty = matrix_from(3, [(0, 1, 1.0, False)])
    with pytest.raises(ValueError):
        relative_improvement(empty, empty)


def test_matrix_validation():
    m = DistanceMatrix(n=3)
    with pytest.raises(ValueError):
        m.add(PairMeasurement(1, 1, 1.0, 0.9, True, [0]))
    with pytest.raises(ValueError):
        m.add(PairMeasurement(0, 5, 1.0, 0.9, True, [0]))
    with pytest.raises(ValueError):
        m.add(PairMeasurement(0, 1, -1.0, 0.9, True, [0]))


def test_matrix_serialization_roundtrip(tmp_path):
    base = matrix_from(3, [(0, 1, 10.0, True), (1, 2, 20.0, True)])
    hard = matrix_from(3, [(0, 1, 15.0, True), (2, 0, 4.0, False)])
    path = tmp_path / "dist.json"
    save_matrix(path, hard, baseline=base)
    payload = json.loads(path.read_text())
    assert payload["n"] == 3
    assert payload["improvement_vs_baseline"] == 0.5
    assert payload["mean_distance"] == 15.0
    back = load_matrix(path)
    assert back.pairs[(0, 1)].distance == 15.0
    assert not back.pairs[(2, 0)].converged
    report = distance_report(hard, baseline=base)
    assert "improvement vs baseline: +50.00%" in report
    assert "classes: 3" in report


class _ConstModel(torch.nn.Module):
    """Classifier that always predicts a fixed label."""

    def __init__(self, n_classes, label):
        super().__init__()
        logits = torch.zeros(n_classes)
        logits[label] = 10.0
        self.register_buffer("fixed", logits)

    def forward(self, x):
        return self.fixed.expand(x.shape[0], -1)


def dataset_for(n_per_class=10, n_classes=4, image_size=16, seed=5):
    rng = make_rng(seed)
    images = torch.rand(
        (n_per_class * n_classes, 3, image_size, image_size), generator=rng
    )
    labels = torch.arange(n_classes).repeat_interleave(n_per_class)
    return images, labels


def test_select_victim_samples_seeded_and_class_pure():
    images, labels = dataset_for()
    proto = MeasurementProtocol(samples_per_pair=6, epochs=1, trials=2)
    a = select_victim_samples(images, labels, 2, 0, proto)
    b = select_victim_samples(images, labels, 2, 0, proto)
    assert torch.equal(a, b)
    victim_set = images[labels == 2]
    for row in a:
        assert any(torch.equal(row, img) for img in victim_set)
    with pytest.raises(ValueError):
        select_victim_samples(
            images, labels, 1, 0,
            MeasurementProtocol(samples_per_pair=100, trials=1),
        )


def test_protocol_seed_invariant():
    with pytest.raises(ValueError):
        MeasurementProtocol(trials=3, seeds=[1, 2])
    proto = MeasurementProtocol(trials=2)
    assert proto.seeds == [0, 1]


def test_measure_pair_min_over_converged_trials():
    _, encoder, decoder = tiny_codec()
    model = _ConstModel(10, label=3)
    images, labels = dataset_for()
    proto = MeasurementProtocol(
        samples_per_pair=6, epochs=1, trials=2, batch_size=4
    )
    dist, meta = measure_pair_distance(
        model, 1, 3, proto, (encoder, decoder), (images, labels)
    )
    assert meta.converged
    assert meta.flip_rate == 1.0

    samples = select_victim_samples(images, labels, 1, 3, proto)
    trial_dists = []
    for seed in proto.seeds:
        result = generate_backdoor(
            model, encoder, decoder, samples, 3,
            config=proto.gen_config(seed), victim=1,
        )
        assert result.converged
        trial_dists.append(feature_distance(encoder, samples, result.backdoor_batch))
    assert dist == pytest.approx(min(trial_dists), rel=1e-12)


def test_measure_pair_unconverged_reports_max():
    _, encoder, decoder = tiny_codec()
    model = _ConstModel(10, label=0)  # never predicts the target below
    images, labels = dataset_for()
    proto = MeasurementProtocol(
        samples_per_pair=6, epochs=1, trials=2, batch_size=4
    )
    dist, meta = measure_pair_distance(
        model, 1, 3, proto, (encoder, decoder), (images, labels)
    )
    assert not meta.converged
    samples = select_victim_samples(images, labels, 1, 3, proto)
    trial_dists = []
    for seed in proto.seeds:
        result = generate_backdoor(
            model, encoder, decoder, samples, 3,
            config=proto.gen_config(seed), victim=1,
        )
        trial_dists.append(feature_distance(encoder, samples, result.backdoor_batch))
    assert dist == pytest.approx(max(trial_dists), rel=1e-12)


def test_sample_pairs_reproducible():
    a = sample_pairs(12, 20, seed=7)
    b = sample_pairs(12, 20, seed=7)
    assert a == b
    assert len(a) == 20
    assert all(v != t for v, t in a)
    assert len(set(a)) == 20
    assert sample_pairs(3, 100) == all_ordered_pairs(3)


def test_measure_matrix_fills_requested_pairs():
    _, encoder, decoder = tiny_codec()
    model = _ConstModel(10, label=2)
    images, labels = dataset_for()
    proto = MeasurementProtocol(
        samples_per_pair=4, epochs=0, trials=1, batch_size=4
    )
    matrix = measure_matrix(
        model, 4, proto, (encoder, decoder), (images, labels),
        pairs=[(0, 2), (1, 2)],
    )
    assert set(matrix.pairs) == {(0, 2), (1, 2)}
