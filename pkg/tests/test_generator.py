"""Generator pipeline: identity start, isolation, restarts, persistence."""

import pytest
import torch

from bdharden.backdoor import (
    GenConfig,
    GenerationError,
    PerturbationGenerator,
    generate_backdoor,
    load_generator,
    read_trace,
    save_generator,
    write_trace,
    TRACE_COLUMNS,
)
from bdharden.codec import (
    EncoderClassifier,
    build_codec_pair,
    collect_channel_stats,
)
from bdharden.seeding import make_rng, state_dict_hash


def tiny_setup(scheme="gaussian", width=8, image_size=16, seed=0):
    clf, encoder, decoder = build_codec_pair(
        width=width,
        num_classes=10,
        image_size=image_size,
        truncate_after=1,
        scheme=scheme,
        seed=seed,
    )
    rng = make_rng(seed + 1)
    images = torch.rand((16, 3, image_size, image_size), generator=rng)
    if scheme == "gaussian":
        decoder.set_stats(collect_channel_stats(encoder, images))
    return clf, encoder, decoder, images


def test_identity_initialization_matches_plain_reconstruction():
    _, encoder, decoder, images = tiny_setup()
    x = images[:1]
    gen = PerturbationGenerator.from_samples(
        x, encoder.channels, init_noise_std=0.0
    )
    feats, positions = encoder.encode_with_positions(x)
    plain = decoder.decode_image(feats, rng=make_rng(7), positions=positions)
    piped = gen.synthesize(x, encoder, decoder, rng=make_rng(7))
    assert torch.allclose(piped, plain, atol=1e-5)


def test_identity_init_single_sample_alignment_is_exact():
    _, encoder, decoder, images = tiny_setup()
    x = images[:1]
    gen = PerturbationGenerator.from_samples(
        x, encoder.channels, init_noise_std=0.0
    )
    assert torch.allclose(gen.align(x), x, atol=1e-6)


def test_epochs_zero_reports_baseline_flip_of_identity_generator():
    clf, encoder, decoder, images = tiny_setup(scheme="zero")
    cfg = GenConfig(epochs=0, init_noise_std=0.0, batch_size=8, seed=3)
    result = generate_backdoor(clf, encoder, decoder, images, target=4, config=cfg)
    assert result.epochs_used == 0
    assert result.trace == []
    assert not result.converged

    gen = PerturbationGenerator.from_samples(
        images, encoder.channels, init_noise_std=0.0
    )
    with torch.no_grad():
        xhat = gen.synthesize(images, encoder, decoder)
        expected = float((clf(xhat).argmax(dim=1) == 4).float().mean())
    assert result.flip_rate == pytest.approx(expected)
    assert torch.allclose(result.backdoor_batch, xhat)


def test_subject_model_untouched_and_flags_restored():
    clf, encoder, decoder, images = tiny_setup()
    clf.train()
    for p in clf.parameters():
        p.requires_grad_(True)
    before = state_dict_hash(clf)
    cfg = GenConfig(epochs=2, batch_size=8, seed=1)
    generate_backdoor(clf, encoder, decoder, images, target=2, config=cfg)
    assert state_dict_hash(clf) == before
    assert clf.training
    assert all(p.requires_grad for p in clf.parameters())


def test_short_run_trace_and_batch_shape():
    clf, encoder, decoder, images = tiny_setup()
    cfg = GenConfig(epochs=3, batch_size=8, seed=2)
    result = generate_backdoor(
        clf, encoder, decoder, images, target=1, config=cfg, victim=5
    )
    assert result.epochs_used == 3
    assert len(result.trace) == 3
    for row in result.trace:
        assert set(TRACE_COLUMNS) <= set(row)
    assert [r["epoch"] for r in result.trace] == [0, 1, 2]
    assert 0.0 <= result.flip_rate <= 1.0
    assert result.victim == 5
    assert result.backdoor_batch.shape == images.shape
    assert result.backdoor_batch.min() >= 0.0
    assert result.backdoor_batch.max() <= 1.0
    assert not result.restarted


def test_same_seed_same_result():
    clf, encoder, decoder, images = tiny_setup()
    cfg = GenConfig(epochs=2, batch_size=8, seed=11)
    a = generate_backdoor(clf, encoder, decoder, images, target=3, config=cfg)
    b = generate_backdoor(clf, encoder, decoder, images, target=3, config=cfg)
    assert a.flip_rate == b.flip_rate
    assert a.content_distance == b.content_distance
    assert torch.equal(a.backdoor_batch, b.backdoor_batch)


class _FlakyModel(torch.nn.Module):
    """Returns NaN logits for the first `bad_calls` forward passes."""

    def __init__(self, inner, bad_calls):
        super().__init__()
        self.inner = inner
        self.bad_calls = bad_calls
        self.calls = 0

    def forward(self, x):
        self.calls += 1
        out = self.inner(x)
        if self.calls <= self.bad_calls:
            return out * float("nan")
        return out


def test_nan_loss_restarts_once_with_smaller_rate():
    clf, encoder, decoder, images = tiny_setup()
    flaky = _FlakyModel(clf, bad_calls=1)
    cfg = GenConfig(epochs=1, batch_size=8, seed=4)
    result = generate_backdoor(flaky, encoder, decoder, images, target=0, config=cfg)
    assert result.restarted
    assert result.epochs_used == 1


def test_nan_loss_twice_aborts():
    clf, encoder, decoder, images = tiny_setup()
    flaky = _FlakyModel(clf, bad_calls=10_000)
    cfg = GenConfig(epochs=1, batch_size=8, seed=4)
    with pytest.raises(GenerationError):
        generate_backdoor(flaky, encoder, decoder, images, target=0, config=cfg)


def test_trace_csv_roundtrip(tmp_path):
    clf, encoder, decoder, images = tiny_setup()
    cfg = GenConfig(epochs=2, batch_size=8, seed=5)
    result = generate_backdoor(clf, encoder, decoder, images, target=6, config=cfg)
    path = tmp_path / "trace.csv"
    write_trace(path, result.trace)
    header = path.read_text().splitlines()[0]
    assert header == ",".join(TRACE_COLUMNS)
    back = read_trace(path)
    assert len(back) == 2
    assert back[0]["epoch"] == 0
    assert back[1]["flip_rate"] == pytest.approx(result.trace[1]["flip_rate"])


def test_generator_checkpoint_roundtrip(tmp_path):
    clf, encoder, decoder, images = tiny_setup()
    cfg = GenConfig(epochs=1, batch_size=8, seed=6)
    result = generate_backdoor(
        clf, encoder, decoder, images, target=7, config=cfg, victim=2
    )
    save_generator(tmp_path / "gen", result)
    loaded, meta = load_generator(tmp_path / "gen")
    assert meta["target"] == 7
    assert meta["victim"] == 2
    assert meta["flip_rate"] == pytest.approx(result.flip_rate)
    for a, b in zip(loaded.parameters(), result.generator.parameters()):
        assert torch.equal(a, b)


def test_warm_start_copies_parameters():
    clf, encoder, decoder, images = tiny_setup()
    seed_gen = PerturbationGenerator.from_samples(
        images, encoder.channels, init_noise_std=0.2, rng=make_rng(9)
    )
    cfg = GenConfig(epochs=0, seed=8)
    result = generate_backdoor(
        clf, encoder, decoder, images, target=1, config=cfg, warm_start=seed_gen
    )
    for a, b in zip(result.generator.parameters(), seed_gen.parameters()):
        assert torch.equal(a, b)


def test_early_stop_on_flip():
    clf, encoder, decoder, images = tiny_setup(scheme="zero")
    cfg = GenConfig(epochs=50, batch_size=8, seed=12, stop_flip=0.0)
    result = generate_backdoor(clf, encoder, decoder, images, target=3, config=cfg)
    assert result.epochs_used == 1
