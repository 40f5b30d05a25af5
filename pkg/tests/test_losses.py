import torch

from bdharden.backdoor.losses import (
    AdaptiveWeight,
    LossWeights,
    combine,
    content_mse,
    neighborhood_smoothness,
    stat_match_l1,
)
from bdharden.seeding import make_rng


def test_smoothness_zero_for_constant_image():
    x = torch.full((2, 3, 8, 8), 0.7)
    assert neighborhood_smoothness(x).item() < 1e-12


def test_smoothness_penalizes_checkerboard_more_than_gradient():
    checker = torch.zeros(1, 1, 8, 8)
    checker[0, 0, ::2, ::2] = 1.0
    checker[0, 0, 1::2, 1::2] = 1.0
    ramp = torch.linspace(0, 1, 8).expand(8, 8).reshape(1, 1, 8, 8)
    assert neighborhood_smoothness(checker) > 10 * neighborhood_smoothness(ramp)


def test_smoothness_matches_manual_average_interior():
    x = torch.rand(1, 1, 5, 5, generator=make_rng(0))
    # manual 3x3 neighborhood average at the center pixel
    manual = x[0, 0, 1:4, 1:4].mean()
    blurred = torch.nn.functional.avg_pool2d(
        x, 3, stride=1, padding=1, count_include_pad=False
    )
    assert abs(blurred[0, 0, 2, 2].item() - manual.item()) < 1e-6


def test_stat_match_zero_at_reference():
    m = torch.tensor([0.1, 0.2, 0.3])
    s = torch.tensor([1.0, 2.0, 3.0])
    assert stat_match_l1(m, s, m, s).item() == 0.0


def test_stat_match_hand_value():
    tm = torch.tensor([0.0, 0.0])
    ts = torch.tensor([1.0, 1.0])
    rm = torch.tensor([0.2, -0.2])
    rs = torch.tensor([1.5, 0.5])
    # mean |mean gap| = 0.2, mean |std gap| = 0.5
    assert abs(stat_match_l1(tm, ts, rm, rs).item() - 0.7) < 1e-6


def test_content_mse_zero_on_equal_features():
    a = torch.rand(2, 4, 8, 8, generator=make_rng(1))
    assert content_mse(a, a.clone()).item() == 0.0


def test_adaptive_raises_after_patience_and_caps():
    w = AdaptiveWeight(value=1e-3, factor=1.5, patience=5, threshold=0.9)
    vals = [w.update(0.95) for _ in range(5)]
    assert vals[:4] == [1e-3] * 4
    assert abs(vals[4] - 1.5e-3) < 1e-12
    # keeps raising while the streak continues
    assert w.update(0.95) > vals[4]
    w2 = AdaptiveWeight(value=1e2, factor=1.5, patience=1, threshold=0.9, max_value=1e2)
    assert w2.update(0.99) == 1e2


def test_adaptive_drops_immediately_on_miss():
    w = AdaptiveWeight(value=1e-3, factor=1.5, patience=5, threshold=0.9)
    assert abs(w.update(0.1) - 1e-3 / 1.5) < 1e-12
    # a miss resets the streak: four successes then a miss never raises
    w = AdaptiveWeight(value=1e-3, factor=1.5, patience=5, threshold=0.9)
    for _ in range(4):
        w.update(0.95)
    w.update(0.5)
    assert w.value < 1e-3
    assert w.streak == 0


def test_adaptive_respects_floor():
    w = AdaptiveWeight(value=2e-5, factor=1.5, patience=5, min_value=1e-5)
    w.update(0.0)
    w.update(0.0)
    w.update(0.0)
    assert w.value == 1e-5


def test_combined_loss_identity_case():
    # a perfect reconstruction with targets at the reference stats leaves
    # only the cross-entropy and smoothness terms
    x = torch.rand(2, 3, 16, 16, generator=make_rng(2))
    ce = torch.tensor(2.3)
    content = content_mse(x, x)
    from bdharden.backdoor.ssim import ssim_distance

    sd = ssim_distance(x, x)
    sm = neighborhood_smoothness(x)
    m = torch.tensor([0.5, 0.5, 0.5])
    s = torch.tensor([0.2, 0.2, 0.2])
    stat = stat_match_l1(m, s, m, s)
    total = combine(ce, content, sd, sm, stat, LossWeights(), alpha=1e-3)
    expected = 2.3 + 1e-3 * (0.05 * sm.item())
    assert abs(total.item() - expected) < 1e-6


def test_combined_loss_weighting_order():
    one = torch.tensor(1.0)
    w = LossWeights(content=0.001, ssim=100.0, smooth=0.05)
    total = combine(one, one, one, one, one, w, alpha=2.0)
    # 1 + 2 * (0.001 + 100 + 0.05 + 1)
    assert abs(total.item() - (1 + 2 * 101.051)) < 1e-4
