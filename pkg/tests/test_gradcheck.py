"""Analytic gradients of the full generation loss vs central differences."""

import time

from support import build_gradcheck_instance, central_difference_check


def test_generation_loss_gradients_match_central_differences():
    closure, params = build_gradcheck_instance(seed=0)
    start = time.time()
    worst, count = central_difference_check(closure, params, step=1e-4)
    elapsed = time.time() - start
    # 2x2 regions x 8x8 channel pairs x 3x3 taps, plus two 3-channel targets
    assert count == 2 * 2 * 8 * 8 * 3 * 3 + 6
    assert worst <= 1e-3, f"worst relative gradient error {worst:.3e}"
    assert elapsed < 60.0
