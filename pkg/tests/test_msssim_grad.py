"""Finite-difference oracle for the analytic MS-SSIM gradient."""

import numpy as np
import pytest

from otre import imagekit as ik

from testutil import smooth_image


def fd_gradient_at(x, y, coord, h=1e-4, p=None):
    xp = x.copy()
    xp[coord] += h
    xm = x.copy()
    xm[coord] -= h
    return (ik.ms_ssim(xp, y, p) - ik.ms_ssim(xm, y, p)) / (2 * h)


def relative_error(analytic, fd):
    return abs(analytic - fd) / max(abs(fd), abs(analytic), 1e-8)


def sample_coords(rng, shape, n):
    return [
        (int(rng.integers(shape[0])), int(rng.integers(shape[1])), int(rng.integers(shape[2])))
        for _ in range(n)
    ]


def test_gradient_matches_finite_differences_64():
    """>= 10 seeded 64x64 pairs, >= 100 coords each, rel err <= 1e-4."""
    worst = 0.0
    total = 0
    for seed in range(10):
        rng = np.random.default_rng(1000 + seed)
        x = np.clip(smooth_image(seed) + rng.normal(0, 0.05, (3, 64, 64)), 0.02, 0.98)
        y = np.clip(smooth_image(seed + 50) + rng.normal(0, 0.05, (3, 64, 64)), 0.02, 0.98)
        res = ik.ms_ssim_with_grad(x, y)
        for coord in sample_coords(rng, x.shape, 100):
            fd = fd_gradient_at(x, y, coord)
            worst = max(worst, relative_error(res.grad[coord], fd))
            total += 1
    assert total >= 1000
    assert worst <= 1e-4, f"worst relative error {worst}"


def test_gradient_on_truncated_scales():
    p = ik.SsimParams().truncated_for(16, 16)
    rng = np.random.default_rng(7)
    x = rng.uniform(0.1, 0.9, (1, 16, 16))
    y = rng.uniform(0.1, 0.9, (1, 16, 16))
    res = ik.ms_ssim_with_grad(x, y, p)
    for coord in sample_coords(rng, x.shape, 40):
        fd = fd_gradient_at(x, y, coord, p=p)
        assert relative_error(res.grad[coord], fd) <= 1e-4


def test_self_gradient_vanishes():
    for seed in range(3):
        x = smooth_image(seed + 30)
        res = ik.ms_ssim_with_grad(x, x)
        assert res.value == pytest.approx(1.0, abs=1e-6)
        assert np.abs(res.grad).max() <= 1e-6


def test_grad_shape_matches_input():
    x = smooth_image(8)
    res = ik.ms_ssim_with_grad(x, smooth_image(9))
    assert res.grad.shape == x.shape


def test_descent_direction_reduces_fidelity_loss():
    # stepping x along the negative loss gradient must decrease the loss
    rng = np.random.default_rng(17)
    x = rng.uniform(0.2, 0.8, (3, 64, 64))
    y = rng.uniform(0.2, 0.8, (3, 64, 64))
    loss, grad = ik.fidelity_loss(x, y)
    for step in (1e-3, 1e-2):
        moved, _ = ik.fidelity_loss(np.clip(x - step * grad / np.abs(grad).max(), 0, 1), y)
        assert moved < loss
