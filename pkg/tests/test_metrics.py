import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imtk.metrics import psnr, ssim
from imtk.numerics import ShapeError


def test_psnr_closed_forms():
    x = np.random.default_rng(0).uniform(0, 1, (3, 16, 16))
    assert psnr(x, x) == 100.0
    assert abs(psnr(x, x + 0.1) - 20.0) < 1e-9
    assert abs(psnr(np.zeros((4, 4)), np.ones((4, 4)))) < 1e-12
    # max_val rescales the ceiling: same absolute error, higher range
    assert abs(psnr(x, x + 0.1, max_val=2.0) - 26.020599913279625) < 1e-9


def test_psnr_capped_and_shape_checked():
    x = np.zeros((4, 4))
    assert psnr(x, x + 1e-9) == 100.0
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_ssim_identity_and_symmetry():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, (16, 16))
    y = rng.uniform(0, 1, (16, 16))
    assert ssim(x, x) == 1.0
    assert abs(ssim(x, y) - ssim(y, x)) < 1e-12
    assert ssim(x, y) < 1.0


def test_ssim_multichannel_reduces_to_gray():
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 1, (3, 16, 16))
    y = rng.uniform(0, 1, (3, 16, 16))
    assert abs(ssim(x, y) - ssim(x.mean(axis=0), y.mean(axis=0))) < 1e-12


def test_ssim_checkerboard_anticorrelated():
    yy, xx = np.mgrid[0:16, 0:16]
    board = ((yy + xx) % 2).astype(np.float64)
    assert ssim(board, 1.0 - board) < -0.9


def test_ssim_rejects_small_or_mismatched():
    with pytest.raises(ShapeError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))
    with pytest.raises(ShapeError):
        ssim(np.zeros((2, 2, 16, 16)), np.zeros((2, 2, 16, 16)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_metric_ranges(seed):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, (12, 12))
    y = rng.uniform(0, 1, (12, 12))
    assert psnr(x, y) <= 100.0
    assert -1.0 <= ssim(x, y) <= 1.0


def test_ssim_tracks_noise_level():
    rng = np.random.default_rng(3)
    x = rng.uniform(0.2, 0.8, (32, 32))
    small = ssim(x, np.clip(x + 0.01 * rng.standard_normal(x.shape), 0, 1))
    large = ssim(x, np.clip(x + 0.2 * rng.standard_normal(x.shape), 0, 1))
    assert small > large
