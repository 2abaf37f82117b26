"""Image quality metrics on numpy arrays (no autodiff involved).

psnr follows the usual 10*log10(max^2 / mse) with identical images pinned to
a 100 dB ceiling so CSV output stays finite. ssim is the classic single-scale
form: 11x11 Gaussian window (sigma 1.5), C1=(0.01*L)^2, C2=(0.03*L)^2,
computed on valid window positions only; multichannel input is averaged to
one gray channel first. Inputs are expected in [0, 1] unless max_val says
otherwise.
"""

import numpy as np

from .numerics import ShapeError

__all__ = ["psnr", "ssim"]

_WINDOW = 11
_SIGMA = 1.5


def psnr(a, b, max_val=1.0):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("psnr needs matching shapes, got %s vs %s"
                         % (a.shape, b.shape))
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return 100.0
    return min(10.0 * np.log10(max_val * max_val / mse), 100.0)


def _gaussian_window(size, sigma):
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _to_gray(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x.mean(axis=0)
    if x.ndim == 2:
        return x
    raise ShapeError("ssim wants [H,W] or [C,H,W], got %s" % (x.shape,))


def _windowed_mean(x, kernel):
    w = kernel.shape[0]
    view = np.lib.stride_tricks.sliding_window_view(x, (w, w))
    return np.einsum("ijkl,kl->ij", view, kernel)


def ssim(a, b, max_val=1.0):
    x = _to_gray(a)
    y = _to_gray(b)
    if x.shape != y.shape:
        raise ShapeError("ssim needs matching shapes, got %s vs %s"
                         % (x.shape, y.shape))
    if x.shape[0] < _WINDOW or x.shape[1] < _WINDOW:
        raise ShapeError("image %s smaller than the %dx%d ssim window"
                         % (x.shape, _WINDOW, _WINDOW))
    kernel = _gaussian_window(_WINDOW, _SIGMA)
    c1 = (0.01 * max_val) ** 2
    c2 = (0.03 * max_val) ** 2
    mu_x = _windowed_mean(x, kernel)
    mu_y = _windowed_mean(y, kernel)
    xx = _windowed_mean(x * x, kernel) - mu_x ** 2
    yy = _windowed_mean(y * y, kernel) - mu_y ** 2
    xy = _windowed_mean(x * y, kernel) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))
