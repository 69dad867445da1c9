"""Training objective: L1 + (1 - SSIM) on [0, 1] images plus a scale regularizer.

SSIM uses an 11x11 Gaussian window (sigma 1.5) evaluated on the valid region only,
with ``C1 = 0.01^2`` and ``C2 = 0.03^2`` for unit data range.  Analytic gradients are
provided for every term.
"""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError

K1, K2 = 0.01, 0.03


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable correlation with ``g`` along both axes, keeping only the valid region."""
    tmp = sliding_window_view(img, g.size, axis=0) @ g
    return sliding_window_view(tmp, g.size, axis=1) @ g


def filter_valid_adjoint(grad: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`filter_valid` (a full convolution back onto the input grid)."""
    k = g.size - 1
    padded = np.pad(grad, k)
    return filter_valid(padded, g[::-1])


def _check_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ContractError(f"image shapes differ or are not 2D: {a.shape} vs {b.shape}")
    return a, b


def _ssim_terms(x, y, data_range, g):
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    mx, my = filter_valid(x, g), filter_valid(y, g)
    exx, eyy, exy = filter_valid(x * x, g), filter_valid(y * y, g), filter_valid(x * y, g)
    a1 = 2 * mx * my + c1
    a2 = 2 * (exy - mx * my) + c2
    b1 = mx * mx + my * my + c1
    b2 = (exx - mx * mx) + (eyy - my * my) + c2
    return mx, my, a1, a2, b1, b2


def ssim(x, y, data_range: float = 1.0, win_size: int = 11, sigma: float = 1.5) -> float:
    x, y = _check_pair(x, y)
    if min(x.shape) < win_size:
        raise ContractError(f"image smaller than the {win_size}x{win_size} SSIM window")
    _, _, a1, a2, b1, b2 = _ssim_terms(x, y, data_range, gaussian_window(win_size, sigma))
    return float(np.mean(a1 * a2 / (b1 * b2)))


def ssim_with_grad(x, y, data_range: float = 1.0):
    """Mean SSIM and its gradient with respect to ``x``."""
    x, y = _check_pair(x, y)
    g = gaussian_window()
    if min(x.shape) < g.size:
        raise ContractError(f"image smaller than the {g.size}x{g.size} SSIM window")
    mx, my, a1, a2, b1, b2 = _ssim_terms(x, y, data_range, g)
    smap = a1 * a2 / (b1 * b2)
    n = smap.size
    d_mx = smap * (2 * my / a1 - 2 * my / a2 - 2 * mx / b1 + 2 * mx / b2) / n
    d_exy = smap * 2 / a2 / n
    d_exx = -smap / b2 / n
    grad = (filter_valid_adjoint(d_mx, g) + 2 * x * filter_valid_adjoint(d_exx, g)
            + y * filter_valid_adjoint(d_exy, g))
    return float(smap.mean()), grad


def image_loss(rendered, target, lambda_ssim: float = 0.5):
    """``(1 - lambda) L1 + lambda (1 - SSIM)`` with its gradient w.r.t. ``rendered``."""
    x, y = _check_pair(rendered, target)
    diff = x - y
    l1 = float(np.mean(np.abs(diff)))
    g_l1 = np.sign(diff) / diff.size
    s, g_s = ssim_with_grad(x, y)
    value = (1 - lambda_ssim) * l1 + lambda_ssim * (1 - s)
    grad = (1 - lambda_ssim) * g_l1 - lambda_ssim * g_s
    return value, grad, {"l1": l1, "ssim_term": 1.0 - s}


def scale_regularizer(log_scales):
    """Mean linear scale over all Gaussians and axes, and its gradient w.r.t. ``log_scales``."""
    log_scales = np.asarray(log_scales, dtype=np.float64)
    if log_scales.size == 0:
        return 0.0, np.zeros_like(log_scales)
    s = np.exp(log_scales)
    return float(s.mean()), s / s.size
