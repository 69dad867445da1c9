"""Image-quality metrics on the [0, 255] range: PSNR, MS-SSIM, GMS and GMSD.

Renders are kept in [0, 1] internally; :func:`to_255` scales them (no rounding) at the
metric boundary so the metrics stay continuous in the render output.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .losses import K1, K2, filter_valid, gaussian_window

MS_SSIM_WEIGHTS = np.array([0.0448, 0.2856, 0.3001, 0.2363, 0.1333])
GMSD_C = 170.0
PREWITT_X = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0
PREWITT_Y = PREWITT_X.T.copy()
WIN = 11


def to_255(img) -> np.ndarray:
    return np.asarray(img, dtype=np.float64) * 255.0


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 2:
        raise ContractError(f"metric inputs must be equal-shape 2D images, got {a.shape} and {b.shape}")
    return a, b


def psnr(a, b, data_range: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; identical images give ``inf``."""
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(data_range ** 2 / mse))


def _ssim_cs(a, b, data_range):
    g = gaussian_window(WIN, 1.5)
    c1 = (K1 * data_range) ** 2
    c2 = (K2 * data_range) ** 2
    ma, mb = filter_valid(a, g), filter_valid(b, g)
    va = filter_valid(a * a, g) - ma * ma
    vb = filter_valid(b * b, g) - mb * mb
    cov = filter_valid(a * b, g) - ma * mb
    cs = (2 * cov + c2) / (va + vb + c2)
    lum = (2 * ma * mb + c1) / (ma * ma + mb * mb + c1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def _pool2(img):
    h, w = img.shape[0] // 2 * 2, img.shape[1] // 2 * 2
    x = img[:h, :w]
    return 0.25 * (x[0::2, 0::2] + x[1::2, 0::2] + x[0::2, 1::2] + x[1::2, 1::2])


def ms_scales(shape) -> int:
    """Number of dyadic scales that still fit the 11x11 window (at most 5)."""
    m = min(shape)
    n = 0
    while n < 5 and m >= WIN:
        n += 1
        m //= 2
    return n


def ms_ssim(a, b, data_range: float = 255.0) -> float:
    """Multi-scale SSIM with 2x2 mean pooling between scales.

    Images smaller than 176 px use fewer scales; the leading weights are kept and
    renormalized to sum to one.  Negative contrast-structure means are clamped at zero.
    """
    a, b = _pair(a, b)
    n = ms_scales(a.shape)
    if n == 0:
        raise ContractError(f"image {a.shape} smaller than the {WIN}x{WIN} window")
    weights = MS_SSIM_WEIGHTS[:n] / MS_SSIM_WEIGHTS[:n].sum()
    value = 1.0
    for s in range(n):
        full, cs = _ssim_cs(a, b, data_range)
        term = full if s == n - 1 else cs
        value *= max(term, 0.0) ** weights[s]
        a, b = _pool2(a), _pool2(b)
    return float(value)


def gradient_magnitude(img) -> np.ndarray:
    """Prewitt gradient magnitude on the valid region."""
    win = np.lib.stride_tricks.sliding_window_view(np.asarray(img, dtype=np.float64), (3, 3))
    gx = np.einsum("ijkl,kl->ij", win, PREWITT_X)
    gy = np.einsum("ijkl,kl->ij", win, PREWITT_Y)
    return np.sqrt(gx * gx + gy * gy)


def gms_map(a, b, c: float = GMSD_C) -> np.ndarray:
    a, b = _pair(a, b)
    ma, mb = gradient_magnitude(a), gradient_magnitude(b)
    return (2 * ma * mb + c) / (ma * ma + mb * mb + c)


def gms_gmsd(a, b, c: float = GMSD_C) -> tuple[float, float]:
    """Mean gradient-magnitude similarity and its population standard deviation."""
    m = gms_map(a, b, c)
    return float(m.mean()), float(m.std())


METRIC_NAMES = ("psnr", "ms_ssim", "gms", "gmsd")


def frame_metrics(rendered, target) -> dict[str, float]:
    """All four metrics for one frame given [0, 1] images."""
    a, b = to_255(rendered), to_255(target)
    gms, gmsd = gms_gmsd(a, b)
    return {"psnr": psnr(a, b), "ms_ssim": ms_ssim(a, b), "gms": gms, "gmsd": gmsd}


@dataclass
class MetricReport:
    frames: list = field(default_factory=list)

    def add(self, values: dict) -> None:
        self.frames.append(dict(values))

    def values(self, name: str) -> np.ndarray:
        return np.array([f[name] for f in self.frames], dtype=np.float64)

    def mean(self, name: str) -> float:
        return float(np.mean(self.values(name)))

    def std(self, name: str) -> float:
        v = self.values(name)
        if not np.all(np.isfinite(v)):
            return float("nan")
        return float(np.std(v))

    def summary(self) -> dict[str, tuple[float, float]]:
        if not self.frames:
            raise ContractError("no frames were evaluated")
        return {name: (self.mean(name), self.std(name)) for name in METRIC_NAMES}

    def summary_row(self, digits: int = 4) -> dict[str, str]:
        return {name: f"{m:.{digits}f}±{s:.{digits}f}" for name, (m, s) in self.summary().items()}


def evaluate(rendered_frames, target_frames) -> MetricReport:
    report = MetricReport()
    for r, t in zip(rendered_frames, target_frames):
        report.add(frame_metrics(r, t))
    return report
