import numpy as np
import pytest
from scipy import ndimage
from skimage.metrics import peak_signal_noise_ratio, structural_similarity
from skimage.transform import downscale_local_mean

from ultragray.errors import ContractError
from ultragray.metrics import (GMSD_C, MS_SSIM_WEIGHTS, MetricReport, evaluate, frame_metrics, gms_gmsd,
                               ms_scales, ms_ssim, psnr)


def _img(seed, shape=(64, 48)):
    rng = np.random.default_rng(seed)
    return ndimage.gaussian_filter(rng.random(shape), 1.0) * 255


def test_psnr_constant_offset():
    a = np.full((32, 32), 100.0)
    assert psnr(a, a + 1.0) == pytest.approx(48.1308, abs=1e-3)
    assert psnr(a, a) == float("inf")


def test_psnr_matches_skimage():
    a, b = _img(0), _img(1)
    assert psnr(a, b) == pytest.approx(peak_signal_noise_ratio(a, b, data_range=255), rel=1e-12)


def test_single_scale_is_ssim():
    a = _img(2, (20, 20))
    b = 0.7 * a + 0.3 * _img(3, (20, 20))
    assert ms_scales(a.shape) == 1
    ref = structural_similarity(a, b, data_range=255, gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
    assert ms_ssim(a, b) == pytest.approx(ref, abs=1e-10)


def _oracle_ms_ssim(a, b):
    # scipy filtering with valid-region crop, skimage mean pooling
    c1, c2 = (0.01 * 255) ** 2, (0.03 * 255) ** 2
    n = ms_scales(a.shape)
    w = MS_SSIM_WEIGHTS[:n] / MS_SSIM_WEIGHTS[:n].sum()
    out = 1.0
    for s in range(n):
        f = lambda x: ndimage.gaussian_filter(x, 1.5, truncate=5 / 1.5, mode="constant")[5:-5, 5:-5]
        ma, mb = f(a), f(b)
        va, vb, cov = f(a * a) - ma ** 2, f(b * b) - mb ** 2, f(a * b) - ma * mb
        cs = (2 * cov + c2) / (va + vb + c2)
        lum = (2 * ma * mb + c1) / (ma ** 2 + mb ** 2 + c1)
        term = np.mean(lum * cs) if s == n - 1 else np.mean(cs)
        out *= max(term, 0) ** w[s]
        h, wd = a.shape[0] // 2 * 2, a.shape[1] // 2 * 2
        a, b = downscale_local_mean(a[:h, :wd], (2, 2)), downscale_local_mean(b[:h, :wd], (2, 2))
    return out


@pytest.mark.parametrize("shape", [(32, 32), (64, 48), (200, 180)])
def test_ms_ssim_against_oracle(shape):
    a = _img(4, shape)
    b = np.clip(a + np.random.default_rng(5).normal(0, 20, shape), 0, 255)
    assert ms_ssim(a, b) == pytest.approx(_oracle_ms_ssim(a, b), rel=1e-9)


def test_ms_scales():
    assert [ms_scales((s, s)) for s in (10, 11, 21, 22, 44, 88, 176, 500)] == [0, 1, 1, 2, 3, 4, 5, 5]
    with pytest.raises(ContractError):
        ms_ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_gms_against_oracle():
    a, b = _img(6), _img(7)
    k = np.array([[1, 0, -1]] * 3) / 3.0

    def gm(x):
        gx = ndimage.correlate(x, k)[1:-1, 1:-1]
        gy = ndimage.correlate(x, k.T)[1:-1, 1:-1]
        return np.hypot(gx, gy)

    m = (2 * gm(a) * gm(b) + GMSD_C) / (gm(a) ** 2 + gm(b) ** 2 + GMSD_C)
    gms, gmsd = gms_gmsd(a, b)
    assert gms == pytest.approx(m.mean(), rel=1e-12)
    assert gmsd == pytest.approx(m.std(), rel=1e-10)


def test_identical_images():
    a = _img(8) / 255
    m = frame_metrics(a, a)
    assert m["psnr"] == float("inf")
    assert m["ms_ssim"] == pytest.approx(1.0, abs=1e-12)
    assert m["gms"] == pytest.approx(1.0, abs=1e-12)
    assert m["gmsd"] == pytest.approx(0.0, abs=1e-12)


def test_noise_monotonicity():
    a = _img(9, (96, 96)) / 255
    noise = np.random.default_rng(10).normal(size=a.shape)
    rows = [frame_metrics(a, a + s * noise) for s in (0.01, 0.03, 0.06, 0.1, 0.2)]
    for prev, cur in zip(rows, rows[1:]):
        assert cur["psnr"] < prev["psnr"]
        assert cur["ms_ssim"] < prev["ms_ssim"]
        assert cur["gms"] < prev["gms"]
        assert cur["gmsd"] > prev["gmsd"]


def test_report_summary():
    frames = [_img(i, (32, 32)) / 255 for i in range(3)]
    targets = [np.clip(f + 0.02, 0, 1) for f in frames]
    rep = evaluate(frames, targets)
    assert len(rep.frames) == 3
    vals = rep.values("psnr")
    assert rep.mean("psnr") == pytest.approx(vals.mean())
    row = rep.summary_row()
    assert set(row) == {"psnr", "ms_ssim", "gms", "gmsd"} and "±" in row["psnr"]
    empty = MetricReport()
    with pytest.raises(ContractError):
        empty.summary()


def test_inverted_image_and_symmetry():
    a = _img(11, (96, 96))
    # negative contrast-structure terms clamp at zero, so the product is exactly 0
    assert ms_ssim(a, 255 - a) == 0.0
    rng = np.random.default_rng(12)
    for _ in range(5):
        x, y = _img(rng.integers(1000), (96, 96)), _img(rng.integers(1000), (96, 96))
        y = 0.6 * x + 0.4 * y
        assert ms_ssim(x, y) == pytest.approx(ms_ssim(y, x), abs=1e-12)
        assert gms_gmsd(x, y) == pytest.approx(gms_gmsd(y, x), abs=1e-12)
        assert psnr(x, y) == psnr(y, x)


def test_psnr_direct_formula():
    rng = np.random.default_rng(13)
    a, b = rng.uniform(0, 255, (40, 30)), rng.uniform(0, 255, (40, 30))
    mse = sum((x - y) ** 2 for x, y in zip(a.ravel().tolist(), b.ravel().tolist())) / a.size
    assert psnr(a, b) == pytest.approx(10 * np.log10(255.0 ** 2 / mse), abs=1e-9)


def test_gms_constant_pair_and_checkerboard():
    assert gms_gmsd(np.full((16, 16), 30.0), np.full((16, 16), 200.0)) == (1.0, 0.0)
    board = np.kron((np.indices((8, 8)).sum(axis=0) % 2) * 255.0, np.ones((4, 4)))
    blurred = ndimage.gaussian_filter(board, 1.5)

    def magnitude(x):
        # Prewitt by explicit neighbour sums
        h, w = x.shape
        out = np.zeros((h - 2, w - 2))
        for i in range(1, h - 1):
            for j in range(1, w - 1):
                gx = (x[i - 1:i + 2, j - 1].sum() - x[i - 1:i + 2, j + 1].sum()) / 3
                gy = (x[i - 1, j - 1:j + 2].sum() - x[i + 1, j - 1:j + 2].sum()) / 3
                out[i - 1, j - 1] = np.hypot(gx, gy)
        return out

    ma, mb = magnitude(board), magnitude(blurred)
    m = (2 * ma * mb + GMSD_C) / (ma ** 2 + mb ** 2 + GMSD_C)
    gms, gmsd = gms_gmsd(board, blurred)
    assert gmsd > 0.05
    assert gmsd == pytest.approx(m.std(), rel=1e-10) and gms == pytest.approx(m.mean(), rel=1e-12)
