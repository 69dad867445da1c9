import numpy as np
import pytest
from hypothesis import given, strategies as st
from skimage.metrics import structural_similarity

from ultragray.errors import ContractError
from ultragray.losses import (filter_valid, filter_valid_adjoint, gaussian_window, image_loss, scale_regularizer,
                              ssim, ssim_with_grad)


def _pair(seed, shape=(16, 18)):
    rng = np.random.default_rng(seed)
    x = rng.random(shape)
    return x, np.clip(x + rng.normal(0, 0.2, shape), 0, 1)


@pytest.mark.parametrize("seed", range(4))
def test_ssim_matches_skimage(seed):
    x, y = _pair(seed, (23, 31))
    ref = structural_similarity(x, y, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert ssim(x, y) == pytest.approx(ref, abs=1e-10)


def test_ssim_identity_and_shape_errors():
    x, _ = _pair(0)
    assert ssim(x, x) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ContractError):
        ssim(x, x[:, :-1])
    with pytest.raises(ContractError):
        ssim(x[:8, :8], x[:8, :8])


@given(st.integers(0, 1000))
def test_filter_adjoint(seed):
    rng = np.random.default_rng(seed)
    g = gaussian_window()
    x = rng.normal(size=(15, 20))
    y = rng.normal(size=(5, 10))
    assert np.sum(filter_valid(x, g) * y) == pytest.approx(np.sum(x * filter_valid_adjoint(y, g)), rel=1e-10)


def test_ssim_gradient_fd():
    x, y = _pair(3)
    _, g = ssim_with_grad(x, y)
    h = 1e-6
    rng = np.random.default_rng(0)
    for i, j in zip(rng.integers(0, 16, 25), rng.integers(0, 18, 25)):
        xp, xm = x.copy(), x.copy()
        xp[i, j] += h
        xm[i, j] -= h
        fd = (ssim(xp, y) - ssim(xm, y)) / (2 * h)
        # central-difference roundoff is about 1e-16 / h
        assert g[i, j] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_image_loss_value_and_gradient():
    x, y = _pair(5)
    value, g, parts = image_loss(x, y, 0.5)
    assert parts["l1"] == pytest.approx(np.mean(np.abs(x - y)))
    assert value == pytest.approx(0.5 * parts["l1"] + 0.5 * (1 - ssim(x, y)))
    h = 1e-7
    for i, j in [(0, 0), (7, 9), (15, 17), (3, 12)]:
        if abs(x[i, j] - y[i, j]) < 1e-3:
            continue
        xp, xm = x.copy(), x.copy()
        xp[i, j] += h
        xm[i, j] -= h
        fd = (image_loss(xp, y)[0] - image_loss(xm, y)[0]) / (2 * h)
        assert g[i, j] == pytest.approx(fd, rel=1e-5)
    assert image_loss(y, y)[0] == pytest.approx(0.0, abs=1e-12)


def test_scale_regularizer():
    ls = np.log(np.array([[0.1, 0.2, 0.3], [1.0, 2.0, 3.0]]))
    v, g = scale_regularizer(ls)
    assert v == pytest.approx(6.6 / 6)
    np.testing.assert_allclose(g, np.exp(ls) / 6)
    assert scale_regularizer(np.zeros((0, 3)))[0] == 0.0


def test_loss_closed_forms():
    from ultragray.train import loss

    rng = np.random.default_rng(0)
    target = rng.uniform(0.2, 0.8, (24, 24))
    logs = rng.normal(-1, 0.5, (7, 3))
    value, g_img, g_logs = loss(target, target, logs)
    assert value == pytest.approx(1e-3 * np.exp(logs).mean(), rel=1e-12)
    assert np.abs(g_img).max() < 1e-12
    np.testing.assert_allclose(g_logs, 1e-3 * np.exp(logs) / logs.size)
    _, _, parts = image_loss(target + 0.1, target)
    assert 0.5 * parts["l1"] == pytest.approx(0.05, rel=1e-12)


def _plain_ssim(x, y):
    # direct per-window loop, the textbook definition
    w = gaussian_window()
    g = np.outer(w, w)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            a, b = x[i:i + 11, j:j + 11], y[i:i + 11, j:j + 11]
            ma, mb = (g * a).sum(), (g * b).sum()
            va = (g * a * a).sum() - ma ** 2
            vb = (g * b * b).sum() - mb ** 2
            cov = (g * a * b).sum() - ma * mb
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma ** 2 + mb ** 2 + c1) * (va + vb + c2)))
    return np.mean(vals)


def test_ssim_against_direct_loop():
    rng = np.random.default_rng(4)
    x = rng.uniform(size=(20, 23))
    y = np.clip(x + rng.normal(0, 0.2, x.shape), 0, 1)
    assert ssim(x, y) == pytest.approx(_plain_ssim(x, y), abs=1e-6)
