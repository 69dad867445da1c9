import numpy as np
import pytest

from ultragray.errors import ContractError
from ultragray.grad import (GradientBuffer, backward, frame_loss_and_grad, grad_check, random_check_scene,
                            rotation_vjp)
from ultragray.probe import Pose, ProbeGeometry, rotation_about
from ultragray.render import RenderOptions, render
from ultragray.scene import quat_to_rotmat

GEOM = ProbeGeometry(6.0, 6.0, 16, 16)


def test_rotation_vjp_fd():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(3, 4))
    gR = rng.normal(size=(3, 3, 3))
    ana = rotation_vjp(q, gR)
    h = 1e-6
    for n in range(3):
        for c in range(4):
            qp, qm = q.copy(), q.copy()
            qp[n, c] += h
            qm[n, c] -= h
            fd = np.sum(gR[n] * (quat_to_rotmat(qp[n]) - quat_to_rotmat(qm[n]))) / (2 * h)
            assert ana[n, c] == pytest.approx(fd, rel=1e-6, abs=1e-9)


@pytest.mark.parametrize("n,seed", [(1, 0), (5, 1)])
def test_grad_check_small(n, seed):
    report = grad_check(random_check_scene(n, seed), GEOM, Pose.identity(), seed=seed)
    assert report.passed, report.lines()


@pytest.mark.parametrize("opts", [RenderOptions(attenuation=False), RenderOptions(sh_degree=0)])
def test_grad_check_modes(opts):
    report = grad_check(random_check_scene(3, 7), GEOM, Pose(rotation_about([1, 0, 0], 0.2)), options=opts)
    assert report.passed, report.lines()


def test_grad_check_catches_wrong_gradient():
    def broken(out, g_img, field):
        g = backward(out, g_img, field)
        g.trans_logits *= 1.01
        return g

    report = grad_check(random_check_scene(2, 0), GEOM, Pose.identity(), backward_fn=broken)
    assert not report.passed and report.failing == ["trans_logits"]
    assert "FAIL" in report.lines()[-1]


def test_backward_needs_retained_buffers():
    field = random_check_scene(2, 0)
    out = render(field, GEOM, Pose.identity())
    with pytest.raises(ContractError):
        backward(out, np.zeros(GEOM.shape), field)


def test_linear_in_upstream_gradient():
    field = random_check_scene(4, 3)
    out = render(field, GEOM, Pose.identity(), RenderOptions(retain_backward=True))
    rng = np.random.default_rng(0)
    g1, g2 = rng.normal(size=GEOM.shape), rng.normal(size=GEOM.shape)
    a, b = backward(out, g1, field), backward(out, g2, field)
    c = backward(out, 2 * g1 - g2, field)
    for name, arr in c.arrays().items():
        np.testing.assert_allclose(arr, 2 * a.arrays()[name] - b.arrays()[name], atol=1e-12)


def test_gradient_buffer_accumulates():
    a, b = GradientBuffer.zeros(3), GradientBuffer.zeros(3)
    b.means[:] = 1.0
    b.contributions[:] = [1, 0, 1]
    a.add_(b, 0.5).add_(b, 0.5)
    np.testing.assert_array_equal(a.means, 1.0)
    np.testing.assert_array_equal(a.contributions, [2, 0, 2])
    a.zero_()
    assert not a.means.any() and a.all_finite()


def test_unused_gaussian_gets_zero_gradient():
    field = random_check_scene(3, 0)
    field.means[2] = [50.0, 0.0, 3.0]
    _, g = frame_loss_and_grad(field, GEOM, Pose.identity(), np.full(GEOM.shape, 0.3), lambda_scale=0.0)
    for arr in g.arrays().values():
        assert not np.any(arr[2])
    assert g.contributions[2] == 0 and g.contributions[0] == 1


def _sum_loss_grad(field, geometry):
    out = render(field, geometry, Pose.identity(), RenderOptions(retain_backward=True))
    return out.bmode.sum(), backward(out, np.ones(geometry.shape), field)


@pytest.mark.parametrize("logit", [800.0, 2.0])
def test_transmittance_logit_fd_on_pixel_sum(logit):
    from conftest import single_gaussian

    g = ProbeGeometry(4.0, 6.0, 8, 12)
    f = single_gaussian([0.1, 0, 3.0], [0.6, 0.5, 0.4], sh=(1.2, 0, 0, 0), tau=0.5)
    f.trans_logits[:] = logit
    _, grads = _sum_loss_grad(f, g)
    h = 1e-4
    vals = []
    for s in (1, -1):
        p = f.copy()
        p.trans_logits[0] += s * h
        vals.append(_sum_loss_grad(p, g)[0])
    fd = (vals[0] - vals[1]) / (2 * h)
    assert grads.trans_logits[0] == pytest.approx(fd, rel=1e-4, abs=1e-12)


def test_zero_upstream_gives_zero_gradient():
    field = random_check_scene(5, 0)
    out = render(field, GEOM, Pose.identity(), RenderOptions(retain_backward=True))
    g = backward(out, np.zeros(GEOM.shape), field)
    assert all(not a.any() for a in g.arrays().values())


def test_twenty_gaussian_check():
    rep = grad_check(random_check_scene(20, 0), GEOM, Pose.identity(), tolerance=1e-4, abs_floor=1e-8)
    assert rep.passed, rep.lines()
