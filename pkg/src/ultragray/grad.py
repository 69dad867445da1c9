"""Reverse-mode gradients of a rendered frame and a finite-difference checker."""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import kernels
from .errors import ContractError
from .losses import image_loss, scale_regularizer
from .probe import Pose, ProbeGeometry, make_rays
from .render import RenderOptions, RenderOutput, render_bundle
from .scene import GaussianField, init_random

PARAM_CLASSES = GaussianField.PARAMS


@dataclass
class GradientBuffer:
    means: np.ndarray
    log_scales: np.ndarray
    quaternions: np.ndarray
    trans_logits: np.ndarray
    sh_coeffs: np.ndarray
    contributions: np.ndarray = dc_field(default=None)

    def __post_init__(self):
        if self.contributions is None:
            self.contributions = np.zeros(len(self.means), dtype=np.int64)

    @classmethod
    def zeros(cls, n: int) -> "GradientBuffer":
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros(n), np.zeros((n, 4)))

    @classmethod
    def zeros_like(cls, field: GaussianField) -> "GradientBuffer":
        return cls.zeros(len(field))

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_CLASSES}

    def add_(self, other: "GradientBuffer", weight: float = 1.0) -> "GradientBuffer":
        for name in PARAM_CLASSES:
            getattr(self, name)[...] += weight * getattr(other, name)
        self.contributions += other.contributions
        return self

    def zero_(self) -> None:
        for arr in self.arrays().values():
            arr[...] = 0.0
        self.contributions[...] = 0

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays().values())


def rotation_vjp(q: np.ndarray, g_R: np.ndarray) -> np.ndarray:
    """Pull ``dL/dR`` back to the raw (unnormalized) quaternion ``(w, x, y, z)``."""
    norm = np.linalg.norm(q, axis=1, keepdims=True)
    qn = q / norm
    w, x, y, z = qn.T
    G = g_R
    gw = 2 * (-z * G[:, 0, 1] + y * G[:, 0, 2] + z * G[:, 1, 0] - x * G[:, 1, 2] - y * G[:, 2, 0] + x * G[:, 2, 1])
    gx = 2 * (y * G[:, 0, 1] + z * G[:, 0, 2] + y * G[:, 1, 0] - 2 * x * G[:, 1, 1] - w * G[:, 1, 2]
              + z * G[:, 2, 0] + w * G[:, 2, 1] - 2 * x * G[:, 2, 2])
    gy = 2 * (-2 * y * G[:, 0, 0] + x * G[:, 0, 1] + w * G[:, 0, 2] + x * G[:, 1, 0] + z * G[:, 1, 2]
              - w * G[:, 2, 0] + z * G[:, 2, 1] - 2 * y * G[:, 2, 2])
    gz = 2 * (-2 * z * G[:, 0, 0] - w * G[:, 0, 1] + x * G[:, 0, 2] + w * G[:, 1, 0] - 2 * z * G[:, 1, 1]
              + y * G[:, 1, 2] + x * G[:, 2, 0] + y * G[:, 2, 1])
    g_qn = np.stack([gw, gx, gy, gz], axis=1)
    return (g_qn - qn * np.sum(qn * g_qn, axis=1, keepdims=True)) / norm


def _segment_sum(gids, values, n):
    """Sum rows of ``values`` (pairs, k) into ``(n, k)`` by Gaussian id, in pair order."""
    values = np.asarray(values)
    if values.ndim == 1:
        return np.bincount(gids, weights=values, minlength=n)
    return np.stack([np.bincount(gids, weights=values[:, c], minlength=n) for c in range(values.shape[1])], axis=1)


def backward(out: RenderOutput, loss_grad_image: np.ndarray, field: GaussianField) -> GradientBuffer:
    """Gradient of ``sum(loss_grad_image * bmode)`` with respect to every field parameter."""
    buf = out.buffers
    if buf is None:
        raise ContractError("render was not run with retain_backward=True")
    n = len(field)
    if buf.n_gaussians != n:
        raise ContractError("field changed size since the render")
    g_img = np.asarray(loss_grad_image, dtype=np.float64)
    if g_img.shape != out.bmode.shape:
        raise ContractError(f"loss gradient shape {g_img.shape} != image shape {out.bmode.shape}")
    meta = field.meta
    grads = GradientBuffer.zeros(n)
    if n == 0:
        return grads

    # clip to [0, 1]: pass-through inside, zero outside
    g_b = np.where(buf.bmode_raw <= 1.0, g_img, 0.0)
    T, S, N = out.transmittance, buf.s_map, buf.n_map
    g_e = g_b * T
    g_logt = g_b * buf.bmode_raw if buf.attenuation else np.zeros_like(g_b)
    eps = meta.coverage_epsilon
    e_s = np.exp(-S)
    cov = -np.expm1(-S)
    den = S + eps
    ratio = N / den
    g_s = g_e * (e_s * (ratio - meta.background_intensity) - cov * ratio / den)
    g_n = g_e * cov / den

    bundle = buf.bundle
    ga, gg, gb, gt, gi = kernels.backward_columns(
        buf.ray_ptr, buf.gids, buf.alpha, buf.gamma0, buf.beta, buf.tau, buf.inten,
        bundle.depth_samples, buf.dz, float(bundle.segment_length), bool(buf.attenuation),
        np.ascontiguousarray(g_logt), np.ascontiguousarray(g_s), np.ascontiguousarray(g_n))

    gids = buf.gids
    o_g, d_g, s, R = buf.o_g, buf.d_g, buf.scales, buf.rotations
    g_og = ga[:, None] * d_g[gids] + 2.0 * gg[:, None] * o_g
    g_dg = _segment_sum(gids, ga[:, None] * o_g, n) + 2.0 * _segment_sum(gids, gb, n)[:, None] * d_g

    g_u = g_og / s[gids]
    g_v = g_dg / s
    sum_gu = _segment_sum(gids, g_u, n)
    grads.log_scales[:] = -_segment_sum(gids, g_og * o_g, n) - g_dg * d_g
    grads.means[:] = -np.einsum("nij,nj->ni", R, sum_gu)

    K = bundle.n_rays
    rays = np.repeat(np.arange(K), np.diff(buf.ray_ptr))
    diff = bundle.origins[rays] - field.means[gids]
    outer = (diff[:, :, None] * g_u[:, None, :]).reshape(-1, 9)
    g_R = _segment_sum(gids, outer, n).reshape(n, 3, 3) + bundle.direction[None, :, None] * g_v[:, None, :]
    grads.quaternions[:] = rotation_vjp(field.quaternions, g_R)

    if buf.attenuation:
        tau = buf.tau
        grads.trans_logits[:] = _segment_sum(gids, gt, n) * tau * (1.0 - tau)
    g_inten = _segment_sum(gids, gi, n)
    active = (buf.inten_raw > 0.0).astype(np.float64)
    grads.sh_coeffs[:] = (g_inten * active)[:, None] * buf.sh_basis[None, :]
    grads.contributions[:] = (np.bincount(gids, minlength=n) > 0).astype(np.int64)
    return grads


def frame_loss_and_grad(field: GaussianField, geometry: ProbeGeometry, pose: Pose, target: np.ndarray,
                        lambda_ssim: float = 0.5, lambda_scale: float = 1e-3,
                        options: RenderOptions | None = None, backward_fn=None):
    """Total loss on one frame and its gradient buffer."""
    opts = options or RenderOptions()
    opts = RenderOptions(**{**opts.__dict__, "retain_backward": True})
    out = render_bundle(field, geometry, make_rays(geometry, pose), opts)
    value, g_img, _ = image_loss(out.bmode, target, lambda_ssim)
    reg, g_reg = scale_regularizer(field.log_scales)
    grads = (backward_fn or backward)(out, g_img, field)
    grads.log_scales += lambda_scale * g_reg
    return value + lambda_scale * reg, grads


def _loss_only(field, geometry, pose, target, lambda_ssim, lambda_scale, options):
    out = render_bundle(field, geometry, make_rays(geometry, pose), options)
    value, _, _ = image_loss(out.bmode, target, lambda_ssim)
    reg, _ = scale_regularizer(field.log_scales)
    return value + lambda_scale * reg


@dataclass
class GradCheckReport:
    worst: dict
    tolerance: float
    abs_floor: float
    passed: bool
    failing: list

    def lines(self) -> list[str]:
        out = []
        for name, err in self.worst.items():
            status = "ok" if name not in self.failing else "FAIL"
            out.append(f"{name:13s} worst_rel_err={err:.3e} {status}")
        out.append(f"grad-check {'PASS' if self.passed else 'FAIL'} (tol {self.tolerance:g}, abs floor {self.abs_floor:g})")
        return out


def random_check_scene(n: int, seed: int, extent: float = 3.0) -> GaussianField:
    """Small random scene with varied shapes, orientations, transmittances and SH."""
    rng = np.random.default_rng([seed, 0xC4EC])
    field = init_random(n, [[-extent, -0.8, 0.5], [extent, 0.8, 2 * extent - 0.5]], seed)
    field.log_scales = np.log(rng.uniform(0.3, 1.2, (n, 3)))
    field.quaternions = rng.normal(size=(n, 4))
    field.trans_logits = rng.normal(0.0, 1.5, n)
    field.sh_coeffs = np.column_stack([rng.uniform(0.8, 2.5, n), rng.normal(0.0, 0.4, (n, 3))])
    return field


def grad_check(field: GaussianField, geometry: ProbeGeometry, pose: Pose, tolerance: float = 1e-4,
               target: np.ndarray | None = None, abs_floor: float = 1e-8, step: float = 1e-5,
               lambda_ssim: float = 0.5, lambda_scale: float = 1e-3,
               options: RenderOptions | None = None, backward_fn=None, seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of the total loss with central differences.

    An entry passes when ``|analytic - fd| <= max(tolerance * max(|analytic|, |fd|), abs_floor)``;
    the report keeps the worst relative error per parameter class.  The difference
    quotient uses the fourth-order central stencil.
    """
    opts = options or RenderOptions()
    if target is None:
        target = np.random.default_rng([seed, 0x7A5]).random(geometry.shape)
    _, grads = frame_loss_and_grad(field, geometry, pose, target, lambda_ssim, lambda_scale, opts, backward_fn)
    worst, failing = {}, []
    probe = field.copy()
    for name in PARAM_CLASSES:
        arr = getattr(probe, name)
        ana = getattr(grads, name).reshape(-1)
        flat = arr.reshape(-1)
        worst_rel = 0.0
        bad = False
        for idx in range(flat.size):
            orig = flat[idx]
            vals = []
            for k in (-2, -1, 1, 2):
                flat[idx] = orig + k * step
                vals.append(_loss_only(probe, geometry, pose, target, lambda_ssim, lambda_scale, opts))
            flat[idx] = orig
            fd = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * step)
            a = ana[idx]
            scale = max(abs(a), abs(fd))
            err = abs(a - fd)
            rel = err / scale if scale > 0 else 0.0
            if err > max(tolerance * scale, abs_floor):
                bad = True
                worst_rel = max(worst_rel, rel)
            elif scale >= abs_floor:
                worst_rel = max(worst_rel, rel)
        worst[name] = worst_rel
        if bad:
            failing.append(name)
    return GradCheckReport(worst, tolerance, abs_floor, not failing, failing)
