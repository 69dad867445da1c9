"""Physics-based B-mode forward model on a 3D Gaussian field.

A pixel at depth ``z`` on scan line ``k`` has value ``B = T(z) * E(p)`` where

* ``T(z) = prod_i [tau_i + (1 - tau_i) exp(-psi_i(z))]`` is the transmittance of the
  ray up to depth ``z``.  ``psi_i(z)`` is the overlap integral of Gaussian ``i`` along the
  ray, with upper limit ``z``, so attenuation ramps in as the ray passes the Gaussian.
* ``E(p) = (1 - gamma) I_bkg + gamma * sum_i I_i(d) w_i(p) / (S + eps)`` is the echo,
  with Mahalanobis weights ``w_i(p)``, ``S = sum_i w_i`` and soft coverage
  ``gamma = 1 - exp(-S)``.

The scalar functions (:func:`psi`, :func:`transmittance_at`, :func:`echo_at`) are the
plain reference definitions.  :func:`render` evaluates the same model for a full frame
through :mod:`ultragray.kernels`.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from . import kernels
from .errors import NumericFaultError
from .probe import Pose, ProbeGeometry, RayBundle, make_rays, perturb_out_of_plane, ray_pairs
from .quadrature import ECHO_CUTOFF, GL_NODES, GL_WEIGHTS, HALF_WIDTH_SIGMAS, N_PANELS, PSI_CUTOFF
from .scene import GaussianField, quat_to_rotmat, sigmoid

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


class Gaussian(NamedTuple):
    mean: np.ndarray
    scales: np.ndarray
    rotation: np.ndarray


class Ray(NamedTuple):
    origin: np.ndarray
    direction: np.ndarray
    length: float


class CanonicalRay(NamedTuple):
    o_g: np.ndarray
    d_g: np.ndarray
    l_g: float


def gaussian(field: GaussianField, index: int) -> Gaussian:
    return Gaussian(field.means[index], np.exp(field.log_scales[index]), quat_to_rotmat(field.quaternions[index]))


def to_canonical(g: Gaussian, ray: Ray) -> CanonicalRay:
    """Map a ray into the frame where the Gaussian is a standard normal."""
    RT = np.asarray(g.rotation).T
    s = np.asarray(g.scales, dtype=np.float64)
    o_g = (RT @ (np.asarray(ray.origin, dtype=np.float64) - g.mean)) / s
    d_g = (RT @ np.asarray(ray.direction, dtype=np.float64)) / s
    return CanonicalRay(o_g, d_g, float(np.linalg.norm(d_g) * ray.length))


def overlap_interval(c: CanonicalRay, length: float):
    """Closest-approach depth, effective sigma and the clipped integration interval ``[a, b]``."""
    beta = float(c.d_g @ c.d_g)
    tstar = -float(c.o_g @ c.d_g) / beta
    sigma = 1.0 / np.sqrt(beta)
    a = max(0.0, tstar - HALF_WIDTH_SIGMAS * sigma)
    b = min(length, tstar + HALF_WIDTH_SIGMAS * sigma)
    return tstar, sigma, a, b


def _gl(f, lo, hi):
    h = 0.5 * (hi - lo)
    m = 0.5 * (hi + lo)
    return h * float(np.sum(GL_WEIGHTS * f(m + h * GL_NODES)))


def psi(g: Gaussian, ray: Ray, z_limit: float) -> float:
    """Overlap integral of a Gaussian along ``ray`` from depth 0 up to ``z_limit``.

    The integration variable is world depth along the unit-speed ray (mm), i.e. the
    canonical-space integral divided by ``|d_g|``.  Composite 3-point Gauss-Legendre
    on fixed panels of ``[a, b]`` around the point of closest approach; the last panel
    is cut at ``z_limit``.
    """
    c = to_canonical(g, ray)
    _, _, a, b = overlap_interval(c, ray.length)
    upper = min(z_limit, b)
    if upper <= a:
        return 0.0

    def f(t):
        p = c.o_g[None, :] + np.asarray(t)[:, None] * c.d_g[None, :]
        return np.exp(-0.5 * np.sum(p * p, axis=1))

    width = (b - a) / N_PANELS
    total = 0.0
    for m in range(N_PANELS):
        lo = a + m * width
        hi = a + (m + 1) * width if m < N_PANELS - 1 else b
        if upper <= lo:
            break
        total += _gl(f, lo, min(hi, upper))
    return total


def transmittance_at(field: GaussianField, ray: Ray, culled_ids, z: float) -> float:
    """Cumulative transmittance at depth ``z`` along ``ray``."""
    tau = sigmoid(field.trans_logits)
    log_t = 0.0
    for i in sorted(int(i) for i in culled_ids):
        if tau[i] >= 1.0:
            continue
        g = gaussian(field, i)
        if psi(g, ray, ray.length) < PSI_CUTOFF:
            continue
        p = psi(g, ray, z)
        log_t += np.log(tau[i] + (1.0 - tau[i]) * np.exp(-p))
    return float(np.exp(log_t))


def sh_basis(direction) -> np.ndarray:
    x, y, z = np.asarray(direction, dtype=np.float64)
    return np.array([SH_C0, SH_C1 * y, SH_C1 * z, SH_C1 * x])


def sh_intensity(sh_coeffs, direction, clamp: bool = True) -> float:
    """Degree-1 real SH echo amplitude along ``direction``; clamped at zero by default."""
    value = float(np.asarray(sh_coeffs, dtype=np.float64) @ sh_basis(direction))
    return max(value, 0.0) if clamp else value


def echo_at(field: GaussianField, culled_ids, pixel_point, direction):
    """Echo ``E``, footprint mass ``S`` and coverage ``gamma`` at one world point."""
    meta = field.meta
    S = 0.0
    num = 0.0
    for i in sorted(int(i) for i in culled_ids):
        g = gaussian(field, i)
        u = (g.rotation.T @ (np.asarray(pixel_point) - g.mean)) / g.scales
        w = np.exp(-0.5 * float(u @ u))
        if w < ECHO_CUTOFF:
            continue
        S += w
        num += sh_intensity(field.sh_coeffs[i], direction) * w
    gamma = 1.0 - np.exp(-S)
    E = (1.0 - gamma) * meta.background_intensity + gamma * num / (S + meta.coverage_epsilon)
    return float(E), float(S), float(gamma)


@dataclass
class RenderOptions:
    perturb: bool = False
    delta_max: float = 2.0
    seed: object = 0
    retain_backward: bool = False
    cull: bool = True
    attenuation: bool = True
    sh_degree: int = 1


@dataclass
class BackwardBuffers:
    """Everything :func:`ultragray.grad.backward` needs to differentiate one render."""

    bundle: RayBundle
    ray_ptr: np.ndarray
    gids: np.ndarray
    o_g: np.ndarray        # (pairs, 3)
    d_g: np.ndarray        # (N, 3)
    alpha: np.ndarray      # (pairs,)
    gamma0: np.ndarray     # (pairs,)
    beta: np.ndarray       # (N,)
    tau: np.ndarray
    inten: np.ndarray
    inten_raw: np.ndarray
    sh_basis: np.ndarray
    rotations: np.ndarray
    scales: np.ndarray
    s_map: np.ndarray
    n_map: np.ndarray
    bmode_raw: np.ndarray
    attenuation: bool
    sh_degree: int
    n_gaussians: int
    dz: float


@dataclass
class RenderOutput:
    bmode: np.ndarray
    echo: np.ndarray
    transmittance: np.ndarray
    coverage: np.ndarray
    buffers: BackwardBuffers | None = dc_field(default=None, repr=False)


def check_finite(field: GaussianField) -> None:
    for name, arr in field.params().items():
        bad = ~np.isfinite(arr.reshape(len(field), -1)).all(axis=1) if len(field) else np.zeros(0, bool)
        if bad.any():
            raise NumericFaultError(f"non-finite {name} for gaussian id {int(np.argmax(bad))}")


def render(field: GaussianField, geometry: ProbeGeometry, pose: Pose,
           options: RenderOptions | None = None, bundle: RayBundle | None = None) -> RenderOutput:
    """Render the B-mode frame seen from ``pose``.

    ``bundle`` overrides ray generation (and perturbation) when given.
    """
    opts = options or RenderOptions()
    check_finite(field)
    if bundle is None:
        bundle = make_rays(geometry, pose)
        if opts.perturb:
            bundle = perturb_out_of_plane(bundle, opts.delta_max, opts.seed)
    return render_bundle(field, geometry, bundle, opts)


def render_bundle(field: GaussianField, geometry: ProbeGeometry, bundle: RayBundle,
                  opts: RenderOptions) -> RenderOutput:
    meta = field.meta
    H, K = geometry.shape
    ray_ptr, gids = ray_pairs(field, bundle, geometry, cull=opts.cull)

    R = field.rotations()
    s = field.scales
    d = bundle.direction
    d_g = np.einsum("nji,j->ni", R, d) / s
    beta = np.einsum("ni,ni->n", d_g, d_g)
    rays = np.repeat(np.arange(K), np.diff(ray_ptr))
    diff = bundle.origins[rays] - field.means[gids]
    o_g = np.einsum("pji,pj->pi", R[gids], diff) / s[gids]
    alpha = np.einsum("pi,pi->p", o_g, d_g[gids])
    gamma0 = np.einsum("pi,pi->p", o_g, o_g)

    basis = sh_basis(d)
    if opts.sh_degree < 1:
        basis = basis * np.array([1.0, 0.0, 0.0, 0.0])
    inten_raw = field.sh_coeffs @ basis
    inten = np.maximum(inten_raw, 0.0)
    tau = field.transmittance if opts.attenuation else np.ones(len(field))

    z = bundle.depth_samples
    log_t, s_map, n_map = kernels.forward_columns(
        ray_ptr, gids, alpha, gamma0, beta, tau, inten, z, geometry.axial_pitch,
        float(bundle.segment_length), bool(opts.attenuation))

    T = np.exp(log_t)
    gamma = -np.expm1(-s_map)
    E = (1.0 - gamma) * meta.background_intensity + gamma * n_map / (s_map + meta.coverage_epsilon)
    B_raw = T * E
    B = np.clip(B_raw, 0.0, 1.0)
    buffers = None
    if opts.retain_backward:
        buffers = BackwardBuffers(bundle, ray_ptr, gids, o_g, d_g, alpha, gamma0, beta, tau, inten,
                                  inten_raw, basis, R, s, s_map, n_map, B_raw, opts.attenuation,
                                  opts.sh_degree, len(field), geometry.axial_pitch)
    return RenderOutput(bmode=B, echo=E, transmittance=T, coverage=gamma, buffers=buffers)
