"""Compiled per-scan-line kernels for the forward model and its reverse-mode derivative.

Every (ray, Gaussian) pair is reduced to three canonical-ray scalars

    alpha = o_g . d_g,   gamma0 = |o_g|^2   (per pair)
    beta  = |d_g|^2                          (per Gaussian; rays share d)

so that ``q(z) = gamma0 + 2 alpha z + beta z^2`` is the squared Mahalanobis distance of
the world point at depth ``z`` on the ray.  The echo weight of a pixel at depth ``z`` is
``exp(-q(z) / 2)`` and the overlap integral is ``psi(z) = int_a^min(z, b) exp(-q(t) / 2) dt``
with ``t`` the world depth along the (unit-speed) ray.  The integral is evaluated by
composite 3-point Gauss-Legendre on ``N_PANELS`` fixed panels spanning ``[a, b]``,
``a = max(0, t* - h sigma)``, ``b = min(ell, t* + h sigma)``, ``t* = -alpha / beta``,
``sigma = beta^-1/2``.

Work is parallel over scan lines; each ray writes only its own image column and its
own slice of the pair arrays, so results do not depend on the thread count.
"""
import numba
import numpy as np
from numba import njit, prange

# the bundled TBB is too old for numba; workqueue is always available and sufficient here
numba.config.THREADING_LAYER = "workqueue"

from .quadrature import ECHO_CUTOFF, ECHO_Q_CUT, GL_NODES, GL_WEIGHTS, HALF_WIDTH_SIGMAS, N_PANELS, PSI_CUTOFF

_X0, _X1, _X2 = GL_NODES
_W0, _W1, _W2 = GL_WEIGHTS
_H = HALF_WIDTH_SIGMAS
_P = N_PANELS
_SQRT_2PI = np.sqrt(2.0 * np.pi)


@njit(cache=True, inline="always")
def _integrand(t, r2, beta, tstar):
    dt = t - tstar
    return np.exp(-0.5 * (r2 + beta * dt * dt))


@njit(cache=True, inline="always")
def _panel(lo, hi, r2, beta, tstar):
    h = 0.5 * (hi - lo)
    m = 0.5 * (hi + lo)
    return h * (_W0 * _integrand(m + h * _X0, r2, beta, tstar)
                + _W1 * _integrand(m, r2, beta, tstar)
                + _W2 * _integrand(m + h * _X2, r2, beta, tstar))


@njit(cache=True, inline="always")
def _interval(alpha, beta, gamma0, ell):
    tstar = -alpha / beta
    r2 = gamma0 + alpha * tstar
    if r2 < 0.0:
        r2 = 0.0
    sigma = 1.0 / np.sqrt(beta)
    a = tstar - _H * sigma
    b = tstar + _H * sigma
    a_clip = a < 0.0
    b_clip = b > ell
    if a_clip:
        a = 0.0
    if b_clip:
        b = ell
    return tstar, r2, sigma, a, b, a_clip, b_clip


@njit(cache=True, inline="always")
def _negligible(r2, sigma):
    """True when psi over the whole line is safely below the cutoff.

    The full-line integral is sqrt(2 pi) sigma exp(-r2 / 2); the factor 2 covers the
    quadrature error, so the skip never changes a result.
    """
    return 2.0 * _SQRT_2PI * sigma * np.exp(-0.5 * r2) < PSI_CUTOFF


@njit(cache=True, inline="always")
def _first_at_or_below(b, z, dz):
    """Smallest j with z[j] >= b (``len(z)`` if none)."""
    H = z.shape[0]
    j = int(np.ceil(b / dz - 0.5)) - 1
    if j < 0:
        j = 0
    while j < H and z[j] < b:
        j += 1
    return j


@njit(cache=True, inline="always")
def _depth_index_range(lo, hi, dz, H):
    """Pixel indices j with lo <= (j + 0.5) dz <= hi, widened by one and clipped to the image."""
    j0 = int(np.ceil(lo / dz - 0.5)) - 1
    j1 = int(np.floor(hi / dz - 0.5)) + 1
    if j0 < 0:
        j0 = 0
    if j1 > H - 1:
        j1 = H - 1
    return j0, j1


@njit(cache=True, parallel=True)
def forward_columns(ray_ptr, gids, alpha, gamma0, beta, tau, inten, z, dz, ell, attenuate):
    """Accumulate log-transmittance, coverage mass S and weighted echo sum per pixel.

    Returns ``(log_t, s_map, n_map)`` each shaped ``(H, K)``.
    """
    H = z.shape[0]
    K = ray_ptr.shape[0] - 1
    log_t = np.zeros((H, K))
    s_map = np.zeros((H, K))
    n_map = np.zeros((H, K))
    for k in prange(K):
        full = np.zeros(H + 1)
        cum = np.zeros(_P + 1)
        for p in range(ray_ptr[k], ray_ptr[k + 1]):
            g = gids[p]
            bt = beta[g]
            al = alpha[p]
            tstar, r2, sigma, a, b, a_clip, b_clip = _interval(al, bt, gamma0[p], ell)
            # echo
            if r2 <= ECHO_Q_CUT:
                half = np.sqrt((ECHO_Q_CUT - r2) / bt)
                j0, j1 = _depth_index_range(tstar - half, tstar + half, dz, H)
                I = inten[g]
                for j in range(j0, j1 + 1):
                    dt = z[j] - tstar
                    w = np.exp(-0.5 * (r2 + bt * dt * dt))
                    if w >= ECHO_CUTOFF:
                        s_map[j, k] += w
                        n_map[j, k] += I * w
            # transmittance
            tg = tau[g]
            if not attenuate or tg >= 1.0 or b <= a or _negligible(r2, sigma):
                continue
            width = (b - a) / _P
            for m in range(_P):
                lo = a + m * width
                hi = a + (m + 1) * width if m < _P - 1 else b
                cum[m + 1] = cum[m] + _panel(lo, hi, r2, bt, tstar)
            psi_full = cum[_P]
            if psi_full < PSI_CUTOFF:
                continue
            j0, j1 = _depth_index_range(a, b, dz, H)
            for j in range(j0, j1 + 1):
                zj = z[j]
                if zj <= a:
                    continue
                if zj >= b:
                    break
                m = int((zj - a) / width)
                if m > _P - 1:
                    m = _P - 1
                lo = a + m * width
                psi = cum[m] + _panel(lo, zj, r2, bt, tstar)
                log_t[j, k] += np.log(tg + (1.0 - tg) * np.exp(-psi))
            jb = _first_at_or_below(b, z, dz)
            if jb < H:
                full[jb] += np.log(tg + (1.0 - tg) * np.exp(-psi_full))
        acc = 0.0
        for j in range(H):
            acc += full[j]
            log_t[j, k] += acc
    return log_t, s_map, n_map


@njit(cache=True, inline="always")
def _panel_grad(lo, hi, r2, beta, tstar, alpha, g, out):
    """Add ``g * dQ/d(lo, hi, gamma0, alpha, beta)`` of one panel into ``out[0:5]``.

    The integrand is ``f(t) = exp(-(gamma0 + 2 alpha t + beta t^2) / 2)``.
    """
    h = 0.5 * (hi - lo)
    m = 0.5 * (hi + lo)
    sf = 0.0
    s_lo = 0.0
    s_hi = 0.0
    s_g0 = 0.0
    s_al = 0.0
    s_be = 0.0
    for n in range(3):
        if n == 0:
            xi = _X0
            wn = _W0
        elif n == 1:
            xi = _X1
            wn = _W1
        else:
            xi = _X2
            wn = _W2
        t = m + h * xi
        f = _integrand(t, r2, beta, tstar)
        fp = -(alpha + beta * t) * f
        sf += wn * f
        s_lo += wn * fp * 0.5 * (1.0 - xi)
        s_hi += wn * fp * 0.5 * (1.0 + xi)
        s_g0 += wn * (-0.5 * f)
        s_al += wn * (-t * f)
        s_be += wn * (-0.5 * t * t * f)
    out[0] += g * (-0.5 * sf + h * s_lo)
    out[1] += g * (0.5 * sf + h * s_hi)
    out[2] += g * h * s_g0
    out[3] += g * h * s_al
    out[4] += g * h * s_be


@njit(cache=True, parallel=True)
def backward_columns(ray_ptr, gids, alpha, gamma0, beta, tau, inten, z, dz, ell, attenuate,
                     g_logt, g_s, g_n):
    """Per-pair reverse-mode derivatives given per-pixel adjoints.

    ``g_logt``, ``g_s``, ``g_n`` are dL/d(log T), dL/dS and dL/dN per pixel.  Returns
    per-pair ``(g_alpha, g_gamma0, g_beta, g_tau, g_inten)``; the caller reduces them by
    Gaussian id in a fixed order.
    """
    H = z.shape[0]
    K = ray_ptr.shape[0] - 1
    npairs = gids.shape[0]
    ga = np.zeros(npairs)
    gg = np.zeros(npairs)
    gb = np.zeros(npairs)
    gt = np.zeros(npairs)
    gi = np.zeros(npairs)
    for k in prange(K):
        suffix = np.zeros(H + 1)
        for j in range(H - 1, -1, -1):
            suffix[j] = suffix[j + 1] + g_logt[j, k]
        cum = np.zeros(_P + 1)
        panel_g = np.zeros(_P)
        acc = np.zeros(5)
        tmp = np.zeros(5)
        for p in range(ray_ptr[k], ray_ptr[k + 1]):
            g = gids[p]
            bt = beta[g]
            al = alpha[p]
            g0 = gamma0[p]
            tstar, r2, sigma, a, b, a_clip, b_clip = _interval(al, bt, g0, ell)
            d_al = 0.0
            d_g0 = 0.0
            d_be = 0.0
            # echo: w = exp(-q/2), q = gamma0 + 2 alpha z + beta z^2
            if r2 <= ECHO_Q_CUT:
                half = np.sqrt((ECHO_Q_CUT - r2) / bt)
                j0, j1 = _depth_index_range(tstar - half, tstar + half, dz, H)
                I = inten[g]
                d_i = 0.0
                for j in range(j0, j1 + 1):
                    zj = z[j]
                    dt = zj - tstar
                    w = np.exp(-0.5 * (r2 + bt * dt * dt))
                    if w >= ECHO_CUTOFF:
                        gw = g_s[j, k] + I * g_n[j, k]
                        d_i += g_n[j, k] * w
                        gq = -0.5 * w * gw
                        d_g0 += gq
                        d_al += 2.0 * zj * gq
                        d_be += zj * zj * gq
                gi[p] = d_i
            tg = tau[g]
            if attenuate and tg < 1.0 and b > a and not _negligible(r2, sigma):
                width = (b - a) / _P
                for m in range(_P):
                    lo = a + m * width
                    hi = a + (m + 1) * width if m < _P - 1 else b
                    cum[m + 1] = cum[m] + _panel(lo, hi, r2, bt, tstar)
                    panel_g[m] = 0.0
                psi_full = cum[_P]
                if psi_full >= PSI_CUTOFF:
                    for c in range(5):
                        acc[c] = 0.0  # d/d(a, b, gamma0, alpha, beta)
                    d_tau = 0.0
                    j0, j1 = _depth_index_range(a, b, dz, H)
                    for j in range(j0, j1 + 1):
                        zj = z[j]
                        if zj <= a:
                            continue
                        if zj >= b:
                            break
                        m = int((zj - a) / width)
                        if m > _P - 1:
                            m = _P - 1
                        lo = a + m * width
                        psi = cum[m] + _panel(lo, zj, r2, bt, tstar)
                        e = np.exp(-psi)
                        F = tg + (1.0 - tg) * e
                        gl = g_logt[j, k]
                        d_tau += gl * (1.0 - e) / F
                        gpsi = -gl * (1.0 - tg) * e / F
                        for mm in range(m):
                            panel_g[mm] += gpsi
                        # partial panel [lo, zj]; lo = a + m (b - a) / P, zj constant
                        tmp[:] = 0.0
                        _panel_grad(lo, zj, r2, bt, tstar, al, gpsi, tmp)
                        fb = m / _P
                        acc[0] += tmp[0] * (1.0 - fb)
                        acc[1] += tmp[0] * fb
                        acc[2] += tmp[2]
                        acc[3] += tmp[3]
                        acc[4] += tmp[4]
                    jb = _first_at_or_below(b, z, dz)
                    if jb < H:
                        G = suffix[jb]
                        e = np.exp(-psi_full)
                        F = tg + (1.0 - tg) * e
                        d_tau += G * (1.0 - e) / F
                        gpsi = -G * (1.0 - tg) * e / F
                        for mm in range(_P):
                            panel_g[mm] += gpsi
                    for m in range(_P):
                        if panel_g[m] != 0.0:
                            lo = a + m * width
                            hi = a + (m + 1) * width if m < _P - 1 else b
                            tmp[:] = 0.0
                            _panel_grad(lo, hi, r2, bt, tstar, al, panel_g[m], tmp)
                            f_lo = m / _P
                            f_hi = (m + 1) / _P
                            acc[0] += tmp[0] * (1.0 - f_lo) + tmp[1] * (1.0 - f_hi)
                            acc[1] += tmp[0] * f_lo + tmp[1] * f_hi
                            acc[2] += tmp[2]
                            acc[3] += tmp[3]
                            acc[4] += tmp[4]
                    gt[p] = d_tau
                    d_g0 += acc[2]
                    d_al += acc[3]
                    d_be += acc[4]
                    # endpoints: a = t* - h sigma, b = t* + h sigma unless clipped
                    dts_dal = -1.0 / bt
                    dts_dbe = al / (bt * bt)
                    dsig_dbe = -0.5 / (bt * np.sqrt(bt))
                    if not a_clip:
                        d_al += acc[0] * dts_dal
                        d_be += acc[0] * (dts_dbe - _H * dsig_dbe)
                    if not b_clip:
                        d_al += acc[1] * dts_dal
                        d_be += acc[1] * (dts_dbe + _H * dsig_dbe)
            ga[p] = d_al
            gg[p] = d_g0
            gb[p] = d_be
    return ga, gg, gb, gt, gi
