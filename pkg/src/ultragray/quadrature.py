"""Quadrature constants and contributor cutoffs shared by the reference renderer and the kernels.

Ray/Gaussian overlap integrals are evaluated with composite 3-point Gauss-Legendre
over ``t* +- HALF_WIDTH_SIGMAS * sigma_eff`` split into ``N_PANELS`` equal panels.
"""
import numpy as np

GL_NODES = np.array([-np.sqrt(3.0 / 5.0), 0.0, np.sqrt(3.0 / 5.0)])
GL_WEIGHTS = np.array([5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])

HALF_WIDTH_SIGMAS = 4.0
N_PANELS = 6

# Echo contributors with Mahalanobis weight below this are skipped.
ECHO_CUTOFF = 1e-8
# Gaussians whose full-segment overlap integral is below this do not attenuate.
PSI_CUTOFF = 1e-10

ECHO_Q_CUT = 2.0 * np.log(1.0 / ECHO_CUTOFF)


def cull_radius(max_scale):
    """Mahalanobis radius outside of which a ray cannot reach either cutoff.

    Any quadrature estimate at canonical distance r is bounded by the interval length
    times the integrand peak, ``2 * HALF_WIDTH_SIGMAS * sigma_eff * exp(-r^2 / 2)``,
    with ``sigma_eff <= max_scale``.
    """
    max_scale = np.asarray(max_scale, dtype=np.float64)
    bound = 2.0 * HALF_WIDTH_SIGMAS * max_scale / PSI_CUTOFF
    q_psi = 2.0 * np.log(np.maximum(bound, 1.0))
    return np.sqrt(np.maximum(ECHO_Q_CUT, q_psi)) + 0.05
