"""Differentiable Gaussian-field reconstruction of freehand ultrasound sweeps."""
__version__ = "0.1.0"

from .errors import UltraGRayError  # noqa: E402,F401
from .probe import Pose, ProbeGeometry  # noqa: E402,F401
from .scene import GaussianField, load_scene, save_scene  # noqa: E402,F401
from .render import RenderOptions, render  # noqa: E402,F401
