"""Sweep datasets on disk and the procedural phantom simulator.

Dataset directory layout::

    manifest.txt   key = value lines (geometry, metadata) and one ``frame = <path> <tilt>`` per frame
    poses.txt      one 4x4 row-major rigid probe-to-world matrix per frame (16 numbers, mm)
    frames/*.pgm   8-bit binary PGM (P5), rows = depth samples, columns = scan lines

The phantom simulator is a plain ray marcher over a layered medium with ellipsoidal
inclusions; it does not touch the Gaussian renderer.
"""
from __future__ import annotations

import math
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigurationError, CorruptFileError, UnsupportedFormatError, ValidationError
from .probe import Pose, ProbeGeometry, rotation_about

MANIFEST = "manifest.txt"
POSES = "poses.txt"
FORMAT_NAME = "ultragray-sweep"
FORMAT_VERSION = 1
RIGID_TOL = 1e-6

# --------------------------------------------------------------------------- images


def write_pgm(path, img01) -> None:
    """Write a [0, 1] image as 8-bit binary PGM (values rounded, clipped)."""
    img = np.clip(np.rint(np.asarray(img01, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


_PGM_HEADER = re.compile(rb"P5\s+(?:#.*?\n\s*)*(\d+)\s+(?:#.*?\n\s*)*(\d+)\s+(?:#.*?\n\s*)*(\d+)\s")


def read_pgm(path) -> np.ndarray:
    """Read an 8-bit P5 PGM into a float image in [0, 1]."""
    data = Path(path).read_bytes()
    m = _PGM_HEADER.match(data)
    if m is None:
        raise CorruptFileError(f"{path}: not a binary PGM (P5)")
    w, h, maxval = (int(g) for g in m.groups())
    if maxval != 255:
        raise UnsupportedFormatError(f"{path}: only 8-bit PGM is supported (maxval {maxval})")
    body = data[m.end():]
    if len(body) != w * h:
        raise CorruptFileError(f"{path}: expected {w * h} pixel bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).astype(np.float64) / 255.0


def write_float_image(path, img) -> None:
    """Raw little-endian float32 plus a ``.hdr`` text sidecar."""
    img = np.asarray(img, dtype="<f4")
    path = Path(path)
    path.write_bytes(img.tobytes())
    path.with_suffix(".hdr").write_text(f"dtype = float32-le\nrows = {img.shape[0]}\ncols = {img.shape[1]}\n")


def read_float_image(path) -> np.ndarray:
    path = Path(path)
    head = _read_keyvals(path.with_suffix(".hdr").read_text())
    shape = int(head["rows"]), int(head["cols"])
    return np.fromfile(path, dtype="<f4").reshape(shape).astype(np.float64)


def _read_keyvals(text: str) -> dict:
    out = {}
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out

# --------------------------------------------------------------------------- datasets


@dataclass
class SweepDataset:
    frames: list                    # [(image H x W in [0, 1], Pose)]
    geometry: ProbeGeometry
    tilts: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    names: list = field(default_factory=list)

    def __post_init__(self):
        if not self.tilts:
            self.tilts = [0.0] * len(self.frames)
        if not self.names:
            self.names = [f"frames/{i:04d}.pgm" for i in range(len(self.frames))]
        for i, (img, pose) in enumerate(self.frames):
            if np.shape(img) != self.geometry.shape:
                raise ConfigurationError(f"frame {i} shape {np.shape(img)} != geometry {self.geometry.shape}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def poses(self) -> list:
        return [p for _, p in self.frames]

    @property
    def images(self) -> list:
        return [img for img, _ in self.frames]

    def subset(self, idx) -> "SweepDataset":
        idx = list(idx)
        return SweepDataset([self.frames[i] for i in idx], self.geometry, [self.tilts[i] for i in idx],
                            dict(self.meta), [self.names[i] for i in idx])

    def select_tilts(self, tilts) -> "SweepDataset":
        want = [float(t) for t in tilts]
        return self.subset(i for i, t in enumerate(self.tilts) if any(abs(t - w) < 1e-9 for w in want))

    def quantized(self) -> "SweepDataset":
        """Copy with every frame rounded to 8 bits, as it would be after a save/load."""
        frames = [(np.rint(np.clip(img, 0, 1) * 255.0) / 255.0, p) for img, p in self.frames]
        return SweepDataset(frames, self.geometry, list(self.tilts), dict(self.meta), list(self.names))


GEOMETRY_KEYS = ("lateral_width", "imaging_depth", "n_scanlines", "n_depth_samples", "elevational_slab")


def validate_rigid(M, label: str = "pose") -> Pose:
    """Check a 4x4 matrix is rigid; repair small drift by polar decomposition."""
    M = np.asarray(M, dtype=np.float64).reshape(4, 4)
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{label}: non-finite entries")
    if np.max(np.abs(M[3] - [0, 0, 0, 1])) > RIGID_TOL:
        raise ValidationError(f"{label}: bottom row must be 0 0 0 1")
    R = M[:3, :3]
    if np.linalg.det(R) <= 0:
        raise ValidationError(f"{label}: rotation has determinant {np.linalg.det(R):.6g} (reflection)")
    err = np.max(np.abs(R.T @ R - np.eye(3)))
    if err > RIGID_TOL:
        raise ValidationError(f"{label}: rotation is not orthonormal (error {err:.3g})")
    if err > 1e-12 or abs(np.linalg.det(R) - 1.0) > 1e-12:
        u, _, vt = np.linalg.svd(R)
        R = u @ vt
        warnings.warn(f"{label}: re-orthogonalized rotation (error {err:.3g})", stacklevel=3)
    return Pose(R, M[:3, 3])


def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(dataset: SweepDataset, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    g = dataset.geometry
    lines = [f"format = {FORMAT_NAME}", f"version = {FORMAT_VERSION}"]
    lines += [f"{k} = {getattr(g, k)}" for k in GEOMETRY_KEYS]
    for k, v in dataset.meta.items():
        lines.append(f"{k} = {v}")
    pose_lines = []
    for name, tilt, (img, pose) in zip(dataset.names, dataset.tilts, dataset.frames):
        lines.append(f"frame = {name} {_fmt(tilt)}")
        (root / name).parent.mkdir(parents=True, exist_ok=True)
        write_pgm(root / name, img)
        pose_lines.append(" ".join(_fmt(x) for x in pose.matrix().reshape(-1)))
    (root / MANIFEST).write_text("\n".join(lines) + "\n")
    (root / POSES).write_text("\n".join(pose_lines) + ("\n" if pose_lines else ""))


def _geometry_from(values: dict) -> ProbeGeometry:
    try:
        kw = {k: (int if k.startswith("n_") else float)(values[k]) for k in GEOMETRY_KEYS if k in values}
    except ValueError as exc:
        raise ConfigurationError(f"bad geometry value in manifest: {exc}") from None
    missing = [k for k in GEOMETRY_KEYS[:4] if k not in kw]
    if missing:
        raise ConfigurationError(f"manifest is missing {', '.join(missing)}")
    return ProbeGeometry(**kw)


def load_dataset(root) -> SweepDataset:
    root = Path(root)
    path = root / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    values, frames_spec, meta = {}, [], {}
    for n, raw in enumerate(path.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise CorruptFileError(f"{path}:{n}: expected key = value")
        key, value = key.strip(), value.strip()
        if key == "frame":
            parts = value.split()
            frames_spec.append((parts[0], float(parts[1]) if len(parts) > 1 else 0.0))
        elif key in ("format", "version") or key in GEOMETRY_KEYS:
            values[key] = value
        else:
            meta[key] = value
    if values.get("format", FORMAT_NAME) != FORMAT_NAME:
        raise UnsupportedFormatError(f"{path}: unknown dataset format {values['format']!r}")
    if int(values.get("version", FORMAT_VERSION)) != FORMAT_VERSION:
        raise UnsupportedFormatError(f"{path}: dataset version {values['version']} is not supported")
    geometry = _geometry_from(values)

    pose_rows = [ln.split() for ln in (root / POSES).read_text().splitlines() if ln.strip()]
    if len(pose_rows) != len(frames_spec):
        raise ValidationError(f"{len(frames_spec)} frames but {len(pose_rows)} poses")
    frames, tilts, names = [], [], []
    for i, ((name, tilt), row) in enumerate(zip(frames_spec, pose_rows)):
        if len(row) != 16:
            raise ValidationError(f"pose {i}: expected 16 numbers, got {len(row)}")
        pose = validate_rigid([float(x) for x in row], f"pose {i} ({name})")
        fpath = root / name
        if not fpath.exists():
            raise FileNotFoundError(f"missing frame file {name}")
        img = read_pgm(fpath)
        if img.shape != geometry.shape:
            raise ValidationError(f"frame {name} is {img.shape}, manifest says {geometry.shape}")
        frames.append((img, pose))
        tilts.append(tilt)
        names.append(name)
    return SweepDataset(frames, geometry, tilts, meta, names)

# --------------------------------------------------------------------------- poses


TILT_AXES = {"lateral": (1.0, 0.0, 0.0), "elevational": (0.0, 1.0, 0.0)}


def tilt_pose(tilt_deg: float, elevation: float, lateral: float = 0.0, top: float = 0.0,
              axis: str = "lateral") -> Pose:
    """Probe face centred at ``(lateral, elevation, top)``.

    ``axis="lateral"`` tilts the image plane out of plane (rocking about the array);
    ``axis="elevational"`` steers it within the plane.
    """
    if axis not in TILT_AXES:
        raise ConfigurationError(f"unknown tilt axis {axis!r}")
    return Pose(rotation_about(TILT_AXES[axis], math.radians(tilt_deg)), [lateral, elevation, top])


def sweep_poses(tilt_deg: float, elevations, axis: str = "lateral") -> list:
    return [tilt_pose(tilt_deg, y, axis=axis) for y in elevations]

# --------------------------------------------------------------------------- phantom


@dataclass
class Layer:
    top: float                      # world z of the upper interface (mm)
    echo: float                     # mean diffuse echogenicity
    attenuation: float = 0.0        # Beer-Lambert coefficient (1/mm)
    scatter: float = 1.0            # speckle amplitude multiplier
    boundary_echo: float = 0.0      # specular echo at the upper interface


@dataclass
class Inclusion:
    center: tuple
    axes: tuple                     # semi-axes (mm), axis aligned
    echo: float
    attenuation: float = 0.0
    scatter: float = 1.0


@dataclass
class PhantomSpec:
    box: np.ndarray
    layers: list
    inclusions: list = field(default_factory=list)
    speckle_density: float = 20.0   # scatterers per mm^3
    speckle_amplitude: float = 0.02  # mean scatterer amplitude (exponential)
    psf_sigma: tuple = (0.3, 0.6, 0.3)  # lateral, elevational, axial (mm, probe frame)
    boundary_width_deg: float = 8.0
    compression: float = 100.0
    gain: float = 1.0
    noise_sigma: float = 0.0
    march_oversample: int = 4
    seed: int = 0
    sweep: dict = field(default_factory=dict)

    def __post_init__(self):
        self.box = np.asarray(self.box, dtype=np.float64).reshape(2, 3)
        if np.any(self.box[1] <= self.box[0]):
            raise ConfigurationError("phantom box must have positive extent")
        if not self.layers:
            raise ConfigurationError("phantom needs at least one layer")
        self.layers = sorted((l if isinstance(l, Layer) else Layer(**l) for l in self.layers), key=lambda l: l.top)
        self.inclusions = [i if isinstance(i, Inclusion) else Inclusion(**i) for i in self.inclusions]
        for inc in self.inclusions:
            c = np.asarray(inc.center, dtype=np.float64)
            if np.any(c < self.box[0]) or np.any(c > self.box[1]):
                raise ConfigurationError(f"inclusion centre {inc.center} outside the phantom box")
        if min(self.psf_sigma) <= 0 or self.compression <= 0 or self.march_oversample < 1:
            raise ConfigurationError("psf_sigma, compression and march_oversample must be positive")


def load_phantom_spec(path) -> PhantomSpec:
    import tomli

    with open(path, "rb") as fh:
        doc = tomli.load(fh)
    doc = dict(doc)
    box = [doc.pop("box_min"), doc.pop("box_max")]
    for key in ("psf_sigma",):
        if key in doc:
            doc[key] = tuple(doc[key])
    try:
        return PhantomSpec(box=box, **doc)
    except TypeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, str):
        return '"' + v + '"'
    return repr(float(v)) if isinstance(v, float) else repr(int(v))


def phantom_spec_to_toml(spec: PhantomSpec) -> str:
    out = [f"box_min = {_toml_value(list(spec.box[0]))}", f"box_max = {_toml_value(list(spec.box[1]))}"]
    for key in ("speckle_density", "speckle_amplitude", "psf_sigma", "boundary_width_deg", "compression",
                "gain", "noise_sigma", "march_oversample", "seed"):
        out.append(f"{key} = {_toml_value(getattr(spec, key))}")
    if spec.sweep:
        out.append("\n[sweep]")
        out += [f"{k} = {_toml_value(v)}" for k, v in spec.sweep.items()]
    for layer in spec.layers:
        out.append("\n[[layers]]")
        out += [f"{k} = {_toml_value(v)}" for k, v in layer.__dict__.items()]
    for inc in spec.inclusions:
        out.append("\n[[inclusions]]")
        out += [f"{k} = {_toml_value(v)}" for k, v in inc.__dict__.items()]
    return "\n".join(out) + "\n"


class Medium:
    """Material lookup (echo, attenuation, scatter strength) at world points."""

    def __init__(self, spec: PhantomSpec):
        self.spec = spec
        self.tops = np.array([l.top for l in spec.layers])
        self.layer_props = np.array([[l.echo, l.attenuation, l.scatter] for l in spec.layers])

    def properties(self, pts: np.ndarray) -> np.ndarray:
        """``(..., 3)`` points to ``(..., 3)`` of (echo, attenuation, scatter)."""
        pts = np.asarray(pts, dtype=np.float64)
        z = pts[..., 2]
        idx = np.clip(np.searchsorted(self.tops, z, side="right") - 1, 0, len(self.tops) - 1)
        props = self.layer_props[idx]
        above = z < self.tops[0]
        props[above] = 0.0
        lo, hi = self.spec.box
        outside = np.any((pts < lo) | (pts > hi), axis=-1)
        for inc in self.spec.inclusions:
            u = (pts - np.asarray(inc.center)) / np.asarray(inc.axes)
            inside = np.einsum("...i,...i->...", u, u) <= 1.0
            props[inside] = (inc.echo, inc.attenuation, inc.scatter)
        props[outside] = 0.0
        return props


def _scatterers(spec: PhantomSpec, medium: Medium):
    lo, hi = spec.box
    rng = np.random.default_rng([spec.seed, 0x5EC])
    count = rng.poisson(spec.speckle_density * float(np.prod(hi - lo)))
    pos = lo + rng.random((count, 3)) * (hi - lo)
    amp = rng.exponential(spec.speckle_amplitude, count) * medium.properties(pos)[:, 2]
    return pos, amp


class PhantomSimulator:
    """B-mode frames of a :class:`PhantomSpec` by dense ray marching."""

    def __init__(self, spec: PhantomSpec):
        self.spec = spec
        self.medium = Medium(spec)
        self.positions, self.amplitudes = _scatterers(spec, self.medium)
        self.tree = cKDTree(self.positions) if len(self.positions) else None

    def pixel_points(self, geometry: ProbeGeometry, pose: Pose) -> np.ndarray:
        K, H = geometry.n_scanlines, geometry.n_depth_samples
        x = -0.5 * geometry.lateral_width + geometry.lateral_width * (np.arange(K) + 0.5) / K
        z = geometry.imaging_depth * (np.arange(H) + 0.5) / H
        local = np.zeros((H, K, 3))
        local[..., 0] = x[None, :]
        local[..., 2] = z[:, None]
        return local @ pose.rotation.T + pose.translation

    def transmission(self, geometry: ProbeGeometry, pose: Pose) -> np.ndarray:
        """One-way Beer-Lambert energy fraction at every pixel (midpoint rule)."""
        K, H = geometry.n_scanlines, geometry.n_depth_samples
        os_ = 2 * self.spec.march_oversample
        h = geometry.imaging_depth / (H * os_)
        s = (np.arange(H * os_) + 0.5) * h
        x = -0.5 * geometry.lateral_width + geometry.lateral_width * (np.arange(K) + 0.5) / K
        local = np.zeros((H * os_, K, 3))
        local[..., 0] = x[None, :]
        local[..., 2] = s[:, None]
        mu = self.medium.properties(local @ pose.rotation.T + pose.translation)[..., 1]
        optical = np.cumsum(mu, axis=0) * h
        # the pixel at z_j = (j + 1/2) H-pitch sits after j*os_ + os_/2 samples
        idx = np.arange(H) * os_ + os_ // 2 - 1
        return np.exp(-optical[idx])

    def speckle(self, points: np.ndarray, pose: Pose) -> np.ndarray:
        if self.tree is None:
            return np.zeros(points.shape[:-1])
        sig = np.asarray(self.spec.psf_sigma, dtype=np.float64)
        flat = points.reshape(-1, 3)
        out = np.zeros(len(flat))
        radius = 4.0 * sig.max()
        for i, nb in enumerate(self.tree.query_ball_point(flat, radius)):
            if not nb:
                continue
            nb = np.sort(np.asarray(nb))
            d = (self.positions[nb] - flat[i]) @ pose.rotation / sig
            out[i] = np.sum(self.amplitudes[nb] * np.exp(-0.5 * np.sum(d * d, axis=1)))
        return out.reshape(points.shape[:-1])

    def boundary_echo(self, points: np.ndarray, pose: Pose, geometry: ProbeGeometry) -> np.ndarray:
        """Specular interface echoes, strongest at normal incidence."""
        out = np.zeros(points.shape[:-1])
        d = pose.rotation[:, 2]
        incidence = math.degrees(math.acos(min(1.0, abs(d[2]))))
        lobe = math.exp(-0.5 * (incidence / self.spec.boundary_width_deg) ** 2)
        sig_ax = self.spec.psf_sigma[2]
        lo, hi = self.spec.box
        inside = np.all((points[..., :2] >= lo[:2]) & (points[..., :2] <= hi[:2]), axis=-1)
        for layer in self.spec.layers:
            if layer.boundary_echo == 0.0:
                continue
            # distance to the plane z = top along the beam
            dist = (points[..., 2] - layer.top) / max(abs(d[2]), 1e-6)
            out += layer.boundary_echo * lobe * np.exp(-0.5 * (dist / sig_ax) ** 2) * inside
        return out

    def frame(self, geometry: ProbeGeometry, pose: Pose, index: int = 0) -> np.ndarray:
        spec = self.spec
        pts = self.pixel_points(geometry, pose)
        echo = self.medium.properties(pts)[..., 0] + self.speckle(pts, pose) + self.boundary_echo(pts, pose, geometry)
        x = spec.gain * self.transmission(geometry, pose) * echo
        if spec.noise_sigma > 0:
            rng = np.random.default_rng([spec.seed, 0xF4A, index])
            x = x + rng.normal(0.0, spec.noise_sigma, x.shape)
        x = np.maximum(x, 0.0)
        y = np.log1p(spec.compression * x) / math.log1p(spec.compression)
        return np.clip(y, 0.0, 1.0)


def generate_phantom(spec: PhantomSpec, geometry: ProbeGeometry, poses, tilts=None, meta=None) -> SweepDataset:
    sim = PhantomSimulator(spec)
    frames = [(sim.frame(geometry, pose, i), pose) for i, pose in enumerate(poses)]
    return SweepDataset(frames, geometry, list(tilts) if tilts is not None else [], dict(meta or {}))


def sweep_dataset(spec: PhantomSpec, geometry: ProbeGeometry, tilts, elevations, sim=None,
                  axis: str = "lateral") -> SweepDataset:
    """Frames for every (tilt, elevation) combination, tilt-major."""
    sim = sim or PhantomSimulator(spec)
    frames, labels = [], []
    for t in tilts:
        for y in elevations:
            pose = tilt_pose(t, y, axis=axis)
            frames.append((sim.frame(geometry, pose, len(frames)), pose))
            labels.append(float(t))
    ys = np.asarray(elevations, dtype=np.float64)
    spacing = float(np.mean(np.diff(ys))) if ys.size > 1 else 0.0
    return SweepDataset(frames, geometry, labels, {"frame_spacing": repr(spacing)})


# --------------------------------------------------------------------------- sweep plans and builtins

SWEEP_DEFAULTS = {"axis": "lateral", "tilts": [0.0], "eval_tilts": [], "elevation_min": -1.5,
                  "elevation_max": 1.5, "frames": 7, "lateral_width": 8.0, "imaging_depth": 8.0,
                  "n_scanlines": 32, "n_depth_samples": 32}


def sweep_plan(spec: PhantomSpec) -> dict:
    unknown = set(spec.sweep) - set(SWEEP_DEFAULTS)
    if unknown:
        raise ConfigurationError(f"unknown [sweep] keys: {sorted(unknown)}")
    return {**SWEEP_DEFAULTS, **spec.sweep}


def spec_geometry(spec: PhantomSpec) -> ProbeGeometry:
    plan = sweep_plan(spec)
    return ProbeGeometry(float(plan["lateral_width"]), float(plan["imaging_depth"]),
                         int(plan["n_scanlines"]), int(plan["n_depth_samples"]))


def phantom_datasets(spec: PhantomSpec, tilts=None, eval_tilts=None, frames=None):
    """Training and evaluation sweeps described by ``spec.sweep`` (arguments override it).

    The evaluation set is ``None`` when no evaluation tilts are given.
    """
    plan = sweep_plan(spec)
    tilts = plan["tilts"] if tilts is None else tilts
    eval_tilts = plan["eval_tilts"] if eval_tilts is None else eval_tilts
    n = int(plan["frames"] if frames is None else frames)
    ys = np.linspace(plan["elevation_min"], plan["elevation_max"], n)
    geometry = spec_geometry(spec)
    sim = PhantomSimulator(spec)
    train = sweep_dataset(spec, geometry, tilts, ys, sim=sim, axis=plan["axis"])
    evald = sweep_dataset(spec, geometry, eval_tilts, ys, sim=sim, axis=plan["axis"]) if len(eval_tilts) else None
    return train, evald


def _shadow_phantom() -> PhantomSpec:
    # a strongly attenuating rod along y above a bright deep interface; steering the
    # plane in-plane moves the acoustic shadow sideways
    return PhantomSpec(
        box=[[-8.0, -6.0, -2.0], [8.0, 6.0, 9.0]],
        layers=[Layer(-2.0, 0.03, 0.02, 1.0), Layer(5.5, 0.05, 0.02, 1.0, 0.1)],
        inclusions=[Inclusion((0.0, 0.0, 2.5), (0.35, 20.0, 0.3), 0.3, 6.0, 0.5)],
        speckle_density=5.0, speckle_amplitude=0.006, seed=3,
        sweep={"axis": "elevational", "tilts": [-20.0, 0.0, 20.0], "eval_tilts": [10.0]})


def _layered_phantom() -> PhantomSpec:
    # tissue-like layers with specular interfaces and an anisotropic PSF, so the
    # appearance changes smoothly with out-of-plane tilt
    return PhantomSpec(
        box=[[-8.0, -6.0, -2.0], [8.0, 6.0, 9.0]],
        layers=[Layer(-2.0, 0.04, 0.03, 1.0), Layer(2.0, 0.08, 0.03, 1.5, 0.25),
                Layer(5.0, 0.05, 0.03, 1.0, 0.35)],
        inclusions=[Inclusion((1.0, 0.0, 3.5), (1.0, 1.5, 0.7), 0.15, 0.05, 0.5)],
        speckle_density=5.0, speckle_amplitude=0.01, psf_sigma=(0.3, 0.6, 0.3), seed=5,
        sweep={"axis": "lateral", "tilts": [0.0, 3.0], "eval_tilts": [1.5, -3.0, -5.0, -7.0, -10.0]})


def _speckle_phantom() -> PhantomSpec:
    # homogeneous speckle only; used for the Gaussian-budget sweep
    return PhantomSpec(
        box=[[-8.0, -6.0, -2.0], [8.0, 6.0, 9.0]],
        layers=[Layer(-2.0, 0.03, 0.01, 1.0)],
        speckle_density=8.0, speckle_amplitude=0.02, seed=7,
        sweep={"axis": "lateral", "tilts": [0.0], "eval_tilts": [1.5], "frames": 9})


BUILTIN_PHANTOMS = {"shadow": _shadow_phantom, "layered": _layered_phantom, "speckle": _speckle_phantom}


def builtin_phantom(name: str) -> PhantomSpec:
    try:
        return BUILTIN_PHANTOMS[name]()
    except KeyError:
        raise ConfigurationError(f"no phantom file or builtin named {name!r} "
                                 f"(builtins: {', '.join(BUILTIN_PHANTOMS)})") from None
