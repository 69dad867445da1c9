"""Adam optimization of a Gaussian field with importance-driven refinement.

One iteration: draw a batch of frames, render each with out-of-plane perturbed ray
origins, take the mean image loss, backpropagate, add the scale regularizer, accumulate
positional-gradient importance and apply one Adam step.  Every ``refine_interval``
iterations inside ``[refine_start, refine_end]`` the field is pruned, duplicated and
split.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import logging
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import ConfigurationError, NumericFaultError
from .grad import GradientBuffer, backward
from .losses import image_loss, scale_regularizer
from .metrics import gms_gmsd, to_255
from .probe import ProbeGeometry
from .render import RenderOptions, render
from .scene import GaussianField, init_random, save_scene

log = logging.getLogger(__name__)

# named RNG sub-streams derived from the run seed
STREAM_INIT, STREAM_BATCH, STREAM_OOP, STREAM_REFINE = 1, 2, 3, 4


@dataclass
class TrainConfig:
    lambda_ssim: float = 0.5
    lambda_scale: float = 1e-3
    lr_means: float = 1e-4
    lr_scales: float = 5e-3
    lr_quats: float = 5e-3
    lr_trans: float = 5e-4
    lr_sh0: float = 5e-3
    lr_sh1: float = 1e-5
    batch_size: int = 8
    total_iters: int = 30000
    sh1_enable_iter: int = 1000
    refine_interval: int = 2500
    refine_start: int = 1000
    refine_end: int = 20000
    s_min: float = 5e-5
    s_max: float = 5.0
    n_max: int = 500000
    delta_oop: float = 2.0
    lr_final_fraction: float = 0.1
    lr_multiplier: float = 1.0
    importance_threshold: float = 2e-6
    split_scale_threshold: float = 1.0
    # not given in the paper
    init_count: int = 10000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    eval_interval: int = 500
    eval_frames: int = 8
    checkpoint_interval: int = 5000
    # ablation switches
    attenuation: bool = True
    sh_degree_max: int = 1
    refine: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = ("batch_size", "total_iters", "refine_interval", "n_max", "init_count", "eval_interval",
                    "checkpoint_interval", "eval_frames")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if not self.lr_multiplier > 0:
            raise ConfigurationError("lr_multiplier must be positive")
        if not 0 < self.lr_final_fraction <= 1:
            raise ConfigurationError("lr_final_fraction must be in (0, 1]")
        if self.delta_oop < 0 or self.s_min < 0 or self.s_max <= self.s_min:
            raise ConfigurationError("need delta_oop >= 0 and 0 <= s_min < s_max")
        if self.sh_degree_max not in (0, 1):
            raise ConfigurationError("sh_degree_max must be 0 or 1")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def as_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)!r}\n" for f in dataclasses.fields(self))


def _coerce(name: str, raw: str, default):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(float(raw)) if float(raw).is_integer() else int(raw)
        return float(raw)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None


def apply_overrides(config: TrainConfig, pairs) -> TrainConfig:
    """Apply ``key=value`` strings (or a mapping) on top of ``config``."""
    names = {f.name for f in dataclasses.fields(config)}
    items = pairs.items() if isinstance(pairs, dict) else (p.split("=", 1) for p in pairs)
    changes = {}
    for item in items:
        if len(item) != 2:
            raise ConfigurationError(f"override must look like key=value, got {item!r}")
        key, value = item[0].strip(), item[1]
        if key not in names:
            raise ConfigurationError(f"unknown config key {key!r}")
        default = getattr(config, key)
        changes[key] = value if not isinstance(value, str) else _coerce(key, value, default)
    return config.replace(**changes)


def parse_config_text(text: str) -> list[str]:
    lines = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line without '=': {raw!r}")
        lines.append(line)
    return lines


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return apply_overrides(base or TrainConfig(), parse_config_text(Path(path).read_text()))


def lr_at(base: float, iteration: int, total: int, final_fraction: float = 0.1) -> float:
    """Exponential decay from ``base`` to ``final_fraction * base`` at ``total``."""
    return base * math.exp(math.log(final_fraction) * iteration / total)


@dataclass
class TrainState:
    moments1: dict
    moments2: dict
    step: int = 0
    importance: np.ndarray = None
    counts: np.ndarray = None
    rng: np.random.Generator = None

    @classmethod
    def fresh(cls, field: GaussianField, seed: int = 0) -> "TrainState":
        n = len(field)
        params = field.params()
        return cls(
            moments1={k: np.zeros_like(v) for k, v in params.items()},
            moments2={k: np.zeros_like(v) for k, v in params.items()},
            importance=np.zeros(n),
            counts=np.zeros(n, dtype=np.int64),
            rng=np.random.default_rng([seed, STREAM_REFINE]),
        )

    def check(self, field: GaussianField) -> None:
        for name, arr in field.params().items():
            if self.moments1[name].shape != arr.shape or self.moments2[name].shape != arr.shape:
                raise ConfigurationError(f"optimizer moments for {name} do not match the field")


def loss(rendered, target, log_scales=None, lambda_ssim: float = 0.5, lambda_scale: float = 1e-3):
    """Total loss, the image gradient of its image part, and the log-scale gradient."""
    value, g_img, _ = image_loss(rendered, target, lambda_ssim)
    if log_scales is None:
        return value, g_img, None
    reg, g_reg = scale_regularizer(log_scales)
    return value + lambda_scale * reg, g_img, lambda_scale * g_reg


def _lrs(config: TrainConfig) -> dict:
    return {"means": config.lr_means, "log_scales": config.lr_scales, "quaternions": config.lr_quats,
            "trans_logits": config.lr_trans}


def adam_step(state: TrainState, field: GaussianField, grads: GradientBuffer, iteration: int,
              config: TrainConfig, sh1_enabled: bool = True) -> None:
    """One bias-corrected Adam update on every parameter class, in place."""
    state.check(field)
    for name, g in grads.arrays().items():
        if not np.all(np.isfinite(g)):
            raise NumericFaultError(f"non-finite gradient in parameter class {name} at iteration {iteration}")
    state.step += 1
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    decay = config.lr_multiplier * lr_at(1.0, iteration, config.total_iters, config.lr_final_fraction)
    base = _lrs(config)
    for name, g in grads.arrays().items():
        p = getattr(field, name)
        m, v = state.moments1[name], state.moments2[name]
        if name == "sh_coeffs":
            lr = np.array([config.lr_sh0] + [config.lr_sh1] * 3) * decay
            cols = slice(None) if sh1_enabled else slice(0, 1)
            p, m, v, g, lr = p[:, cols], m[:, cols], v[:, cols], g[:, cols], lr[cols]
        else:
            lr = base[name] * decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    field.normalize_quaternions()
    for name, arr in field.params().items():
        if not np.all(np.isfinite(arr)):
            raise NumericFaultError(f"non-finite {name} after the optimizer step at iteration {iteration}")


def accumulate_importance(state: TrainState, grads: GradientBuffer) -> None:
    norms = np.linalg.norm(grads.means, axis=1)
    state.importance += norms
    state.counts += norms > 0.0


def mean_importance(state: TrainState) -> np.ndarray:
    return np.where(state.counts > 0, state.importance / np.maximum(state.counts, 1), 0.0)


@dataclass
class RefineReport:
    iteration: int
    before: int
    pruned: int
    duplicated: int
    split: int
    after: int


def refine(field: GaussianField, state: TrainState, config: TrainConfig, iteration: int = 0):
    """Prune, duplicate and split.  Returns ``(new_field, new_state, report)``."""
    n = len(field)
    scales = field.scales
    max_scale = scales.max(axis=1) if n else np.zeros(0)
    alive = (max_scale >= config.s_min) & (max_scale <= config.s_max)
    imp = mean_importance(state)
    hot = alive & (imp > config.importance_threshold)

    # additions in descending importance, stopping at the cap
    order = np.nonzero(hot)[0]
    order = order[np.argsort(-imp[order], kind="stable")]
    room = config.n_max - int(alive.sum())
    chosen = order[:max(room, 0)]
    small = max_scale[chosen] < config.split_scale_threshold
    dup_ids = np.sort(chosen[small])
    split_ids = np.sort(chosen[~small])

    keep = alive.copy()
    keep[split_ids] = False
    keep_ids = np.nonzero(keep)[0]
    R = field.rotations()

    # duplicates: clone, offset by 0.3 scale along a random principal axis
    axis = state.rng.integers(0, 3, dup_ids.size)
    sign = state.rng.choice([-1.0, 1.0], dup_ids.size)
    offs = 0.3 * scales[dup_ids, axis] * sign
    dup_means = field.means[dup_ids] + offs[:, None] * R[dup_ids, :, axis]

    # splits: two children at +-0.5 sigma along the major axis, scales / 1.6
    major = np.argmax(scales[split_ids], axis=1) if split_ids.size else np.zeros(0, dtype=np.int64)
    step = 0.5 * scales[split_ids, major][:, None] * R[split_ids, :, major]
    split_means = np.concatenate([field.means[split_ids] + step, field.means[split_ids] - step])

    src = np.concatenate([keep_ids, dup_ids, split_ids, split_ids]).astype(np.int64)
    new = field.subset(src)
    n_keep, n_dup = keep_ids.size, dup_ids.size
    new.means[n_keep:n_keep + n_dup] = dup_means
    new.means[n_keep + n_dup:] = split_means
    new.log_scales[n_keep + n_dup:] -= math.log(1.6)

    fresh = np.zeros(len(new), dtype=bool)
    fresh[n_keep:] = True
    m1, m2 = {}, {}
    for name in GaussianField.PARAMS:
        for src_m, dst in ((state.moments1, m1), (state.moments2, m2)):
            arr = src_m[name][src].copy()
            arr[fresh] = 0.0
            dst[name] = arr
    new_state = TrainState(m1, m2, state.step, np.zeros(len(new)), np.zeros(len(new), dtype=np.int64), state.rng)
    report = RefineReport(iteration, n, int(n - alive.sum()), int(n_dup), int(split_ids.size), len(new))
    return new, new_state, report


TELEMETRY_COLUMNS = ("iteration", "loss", "l1", "ssim_term", "scale_term", "n_gaussians", "eval_gmsd")


@dataclass
class Telemetry:
    rows: list = dc_field(default_factory=list)
    refinements: list = dc_field(default_factory=list)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r[name] is None else r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TELEMETRY_COLUMNS)
        for r in self.rows:
            w.writerow(["" if r[c] is None else repr(r[c]) for c in TELEMETRY_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv())


def scene_box(frames, geometry: ProbeGeometry, margin: float = 0.0) -> np.ndarray:
    """Axis-aligned box around all frame planes, padded by ``margin`` mm."""
    w, d = 0.5 * geometry.lateral_width, geometry.imaging_depth
    corners = np.array([[x, 0.0, z] for x in (-w, w) for z in (0.0, d)])
    pts = np.concatenate([pose.apply(corners) for _, pose in frames])
    return np.array([pts.min(axis=0) - margin, pts.max(axis=0) + margin])


def _check_dataset(dataset) -> None:
    if not dataset.frames:
        raise ConfigurationError("dataset has no frames")
    for i, (img, _) in enumerate(dataset.frames):
        if np.shape(img) != dataset.geometry.shape:
            raise ConfigurationError(f"frame {i} has shape {np.shape(img)}, geometry expects {dataset.geometry.shape}")


def eval_gmsd(field: GaussianField, frames, geometry: ProbeGeometry, config: TrainConfig, sh_degree: int) -> float:
    opts = RenderOptions(attenuation=config.attenuation, sh_degree=sh_degree)
    vals = [gms_gmsd(to_255(render(field, geometry, pose, opts).bmode), to_255(img))[1] for img, pose in frames]
    return float(np.mean(vals))


def train(dataset, config: TrainConfig | None = None, seed: int = 0, eval_dataset=None,
          field: GaussianField | None = None, checkpoint_dir=None,
          callback: Callable | None = None) -> tuple[GaussianField, Telemetry]:
    """Fit a Gaussian field to a pose-annotated sweep dataset."""
    cfg = config or TrainConfig()
    _check_dataset(dataset)
    geometry = dataset.geometry
    frames = dataset.frames
    if eval_dataset is not None:
        _check_dataset(eval_dataset)
        if eval_dataset.geometry.shape != geometry.shape:
            raise ConfigurationError("eval dataset geometry differs from the training geometry")
        eval_set = list(eval_dataset.frames)
    else:
        pick = np.linspace(0, len(frames) - 1, min(cfg.eval_frames, len(frames))).round().astype(int)
        eval_set = [frames[i] for i in np.unique(pick)]

    if field is None:
        box = scene_box(frames, geometry, margin=cfg.delta_oop)
        field = init_random(min(cfg.init_count, cfg.n_max), box, seed)
    else:
        field = field.copy()
    state = TrainState.fresh(field, seed)
    batch_rng = np.random.default_rng([seed, STREAM_BATCH])
    telemetry = Telemetry()
    ckpt = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckpt is not None:
        ckpt.mkdir(parents=True, exist_ok=True)
    bsz = min(cfg.batch_size, len(frames))

    for it in range(cfg.total_iters):
        iteration = it + 1
        sh1 = cfg.sh_degree_max >= 1 and it >= cfg.sh1_enable_iter
        sh_degree = 1 if sh1 else 0
        batch = np.sort(batch_rng.choice(len(frames), size=bsz, replace=False))
        grads = GradientBuffer.zeros(len(field))
        total_img = l1 = ssim_term = 0.0
        for b, idx in enumerate(batch):
            img, pose = frames[idx]
            opts = RenderOptions(perturb=cfg.delta_oop > 0, delta_max=cfg.delta_oop,
                                 seed=[seed, STREAM_OOP, it, b], retain_backward=True,
                                 attenuation=cfg.attenuation, sh_degree=sh_degree)
            out = render(field, geometry, pose, opts)
            value, g_img, parts = image_loss(out.bmode, img, cfg.lambda_ssim)
            grads.add_(backward(out, g_img, field), 1.0 / bsz)
            total_img += value / bsz
            l1 += parts["l1"] / bsz
            ssim_term += parts["ssim_term"] / bsz
        reg, g_reg = scale_regularizer(field.log_scales)
        grads.log_scales += cfg.lambda_scale * g_reg
        if not sh1:
            grads.sh_coeffs[:, 1:] = 0.0
        accumulate_importance(state, grads)
        adam_step(state, field, grads, it, cfg, sh1_enabled=sh1)

        if (cfg.refine and iteration % cfg.refine_interval == 0
                and cfg.refine_start <= iteration <= cfg.refine_end):
            field, state, report = refine(field, state, cfg, iteration)
            telemetry.refinements.append(report)
            log.info("refine @%d: %s", iteration, report)

        gmsd = None
        if iteration % cfg.eval_interval == 0 or iteration == cfg.total_iters:
            gmsd = eval_gmsd(field, eval_set, geometry, cfg, sh_degree)
        telemetry.rows.append({
            "iteration": iteration, "loss": total_img + cfg.lambda_scale * reg, "l1": l1,
            "ssim_term": ssim_term, "scale_term": reg, "n_gaussians": len(field), "eval_gmsd": gmsd,
        })
        if ckpt is not None and (iteration % cfg.checkpoint_interval == 0 or iteration == cfg.total_iters):
            save_scene(field, ckpt / f"checkpoint_{iteration:06d}.ugs")
        if callback is not None:
            callback(iteration, field, telemetry)
    return field, telemetry
