"""Synthetic experiments: scale sweep, short-range ablation benchmark, tracking sequences."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import ModelParams
from .boxes import BBox, DegenerateOutput, crop_and_warp, iou
from .correlation import CorrelationConfig
from .kernels import argmax_spatial, conv2d_valid
from .matcher import Matcher
from .synth import (Background, MotionSpec, TexturedObject, moved_box, random_scene,
                    render_frame, sample_motion)
from .tracking import miss_rate
from .training import TrainConfig, pair_seeds, synth_pair, train

DEFAULT_SCALES = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3, 1.4)


def full_template_center(template_frame, search_frame, box: BBox, config: CorrelationConfig,
                         zero_mean: bool = False):
    """Peak of a single NK x NK template filter, in search-crop pixels.

    The filter is the raw template, the same kind of filter each patch is;
    ``zero_mean`` subtracts the per-channel mean first.
    """
    template, _ = crop_and_warp(template_frame, box, config.template_size, config.template_context)
    search, _ = crop_and_warp(search_frame, box, config.search_size, config.search_context)
    filt = template - template.mean(axis=(1, 2), keepdims=True) if zero_mean else template
    resp = conv2d_valid(search, filt[None], config.corr_stride)
    y, x, _ = argmax_spatial(resp)
    h, w = resp.shape[1:]
    half = config.search_size / 2
    return (half + (x - (w - 1) / 2) * config.corr_stride,
            half + (y - (h - 1) / 2) * config.corr_stride)


def _crop_px_error(center, target: BBox, geom) -> float:
    """Distance between a search-crop point and the target center, in crop pixels."""
    tx = (target.center[0] - geom.center_x) * geom.scale + geom.size / 2
    ty = (target.center[1] - geom.center_y) * geom.scale + geom.size / 2
    return float(np.hypot(center[0] - tx, center[1] - ty))


SWEEP_HEADER = ["object", "scale", "method", "center_error"]


def scale_sweep(params: ModelParams, n_objects: int, scales=DEFAULT_SCALES, seed: int = 1234,
                max_translation: float = 0.1, zero_mean: bool = False):
    """Center error (search-crop pixels) of PatchNet and full-template correlation per scale."""
    config = params.config
    matcher = Matcher(params)
    rows = []
    for i, s in enumerate(pair_seeds(seed, n_objects)):
        rng = np.random.default_rng(s)
        scene = random_scene(rng)
        f0 = render_frame(scene.background, [(scene.obj, scene.box)])
        bank = matcher.make_bank(f0, scene.box)
        for scale in scales:
            motion = MotionSpec(max_translation=max_translation, scale=scale, brightness=0.0)
            dx, dy, _, _ = sample_motion(rng, scene.box, motion)
            target = moved_box(scene.box, dx, dy, scale)
            f1 = render_frame(scene.background, [(scene.obj, target)])
            _, geom = crop_and_warp(f1, scene.box, config.search_size, config.search_context)
            r = matcher.match(f1, bank, scene.box)
            if r.box is not None:
                cx = (r.box.center[0] - geom.center_x) * geom.scale + geom.size / 2
                cy = (r.box.center[1] - geom.center_y) * geom.scale + geom.size / 2
                pn = _crop_px_error((cx, cy), target, geom)
            else:
                pn = float("inf")
            ft = _crop_px_error(full_template_center(f0, f1, scene.box, config, zero_mean), target, geom)
            rows.append([i, scale, "full-template", ft])
            rows.append([i, scale, "patchnet", pn])
    return rows


def sweep_means(rows) -> dict:
    out: dict = {}
    for _, scale, method, err in rows:
        out.setdefault((method, scale), []).append(err)
    return {k: float(np.mean(v)) for k, v in out.items()}


# ----------------------------------------------------------------------------
# short-range ablation benchmark


@dataclass(frozen=True)
class Variant:
    name: str
    train_fourier: bool
    use_bbox: bool


VARIANTS = (
    Variant("patch-aggregation", False, False),
    Variant("+fourier", True, False),
    Variant("+bbox-regression", False, True),
    Variant("full", True, True),
)


def train_variant(config: CorrelationConfig, variant: Variant, base: TrainConfig) -> ModelParams:
    tc = TrainConfig(**{**base.__dict__, "train_fourier": variant.train_fourier,
                        "use_bbox": variant.use_bbox})
    params, _ = train(config, tc)
    return params


def short_range_benchmark(matcher: Matcher, n_pairs: int = 500, gap: int = 10, seed: int = 4242,
                          threshold: float = 0.7, motion: MotionSpec | None = None) -> float:
    """Miss rate of template(t) -> target(t + gap) matches on seeded synthetic pairs."""
    config = matcher.config
    misses = []
    for s in pair_seeds(seed, n_pairs):
        pair = synth_pair(s, motion, config)
        bank = matcher.make_bank(pair.template_frame, pair.template_box)
        try:
            box = matcher.match(pair.search_frame, bank, pair.template_box).box
        except DegenerateOutput:
            box = None
        pred = [pair.template_box] + [None] * (gap - 1) + [box]
        gt = [pair.template_box] + [None] * (gap - 1) + [pair.target_box]
        misses.append(miss_rate(pred, gt, gap, threshold))
    return float(np.mean(misses))


# ----------------------------------------------------------------------------
# tracking sequences


def synthetic_sequence(seed: int, n_frames: int, n_objects: int = 1, size: int = 192,
                       speed: float = 0.02, zoom: float = 0.01, static: bool = False):
    """Frames of objects drifting with constant velocity and zoom rate.

    ``speed`` and ``zoom`` are per-frame, relative to object size. Returns
    ``(frames, {frame: [BBox, ...]})``.
    """
    rng = np.random.default_rng(seed)
    bg = Background(rng)
    objs = []
    for k in range(n_objects):
        w = rng.uniform(28, 44)
        h = w * rng.uniform(0.8, 1.25)
        cx = size * (k + 1) / (n_objects + 1)
        cy = rng.uniform(0.4, 0.6) * size
        vel = rng.uniform(-speed, speed, 2) * w
        z = 1.0 + rng.uniform(-zoom, zoom)
        objs.append((TexturedObject(rng), BBox.from_center(cx, cy, w, h), vel, z))
    frames, gt = [], {}
    for t in range(n_frames):
        placed = []
        for obj, box0, vel, z in objs:
            if static:
                b = box0
            else:
                cx, cy = box0.center
                sc = z ** t
                b = BBox.from_center(cx + vel[0] * t, cy + vel[1] * t, box0.width * sc, box0.height * sc)
            placed.append((obj, b))
        frames.append(render_frame(bg, placed, size))
        gt[t] = [b for _, b in placed]
    return frames, gt


def sequence_summary(history, gt, threshold: float = 0.7):
    """(miss rate, mean IoU) over every groundtruth box of every frame.

    Predictions are paired with groundtruth through the session's object
    ids; a dropped object counts as IoU 0.
    """
    ious = []
    for rec in history:
        by_id = dict(zip(rec.ids, rec.boxes))
        for k, g in enumerate(gt.get(rec.index, [])):
            ious.append(iou(by_id.get(k), g))
    if not ious:
        return 1.0, 0.0
    arr = np.array(ious)
    return float(np.mean(arr < threshold)), float(arr.mean())
