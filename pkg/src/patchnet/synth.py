"""Procedural textured objects on textured backgrounds, with exact ground truth."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import BBox

FRAME_SIZE = 192


@dataclass(frozen=True)
class MotionSpec:
    max_translation: float = 0.25       # fraction of object size
    scale_range: tuple[float, float] = (0.7, 1.4)
    brightness: float = 0.15            # max relative gain change
    translation: tuple[float, float] | None = None   # fixed (dx, dy) in pixels
    scale: float | None = None          # fixed scale factor

    @classmethod
    def still(cls) -> "MotionSpec":
        return cls(translation=(0.0, 0.0), scale=1.0, brightness=0.0)


class Background:
    def __init__(self, rng: np.random.Generator, n_waves: int = 10):
        self.base = rng.uniform(0.25, 0.75, 3)
        self.freq = rng.uniform(-0.12, 0.12, (n_waves, 2))
        self.phase = rng.uniform(0, 2 * np.pi, n_waves)
        self.amp = rng.uniform(0.02, 0.08, (n_waves, 3))

    def render(self, h: int, w: int) -> np.ndarray:
        y, x = np.mgrid[0:h, 0:w] + 0.5
        img = np.broadcast_to(self.base, (h, w, 3)).copy()
        for f, p, a in zip(self.freq, self.phase, self.amp):
            img += np.sin(2 * np.pi * (f[0] * x + f[1] * y) + p)[..., None] * a
        return img


class TexturedObject:
    """Rectangle textured in its own normalized coordinates, so scaling is exact."""

    def __init__(self, rng: np.random.Generator, n_shapes: int = 5, n_waves: int = 4):
        self.base = rng.uniform(0.1, 0.9, 3)
        self.freq = rng.uniform(1.0, 6.0, (n_waves, 2)) * rng.choice([-1, 1], (n_waves, 2))
        self.phase = rng.uniform(0, 2 * np.pi, n_waves)
        self.amp = rng.uniform(0.05, 0.15, (n_waves, 3))
        self.shapes = []
        for _ in range(n_shapes):
            kind = rng.choice(["rect", "ellipse"])
            c = rng.uniform(0.1, 0.9, 2)
            r = rng.uniform(0.08, 0.3, 2)
            self.shapes.append((kind, c, r, rng.uniform(0.0, 1.0, 3)))

    def color(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = np.broadcast_to(self.base, u.shape + (3,)).copy()
        for kind, c, r, col in self.shapes:
            du, dv = (u - c[0]) / r[0], (v - c[1]) / r[1]
            inside = (np.abs(du) <= 1) & (np.abs(dv) <= 1) if kind == "rect" else du ** 2 + dv ** 2 <= 1
            out[inside] = col
        for f, p, a in zip(self.freq, self.phase, self.amp):
            out += np.sin(2 * np.pi * (f[0] * u + f[1] * v) + p)[..., None] * a
        return out


def render_frame(bg: Background, objects, size: int = FRAME_SIZE, gain: float = 1.0,
                 bias: float = 0.0, supersample: int = 2) -> np.ndarray:
    """Render ``objects`` [(TexturedObject, BBox)] over ``bg`` to uint8 (H, W, 3)."""
    img = bg.render(size, size)
    ss = supersample
    for obj, box in objects:
        x0, x1 = int(np.floor(box.x_min)), int(np.ceil(box.x_max))
        y0, y1 = int(np.floor(box.y_min)), int(np.ceil(box.y_max))
        x0c, x1c, y0c, y1c = max(x0, 0), min(x1, size), max(y0, 0), min(y1, size)
        if x1c <= x0c or y1c <= y0c:
            continue
        sub = (np.arange(ss) + 0.5) / ss
        ys = (np.arange(y0c, y1c)[:, None] + sub[None, :]).ravel()
        xs = (np.arange(x0c, x1c)[:, None] + sub[None, :]).ravel()
        u = (xs[None, :] - box.x_min) / box.width
        v = (ys[:, None] - box.y_min) / box.height
        u, v = np.broadcast_arrays(u, v)
        inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
        col = obj.color(u, v)
        region = img[y0c:y1c, x0c:x1c]
        under = np.repeat(np.repeat(region, ss, axis=0), ss, axis=1)
        mixed = np.where(inside[..., None], col, under)
        hh, ww = y1c - y0c, x1c - x0c
        img[y0c:y1c, x0c:x1c] = mixed.reshape(hh, ss, ww, ss, 3).mean(axis=(1, 3))
    img = img * gain + bias
    return np.clip(np.round(img * 255), 0, 255).astype(np.uint8)


def random_box(rng: np.random.Generator, size: int = FRAME_SIZE,
               side_range=(28.0, 48.0)) -> BBox:
    w = rng.uniform(*side_range)
    h = w * rng.uniform(0.75, 1.33)
    cx = rng.uniform(size * 0.4, size * 0.6)
    cy = rng.uniform(size * 0.4, size * 0.6)
    return BBox.from_center(cx, cy, w, h)


def moved_box(box: BBox, dx: float, dy: float, scale: float) -> BBox:
    cx, cy = box.center
    return BBox.from_center(cx + dx, cy + dy, box.width * scale, box.height * scale)


def sample_motion(rng: np.random.Generator, box: BBox, motion: MotionSpec):
    if motion.scale is not None:
        s = motion.scale
    else:
        lo, hi = np.log(motion.scale_range[0]), np.log(motion.scale_range[1])
        s = float(np.exp(rng.uniform(lo, hi)))
    if motion.translation is not None:
        dx, dy = motion.translation
    else:
        lim = motion.max_translation * max(box.width, box.height)
        dx, dy = rng.uniform(-lim, lim, 2)
    gain = 1.0 + (rng.uniform(-motion.brightness, motion.brightness) if motion.brightness else 0.0)
    return float(dx), float(dy), s, gain


@dataclass
class Scene:
    background: Background
    obj: TexturedObject
    box: BBox


def random_scene(rng: np.random.Generator) -> Scene:
    return Scene(Background(rng), TexturedObject(rng), random_box(rng))
