"""Boxes, crop geometry and box composition."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .kernels import InvalidArgument


class DegenerateInput(ValueError):
    pass


class DegenerateOutput(ValueError):
    """A composed box with non-positive area; callers treat it as a lost target."""


@dataclass(frozen=True)
class BBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float
    score: float = 1.0

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise InvalidArgument(f"invalid box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return 0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def with_score(self, score: float) -> "BBox":
        return replace(self, score=float(score))

    @classmethod
    def from_center(cls, cx, cy, w, h, score=1.0) -> "BBox":
        return cls(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2, score)


def iou(a: BBox | None, b: BBox | None) -> float:
    if a is None or b is None:
        return 0.0
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.width * a.height + b.width * b.height - inter)


@dataclass(frozen=True)
class CropGeometry:
    """Square crop: ``center`` in frame pixels, ``scale`` crop pixels per frame pixel."""
    center_x: float
    center_y: float
    scale: float
    size: int

    def to_frame(self, u, v):
        """Crop pixel-center coordinates -> frame coordinates."""
        half = self.size / 2
        return (self.center_x + (u + 0.5 - half) / self.scale,
                self.center_y + (v + 0.5 - half) / self.scale)


def crop_geometry(box: BBox, out_size: int, context_factor: float) -> CropGeometry:
    side = context_factor * max(box.width, box.height)
    cx, cy = box.center
    return CropGeometry(cx, cy, out_size / side, out_size)


def _as_image(frame) -> np.ndarray:
    img = np.asarray(frame)
    if img.ndim == 2:
        img = img[:, :, None]
    if img.ndim != 3:
        raise InvalidArgument(f"frame must be HxW or HxWxC, got shape {img.shape}")
    return img


def crop_and_warp(frame, box: BBox, out_size: int, context_factor: float = 1.0):
    """Square context crop around ``box`` resampled bilinearly to ``out_size``.

    ``frame`` is an ``(H, W, C)`` 8-bit-range image; the result is a
    ``(C, out_size, out_size)`` tensor in [0, 1]. Samples falling outside the
    frame take the frame's mean intensity.
    """
    if box.width <= 1 or box.height <= 1:
        raise DegenerateInput(f"box side must exceed 1px, got {box.width}x{box.height}")
    img = _as_image(frame).astype(np.float64) / 255.0
    geom = crop_geometry(box, out_size, context_factor)
    return warp(img, geom), geom


def warp(img: np.ndarray, geom: CropGeometry) -> np.ndarray:
    h, w, c = img.shape
    grid = np.arange(geom.size)
    fx, fy = geom.to_frame(grid, grid)
    # frame pixel centers sit at integer + 0.5
    sx = fx - 0.5
    sy = fy - 0.5
    x0 = np.floor(sx).astype(int)
    y0 = np.floor(sy).astype(int)
    ax = sx - x0
    ay = sy - y0
    fill = img.mean(axis=(0, 1))
    padded = np.empty((h + 2, w + 2, c))
    padded[:] = fill
    padded[1:-1, 1:-1] = img
    # indices outside [-1, w] all map to the fill border
    xi0 = np.clip(x0 + 1, 0, w + 1)
    xi1 = np.clip(x0 + 2, 0, w + 1)
    yi0 = np.clip(y0 + 1, 0, h + 1)
    yi1 = np.clip(y0 + 2, 0, h + 1)
    top = padded[yi0][:, xi0] * (1 - ax)[None, :, None] + padded[yi0][:, xi1] * ax[None, :, None]
    bot = padded[yi1][:, xi0] * (1 - ax)[None, :, None] + padded[yi1][:, xi1] * ax[None, :, None]
    out = top * (1 - ay)[:, None, None] + bot * ay[:, None, None]
    return np.ascontiguousarray(out.transpose(2, 0, 1))


def cell_anchor(peak, response_shape, search_size: int, eff_stride: float):
    """Search-crop pixel position (x, y) that a response cell stands for."""
    py, px = peak
    rh, rw = response_shape
    half = search_size / 2
    return (half + (px - (rw - 1) / 2) * eff_stride,
            half + (py - (rh - 1) / 2) * eff_stride)


def compose_box(prior: BBox, peak, offsets, response_shape, search_size: int,
                eff_stride: float, geom: CropGeometry, score: float = 1.0) -> BBox:
    """Prior re-centered at the peak cell, plus boundary offsets given in crop pixels."""
    py, px = peak
    rh, rw = response_shape
    if not (0 <= py < rh and 0 <= px < rw):
        raise InvalidArgument(f"peak {peak} outside response map {response_shape}")
    ax, ay = cell_anchor(peak, response_shape, search_size, eff_stride)
    half = search_size / 2
    cx = geom.center_x + (ax - half) / geom.scale
    cy = geom.center_y + (ay - half) / geom.scale
    pcx, pcy = prior.center
    dx0, dy0, dx1, dy1 = (float(o) / geom.scale for o in offsets)
    x_min = prior.x_min + (cx - pcx) + dx0
    y_min = prior.y_min + (cy - pcy) + dy0
    x_max = prior.x_max + (cx - pcx) + dx1
    y_max = prior.y_max + (cy - pcy) + dy1
    if not (x_max > x_min and y_max > y_min):
        raise DegenerateOutput(f"composed box has non-positive area: {(x_min, y_min, x_max, y_max)}")
    return BBox(x_min, y_min, x_max, y_max, score)


def regression_target(prior: BBox, target: BBox, response_shape, search_size: int,
                      eff_stride: float, geom: CropGeometry):
    """Inverse of :func:`compose_box`: ground-truth cell and offsets for ``target``."""
    rh, rw = response_shape
    tcx, tcy = target.center
    u = (tcx - geom.center_x) * geom.scale / eff_stride + (rw - 1) / 2
    v = (tcy - geom.center_y) * geom.scale / eff_stride + (rh - 1) / 2
    cell = (int(np.clip(np.floor(v + 0.5), 0, rh - 1)), int(np.clip(np.floor(u + 0.5), 0, rw - 1)))
    ax, ay = cell_anchor(cell, response_shape, search_size, eff_stride)
    half = search_size / 2
    cx = geom.center_x + (ax - half) / geom.scale
    cy = geom.center_y + (ay - half) / geom.scale
    pcx, pcy = prior.center
    s = geom.scale
    offs = np.array([
        (target.x_min - (prior.x_min + cx - pcx)) * s,
        (target.y_min - (prior.y_min + cy - pcy)) * s,
        (target.x_max - (prior.x_max + cx - pcx)) * s,
        (target.y_max - (prior.y_max + cy - pcy)) * s,
    ])
    return cell, offs
