"""Skip-frame tracking: keyframe oracle on sparse frames, patch matching in between."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .boxes import BBox, DegenerateInput, DegenerateOutput, iou
from .correlation import TemplateFilterBank
from .kernels import InvalidArgument
from .matcher import Matcher


class SessionError(RuntimeError):
    pass


@dataclass(frozen=True)
class KeyframePolicy:
    mode: str = "fixed"
    interval: int = 5
    conf_threshold: float | None = None   # None: half the running keyframe self-match mean
    max_inter: int = 5

    def __post_init__(self):
        if self.mode not in ("fixed", "online"):
            raise InvalidArgument(f"unknown keyframe policy {self.mode!r}")
        if self.interval < 1 or self.max_inter < 1:
            raise InvalidArgument("interval and max_inter must be >= 1")


# oracle(frame_index, frame) -> detections on that frame
KeyframeOracle = Callable[[int, np.ndarray], Sequence[BBox]]


def groundtruth_oracle(gt: dict[int, list[BBox]]) -> KeyframeOracle:
    def oracle(index, frame):
        if index not in gt:
            raise SessionError(f"no groundtruth for keyframe {index}")
        return list(gt[index])
    return oracle


def noisy_oracle(gt: dict[int, list[BBox]], sigma: float, seed: int = 0) -> KeyframeOracle:
    """Groundtruth boxes with seeded Gaussian jitter on every boundary."""
    rng = np.random.default_rng(seed)

    def oracle(index, frame):
        out = []
        for b in gt[index]:
            d = rng.normal(0.0, sigma, 4)
            try:
                out.append(BBox(b.x_min + d[0], b.y_min + d[1], b.x_max + d[2], b.y_max + d[3], b.score))
            except InvalidArgument:
                out.append(b)
        return out
    return oracle


@dataclass
class FrameRecord:
    index: int
    boxes: list[BBox]
    was_keyframe: bool
    matched: int            # matcher invocations on this frame
    ids: list[int] = field(default_factory=list)   # oracle detection index per box


@dataclass
class TrackSession:
    matcher: Matcher
    oracle: KeyframeOracle
    policy: KeyframePolicy = field(default_factory=KeyframePolicy)
    banks: list[TemplateFilterBank] = field(default_factory=list)
    boxes: list[BBox] = field(default_factory=list)
    ids: list[int] = field(default_factory=list)
    frames_since_key: int = 0
    history: list[FrameRecord] = field(default_factory=list)
    self_conf: list[float] = field(default_factory=list)
    frame_shape: tuple | None = None

    @property
    def threshold(self) -> float:
        if self.policy.conf_threshold is not None:
            return self.policy.conf_threshold
        return 0.5 * float(np.mean(self.self_conf)) if self.self_conf else -np.inf

    def _keyframe(self, index, frame):
        try:
            boxes = list(self.oracle(index, frame))
        except SessionError:
            raise
        except Exception as exc:
            raise SessionError(f"keyframe oracle failed on frame {index}: {exc}") from exc
        banks, kept, ids = [], [], []
        for k, b in enumerate(boxes):
            try:
                bank = self.matcher.make_bank(frame, b)
            except DegenerateInput:
                continue
            banks.append(bank)
            kept.append(b)
            ids.append(k)
            if self.policy.mode == "online" and self.policy.conf_threshold is None:
                self.self_conf.append(self.matcher.match(frame, bank, b).confidence)
        self.banks, self.boxes, self.ids = banks, kept, ids
        self.frames_since_key = 0
        return kept

    def _match_all(self, frame):
        h, w = frame.shape[:2]
        results = []
        for bank, prior in zip(self.banks, self.boxes):
            try:
                r = self.matcher.match(frame, bank, prior)
            except DegenerateOutput:
                results.append((bank, None, -np.inf))
                continue
            cx, cy = r.box.center
            inside = 0 <= cx < w and 0 <= cy < h
            results.append((bank, r.box if inside else None, r.confidence))
        return results

    def step(self, frame) -> tuple[list[BBox], bool]:
        frame = np.asarray(frame)
        index = len(self.history)
        if self.frame_shape is None:
            self.frame_shape = frame.shape
        elif frame.shape != self.frame_shape:
            raise InvalidArgument(f"frame {index} has shape {frame.shape}, expected {self.frame_shape}")
        matched = 0
        fire = index == 0
        results = None
        if not fire:
            self.frames_since_key += 1
            p = self.policy
            if p.mode == "fixed":
                fire = self.frames_since_key >= p.interval
            else:
                fire = self.frames_since_key > p.max_inter
                if not fire and self.banks:
                    results = self._match_all(frame)
                    matched = len(results)
                    fire = any(conf < self.threshold for _, _, conf in results)
        if fire:
            boxes = self._keyframe(index, frame)
        else:
            if results is None:
                results = self._match_all(frame)
                matched = len(results)
            kept = [(bank, box, i) for (bank, box, _), i in zip(results, self.ids) if box is not None]
            self.banks = [k[0] for k in kept]
            self.boxes = [k[1] for k in kept]
            self.ids = [k[2] for k in kept]
            boxes = list(self.boxes)
        self.history.append(FrameRecord(index, list(boxes), fire, matched, list(self.ids)))
        return boxes, fire


def avg_flops(history: Sequence[FrameRecord], oracle_flops: float, matcher_flops: float) -> float:
    """Mean per-frame cost: oracle on keyframes plus one matcher run per object match."""
    if not history:
        raise InvalidArgument("avg_flops needs at least one processed frame")
    keys = sum(1 for r in history if r.was_keyframe)
    matches = sum(r.matched for r in history)
    return (keys * oracle_flops + matches * matcher_flops) / len(history)


def projected_flops(interval: int, oracle_flops: float, matcher_flops: float,
                    objects: int = 1) -> float:
    """Fixed-interval steady state: one keyframe followed by ``interval - 1`` inter-frames."""
    return (oracle_flops + (interval - 1) * matcher_flops * objects) / interval


def miss_rate(pred: Sequence[BBox | None], gt: Sequence[BBox | None], gap: int = 10,
              threshold: float = 0.7) -> float:
    """Fraction of frames t >= gap, predicted from a template at t - gap, with IoU < threshold.

    ``pred`` and ``gt`` are aligned per-frame sequences; ``None`` marks a
    missing prediction (always a miss). Frames without groundtruth are skipped.
    """
    if len(pred) != len(gt):
        raise InvalidArgument(f"length mismatch: {len(pred)} predictions vs {len(gt)} groundtruth")
    if gap < 1:
        raise InvalidArgument("gap must be >= 1")
    scores = [iou(p, g) for p, g in zip(pred[gap:], gt[gap:]) if g is not None]
    if not scores:
        raise InvalidArgument("no evaluation pairs")
    return float(np.mean(np.array(scores) < threshold))
