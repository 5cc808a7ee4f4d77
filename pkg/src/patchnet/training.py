"""Losses, exact gradients, masked momentum SGD and the synthetic training loop."""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .aggregation import (ModelGrads, ModelParams, StageGrads, backward_net, forward_train,
                          init_params)
from .boxes import BBox, crop_and_warp, crop_geometry, regression_target
from .correlation import (CorrelationConfig, FourierCoefficients, fold_quadrant_grad,
                          fourier_reweight, fourier_reweight_coeff_grad, split_patches)
from .kernels import InvalidArgument, apply_mask, conv2d_valid, conv2d_valid_backward
from .synth import MotionSpec, moved_box, random_scene, render_frame, sample_motion

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 0.05
    lr: float = 3e-2
    momentum: float = 0.9
    batch_size: int = 8
    steps: int = 2000
    smooth_l1_beta: float = 1.0
    loss_balance: float = 1.0
    seed: int = 0
    train_fourier: bool = True
    use_bbox: bool = True
    grad_clip: float = 5.0
    relu: bool = False
    pool_size: int = 1024       # distinct synthetic pairs batches are drawn from

    def __post_init__(self):
        if self.alpha <= 0 or self.lr <= 0 or self.smooth_l1_beta <= 0:
            raise InvalidArgument("alpha, lr and smooth_l1_beta must be positive")
        if self.pool_size < self.batch_size or self.batch_size < 1:
            raise InvalidArgument("need 1 <= batch_size <= pool_size")


# ----------------------------------------------------------------------------
# losses


def localization_loss(response, gt_center, alpha: float):
    """Hinge loss sum_x max(S[x] - S[gt] + alpha * |x - gt|_1, 0) and its subgradient."""
    r = np.asarray(response, dtype=np.float64)
    if r.ndim != 3 or r.shape[0] != 1:
        raise InvalidArgument(f"response must be 1 x H x W, got {r.shape}")
    gy, gx = gt_center
    h, w = r.shape[1:]
    if not (0 <= gy < h and 0 <= gx < w):
        raise InvalidArgument(f"gt_center {gt_center} outside {h}x{w} map")
    yy, xx = np.mgrid[0:h, 0:w]
    margin = r[0] - r[0, gy, gx] + alpha * (np.abs(yy - gy) + np.abs(xx - gx))
    margin[gy, gx] = 0.0
    active = margin > 0
    grad = np.zeros_like(r)
    grad[0] = active
    grad[0, gy, gx] -= active.sum()
    return float(margin[active].sum()), grad


def smooth_l1_loss(pred, target, beta: float = 1.0):
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    a = np.abs(d)
    small = a < beta
    loss = np.where(small, 0.5 * d * d / beta, a - 0.5 * beta)
    grad = np.where(small, d / beta, np.sign(d))
    return float(loss.sum()), grad


# ----------------------------------------------------------------------------
# training pairs


@dataclass
class TrainingPair:
    template_frame: np.ndarray
    search_frame: np.ndarray
    template_box: BBox
    target_box: BBox
    gt_center: tuple[int, int]
    gt_offsets: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def crops(self, config: CorrelationConfig):
        """(template patches, search crop); independent of the parameters."""
        key = config
        if key not in self._cache:
            template, _ = crop_and_warp(self.template_frame, self.template_box,
                                        config.template_size, config.template_context)
            search, _ = crop_and_warp(self.search_frame, self.template_box,
                                      config.search_size, config.search_context)
            self._cache[key] = (split_patches(template, config), search)
        return self._cache[key]


def make_pair(template_frame, search_frame, template_box: BBox, target_box: BBox,
              config: CorrelationConfig) -> TrainingPair:
    geom = crop_geometry(template_box, config.search_size, config.search_context)
    shape = (config.response_size, config.response_size)
    cell, offs = regression_target(template_box, target_box, shape, config.search_size,
                                   config.eff_stride, geom)
    return TrainingPair(template_frame, search_frame, template_box, target_box, cell, offs)


def synth_pair(seed, motion: MotionSpec | None = None,
               config: CorrelationConfig | None = None) -> TrainingPair:
    """Render a template frame and a moved/scaled/re-lit search frame."""
    config = config or CorrelationConfig()
    motion = motion or MotionSpec()
    rng = np.random.default_rng(seed)
    scene = random_scene(rng)
    dx, dy, s, gain = sample_motion(rng, scene.box, motion)
    target = moved_box(scene.box, dx, dy, s)
    f0 = render_frame(scene.background, [(scene.obj, scene.box)])
    f1 = render_frame(scene.background, [(scene.obj, target)], gain=gain)
    return make_pair(f0, f1, scene.box, target, config)


# ----------------------------------------------------------------------------
# gradients


def pair_forward_backward(pair: TrainingPair, params: ModelParams, tc: TrainConfig,
                          need_grads: bool = True):
    cfg = params.config
    patches, search = pair.crops(cfg)
    filters = fourier_reweight(patches, params.coeffs)
    corr = conv2d_valid(search, filters, cfg.corr_stride)
    response, offsets, caches = forward_train(corr, params, tc.relu)
    loc, d_resp = localization_loss(response, pair.gt_center, tc.alpha)
    gy, gx = pair.gt_center
    bbox = 0.0
    d_off = np.zeros_like(offsets)
    if tc.use_bbox and tc.loss_balance:
        bbox, g = smooth_l1_loss(offsets[:, gy, gx], pair.gt_offsets, tc.smooth_l1_beta)
        d_off[:, gy, gx] = tc.loss_balance * g
    losses = {"loc_loss": loc, "bbox_loss": bbox, "total": loc + tc.loss_balance * bbox}
    if not need_grads:
        return losses, None
    d_corr, stage_grads = backward_net(caches, params, d_resp, d_off,
                                       need_input_grad=tc.train_fourier)
    if tc.train_fourier:
        d_filters, _ = conv2d_valid_backward(search, filters, d_corr, cfg.corr_stride,
                                             need_input_grad=False)
        d_coeffs = fold_quadrant_grad(fourier_reweight_coeff_grad(patches, d_filters))
    else:
        d_coeffs = np.zeros((cfg.K // 2 + 1,) * 2)
    return losses, ModelGrads(d_coeffs, stage_grads)


def backward(pairs, params: ModelParams, tc: TrainConfig, threads: int | None = None):
    """Summed losses and gradients over one pair or a batch of pairs."""
    if isinstance(pairs, TrainingPair):
        pairs = [pairs]
    threads = threads or int(os.environ.get("PATCHNET_THREADS", "1"))
    if threads > 1 and len(pairs) > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(lambda p: pair_forward_backward(p, params, tc), pairs))
    else:
        results = [pair_forward_backward(p, params, tc) for p in pairs]
    # in-order reduction keeps the sum bit-reproducible regardless of threads
    total = {"loc_loss": 0.0, "bbox_loss": 0.0, "total": 0.0}
    grads = None
    for losses, g in results:
        for k in total:
            total[k] += losses[k]
        if grads is None:
            grads = g.scaled(1.0)
        else:
            grads += g
    return total, grads


def batch_loss(pairs, params: ModelParams, tc: TrainConfig) -> float:
    return sum(pair_forward_backward(p, params, tc, need_grads=False)[0]["total"] for p in pairs)


# ----------------------------------------------------------------------------
# optimizer


@dataclass
class SGDState:
    velocity: ModelGrads | None = None


def sgd_step(params: ModelParams, grads: ModelGrads, tc: TrainConfig,
             state: SGDState | None = None) -> ModelParams:
    """Momentum SGD, then re-apply the sparsity masks and the coefficient symmetry."""
    state = state if state is not None else SGDState()
    if state.velocity is None or tc.momentum == 0:
        vel = grads.scaled(1.0)
    else:
        vel = state.velocity.scaled(tc.momentum)
        vel += grads
    state.velocity = vel
    new = params.copy()
    if tc.train_fourier:
        q = params.coeffs.quadrant() - tc.lr * vel.coeffs
        new.coeffs = FourierCoefficients.from_quadrant(q)
    for st, v in zip(new.stages, vel.stages):
        st.score_conv = apply_mask(st.score_conv - tc.lr * v.score_conv, st.score_mask)
        st.offset_conv = apply_mask(st.offset_conv - tc.lr * v.offset_conv, st.offset_mask)
        st.pool_bias = st.pool_bias - tc.lr * v.pool_bias
    return new


def clip_grads(grads: ModelGrads, max_norm: float) -> ModelGrads:
    if not max_norm:
        return grads
    norm = float(np.sqrt(sum(float(np.sum(a * a)) for a in grads.arrays())))
    if norm > max_norm:
        return grads.scaled(max_norm / norm)
    return grads


# ----------------------------------------------------------------------------
# loop


def pair_seeds(seed: int, count: int) -> list[int]:
    ss = np.random.SeedSequence(seed)
    return [int(s.generate_state(1)[0]) for s in ss.spawn(count)]


def train(config: CorrelationConfig, tc: TrainConfig, params: ModelParams | None = None,
          pool_size: int | None = None, motion: MotionSpec | None = None, callback=None):
    """Train on a seeded pool of synthetic pairs; returns (params, log rows)."""
    params = params or init_params(config, seed=tc.seed, loss_alpha=tc.alpha)
    if not tc.train_fourier:
        params.coeffs = FourierCoefficients.ones(config.K)
    rows = []
    if tc.steps <= 0:
        return params, rows
    pool = [synth_pair(s, motion, config) for s in pair_seeds(tc.seed, pool_size or tc.pool_size)]
    rng = np.random.default_rng(tc.seed + 1)
    state = SGDState()
    for step in range(tc.steps):
        batch = [pool[i] for i in rng.choice(len(pool), tc.batch_size, replace=False)]
        losses, grads = backward(batch, params, tc)
        grads = clip_grads(grads.scaled(1.0 / len(batch)), tc.grad_clip)
        params = sgd_step(params, grads, tc, state)
        row = {"step": step, **{k: v / len(batch) for k, v in losses.items()}}
        rows.append(row)
        if callback:
            callback(row)
        if step % 100 == 0:
            log.info("step %d loc %.4f bbox %.4f total %.4f", step, row["loc_loss"],
                     row["bbox_loss"], row["total"])
    return params, rows
