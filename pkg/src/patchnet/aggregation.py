"""Aggregation subnet: masked conv + soft-selection pooling, repeated once per stage."""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .boxes import BBox, CropGeometry, compose_box
from .correlation import CorrelationConfig, FourierCoefficients
from .kernels import (InvalidArgument, apply_mask, argmax_spatial, conv2d_valid,
                      conv2d_valid_backward, soft_select_pool_backward, soft_select_pool_fwd)


@dataclass
class AggregationStage:
    score_conv: np.ndarray    # (n_in/4, n_in, 3, 3)
    offset_conv: np.ndarray   # (n_in, 4*n_in, 3, 3)
    pool_bias: np.ndarray     # (4 window positions, 4 components)
    score_mask: np.ndarray
    offset_mask: np.ndarray

    @property
    def in_channels(self) -> int:
        return self.score_conv.shape[1]


@dataclass
class ModelParams:
    config: CorrelationConfig
    coeffs: FourierCoefficients
    stages: list[AggregationStage]
    loss_alpha: float = 0.05

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


@dataclass
class MatchResult:
    response: np.ndarray
    offsets: np.ndarray
    peak: tuple[int, int]
    confidence: float
    box: BBox | None = None


def children(parent_grid: int) -> np.ndarray:
    """Row-major child patch indices (4 per parent) one level down the patch pyramid."""
    g = 2 * parent_grid
    out = np.empty((parent_grid * parent_grid, 4), dtype=np.intp)
    for r in range(parent_grid):
        for c in range(parent_grid):
            out[r * parent_grid + c] = [(2 * r + a) * g + 2 * c + b for a in (0, 1) for b in (0, 1)]
    return out


def adjacency_masks(config: CorrelationConfig, stage: int):
    """(score_mask, offset_mask) for 1-based ``stage``."""
    parent_grid = config.N >> stage
    n_out = parent_grid * parent_grid
    n_in = 4 * n_out
    kids = children(parent_grid)
    sm = np.zeros((n_out, n_in, 3, 3))
    om = np.zeros((4 * n_out, 4 * n_in, 3, 3))
    for m in range(n_out):
        sm[m, kids[m]] = 1.0
        for k in range(4):
            om[4 * m + k, 4 * kids[m] + k] = 1.0
    return sm, om


def init_params(config: CorrelationConfig, seed: int = 0, noise: float = 0.01,
                loss_alpha: float = 0.05, aligned: bool = True) -> ModelParams:
    """Analytic patch-aggregation initialization.

    Both paths average the four child patches. With ``aligned`` each child
    is read at the kernel tap matching its place inside the parent (the
    corners of the 3x3 kernel); otherwise every child uses the kernel
    center. Score weights get seeded Gaussian noise on their unmasked
    entries. Pool biases start at the geometric displacement of each window
    position.
    """
    rng = np.random.default_rng(seed)
    stages = []
    for s in range(1, config.stages + 1):
        sm, om = adjacency_masks(config, s)
        tap = np.zeros((4, 3, 3))
        for a in range(4):
            if aligned:
                tap[a, 2 * (a // 2), 2 * (a % 2)] = 1.0
            else:
                tap[a, 1, 1] = 1.0
        kids = children(config.N >> s)
        score = np.zeros_like(sm)
        offset = np.zeros_like(om)
        for m in range(kids.shape[0]):
            score[m, kids[m]] = 0.25 * tap
            for k in range(4):
                offset[4 * m + k, 4 * kids[m] + k] = 0.25 * tap
        if noise:
            score = score + sm * rng.normal(0.0, noise, sm.shape)
        step = config.corr_stride * 2 ** (s - 1)
        bias = np.zeros((4, 4))
        for p, (i, j) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
            bias[p] = [j * step, i * step, j * step, i * step]
        stages.append(AggregationStage(score, offset, bias, sm, om))
    return ModelParams(config, FourierCoefficients.ones(config.K), stages, loss_alpha)


# ----------------------------------------------------------------------------
# masked convolution restricted to the connections a mask allows


def _fan_in(mask: np.ndarray) -> np.ndarray | None:
    conn = mask.reshape(mask.shape[0], mask.shape[1], -1).any(axis=2)
    counts = conn.sum(axis=1)
    if counts.min() != counts.max() or counts[0] == 0:
        return None
    return np.nonzero(conn)[1].reshape(mask.shape[0], counts[0])


def _group_cols(xg: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """(o, fan, H, W) -> (o, fan*kh*kw, Ho*Wo) im2col per output channel."""
    o, fan = xg.shape[:2]
    win = sliding_window_view(xg, (kh, kw), axis=(2, 3))   # (o, fan, Ho, Wo, kh, kw)
    ho, wo = win.shape[2:4]
    return win.transpose(0, 1, 4, 5, 2, 3).reshape(o, fan * kh * kw, ho * wo)


def masked_conv(x: np.ndarray, weights: np.ndarray, mask: np.ndarray):
    """3x3 valid conv with masked weights; only connected channels are touched."""
    w = apply_mask(weights, mask)
    idx = _fan_in(mask)
    if idx is None:
        return conv2d_valid(x, w), (x, w, None, None)
    o = w.shape[0]
    kh, kw = w.shape[2:]
    ho, wo = x.shape[1] - kh + 1, x.shape[2] - kw + 1
    wc = w[np.arange(o)[:, None], idx].reshape(o, 1, -1)    # (o, 1, fan*kh*kw)
    cols = _group_cols(x[idx], kh, kw)
    out = np.matmul(wc, cols).reshape(o, ho, wo)
    return out, (x, w, idx, cols)


def masked_conv_backward(cache, grad_out: np.ndarray, mask: np.ndarray, need_input_grad=True):
    x, w, idx, cols = cache
    if idx is None:
        gw, gx = conv2d_valid_backward(x, w, grad_out, 1, need_input_grad)
        return gw * mask, gx
    o, _, kh, kw = w.shape
    fan = idx.shape[1]
    ho, wo = grad_out.shape[1:]
    g = grad_out.reshape(o, 1, ho * wo)
    gwc = np.matmul(g, cols.transpose(0, 2, 1)).reshape(o, fan, kh, kw)
    gw = np.zeros_like(w)
    gw[np.arange(o)[:, None], idx] = gwc
    gw *= mask
    gx = None
    if need_input_grad:
        wc = w[np.arange(o)[:, None], idx]                    # (o, fan, kh, kw)
        gxg = np.zeros((o, fan) + x.shape[1:])
        for i in range(kh):
            for j in range(kw):
                gxg[:, :, i:i + ho, j:j + wo] += wc[:, :, i, j, None, None] * grad_out[:, None]
        gx = np.zeros_like(x)
        np.add.at(gx, idx, gxg)
    return gw, gx


# ----------------------------------------------------------------------------
# forward / backward


def input_scale(config: CorrelationConfig) -> float:
    """Correlation sums enter the net as per-element means."""
    return 1.0 / (config.K * config.K * config.channels)


def _check_input(corr_map, params: ModelParams):
    x = np.asarray(corr_map, dtype=np.float64)
    cfg = params.config
    if x.ndim != 3:
        raise InvalidArgument(f"stage 1: correlation map must be rank 3, got shape {x.shape}")
    if x.shape[0] != cfg.N ** 2:
        raise InvalidArgument(f"stage 1: expected {cfg.N ** 2} channels, got {x.shape[0]}")
    h = x.shape[1]
    for s, st in enumerate(params.stages, 1):
        if h - 2 < 2 or (h - 2) % 2 or x.shape[2] != x.shape[1]:
            raise InvalidArgument(
                f"stage {s}: spatial size {h} cannot pass a 3x3 valid conv and 2x2 pool")
        h = (h - 2) // 2
    return x


def forward_train(corr_map, params: ModelParams, relu: bool = False):
    x = _check_input(corr_map, params) * input_scale(params.config)
    f = np.zeros((4 * x.shape[0],) + x.shape[1:])
    caches = []
    last = len(params.stages) - 1
    for s, st in enumerate(params.stages):
        ys, cs = masked_conv(x, st.score_conv, st.score_mask)
        if s == 0:
            # the first block's offset input is identically zero
            yf, cf = np.zeros((st.offset_conv.shape[0],) + ys.shape[1:]), None
        else:
            yf, cf = masked_conv(f, st.offset_conv, st.offset_mask)
        (x, f), cp = soft_select_pool_fwd(ys, yf, st.pool_bias)
        act = None
        if relu and s < last:
            act = x > 0
            x = x * act
        caches.append((cs, cf, cp, act))
    return x, f, caches


@dataclass
class StageGrads:
    score_conv: np.ndarray
    offset_conv: np.ndarray
    pool_bias: np.ndarray


@dataclass
class ModelGrads:
    coeffs: np.ndarray                        # quadrant-shaped
    stages: list[StageGrads] = field(default_factory=list)

    def __iadd__(self, other: "ModelGrads"):
        self.coeffs = self.coeffs + other.coeffs
        for a, b in zip(self.stages, other.stages):
            a.score_conv = a.score_conv + b.score_conv
            a.offset_conv = a.offset_conv + b.offset_conv
            a.pool_bias = a.pool_bias + b.pool_bias
        return self

    def scaled(self, k: float) -> "ModelGrads":
        return ModelGrads(self.coeffs * k, [StageGrads(g.score_conv * k, g.offset_conv * k,
                                                       g.pool_bias * k) for g in self.stages])

    def arrays(self):
        yield self.coeffs
        for g in self.stages:
            yield g.score_conv
            yield g.offset_conv
            yield g.pool_bias


def backward_net(caches, params: ModelParams, d_response, d_offsets, need_input_grad=True):
    """Returns (d corr_map, [StageGrads]) for :func:`forward_train`."""
    gs = np.asarray(d_response, dtype=np.float64)
    gf = np.asarray(d_offsets, dtype=np.float64)
    grads = []
    for s in range(len(params.stages) - 1, -1, -1):
        st = params.stages[s]
        cs, cf, cp, act = caches[s]
        if act is not None:
            gs = gs * act
        d_ys, d_yf, d_bias = soft_select_pool_backward(cp, gs, gf)
        first = s == 0
        g_score, gs = masked_conv_backward(cs, d_ys, st.score_mask, need_input_grad or not first)
        if cf is None:
            g_off, gf = np.zeros_like(st.offset_conv), None
        else:
            g_off, gf = masked_conv_backward(cf, d_yf, st.offset_mask, True)
        grads.append(StageGrads(g_score, g_off, d_bias))
    grads.reverse()
    d_corr = gs * input_scale(params.config) if gs is not None else None
    return d_corr, grads


def forward(corr_map, params: ModelParams, prior: BBox | None = None,
            geom: CropGeometry | None = None, use_offsets: bool = True,
            relu: bool = False) -> MatchResult:
    response, offsets, _ = forward_train(corr_map, params, relu)
    y, x, conf = argmax_spatial(response)
    box = None
    if prior is not None and geom is not None:
        cfg = params.config
        offs = offsets[:, y, x] if use_offsets else np.zeros(4)
        box = compose_box(prior, (y, x), offs, response.shape[1:], cfg.search_size,
                          cfg.eff_stride, geom, conf)
    return MatchResult(response, offsets, (y, x), conf, box)


# ----------------------------------------------------------------------------
# FLOP accounting


def net_flops(config: CorrelationConfig, params: ModelParams | None = None,
              dense: bool = False) -> dict:
    """Per-component analytic FLOPs of the aggregation subnet.

    ``score_path``: score convs plus 3 comparisons per max-pool window.
    ``offset_path``: offset convs, 8 FLOPs per window for the softmax and
    48 per window for selecting four biased offsets.
    Only unmasked weights are counted unless ``dense``.
    """
    if params is None:
        params = init_params(config, noise=0.0)
    h = config.corr_size
    score = offset = 0
    for st in params.stages:
        ho = h - 2
        n_out = st.score_conv.shape[0]
        if dense:
            s_w = st.score_conv[0].size
            o_w = st.offset_conv[0].size
            score += 2 * ho * ho * n_out * s_w
            offset += 2 * ho * ho * 4 * n_out * o_w
        else:
            score += 2 * ho * ho * int(np.count_nonzero(st.score_mask))
            offset += 2 * ho * ho * int(np.count_nonzero(st.offset_mask))
        windows = (ho // 2) ** 2 * n_out
        score += 3 * windows
        offset += (8 + 48) * windows
        h = ho // 2
    return {"score_path": score, "offset_path": offset}
