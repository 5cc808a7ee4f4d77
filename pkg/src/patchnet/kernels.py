"""Numeric primitives shared by every layer.

Tensors are plain ``float64`` numpy arrays: rank 3 is ``(channels, height,
width)``, rank 4 is ``(out_channels, in_channels, kernel_h, kernel_w)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class InvalidArgument(ValueError):
    """Raised when shapes or arguments violate an operation's contract."""


def as_tensor3(x, name="tensor") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise InvalidArgument(f"{name}: expected a non-empty rank-3 tensor, got shape {arr.shape}")
    return arr


def as_tensor4(x, name="weights") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 4 or min(arr.shape) < 1:
        raise InvalidArgument(f"{name}: expected a non-empty rank-4 tensor, got shape {arr.shape}")
    return arr


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    """View of shape (C, Ho, Wo, kh, kw) over all valid kernel placements."""
    return sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]


def conv2d_valid(x, weights, stride: int = 1) -> np.ndarray:
    """Valid-mode multi-channel cross-correlation (no kernel flip, no padding)."""
    x = as_tensor3(x, "input")
    w = as_tensor4(weights)
    if stride < 1:
        raise InvalidArgument(f"stride must be >= 1, got {stride}")
    c, h, wd = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise InvalidArgument(f"in_channels mismatch: weights have {ci}, input has {c}")
    if kh > h or kw > wd:
        bad = [ax for ax, k, n in (("height", kh, h), ("width", kw, wd)) if k > n]
        raise InvalidArgument(f"kernel does not fit inside input along {', '.join(bad)}")
    win = _windows(x, kh, kw, stride)
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw)
    out = cols @ w.reshape(o, -1).T
    return np.ascontiguousarray(out.T.reshape(o, ho, wo))


def conv2d_valid_backward(x, weights, grad_out, stride: int = 1, need_input_grad: bool = True):
    """Gradients of :func:`conv2d_valid` w.r.t. its weights and (optionally) input."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    g = np.asarray(grad_out, dtype=np.float64)
    c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho, wo = g.shape[1], g.shape[2]
    win = _windows(x, kh, kw, stride)
    cols = win.transpose(1, 2, 0, 3, 4).reshape(ho * wo, c * kh * kw)
    gw = (g.reshape(o, -1) @ cols).reshape(w.shape)
    if not need_input_grad:
        return gw, None
    gx = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            # (o, ho, wo) x (o, c) -> (c, ho, wo)
            contrib = np.tensordot(w[:, :, i, j], g, axes=([0], [0]))
            gx[:, i:i + stride * (ho - 1) + 1:stride, j:j + stride * (wo - 1) + 1:stride] += contrib
    return gw, gx


# ----------------------------------------------------------------------------
# FFT


@dataclass
class ComplexPlane:
    height: int
    width: int
    re: np.ndarray
    im: np.ndarray

    @classmethod
    def from_array(cls, z) -> "ComplexPlane":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.shape[0], z.shape[1], z.real.copy(), z.imag.copy())

    def to_array(self) -> np.ndarray:
        return np.asarray(self.re, dtype=np.float64) + 1j * np.asarray(self.im, dtype=np.float64)


def is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _fft_axis(z: np.ndarray, inverse: bool) -> np.ndarray:
    """Iterative radix-2 DIT transform along the last axis (unnormalized)."""
    n = z.shape[-1]
    if n == 1:
        return z.copy()
    a = z[..., _bit_reverse(n)].astype(np.complex128)
    sign = 1.0 if inverse else -1.0
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(a.shape[:-1] + (n // size, size))
        even = blocks[..., :half].copy()
        odd = blocks[..., half:] * tw
        blocks[..., :half] = even + odd
        blocks[..., half:] = even - odd
        a = blocks.reshape(a.shape)
        size *= 2
    return a


def fft2_array(z, inverse: bool = False) -> np.ndarray:
    """Radix-2 2-D DFT over the last two axes of a (possibly batched) array.

    The forward transform is unnormalized; the inverse divides by H*W.
    """
    z = np.asarray(z, dtype=np.complex128)
    h, w = z.shape[-2], z.shape[-1]
    if not (is_power_of_two(h) and is_power_of_two(w)):
        raise InvalidArgument(f"FFT dimensions must be powers of two, got {h}x{w}")
    out = _fft_axis(z, inverse)
    out = np.swapaxes(_fft_axis(np.swapaxes(out, -1, -2), inverse), -1, -2)
    if inverse:
        out = out / (h * w)
    return out


def fft2d(plane: ComplexPlane, inverse: bool = False) -> ComplexPlane:
    if not (is_power_of_two(plane.height) and is_power_of_two(plane.width)):
        raise InvalidArgument(
            f"FFT dimensions must be powers of two, got {plane.height}x{plane.width}")
    return ComplexPlane.from_array(fft2_array(plane.to_array(), inverse=inverse))


# ----------------------------------------------------------------------------
# pooling / masking / peak


def _pool_windows(x: np.ndarray) -> np.ndarray:
    """(C, H, W) -> (C, H/2, W/2, 4) with window order (0,0),(0,1),(1,0),(1,1)."""
    c, h, w = x.shape
    return x.reshape(c, h // 2, 2, w // 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, h // 2, w // 2, 4)


def _unpool_windows(x: np.ndarray) -> np.ndarray:
    c, h2, w2, _ = x.shape
    return x.reshape(c, h2, w2, 2, 2).transpose(0, 1, 3, 2, 4).reshape(c, 2 * h2, 2 * w2)


def _check_pool_args(scores, offsets, bias):
    s = as_tensor3(scores, "scores")
    f = as_tensor3(offsets, "offsets")
    b = np.asarray(bias, dtype=np.float64)
    if s.shape[1] % 2 or s.shape[2] % 2:
        raise InvalidArgument(f"soft_select_pool needs even spatial dims, got {s.shape[1]}x{s.shape[2]}")
    if f.shape[0] != 4 * s.shape[0]:
        raise InvalidArgument(
            f"offsets must have 4x the score channels: {f.shape[0]} vs 4*{s.shape[0]}")
    if f.shape[1:] != s.shape[1:]:
        raise InvalidArgument(f"spatial dims differ: scores {s.shape[1:]}, offsets {f.shape[1:]}")
    if b.shape != (4, 4):
        raise InvalidArgument(f"bias table must be 4 positions x 4 components, got {b.shape}")
    return s, f, b


def soft_select_pool(scores, offsets, bias):
    """2x2/stride-2 pooling: max for scores, softmax-weighted selection for offsets.

    ``bias[p, k]`` is the learned offset added for window position ``p``
    (row-major in the window) and offset component ``k``.
    Returns ``(scores_out, offsets_out)``.
    """
    out, _ = soft_select_pool_fwd(scores, offsets, bias)
    return out


def soft_select_pool_fwd(scores, offsets, bias):
    s, f, b = _check_pool_args(scores, offsets, bias)
    c = s.shape[0]
    sw = _pool_windows(s)                                   # (c, h2, w2, 4)
    fw = _pool_windows(f).reshape(c, 4, *sw.shape[1:])      # (c, k, h2, w2, 4)
    vals = fw + b.T[None, :, None, None, :]                 # F[x] + b[x]
    e = np.exp(sw - sw.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    s_out = sw.max(axis=-1)
    f_out = (vals * p[:, None]).sum(axis=-1).reshape(4 * c, *sw.shape[1:3])
    return (s_out, f_out), (sw, vals, p)


def soft_select_pool_backward(cache, grad_scores, grad_offsets):
    """Returns (d_scores, d_offsets, d_bias) for :func:`soft_select_pool`."""
    sw, vals, p = cache
    c, h2, w2, _ = sw.shape
    gs = np.asarray(grad_scores, dtype=np.float64)
    gf = np.asarray(grad_offsets, dtype=np.float64).reshape(c, 4, h2, w2)
    # max path: first occurrence wins ties
    first = np.argmax(sw, axis=-1)
    d_sw = np.zeros_like(sw)
    np.put_along_axis(d_sw, first[..., None], gs[..., None], axis=-1)
    # softmax-weighted path
    d_vals = gf[..., None] * p[:, None]                     # (c, k, h2, w2, 4)
    v = (gf[..., None] * vals).sum(axis=1)                  # (c, h2, w2, 4)
    d_sw += p * (v - (p * v).sum(axis=-1, keepdims=True))
    d_bias = d_vals.sum(axis=(0, 2, 3)).T                   # (4 positions, 4 comps)
    d_f = _unpool_windows(d_vals.reshape(4 * c, h2, w2, 4))
    return _unpool_windows(d_sw), d_f, d_bias


def apply_mask(weights, mask) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if w.shape != m.shape:
        raise InvalidArgument(f"mask shape {m.shape} does not match weights {w.shape}")
    return w * m


def argmax_spatial(response):
    """Peak of a single-channel map as ``(y, x, value)``; row-major first wins ties."""
    r = as_tensor3(response, "response")
    if r.shape[0] != 1:
        raise InvalidArgument(f"argmax_spatial expects 1 channel, got {r.shape[0]}")
    flat = int(np.argmax(r[0]))
    y, x = divmod(flat, r.shape[2])
    return y, x, float(r[0, y, x])
