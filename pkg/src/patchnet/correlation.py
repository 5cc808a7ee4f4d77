"""Patch correlation layer: template -> patch filters -> multi-channel correlation map."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .boxes import BBox, crop_and_warp
from .kernels import InvalidArgument, conv2d_valid, fft2_array, is_power_of_two


class InvariantViolation(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationConfig:
    N: int = 8
    K: int = 8
    template_size: int = 64
    search_size: int = 156
    corr_stride: int = 4
    channels: int = 3
    template_context: float = 1.0

    def __post_init__(self):
        if not is_power_of_two(self.N) or self.N < 4:
            raise InvalidArgument(f"N must be a power of two >= 4, got {self.N}")
        if not is_power_of_two(self.K):
            raise InvalidArgument(f"K must be a power of two, got {self.K}")
        if self.template_size != self.N * self.K:
            raise InvalidArgument(
                f"template_size must equal N*K={self.N * self.K}, got {self.template_size}")
        if self.search_size < self.template_size:
            raise InvalidArgument("search_size must be >= template_size")
        if self.corr_stride < 1 or self.channels < 1:
            raise InvalidArgument("corr_stride and channels must be >= 1")
        self.stage_shapes()  # raises on an infeasible pooling pyramid

    @property
    def stages(self) -> int:
        return int(math.log2(self.N))

    @property
    def corr_size(self) -> int:
        return (self.search_size - self.K) // self.corr_stride + 1

    @property
    def eff_stride(self) -> int:
        return self.corr_stride * 2 ** self.stages

    @property
    def search_context(self) -> float:
        # keeps crop pixels per frame pixel identical for template and search
        return self.template_context * self.search_size / self.template_size

    def stage_shapes(self) -> list[int]:
        """Spatial size entering each stage, followed by the response size."""
        sizes = [self.corr_size]
        for s in range(self.stages):
            conv = sizes[-1] - 2
            if conv < 2 or conv % 2:
                raise InvalidArgument(
                    f"stage {s + 1}: 3x3 valid conv on {sizes[-1]} cells leaves {conv}, "
                    "which cannot be 2x2-pooled; adjust search_size or corr_stride")
            sizes.append(conv // 2)
        return sizes

    @property
    def response_size(self) -> int:
        return self.stage_shapes()[-1]

    def with_(self, **kw) -> "CorrelationConfig":
        d = dict(self.__dict__)
        d.update(kw)
        return CorrelationConfig(**d)


def mirror_index(K: int) -> np.ndarray:
    """Index into the stored quadrant for each of the K frequencies."""
    u = np.arange(K)
    return np.minimum(u, (K - u) % K)


@dataclass(frozen=True)
class FourierCoefficients:
    """Mirror-symmetric K x K spectral weights, shared by all patches and channels."""
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        object.__setattr__(self, "weights", w)
        K = w.shape[0]
        if w.shape != (K, K) or not is_power_of_two(K):
            raise InvalidArgument(f"coefficients must be K x K with K a power of two, got {w.shape}")

    @property
    def K(self) -> int:
        return self.weights.shape[0]

    @classmethod
    def ones(cls, K: int) -> "FourierCoefficients":
        return cls(np.ones((K, K)))

    @classmethod
    def from_quadrant(cls, q) -> "FourierCoefficients":
        q = np.asarray(q, dtype=np.float64)
        K = 2 * (q.shape[0] - 1)
        m = mirror_index(K)
        return cls(q[np.ix_(m, m)])

    def quadrant(self) -> np.ndarray:
        h = self.K // 2 + 1
        return self.weights[:h, :h].copy()

    def is_symmetric(self, tol: float = 0.0) -> bool:
        w = self.weights
        r = (-np.arange(self.K)) % self.K
        return bool(np.all(np.abs(w - w[r, :]) <= tol) and np.all(np.abs(w - w[:, r]) <= tol))


def fold_quadrant_grad(grad_full: np.ndarray) -> np.ndarray:
    """Chain rule through :meth:`FourierCoefficients.from_quadrant`."""
    K = grad_full.shape[0]
    m = mirror_index(K)
    q = np.zeros((K // 2 + 1, K // 2 + 1))
    np.add.at(q, (m[:, None], m[None, :]), grad_full)
    return q


@dataclass(frozen=True)
class TemplateFilterBank:
    filters: np.ndarray
    source_box: BBox | None = None


def split_patches(template, config: CorrelationConfig) -> np.ndarray:
    """Cut a (C, NK, NK) template into N^2 filters, patch p = row * N + col."""
    t = np.asarray(template, dtype=np.float64)
    N, K = config.N, config.K
    if t.ndim != 3 or t.shape[1:] != (N * K, N * K):
        raise InvalidArgument(f"template must be C x {N * K} x {N * K}, got {t.shape}")
    c = t.shape[0]
    return np.ascontiguousarray(
        t.reshape(c, N, K, N, K).transpose(1, 3, 0, 2, 4).reshape(N * N, c, K, K))


def reassemble_patches(filters, N: int) -> np.ndarray:
    f = np.asarray(filters)
    _, c, K, _ = f.shape
    return f.reshape(N, N, c, K, K).transpose(2, 0, 3, 1, 4).reshape(c, N * K, N * K)


def fourier_reweight(filters, coeffs: FourierCoefficients, check: bool = True) -> np.ndarray:
    """Scale every filter's 2-D spectrum by ``coeffs`` and return to the spatial domain."""
    f = np.asarray(filters, dtype=np.float64)
    K = f.shape[-1]
    if f.shape[-2] != K or coeffs.K != K:
        raise InvalidArgument(f"filters are {f.shape[-2]}x{K}, coefficients {coeffs.K}x{coeffs.K}")
    if not coeffs.is_symmetric(1e-12):
        raise InvariantViolation("Fourier coefficients are not mirror-symmetric")
    spec = fft2_array(f) * coeffs.weights
    out = fft2_array(spec, inverse=True)
    if check:
        resid = float(np.max(np.abs(out.imag))) if out.size else 0.0
        if resid >= 1e-6:
            raise InvariantViolation(f"reweighted filters have imaginary residual {resid:.3g}")
    return out.real


def fourier_reweight_coeff_grad(filters, grad_out) -> np.ndarray:
    """d loss / d coefficient map (full K x K) given d loss / d reweighted filters."""
    f = np.asarray(filters, dtype=np.float64)
    K = f.shape[-1]
    P = fft2_array(f)
    G = fft2_array(np.asarray(grad_out, dtype=np.float64))
    return (P * np.conj(G)).real.reshape(-1, K, K).sum(axis=0) / (K * K)


def build_bank(frame, box: BBox, config: CorrelationConfig, coeffs: FourierCoefficients):
    """Template crop -> patches -> reweighted filter bank."""
    template, _ = crop_and_warp(frame, box, config.template_size, config.template_context)
    patches = split_patches(template, config)
    return TemplateFilterBank(fourier_reweight(patches, coeffs), box), patches


def correlate(search, bank: TemplateFilterBank, config: CorrelationConfig) -> np.ndarray:
    filters = bank.filters if isinstance(bank, TemplateFilterBank) else bank
    return conv2d_valid(search, filters, config.corr_stride)


def correlation_flops(N: int, K: int, channels: int, search_size: int, corr_stride: int,
                      fourier: bool = True) -> dict:
    """Analytic FLOPs of the correlation layer (multiply and add counted separately).

    The FFT term covers forward transform, coefficient product and inverse
    transform of every patch/channel plane at 5 K^2 log2(K^2) FLOPs.
    """
    h = (search_size - K) // corr_stride + 1
    n2, k2 = N * N, K * K
    conv = 2 * h * h * n2 * k2 * channels
    fft = int(round(5 * n2 * channels * k2 * math.log2(k2))) if fourier else 0
    return {"correlation": conv, "fft": fft, "total": conv + fft}


def corr_flops(config: CorrelationConfig, fourier: bool = True) -> dict:
    return correlation_flops(config.N, config.K, config.channels, config.search_size,
                             config.corr_stride, fourier)
