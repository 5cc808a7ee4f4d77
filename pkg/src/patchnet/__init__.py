"""Patch-based template matching for skip-frame object tracking.

A template is split into small patches that act as correlation filters over
a search crop; a sparse three-stage network aggregates the per-patch maps
into a response map and per-cell boundary offsets.
"""
from .aggregation import MatchResult, ModelParams, forward, init_params, net_flops
from .boxes import BBox, DegenerateInput, DegenerateOutput, iou
from .correlation import (CorrelationConfig, FourierCoefficients, InvariantViolation,
                          TemplateFilterBank, build_bank, correlate)
from .kernels import InvalidArgument, conv2d_valid, fft2d, soft_select_pool
from .matcher import Matcher
from .tracking import KeyframePolicy, SessionError, TrackSession, avg_flops, miss_rate
from .training import TrainConfig, train

__all__ = [
    "BBox", "CorrelationConfig", "DegenerateInput", "DegenerateOutput", "FourierCoefficients",
    "InvalidArgument", "InvariantViolation", "KeyframePolicy", "MatchResult", "Matcher",
    "ModelParams", "SessionError", "TemplateFilterBank", "TrackSession", "TrainConfig",
    "avg_flops", "build_bank", "conv2d_valid", "correlate", "fft2d", "forward", "init_params",
    "iou", "miss_rate", "net_flops", "soft_select_pool", "train",
]
