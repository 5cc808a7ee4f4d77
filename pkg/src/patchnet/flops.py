"""FLOP reports: component ablation rows and the patch-size sweep."""
from __future__ import annotations

from .aggregation import net_flops
from .correlation import CorrelationConfig, corr_flops, correlation_flops

ABLATIONS = (
    ("patch-aggregation", False, False),
    ("+fourier", True, False),
    ("+bbox-regression", False, True),
    ("full", True, True),
)

REPORT_HEADER = ["variant", "correlation", "aggregation", "fft", "total"]
SWEEP_HEADER = ["K", "N", "template_size", "search_size", "correlation", "aggregation", "fft", "total"]


def variant_flops(config: CorrelationConfig, fourier: bool, bbox: bool) -> dict:
    c = corr_flops(config, fourier)
    n = net_flops(config)
    agg = n["score_path"] + (n["offset_path"] if bbox else 0)
    return {"correlation": c["correlation"], "aggregation": agg, "fft": c["fft"],
            "total": c["correlation"] + agg + c["fft"]}


def ablation_rows(config: CorrelationConfig, variants=ABLATIONS):
    rows = []
    for name, fourier, bbox in variants:
        f = variant_flops(config, fourier, bbox)
        rows.append([name, f["correlation"], f["aggregation"], f["fft"], f["total"]])
    return rows


def patch_size_sweep(config: CorrelationConfig, sizes=(2, 4, 8, 16)):
    """Cost at fixed N and fixed correlation-map size, varying the patch size K."""
    h = config.corr_size
    agg = sum(net_flops(config).values())
    rows = []
    for K in sizes:
        search = (h - 1) * config.corr_stride + K
        c = correlation_flops(config.N, K, config.channels, search, config.corr_stride)
        rows.append([K, config.N, config.N * K, search, c["correlation"], agg, c["fft"],
                     c["total"] + agg])
    return rows
