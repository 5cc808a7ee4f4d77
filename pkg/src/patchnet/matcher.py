"""End-to-end matching: template bank + search crop -> MatchResult with a frame box."""
from __future__ import annotations

from dataclasses import dataclass

from .aggregation import MatchResult, ModelParams, forward, net_flops
from .boxes import BBox, crop_and_warp
from .correlation import TemplateFilterBank, build_bank, corr_flops, correlate


@dataclass
class Matcher:
    params: ModelParams
    use_bbox: bool = True
    relu: bool = False

    @property
    def config(self):
        return self.params.config

    def make_bank(self, frame, box: BBox) -> TemplateFilterBank:
        bank, _ = build_bank(frame, box, self.config, self.params.coeffs)
        return bank

    def match(self, frame, bank: TemplateFilterBank, prior: BBox) -> MatchResult:
        cfg = self.config
        search, geom = crop_and_warp(frame, prior, cfg.search_size, cfg.search_context)
        corr = correlate(search, bank, cfg)
        return forward(corr, self.params, prior, geom, use_offsets=self.use_bbox, relu=self.relu)

    def flops(self, fourier: bool = True) -> int:
        c = corr_flops(self.config, fourier)
        n = net_flops(self.config, self.params)
        return c["total"] + n["score_path"] + (n["offset_path"] if self.use_bbox else 0)
