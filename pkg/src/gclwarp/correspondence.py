"""Pose-feature encoders, global correlation and the coarse flow.

The source branch encodes the source pose map concatenated with the garment
image; the target branch encodes the target pose map alone.  Both produce a
feature pyramid whose deepest level sits on the H/S x W/S base grid; the
all-pairs correlation of the (L2-normalised) deepest features is the global
correspondence, with rows indexing target cells and columns source cells.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .gacrm import GacrmStack
from .warping import FlowField

__all__ = [
    "FeaturePyramid",
    "FeatureEncoder",
    "correlate",
    "normalize_correlation",
    "coarse_warp",
    "corr_to_flow",
    "CorrespondenceNetwork",
    "check_correlation_budget",
]


@dataclass
class FeaturePyramid:
    """levels[0] is the deepest (base-grid) map; each level doubles in size."""

    levels: list[torch.Tensor]


def check_correlation_budget(image_hw, stride, budget_bytes, bytes_per_entry=4):
    """Refuse configurations whose N x N correlation cannot fit the budget."""
    h, w = image_hw
    n = (h // stride) * (w // stride)
    need = n * n * bytes_per_entry
    if need > budget_bytes:
        raise ValueError(
            f"correlation matrix for {h}x{w} at stride {stride} needs "
            f"{n}x{n} entries = {need / 2 ** 20:.0f} MiB, over the budget of "
            f"{budget_bytes / 2 ** 20:.0f} MiB; increase the stride or the budget"
        )
    return need


def _conv_block(cin, cout, stride):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.InstanceNorm2d(cout, affine=True),
        nn.LeakyReLU(0.1),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.InstanceNorm2d(cout, affine=True),
        nn.LeakyReLU(0.1),
    )


class FeatureEncoder(nn.Module):
    """Fully convolutional stack of stride-2 blocks down to the base grid.

    widths[-1] is the base-grid channel count.  The pyramid holds the last
    `num_levels` maps, deepest first.
    """

    def __init__(self, in_channels, widths=(32, 64, 96), num_levels=3):
        super().__init__()
        if not 1 <= num_levels <= len(widths):
            raise ValueError(f"num_levels must be in [1, {len(widths)}]")
        self.num_levels = num_levels
        blocks = []
        cin = in_channels
        for cout in widths:
            blocks.append(_conv_block(cin, cout, 2))
            cin = cout
        self.blocks = nn.ModuleList(blocks)

    @property
    def level_channels(self):
        widths = [b[0].out_channels for b in self.blocks]
        return widths[::-1][: self.num_levels]

    def forward(self, x) -> FeaturePyramid:
        h, w = x.shape[-2:]
        stride = 2 ** len(self.blocks)
        if h % stride != 0 or w % stride != 0:
            raise ValueError(f"input size {h}x{w} not divisible by stride {stride}")
        maps = []
        for block in self.blocks:
            x = block(x)
            maps.append(x)
        return FeaturePyramid(maps[::-1][: self.num_levels])


def correlate(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    """All-pairs correlation; rows index target cells, columns source cells.

    x: (B, N, C) source features, y: (B, N, C) target features, both already
    L2-normalised per row.  out[b, t, s] = <y[b, t], x[b, s]>.
    """
    if x.shape[-1] != y.shape[-1]:
        raise ValueError(f"channel mismatch: {x.shape[-1]} vs {y.shape[-1]}")
    return torch.bmm(y, x.transpose(1, 2))


def normalize_correlation(raw: torch.Tensor, temperature: float) -> torch.Tensor:
    """Row-wise softmax of raw / temperature."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    return torch.softmax(raw / temperature, dim=-1)


def coarse_warp(o: torch.Tensor, g_base: torch.Tensor) -> torch.Tensor:
    """Warp a base-grid image by matrix multiplication: rows mix source cells.

    o: (B, N, N); g_base: (B, C, h, w) with h*w == N.
    """
    b, c, h, w = g_base.shape
    if o.shape[-1] != h * w:
        raise ValueError(f"correspondence size {o.shape[-1]} != {h}x{w}")
    flat = g_base.reshape(b, c, h * w).transpose(1, 2)  # (B, N, C)
    out = torch.bmm(o, flat)
    return out.transpose(1, 2).reshape(b, c, h, w)


def corr_to_flow(o: torch.Tensor, hw: tuple[int, int]) -> FlowField:
    """Argmax each row into a base-grid flow; ties pick the smallest index."""
    h, w = hw
    b = o.shape[0]
    idx = o.argmax(dim=2)  # first occurrence on ties
    sx = (idx % w).to(o.dtype).reshape(b, h, w)
    sy = (idx // w).to(o.dtype).reshape(b, h, w)
    gy, gx = torch.meshgrid(
        torch.arange(h, device=o.device, dtype=o.dtype),
        torch.arange(w, device=o.device, dtype=o.dtype),
        indexing="ij",
    )
    flow = torch.stack([sx - gx, sy - gy], dim=1)
    return FlowField(flow.detach(), level=0)


class _ConvFlowHead(nn.Module):
    """Plain convolutional initial-flow predictor (no-correlation variant)."""

    def __init__(self, in_channels, hidden=64):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_channels, hidden, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(hidden, hidden, 3, padding=1),
            nn.LeakyReLU(0.1),
            nn.Conv2d(hidden, 2, 3, padding=1),
        )

    def forward(self, x):
        return self.net(x)


class CorrespondenceNetwork(nn.Module):
    """Stage-one network: encoders, global correspondence and refinement.

    pose_channels is the per-pixel pose encoding width (one-hot part plus u
    and v); the source branch consumes pose_channels + 3 garment channels.
    With use_global_correspondence=False the initial flow comes from a plain
    convolution head on the concatenated base-grid features instead of the
    correlation argmax.
    """

    def __init__(
        self,
        pose_channels,
        num_levels=3,
        widths=(32, 64, 96),
        hidden_width=64,
        temperature=0.07,
        use_global_correspondence=True,
        image_hw=None,
        stride=8,
        correlation_budget_bytes=1 << 30,
    ):
        super().__init__()
        if image_hw is not None and use_global_correspondence:
            check_correlation_budget(image_hw, stride, correlation_budget_bytes)
        self.temperature = temperature
        self.use_global_correspondence = use_global_correspondence
        self.stride = stride
        self.source_encoder = FeatureEncoder(pose_channels + 3, widths, num_levels)
        self.target_encoder = FeatureEncoder(pose_channels, widths, num_levels)
        chans = self.source_encoder.level_channels
        self.refiner = GacrmStack(chans[1:], hidden_width)
        self.flow0_head = None
        if not use_global_correspondence:
            self.flow0_head = _ConvFlowHead(2 * chans[0])

    def encode_source(self, pose_src, garment) -> FeaturePyramid:
        if pose_src.shape[-2:] != garment.shape[-2:]:
            raise ValueError("pose map and garment sizes disagree")
        return self.source_encoder(torch.cat([pose_src, garment], dim=1))

    def encode_target(self, pose_tgt) -> FeaturePyramid:
        return self.target_encoder(pose_tgt)

    def global_correspondence(self, pyr_src, pyr_tgt):
        x0, y0 = pyr_src.levels[0], pyr_tgt.levels[0]
        b, c, h, w = x0.shape
        x = F.normalize(x0.reshape(b, c, h * w).transpose(1, 2), dim=-1)
        y = F.normalize(y0.reshape(b, c, h * w).transpose(1, 2), dim=-1)
        raw = correlate(x, y)
        return raw, normalize_correlation(raw, self.temperature)

    def forward(self, pose_src, garment, pose_tgt):
        pyr_src = self.encode_source(pose_src, garment)
        pyr_tgt = self.encode_target(pose_tgt)
        h0, w0 = pyr_src.levels[0].shape[-2:]
        out = {"pyr_src": pyr_src, "pyr_tgt": pyr_tgt, "o": None}
        if self.use_global_correspondence:
            _, o = self.global_correspondence(pyr_src, pyr_tgt)
            out["o"] = o
            f0 = corr_to_flow(o, (h0, w0))
        else:
            feats = torch.cat([pyr_src.levels[0], pyr_tgt.levels[0]], dim=1)
            f0 = FlowField(self.flow0_head(feats), level=0)
        out["f0"] = f0
        out["flows"] = self.refiner(pyr_src, pyr_tgt, f0)
        return out
