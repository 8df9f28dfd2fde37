"""Differentiable backward-warping primitives shared by the whole stack.

Conventions used everywhere:
  * flow tensors are (B, 2, H, W); channel 0 is the x-displacement u and
    channel 1 the y-displacement v, both in pixels at the field's own level
  * a flow value f at target pixel p means "sample the source at p + f"
  * samples falling outside the canvas contribute zero (per-tap zero padding)
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

__all__ = [
    "FlowField",
    "bilinear_warp",
    "scatter_pseudo_gt",
    "upsample_flow",
    "resize_to_level",
    "level_hw",
]

# bilinear taps relative to the floor corner
_TAPS = ((0, 0), (1, 0), (0, 1), (1, 1))


@dataclass
class FlowField:
    """A dense displacement field together with its pyramid level.

    Level 0 is the coarsest grid (full resolution divided by the downscale
    stride); each level up doubles the spatial size.
    """

    data: torch.Tensor  # (B, 2, H, W)
    level: int

    @property
    def hw(self) -> tuple[int, int]:
        return self.data.shape[-2], self.data.shape[-1]

    def is_finite(self) -> bool:
        return bool(torch.isfinite(self.data).all())


def _pixel_grid(h, w, device, dtype):
    gy, gx = torch.meshgrid(
        torch.arange(h, device=device, dtype=dtype),
        torch.arange(w, device=device, dtype=dtype),
        indexing="ij",
    )
    return gx, gy


def _tap_weight(dx, dy, wx, wy):
    return (wx if dx else 1 - wx) * (wy if dy else 1 - wy)


def bilinear_warp(image: torch.Tensor, flow: torch.Tensor) -> torch.Tensor:
    """Backward-warp `image` by `flow` with bilinear sampling.

    image: (B, C, H, W); flow: (B, 2, H, W).  output(p) is the bilinear
    sample of image at p + flow(p), with out-of-bounds taps contributing
    zero.  Differentiable in both arguments.
    """
    if image.dim() != 4 or flow.dim() != 4:
        raise ValueError("bilinear_warp expects 4-d (B, C, H, W) tensors")
    if flow.shape[1] != 2:
        raise ValueError(f"flow must have 2 channels, got {flow.shape[1]}")
    if image.shape[0] != flow.shape[0] or image.shape[-2:] != flow.shape[-2:]:
        raise ValueError(
            f"image {tuple(image.shape)} and flow {tuple(flow.shape)} disagree"
        )
    b, c, h, w = image.shape
    gx, gy = _pixel_grid(h, w, image.device, image.dtype)
    qx = gx.unsqueeze(0) + flow[:, 0]
    qy = gy.unsqueeze(0) + flow[:, 1]
    x0 = torch.floor(qx)
    y0 = torch.floor(qy)
    wx = qx - x0
    wy = qy - y0

    flat = image.reshape(b, c, h * w)
    out = image.new_zeros(b, c, h, w)
    for dx, dy in _TAPS:
        xs = x0 + dx
        ys = y0 + dy
        valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        wgt = _tap_weight(dx, dy, wx, wy) * valid.to(image.dtype)
        idx = (ys.clamp(0, h - 1) * w + xs.clamp(0, w - 1)).long()
        vals = flat.gather(2, idx.reshape(b, 1, h * w).expand(b, c, h * w))
        out = out + wgt.unsqueeze(1) * vals.reshape(b, c, h, w)
    return out


def scatter_pseudo_gt(flow_base: FlowField) -> tuple[torch.Tensor, torch.Tensor]:
    """Scatter bilinear interpolation weights of a base-grid flow into an
    N x N correspondence matrix.

    flow_base must live on the coarsest (level-0) grid.  Row i of the
    returned matrix holds the <=4 interpolation weights of target cell i's
    sample point in the source grid; the companion mask flags the nonzero
    entries.  Out-of-bounds taps are dropped without renormalisation, so
    multiplying the matrix with a flattened image reproduces
    ``bilinear_warp`` exactly.
    """
    data = flow_base.data
    b, _, h, w = data.shape
    n = h * w
    gx, gy = _pixel_grid(h, w, data.device, data.dtype)
    qx = gx.unsqueeze(0) + data[:, 0]
    qy = gy.unsqueeze(0) + data[:, 1]
    x0 = torch.floor(qx)
    y0 = torch.floor(qy)
    wx = qx - x0
    wy = qy - y0

    rows = torch.arange(n, device=data.device).unsqueeze(0).expand(b, n)
    o = data.new_zeros(b, n * n)
    for dx, dy in _TAPS:
        xs = x0 + dx
        ys = y0 + dy
        valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        wgt = _tap_weight(dx, dy, wx, wy) * valid.to(data.dtype)
        cols = (ys.clamp(0, h - 1) * w + xs.clamp(0, w - 1)).long().reshape(b, n)
        o.scatter_add_(1, rows * n + cols, wgt.reshape(b, n))
    o = o.reshape(b, n, n)
    mask = (o > 0).to(data.dtype)
    return o, mask


def upsample_flow(flow: FlowField) -> FlowField:
    """Double the spatial size of a flow and scale its values by 2."""
    up = F.interpolate(flow.data, scale_factor=2, mode="bilinear", align_corners=False)
    return FlowField(up * 2.0, flow.level + 1)


def level_hw(full_hw: tuple[int, int], stride: int, level: int) -> tuple[int, int]:
    """Spatial size of pyramid `level` for a full-resolution field."""
    h, w = full_hw
    factor = 2 ** level
    if level < 0 or stride % factor != 0:
        raise ValueError(f"invalid level {level} for stride {stride}")
    if h % stride != 0 or w % stride != 0:
        raise ValueError(f"size {h}x{w} not divisible by stride {stride}")
    return h * factor // stride, w * factor // stride


def resize_to_level(
    field: torch.Tensor, level: int, stride: int, kind: str = "image"
) -> torch.Tensor:
    """Resize a full-resolution field to a pyramid level.

    kind: "image" (plain bilinear), "mask" (bilinear then re-binarised at
    0.5) or "flow" (bilinear with displacement values rescaled by the
    per-axis size ratio).
    """
    if kind not in ("image", "mask", "flow"):
        raise ValueError(f"unknown field kind {kind!r}")
    h, w = field.shape[-2:]
    th, tw = level_hw((h, w), stride, level)
    out = F.interpolate(field, size=(th, tw), mode="bilinear", align_corners=False)
    if kind == "mask":
        out = (out >= 0.5).to(field.dtype)
    elif kind == "flow":
        if field.shape[1] != 2:
            raise ValueError("flow fields must have 2 channels")
        scale = out.new_tensor([tw / w, th / h]).view(1, 2, 1, 1)
        out = out * scale
    return out
