"""Training objectives for both stages.

All L1-style reductions are means over valid elements (visible pixels,
masked rows, channels) so magnitudes stay resolution independent.  The
perceptual distance uses a frozen randomly initialised convolutional
feature stack with a fixed seed in place of pretrained features.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .warping import FlowField, bilinear_warp, resize_to_level, scatter_pseudo_gt

__all__ = [
    "LossWeights",
    "PerceptualExtractor",
    "perceptual_distance",
    "loss_o",
    "loss_f",
    "loss_r",
    "stage1_loss",
    "stage2_losses",
]


@dataclass
class LossWeights:
    r: float = 1.0
    l1_c: float = 1.0
    perc_c: float = 0.2
    adv: float = 0.1
    l1_g: float = 1.0
    perc_g: float = 0.2

    def validate(self):
        for name, val in self.__dict__.items():
            if not (val >= 0.0 and val == val and abs(val) != float("inf")):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {val}")
        return self


class PerceptualExtractor(nn.Module):
    """Frozen random conv stack; identical seeds give identical features."""

    def __init__(self, seed=1234, widths=(16, 32, 64), in_channels=3):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        convs = []
        cin = in_channels
        for cout in widths:
            conv = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
            nn.init.normal_(conv.weight, std=(2.0 / (9 * cin)) ** 0.5, generator=gen)
            nn.init.zeros_(conv.bias)
            convs.append(conv)
            cin = cout
        self.convs = nn.ModuleList(convs)
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        feats = []
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
            feats.append(x)
        return feats


def perceptual_distance(a, b, extractor) -> torch.Tensor:
    """Sum over extractor layers of the mean absolute feature difference."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    total = a.new_zeros(())
    for fa, fb in zip(extractor(a), extractor(b)):
        total = total + (fa - fb).abs().mean()
    return total


def loss_o(o, o_gt, mask, g_flat) -> torch.Tensor:
    """Masked correspondence loss, garment weighted.

    o, o_gt, mask: (B, N, N); g_flat: (B, N, C) base-grid garment.  The
    masked row difference is multiplied with the garment and reduced by the
    mean over rows that have any valid reference (and over channels).
    """
    if o.shape != o_gt.shape or o.shape != mask.shape:
        raise ValueError("correspondence matrices must share shape")
    if g_flat.shape[1] != o.shape[2]:
        raise ValueError(
            f"garment rows {g_flat.shape[1]} != correspondence columns {o.shape[2]}"
        )
    prod = torch.bmm(mask * (o_gt - o), g_flat)  # (B, N, C)
    valid = (mask.sum(dim=2) > 0).to(o.dtype)  # (B, N)
    count = valid.sum() * g_flat.shape[-1]
    return (prod.abs() * valid.unsqueeze(-1)).sum() / count.clamp(min=1.0)


def loss_f(flows, gt_flow, visibility, stride) -> torch.Tensor:
    """Visibility-masked L1 between refined flows and the resized gt flow.

    flows: list of FlowField (levels 1..L); gt_flow: (B, 2, H, W) full
    resolution; visibility: (B, 1, H, W).  Per level the per-pixel |du|+|dv|
    is averaged over visible pixels, then summed over levels.
    """
    if not flows:
        raise ValueError("loss_f needs at least one flow level")
    total = gt_flow.new_zeros(())
    for f in flows:
        gt_l = resize_to_level(gt_flow, f.level, stride, kind="flow")
        v_l = resize_to_level(visibility, f.level, stride, kind="mask")
        diff = (gt_l - f.data).abs().sum(dim=1, keepdim=True)
        total = total + (v_l * diff).sum() / v_l.sum().clamp(min=1.0)
    return total


def loss_r(o, o_gt, mask, g_flat, flows, gt_flow, visibility, stride) -> torch.Tensor:
    """Correspondence plus flow regularisation."""
    return loss_o(o, o_gt, mask, g_flat) + loss_f(flows, gt_flow, visibility, stride)


def _masked_l1(pred, target, mask):
    diff = (pred - target).abs() * mask
    return diff.sum() / (mask.sum() * pred.shape[1]).clamp(min=1.0)


def stage1_loss(outputs, batch, weights: LossWeights, extractor, stride):
    """Total first-stage objective with a per-term breakdown.

    outputs: dict with "o" (or None), "f0" and "flows" from the network.
    batch: dict with "garment", "gt_flow", "visibility", "gt_warped", all
    full resolution.  Returns (total, breakdown); the weighted entries
    "w_r", "w_l1" and "w_perc" of the breakdown sum to the total.
    """
    garment = batch["garment"]
    gt_flow = batch["gt_flow"]
    visibility = batch["visibility"]
    gt_warped = batch["gt_warped"]
    flows = outputs["flows"]
    all_flows = [outputs["f0"]] + list(flows)

    zero = garment.new_zeros(())
    lo = zero
    if outputs.get("o") is not None:
        gt_base = FlowField(resize_to_level(gt_flow, 0, stride, kind="flow"), level=0)
        o_gt, mask = scatter_pseudo_gt(gt_base)
        g_base = resize_to_level(garment, 0, stride, kind="image")
        g_flat = g_base.flatten(2).transpose(1, 2)
        lo = loss_o(outputs["o"], o_gt, mask, g_flat)
    lf = loss_f(flows, gt_flow, visibility, stride)

    l1 = zero
    perc = zero
    for f in all_flows:
        g_l = resize_to_level(garment, f.level, stride, kind="image")
        gt_l = resize_to_level(gt_warped, f.level, stride, kind="image")
        v_l = resize_to_level(visibility, f.level, stride, kind="mask")
        warped = bilinear_warp(g_l, f.data)
        l1 = l1 + _masked_l1(warped, gt_l, v_l)
        perc = perc + perceptual_distance(warped * v_l, gt_l * v_l, extractor)

    lr = lo + lf
    total = weights.r * lr + weights.l1_c * l1 + weights.perc_c * perc
    breakdown = {
        "loss_o": float(lo.detach()),
        "loss_f": float(lf.detach()),
        "loss_r": float(lr.detach()),
        "l1_c": float(l1.detach()),
        "perc_c": float(perc.detach()),
        "w_r": float((weights.r * lr).detach()),
        "w_l1": float((weights.l1_c * l1).detach()),
        "w_perc": float((weights.perc_c * perc).detach()),
        "total": float(total.detach()),
    }
    return total, breakdown


def stage2_losses(fake, real, disc_real, disc_fake_gen, disc_fake_det, weights: LossWeights, extractor):
    """Non-saturating logistic adversarial objective plus reconstruction.

    disc_real / disc_fake_det are discriminator logits for the real image
    and the detached fake (discriminator update); disc_fake_gen are logits
    for the live fake (generator update).
    """
    if fake.shape != real.shape:
        raise ValueError(f"shape mismatch: {tuple(fake.shape)} vs {tuple(real.shape)}")
    adv_g = F.softplus(-disc_fake_gen).mean()
    l1 = (fake - real).abs().mean()
    perc = perceptual_distance(fake, real, extractor)
    gen_total = weights.adv * adv_g + weights.l1_g * l1 + weights.perc_g * perc
    disc_total = F.softplus(-disc_real).mean() + F.softplus(disc_fake_det).mean()
    breakdown = {
        "adv_g": float(adv_g.detach()),
        "l1_g": float(l1.detach()),
        "perc_g": float(perc.detach()),
        "gen_total": float(gen_total.detach()),
        "disc_total": float(disc_total.detach()),
    }
    return gen_total, disc_total, breakdown
