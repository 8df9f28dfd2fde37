"""Stage-two conditional generator and patch discriminator.

The generator is a small U-shaped encoder-decoder whose decoder blocks use
spatially-adaptive normalisation conditioned on the warped garment.  Its
input is the garment-agnostic target image (garment region zeroed) so the
answer cannot be copied from the condition-free pixels.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

__all__ = ["SpadeBlock", "TryOnGenerator", "PatchDiscriminator"]


class SpadeBlock(nn.Module):
    """Instance-normalise, then modulate per pixel from a condition map."""

    def __init__(self, channels, cond_channels=3, hidden=32):
        super().__init__()
        self.norm = nn.InstanceNorm2d(channels, affine=False)
        self.shared = nn.Conv2d(cond_channels, hidden, 3, padding=1)
        self.gamma = nn.Conv2d(hidden, channels, 3, padding=1)
        self.beta = nn.Conv2d(hidden, channels, 3, padding=1)
        # start as an identity modulation
        nn.init.zeros_(self.gamma.weight)
        nn.init.ones_(self.gamma.bias)
        nn.init.zeros_(self.beta.weight)
        nn.init.zeros_(self.beta.bias)

    def modulation(self, cond, size):
        cond = F.interpolate(cond, size=size, mode="bilinear", align_corners=False)
        h = F.relu(self.shared(cond))
        return self.gamma(h), self.beta(h)

    def forward(self, x, cond):
        if x.shape[0] != cond.shape[0]:
            raise ValueError("feature/condition batch sizes disagree")
        gamma, beta = self.modulation(cond, x.shape[-2:])
        return gamma * self.norm(x) + beta


def _down(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=2, padding=1),
        nn.InstanceNorm2d(cout, affine=True),
        nn.LeakyReLU(0.2),
    )


class TryOnGenerator(nn.Module):
    """g(agnostic target | warped garment) -> try-on image in [0, 1]."""

    def __init__(self, widths=(32, 64, 128), cond_channels=3):
        super().__init__()
        w1, w2, w3 = widths
        cin = 3 + cond_channels
        self.down1 = _down(cin, w1)
        self.down2 = _down(w1, w2)
        self.down3 = _down(w2, w3)
        self.mid = nn.Sequential(
            nn.Conv2d(w3, w3, 3, padding=1),
            nn.InstanceNorm2d(w3, affine=True),
            nn.LeakyReLU(0.2),
        )
        self.up3 = nn.Conv2d(w3 + w2, w2, 3, padding=1)
        self.spade3 = SpadeBlock(w2, cond_channels)
        self.up2 = nn.Conv2d(w2 + w1, w1, 3, padding=1)
        self.spade2 = SpadeBlock(w1, cond_channels)
        self.up1 = nn.Conv2d(w1, w1, 3, padding=1)
        self.spade1 = SpadeBlock(w1, cond_channels)
        self.out = nn.Conv2d(w1, 3, 3, padding=1)

    def forward(self, agnostic, warped_garment):
        if agnostic.shape[-2:] != warped_garment.shape[-2:]:
            raise ValueError("input and condition sizes disagree")
        x = torch.cat([agnostic, warped_garment], dim=1)
        e1 = self.down1(x)
        e2 = self.down2(e1)
        e3 = self.down3(e2)
        m = self.mid(e3)

        d = F.interpolate(m, scale_factor=2, mode="bilinear", align_corners=False)
        d = self.up3(torch.cat([d, e2], dim=1))
        d = F.leaky_relu(self.spade3(d, warped_garment), 0.2)
        d = F.interpolate(d, scale_factor=2, mode="bilinear", align_corners=False)
        d = self.up2(torch.cat([d, e1], dim=1))
        d = F.leaky_relu(self.spade2(d, warped_garment), 0.2)
        d = F.interpolate(d, scale_factor=2, mode="bilinear", align_corners=False)
        d = self.up1(d)
        d = F.leaky_relu(self.spade1(d, warped_garment), 0.2)
        return torch.sigmoid(self.out(d))

    synthesize = forward


class PatchDiscriminator(nn.Module):
    """Strided conv stack scoring realness per patch, garment conditioned."""

    def __init__(self, widths=(32, 64, 128), cond_channels=3):
        super().__init__()
        w1, w2, w3 = widths
        self.net = nn.Sequential(
            nn.Conv2d(3 + cond_channels, w1, 4, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w1, w2, 4, stride=2, padding=1),
            nn.InstanceNorm2d(w2, affine=True),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w2, w3, 4, stride=1, padding=1),
            nn.InstanceNorm2d(w3, affine=True),
            nn.LeakyReLU(0.2),
            nn.Conv2d(w3, 1, 4, stride=1, padding=1),
        )

    def forward(self, image, condition):
        return self.net(torch.cat([image, condition], dim=1))

    discriminate = forward
