"""Per-level recurrent flow refinement.

Each pyramid level above the base grid owns a convolutional gated recurrent
unit that predicts a residual on top of the upsampled coarser flow, taking
the source features warped by that flow, the target features and the flow
itself as input.  The hidden state starts at zeros on the first refined
level and is bilinearly upsampled between levels.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from .warping import FlowField, bilinear_warp, upsample_flow

__all__ = ["ConvGRUCell", "GacrmCell", "GacrmStack"]


class ConvGRUCell(nn.Module):
    def __init__(self, input_channels, hidden_channels, kernel_size=3):
        super().__init__()
        padding = kernel_size // 2
        both = input_channels + hidden_channels
        self.update_gate = nn.Conv2d(both, hidden_channels, kernel_size, padding=padding)
        self.reset_gate = nn.Conv2d(both, hidden_channels, kernel_size, padding=padding)
        self.candidate = nn.Conv2d(both, hidden_channels, kernel_size, padding=padding)

    def forward(self, x, hidden):
        inputs = torch.cat([x, hidden], dim=1)
        z = torch.sigmoid(self.update_gate(inputs))
        r = torch.sigmoid(self.reset_gate(inputs))
        q = torch.tanh(self.candidate(torch.cat([x, r * hidden], dim=1)))
        return (1 - z) * hidden + z * q

    def gates(self, x, hidden):
        """Update/reset activations, for range checks."""
        inputs = torch.cat([x, hidden], dim=1)
        return torch.sigmoid(self.update_gate(inputs)), torch.sigmoid(self.reset_gate(inputs))


class _FlowHead(nn.Module):
    def __init__(self, hidden_channels):
        super().__init__()
        self.conv1 = nn.Conv2d(hidden_channels, hidden_channels // 2, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden_channels // 2, 2, 3, padding=1)
        # residuals start at zero so the initial flow is the upsampled one
        nn.init.zeros_(self.conv2.weight)
        nn.init.zeros_(self.conv2.bias)

    def forward(self, x):
        return self.conv2(F.leaky_relu(self.conv1(x), 0.1))


class GacrmCell(nn.Module):
    """One refinement level: residual flow from a ConvGRU pass."""

    def __init__(self, feature_channels, hidden_channels=64, iterations=1):
        super().__init__()
        self.hidden_channels = hidden_channels
        self.iterations = iterations
        self.gru = ConvGRUCell(2 * feature_channels + 2, hidden_channels)
        self.flow_head = _FlowHead(hidden_channels)

    def forward(self, x_l, y_l, f_prev: FlowField, hidden=None):
        f_up = upsample_flow(f_prev)
        if x_l.shape[-2:] != f_up.data.shape[-2:]:
            raise ValueError(
                f"features at {tuple(x_l.shape[-2:])} but upsampled flow at "
                f"{tuple(f_up.data.shape[-2:])}; level mismatch"
            )
        if hidden is None:
            hidden = x_l.new_zeros(
                x_l.shape[0], self.hidden_channels, x_l.shape[-2], x_l.shape[-1]
            )
        warped = bilinear_warp(x_l, f_up.data)
        inputs = torch.cat([warped, y_l, f_up.data], dim=1)
        for _ in range(self.iterations):
            hidden = self.gru(inputs, hidden)
        flow = FlowField(f_up.data + self.flow_head(hidden), level=f_up.level)
        return flow, hidden


class GacrmStack(nn.Module):
    """Chain of GacrmCells for levels 1..L, threading the hidden state up."""

    def __init__(self, feature_channels_per_level, hidden_channels=64, iterations=1):
        super().__init__()
        self.cells = nn.ModuleList(
            GacrmCell(c, hidden_channels, iterations) for c in feature_channels_per_level
        )

    def forward(self, pyr_src, pyr_tgt, f0: FlowField) -> list[FlowField]:
        flows = []
        hidden = None
        f_prev = f0
        for level, cell in enumerate(self.cells, start=1):
            if hidden is not None:
                hidden = F.interpolate(
                    hidden, scale_factor=2, mode="bilinear", align_corners=False
                )
            f_prev, hidden = cell(
                pyr_src.levels[level], pyr_tgt.levels[level], f_prev, hidden
            )
            flows.append(f_prev)
        return flows
