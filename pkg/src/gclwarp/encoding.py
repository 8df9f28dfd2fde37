"""NumPy-sample to torch-tensor glue.

Pose maps enter the networks as a one-hot part map (background included)
concatenated with the two surface coordinates, so the encoding width is
NUM_PARTS + 3 channels.
"""

from __future__ import annotations

import numpy as np
import torch

from .synthetic import NUM_PARTS, PoseMap, SceneSample, garment_region

__all__ = ["POSE_CHANNELS", "encode_pose", "sample_tensors"]

POSE_CHANNELS = NUM_PARTS + 3  # one-hot incl. background + u + v


def encode_pose(pose: PoseMap) -> torch.Tensor:
    """(POSE_CHANNELS, H, W) float32 encoding of one pose map."""
    part = torch.from_numpy(pose.part.astype(np.int64))
    onehot = torch.nn.functional.one_hot(part, NUM_PARTS + 1)
    onehot = onehot.permute(2, 0, 1).to(torch.float32)
    u = torch.from_numpy(pose.u).unsqueeze(0)
    v = torch.from_numpy(pose.v).unsqueeze(0)
    return torch.cat([onehot, u, v], dim=0)


def _chw(arr: np.ndarray) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(arr))
    if t.dim() == 2:
        return t.unsqueeze(0)
    return t.permute(2, 0, 1).contiguous()


def sample_tensors(sample: SceneSample) -> dict[str, torch.Tensor]:
    """Unbatched (C, H, W) tensors for one sample, float32."""
    return {
        "source_pose": encode_pose(sample.pose_src),
        "target_pose": encode_pose(sample.pose_tgt),
        "source_image": _chw(sample.source_image),
        "target_image": _chw(sample.target_image),
        "garment": _chw(sample.garment),
        "garment_mask": _chw(sample.garment_mask),
        "gt_flow": _chw(sample.gt_flow),
        "visibility": _chw(sample.visibility),
        "gt_warped": _chw(sample.gt_warped),
        "target_garment_region": _chw(garment_region(sample.pose_tgt)),
    }
