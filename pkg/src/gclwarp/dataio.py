"""On-disk dataset layout, binary field formats and the manifest.

Layout: ``<root>/<split>/<id>/`` holding source.png, target.png,
pose_src.bin, pose_tgt.bin, garment.png, garment_mask.png, gt_flow.flo3,
visibility.png, gt_warped.png and gt_warped.f32.

All multi-byte values are little-endian.

* ``.flo3``   magic ``3GCL``, uint32 width, uint32 height, then height*width
              records of two float32 (u = x-displacement, v = y-displacement),
              row-major.
* pose ``.bin``  magic ``IUV1``, uint32 width, uint32 height, then row-major
              packed records of (uint8 part, float32 u, float32 v).
* ``.f32``    magic ``GCF3``, uint32 width, uint32 height, uint32 channels,
              then float32 data, row-major with interleaved channels.  Holds
              the exact warped-garment values; the sibling .png is an 8-bit
              preview.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .synthetic import PoseMap, SceneSample

__all__ = [
    "SampleMeta",
    "write_flo3",
    "read_flo3",
    "write_pose_bin",
    "read_pose_bin",
    "write_f32",
    "read_f32",
    "write_sample",
    "read_sample",
    "write_dataset",
    "read_manifest",
    "SAMPLE_FILES",
]

FLO3_MAGIC = b"3GCL"
POSE_MAGIC = b"IUV1"
F32_MAGIC = b"GCF3"

SAMPLE_FILES = (
    "source.png",
    "target.png",
    "pose_src.bin",
    "pose_tgt.bin",
    "garment.png",
    "garment_mask.png",
    "gt_flow.flo3",
    "visibility.png",
    "gt_warped.png",
    "gt_warped.f32",
)

_POSE_DTYPE = np.dtype([("part", "u1"), ("u", "<f4"), ("v", "<f4")])


@dataclass
class SampleMeta:
    """Manifest entry for one sample."""

    sample_id: str
    split: str
    difficulty: str
    identity: bool
    seeds: dict = field(default_factory=dict)


def write_flo3(path, flow: np.ndarray) -> None:
    """flow: (H, W, 2) float32."""
    h, w = flow.shape[:2]
    with open(path, "wb") as f:
        f.write(FLO3_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(np.ascontiguousarray(flow, dtype="<f4").tobytes())


def read_flo3(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != FLO3_MAGIC:
            raise ValueError(f"{path}: not a .flo3 flow file")
        w, h = struct.unpack("<II", f.read(8))
        data = np.frombuffer(f.read(h * w * 8), dtype="<f4")
    return data.reshape(h, w, 2).copy()


def write_pose_bin(path, pose: PoseMap) -> None:
    h, w = pose.part.shape
    rec = np.empty(h * w, dtype=_POSE_DTYPE)
    rec["part"] = pose.part.reshape(-1)
    rec["u"] = pose.u.reshape(-1)
    rec["v"] = pose.v.reshape(-1)
    with open(path, "wb") as f:
        f.write(POSE_MAGIC)
        f.write(struct.pack("<II", w, h))
        f.write(rec.tobytes())


def read_pose_bin(path) -> PoseMap:
    with open(path, "rb") as f:
        if f.read(4) != POSE_MAGIC:
            raise ValueError(f"{path}: not a pose map file")
        w, h = struct.unpack("<II", f.read(8))
        rec = np.frombuffer(f.read(h * w * _POSE_DTYPE.itemsize), dtype=_POSE_DTYPE)
    return PoseMap(
        part=rec["part"].reshape(h, w).copy(),
        u=rec["u"].reshape(h, w).astype(np.float32),
        v=rec["v"].reshape(h, w).astype(np.float32),
    )


def write_f32(path, data: np.ndarray) -> None:
    """data: (H, W, C) float32."""
    h, w, c = data.shape
    with open(path, "wb") as f:
        f.write(F32_MAGIC)
        f.write(struct.pack("<III", w, h, c))
        f.write(np.ascontiguousarray(data, dtype="<f4").tobytes())


def read_f32(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.read(4) != F32_MAGIC:
            raise ValueError(f"{path}: not a raw float32 image file")
        w, h, c = struct.unpack("<III", f.read(12))
        data = np.frombuffer(f.read(h * w * c * 4), dtype="<f4")
    return data.reshape(h, w, c).copy()


def _save_image(path, arr: np.ndarray) -> None:
    """Save a float [0, 1] image (HW or HWC) as an 8-bit PNG."""
    data = np.round(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    mode = "L" if data.ndim == 2 else "RGB"
    Image.fromarray(data, mode=mode).save(path, format="PNG")


def _load_image(path) -> np.ndarray:
    arr = np.asarray(Image.open(path))
    return arr.astype(np.float32) / 255.0


def write_sample(sample_dir, sample: SceneSample) -> None:
    d = Path(sample_dir)
    d.mkdir(parents=True, exist_ok=True)
    _save_image(d / "source.png", sample.source_image)
    _save_image(d / "target.png", sample.target_image)
    write_pose_bin(d / "pose_src.bin", sample.pose_src)
    write_pose_bin(d / "pose_tgt.bin", sample.pose_tgt)
    _save_image(d / "garment.png", sample.garment)
    _save_image(d / "garment_mask.png", sample.garment_mask)
    write_flo3(d / "gt_flow.flo3", sample.gt_flow)
    _save_image(d / "visibility.png", sample.visibility)
    _save_image(d / "gt_warped.png", sample.gt_warped)
    write_f32(d / "gt_warped.f32", sample.gt_warped)


def read_sample(sample_dir) -> SceneSample:
    d = Path(sample_dir)
    return SceneSample(
        source_image=_load_image(d / "source.png"),
        target_image=_load_image(d / "target.png"),
        pose_src=read_pose_bin(d / "pose_src.bin"),
        pose_tgt=read_pose_bin(d / "pose_tgt.bin"),
        garment=_load_image(d / "garment.png"),
        garment_mask=_load_image(d / "garment_mask.png"),
        gt_flow=read_flo3(d / "gt_flow.flo3"),
        visibility=_load_image(d / "visibility.png"),
        gt_warped=read_f32(d / "gt_warped.f32"),
    )


def write_dataset(records, root) -> dict:
    """Write (SampleMeta, SceneSample) pairs under `root` plus a manifest.

    Returns the manifest dict.  The manifest is rewritten from the given
    records; generation is deterministic, so re-running with the same seeds
    reproduces every file byte for byte.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for meta, sample in records:
        write_sample(root / meta.split / meta.sample_id, sample)
        entries.append(asdict(meta))
    manifest = {"format_version": 1, "samples": entries}
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def read_manifest(root) -> list[SampleMeta]:
    with open(Path(root) / "manifest.json") as f:
        manifest = json.load(f)
    return [SampleMeta(**e) for e in manifest["samples"]]
