"""Procedural paired-figure scene generator with exact ground truth.

Renders 2D articulated stick figures built from oriented rectangular limb
boxes.  Every limb carries a linear (u, v) surface parameterisation that is
an exact bijection between box pixels and surface coordinates, which makes
the per-pixel correspondence between two poses of the same figure, the
resulting backward flow, and the visibility mask all analytic.

Geometry conventions: image coordinates with x right and y down, pixel
centers at integer positions.  Figure dimensions are expressed on a 64x64
reference canvas and scaled with the render size.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ArticulatedFigure",
    "PoseMap",
    "SceneSample",
    "PART_NAMES",
    "PART_IDS",
    "GARMENT_PART_IDS",
    "NUM_PARTS",
    "EASY_RANGES",
    "HARD_RANGES",
    "sample_figure",
    "render_pair",
    "bilinear_warp_np",
    "garment_region",
]

REFERENCE_CANVAS = 64

# part ids are 1-based; 0 is background
PART_NAMES = [
    "torso",
    "head",
    "upper_arm_l",
    "forearm_l",
    "upper_arm_r",
    "forearm_r",
    "thigh_l",
    "shin_l",
    "thigh_r",
    "shin_r",
]
PART_IDS = {name: i + 1 for i, name in enumerate(PART_NAMES)}
NUM_PARTS = len(PART_NAMES)

# the figure wears a long-sleeved garment: torso and both arm segments
GARMENT_PART_IDS = frozenset(
    PART_IDS[n] for n in ("torso", "upper_arm_l", "forearm_l", "upper_arm_r", "forearm_r")
)

# raster order, back to front; later entries overwrite earlier ones
_DRAW_ORDER = [
    "thigh_l",
    "thigh_r",
    "shin_l",
    "shin_r",
    "head",
    "torso",
    "upper_arm_l",
    "upper_arm_r",
    "forearm_l",
    "forearm_r",
]

_JOINT_NAMES = (
    "torso_tilt",
    "shoulder_l",
    "shoulder_r",
    "elbow_l",
    "elbow_r",
    "hip_l",
    "hip_r",
    "knee_l",
    "knee_r",
)

# per-joint angle ranges in radians; "hard" shoulders/elbows draw magnitudes
# beyond the easy range so hard figures always contain out-of-range joints
EASY_RANGES = {
    "torso_tilt": (-0.15, 0.15),
    "shoulder_l": (-0.45, 0.45),
    "shoulder_r": (-0.45, 0.45),
    "elbow_l": (0.0, 0.80),
    "elbow_r": (0.0, 0.80),
    "hip_l": (-0.25, 0.25),
    "hip_r": (-0.25, 0.25),
    "knee_l": (0.0, 0.50),
    "knee_r": (0.0, 0.50),
}
HARD_RANGES = {
    "torso_tilt": (-0.45, 0.45),
    "shoulder_l": (0.55, 1.60),  # magnitude, sign drawn separately
    "shoulder_r": (0.55, 1.60),
    "elbow_l": (0.85, 2.20),
    "elbow_r": (0.85, 2.20),
    "hip_l": (-0.70, 0.70),
    "hip_r": (-0.70, 0.70),
    "knee_l": (0.0, 1.20),
    "knee_r": (0.0, 1.20),
}
_MAGNITUDE_JOINTS = ("shoulder_l", "shoulder_r", "elbow_l", "elbow_r")

_EASY_SCALE = (0.92, 1.08)
_HARD_SCALE = (0.80, 1.15)
_EASY_ROOT_JITTER = 2.5
_HARD_ROOT_JITTER = 5.0
_HARD_SHEAR = (0.15, 0.40)  # magnitude of the horizontal viewpoint shear

_BASE_LENGTHS = {
    "torso_len": 15.0,
    "torso_rad": 6.5,
    "head_len": 6.5,
    "head_rad": 3.4,
    "uarm_len": 8.5,
    "uarm_rad": 2.3,
    "farm_len": 7.5,
    "farm_rad": 2.0,
    "thigh_len": 9.5,
    "thigh_rad": 2.8,
    "shin_len": 8.5,
    "shin_rad": 2.2,
    "shoulder_w": 5.8,
    "hip_w": 3.4,
}

# axial extension of limb boxes (fraction of the radius, both ends) so that
# consecutive segments overlap at joints instead of leaving wedge gaps
_AXIAL_OVERLAP = 0.45


@dataclass
class ArticulatedFigure:
    """Pose and identity parameters of one stick figure."""

    joint_angles: dict[str, float]
    limb_lengths: dict[str, float]
    root_position: tuple[float, float]
    scale: float
    shear: float = 0.0


@dataclass
class PoseMap:
    """Per-pixel body-surface map: part index plus (u, v) coordinates.

    part is 0 on background; u and v are 0 there as well.
    """

    part: np.ndarray  # (H, W) uint8
    u: np.ndarray  # (H, W) float32 in [0, 1]
    v: np.ndarray  # (H, W) float32 in [0, 1]


@dataclass
class SceneSample:
    """One training pair with analytically exact supervision."""

    source_image: np.ndarray  # (H, W, 3) float32 in [0, 1]
    target_image: np.ndarray
    pose_src: PoseMap
    pose_tgt: PoseMap
    garment: np.ndarray  # (H, W, 3) source garment, zero off-garment
    garment_mask: np.ndarray  # (H, W) float32 {0, 1}
    gt_flow: np.ndarray  # (H, W, 2) float32, backward convention
    visibility: np.ndarray  # (H, W) float32 {0, 1}
    gt_warped: np.ndarray  # (H, W, 3) float32


def sample_figure(seed: int, difficulty: str = "easy") -> ArticulatedFigure:
    """Draw a deterministic figure for (seed, difficulty).

    Hard figures use the wider/off-range joint draws, a nonzero horizontal
    viewpoint shear and a wider scale range.
    """
    if seed < 0:
        raise ValueError("seed must be >= 0")
    if difficulty not in ("easy", "hard"):
        raise ValueError(f"unknown difficulty {difficulty!r}")
    hard = difficulty == "hard"
    rng = np.random.default_rng([int(seed), 1 if hard else 0])

    ranges = HARD_RANGES if hard else EASY_RANGES
    angles = {}
    for name in _JOINT_NAMES:
        lo, hi = ranges[name]
        val = rng.uniform(lo, hi)
        if hard and name in _MAGNITUDE_JOINTS:
            sign = 1.0 if rng.random() < 0.5 else -1.0
            if name.startswith("elbow"):
                sign = 1.0  # elbows bend one way
            val = sign * val
        angles[name] = float(val)

    lengths = {k: float(v * rng.uniform(0.92, 1.08)) for k, v in _BASE_LENGTHS.items()}

    jitter = _HARD_ROOT_JITTER if hard else _EASY_ROOT_JITTER
    root = (
        float(32.0 + rng.uniform(-jitter, jitter)),
        float(36.0 + rng.uniform(-jitter * 0.7, jitter * 0.7)),
    )
    lo, hi = _HARD_SCALE if hard else _EASY_SCALE
    scale = float(rng.uniform(lo, hi))
    shear = 0.0
    if hard:
        mag = rng.uniform(*_HARD_SHEAR)
        shear = float(mag if rng.random() < 0.5 else -mag)
    return ArticulatedFigure(angles, lengths, root, scale, shear)


def _rot_dir(angle, mirror):
    # limb direction: angle 0 points straight down; positive swings outward
    sx = -1.0 if mirror else 1.0
    return np.array([sx * np.sin(angle), np.cos(angle)])


def figure_segments(fig: ArticulatedFigure, size: tuple[int, int]):
    """Limb boxes in render pixels: name -> (a, b, radius) with a, b (2,) xy.

    Joint positions are accumulated as offsets from the origin (float64) and
    the root is added last, then the viewpoint shear and canvas clamp are
    applied.
    """
    h, w = size
    f = min(h, w) / REFERENCE_CANVAS
    ln = fig.limb_lengths
    s = fig.scale * f
    a = fig.joint_angles

    tilt = a["torso_tilt"]
    d_torso = np.array([np.sin(tilt), -np.cos(tilt)])
    p_torso = np.array([np.cos(tilt), np.sin(tilt)])

    pelvis = np.zeros(2)
    neck = pelvis + ln["torso_len"] * s * d_torso
    head_top = neck + ln["head_len"] * s * d_torso
    sh_l = neck - ln["shoulder_w"] * s * p_torso
    sh_r = neck + ln["shoulder_w"] * s * p_torso
    elbow_l = sh_l + ln["uarm_len"] * s * _rot_dir(a["shoulder_l"], True)
    elbow_r = sh_r + ln["uarm_len"] * s * _rot_dir(a["shoulder_r"], False)
    wrist_l = elbow_l + ln["farm_len"] * s * _rot_dir(a["shoulder_l"] + a["elbow_l"], True)
    wrist_r = elbow_r + ln["farm_len"] * s * _rot_dir(a["shoulder_r"] + a["elbow_r"], False)
    hip_l = pelvis - ln["hip_w"] * s * p_torso
    hip_r = pelvis + ln["hip_w"] * s * p_torso
    knee_l = hip_l + ln["thigh_len"] * s * _rot_dir(a["hip_l"], True)
    knee_r = hip_r + ln["thigh_len"] * s * _rot_dir(a["hip_r"], False)
    ankle_l = knee_l + ln["shin_len"] * s * _rot_dir(a["hip_l"] + a["knee_l"], True)
    ankle_r = knee_r + ln["shin_len"] * s * _rot_dir(a["hip_r"] + a["knee_r"], False)

    raw = {
        "torso": (pelvis, neck, ln["torso_rad"]),
        "head": (neck, head_top, ln["head_rad"]),
        "upper_arm_l": (sh_l, elbow_l, ln["uarm_rad"]),
        "forearm_l": (elbow_l, wrist_l, ln["farm_rad"]),
        "upper_arm_r": (sh_r, elbow_r, ln["uarm_rad"]),
        "forearm_r": (elbow_r, wrist_r, ln["farm_rad"]),
        "thigh_l": (hip_l, knee_l, ln["thigh_rad"]),
        "shin_l": (knee_l, ankle_l, ln["shin_rad"]),
        "thigh_r": (hip_r, knee_r, ln["thigh_rad"]),
        "shin_r": (knee_r, ankle_r, ln["shin_rad"]),
    }

    root = np.array([fig.root_position[0] * w / REFERENCE_CANVAS,
                     fig.root_position[1] * h / REFERENCE_CANVAS])
    segments = {}
    for name, (pa, pb, rad) in raw.items():
        pa = pa + root
        pb = pb + root
        if fig.shear != 0.0:
            pa = np.array([pa[0] + fig.shear * (pa[1] - root[1]), pa[1]])
            pb = np.array([pb[0] + fig.shear * (pb[1] - root[1]), pb[1]])
        r = rad * s
        axis = pb - pa
        norm = float(np.hypot(axis[0], axis[1]))
        if norm > 0:
            ext = _AXIAL_OVERLAP * r / norm
            pa = pa - axis * ext
            pb = pb + axis * ext
        pa = np.clip(pa, 2.0, [w - 3.0, h - 3.0])
        pb = np.clip(pb, 2.0, [w - 3.0, h - 3.0])
        segments[name] = (pa, pb, r)
    return segments


def _rasterize(segments, size):
    h, w = size
    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    part = np.zeros((h, w), dtype=np.uint8)
    uu = np.zeros((h, w), dtype=np.float64)
    vv = np.zeros((h, w), dtype=np.float64)
    for name in _DRAW_ORDER:
        pa, pb, r = segments[name]
        ex, ey = pb[0] - pa[0], pb[1] - pa[1]
        l2 = ex * ex + ey * ey
        if l2 <= 0:
            continue
        ln = np.sqrt(l2)
        nx, ny = -ey / ln, ex / ln
        px = gx - pa[0]
        py = gy - pa[1]
        t = (px * ex + py * ey) / l2
        d = px * nx + py * ny
        inside = (t >= 0.0) & (t <= 1.0) & (np.abs(d) <= r)
        part[inside] = PART_IDS[name]
        uu[inside] = t[inside]
        vv[inside] = (d[inside] / r + 1.0) / 2.0
    return part, uu, vv


def _surface_points(segments, name, u, v):
    """Map (u, v) arrays back to canvas positions on a given limb box."""
    pa, pb, r = segments[name]
    ex, ey = pb[0] - pa[0], pb[1] - pa[1]
    ln = np.hypot(ex, ey)
    nx, ny = -ey / ln, ex / ln
    d = (2.0 * v - 1.0) * r
    x = pa[0] + u * ex + d * nx
    y = pa[1] + u * ey + d * ny
    return x, y


def _palette(texture_seed: int):
    rng = np.random.default_rng([int(texture_seed), 101])
    pal = {
        "background": 0.82 + 0.12 * rng.random(3),
        "skin": np.array([0.80, 0.62, 0.50]) + rng.uniform(-0.06, 0.06, 3),
        "pants": 0.12 + 0.18 * rng.random(3),
    }
    checks = {}
    for name in ("torso", "upper_arm_l", "forearm_l", "upper_arm_r", "forearm_r"):
        c0 = 0.25 + 0.70 * rng.random(3)
        c1 = 0.25 + 0.70 * rng.random(3)
        # keep the two checker colors far enough apart to stay visible
        while float(np.abs(c0 - c1).sum()) < 0.6:
            c1 = 0.25 + 0.70 * rng.random(3)
        nu = int(rng.integers(2, 5))
        nv = int(rng.integers(2, 4))
        checks[PART_IDS[name]] = (c0, c1, nu, nv)
    pal["checks"] = checks
    pal["logo"] = 0.25 + 0.70 * rng.random(3)
    pal["logo_center"] = (0.40 + 0.25 * rng.random(), 0.35 + 0.25 * rng.random())
    return pal


def _garment_texture(part, u, v, pal):
    """Checker/logo texture evaluated on body-surface coordinates."""
    h, w = part.shape
    tex = np.zeros((h, w, 3), dtype=np.float64)
    for pid, (c0, c1, nu, nv) in pal["checks"].items():
        m = part == pid
        if not m.any():
            continue
        cell = (np.floor(u[m] * nu) + np.floor(v[m] * nv)) % 2
        tex[m] = np.where(cell[:, None] > 0, c1[None, :], c0[None, :])
    # circular logo on the torso
    cu, cv = pal["logo_center"]
    torso = part == PART_IDS["torso"]
    logo = torso & ((u - cu) ** 2 + (v - cv) ** 2 < 0.14 ** 2)
    tex[logo] = pal["logo"]
    return tex


def _quantize(img):
    return (np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8).astype(np.float32)) / 255.0


def _render_image(part, u, v, pal):
    h, w = part.shape
    img = np.empty((h, w, 3), dtype=np.float64)
    img[:] = pal["background"]
    tex = _garment_texture(part, u, v, pal)
    for name in PART_NAMES:
        pid = PART_IDS[name]
        m = part == pid
        if pid in GARMENT_PART_IDS:
            img[m] = tex[m]
        elif name == "head":
            img[m] = pal["skin"]
        else:
            img[m] = pal["pants"]
    return _quantize(img)


def bilinear_warp_np(image: np.ndarray, flow: np.ndarray) -> np.ndarray:
    """NumPy twin of the torch backward warp (channel-last layout).

    image: (H, W, C); flow: (H, W, 2).  Out-of-bounds taps contribute zero.
    """
    h, w = image.shape[:2]
    gy, gx = np.mgrid[0:h, 0:w].astype(image.dtype)
    qx = gx + flow[..., 0]
    qy = gy + flow[..., 1]
    x0 = np.floor(qx)
    y0 = np.floor(qy)
    wx = qx - x0
    wy = qy - y0
    out = np.zeros_like(image)
    for dx, dy in ((0, 0), (1, 0), (0, 1), (1, 1)):
        xs = x0 + dx
        ys = y0 + dy
        valid = (xs >= 0) & (xs < w) & (ys >= 0) & (ys < h)
        wgt = (wx if dx else 1 - wx) * (wy if dy else 1 - wy) * valid
        xi = np.clip(xs, 0, w - 1).astype(np.int64)
        yi = np.clip(ys, 0, h - 1).astype(np.int64)
        out = out + wgt[..., None].astype(image.dtype) * image[yi, xi]
    return out


def garment_region(pose: PoseMap) -> np.ndarray:
    """Binary mask of garment parts in a pose map."""
    return np.isin(pose.part, list(GARMENT_PART_IDS)).astype(np.float32)


def render_pair(
    fig_src: ArticulatedFigure,
    fig_tgt: ArticulatedFigure,
    texture_seed: int,
    size: tuple[int, int] = (64, 64),
    stride: int = 8,
) -> SceneSample:
    """Render a source/target pair sharing identity and garment texture.

    The ground-truth flow maps every target body pixel to the canvas
    position of the same body-surface point on the source figure; the
    visibility mask marks garment pixels whose surface point is rendered
    un-occluded in the source.  The ground-truth warped garment is the
    source garment warped by that flow and masked by visibility.
    """
    h, w = size
    if h % stride != 0 or w % stride != 0:
        raise ValueError(f"size {h}x{w} must be divisible by the stride {stride}")
    if fig_src.limb_lengths != fig_tgt.limb_lengths:
        raise ValueError("source and target figures must share limb_lengths")

    seg_src = figure_segments(fig_src, size)
    seg_tgt = figure_segments(fig_tgt, size)
    part_s, u_s, v_s = _rasterize(seg_src, size)
    part_t, u_t, v_t = _rasterize(seg_tgt, size)

    pal = _palette(texture_seed)
    img_s = _render_image(part_s, u_s, v_s, pal)
    img_t = _render_image(part_t, u_t, v_t, pal)

    gmask_s = np.isin(part_s, list(GARMENT_PART_IDS))
    garment = np.where(gmask_s[..., None], img_s, 0.0).astype(np.float32)

    gy, gx = np.mgrid[0:h, 0:w].astype(np.float64)
    flow = np.zeros((h, w, 2), dtype=np.float64)
    visible = np.zeros((h, w), dtype=bool)
    for name in PART_NAMES:
        pid = PART_IDS[name]
        m = part_t == pid
        if not m.any():
            continue
        sx, sy = _surface_points(seg_src, name, u_t[m], v_t[m])
        # reconstruct the target position through the same formula so the
        # identity pair yields a bitwise-zero flow
        tx, ty = _surface_points(seg_tgt, name, u_t[m], v_t[m])
        flow[m, 0] = sx - tx
        flow[m, 1] = sy - ty
        if pid in GARMENT_PART_IDS:
            in_canvas = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
            xi = np.clip(np.rint(sx), 0, w - 1).astype(np.int64)
            yi = np.clip(np.rint(sy), 0, h - 1).astype(np.int64)
            visible[m] = in_canvas & (part_s[yi, xi] == pid)

    flow = flow.astype(np.float32)
    vis = visible.astype(np.float32)
    gt_warped = bilinear_warp_np(garment, flow) * vis[..., None]

    pose_src = PoseMap(part_s, u_s.astype(np.float32), v_s.astype(np.float32))
    pose_tgt = PoseMap(part_t, u_t.astype(np.float32), v_t.astype(np.float32))
    return SceneSample(
        source_image=img_s,
        target_image=img_t,
        pose_src=pose_src,
        pose_tgt=pose_tgt,
        garment=garment,
        garment_mask=gmask_s.astype(np.float32),
        gt_flow=flow,
        visibility=vis,
        gt_warped=gt_warped.astype(np.float32),
    )


def share_identity(fig: ArticulatedFigure, other: ArticulatedFigure) -> ArticulatedFigure:
    """Copy of `other` wearing `fig`'s body dimensions."""
    return dataclasses.replace(other, limb_lengths=dict(fig.limb_lengths))
