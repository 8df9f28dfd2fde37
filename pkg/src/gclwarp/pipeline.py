"""Two-stage training loops, dataset generation and the try-on entry point.

Everything here is seed-deterministic: batch order comes from a dedicated
numpy generator, model initialisation from torch.manual_seed, and log /
checkpoint / report files contain no wall-clock state, so repeated runs
with the same seed produce identical bytes.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import math
import time
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, save_config
from .correspondence import CorrespondenceNetwork
from .dataio import SampleMeta, read_manifest, read_sample, write_dataset
from .encoding import NUM_PARTS, POSE_CHANNELS, sample_tensors
from .generator import PatchDiscriminator, TryOnGenerator
from .losses import PerceptualExtractor, stage2_losses, stage1_loss
from .metrics import miou
from .synthetic import render_pair, sample_figure, share_identity
from .viz import flow_to_color
from .warping import FlowField, bilinear_warp, upsample_flow

__all__ = [
    "build_stage1",
    "generate_data",
    "train_stage1",
    "train_stage2",
    "SplitCache",
    "Stage1Predictor",
    "flow_to_full",
    "evaluate_tryon",
    "tryon",
    "ablate",
    "ABLATION_VARIANTS",
]


# ---------------------------------------------------------------------------
# dataset generation


def _mix_flag(index: int, fraction: float) -> bool:
    """Deterministic Bresenham-style mixing of a boolean at a given rate."""
    return math.floor((index + 1) * fraction) > math.floor(index * fraction)


def generate_data(cfg: Config, root, count_train, count_test, count_hard, log=print):
    """Write the train/test/hardpose splits plus the manifest."""
    cfg.validate()
    plans = [
        ("train", count_train, 0),
        ("test", count_test, 1),
        ("hardpose", count_hard, 2),
    ]
    records = []
    for split, count, code in plans:
        base = cfg.seed * 1_000_000 + code * 200_000
        for i in range(count):
            if split == "train":
                hard = _mix_flag(i, cfg.train_hard_fraction)
                identity = _mix_flag(i, cfg.train_identity_fraction)
            elif split == "test":
                hard = False
                identity = _mix_flag(i, cfg.test_identity_fraction)
            else:
                hard = True
                identity = False
            difficulty = "hard" if hard else "easy"
            src_seed = base + 2 * i
            tgt_seed = src_seed if identity else src_seed + 1
            tex_seed = base + 100_000 + i
            fig_src = sample_figure(src_seed, difficulty)
            if identity:
                fig_tgt = fig_src
            else:
                fig_tgt = share_identity(fig_src, sample_figure(tgt_seed, difficulty))
            sample = render_pair(fig_src, fig_tgt, tex_seed, cfg.image_hw, cfg.stride)
            meta = SampleMeta(
                sample_id=f"{i:05d}",
                split=split,
                difficulty=difficulty,
                identity=identity,
                seeds={"source": src_seed, "target": tgt_seed, "texture": tex_seed},
            )
            records.append((meta, sample))
    manifest = write_dataset(records, root)
    counts = {}
    for meta, _ in records:
        counts[meta.split] = counts.get(meta.split, 0) + 1
    log(f"wrote {len(records)} samples to {root}: " + json.dumps(counts, sort_keys=True))
    return manifest


# ---------------------------------------------------------------------------
# in-memory dataset cache


def _compact(sample):
    t = sample_tensors(sample)
    return {
        "part_src": torch.from_numpy(sample.pose_src.part.astype(np.int64)),
        "uv_src": torch.stack(
            [torch.from_numpy(sample.pose_src.u), torch.from_numpy(sample.pose_src.v)]
        ),
        "part_tgt": torch.from_numpy(sample.pose_tgt.part.astype(np.int64)),
        "uv_tgt": torch.stack(
            [torch.from_numpy(sample.pose_tgt.u), torch.from_numpy(sample.pose_tgt.v)]
        ),
        "garment": t["garment"],
        "garment_mask": t["garment_mask"],
        "gt_flow": t["gt_flow"],
        "visibility": t["visibility"],
        "gt_warped": t["gt_warped"],
        "target_image": t["target_image"],
        "target_region": t["target_garment_region"],
    }


def _pose_input(part, uv):
    onehot = F.one_hot(part, NUM_PARTS + 1).permute(0, 3, 1, 2).to(torch.float32)
    return torch.cat([onehot, uv], dim=1)


class SplitCache:
    """One dataset split loaded into memory as compact tensors."""

    def __init__(self, root, split):
        self.root = Path(root)
        self.split = split
        metas = [m for m in read_manifest(root) if m.split == split]
        self.metas = sorted(metas, key=lambda m: m.sample_id)
        self.records = [
            _compact(read_sample(self.root / split / m.sample_id)) for m in self.metas
        ]

    def __len__(self):
        return len(self.records)

    def identity_indices(self):
        return [i for i, m in enumerate(self.metas) if m.identity]

    def batch(self, indices) -> dict:
        recs = [self.records[int(i)] for i in indices]
        out = {k: torch.stack([r[k] for r in recs]) for k in recs[0]}
        out["source_pose"] = _pose_input(out["part_src"], out["uv_src"])
        out["target_pose"] = _pose_input(out["part_tgt"], out["uv_tgt"])
        return out


# ---------------------------------------------------------------------------
# model construction and prediction helpers


def build_stage1(cfg: Config) -> CorrespondenceNetwork:
    return CorrespondenceNetwork(
        pose_channels=POSE_CHANNELS,
        num_levels=cfg.levels + 1,
        widths=cfg.enc_widths,
        hidden_width=cfg.hidden_width,
        temperature=cfg.temperature,
        use_global_correspondence=cfg.use_global_correspondence,
        image_hw=cfg.image_hw,
        stride=cfg.stride,
        correlation_budget_bytes=cfg.correlation_budget_bytes,
    )


def flow_to_full(flow: FlowField, stride: int) -> FlowField:
    """Upsample a pyramid-level flow to full resolution."""
    top = int(round(math.log2(stride)))
    if 2 ** top != stride:
        raise ValueError(f"stride {stride} is not a power of two")
    while flow.level < top:
        flow = upsample_flow(flow)
    return flow


def _batched_miou(net, batch, stride):
    out = net(batch["source_pose"], batch["garment"], batch["target_pose"])
    full = flow_to_full(out["flows"][-1], stride)
    warped_mask = bilinear_warp(batch["garment_mask"], full.data) >= 0.5
    gt = batch["target_region"] >= 0.5
    return [
        miou(warped_mask[i, 0].numpy(), gt[i, 0].numpy())
        for i in range(warped_mask.shape[0])
    ]


@torch.no_grad()
def validation_miou(net, cache: SplitCache, indices, cfg: Config) -> float:
    net.eval()
    vals = []
    for start in range(0, len(indices), cfg.batch_size):
        chunk = indices[start:start + cfg.batch_size]
        vals.extend(_batched_miou(net, cache.batch(chunk), cfg.stride))
    net.train()
    return float(np.mean(vals)) if vals else 0.0


class Stage1Predictor:
    """Loads a stage-1 (or stage-2) checkpoint and runs warping inference."""

    def __init__(self, checkpoint_path):
        header, state = load_checkpoint(checkpoint_path)
        if header["stage"] == 1:
            cfg = Config.from_dict(header["config"])
            model_state = state["model"]
        elif header["stage"] == 2:
            cfg = Config.from_dict(state["stage1_config"])
            model_state = state["stage1_model"]
        else:
            raise ValueError(f"unsupported checkpoint stage {header['stage']}")
        self.config = cfg
        torch.manual_seed(cfg.seed)
        self.net = build_stage1(cfg)
        self.net.load_state_dict(model_state)
        self.net.eval()

    @torch.no_grad()
    def predict(self, tensors: dict) -> dict:
        """Run the warping network on one sample's tensors (unbatched)."""
        src = tensors["source_pose"].unsqueeze(0)
        garment = tensors["garment"].unsqueeze(0)
        tgt = tensors["target_pose"].unsqueeze(0)
        out = self.net(src, garment, tgt)
        out["full_flow"] = flow_to_full(out["flows"][-1], self.config.stride)
        out["warped_garment"] = bilinear_warp(garment, out["full_flow"].data)[0]
        mask = tensors["garment_mask"].unsqueeze(0)
        out["warped_mask"] = (bilinear_warp(mask, out["full_flow"].data) >= 0.5)[0]
        return out


# ---------------------------------------------------------------------------
# logging helpers


class _JsonlLog:
    """Line-delimited structured training log; wall time goes to the console
    only so log files stay bit-identical across same-seed runs."""

    def __init__(self, path, echo=print):
        self.f = open(path, "w")
        self.echo = echo
        self.t0 = time.perf_counter()

    def write(self, record: dict):
        self.f.write(json.dumps(record, sort_keys=True) + "\n")
        self.f.flush()
        if self.echo is not None:
            wall = time.perf_counter() - self.t0
            parts = " ".join(
                f"{k}={v:.4f}" if isinstance(v, float) else f"{k}={v}"
                for k, v in record.items()
            )
            self.echo(f"[{wall:8.1f}s] {parts}")

    def close(self):
        self.f.close()


def _state_bytes(module) -> bytes:
    return b"".join(
        t.detach().cpu().contiguous().numpy().tobytes()
        for t in module.state_dict().values()
    )


# ---------------------------------------------------------------------------
# stage-1 training


def train_stage1(cfg: Config, dataset_root, out_dir, steps=None, resume=None, echo=print):
    """Optimise the warping network; saves the best-by-validation-mIoU
    checkpoint to <out_dir>/stage1.ckpt and returns its path."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.json")
    total_steps = cfg.stage1_steps if steps is None else steps

    torch.manual_seed(cfg.seed)
    net = build_stage1(cfg)
    extractor = PerceptualExtractor(cfg.perceptual_seed)
    opt = torch.optim.Adam(net.parameters(), lr=cfg.lr, betas=cfg.betas)
    sampler = np.random.default_rng([cfg.seed, 11])

    cache = SplitCache(dataset_root, "train")
    if len(cache) == 0:
        raise ValueError(f"no train samples under {dataset_root}")
    val_indices = list(range(min(cfg.val_samples, len(cache))))

    start_step = 0
    best = None
    if resume is not None:
        header, state = load_checkpoint(resume)
        net.load_state_dict(state["model"])
        opt.load_state_dict(state["optimizer"])
        torch.set_rng_state(state["torch_rng"].to(torch.uint8))
        sampler.bit_generator.state = json.loads(state["sampler_state"])
        start_step = state["step"]
        best = {
            "miou": header.get("val_miou", -1.0),
            "step": start_step,
            "model": copy.deepcopy(net.state_dict()),
            "optimizer": copy.deepcopy(opt.state_dict()),
            "torch_rng": torch.get_rng_state(),
            "sampler_state": json.dumps(sampler.bit_generator.state),
        }

    log = _JsonlLog(out_dir / "train_log.jsonl", echo=echo)
    net.train()
    for step in range(start_step, total_steps):
        idx = sampler.integers(0, len(cache), cfg.batch_size)
        batch = cache.batch(idx)
        out = net(batch["source_pose"], batch["garment"], batch["target_pose"])
        loss, breakdown = stage1_loss(out, batch, cfg.weights, extractor, cfg.stride)
        if not math.isfinite(breakdown["total"]):
            ids = [cache.metas[int(i)].sample_id for i in idx]
            dump = {"step": step, "batch_ids": ids, "breakdown": breakdown}
            with open(out_dir / "nan_dump.json", "w") as f:
                json.dump(dump, f, indent=2, sort_keys=True)
            raise RuntimeError(f"non-finite stage-1 loss at step {step}; batch ids {ids}")
        opt.zero_grad()
        loss.backward()
        opt.step()

        done = step + 1
        if done % cfg.log_every == 0 or done == total_steps:
            log.write({"step": done, **breakdown})
        if done % cfg.val_every == 0 or done == total_steps:
            val = validation_miou(net, cache, val_indices, cfg)
            log.write({"step": done, "val_miou": val})
            if best is None or val > best["miou"]:
                best = {
                    "miou": val,
                    "step": done,
                    "model": copy.deepcopy(net.state_dict()),
                    "optimizer": copy.deepcopy(opt.state_dict()),
                    "torch_rng": torch.get_rng_state(),
                    "sampler_state": json.dumps(sampler.bit_generator.state),
                }
    log.close()

    ckpt = out_dir / "stage1.ckpt"
    header = {
        "stage": 1,
        "step": best["step"],
        "val_miou": best["miou"],
        "config": cfg.to_dict(),
    }
    state = {
        "model": best["model"],
        "optimizer": best["optimizer"],
        "step": best["step"],
        "torch_rng": best["torch_rng"],
        "sampler_state": best["sampler_state"],
    }
    save_checkpoint(ckpt, header, state)
    return ckpt


# ---------------------------------------------------------------------------
# stage-2 training


@torch.no_grad()
def _precompute_warped(net1, cache: SplitCache, cfg: Config):
    warped = []
    for start in range(0, len(cache), cfg.batch_size):
        batch = cache.batch(range(start, min(start + cfg.batch_size, len(cache))))
        out = net1(batch["source_pose"], batch["garment"], batch["target_pose"])
        full = flow_to_full(out["flows"][-1], cfg.stride)
        warped.append(bilinear_warp(batch["garment"], full.data))
    return torch.cat(warped, dim=0)


def train_stage2(cfg: Config, dataset_root, stage1_checkpoint, out_dir, steps=None, echo=print):
    """Train the try-on generator/discriminator on top of a frozen stage-1
    checkpoint; returns the path of the stage-2 checkpoint (which embeds the
    frozen stage-1 weights so inference needs a single file)."""
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    total_steps = cfg.stage2_steps if steps is None else steps

    s1_header, s1_state = load_checkpoint(stage1_checkpoint)
    if s1_header["stage"] != 1:
        raise ValueError("train_stage2 expects a stage-1 checkpoint")
    s1_cfg = Config.from_dict(s1_header["config"])
    torch.manual_seed(cfg.seed)
    net1 = build_stage1(s1_cfg)
    net1.load_state_dict(s1_state["model"])
    net1.eval()
    for p in net1.parameters():
        p.requires_grad_(False)
    frozen_before = _state_bytes(net1)

    gen = TryOnGenerator(cfg.gen_widths)
    disc = PatchDiscriminator(cfg.gen_widths)
    extractor = PerceptualExtractor(cfg.perceptual_seed)
    g_opt = torch.optim.Adam(gen.parameters(), lr=cfg.lr, betas=cfg.betas)
    d_opt = torch.optim.Adam(disc.parameters(), lr=cfg.lr, betas=cfg.betas)
    sampler = np.random.default_rng([cfg.seed, 22])

    cache = SplitCache(dataset_root, "train")
    if len(cache) == 0:
        raise ValueError(f"no train samples under {dataset_root}")
    warped_garments = _precompute_warped(net1, cache, cfg)

    log = _JsonlLog(out_dir / "train_log.jsonl", echo=echo)
    for step in range(total_steps):
        idx = sampler.integers(0, len(cache), cfg.batch_size)
        batch = cache.batch(idx)
        real = batch["target_image"]
        cond = warped_garments[torch.as_tensor(np.asarray(idx, dtype=np.int64))]
        agnostic = real * (1.0 - batch["target_region"])

        fake = gen(agnostic, cond)
        d_real = disc(real, cond)
        d_fake = disc(fake.detach(), cond)
        d_loss = F.softplus(-d_real).mean() + F.softplus(d_fake).mean()
        d_opt.zero_grad()
        d_loss.backward()
        d_opt.step()

        g_logits = disc(fake, cond)
        g_total, _, breakdown = stage2_losses(
            fake, real, d_real.detach(), g_logits, d_fake.detach(), cfg.weights, extractor
        )
        if not math.isfinite(breakdown["gen_total"]):
            ids = [cache.metas[int(i)].sample_id for i in idx]
            raise RuntimeError(f"non-finite stage-2 loss at step {step}; batch ids {ids}")
        g_opt.zero_grad()
        d_opt.zero_grad()  # drop discriminator grads from the generator pass
        g_total.backward()
        g_opt.step()

        done = step + 1
        if done % cfg.log_every == 0 or done == total_steps:
            log.write({"step": done, **breakdown})
    log.close()

    if _state_bytes(net1) != frozen_before:
        raise RuntimeError("stage-1 parameters changed during stage-2 training")

    ckpt = out_dir / "stage2.ckpt"
    header = {"stage": 2, "step": total_steps, "config": cfg.to_dict()}
    state = {
        "generator": gen.state_dict(),
        "discriminator": disc.state_dict(),
        "gen_optimizer": g_opt.state_dict(),
        "disc_optimizer": d_opt.state_dict(),
        "step": total_steps,
        "stage1_model": net1.state_dict(),
        "stage1_config": s1_cfg.to_dict(),
    }
    save_checkpoint(ckpt, header, state)
    return ckpt


# ---------------------------------------------------------------------------
# try-on inference and evaluation


class TryOnRunner:
    """Full two-stage inference from a stage-2 checkpoint."""

    def __init__(self, checkpoint_path):
        header, state = load_checkpoint(checkpoint_path)
        if header["stage"] != 2:
            raise ValueError("try-on needs a stage-2 checkpoint")
        self.config = Config.from_dict(header["config"])
        self.stage1 = Stage1Predictor(checkpoint_path)
        torch.manual_seed(self.config.seed)
        self.gen = TryOnGenerator(self.config.gen_widths)
        self.gen.load_state_dict(state["generator"])
        self.gen.eval()

    @torch.no_grad()
    def run(self, source_tensors: dict, target_tensors: dict) -> dict:
        """Dress the target sample's target person in the source sample's
        garment."""
        merged = {
            "source_pose": source_tensors["source_pose"],
            "garment": source_tensors["garment"],
            "garment_mask": source_tensors["garment_mask"],
            "target_pose": target_tensors["target_pose"],
        }
        out = self.stage1.predict(merged)
        agnostic = target_tensors["target_image"] * (
            1.0 - target_tensors["target_garment_region"]
        )
        tryon = self.gen(
            agnostic.unsqueeze(0), out["warped_garment"].unsqueeze(0)
        )[0]
        out["tryon"] = tryon
        out["agnostic"] = agnostic
        return out


def _sample_ref(dataset_root, ref: str):
    split, _, sample_id = ref.partition("/")
    if not sample_id:
        raise ValueError(f"sample reference {ref!r} must look like <split>/<id>")
    path = Path(dataset_root) / split / sample_id
    if not path.exists():
        raise FileNotFoundError(f"no sample at {path}")
    return sample_tensors(read_sample(path))


def _save_png(path, chw_or_hwc):
    from .dataio import _save_image

    arr = chw_or_hwc
    if isinstance(arr, torch.Tensor):
        arr = arr.detach().cpu().numpy()
    if arr.ndim == 3 and arr.shape[0] in (1, 3):
        arr = np.transpose(arr, (1, 2, 0))
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    _save_image(path, arr)


def tryon(checkpoint_path, dataset_root, source_ref, target_ref, out_dir, echo=print):
    """Write the try-on image plus intermediate artifacts.

    Intermediates: one flow visualisation per pyramid level (f0..fL), the
    base-grid coarse warp, and a montage of the warped garment at every
    level.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runner = TryOnRunner(checkpoint_path)
    src = _sample_ref(dataset_root, source_ref)
    tgt = _sample_ref(dataset_root, target_ref)
    out = runner.run(src, tgt)

    written = []
    flows = [out["f0"]] + list(out["flows"])
    for f in flows:
        img = flow_to_color(f.data[0].permute(1, 2, 0).numpy())
        path = out_dir / f"flow_f{f.level - flows[0].level}.png"
        _save_png(path, img)
        written.append(path)

    stride = runner.config.stride
    garment = src["garment"].unsqueeze(0)
    if out.get("o") is not None:
        from .correspondence import coarse_warp
        from .warping import resize_to_level

        g_base = resize_to_level(garment, 0, stride, kind="image")
        coarse = coarse_warp(out["o"], g_base)[0]
    else:
        from .warping import resize_to_level

        g_base = resize_to_level(garment, 0, stride, kind="image")
        coarse = bilinear_warp(g_base, out["f0"].data)[0]
    path = out_dir / "coarse_warp.png"
    _save_png(path, coarse.clamp(0, 1))
    written.append(path)

    h, w = garment.shape[-2:]
    panels = []
    for f in flows:
        g_l = F.interpolate(garment, size=f.data.shape[-2:], mode="bilinear", align_corners=False)
        warped = bilinear_warp(g_l, f.data)
        panels.append(F.interpolate(warped, size=(h, w), mode="bilinear", align_corners=False)[0])
    montage = torch.cat(panels, dim=-1).clamp(0, 1)
    path = out_dir / "warped_garments.png"
    _save_png(path, montage)
    written.append(path)

    tryon_path = out_dir / "tryon.png"
    _save_png(tryon_path, out["tryon"].clamp(0, 1))
    echo(f"wrote {tryon_path} and {len(written)} intermediate images to {out_dir}")
    return {"tryon": tryon_path, "intermediates": written}


@torch.no_grad()
def evaluate_tryon(checkpoint_path, dataset_root, split, identity_only=True):
    """Masked L1 between try-on outputs and target images over garment
    pixels, plus output range / finiteness checks."""
    runner = TryOnRunner(checkpoint_path)
    metas = [m for m in read_manifest(dataset_root) if m.split == split]
    metas.sort(key=lambda m: m.sample_id)
    records = []
    out_min, out_max = float("inf"), float("-inf")
    finite = True
    for meta in metas:
        tensors = sample_tensors(read_sample(Path(dataset_root) / split / meta.sample_id))
        out = runner.run(tensors, tensors)
        img = out["tryon"]
        finite = finite and bool(torch.isfinite(img).all())
        out_min = min(out_min, float(img.min()))
        out_max = max(out_max, float(img.max()))
        if identity_only and not meta.identity:
            continue
        region = tensors["target_garment_region"] > 0.5
        diff = (img - tensors["target_image"]).abs()
        region3 = region.expand_as(diff)
        l1 = float(diff[region3].mean()) if bool(region3.any()) else 0.0
        records.append({"id": meta.sample_id, "masked_l1": l1})
    mean_l1 = float(np.mean([r["masked_l1"] for r in records])) if records else 0.0
    return {
        "split": split,
        "identity_only": identity_only,
        "samples": records,
        "mean_masked_l1": mean_l1,
        "output_min": out_min,
        "output_max": out_max,
        "finite": finite,
    }


# ---------------------------------------------------------------------------
# ablation

ABLATION_VARIANTS = (
    ("neither", False, False),
    ("global_corr_only", True, False),
    ("flow_reg_only", False, True),
    ("full", True, True),
)


def ablate(cfg: Config, dataset_root, out_dir, steps=None, full_checkpoint=None, echo=print):
    """Train the four configuration variants and tabulate hard-split mIoU.

    full_checkpoint (optional) reuses an existing full-model checkpoint;
    training is seed-deterministic so the result matches a fresh run with
    the same config.
    """
    from .metrics import evaluate_split

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, use_corr, use_reg in ABLATION_VARIANTS:
        cfg_v = dataclasses.replace(
            cfg,
            use_global_correspondence=use_corr,
            weights=dataclasses.replace(cfg.weights, r=cfg.weights.r if use_reg else 0.0),
        )
        if name == "full" and full_checkpoint is not None:
            ckpt = Path(full_checkpoint)
        else:
            ckpt = train_stage1(cfg_v, dataset_root, out_dir / name, steps=steps, echo=echo)
        report = evaluate_split(ckpt, dataset_root, "hardpose")
        rows.append(
            {
                "variant": name,
                "global_correspondence": use_corr,
                "flow_regularization": use_reg,
                "miou_hardpose": report.aggregate()["mean_miou"],
            }
        )
        echo(f"{name}: hardpose mIoU = {rows[-1]['miou_hardpose']:.4f} "
             f"(corr={use_corr}, reg={use_reg})")
    with open(out_dir / "ablation.json", "w") as f:
        json.dump({"rows": rows}, f, indent=2, sort_keys=True)
        f.write("\n")
    return rows
