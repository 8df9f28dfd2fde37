"""Run configuration: sizes, network widths, weights, optimizer, seeds."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .losses import LossWeights

__all__ = ["Config", "load_config", "save_config"]


@dataclass
class Config:
    image_hw: tuple[int, int] = (64, 64)
    stride: int = 8  # base-grid downscale factor
    levels: int = 2  # number of refinement levels above the base grid
    enc_widths: tuple[int, ...] = (32, 64, 96)
    hidden_width: int = 64
    temperature: float = 0.07
    gen_widths: tuple[int, ...] = (32, 64, 128)
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 2e-4
    betas: tuple[float, float] = (0.5, 0.999)
    batch_size: int = 8
    stage1_steps: int = 2000
    stage2_steps: int = 2000
    seed: int = 0
    train_hard_fraction: float = 0.5
    train_identity_fraction: float = 0.125
    test_identity_fraction: float = 0.25
    correlation_budget_bytes: int = 1 << 30
    use_global_correspondence: bool = True
    perceptual_seed: int = 1234
    log_every: int = 50
    val_every: int = 250
    val_samples: int = 32

    def validate(self) -> "Config":
        h, w = self.image_hw
        if h % self.stride or w % self.stride:
            raise ValueError(f"image size {h}x{w} not divisible by stride {self.stride}")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.levels + 1 > len(self.enc_widths):
            raise ValueError(
                f"levels={self.levels} needs at least {self.levels + 1} encoder widths"
            )
        if 2 ** (self.levels) > self.stride:
            raise ValueError(f"levels={self.levels} exceeds the stride-{self.stride} pyramid")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        self.weights.validate()
        from .correspondence import check_correlation_budget

        check_correlation_budget(self.image_hw, self.stride, self.correlation_budget_bytes)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        d = dict(d)
        if "weights" in d and isinstance(d["weights"], dict):
            d["weights"] = LossWeights(**d["weights"])
        for key in ("image_hw", "enc_widths", "gen_widths", "betas"):
            if key in d and isinstance(d[key], list):
                d[key] = tuple(d[key])
        return cls(**d)


def load_config(path) -> Config:
    with open(path) as f:
        return Config.from_dict(json.load(f)).validate()


def save_config(cfg: Config, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
