"""Run configuration, loadable from JSON.

Defaults are desk scale: 8-channel convs, 8 layers, 32x32 patches and 200
sampled blocks.  The full-scale setting uses 64 channels, 15 layers, 64x64
patches and about 3000 blocks.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .nsc import SpaceConfig


class ConfigError(ValueError):
    pass


@dataclass
class EarlyStop:
    interval: int = 50
    patience: int = 5


@dataclass
class Config:
    seed: int = 0
    noise_sigma: float = 25.0
    mu: float = 0.5
    reward_mode: str = "penalized"  # or "psnr_only"
    psnr_clamp: float = 60.0
    reward_floor: float = 0.0
    base_width: int = 8
    image_channels: int = 1
    max_layers: int = 8
    max_channels: int | None = None
    spatial_floor: int = 2
    max_upscale: int = 4
    conv_kernels: list = field(default_factory=lambda: [1, 3])
    op_types: list = field(default_factory=lambda: [1, 2, 3, 4, 5, 6, 7, 8])
    dmm_mode: str = "full"  # full | off | zero_pad
    patch_size: int = 32
    # search
    episodes: int = 200
    workers: int = 1
    surrogate: bool = False
    candidate_budget: int = 2000
    early_stop: EarlyStop = field(default_factory=EarlyStop)
    batch_size: int = 16
    lr: float = 1e-3
    alpha: float = 0.01
    gamma: float = 1.0
    replay_capacity: int = 2000
    replay_batch: int = 64
    warmup_episodes: int = 50
    select_by: str = "reward"  # or "psnr"
    top_k: int = 10
    checkpoint_every: int = 0
    # full model
    K: int = 2
    delta: float = 0.1
    eta: float = 0.9
    full_iterations: int = 2000
    iters_per_epoch: int = 20
    lr_halve_every: int = 50
    eval_interval: int = 100
    dtype: str = "float32"
    # data
    train_dir: str | None = None
    val_dir: str | None = None
    test_dir: str | None = None
    n_images: int = 64
    image_size: int = 64
    n_patches: int = 2048
    n_val: int = 16
    n_test: int = 32

    def __post_init__(self):
        if isinstance(self.early_stop, dict):
            self.early_stop = EarlyStop(**self.early_stop)
        if self.dmm_mode not in ("full", "off", "zero_pad"):
            raise ConfigError(f"dmm_mode must be full|off|zero_pad, got {self.dmm_mode!r}")
        if self.reward_mode not in ("penalized", "psnr_only"):
            raise ConfigError(f"reward_mode must be penalized|psnr_only, got {self.reward_mode!r}")
        if self.select_by not in ("reward", "psnr"):
            raise ConfigError(f"select_by must be reward|psnr, got {self.select_by!r}")
        if self.workers < 1 or self.episodes < 0 or self.K < 1:
            raise ConfigError("workers and K must be >= 1, episodes >= 0")

    @property
    def space(self) -> SpaceConfig:
        return SpaceConfig(
            base_width=self.base_width,
            image_channels=self.image_channels,
            patch_size=self.patch_size,
            max_layers=self.max_layers,
            max_channels=self.max_channels,
            spatial_floor=self.spatial_floor,
            max_upscale=self.max_upscale,
            conv_kernels=tuple(self.conv_kernels),
            op_types=tuple(self.op_types),
        )

    @property
    def effective_mu(self) -> float:
        return 0.0 if self.reward_mode == "psnr_only" else self.mu

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def replace(self, **changes) -> "Config":
        return Config.from_dict({**self.to_dict(), **changes})

    @classmethod
    def from_dict(cls, d: dict) -> "Config":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        d = dict(d)
        if isinstance(d.get("early_stop"), dict):
            es = d["early_stop"]
            bad = sorted(set(es) - {"interval", "patience"})
            if bad:
                raise ConfigError(f"unknown early_stop key(s): {', '.join(bad)}")
            d["early_stop"] = EarlyStop(**es)
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Config":
        with open(path) as f:
            try:
                return cls.from_dict(json.load(f))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: {e}") from None
