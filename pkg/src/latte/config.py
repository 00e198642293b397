"""Run configuration: JSON in, JSON out, unknown keys rejected at every level."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .backbone import ModelConfig


class ConfigError(ValueError):
    pass


def _strict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object, got {type(d).__name__}")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    return d


@dataclass(frozen=True)
class DiffusionConfig:
    steps: int = 1000
    beta_start: float | None = None
    beta_end: float | None = None
    vlb_weight: float = 0.001

    def validate(self):
        if self.steps < 1:
            raise ConfigError("diffusion.steps must be >= 1")
        if self.vlb_weight < 0:
            raise ConfigError("diffusion.vlb_weight must be >= 0")


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def validate(self):
        if self.lr <= 0 or not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.eps <= 0 or self.weight_decay < 0:
            raise ConfigError("optimizer hyper-parameters out of range")


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "moving_shapes"  # or "frame_dirs": one sub-directory of PGM/PPM frames per video
    path: str | None = None
    num_videos: int = 64
    video_length: int = 16
    height: int = 32
    width: int = 32
    channels: int = 1
    num_classes: int = 4
    interval: int = 1
    codec_factor: int = 2
    hflip: bool = True
    speed: float = 1.0

    def validate(self):
        if self.kind not in ("moving_shapes", "frame_dirs"):
            raise ConfigError(f"dataset.kind must be 'moving_shapes' or 'frame_dirs', got {self.kind!r}")
        if self.kind == "frame_dirs" and not self.path:
            raise ConfigError("dataset.path is required for frame_dirs")
        if min(self.num_videos, self.video_length, self.interval, self.codec_factor) < 1:
            raise ConfigError("dataset counts must be positive")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    ema_decay: float = 0.9999
    batch_size: int = 8
    extra_images: int | None = None  # None: half the clip length
    steps: int = 500
    seed: int = 0
    output_dir: str = "runs/default"
    log_every: int = 1
    ckpt_every: int = 100
    precision: str = "f32"
    class_conditional: bool = True

    def __post_init__(self):
        self.validate()

    @property
    def joint_frames(self) -> int:
        return self.model.frames // 2 if self.extra_images is None else self.extra_images

    def validate(self):
        self.diffusion.validate()
        self.optim.validate()
        self.dataset.validate()
        if not 0 < self.ema_decay < 1:
            raise ConfigError("ema_decay must lie in (0, 1)")
        if self.batch_size < 1 or self.steps < 0 or self.log_every < 1 or self.ckpt_every < 1:
            raise ConfigError("batch_size, log_every and ckpt_every must be positive; steps >= 0")
        if self.extra_images is not None and self.extra_images < 0:
            raise ConfigError("extra_images must be >= 0")
        if self.precision not in ("f32", "f64"):
            raise ConfigError("precision must be 'f32' or 'f64'")
        if self.joint_frames and self.model.patch_mode == "compression":
            raise ConfigError("joint image frames need uniform patch embedding")
        if self.model.variant == 0 and self.joint_frames:
            raise ConfigError("the image model (variant 0) takes no appended frames")
        want = self.dataset.num_classes if self.class_conditional and self.dataset.kind == "moving_shapes" else None
        if self.model.num_classes != want:
            raise ConfigError(f"model.num_classes must be {want} for this dataset/conditioning setting")
        f = self.dataset.codec_factor
        want_latent = (self.dataset.height // f, self.dataset.width // f, self.dataset.channels * f * f)
        if self.dataset.kind == "moving_shapes" and tuple(self.model.latent) != want_latent:
            raise ConfigError(f"model.latent {tuple(self.model.latent)} does not match the codec output {want_latent}")

    # serialisation
    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        d = dict(_strict(cls, d, "config"))
        try:
            if "model" in d:
                d["model"] = ModelConfig.from_dict(_strict(ModelConfig, d["model"], "model"))
            for key, sub in (("diffusion", DiffusionConfig), ("optim", OptimConfig), ("dataset", DatasetConfig)):
                if key in d:
                    d[key] = sub(**_strict(sub, d[key], key))
            return cls(**d)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    def model_hash(self) -> str:
        """Identity of everything a checkpoint's arrays depend on."""
        blob = json.dumps({"model": self.model.to_dict(), "diffusion": asdict(self.diffusion)}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def desk_config(**overrides) -> RunConfig:
    """Small run that trains on one CPU core in minutes: variant 1, N=4, D=64, F=4, 16x16x4 latents."""
    base = RunConfig(
        model=ModelConfig(variant=1, layers=4, hidden=64, heads=4, frames=4, latent=(16, 16, 4), num_classes=4),
        optim=OptimConfig(lr=1e-3),
        ema_decay=0.99,
        batch_size=8,
        extra_images=0,
        steps=500,
        ckpt_every=250,
    )
    if not overrides:
        return base
    d = base.to_dict()
    for k, v in overrides.items():
        d[k] = v.to_dict() if isinstance(v, ModelConfig) else (asdict(v) if hasattr(v, "__dataclass_fields__") else v)
    return RunConfig.from_dict(d)
