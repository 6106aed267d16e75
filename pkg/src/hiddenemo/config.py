"""One YAML file configures a whole run; see ``configs/default.yaml``."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from hiddenemo.datamodel import ValidationError
from hiddenemo.inference import VoteConfig
from hiddenemo.model import TrimodalConfig
from hiddenemo.synthgen import SynthConfig
from hiddenemo.training import FocalLossParams, StageConfig

STAGE_KEYS = ("learning_rate", "epochs", "batch_size", "resample_views_per_epoch", "finetune_lr_scale",
              "lr_override", "weight_decay", "pseudo_weight", "val_views", "val_fraction")


@dataclass(frozen=True)
class StageSettings:
    """StageConfig fields minus the stage name, seed and worker count (filled in per run)."""

    learning_rate: float = 1e-3
    epochs: int = 15
    batch_size: int = 8
    resample_views_per_epoch: int = 1
    finetune_lr_scale: float = 0.1
    lr_override: float | None = None
    weight_decay: float = 0.01
    pseudo_weight: float = 1.0
    val_views: int = 1
    val_fraction: float = 0.15

    def stage(self, name: str, seed: int, workers: int = 1) -> StageConfig:
        return StageConfig(stage=name, seed=seed, workers=workers, **dataclasses.asdict(self))


@dataclass(frozen=True)
class WeakSupSettings:
    noise_rate: float = 0.356
    exclusion_threshold: float = 0.0


@dataclass(frozen=True)
class AblationSettings:
    kinds: tuple[str, ...] = ("mlp", "gcn")
    offsets: tuple[str, ...] = ("on", "off")
    strategies: tuple[str, ...] = ("keypoint_only",)
    seeds: tuple[int, ...] = (0, 1, 2)
    max_seconds: float | None = None
    gold_count: int = 24
    pool_count: int = 40
    val_count: int = 16
    epochs: int = 15
    views_per_epoch: int = 2


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    workers: int = 1
    out_dir: str = "runs/default"
    synth: SynthConfig = field(default_factory=SynthConfig)
    model: TrimodalConfig = field(default_factory=TrimodalConfig)
    loss: FocalLossParams = field(default_factory=FocalLossParams)
    pretrain: StageSettings = field(default_factory=StageSettings)
    finetune: StageSettings = field(default_factory=StageSettings)
    vote: VoteConfig = field(default_factory=VoteConfig)
    weaksup: WeakSupSettings = field(default_factory=WeakSupSettings)
    ablation: AblationSettings = field(default_factory=AblationSettings)

    def __post_init__(self):
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.model.visual_width != self.synth.visual_width:
            raise ValidationError("model.visual_width must match synth.visual_width")

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d or {})
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        builders = {
            "synth": SynthConfig,
            "loss": FocalLossParams,
            "pretrain": StageSettings,
            "finetune": StageSettings,
            "vote": VoteConfig,
            "weaksup": WeakSupSettings,
            "ablation": AblationSettings,
        }
        try:
            for key, typ in builders.items():
                if key in d:
                    sub = dict(d[key] or {})
                    for name, value in sub.items():
                        if isinstance(value, list):
                            sub[name] = tuple(value)
                    d[key] = typ(**sub)
            if "model" in d:
                d["model"] = TrimodalConfig.from_dict(d["model"] or {})
            return cls(**d)
        except TypeError as exc:
            raise ValidationError(f"bad config: {exc}") from None

    def with_overrides(self, seed=None, workers=None, out_dir=None) -> "RunConfig":
        changes = {k: v for k, v in (("seed", seed), ("workers", workers), ("out_dir", out_dir)) if v is not None}
        return dataclasses.replace(self, **changes)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path=None) -> RunConfig:
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ValidationError(f"config {path} is not valid YAML: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ValidationError(f"config {path} must be a mapping")
    return RunConfig.from_dict(data or {})


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
