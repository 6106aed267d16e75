"""Keypoint, visual and text branches, residual fusion and checkpoints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import torch
from torch import nn

from hiddenemo.datamodel import ValidationError
from hiddenemo.encoders import (
    SpatialEncoder,
    SpatialEncoderConfig,
    TemporalEncoder,
    TemporalEncoderConfig,
    TextEncoder,
    TextEncoderConfig,
    make_activation,
)
from hiddenemo.features import GROUP_NAMES, GroupSpec, SamplingConfig
from hiddenemo.topology import NormalizedAdjacency, default_adjacencies

BRANCHES = ("keypoint", "visual", "text")
STAGES = ("pretrain_keypoint", "pretrain_visual", "pretrain_text", "finetune_full")
CHECKPOINT_FORMAT = "hiddenemo-checkpoint/1"


@dataclass(frozen=True)
class TrimodalConfig:
    spatial: SpatialEncoderConfig = field(default_factory=SpatialEncoderConfig)
    keypoint_temporal: TemporalEncoderConfig = field(default_factory=TemporalEncoderConfig)
    visual_temporal: TemporalEncoderConfig = field(default_factory=TemporalEncoderConfig)
    text: TextEncoderConfig = field(default_factory=TextEncoderConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    visual_width: int = 768
    text_mode: str = "tokens"  # or "embedding": precomputed vectors of width text_embedding_width
    text_embedding_width: int = 768
    branch_dim: int = 256
    fusion_activation: str = "relu"
    class_count: int = 2

    def __post_init__(self):
        # node features follow the sampling config (2 coords + 2 per lag)
        if self.spatial.node_feature_dim != self.sampling.node_feature_dim:
            object.__setattr__(
                self, "spatial", dataclasses.replace(self.spatial, node_feature_dim=self.sampling.node_feature_dim)
            )
        if self.class_count != 2:
            raise ValidationError("only two classes (win/loss) are supported")
        if self.branch_dim < 1 or self.visual_width < 1:
            raise ValidationError("branch_dim and visual_width must be positive")
        if self.text_mode not in ("tokens", "embedding"):
            raise ValidationError(f"unknown text_mode {self.text_mode!r}")
        if self.keypoint_temporal.max_sequence_length < self.sampling.keypoint_frames:
            raise ValidationError("keypoint_temporal.max_sequence_length is shorter than keypoint_frames")
        if self.visual_temporal.max_sequence_length < self.sampling.visual_frames:
            raise ValidationError("visual_temporal.max_sequence_length is shorter than visual_frames")
        make_activation(self.fusion_activation)

    @property
    def fused_dim(self) -> int:
        return 3 * self.branch_dim

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrimodalConfig":
        d = dict(d)
        sub = {
            "spatial": SpatialEncoderConfig,
            "keypoint_temporal": TemporalEncoderConfig,
            "visual_temporal": TemporalEncoderConfig,
            "text": TextEncoderConfig,
            "sampling": SamplingConfig,
        }
        for key, typ in sub.items():
            if key in d and isinstance(d[key], dict):
                d[key] = typ(**d[key])
        return cls(**d)


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=list).encode()).hexdigest()[:16]


def branch_fingerprint(cfg: TrimodalConfig, branch: str) -> str:
    """Hash of the config fields that shape a branch's parameters."""
    d = cfg.to_dict()
    if branch == "keypoint":
        part = {k: d[k] for k in ("spatial", "keypoint_temporal", "branch_dim")}
        part["node_feature_dim"] = cfg.sampling.node_feature_dim
    elif branch == "visual":
        part = {k: d[k] for k in ("visual_temporal", "visual_width", "branch_dim")}
    elif branch == "text":
        part = {k: d[k] for k in ("text", "text_mode", "text_embedding_width", "branch_dim")}
    else:
        raise ValidationError(f"unknown branch {branch!r}")
    # dropout does not change parameter shapes
    for v in part.values():
        if isinstance(v, dict):
            v.pop("dropout_rate", None)
    return _digest({"branch": branch, **part})


def full_fingerprint(cfg: TrimodalConfig) -> str:
    return _digest({b: branch_fingerprint(cfg, b) for b in BRANCHES} | {"fusion": cfg.fusion_activation})


@dataclass
class Batch:
    """Collated inputs. Any modality may be ``None`` when only some branches run."""

    keypoints: dict[str, torch.Tensor] | None = None  # group -> [B, T, n, F]
    visual: torch.Tensor | None = None  # [B, T_v, W]
    text_ids: torch.Tensor | None = None  # [B, L]
    text_valid: torch.Tensor | None = None  # [B, L]
    text_embedding: torch.Tensor | None = None  # [B, W_t]
    labels: torch.Tensor | None = None  # [B] class indices
    weights: torch.Tensor | None = None  # [B] per-sample loss weights
    sample_ids: list[str] = field(default_factory=list)

    def to(self, dtype) -> "Batch":
        def cast(t):
            return t.to(dtype) if t is not None and t.is_floating_point() else t

        return dataclasses.replace(
            self,
            keypoints=None if self.keypoints is None else {g: cast(t) for g, t in self.keypoints.items()},
            visual=cast(self.visual),
            text_embedding=cast(self.text_embedding),
            weights=cast(self.weights),
        )


class KeypointBranch(nn.Module):
    """Per group: spatial encoder -> temporal transformer -> pooled vector; then concat -> affine.

    Inputs are standardized per (keypoint, channel) with buffers set by
    :meth:`fit_standardization`; the defaults (mean 0, std 1) leave them unchanged.
    """

    def __init__(self, cfg: TrimodalConfig, adjacencies: dict[str, NormalizedAdjacency] | None = None):
        """Graph encoders use the packaged topology unless ``adjacencies`` is given."""
        super().__init__()
        sizes = GroupSpec().sizes()
        if cfg.spatial.kind != "mlp" and adjacencies is None:
            adjacencies = default_adjacencies()
        self.spatial = nn.ModuleDict(
            {
                g: SpatialEncoder(sizes[g], cfg.spatial, None if adjacencies is None else adjacencies[g])
                for g in GROUP_NAMES
            }
        )
        self.temporal = nn.ModuleDict(
            {g: TemporalEncoder(cfg.spatial.frame_embedding_dim, cfg.keypoint_temporal) for g in GROUP_NAMES}
        )
        self.compress = nn.Linear(3 * cfg.keypoint_temporal.model_dim, cfg.branch_dim)
        F_ = cfg.spatial.node_feature_dim
        for g in GROUP_NAMES:
            self.register_buffer(f"mean_{g}", torch.zeros(sizes[g], F_))
            self.register_buffer(f"std_{g}", torch.ones(sizes[g], F_))

    @torch.no_grad()
    def fit_standardization(self, groups: dict[str, torch.Tensor], floor: float = 1e-4) -> None:
        """Set mean/std from stacked training views ``group -> [N, T, n, F]``."""
        for g in GROUP_NAMES:
            x = groups[g].reshape(-1, *groups[g].shape[-2:]).to(getattr(self, f"mean_{g}").dtype)
            getattr(self, f"mean_{g}").copy_(x.mean(dim=0))
            getattr(self, f"std_{g}").copy_(x.std(dim=0).clamp_min(floor))

    def standardize(self, g, x):
        return (x - getattr(self, f"mean_{g}")) / getattr(self, f"std_{g}")

    def forward(self, batch: Batch):
        groups = batch.keypoints
        if groups is None or set(groups) != set(GROUP_NAMES):
            raise ValidationError("keypoint branch needs skeleton, face and hands streams")
        lengths = {g: groups[g].shape[1] for g in GROUP_NAMES}
        if len(set(lengths.values())) != 1:
            raise ValidationError(f"frame counts differ across groups: {lengths}")
        pooled = [self.temporal[g](self.spatial[g](self.standardize(g, groups[g]))) for g in GROUP_NAMES]
        return self.compress(torch.cat(pooled, dim=-1))


class VisualBranch(nn.Module):
    def __init__(self, cfg: TrimodalConfig):
        super().__init__()
        self.width = cfg.visual_width
        self.temporal = TemporalEncoder(cfg.visual_width, cfg.visual_temporal)
        self.compress = nn.Linear(cfg.visual_temporal.model_dim, cfg.branch_dim)

    def forward(self, batch: Batch):
        x = batch.visual
        if x is None:
            raise ValidationError("visual branch needs a visual sequence")
        if x.shape[-1] != self.width:
            raise ValidationError(f"visual width {x.shape[-1]} != configured {self.width}")
        return self.compress(self.temporal(x))


class TextBranch(nn.Module):
    def __init__(self, cfg: TrimodalConfig):
        super().__init__()
        self.mode = cfg.text_mode
        if self.mode == "tokens":
            self.encoder = TextEncoder(cfg.text)
            self.compress = nn.Linear(cfg.text.token_embedding_dim, cfg.branch_dim)
        else:
            self.width = cfg.text_embedding_width
            self.compress = nn.Linear(cfg.text_embedding_width, cfg.branch_dim)

    def forward(self, batch: Batch):
        if self.mode == "tokens":
            if batch.text_ids is None:
                raise ValidationError("text branch needs token ids")
            return self.compress(self.encoder(batch.text_ids, batch.text_valid))
        if batch.text_embedding is None:
            raise ValidationError("text branch needs a precomputed text embedding")
        if batch.text_embedding.shape[-1] != self.width:
            raise ValidationError(f"text embedding width {batch.text_embedding.shape[-1]} != {self.width}")
        return self.compress(batch.text_embedding)


class FusionHead(nn.Module):
    """fused = x + act(W x + b) on the concatenated branch vectors; logits = affine(fused)."""

    def __init__(self, fused_dim: int, activation: str = "relu", class_count: int = 2):
        super().__init__()
        self.fuse = nn.Linear(fused_dim, fused_dim)
        self.act = make_activation(activation)
        self.head = nn.Linear(fused_dim, class_count)

    def fused(self, x):
        if not torch.isfinite(x).all():
            raise ValidationError("non-finite branch outputs")
        return x + self.act(self.fuse(x))

    def forward(self, x):
        return self.head(self.fused(x))


def make_branch(cfg: TrimodalConfig, branch: str, adjacencies=None) -> nn.Module:
    if branch == "keypoint":
        return KeypointBranch(cfg, adjacencies)
    if branch == "visual":
        return VisualBranch(cfg)
    if branch == "text":
        return TextBranch(cfg)
    raise ValidationError(f"unknown branch {branch!r}")


class BranchClassifier(nn.Module):
    """A single branch with a temporary [branch_dim -> 2] head for stage-1 training."""

    def __init__(self, cfg: TrimodalConfig, branch: str, adjacencies=None):
        super().__init__()
        self.cfg = cfg
        self.name = branch
        self.branch = make_branch(cfg, branch, adjacencies)
        self.head = nn.Linear(cfg.branch_dim, cfg.class_count)

    def forward(self, batch: Batch):
        return self.head(self.branch(batch))


class TrimodalModel(nn.Module):
    def __init__(self, cfg: TrimodalConfig, adjacencies=None):
        super().__init__()
        self.cfg = cfg
        self.keypoint = KeypointBranch(cfg, adjacencies)
        self.visual = VisualBranch(cfg)
        self.text = TextBranch(cfg)
        self.fusion = FusionHead(cfg.fused_dim, cfg.fusion_activation, cfg.class_count)

    def branch_outputs(self, batch: Batch):
        return self.keypoint(batch), self.visual(batch), self.text(batch)

    def forward(self, batch: Batch):
        return self.fusion(torch.cat(self.branch_outputs(batch), dim=-1))


def fuse_and_classify(keypoint_vec, visual_vec, text_vec, fusion: FusionHead):
    return fusion(torch.cat([keypoint_vec, visual_vec, text_vec], dim=-1))


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    tensors: dict[str, torch.Tensor]
    fingerprint: str
    stage: str
    epoch: int
    val_accuracy: float | None
    config: dict

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(
            {
                "format": CHECKPOINT_FORMAT,
                "fingerprint": self.fingerprint,
                "stage": self.stage,
                "epoch": self.epoch,
                "val_accuracy": self.val_accuracy,
                "config": json.dumps(self.config, sort_keys=True),
                "tensors": {k: v.detach().clone() for k, v in self.tensors.items()},
            },
            path,
        )
        return path


class FingerprintMismatch(ValidationError):
    pass


def load_checkpoint(path, expected_fingerprint: str | None = None, allow_mismatch: bool = False) -> Checkpoint:
    blob = torch.load(path, map_location="cpu", weights_only=True)
    if blob.get("format") != CHECKPOINT_FORMAT:
        raise ValidationError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if expected_fingerprint is not None and blob["fingerprint"] != expected_fingerprint and not allow_mismatch:
        raise FingerprintMismatch(
            f"{path}: config fingerprint {blob['fingerprint']} != expected {expected_fingerprint}"
        )
    return Checkpoint(
        tensors=blob["tensors"],
        fingerprint=blob["fingerprint"],
        stage=blob["stage"],
        epoch=int(blob["epoch"]),
        val_accuracy=blob["val_accuracy"],
        config=json.loads(blob["config"]),
    )


def checkpoint_from_module(module: nn.Module, fingerprint, stage, epoch, val_accuracy, cfg: TrimodalConfig):
    if stage not in STAGES:
        raise ValidationError(f"unknown stage {stage!r}")
    return Checkpoint(
        {k: v.detach().clone() for k, v in module.state_dict().items()},
        fingerprint,
        stage,
        epoch,
        val_accuracy,
        cfg.to_dict(),
    )


def load_branch_into(model: TrimodalModel, ckpt: Checkpoint, branch: str, allow_mismatch: bool = False) -> list[str]:
    """Copy a stage-1 branch backbone into the full model; the temporary head is dropped.

    Returns the names of the full-model parameters that were overwritten.
    """
    expected = branch_fingerprint(model.cfg, branch)
    if ckpt.fingerprint != expected and not allow_mismatch:
        raise FingerprintMismatch(f"{branch} checkpoint fingerprint {ckpt.fingerprint} != expected {expected}")
    prefix = "branch."
    state = {k[len(prefix):]: v for k, v in ckpt.tensors.items() if k.startswith(prefix)}
    target: nn.Module = getattr(model, branch)
    target.load_state_dict(state, strict=True)
    return [f"{branch}.{k}" for k in state]


def module_from_checkpoint(ckpt: Checkpoint, adjacencies=None) -> nn.Module:
    """Rebuild the module a checkpoint was taken from and load its tensors."""
    cfg = TrimodalConfig.from_dict(ckpt.config)
    if ckpt.stage == "finetune_full":
        module, expected = TrimodalModel(cfg, adjacencies), full_fingerprint(cfg)
    else:
        branch = ckpt.stage.removeprefix("pretrain_")
        module, expected = BranchClassifier(cfg, branch, adjacencies), branch_fingerprint(cfg, branch)
    if ckpt.fingerprint != expected:
        raise FingerprintMismatch(f"checkpoint fingerprint {ckpt.fingerprint} does not match its own config")
    module.load_state_dict(ckpt.tensors, strict=True)
    return module.eval()
