"""Focal loss, stage-1 branch pretraining and stage-2 weakly supervised fine-tuning."""

from __future__ import annotations

import copy
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from hiddenemo.batching import FeatureStore, collate, view_seed
from hiddenemo.datamodel import DatasetManifest, Label, ValidationError, split_train_val
from hiddenemo.inference import VoteConfig, evaluate, module_modalities
from hiddenemo.model import (
    BRANCHES,
    STAGES,
    BranchClassifier,
    Checkpoint,
    TrimodalConfig,
    TrimodalModel,
    branch_fingerprint,
    checkpoint_from_module,
    full_fingerprint,
    load_branch_into,
)
from hiddenemo.seeding import derive_seed, rng


@dataclass(frozen=True)
class FocalLossParams:
    gamma: float = 2.0
    alpha_win: float = 0.25
    alpha_loss: float = 0.75

    def __post_init__(self):
        if self.gamma < 0:
            raise ValidationError("gamma must be non-negative")
        if self.alpha_win <= 0 or self.alpha_loss <= 0:
            raise ValidationError("alpha components must be positive")

    def alpha_vector(self, dtype=torch.float32) -> torch.Tensor:
        # indexed by class index: loss=0, win=1
        return torch.tensor([self.alpha_loss, self.alpha_win], dtype=dtype)


def focal_loss(logits, labels, params: FocalLossParams = FocalLossParams(), weights=None):
    """Mean of ``-alpha_t (1 - p_t)^gamma log p_t`` over the batch.

    ``logits`` is ``[2]`` or ``[B, 2]``; ``labels`` are class indices or
    :class:`Label` values. With ``weights`` the mean is weighted.
    """
    logits = torch.as_tensor(logits)
    if logits.ndim == 1:
        logits = logits[None]
    if isinstance(labels, Label):
        labels = [labels]
    if not torch.is_tensor(labels):
        labels = torch.tensor([l.index if isinstance(l, Label) else int(l) for l in labels])
    labels = labels.reshape(-1).long()
    log_p = F.log_softmax(logits, dim=-1).gather(1, labels[:, None])[:, 0]
    p_t = log_p.exp()
    alpha_t = params.alpha_vector(logits.dtype)[labels]
    if params.gamma == 0:
        per = -alpha_t * log_p
    else:
        per = -alpha_t * (1.0 - p_t).pow(params.gamma) * log_p
    if weights is None:
        return per.mean()
    w = torch.as_tensor(weights, dtype=logits.dtype)
    return (per * w).sum() / w.sum()


@dataclass(frozen=True)
class StageConfig:
    stage: str = "pretrain_keypoint"
    learning_rate: float = 1e-3
    epochs: int = 15
    batch_size: int = 8
    seed: int = 0
    resample_views_per_epoch: int = 1
    finetune_lr_scale: float = 0.1
    lr_override: float | None = None
    weight_decay: float = 0.01
    pseudo_weight: float = 1.0
    val_views: int = 1
    val_fraction: float = 0.15
    workers: int = 1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValidationError(f"unknown stage {self.stage!r}")
        if self.epochs < 0 or self.batch_size < 1 or self.resample_views_per_epoch < 1:
            raise ValidationError("epochs >= 0, batch_size >= 1 and resample_views_per_epoch >= 1 required")
        if self.learning_rate < 0 or (self.lr_override is not None and self.lr_override < 0):
            raise ValidationError("learning rates must be non-negative")

    @property
    def effective_lr(self) -> float:
        if self.lr_override is not None:
            return self.lr_override
        if self.stage == "finetune_full":
            return self.learning_rate * self.finetune_lr_scale
        return self.learning_rate


@dataclass
class TrainReport:
    stage: str
    history: list[dict] = field(default_factory=list)
    best_epoch: int | None = None
    best_val_accuracy: float | None = None
    best_checkpoint: str | None = None
    wall_seconds: float = 0.0
    error: str | None = None

    def curve(self, key: str) -> list:
        return [h[key] for h in self.history]

    def deterministic_view(self) -> dict:
        """Everything except wall-clock timing."""
        d = asdict(self)
        d.pop("wall_seconds")
        return d

    def write_jsonl(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            for h in self.history:
                fh.write(json.dumps({"stage": self.stage, **h}) + "\n")
            fh.write(json.dumps({"stage": self.stage, "summary": {k: v for k, v in asdict(self).items()
                                                                  if k != "history"}}) + "\n")

    def summary_table(self) -> str:
        keys = ["epoch", "train_loss", "train_accuracy", "val_accuracy"]
        extra = sorted({k for h in self.history for k in h} - set(keys))
        cols = keys + extra
        lines = [f"stage {self.stage}", "  ".join(f"{c:>16}" for c in cols)]
        for h in self.history:
            cells = []
            for c in cols:
                v = h.get(c)
                cells.append(f"{v:>16.4f}" if isinstance(v, float) else f"{str(v):>16}")
            lines.append("  ".join(cells))
        lines.append(
            f"best epoch {self.best_epoch}  best val accuracy {self.best_val_accuracy}  "
            f"checkpoint {self.best_checkpoint}  {self.wall_seconds:.1f}s"
            + (f"  ERROR: {self.error}" if self.error else "")
        )
        return "\n".join(lines)


def _train(module, fingerprint, model_cfg: TrimodalConfig, train: DatasetManifest, val: DatasetManifest,
           stage_cfg: StageConfig, loss_params: FocalLossParams, store: FeatureStore, out_path=None) -> tuple[TrainReport, Checkpoint | None]:
    report = TrainReport(stage_cfg.stage)
    started = time.perf_counter()
    if stage_cfg.epochs == 0:
        report.error = "epochs=0: nothing was trained"
        return report, None
    unlabeled = [r.sample_id for r in train.records if r.label is None]
    if unlabeled:
        raise ValidationError(f"unlabeled training records: {unlabeled[:5]}")

    modalities = module_modalities(module)
    optimizer = torch.optim.AdamW(module.parameters(), lr=stage_cfg.effective_lr,
                                  weight_decay=stage_cfg.weight_decay)
    vote_cfg = VoteConfig(views=stage_cfg.val_views, base_seed=derive_seed(stage_cfg.seed, "validation"))
    weights = {"gold": 1.0, "pseudo": stage_cfg.pseudo_weight}
    best_state, best_acc = None, -1.0

    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(stage_cfg.seed, "dropout", stage_cfg.stage))
        for epoch in range(stage_cfg.epochs):
            module.train()
            items = [
                (r, view_seed(stage_cfg.seed, r.sample_id, v, epoch), weights[r.label_source])
                for r in train.records
                for v in range(stage_cfg.resample_views_per_epoch)
            ]
            order = rng("shuffle", stage_cfg.seed, stage_cfg.stage, epoch).permutation(len(items))
            items = [items[i] for i in order]
            total_loss, n_seen = 0.0, 0
            hits = {"gold": [0, 0], "pseudo": [0, 0]}
            for i in range(0, len(items), stage_cfg.batch_size):
                chunk = items[i: i + stage_cfg.batch_size]
                batch = collate(store.views(chunk, stage_cfg.workers), model_cfg, modalities)
                logits = module(batch)
                loss = focal_loss(logits, batch.labels, loss_params, batch.weights)
                optimizer.zero_grad(set_to_none=True)
                loss.backward()
                optimizer.step()
                total_loss += loss.item() * len(chunk)
                n_seen += len(chunk)
                pred = logits.argmax(dim=-1)
                for (rec, _, _), p, y in zip(chunk, pred.tolist(), batch.labels.tolist()):
                    hits[rec.label_source][0] += int(p == y)
                    hits[rec.label_source][1] += 1
            metrics, _ = evaluate(module, val, store, vote_cfg, workers=stage_cfg.workers)
            row = {
                "epoch": epoch,
                "train_loss": total_loss / n_seen,
                "train_accuracy": sum(h[0] for h in hits.values()) / n_seen,
                "val_accuracy": metrics.accuracy,
            }
            for src, (ok, n) in hits.items():
                if n and stage_cfg.stage == "finetune_full":
                    row[f"train_accuracy_{src}"] = ok / n
            report.history.append(row)
            if metrics.accuracy > best_acc:
                best_acc = metrics.accuracy
                best_state = copy.deepcopy(module.state_dict())
                report.best_epoch = epoch

    report.best_val_accuracy = best_acc
    module.load_state_dict(best_state)
    ckpt = checkpoint_from_module(module, fingerprint, stage_cfg.stage, report.best_epoch, best_acc, model_cfg)
    if out_path is not None:
        report.best_checkpoint = str(ckpt.save(out_path))
    report.wall_seconds = time.perf_counter() - started
    return report, ckpt


def fit_keypoint_standardization(branch, train: DatasetManifest, store: FeatureStore, seed) -> None:
    """One view per training record, drawn with a dedicated seed."""
    from hiddenemo.model import KeypointBranch

    if not isinstance(branch, KeypointBranch):
        return
    items = [(r, view_seed(derive_seed(seed, "standardize"), r.sample_id, 0), 1.0) for r in train.records]
    batch = collate(store.views(items), store.cfg, ("keypoint",))
    branch.fit_standardization(batch.keypoints)


def _resolve_val(dataset: DatasetManifest, val: DatasetManifest | None, stage_cfg: StageConfig):
    if val is not None:
        return dataset, val
    return split_train_val(dataset, stage_cfg.val_fraction, stage_cfg.seed)


def build_branch_classifier(model_cfg: TrimodalConfig, branch: str, seed, adjacencies=None) -> BranchClassifier:
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "init", branch))
        return BranchClassifier(model_cfg, branch, adjacencies)


def build_full_model(model_cfg: TrimodalConfig, seed, adjacencies=None) -> TrimodalModel:
    with torch.random.fork_rng():
        torch.manual_seed(derive_seed(seed, "init", "full"))
        return TrimodalModel(model_cfg, adjacencies)


def pretrain_branch(branch: str, dataset: DatasetManifest, model_cfg: TrimodalConfig, stage_cfg: StageConfig,
                    loss_params: FocalLossParams = FocalLossParams(), val: DatasetManifest | None = None,
                    adjacencies=None, store: FeatureStore | None = None, out_path=None):
    """Train one branch with a temporary head on gold labels; keep the best-validation state.

    Returns ``(TrainReport, Checkpoint | None, BranchClassifier)``.
    """
    if branch not in BRANCHES:
        raise ValidationError(f"unknown branch {branch!r}")
    if any(r.label is None for r in dataset.records):
        raise ValidationError("pretraining needs every record labeled")
    train, val = _resolve_val(dataset, val, stage_cfg)
    store = store or FeatureStore(model_cfg)
    module = build_branch_classifier(model_cfg, branch, stage_cfg.seed, adjacencies)
    fit_keypoint_standardization(module.branch, train, store, stage_cfg.seed)
    report, ckpt = _train(module, branch_fingerprint(model_cfg, branch), model_cfg, train, val, stage_cfg,
                          loss_params, store, out_path)
    return report, ckpt, module


def finetune_full(pretrained: dict[str, Checkpoint] | None, merged: DatasetManifest, model_cfg: TrimodalConfig,
                  stage_cfg: StageConfig, loss_params: FocalLossParams = FocalLossParams(),
                  val: DatasetManifest | None = None, adjacencies=None, store: FeatureStore | None = None,
                  out_path=None, allow_mismatch: bool = False):
    """Train the full model on gold + pseudo-labeled records.

    ``pretrained`` maps branch name to a stage-1 checkpoint; branches missing
    from it start from their initialization (``None`` trains from scratch).
    Returns ``(TrainReport, Checkpoint | None, TrimodalModel)``.
    """
    train, val = _resolve_val(merged, val, stage_cfg)
    store = store or FeatureStore(model_cfg)
    model = build_full_model(model_cfg, stage_cfg.seed, adjacencies)
    fit_keypoint_standardization(model.keypoint, train, store, stage_cfg.seed)
    for branch, ckpt in (pretrained or {}).items():
        load_branch_into(model, ckpt, branch, allow_mismatch)
    report, ckpt = _train(model, full_fingerprint(model_cfg), model_cfg, train, val, stage_cfg, loss_params,
                          store, out_path)
    return report, ckpt, model


def gradient_check_suite(threshold: float = 1e-4) -> dict:
    """Finite-difference checks over every trainable block and focal loss at float64."""
    from hiddenemo.encoders import (
        SPATIAL_KINDS,
        SpatialEncoder,
        SpatialEncoderConfig,
        TemporalEncoder,
        TemporalEncoderConfig,
        TextEncoder,
        TextEncoderConfig,
        gradient_check,
    )
    from hiddenemo.model import FusionHead
    from hiddenemo.topology import normalized_adjacency_from_edges

    gen = torch.Generator().manual_seed(1234)
    results = {}
    with torch.random.fork_rng():
        torch.manual_seed(1234)
        adj = normalized_adjacency_from_edges([(0, 1), (1, 2), (2, 3)], 4)
        for kind in SPATIAL_KINDS:
            cfg = SpatialEncoderConfig(kind=kind, node_feature_dim=2, hidden_dim=4, layer_count=2,
                                       frame_embedding_dim=3, attention_heads=1)
            enc = SpatialEncoder(4 if kind != "mlp" else 3, cfg, adj if kind != "mlp" else None)
            x = torch.randn(5, enc.n_nodes, 2, generator=gen, dtype=torch.float64)
            results[f"spatial_{kind}"] = gradient_check(enc, (x,))["max_rel_error"]
        tcfg = TemporalEncoderConfig(model_dim=8, layer_count=1, head_count=2, feedforward_dim=16,
                                     max_sequence_length=16, dropout_rate=0.0)
        temporal = TemporalEncoder(3, tcfg)
        x = torch.randn(2, 5, 3, generator=gen, dtype=torch.float64)
        results["temporal"] = gradient_check(temporal, (x,))["max_rel_error"]
        text_cfg = TextEncoderConfig(vocabulary_size=13, token_embedding_dim=8, layer_count=1, head_count=2,
                                     feedforward_dim=16, max_tokens=8, dropout_rate=0.0)
        text = TextEncoder(text_cfg)
        ids = torch.tensor([[1, 5, 7, 0, 0], [2, 3, 12, 4, 9]])
        results["text"] = gradient_check(text, (ids,))["max_rel_error"]
        fusion = FusionHead(6, "relu", 2)
        x = torch.randn(3, 6, generator=gen, dtype=torch.float64)
        results["fusion_head"] = gradient_check(fusion, (x,))["max_rel_error"]

    logits = torch.randn(6, 2, generator=gen, dtype=torch.float64, requires_grad=True)
    labels = torch.tensor([0, 1, 1, 0, 1, 1])

    class _Loss(torch.nn.Module):
        def forward(self, _):
            return focal_loss(logits, labels, FocalLossParams())

    results["focal_loss"] = gradient_check(_Loss(), (torch.zeros(1),), loss_fn=lambda out: out,
                                           extra_params=(logits,))["max_rel_error"]
    return {"errors": results, "threshold": threshold, "passed": all(v <= threshold for v in results.values())}
