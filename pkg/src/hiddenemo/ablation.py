"""Encoder-kind x offsets x training-strategy ablation tables.

Strategies:

* ``keypoint_only``: keypoint branch with a linear head, gold labels only.
* ``direct``: full model from scratch on gold labels.
* ``weak_sup``: full model from scratch on gold + pseudo-labels.
* ``weak_sup+offsets``: as ``weak_sup`` with offsets forced on.
* ``pretrain``: branches pretrained on gold, then fine-tuned on gold only.
* ``pretrain+weak_sup``: same pretrained branches, fine-tuned on gold + pseudo-labels.

Each seed regenerates the synthetic data, re-draws the gold/pool/val split,
the simulated pseudo-label noise, the initialization and the frame sampling.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hiddenemo.batching import FeatureStore
from hiddenemo.datamodel import DatasetManifest, ValidationError, split_train_val
from hiddenemo.encoders import SPATIAL_KINDS, SpatialEncoderConfig, TemporalEncoderConfig, TextEncoderConfig
from hiddenemo.features import SamplingConfig
from hiddenemo.inference import VoteConfig, evaluate
from hiddenemo.model import BRANCHES, TrimodalConfig
from hiddenemo.seeding import derive_seed
from hiddenemo.synthgen import SynthConfig, generate_dataset
from hiddenemo.training import FocalLossParams, StageConfig, finetune_full, pretrain_branch
from hiddenemo.weaksup import merge_datasets, simulate_pseudo_labels

STRATEGIES = ("keypoint_only", "direct", "weak_sup", "weak_sup+offsets", "pretrain", "pretrain+weak_sup")
OFFSET_CHOICES = ("on", "off")
REFERENCE_NOISE_RATE = 0.356  # 1 - pseudo-label accuracy of 0.644


def desk_config(kind: str = "mlp", use_offsets: bool = True, keypoint_frames: int = 128,
                visual_frames: int = 64, width: int = 32) -> TrimodalConfig:
    """A small model that trains on a laptop CPU in seconds per epoch."""
    temporal = TemporalEncoderConfig(model_dim=width, layer_count=1, head_count=4, feedforward_dim=2 * width,
                                     max_sequence_length=max(512, keypoint_frames, visual_frames))
    return TrimodalConfig(
        spatial=SpatialEncoderConfig(kind=kind, hidden_dim=width, frame_embedding_dim=width),
        keypoint_temporal=temporal,
        visual_temporal=temporal,
        text=TextEncoderConfig(token_embedding_dim=width, head_count=4, feedforward_dim=2 * width),
        sampling=SamplingConfig(keypoint_frames=keypoint_frames, visual_frames=visual_frames,
                                use_offsets=use_offsets),
        branch_dim=2 * width,
    )


@dataclass(frozen=True)
class AblationGrid:
    kinds: tuple[str, ...] = ("mlp",)
    offsets: tuple[str, ...] = ("on",)
    strategies: tuple[str, ...] = ("direct",)

    def __post_init__(self):
        for name, allowed in (("kinds", SPATIAL_KINDS), ("offsets", OFFSET_CHOICES), ("strategies", STRATEGIES)):
            values = tuple(getattr(self, name))
            object.__setattr__(self, name, values)
            if not values:
                raise ValidationError(f"ablation grid has no {name}")
            bad = [v for v in values if v not in allowed]
            if bad:
                raise ValidationError(f"unknown {name} {bad}; choose from {allowed}")

    def cells(self) -> list[tuple[str, str, str]]:
        out = []
        for strategy in self.strategies:
            for kind in self.kinds:
                for off in self.offsets:
                    cell = (kind, "on" if strategy == "weak_sup+offsets" else off, strategy)
                    if cell not in out:
                        out.append(cell)
        return out


@dataclass(frozen=True)
class AblationData:
    """Synthetic source (regenerated per seed) or a fixed labeled manifest."""

    synth: SynthConfig | None = field(default_factory=SynthConfig)
    manifest: DatasetManifest | None = None
    gold_count: int = 24
    pool_count: int = 40
    val_count: int = 16
    noise_rate: float = REFERENCE_NOISE_RATE
    work_dir: str | None = None

    def __post_init__(self):
        if (self.synth is None) == (self.manifest is None):
            raise ValidationError("give exactly one of synth or manifest")
        if min(self.gold_count, self.val_count) < 2 or self.pool_count < 0:
            raise ValidationError("need gold_count, val_count >= 2 and pool_count >= 0")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValidationError("noise_rate must be in [0, 1]")


@dataclass(frozen=True)
class AblationBudget:
    max_seconds: float | None = None
    seeds: tuple[int, ...] = (0, 1, 2)
    epochs: int = 15
    learning_rate: float = 1e-3
    views_per_epoch: int = 2
    batch_size: int = 8
    val_views: int = 1
    workers: int = 1


@dataclass
class AblationRow:
    kind: str
    offsets: str
    strategy: str
    accuracies: dict[int, float] = field(default_factory=dict)

    @property
    def mean(self) -> float:
        return float(np.mean(list(self.accuracies.values()))) if self.accuracies else float("nan")

    @property
    def std(self) -> float:
        return float(np.std(list(self.accuracies.values()))) if self.accuracies else float("nan")


@dataclass
class AblationTable:
    rows: list[AblationRow]
    seeds: tuple[int, ...]
    complete: bool = True
    wall_seconds: float = 0.0

    def row(self, kind, offsets, strategy) -> AblationRow:
        for r in self.rows:
            if (r.kind, r.offsets, r.strategy) == (kind, offsets, strategy):
                return r
        raise KeyError((kind, offsets, strategy))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["kind", "offsets", "strategy", "mean_accuracy", "std_accuracy", "seeds_done"]
                   + [f"seed_{s}" for s in self.seeds] + ["complete"])
        for r in self.rows:
            w.writerow([r.kind, r.offsets, r.strategy, f"{r.mean:.6f}", f"{r.std:.6f}", len(r.accuracies)]
                       + [f"{r.accuracies[s]:.6f}" if s in r.accuracies else "" for s in self.seeds]
                       + [int(len(r.accuracies) == len(self.seeds))])
        return buf.getvalue()

    def format(self) -> str:
        lines = [f"{'kind':<5} {'offsets':<7} {'strategy':<18} {'accuracy':>16}  seeds"]
        for r in self.rows:
            acc = f"{100 * r.mean:6.2f} ± {100 * r.std:5.2f}" if r.accuracies else "      n/a"
            lines.append(f"{r.kind:<5} {r.offsets:<7} {r.strategy:<18} {acc:>16}  {len(r.accuracies)}/{len(self.seeds)}")
        if not self.complete:
            lines.append("INCOMPLETE: budget exhausted before every cell ran on every seed")
        return "\n".join(lines)

    def write(self, out_dir) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.csv").write_text(self.to_csv())
        (out / "ablation.txt").write_text(self.format() + "\n")
        return out / "ablation.csv", out / "ablation.txt"


@dataclass
class SeedData:
    gold: DatasetManifest
    pool: DatasetManifest
    val: DatasetManifest
    merged: DatasetManifest


def prepare_seed_data(data: AblationData, seed: int, work_dir) -> SeedData:
    """Draw the gold / pool / validation split and the simulated pseudo-labels for one seed."""
    if data.synth is not None:
        total = data.gold_count + data.pool_count + data.val_count
        cfg = dataclasses.replace(data.synth, sample_count=total, seed=derive_seed(data.synth.seed, "ablation", seed))
        manifest, _ = generate_dataset(cfg, Path(work_dir) / f"seed{seed}")
    else:
        manifest = data.manifest
        total = len(manifest)
        if total < data.gold_count + data.pool_count + data.val_count:
            raise ValidationError("manifest smaller than gold_count + pool_count + val_count")
    rest, val = split_train_val(manifest, data.val_count / total, derive_seed(seed, "val-split"))
    if data.pool_count:
        gold, pool = split_train_val(rest, data.pool_count / len(rest), derive_seed(seed, "pool-split"))
    else:
        gold, pool = rest, DatasetManifest([], "train")
    gold = gold.subset(gold.ids[: data.gold_count])
    pseudo = simulate_pseudo_labels([r.label for r in pool.records], data.noise_rate,
                                    derive_seed(seed, "pseudo"), pool.ids)
    merged = merge_datasets(gold, pseudo, pool)
    return SeedData(gold, pool, val, merged)


def run_cell(kind: str, offsets: str, strategy: str, seed_data: SeedData, base_cfg: TrimodalConfig,
             budget: AblationBudget, seed: int, loss_params: FocalLossParams = FocalLossParams(),
             pretrained_cache: dict | None = None) -> float:
    cfg = dataclasses.replace(
        base_cfg,
        spatial=dataclasses.replace(base_cfg.spatial, kind=kind),
        sampling=dataclasses.replace(base_cfg.sampling, use_offsets=offsets == "on"),
    )
    store = FeatureStore(cfg)
    common = dict(learning_rate=budget.learning_rate, epochs=budget.epochs, batch_size=budget.batch_size,
                  seed=seed, resample_views_per_epoch=budget.views_per_epoch, val_views=budget.val_views,
                  workers=budget.workers)
    gold, val = seed_data.gold, seed_data.val

    if strategy == "keypoint_only":
        report, _, _ = pretrain_branch("keypoint", gold, cfg, StageConfig(stage="pretrain_keypoint", **common),
                                       loss_params, val=val, store=store)
        return report.best_val_accuracy

    train = gold if strategy in ("direct", "pretrain") else seed_data.merged
    pretrained = None
    stage = StageConfig(stage="finetune_full", lr_override=budget.learning_rate, **common)
    if strategy.startswith("pretrain"):
        key = (kind, offsets, seed)
        cache = pretrained_cache if pretrained_cache is not None else {}
        if key not in cache:
            cache[key] = {
                b: pretrain_branch(b, gold, cfg, StageConfig(stage=f"pretrain_{b}", **common), loss_params,
                                   val=val, store=store)[1]
                for b in BRANCHES
            }
        pretrained = cache[key]
        stage = StageConfig(stage="finetune_full", **common)
    report, _, _ = finetune_full(pretrained, train, cfg, stage, loss_params, val=val, store=store)
    return report.best_val_accuracy


def run_ablation(grid: AblationGrid, data: AblationData = AblationData(), budget: AblationBudget = AblationBudget(),
                 base_cfg: TrimodalConfig | None = None, loss_params: FocalLossParams = FocalLossParams(),
                 progress=None) -> AblationTable:
    """Run every grid cell on every seed, seed-major, until the time budget runs out.

    Accuracy is the best validation accuracy seen during training, voted
    with ``budget.val_views`` views.
    """
    if not isinstance(grid, AblationGrid):
        raise ValidationError("grid must be an AblationGrid")
    base_cfg = base_cfg or desk_config()
    cells = grid.cells()
    table = AblationTable([AblationRow(*c) for c in cells], tuple(budget.seeds))
    started = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="hiddenemo-ablation-") as tmp:
        work = Path(data.work_dir) if data.work_dir else Path(tmp)
        for seed in budget.seeds:
            seed_data = prepare_seed_data(data, seed, work)
            cache: dict = {}
            for row in table.rows:
                if budget.max_seconds is not None and time.perf_counter() - started > budget.max_seconds:
                    table.complete = False
                    table.wall_seconds = time.perf_counter() - started
                    return table
                acc = run_cell(row.kind, row.offsets, row.strategy, seed_data, base_cfg, budget, seed,
                               loss_params, cache)
                row.accuracies[seed] = acc
                if progress is not None:
                    progress(f"seed {seed} {row.kind}/{row.offsets}/{row.strategy}: {acc:.4f}")
    table.wall_seconds = time.perf_counter() - started
    return table
