"""Vote-based prediction over re-sampled views and evaluation metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from hiddenemo.batching import FeatureStore, collate, view_seed
from hiddenemo.datamodel import DatasetManifest, Label, SampleRecord, ValidationError
from hiddenemo.model import BranchClassifier, TrimodalModel


@dataclass(frozen=True)
class VoteConfig:
    views: int = 5
    tie_rule: str = "mean_probability"
    base_seed: int = 0

    def __post_init__(self):
        if self.views < 1:
            raise ValidationError("views must be >= 1")
        if self.tie_rule != "mean_probability":
            raise ValidationError(f"unknown tie_rule {self.tie_rule!r}")


@dataclass
class VoteStats:
    """Instrumentation: how often the tie rule decided a prediction."""

    tie_breaks: int = 0
    predictions: int = 0


def vote(win_probs, stats: VoteStats | None = None) -> tuple[Label, float]:
    """Majority vote over per-view win probabilities.

    A view votes ``win`` when its win probability is at least 0.5. An exact
    vote tie goes to ``win`` iff the mean win probability is at least 0.5.
    """
    p = np.asarray(win_probs, dtype=np.float64)
    if p.size == 0:
        raise ValidationError("no views to vote over")
    mean = float(p.mean())
    wins = int((p >= 0.5).sum())
    losses = p.size - wins
    if stats is not None:
        stats.predictions += 1
    if wins != losses:
        return (Label.WIN if wins > losses else Label.LOSS), mean
    if stats is not None:
        stats.tie_breaks += 1
    return (Label.WIN if mean >= 0.5 else Label.LOSS), mean


def module_modalities(module) -> tuple[str, ...]:
    if isinstance(module, BranchClassifier):
        return (module.name,)
    if isinstance(module, TrimodalModel):
        return ("keypoint", "visual", "text")
    return tuple(getattr(module, "modalities", ("keypoint", "visual", "text")))


@torch.no_grad()
def win_probabilities(module, records: list[SampleRecord], store: FeatureStore, base_seed, views: int,
                      batch_size: int = 16, workers: int = 1) -> np.ndarray:
    """``[len(records), views]`` softmax win probabilities, one column per re-sampled view."""
    was_training = module.training
    module.eval()
    modalities = module_modalities(module)
    dtype = next(module.parameters()).dtype
    out = np.zeros((len(records), views))
    try:
        for v in range(views):
            for i in range(0, len(records), batch_size):
                chunk = records[i: i + batch_size]
                items = [(r, view_seed(base_seed, r.sample_id, v), 1.0) for r in chunk]
                batch = collate(store.views(items, workers), store.cfg, modalities).to(dtype)
                probs = torch.softmax(module(batch), dim=-1)[:, Label.WIN.index]
                out[i: i + len(chunk), v] = probs.double().numpy()
    finally:
        module.train(was_training)
    return out


def predict_voted(module, record: SampleRecord, store: FeatureStore, vote_cfg: VoteConfig,
                  stats: VoteStats | None = None) -> tuple[Label, float]:
    probs = win_probabilities(module, [record], store, vote_cfg.base_seed, vote_cfg.views)[0]
    return vote(probs, stats)


@dataclass
class Prediction:
    sample_id: str
    label: Label | None
    prediction: Label
    mean_win_probability: float


@dataclass
class Metrics:
    accuracy: float
    precision: dict[str, float]
    recall: dict[str, float]
    confusion: list[list[int]]  # rows = true (loss, win), cols = predicted (loss, win)
    count: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "confusion": self.confusion,
            "count": self.count,
            **self.extra,
        }


def metrics_from_predictions(preds: list[Prediction]) -> Metrics:
    if not preds:
        raise ValidationError("cannot compute metrics on an empty prediction list")
    conf = np.zeros((2, 2), dtype=int)
    for p in preds:
        if p.label is None:
            raise ValidationError(f"sample {p.sample_id!r} has no label")
        conf[p.label.index, p.prediction.index] += 1
    precision, recall = {}, {}
    for lab in Label:
        k = lab.index
        col, row = conf[:, k].sum(), conf[k, :].sum()
        precision[lab.value] = float(conf[k, k] / col) if col else 0.0
        recall[lab.value] = float(conf[k, k] / row) if row else 0.0
    return Metrics(float(np.trace(conf) / conf.sum()), precision, recall, conf.tolist(), int(conf.sum()))


def predict_dataset(module, manifest: DatasetManifest, store: FeatureStore, vote_cfg: VoteConfig,
                    stats: VoteStats | None = None, batch_size: int = 16, workers: int = 1) -> list[Prediction]:
    probs = win_probabilities(module, manifest.records, store, vote_cfg.base_seed, vote_cfg.views,
                              batch_size, workers)
    preds = []
    for rec, row in zip(manifest.records, probs):
        lab, mean = vote(row, stats)
        preds.append(Prediction(rec.sample_id, rec.label, lab, mean))
    return preds


def evaluate(module, manifest: DatasetManifest, store: FeatureStore, vote_cfg: VoteConfig,
             stats: VoteStats | None = None, batch_size: int = 16, workers: int = 1):
    """Voted predictions for every record plus accuracy/precision/recall/confusion."""
    if len(manifest) == 0:
        raise ValidationError("cannot evaluate an empty dataset")
    unlabeled = [r.sample_id for r in manifest.records if r.label is None]
    if unlabeled:
        raise ValidationError(f"unlabeled records: {unlabeled[:5]}")
    preds = predict_dataset(module, manifest, store, vote_cfg, stats, batch_size, workers)
    return metrics_from_predictions(preds), preds


def write_predictions(preds: list[Prediction], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sample_id", "label", "prediction", "mean_win_probability"])
        for p in preds:
            w.writerow([p.sample_id, p.label.value if p.label else "none", p.prediction.value,
                        f"{p.mean_win_probability:.17g}"])


def read_predictions(path) -> list[Prediction]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [
        Prediction(
            r["sample_id"],
            None if r["label"] == "none" else Label(r["label"]),
            Label(r["prediction"]),
            float(r["mean_win_probability"]),
        )
        for r in rows
    ]
