import numpy as np
import pytest
import torch
from torch import nn

from conftest import tiny_config
from hiddenemo.batching import FeatureStore, collate, view_seed
from hiddenemo.datamodel import DatasetManifest, Label, ValidationError
from hiddenemo.inference import (
    Prediction,
    VoteConfig,
    VoteStats,
    evaluate,
    metrics_from_predictions,
    predict_dataset,
    read_predictions,
    vote,
    write_predictions,
)
from hiddenemo.model import BranchClassifier


class ConstantWin(nn.Module):
    modalities = ("text",)

    def __init__(self):
        super().__init__()
        self.dummy = nn.Parameter(torch.zeros(1))

    def forward(self, batch):
        return torch.tensor([[0.0, 1.0]]).expand(batch.text_ids.shape[0], 2) + 0 * self.dummy


def test_vote_majority_example():
    stats = VoteStats()
    lab, mean = vote([0.6, 0.4, 0.7], stats)
    assert lab is Label.WIN and mean == pytest.approx(1.7 / 3)
    assert stats.tie_breaks == 0 and stats.predictions == 1


def test_vote_tie_uses_mean():
    stats = VoteStats()
    assert vote([0.8, 0.3], stats)[0] is Label.WIN  # mean 0.55
    assert vote([0.6, 0.2], stats)[0] is Label.LOSS  # mean 0.40
    assert stats.tie_breaks == 2


def test_vote_unanimous_never_breaks_ties():
    stats = VoteStats()
    for probs in ([0.9] * 5, [0.1] * 5, [0.5, 0.51, 0.99]):
        vote(probs, stats)
    assert stats.tie_breaks == 0 and stats.predictions == 3


def test_vote_threshold_and_empty():
    assert vote([0.5])[0] is Label.WIN
    with pytest.raises(ValidationError):
        vote([])
    with pytest.raises(ValidationError):
        VoteConfig(views=0)


def test_single_view_matches_direct_forward(tiny_dataset):
    manifest = tiny_dataset[0]
    cfg = tiny_config()
    torch.manual_seed(0)
    module = BranchClassifier(cfg, "keypoint").eval()
    store = FeatureStore(cfg)
    preds = predict_dataset(module, manifest, store, VoteConfig(views=1, base_seed=9))
    items = [(r, view_seed(9, r.sample_id, 0), 1.0) for r in manifest.records]
    with torch.no_grad():
        probs = torch.softmax(module(collate(store.views(items), cfg, ("keypoint",))), -1)[:, 1].numpy()
    for p, q in zip(preds, probs):
        assert abs(p.mean_win_probability - q) <= 1e-6
        assert p.prediction is (Label.WIN if q >= 0.5 else Label.LOSS)


def test_constant_win_metrics():
    preds = [Prediction(f"s{i}", Label.WIN if i < 30 else Label.LOSS, Label.WIN, 0.9) for i in range(40)]
    m = metrics_from_predictions(preds)
    assert m.accuracy == 0.75
    assert m.recall == {"loss": 0.0, "win": 1.0}
    assert m.precision["win"] == 0.75 and m.precision["loss"] == 0.0
    assert m.confusion == [[0, 10], [0, 30]]


def test_constant_win_evaluate_equals_prior(tiny_dataset):
    manifest = tiny_dataset[0]
    m, preds = evaluate(ConstantWin(), manifest, FeatureStore(tiny_config()), VoteConfig(views=3))
    assert m.accuracy == pytest.approx(manifest.class_prior)
    assert m.recall["loss"] == 0.0
    # recount from the prediction list
    assert sum(p.label is p.prediction for p in preds) / len(preds) == m.accuracy


def test_evaluate_errors(tiny_dataset):
    import dataclasses

    manifest = tiny_dataset[0]
    store = FeatureStore(tiny_config())
    with pytest.raises(ValidationError):
        evaluate(ConstantWin(), DatasetManifest([], "test"), store, VoteConfig())
    recs = [dataclasses.replace(manifest.records[0], label=None)]
    with pytest.raises(ValidationError):
        evaluate(ConstantWin(), DatasetManifest(recs, "test"), store, VoteConfig())


def test_predictions_csv_round_trip(tmp_path):
    preds = [Prediction("a", Label.WIN, Label.LOSS, 0.1234567890123), Prediction("b", None, Label.WIN, 2 / 3)]
    write_predictions(preds, tmp_path / "p.csv")
    assert read_predictions(tmp_path / "p.csv") == preds
