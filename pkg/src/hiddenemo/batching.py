"""Loading feature files, drawing sampled views and collating batches."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from hiddenemo import formats
from hiddenemo.datamodel import DatasetManifest, SampleRecord
from hiddenemo.encoders import pad_tokens, tokenize
from hiddenemo.features import GROUP_NAMES, build_view, sample_frames
from hiddenemo.model import Batch, TrimodalConfig
from hiddenemo.seeding import derive_seed


@dataclass
class SampleView:
    sample_id: str
    groups: dict[str, np.ndarray]
    visual: np.ndarray
    text: list[int] | np.ndarray
    label: int | None
    weight: float = 1.0


class FeatureStore:
    """Caches each sample's raw streams in memory; reads are read-only."""

    def __init__(self, cfg: TrimodalConfig):
        self.cfg = cfg
        self._cache: dict[str, tuple] = {}

    def raw(self, record: SampleRecord):
        key = str(record.keypoint_path)
        hit = self._cache.get(key)
        if hit is None:
            coords = formats.read_keypoints(record.keypoint_path)
            visual = formats.read_visual(record.visual_path)
            text = formats.read_text(record.text_path)
            if isinstance(text, str):
                text = tokenize(text, self.cfg.text.vocabulary_size) or [1]
            hit = (coords, visual, text)
            self._cache[key] = hit
        return hit

    def view(self, record: SampleRecord, seed, weight: float = 1.0) -> SampleView:
        s = self.cfg.sampling
        coords, visual, text = self.raw(record)
        ft = build_view(coords, s.keypoint_frames, s.offsets, derive_seed(seed, "keypoints"))
        vidx = sample_frames(len(visual), s.visual_frames, s.visual_min_gap, derive_seed(seed, "visual"))
        return SampleView(
            sample_id=record.sample_id,
            groups={g: np.ascontiguousarray(a, dtype=np.float32) for g, a in ft.groups.items()},
            visual=visual[vidx],
            text=text,
            label=None if record.label is None else record.label.index,
            weight=weight,
        )

    def views(self, items, workers: int = 1) -> list[SampleView]:
        """Build views for ``(record, seed, weight)`` items, preserving order."""
        if workers <= 1:
            return [self.view(*it) for it in items]
        # warm the cache serially so threads only read
        for it in items:
            self.raw(it[0])
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda it: self.view(*it), items))


def collate(views: list[SampleView], cfg: TrimodalConfig, modalities=("keypoint", "visual", "text")) -> Batch:
    batch = Batch(sample_ids=[v.sample_id for v in views])
    if "keypoint" in modalities:
        batch.keypoints = {g: torch.from_numpy(np.stack([v.groups[g] for v in views])) for g in GROUP_NAMES}
    if "visual" in modalities:
        batch.visual = torch.from_numpy(np.stack([v.visual for v in views]))
    if "text" in modalities:
        if cfg.text_mode == "tokens":
            batch.text_ids, batch.text_valid = pad_tokens([v.text for v in views], cfg.text)
        else:
            batch.text_embedding = torch.from_numpy(np.stack([np.asarray(v.text, dtype=np.float32) for v in views]))
    if all(v.label is not None for v in views):
        batch.labels = torch.tensor([v.label for v in views], dtype=torch.long)
    batch.weights = torch.tensor([v.weight for v in views], dtype=torch.float32)
    return batch


def view_seed(base_seed, sample_id: str, view: int, epoch=None) -> int:
    if epoch is None:
        return derive_seed(base_seed, sample_id, view)
    return derive_seed(base_seed, epoch, sample_id, view)


def iter_eval_batches(store: FeatureStore, manifest: DatasetManifest, base_seed, view: int, batch_size: int,
                      modalities, workers: int = 1):
    records = manifest.records
    for i in range(0, len(records), batch_size):
        chunk = records[i: i + batch_size]
        views = store.views([(r, view_seed(base_seed, r.sample_id, view), 1.0) for r in chunk], workers)
        yield collate(views, store.cfg, modalities)
