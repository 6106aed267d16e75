"""Sample records, manifests and stratified splitting.

A manifest is a JSON-lines file. Each line is one record::

    {"sample_id": "s000", "keypoint_path": "keypoints/s000.kp",
     "visual_path": "visual/s000.npy", "text_path": "text/s000.txt",
     "label": "win", "label_source": "gold", "frame_count": 812}

``label`` is ``"win"``, ``"loss"`` or ``"none"``. Paths are relative to the
manifest's directory. An optional first line ``{"split": "train"}`` records the
split name; without it the split defaults to the caller's choice.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hiddenemo import formats
from hiddenemo.seeding import rng


class ValidationError(ValueError):
    """Raised when inputs violate a documented contract."""


class IngestionError(ValidationError):
    """A manifest references a feature file that cannot be read."""

    def __init__(self, sample_id: str, message: str):
        super().__init__(f"sample {sample_id!r}: {message}")
        self.sample_id = sample_id


class Label(enum.Enum):
    LOSS = "loss"
    WIN = "win"

    @property
    def index(self) -> int:
        # class index used by logits: loss=0, win=1
        return 1 if self is Label.WIN else 0

    @classmethod
    def from_index(cls, i: int) -> "Label":
        return cls.WIN if int(i) == 1 else cls.LOSS

    def flipped(self) -> "Label":
        return Label.LOSS if self is Label.WIN else Label.WIN


SPLITS = ("train", "test", "synthetic")
LABEL_SOURCES = ("gold", "pseudo")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    keypoint_path: Path
    visual_path: Path
    text_path: Path
    label: Label | None
    label_source: str
    frame_count: int

    def __post_init__(self):
        if self.label_source not in LABEL_SOURCES:
            raise ValidationError(f"sample {self.sample_id!r}: unknown label_source {self.label_source!r}")
        if self.label_source == "pseudo" and self.label is None:
            raise ValidationError(f"sample {self.sample_id!r}: pseudo label_source requires a label")
        if int(self.frame_count) < 1:
            raise ValidationError(f"sample {self.sample_id!r}: frame_count must be positive")

    def to_json(self, base: Path | None = None) -> dict:
        def rel(p: Path) -> str:
            if base is None:
                return str(p)
            return os.path.relpath(p, base)

        return {
            "sample_id": self.sample_id,
            "keypoint_path": rel(self.keypoint_path),
            "visual_path": rel(self.visual_path),
            "text_path": rel(self.text_path),
            "label": self.label.value if self.label is not None else "none",
            "label_source": self.label_source,
            "frame_count": int(self.frame_count),
        }


def empirical_prior(records) -> float | None:
    labeled = [r for r in records if r.label is not None]
    if not labeled:
        return None
    return sum(r.label is Label.WIN for r in labeled) / len(labeled)


@dataclass
class DatasetManifest:
    records: list[SampleRecord]
    split: str = "train"
    class_prior: float | None = field(default=None)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValidationError(f"unknown split {self.split!r}")
        seen = set()
        for r in self.records:
            if r.sample_id in seen:
                raise ValidationError(f"duplicate sample_id {r.sample_id!r}")
            seen.add(r.sample_id)
        prior = empirical_prior(self.records)
        if self.class_prior is None:
            self.class_prior = prior
        elif prior is None or abs(self.class_prior - prior) > 1e-9:
            raise ValidationError(f"class_prior {self.class_prior} does not match empirical prior {prior}")

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def ids(self) -> list[str]:
        return [r.sample_id for r in self.records]

    def by_id(self, sample_id: str) -> SampleRecord:
        for r in self.records:
            if r.sample_id == sample_id:
                return r
        raise KeyError(sample_id)

    def labeled(self) -> bool:
        return all(r.label is not None for r in self.records)

    def subset(self, ids, split: str | None = None) -> "DatasetManifest":
        wanted = set(ids)
        return DatasetManifest([r for r in self.records if r.sample_id in wanted], split or self.split)


def _parse_label(value, sample_id) -> Label | None:
    if value in (None, "none"):
        return None
    try:
        return Label(value)
    except ValueError:
        raise ValidationError(f"sample {sample_id!r}: unknown label {value!r}") from None


def load_manifest(path, split: str | None = None, check_frames: bool = True) -> DatasetManifest:
    """Read a manifest, checking that every referenced file exists.

    With ``check_frames`` the keypoint and visual headers are read to confirm
    they agree with ``frame_count``. Files are opened read-only.
    """
    path = Path(path)
    base = path.parent
    records = []
    file_split = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: {exc}") from None
            if "sample_id" not in obj:
                if "split" in obj and not records and file_split is None:
                    file_split = obj["split"]
                    continue
                raise ValidationError(f"{path}:{lineno}: record without sample_id")
            sid = str(obj["sample_id"])
            missing = [k for k in ("keypoint_path", "visual_path", "text_path", "frame_count") if k not in obj]
            if missing:
                raise ValidationError(f"sample {sid!r}: missing fields {missing}")
            rec = SampleRecord(
                sample_id=sid,
                keypoint_path=base / obj["keypoint_path"],
                visual_path=base / obj["visual_path"],
                text_path=base / obj["text_path"],
                label=_parse_label(obj.get("label"), sid),
                label_source=obj.get("label_source", "gold"),
                frame_count=int(obj["frame_count"]),
            )
            for kind in ("keypoint_path", "visual_path", "text_path"):
                p = getattr(rec, kind)
                if not p.is_file():
                    raise IngestionError(sid, f"{kind} {p} does not exist")
            if check_frames:
                try:
                    nk = formats.keypoint_frame_count(rec.keypoint_path)
                    nv = formats.visual_frame_count(rec.visual_path)
                except (formats.FormatError, OSError, ValueError) as exc:
                    raise IngestionError(sid, str(exc)) from None
                if nk != rec.frame_count or nv != rec.frame_count:
                    raise IngestionError(
                        sid, f"frame_count {rec.frame_count} != keypoint {nk} / visual {nv} frames"
                    )
            records.append(rec)
    return DatasetManifest(records, split or file_split or "train")


def write_manifest(manifest: DatasetManifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    base = path.parent.resolve()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"split": manifest.split}) + "\n")
        for r in manifest.records:
            r = dataclasses.replace(
                r,
                keypoint_path=Path(r.keypoint_path).resolve(),
                visual_path=Path(r.visual_path).resolve(),
                text_path=Path(r.text_path).resolve(),
            )
            fh.write(json.dumps(r.to_json(base)) + "\n")


def split_train_val(manifest: DatasetManifest, val_fraction: float, seed: int):
    """Stratified, seed-deterministic split into (train, val).

    The validation size ``round(N * val_fraction)`` is apportioned across
    classes by largest remainder (ties broken by the seed), then clipped so
    both sides keep at least one record of every class with two or more
    members. Unlabeled records form their own stratum.
    """
    if not 0.0 < val_fraction < 1.0:
        raise ValidationError(f"val_fraction must be in (0, 1), got {val_fraction}")
    strata: dict[str, list[SampleRecord]] = {}
    for r in manifest.records:
        key = r.label.value if r.label is not None else "none"
        strata.setdefault(key, []).append(r)
    keys = sorted(strata)
    sizes = np.array([len(strata[k]) for k in keys])
    total_val = int(np.floor(sizes.sum() * val_fraction + 0.5))
    quotas = sizes * val_fraction
    counts = np.floor(quotas).astype(int)
    tiebreak = rng("split-remainder", seed).random(len(keys))
    order = sorted(range(len(keys)), key=lambda i: (-(quotas[i] - counts[i]), tiebreak[i]))
    for i in order[: max(total_val - counts.sum(), 0)]:
        counts[i] += 1
    for i, n in enumerate(sizes):
        if n >= 2:
            counts[i] = min(max(counts[i], 1), n - 1)

    val_ids = set()
    for key, k in zip(keys, counts):
        members = strata[key]
        perm = rng("split", seed, key).permutation(len(members))
        val_ids.update(members[i].sample_id for i in perm[:k])

    train = [r for r in manifest.records if r.sample_id not in val_ids]
    val = [r for r in manifest.records if r.sample_id in val_ids]
    if not train or not val:
        raise ValidationError(
            f"val_fraction {val_fraction} on {len(manifest)} records produces an empty split"
        )
    return DatasetManifest(train, manifest.split), DatasetManifest(val, manifest.split)
