"""Keypoint feature engineering.

Coordinates are box-relative ratios in [0, 1]. Each keypoint's feature vector is
its (x, y) followed by the displacement from the same keypoint ``lag`` frames
earlier, for every configured lag::

    [x, y, x - x[t-8], y - y[t-8], x - x[t-16], y - y[t-16], x - x[t-24], y - y[t-24]]

Frames with ``t < lag`` get a zero displacement for that lag.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from hiddenemo.datamodel import ValidationError
from hiddenemo.formats import N_KEYPOINTS
from hiddenemo.seeding import rng

GROUP_NAMES = ("skeleton", "face", "hands")


@dataclass(frozen=True)
class OffsetConfig:
    lags: tuple[int, ...] = (8, 16, 24)
    missing_lag_policy: str = "zero_fill"

    def __post_init__(self):
        lags = tuple(int(l) for l in self.lags)
        object.__setattr__(self, "lags", lags)
        if any(l <= 0 for l in lags):
            raise ValidationError(f"lags must be positive, got {lags}")
        if any(b <= a for a, b in zip(lags, lags[1:])):
            raise ValidationError(f"lags must be strictly increasing, got {lags}")
        if self.missing_lag_policy != "zero_fill":
            raise ValidationError(f"unsupported missing_lag_policy {self.missing_lag_policy!r}")

    @property
    def feature_dim(self) -> int:
        return 2 + 2 * len(self.lags)


@dataclass(frozen=True)
class GroupSpec:
    """Inclusive index ranges of the three keypoint groups."""

    skeleton: tuple[int, int] = (0, 24)
    face: tuple[int, int] = (25, 94)
    hands: tuple[int, int] = (95, 136)

    def __post_init__(self):
        lo = 0
        for name in GROUP_NAMES:
            a, b = getattr(self, name)
            if a != lo or b < a:
                raise ValidationError(f"group {name} range {(a, b)} is not contiguous from {lo}")
            lo = b + 1
        if lo != N_KEYPOINTS:
            raise ValidationError(f"groups cover 0..{lo - 1}, expected 0..{N_KEYPOINTS - 1}")

    def slices(self) -> dict[str, slice]:
        return {name: slice(getattr(self, name)[0], getattr(self, name)[1] + 1) for name in GROUP_NAMES}

    def sizes(self) -> dict[str, int]:
        return {name: s.stop - s.start for name, s in self.slices().items()}


@dataclass
class FeatureTensor:
    """Sampled, per-group feature arrays for one view of one sample."""

    groups: dict[str, np.ndarray]
    sampled_indices: np.ndarray
    lags: tuple[int, ...] = field(default=(8, 16, 24))

    @property
    def n_frames(self) -> int:
        return len(self.sampled_indices)


def normalize_frame(coords_px, box) -> np.ndarray:
    """Map pixel coordinates to box-relative ratios, clamped to [0, 1].

    ``box`` is ``(x0, y0, width, height)`` in pixels.
    """
    x0, y0, w, h = (float(v) for v in box)
    if w <= 0 or h <= 0:
        raise ValidationError(f"box dimensions must be positive, got width={w}, height={h}")
    coords = np.asarray(coords_px, dtype=np.float64)
    if coords.shape != (N_KEYPOINTS, 2):
        raise ValidationError(f"expected {N_KEYPOINTS}x2 coordinates, got {coords.shape}")
    out = np.empty_like(coords)
    out[:, 0] = (coords[:, 0] - x0) / w
    out[:, 1] = (coords[:, 1] - y0) / h
    return np.clip(out, 0.0, 1.0)


def normalize_sequence(coords_px, boxes) -> np.ndarray:
    """Vectorized :func:`normalize_frame` over ``[T, 137, 2]`` coords and ``[T, 4]`` boxes."""
    coords = np.asarray(coords_px, dtype=np.float64)
    boxes = np.asarray(boxes, dtype=np.float64)
    if coords.ndim != 3 or coords.shape[1:] != (N_KEYPOINTS, 2) or boxes.shape != (len(coords), 4):
        raise ValidationError(f"shape mismatch: coords {coords.shape}, boxes {boxes.shape}")
    if np.any(boxes[:, 2:] <= 0):
        raise ValidationError("box dimensions must be positive")
    origin = boxes[:, None, :2]
    size = boxes[:, None, 2:]
    return np.clip((coords - origin) / size, 0.0, 1.0)


def offset_features_at(seq, indices, cfg: OffsetConfig = OffsetConfig()) -> np.ndarray:
    """Features for the frames in ``indices`` only: ``[len(indices), K, 2 + 2*len(lags)]``."""
    seq = np.asarray(seq)
    idx = np.asarray(indices, dtype=np.int64)
    cur = seq[idx]
    parts = [cur]
    for lag in cfg.lags:
        prev_idx = idx - lag
        valid = prev_idx >= 0
        diff = cur - seq[np.where(valid, prev_idx, 0)]
        diff[~valid] = 0
        parts.append(diff)
    return np.concatenate(parts, axis=-1)


def compute_offsets(seq, cfg: OffsetConfig = OffsetConfig()) -> np.ndarray:
    """Per-frame features for the whole sequence, ``[T, K, F]``."""
    seq = np.asarray(seq)
    if seq.ndim != 3 or len(seq) == 0:
        raise ValidationError(f"expected a non-empty [T, K, 2] sequence, got {seq.shape}")
    return offset_features_at(seq, np.arange(len(seq)), cfg)


def split_groups(features, spec: GroupSpec = GroupSpec()) -> dict[str, np.ndarray]:
    """Split the keypoint axis (second to last) into skeleton/face/hands streams."""
    features = np.asarray(features)
    if features.ndim < 2 or features.shape[-2] != N_KEYPOINTS:
        raise ValidationError(f"expected {N_KEYPOINTS} keypoints on axis -2, got shape {features.shape}")
    return {name: features[..., s, :] for name, s in spec.slices().items()}


def sample_frames(total_frames: int, n_samples: int, min_gap: int, seed) -> np.ndarray:
    """Draw ``n_samples`` ascending frame indices from ``range(total_frames)``.

    One index is drawn per equal-width stratum, uniformly among positions at
    least ``max(min_gap, 1)`` after the previous pick. This is the distribution
    rejection sampling within the stratum would give. When the video is too
    short the gap shrinks to ``total // n`` (at least 1); when it is shorter
    than ``n_samples`` indices are drawn with replacement and sorted.
    """
    total_frames = int(total_frames)
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    if total_frames < 1:
        raise ValidationError("total_frames must be >= 1")
    gen = rng("sample_frames", seed, total_frames, n_samples, min_gap)
    gap = max(int(min_gap), 1)
    if total_frames < n_samples * gap:
        gap = max(total_frames // n_samples, 1)
    if total_frames < n_samples:
        return np.sort(gen.integers(0, total_frames, size=n_samples))

    bounds = (np.arange(n_samples + 1) * total_frames) // n_samples
    out = np.empty(n_samples, dtype=np.int64)
    prev = -gap
    for i in range(n_samples):
        lo = max(int(bounds[i]), prev + gap)
        hi = int(bounds[i + 1])
        pick = int(gen.integers(lo, hi))
        out[i] = pick
        prev = pick
    return out


def build_view(coords, n_samples: int, cfg: OffsetConfig | None, seed, spec: GroupSpec = GroupSpec()) -> FeatureTensor:
    """Sample frames, compute features at those frames and split into groups.

    With ``cfg=None`` only the raw coordinates are used (offsets off, F=2).
    """
    coords = np.asarray(coords)
    idx = sample_frames(len(coords), n_samples, 0, seed)
    if cfg is None:
        feats = coords[idx]
        lags = ()
    else:
        feats = offset_features_at(coords, idx, cfg)
        lags = cfg.lags
    return FeatureTensor(split_groups(feats, spec), idx, lags)


@dataclass(frozen=True)
class SamplingConfig:
    """How one training/inference view of a sample is drawn."""

    keypoint_frames: int = 4000
    visual_frames: int = 800
    visual_min_gap: int = 6
    use_offsets: bool = True
    lags: tuple[int, ...] = (8, 16, 24)

    def __post_init__(self):
        object.__setattr__(self, "lags", tuple(int(l) for l in self.lags))
        if self.keypoint_frames < 1 or self.visual_frames < 1 or self.visual_min_gap < 0:
            raise ValidationError("sampling counts must be positive and min gap non-negative")
        OffsetConfig(self.lags)

    @property
    def offsets(self) -> OffsetConfig | None:
        return OffsetConfig(self.lags) if self.use_offsets else None

    @property
    def node_feature_dim(self) -> int:
        return 2 + 2 * len(self.lags) if self.use_offsets else 2
