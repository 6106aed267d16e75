"""Class-conditional synthetic trimodal datasets with injected micro-events.

Keypoints jitter around a per-sample rest pose (template + per-keypoint shape
noise, random scale and slow translation drift). Each sample gets
``event_count`` short events. During an event a random subset of the
class-biased group (win -> face, loss -> hands by default) drifts smoothly
along a class direction and back, peaking at ``event_magnitude``. Raw
coordinates barely move relative to the per-sample pose variation, while lag
offsets see the drift directly.

The visual stream is a slow AR(1) walk plus a class bump vector inside the
same windows; the text is drawn from a class-conditional unigram mixture.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from hiddenemo import formats
from hiddenemo.datamodel import DatasetManifest, Label, SampleRecord, ValidationError, write_manifest
from hiddenemo.features import GroupSpec
from hiddenemo.seeding import rng

MAX_EVENT_FRAMES = 12
MAX_LAG = 24


@dataclass(frozen=True)
class SynthConfig:
    sample_count: int = 80
    class_prior: float = 0.75
    frames_min: int = 600
    frames_max: int = 1200
    event_count: int = 8
    event_duration_frames: int = 12
    event_magnitude: float = 0.04
    event_keypoint_fraction: float = 0.5
    event_group_bias: dict = field(default_factory=lambda: {"win": "face", "loss": "hands"})
    shape_jitter: float = 0.03
    scale_jitter: float = 0.08
    drift_step: float = 0.0005
    noise_floor: float = 0.002
    visual_width: int = 768
    visual_magnitude: float = 3.0
    visual_noise: float = 0.05
    vocab_size: int = 64
    text_length: int = 48
    text_signal: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.class_prior < 1.0:
            raise ValidationError("class_prior must be in (0, 1)")
        if not 1 <= self.event_duration_frames <= MAX_EVENT_FRAMES:
            raise ValidationError(f"event_duration_frames must be in 1..{MAX_EVENT_FRAMES}")
        if self.frames_min < MAX_LAG or self.frames_max < self.frames_min:
            raise ValidationError(f"need {MAX_LAG} <= frames_min <= frames_max")
        if self.sample_count < 1 or self.event_count < 0:
            raise ValidationError("sample_count must be positive and event_count non-negative")
        span = self.frames_min - MAX_LAG - self.event_duration_frames
        if self.event_count and span < self.event_count * self.event_duration_frames:
            raise ValidationError("frames_min too short to hold event_count non-overlapping events")
        groups = GroupSpec().sizes()
        for cls, grp in self.event_group_bias.items():
            if cls not in ("win", "loss") or grp not in groups:
                raise ValidationError(f"bad event_group_bias entry {cls!r} -> {grp!r}")
        if not 0.0 < self.event_keypoint_fraction <= 1.0:
            raise ValidationError("event_keypoint_fraction must be in (0, 1]")
        if self.visual_width < 1 or self.vocab_size < 4 or self.text_length < 1:
            raise ValidationError("visual_width, vocab_size and text_length must be positive")
        if not 0.0 <= self.text_signal <= 1.0:
            raise ValidationError("text_signal must be in [0, 1]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclass
class SynthSample:
    record: SampleRecord
    events: list[tuple[int, int]]  # (start, end_exclusive)


# class drift directions in (x, y); unit length
_DIRECTIONS = {"win": np.array([0.0, -1.0]), "loss": np.array([1.0, 0.0])}


def _template(seed) -> np.ndarray:
    return rng("template", seed).uniform(0.25, 0.75, size=(formats.N_KEYPOINTS, 2))


def _event_windows(gen, n_frames, cfg: SynthConfig) -> list[tuple[int, int]]:
    if cfg.event_count == 0:
        return []
    D = cfg.event_duration_frames
    lo, hi = MAX_LAG, n_frames - D  # starts in [lo, hi]
    bounds = lo + ((hi - lo + 1) * np.arange(cfg.event_count + 1)) // cfg.event_count
    out, prev_end = [], lo
    for i in range(cfg.event_count):
        a = max(int(bounds[i]), prev_end)
        b = max(int(bounds[i + 1]) - D, a)
        start = int(gen.integers(a, b + 1))
        out.append((start, start + D))
        prev_end = start + D
    return out


def _bump(D: int) -> np.ndarray:
    # rises and falls within the window, zero just outside
    return np.sin(np.pi * np.arange(1, D + 1) / (D + 1))


def generate_keypoints(gen, label: Label, n_frames: int, events, cfg: SynthConfig, template) -> np.ndarray:
    K = formats.N_KEYPOINTS
    pose = template + gen.normal(0.0, cfg.shape_jitter, size=(K, 2))
    center = pose.mean(axis=0)
    scale = 1.0 + gen.uniform(-cfg.scale_jitter, cfg.scale_jitter)
    pose = center + scale * (pose - center) + gen.uniform(-0.05, 0.05, size=2)
    # mean-reverting translation drift
    steps = gen.normal(0.0, cfg.drift_step, size=(n_frames, 2))
    drift = lfilter([1.0], [1.0, -0.995], steps, axis=0)
    seq = pose[None] + drift[:, None, :] + gen.normal(0.0, cfg.noise_floor, size=(n_frames, K, 2))

    group = cfg.event_group_bias[label.value]
    sl = GroupSpec().slices()[group]
    members = np.arange(sl.start, sl.stop)
    n_move = max(1, int(round(cfg.event_keypoint_fraction * len(members))))
    direction = _DIRECTIONS[label.value]
    for start, end in events:
        subset = gen.choice(members, size=n_move, replace=False)
        disp = cfg.event_magnitude * _bump(end - start)[:, None] * direction[None, :]
        seq[start:end, subset, :] += disp[:, None, :]
    return np.clip(seq, 0.0, 1.0).astype(np.float32)


def generate_visual(gen, label: Label, n_frames: int, events, cfg: SynthConfig, class_vectors) -> np.ndarray:
    W = cfg.visual_width
    base = gen.normal(0.0, 0.1, size=W)
    walk = lfilter([1.0], [1.0, -0.98], gen.normal(0.0, cfg.visual_noise, size=(n_frames, W)), axis=0)
    out = base[None] + walk
    for start, end in events:
        out[start:end] += cfg.visual_magnitude * _bump(end - start)[:, None] * class_vectors[label.value][None]
    return out.astype(np.float32)


def generate_text(gen, label: Label, cfg: SynthConfig) -> str:
    V = cfg.vocab_size
    k = max(2, V // 8)
    class_words = {"win": np.arange(0, k), "loss": np.arange(k, 2 * k)}
    zipf = 1.0 / np.arange(1, V + 1)
    zipf /= zipf.sum()
    length = int(gen.integers(max(1, (3 * cfg.text_length) // 4), (5 * cfg.text_length) // 4 + 1))
    from_class = gen.random(length) < cfg.text_signal
    ids = np.where(from_class, gen.choice(class_words[label.value], size=length), gen.choice(V, size=length, p=zipf))
    return " ".join(f"w{i}" for i in ids)


def generate_dataset(cfg: SynthConfig, out_dir, id_prefix: str = "syn") -> tuple[DatasetManifest, list[SynthSample]]:
    """Write feature files plus ``manifest.jsonl``, ``events.jsonl`` and ``synth_config.json``.

    Sample ids are ``{id_prefix}0000``, ``{id_prefix}0001``, ...
    """
    out = Path(out_dir)
    for sub in ("keypoints", "visual", "text"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    template = _template(cfg.seed)
    cv = rng("class-vectors", cfg.seed).normal(size=(2, cfg.visual_width))
    cv /= np.linalg.norm(cv, axis=1, keepdims=True)
    # unit-RMS per dimension
    class_vectors = {"win": cv[0] * np.sqrt(cfg.visual_width), "loss": cv[1] * np.sqrt(cfg.visual_width)}

    samples = []
    for i in range(cfg.sample_count):
        gen = rng("synth-sample", cfg.seed, i)
        label = Label.WIN if gen.random() < cfg.class_prior else Label.LOSS
        n_frames = int(gen.integers(cfg.frames_min, cfg.frames_max + 1))
        events = _event_windows(gen, n_frames, cfg)
        sid = f"{id_prefix}{i:04d}"
        kp_path = out / "keypoints" / f"{sid}.kp"
        vis_path = out / "visual" / f"{sid}.npy"
        txt_path = out / "text" / f"{sid}.txt"
        formats.write_keypoints(kp_path, generate_keypoints(gen, label, n_frames, events, cfg, template))
        formats.write_visual(vis_path, generate_visual(gen, label, n_frames, events, cfg, class_vectors))
        txt_path.write_text(generate_text(gen, label, cfg) + "\n", encoding="utf-8")
        rec = SampleRecord(sid, kp_path, vis_path, txt_path, label, "gold", n_frames)
        samples.append(SynthSample(rec, events))

    manifest = DatasetManifest([s.record for s in samples], "synthetic")
    write_manifest(manifest, out / "manifest.jsonl")
    with open(out / "events.jsonl", "w") as fh:
        for s in samples:
            fh.write(json.dumps({"sample_id": s.record.sample_id, "events": s.events}) + "\n")
    (out / "synth_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return manifest, samples


def describe(manifest: DatasetManifest, bins: int = 10) -> dict:
    """Frame-count histogram and class balance."""
    counts = np.array([r.frame_count for r in manifest.records])
    if len(counts) == 0:
        raise ValidationError("empty manifest")
    lo, hi = int(counts.min()), int(counts.max())
    if lo == hi:
        hist, edges = np.array([len(counts)]), np.array([lo, hi])
    else:
        hist, edges = np.histogram(counts, bins=bins)
    labels = [r.label.value if r.label is not None else "none" for r in manifest.records]
    return {
        "sample_count": len(counts),
        "frames_min": lo,
        "frames_max": hi,
        "frames_mean": float(counts.mean()),
        "histogram": {"counts": hist.tolist(), "edges": [float(e) for e in edges]},
        "class_counts": {k: labels.count(k) for k in ("win", "loss", "none") if k in labels},
        "class_prior": manifest.class_prior,
    }


def format_description(desc: dict) -> str:
    lines = [
        f"samples: {desc['sample_count']}  frames: min {desc['frames_min']}  "
        f"max {desc['frames_max']}  mean {desc['frames_mean']:.1f}",
        "class counts: " + ", ".join(f"{k}={v}" for k, v in desc["class_counts"].items()),
        "frame-count histogram:",
    ]
    counts, edges = desc["histogram"]["counts"], desc["histogram"]["edges"]
    peak = max(counts) or 1
    for i, c in enumerate(counts):
        lo, hi = edges[i], edges[min(i + 1, len(edges) - 1)]
        lines.append(f"  [{lo:7.0f}, {hi:7.0f}] {c:4d} " + "#" * int(round(30 * c / peak)))
    return "\n".join(lines)
