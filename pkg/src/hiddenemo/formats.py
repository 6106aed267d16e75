"""On-disk formats for externally produced feature streams.

Keypoints: ``.kp`` binary, an 8-byte header (4-byte magic ``b"KP37"`` then a
little-endian uint32 frame count ``T``) followed by ``T*137*2`` float32 values
row-major. A ``.csv`` alternative holds one frame per line with 274
comma-separated floats (x0, y0, x1, y1, ...).

Visual embeddings: ``.npy`` float32 array ``[T, width]``.

Text: plain UTF-8 text (tokenized by :func:`hiddenemo.encoders.tokenize`), or a
``.npy`` float32 vector holding a precomputed text embedding.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

N_KEYPOINTS = 137
KP_MAGIC = b"KP37"
_HEADER = struct.Struct("<4sI")


class FormatError(ValueError):
    pass


def write_keypoints(path, coords) -> None:
    coords = np.ascontiguousarray(coords, dtype="<f4")
    if coords.ndim != 3 or coords.shape[1:] != (N_KEYPOINTS, 2):
        raise FormatError(f"keypoint array must be [T, {N_KEYPOINTS}, 2], got {coords.shape}")
    path = Path(path)
    if path.suffix == ".csv":
        np.savetxt(path, coords.reshape(len(coords), -1), delimiter=",", fmt="%.9g")
        return
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(KP_MAGIC, len(coords)))
        fh.write(coords.tobytes())


def read_keypoints(path) -> np.ndarray:
    """Load a keypoint stream as a ``[T, 137, 2]`` float32 array."""
    path = Path(path)
    if path.suffix == ".csv":
        arr = np.loadtxt(path, delimiter=",", dtype=np.float32, ndmin=2)
        if arr.shape[1] != 2 * N_KEYPOINTS:
            raise FormatError(f"{path}: expected {2 * N_KEYPOINTS} columns, got {arr.shape[1]}")
        return arr.reshape(len(arr), N_KEYPOINTS, 2)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, n_frames = _HEADER.unpack_from(raw)
    if magic != KP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + n_frames * N_KEYPOINTS * 2 * 4
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for T={n_frames}, got {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size)
    return arr.reshape(n_frames, N_KEYPOINTS, 2).astype(np.float32)


def keypoint_frame_count(path) -> int:
    path = Path(path)
    if path.suffix == ".csv":
        with open(path) as fh:
            return sum(1 for line in fh if line.strip())
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
    if len(head) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, n_frames = _HEADER.unpack(head)
    if magic != KP_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    return n_frames


def write_visual(path, emb) -> None:
    emb = np.asarray(emb, dtype=np.float32)
    if emb.ndim != 2:
        raise FormatError(f"visual array must be [T, width], got {emb.shape}")
    np.save(path, emb, allow_pickle=False)


def read_visual(path) -> np.ndarray:
    arr = np.load(path, allow_pickle=False)
    if arr.ndim != 2:
        raise FormatError(f"{path}: visual array must be 2-D, got {arr.shape}")
    return arr.astype(np.float32, copy=False)


def visual_frame_count(path) -> int:
    arr = np.load(path, mmap_mode="r", allow_pickle=False)
    return int(arr.shape[0])


def read_text(path):
    """Return either a string or, for ``.npy`` files, a precomputed embedding vector."""
    path = Path(path)
    if path.suffix == ".npy":
        vec = np.load(path, allow_pickle=False)
        if vec.ndim != 1:
            raise FormatError(f"{path}: text embedding must be 1-D, got {vec.shape}")
        return vec.astype(np.float32, copy=False)
    return path.read_text(encoding="utf-8")
