"""Trimodal weakly-supervised hidden-emotion recognition on micro-gesture keypoints.

Submodules:

- ``datamodel``: labels, manifests, stratified splits
- ``features``: keypoint normalization, lag offsets, group split, frame sampling
- ``topology``: keypoint graphs and normalized adjacency
- ``encoders``: spatial (mlp/gcn/gat/gin), temporal and text encoders, gradient checks
- ``model``: branches, residual fusion, checkpoints
- ``training``: focal loss, stage-1 pretraining, stage-2 fine-tuning
- ``weaksup``: prompt assembly, VLM response parsing, pseudo-labels
- ``inference``: voting prediction, metrics, ablation harness
- ``synthgen``: synthetic micro-gesture datasets
- ``cli``: ``hiddenemo`` command line front-end
"""

from hiddenemo.datamodel import Label, SampleRecord, DatasetManifest, load_manifest, write_manifest, split_train_val

__version__ = "0.1.0"

__all__ = [
    "Label",
    "SampleRecord",
    "DatasetManifest",
    "load_manifest",
    "write_manifest",
    "split_train_val",
]
