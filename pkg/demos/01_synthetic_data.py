# %% [markdown]
# # Synthetic trimodal interviews
#
# The generator writes keypoint sequences, frame-level visual vectors and a
# transcript per sample. Each sample carries a few short events (at most 12
# frames) whose direction and keypoint group depend on the win/loss label.

# %%
import tempfile
from pathlib import Path

import numpy as np

from hiddenemo import formats
from hiddenemo.features import compute_offsets
from hiddenemo.synthgen import SynthConfig, describe, format_description, generate_dataset

out = Path(tempfile.mkdtemp(prefix="demo-synth-"))
cfg = SynthConfig(sample_count=24, frames_min=300, frames_max=500, visual_width=64, seed=3)
manifest, samples = generate_dataset(cfg, out)
print(format_description(describe(manifest)))

# %% [markdown]
# Events are recorded next to the data, so we can look at one directly.

# %%
s = samples[0]
kp = formats.read_keypoints(s.record.keypoint_path)
print(s.record.sample_id, s.record.label.value, "frames", kp.shape[0], "events", s.events)
a, b = s.events[0]
motion = np.abs(compute_offsets(kp)[:, :, 2:4]).sum(axis=(1, 2))
print(f"mean |lag-8 offset| inside the first event {motion[a:b + 8].mean():.4f}, "
      f"over the whole clip {motion.mean():.4f}")

# %%
print(s.record.text_path.read_text()[:120], "...")
print("visual", formats.read_visual(s.record.visual_path).shape)
