# %% [markdown]
# # Keypoint features
#
# Pixel keypoints are normalized into the person box, then each keypoint gets
# its coordinates plus offsets to the same keypoint 8, 16 and 24 frames back.
# Frames before a lag are zero-filled. Sampling picks frames with a minimum gap.

# %%
import numpy as np

from hiddenemo.features import OffsetConfig, build_view, compute_offsets, normalize_frame, sample_frames

box = (10.0, 20.0, 220.0, 160.0)
px = np.zeros((137, 2))
px[1] = (120.0, 60.0)
print("normalized keypoint 1:", normalize_frame(px, box)[1])

# %% [markdown]
# A keypoint moving right at 0.01 per frame has offsets 0.08, 0.16, 0.24 at t=30.

# %%
T = 40
seq = np.full((T, 137, 2), 0.5)
seq[..., 0] += 0.01 * np.arange(T)[:, None]
print(compute_offsets(seq)[30, 0].round(4))

# %%
idx = sample_frames(10000, 800, 6, seed=0)
print("800 frames from 10000, smallest gap", np.diff(idx).min())

view = build_view(np.random.default_rng(0).random((600, 137, 2)), 128, OffsetConfig(), seed=1)
print({g: a.shape for g, a in view.groups.items()})
