# %% [markdown]
# # Spatial and temporal encoders
#
# Each frame's keypoint group is embedded by an MLP or a graph network over the
# face/hand/body topology. A transformer then pools the frame embeddings.

# %%
import torch

from hiddenemo.encoders import SPATIAL_KINDS, SpatialEncoder, SpatialEncoderConfig, TemporalEncoder, TemporalEncoderConfig
from hiddenemo.topology import default_adjacencies

adj = default_adjacencies()
print({g: a.matrix.shape for g, a in adj.items()})

torch.manual_seed(0)
frames = torch.randn(32, 70, 8)  # 32 frames of the face group, 8 features per keypoint
for kind in SPATIAL_KINDS:
    cfg = SpatialEncoderConfig(kind=kind, node_feature_dim=8, hidden_dim=16, frame_embedding_dim=24)
    enc = SpatialEncoder(70, cfg, adj["face"] if kind != "mlp" else None)
    n_params = sum(p.numel() for p in enc.parameters())
    print(f"{kind:<4} frame embeddings {tuple(enc(frames).shape)}  parameters {n_params}")

# %% [markdown]
# The temporal encoder adds sinusoidal positions and mean-pools over valid frames.

# %%
temporal = TemporalEncoder(24, TemporalEncoderConfig(model_dim=32, layer_count=1, head_count=4,
                                                     feedforward_dim=64, max_sequence_length=256)).eval()
x = torch.randn(1, 32, 24)
print("pooled", tuple(temporal(x).shape))
print("order matters:", not torch.allclose(temporal(x), temporal(x.flip(1))))
