# %% [markdown]
# # Two-stage training
#
# Stage 1 trains each branch (keypoint, visual, text) alone with a temporary
# head. Stage 2 loads the branches into the full model, fuses them and
# fine-tunes at a tenth of the learning rate. Focal loss handles the 3:1 prior.

# %%
import tempfile

from hiddenemo.ablation import desk_config
from hiddenemo.batching import FeatureStore
from hiddenemo.datamodel import split_train_val
from hiddenemo.synthgen import SynthConfig, generate_dataset
from hiddenemo.training import StageConfig, finetune_full, pretrain_branch

manifest, _ = generate_dataset(SynthConfig(sample_count=48, frames_min=300, frames_max=500),
                               tempfile.mkdtemp(prefix="demo-train-"))
train, val = split_train_val(manifest, 0.25, seed=0)
cfg = desk_config()
store = FeatureStore(cfg)

ckpts = {}
for branch in ("keypoint", "visual", "text"):
    report, ckpts[branch], _ = pretrain_branch(branch, train, cfg, StageConfig(stage=f"pretrain_{branch}", epochs=6),
                                               val=val, store=store)
    print(f"{branch:<8} best val accuracy {report.best_val_accuracy:.3f} at epoch {report.best_epoch}")

# %%
report, ckpt, model = finetune_full(ckpts, train, cfg, StageConfig(stage="finetune_full", epochs=4), val=val,
                                    store=store)
print(report.summary_table())
