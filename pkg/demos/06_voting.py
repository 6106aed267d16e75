# %% [markdown]
# # Voting inference
#
# Each sample is predicted several times, each time with freshly sampled
# frames. The majority wins; an even split goes to the mean win probability.

# %%
import tempfile

from hiddenemo.ablation import desk_config
from hiddenemo.batching import FeatureStore
from hiddenemo.datamodel import split_train_val
from hiddenemo.inference import VoteConfig, VoteStats, evaluate, vote
from hiddenemo.synthgen import SynthConfig, generate_dataset
from hiddenemo.training import StageConfig, pretrain_branch

print(vote([0.6, 0.4, 0.7]))
print(vote([0.8, 0.3]))

# %%
manifest, _ = generate_dataset(SynthConfig(sample_count=48, frames_min=300, frames_max=500),
                               tempfile.mkdtemp(prefix="demo-vote-"))
train, val = split_train_val(manifest, 0.3, seed=0)
cfg = desk_config(use_offsets=False)  # a weaker keypoint model, so votes can disagree
store = FeatureStore(cfg)
_, _, module = pretrain_branch("keypoint", train, cfg, StageConfig(stage="pretrain_keypoint", epochs=5), val=val,
                               store=store)
for views in (1, 3, 5):
    stats = VoteStats()
    metrics, _ = evaluate(module, val, store, VoteConfig(views=views, base_seed=7), stats)
    print(f"views={views}: accuracy {metrics.accuracy:.3f}, tie breaks {stats.tie_breaks}")
