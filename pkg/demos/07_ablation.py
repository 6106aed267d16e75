# %% [markdown]
# # Ablation grid
#
# Encoder kind x offset features x training strategy, averaged over seeds.
# A fresh synthetic set is drawn per seed. Pool labels are simulated at the
# given noise rate.

# %%
from hiddenemo.ablation import AblationBudget, AblationData, AblationGrid, desk_config, run_ablation
from hiddenemo.synthgen import SynthConfig

grid = AblationGrid(kinds=("mlp", "gcn"), offsets=("on", "off"), strategies=("keypoint_only",))
data = AblationData(synth=SynthConfig(frames_min=300, frames_max=500), gold_count=32, pool_count=0, val_count=16)
budget = AblationBudget(seeds=(0, 1), epochs=5, max_seconds=600)
table = run_ablation(grid, data, budget, desk_config(), progress=print)
print(table.format())
