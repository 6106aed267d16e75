# %% [markdown]
# # Weak supervision from a vision-language model
#
# The prompt asks the model to list action units, gather evidence for win and
# loss under prior rules, reflect, and then give two confidences. The higher
# confidence becomes the pseudo-label. Exact ties are left out.

# %%
from pathlib import Path

from hiddenemo.datamodel import DatasetManifest, Label, SampleRecord
from hiddenemo.weaksup import build_prompt, merge_datasets, parse_response_text, select_pseudo_label, simulate_pseudo_labels

print(build_prompt())

# %%
reply = """[ACTION_UNITS]
AU12 around 0:14, shoulders relaxed
[EVIDENCE_WIN]
- smiles while answering
[EVIDENCE_LOSS]
- brief frown at 0:40
[REFLECTION]
The face scratch at 0:22 is discounted under the sweat rule.
[CONFIDENCE]
win: 0.7
loss: 0.3
"""
resp = parse_response_text(reply, "clip01")
print(select_pseudo_label(resp))

# %% [markdown]
# Without a model at hand, pseudo-labels can be simulated by flipping true
# labels at a given rate, then merged with the gold set.

# %%
gold = DatasetManifest([SampleRecord(f"g{i}", Path("k"), Path("v"), Path("t"), Label.WIN, "gold", 10)
                        for i in range(4)], "train")
pool = DatasetManifest([SampleRecord(f"p{i}", Path("k"), Path("v"), Path("t"), None, "gold", 10)
                        for i in range(6)], "train")
truth = [Label.WIN, Label.LOSS, Label.WIN, Label.WIN, Label.LOSS, Label.WIN]
pseudo = simulate_pseudo_labels(truth, noise_rate=0.356, seed=0, sample_ids=pool.ids)
merged = merge_datasets(gold, pseudo, pool)
for r in merged.records:
    print(r.sample_id, r.label.value, r.label_source)
