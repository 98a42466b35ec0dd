"""
Age and gender from one embedding
=================================

In multi-task mode each backbone emits an 80-dim vector: the first 70
dimensions carry the age comparison, the last 10 separate genders. The
gender of a test image is the nearer of two class prototypes.
"""

import numpy as np

from compcnn import ComparatorBank, RunConfig, train_comparator_bank
from compcnn.data import synth_from_config
from compcnn.metrics import make_report

cfg = RunConfig(seed=0, multitask=True)
ds = synth_from_config(cfg)
train, test = ds.subset("train"), ds.subset("test")

bank = ComparatorBank.build(cfg, input_shape=train.inputs.shape[1:])
train_comparator_bank(bank, train.inputs, train.age_class, cfg, gender=train.gender)

report = make_report(bank.predict(test.inputs), test.ages, bank.predict_gender(test.inputs),
                     test.gender, t=1, method="multi-task comparators")
print(report.to_text())

# Distances from each test sample to the two prototypes
feats = bank.gender_features(test.inputs)
d = np.linalg.norm(feats[:, None, :] - bank.prototypes[None], axis=-1)
margin = np.abs(d[:, 0] - d[:, 1]) / d.max()
print(f"smallest relative prototype gap on test: {margin.min():.3f}")
