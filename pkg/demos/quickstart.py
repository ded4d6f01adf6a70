"""Fit a label model to synthetic votes and compare with majority vote.

Run with ``python3 demos/quickstart.py``.
"""

import numpy as np

from weaklabel import LabelModel
from weaklabel.balance import estimate_class_balance, majority_vote_balance
from weaklabel.synthetic import independent_model, params_max_error

gtm = independent_model([0.85, 0.75, 0.7, 0.65, 0.6], balance=(0.75, 0.25), name="quickstart")
L, y = gtm.sample(50_000, seed=0)

model = LabelModel(gtm.task_graph, gtm.source_graph)
cb = estimate_class_balance(model, L)
print("class balance  true", gtm.balance, " tensor", cb.p.round(4),
      " majority vote", majority_vote_balance(L, gtm.fs).round(4))

model.fit(L, cb.p)
acc = [model.params.source_marginal(i)[np.arange(2), np.arange(2)] for i in range(gtm.m)]
for i, a in enumerate(acc):
    print(f"source {i + 1}: estimated P(correct | y) = {a.round(3)}")
print("max table error", f"{params_max_error(model.params, gtm.params()):.4f}")

pred = np.array([r.argmax for r in model.predict(L)])
votes = np.stack([(L.codes == k).sum(axis=1) for k in range(2)], axis=1)
mv = np.argmax(votes, axis=1)
print(f"accuracy  label model {np.mean(pred == y):.4f}  majority vote {np.mean(mv == y):.4f}")
