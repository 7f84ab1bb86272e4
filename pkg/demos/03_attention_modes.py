"""Standard vs time-aware self-attention on a two-frame toy sequence.

The time-aware head gates query-key logits through ReLU (so scaling always
*reduces* attention) and multiplies each query row by the emphasis value of
its frame's age. Watch the earlier frame's token lose influence as the gap
between scans grows; the latest frame's row is never scaled down.
"""

import numpy as np

from tdvit.attention import HeadWeights, TemParams, attention_head_standard, \
    attention_head_time_aware
from tdvit.embedding import rel_time_matrix
from tdvit.tensor import Tensor

rng = np.random.default_rng(3)
dim, d = 8, 4
w = HeadWeights(
    Tensor(rng.normal(size=(dim, d)) * 0.6, requires_grad=True),
    Tensor(rng.normal(size=(dim, d)) * 0.6, requires_grad=True),
    Tensor(rng.normal(size=(dim, d)) * 0.6, requires_grad=True),
)
tem = TemParams.from_values(a=1.0, c=6.0)
tokens = rng.normal(size=(2, dim))  # token 0 = earlier scan, token 1 = latest

std = attention_head_standard(tokens, w).data
print("standard head output (time-blind):")
print(np.array2string(std, precision=3))

print("\ntime-aware head output as the inter-scan gap grows:")
for gap in (1.0, 6.0, 12.0, 36.0):
    rel = rel_time_matrix([0.0, gap], 1)
    out = attention_head_time_aware(tokens, w, tem, rel).data
    drift = np.abs(out[0] - std[0]).max()
    print(f"gap {gap:5.1f} months: row0 {np.array2string(out[0], precision=3)}"
          f"   |delta vs standard| {drift:.3f}")

print("\nwith a near-infinite slope the stale token's logits vanish and its")
print("attention row becomes uniform (the mean of the value rows):")
sharp = TemParams.from_values(a=50.0, c=1e-9)
rel = rel_time_matrix([0.0, 12.0], 1)
out = attention_head_time_aware(tokens, w, sharp, rel).data
v = tokens @ w.w_v.data
print("row0:", np.array2string(out[0], precision=4))
print("mean of value rows:", np.array2string(v.mean(axis=0), precision=4))
