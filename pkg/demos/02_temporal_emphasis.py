"""The learnable temporal emphasis curve that rescales attention.

scale(R) = 1 / (1 + exp(a*R - c)) maps a time distance R (months before
the latest scan) to a multiplier in (0, 1). At R = 0 it never drops below
0.5, and it declines monotonically at a learnable slope `a` after a
learnable offset `c`. Each attention head owns its own (a, c), so heads
can specialize: sharp recency bias, gentle decline, or time-agnostic.
"""

import numpy as np

from tdvit.attention import TemParams, tem_scale

grid = np.linspace(0, 36, 10)

print("time distance (months):", "  ".join(f"{r:5.1f}" for r in grid))
for a, c, note in [
    (1.0, 6.0, "init: keeps ~6 recent months"),
    (3.0, 3.0, "sharp recency bias"),
    (0.3, 6.0, "gentle decline"),
    (1e-4, 2.0, "nearly time-agnostic"),
]:
    params = TemParams.from_values(a, c)
    vals = tem_scale(grid[None, :], params).data[0]
    print(f"a={a:<6g} c={c:<4g}", " ".join(f"{v:5.3f}" for v in vals), f"  # {note}")

print()
rng = np.random.default_rng(0)
checked = 0
for _ in range(1000):
    params = TemParams.from_values(rng.uniform(0.01, 8), rng.uniform(0.01, 12))
    vals = tem_scale(grid[None, :], params).data[0]
    assert vals[0] >= 0.5 and (np.diff(vals) <= 0).all() and ((0 < vals) & (vals < 1)).all()
    checked += 1
print(f"{checked} random parameter draws: scale(0) >= 0.5, strictly in (0,1), nonincreasing")
