"""Why uniform task averaging is biased, and what the fix looks like.

Task A has 100 samples around 0, task B a handful around 10.  Averaging
the two per-task means with equal weight lands near 5 no matter how lopsided
the sample counts are; the weighted fusion with mean-shift corrections
recovers the statistics of the pooled data exactly.
"""

import numpy as np

from eclvad import fuse_exact, fuse_legacy, start_exact, start_legacy
from eclvad.padim import MODE_FULL, fit
from eclvad.patchcore import PatchGrid


def grids(samples):
    return [PatchGrid(1, 1, 1, np.array([[s]], dtype=np.float32), f"s{i}")
            for i, s in enumerate(samples)]


rng = np.random.default_rng(1)
a = rng.normal(0.0, 1.0, size=100)
b = rng.normal(10.0, 1.0, size=4)

field_a = fit(grids(a), mode=MODE_FULL)
field_b = fit(grids(b), mode=MODE_FULL)

legacy = fuse_legacy(start_legacy(field_a), field_b, T=2)
exact = fuse_exact(start_exact(field_a), field_b)

pooled = np.concatenate([a, b])
joint_mean = pooled.mean()
joint_var = pooled.var() + 0.01  # population convention plus the ridge

print(f"task A: n={len(a)}, mean={a.mean():.3f}   task B: n={len(b)}, mean={b.mean():.3f}")
print(f"joint mean of all {len(pooled)} samples: {joint_mean:.4f}")
print(f"  legacy fused mean: {legacy.field.mean[0, 0]:.4f}   <- pulled to the midpoint")
print(f"  exact  fused mean: {exact.field.mean[0, 0]:.4f}   <- matches the pool")
print(f"joint variance: {joint_var:.4f}")
print(f"  legacy fused var: {legacy.field.cov[0, 0, 0]:.4f}")
print(f"  exact  fused var: {exact.field.cov[0, 0, 0]:.4f}")
print(f"\nexact-fusion error vs joint: "
      f"mean {abs(exact.field.mean[0, 0] - joint_mean):.2e}, "
      f"var {abs(exact.field.cov[0, 0, 0] - joint_var):.2e}")
