"""Generate a synthetic scenario and poke at the files it produces.

Every capability in this package runs on feature maps, never on images,
so the synthetic generator is the quickest way to get a full scenario:
per-task clusters in feature space, normal train/test stacks, anomalous
test stacks with ground-truth masks, and a manifest tying it together.
"""

import tempfile
from pathlib import Path

from eclvad import SynthSpec, generate_synthetic, load_stack

out = Path(tempfile.mkdtemp(prefix="eclvad_demo_"))

spec = SynthSpec(
    num_tasks=3,
    d_per_layer=[6, 2],      # two layers, concatenated dim 8
    grid=(8, 8),
    normals_per_task=6,
    anomalies_per_task=2,
    cluster_separation=10.0,
    anomaly_offset=6.0,
    seed=42,
)
manifest = generate_synthetic(spec, out)

print(f"scenario written to {out}")
print(f"image size: {manifest.image_size}")
for t, task in enumerate(manifest.tasks):
    print(f"  {task.name}: {len(task.train)} train stacks, {len(task.test)} test stacks")

# stacks are plain binary files; each holds one record per layer
first = manifest.tasks[0].train[0]
stack = load_stack(out / first)
print(f"\nfirst train stack {stack.image_id!r}:")
for i, layer in enumerate(stack.layers):
    print(f"  layer {i}: {layer.channels}x{layer.height}x{layer.width}")

# anomalous test stacks carry a mask at image resolution
anomalous = [load_stack(out / p) for p in manifest.tasks[0].test]
anomalous = [s for s in anomalous if s.mask is not None]
print(f"\n{len(anomalous)} anomalous stacks in task 1;"
      f" first mask covers {int(anomalous[0].mask.sum())} pixels")
