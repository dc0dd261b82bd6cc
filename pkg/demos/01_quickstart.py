"""Train a band-attention network on a small synthetic scene and score it.

Run: python demos/01_quickstart.py
"""

import numpy as np

from _scene import informative_scene
from bacnn import NetworkSpec, TrainConfig, build, evaluate, extract_patches, normalize_bands, split_fraction, train
from bacnn.seeding import stream

cube, labels = informative_scene()
patches = extract_patches(normalize_bands(cube), labels, size=15)
train_set, test_set = split_fraction(patches, 0.3, stream(0, "split"))
print(f"{len(train_set)} training and {len(test_set)} test patches, {patches.bands} bands")

spec = NetworkSpec("bam_cm", num_classes=labels.k, bands=patches.bands)
net = build(spec, stream(0, "init"))
print(f"{net.param_count()} trainable parameters")

result = train(net, train_set, TrainConfig(epochs=30, batch_size=32, lr=1e-3),
               on_epoch=lambda e, loss, acc: e % 5 == 0 and print(f"epoch {e:3d}  loss {loss:.4f}  train acc {acc:.3f}"))

_, report = evaluate(net, test_set)
print(f"OA {report.oa:.3f}  AA {report.aa:.3f}  kappa {report.kappa:.3f}")

# the band mask the attention head assigns to test patches
weights = net.mask(test_set.patches(np.arange(len(test_set))), "eval").values.mean(axis=0)
print("mean band weights:", np.round(weights, 3))
