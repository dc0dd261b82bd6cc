"""Synthetic scene shared by the demos: class regions, each bright in its own bands."""

import numpy as np

from bacnn.data import HsiCube, LabelMap


def informative_scene(h=32, w=32, bands=12, classes=3, labeled=180, seed=0):
    """Vertical strips of ``classes`` fields; field ``k`` is raised in bands ``2k`` and ``2k+1``.

    Only ``labeled`` random pixels carry a label, the way ground truth
    covers part of a real scene.
    """
    rng = np.random.default_rng(seed)
    field = np.minimum(np.arange(w) * classes // w, classes - 1)
    field = np.broadcast_to(field, (h, w))
    cube = rng.standard_normal((h, w, bands))
    for k in range(classes):
        cube[field == k, 2 * k:2 * k + 2] += 1.0
    labels = np.zeros(h * w, dtype=np.int64)
    pos = rng.choice(h * w, labeled, replace=False)
    labels[pos] = field.ravel()[pos] + 1
    return HsiCube(cube), LabelMap(labels.reshape(h, w), classes)
