import numpy as np
import pytest

from bacnn.data import HsiCube, LabelMap, extract_patches


def separable_scene(h=20, w=20, bands=8, labeled=40, seed=0):
    """Two-class scene whose class is written into two disjoint band groups."""
    rng = np.random.default_rng(seed)
    labels = np.zeros((h, w), dtype=np.int64)
    flat = rng.choice(h * w, labeled, replace=False)
    labels.flat[flat[: labeled // 2]] = 1
    labels.flat[flat[labeled // 2:]] = 2
    cube = 0.1 * rng.standard_normal((h, w, bands))
    half = bands // 2
    cube[..., :half] += np.where(labels == 1, 1.0, -1.0)[..., None]
    cube[..., half:] += np.where(labels == 2, 1.0, -1.0)[..., None]
    return HsiCube(cube), LabelMap(labels, 2)


@pytest.fixture
def scene():
    return separable_scene()


@pytest.fixture
def patchset(scene):
    cube, labels = scene
    return extract_patches(cube, labels, 15)


# labeled-pixel histogram of the 145x145 Indian Pines ground truth, classes 1..16
INDIAN_PINES_COUNTS = [46, 1428, 830, 237, 483, 730, 28, 478, 20, 972, 2455, 593, 205, 1265, 386, 93]


def indian_pines_like_labels(seed=0):
    """145x145 label map with the Indian Pines class histogram at random positions."""
    rng = np.random.default_rng(seed)
    grid = np.zeros(145 * 145, dtype=np.int64)
    pos = rng.permutation(grid.size)
    start = 0
    for cls, n in enumerate(INDIAN_PINES_COUNTS, start=1):
        grid[pos[start:start + n]] = cls
        start += n
    return LabelMap(grid.reshape(145, 145), 16)
