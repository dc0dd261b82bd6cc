"""Convert the public .mat distributions of Indian Pines / KSC to HSC1 + LBL1.

Needs scipy (not a bacnn dependency). Example:

    python demos/convert_mat.py Indian_pines_corrected.mat Indian_pines_gt.mat indian
    export BACNN_INDIAN_PINES_CUBE=$PWD/indian.hsc BACNN_INDIAN_PINES_LABELS=$PWD/indian.lbl
"""

import sys

import numpy as np
from scipy.io import loadmat

from bacnn.data import HsiCube, LabelMap, save_cube, save_labels


def only_array(path):
    arrays = [v for k, v in loadmat(path).items() if not k.startswith("__")]
    if len(arrays) != 1:
        raise SystemExit(f"{path}: expected one array, found {len(arrays)}")
    return arrays[0]


def main(cube_mat, labels_mat, stem):
    cube = only_array(cube_mat).astype(np.float64)
    labels = only_array(labels_mat).astype(np.int64)
    save_cube(HsiCube(cube), f"{stem}.hsc")
    save_labels(LabelMap(labels, int(labels.max())), f"{stem}.lbl")
    print(f"{stem}.hsc: {cube.shape}, {stem}.lbl: {int((labels > 0).sum())} labeled pixels, {labels.max()} classes")


if __name__ == "__main__":
    if len(sys.argv) != 4:
        raise SystemExit(__doc__)
    main(*sys.argv[1:])
