import math

import numpy as np
import pytest

from conftest import INDIAN_PINES_COUNTS, indian_pines_like_labels
from bacnn.data import (HsiCube, LabelMap, PatchSet, check_pair, extract_patches, indian_pines_train_count,
                        load_cube, load_labels, normalize_bands, replicate_minority, save_cube, save_labels,
                        split_fraction, split_indian_pines, subsample_per_class)
from bacnn.errors import ContractError, DataError, FormatError


def fixture_cube():
    # value encodes its own index: 100*row + 10*col + band
    r, c, b = np.meshgrid(np.arange(4), np.arange(4), np.arange(3), indexing="ij")
    return HsiCube((100 * r + 10 * c + b).astype(np.float64))


def test_cube_round_trip(tmp_path):
    cube = HsiCube(np.random.default_rng(0).standard_normal((5, 6, 7)).astype(np.float32).astype(np.float64))
    save_cube(cube, tmp_path / "c.hsc")
    np.testing.assert_array_equal(load_cube(tmp_path / "c.hsc").values, cube.values)


def test_labels_round_trip(tmp_path):
    lab = LabelMap(np.random.default_rng(0).integers(0, 4, (5, 6)), 3)
    save_labels(lab, tmp_path / "l.lbl")
    back = load_labels(tmp_path / "l.lbl")
    np.testing.assert_array_equal(back.labels, lab.labels)
    assert back.k == 3


def test_fixture_values_at_known_indices(tmp_path):
    save_cube(fixture_cube(), tmp_path / "f.hsc")
    raw = (tmp_path / "f.hsc").read_bytes()
    header, payload = raw.split(b"\n", 1)
    assert header == b"HSC1 4 4 3"
    flat = np.frombuffer(payload, "<f4")
    # band-interleaved by pixel: (row, col, band) -> (row*4 + col)*3 + band
    assert flat[(2 * 4 + 1) * 3 + 2] == 212
    v = load_cube(tmp_path / "f.hsc").values
    assert v[3, 0, 1] == 301 and v[0, 3, 0] == 30


def test_short_payload_is_format_error(tmp_path):
    p = tmp_path / "short.hsc"
    p.write_bytes(b"HSC1 145 145 200\n" + b"\0" * 1000)
    with pytest.raises(FormatError):
        load_cube(p)


def test_bad_magic_and_label_range(tmp_path):
    (tmp_path / "x").write_bytes(b"XXXX 1 1 1\n\0\0\0\0")
    with pytest.raises(FormatError):
        load_cube(tmp_path / "x")
    (tmp_path / "l").write_bytes(b"LBL1 1 2 3\n" + np.array([1, 4], "<u2").tobytes())
    with pytest.raises(FormatError):
        load_labels(tmp_path / "l")


def test_pair_extent_mismatch():
    with pytest.raises(FormatError):
        check_pair(HsiCube(np.zeros((4, 4, 2))), LabelMap(np.zeros((4, 5), int), 1))


def test_normalize_examples():
    cube = HsiCube(np.stack([np.full((1, 2), 7.0), np.array([[1.0, 3.0]])], axis=-1))
    out = normalize_bands(cube).values
    np.testing.assert_array_equal(out[..., 0], 0.0)
    np.testing.assert_allclose(out[0, :, 1], [-1 / (1 + 1e-8), 1 / (1 + 1e-8)], rtol=1e-15)


def test_normalize_idempotent():
    cube = HsiCube(np.random.default_rng(0).standard_normal((6, 5, 4)) * 30 + 5)
    once = normalize_bands(cube)
    np.testing.assert_allclose(normalize_bands(once).values, once.values, atol=1e-6)


def test_normalize_from_selected_pixels():
    cube = HsiCube(np.arange(8.0).reshape(2, 2, 2))
    out = normalize_bands(cube, np.array([[0, 0], [1, 1]])).values
    # band 0 stats from values 0 and 6
    np.testing.assert_allclose(out[0, 0, 0], -1 / (1 + 1e-8 / 3), rtol=1e-12)


def test_patch_count_and_order():
    labels = np.zeros((4, 4), int)
    labels[0, 0], labels[2, 3], labels[1, 1] = 1, 2, 1
    ps = extract_patches(fixture_cube(), LabelMap(labels, 2), 3)
    assert len(ps) == 3
    np.testing.assert_array_equal(ps.coords, [[0, 0], [1, 1], [2, 3]])
    np.testing.assert_array_equal(ps.labels, [0, 0, 1])


def test_corner_patch_reflection():
    labels = np.zeros((4, 4), int)
    labels[0, 0] = 1
    size = 5
    ps = extract_patches(fixture_cube(), LabelMap(labels, 1), size)
    patch = ps.patch_array()[0]
    reflect = lambda i, n: -i if i < 0 else (2 * (n - 1) - i if i >= n else i)
    for a in range(size):
        for b in range(size):
            r, c = reflect(a - 2, 4), reflect(b - 2, 4)
            np.testing.assert_array_equal(patch[a, b], fixture_cube().values[r, c])


def test_even_patch_rejected():
    with pytest.raises(ContractError):
        extract_patches(fixture_cube(), LabelMap(np.ones((4, 4), int), 1), 4)


def test_indian_pines_rule_arithmetic():
    assert indian_pines_train_count(20) == 6
    assert indian_pines_train_count(2455) == 80
    assert indian_pines_train_count(46) == 14
    assert indian_pines_train_count(266) == 80
    assert indian_pines_train_count(267) == 80
    assert indian_pines_train_count(10) == 3


def patchset_from_labels(labels):
    cube = HsiCube(np.zeros(labels.labels.shape + (1,)))
    return extract_patches(cube, labels, 3)


def test_indian_pines_split_counts_and_partition():
    ps = patchset_from_labels(indian_pines_like_labels())
    train, test = split_indian_pines(ps, np.random.default_rng(0))
    expect = [min(math.ceil(0.3 * n), 80) for n in INDIAN_PINES_COUNTS]
    np.testing.assert_array_equal(train.class_counts(), expect)
    np.testing.assert_array_equal(test.class_counts(), np.array(INDIAN_PINES_COUNTS) - expect)
    assert train.class_counts()[8] == 6 and test.class_counts()[8] == 14
    a = {tuple(c) for c in train.coords}
    b = {tuple(c) for c in test.coords}
    assert not a & b and len(a | b) == sum(INDIAN_PINES_COUNTS)


def test_fraction_split():
    counts = [761, 243, 256, 252, 161, 229, 105, 431, 520, 404, 419, 503, 927]
    grid = np.zeros(100 * 100, int)
    grid[: sum(counts)] = np.repeat(np.arange(1, 14), counts)
    ps = patchset_from_labels(LabelMap(np.random.default_rng(0).permutation(grid).reshape(100, 100), 13))
    train, test = split_fraction(ps, 0.1, np.random.default_rng(1))
    assert len(train) == sum(math.ceil(n / 10) for n in counts)
    assert len(train) + len(test) == 5211
    again, _ = split_fraction(ps, 0.1, np.random.default_rng(1))
    np.testing.assert_array_equal(train.coords, again.coords)
    with pytest.raises(ContractError):
        split_fraction(ps, 1.0, np.random.default_rng(1))


def test_empty_class_is_data_error():
    labels = np.zeros((4, 4), int)
    labels[0, :] = 1
    with pytest.raises(DataError):
        split_indian_pines(patchset_from_labels(LabelMap(labels, 2)), np.random.default_rng(0))


def toy_train(sizes):
    labels = np.repeat(np.arange(len(sizes)), sizes)
    coords = np.stack([np.arange(labels.size), np.zeros(labels.size, int)], axis=1)
    return PatchSet(np.zeros((labels.size + 2, 3, 1)), coords, labels, 3, len(sizes), "train")


def test_replication_counts():
    out = replicate_minority(toy_train([6, 15]), 15, np.random.default_rng(0))
    np.testing.assert_array_equal(out.class_counts(), [15, 15])
    seen = np.bincount(out.coords[out.labels == 0, 0], minlength=6)
    assert seen.min() >= 2 and seen.max() <= 3 and seen.sum() == 15


def test_replication_leaves_full_classes_alone():
    train = toy_train([20, 30])
    out = replicate_minority(train, 15, np.random.default_rng(0))
    np.testing.assert_array_equal(out.coords, train.coords)


def test_replication_keeps_train_test_disjoint():
    ps = patchset_from_labels(indian_pines_like_labels())
    train, test = split_indian_pines(ps, np.random.default_rng(3))
    before = test.coords.copy()
    rep = replicate_minority(train, 80, np.random.default_rng(4))
    assert np.all(rep.class_counts() == 80)
    np.testing.assert_array_equal(test.coords, before)
    assert not {tuple(c) for c in rep.coords} & {tuple(c) for c in test.coords}


def test_subsample_per_class():
    sub = subsample_per_class(toy_train([8, 40]), 0.25, np.random.default_rng(0))
    np.testing.assert_array_equal(sub.class_counts(), [2, 10])
