import math

import numpy as np
import pytest

from uqseg.grids import LabelGrid, PixelIndex, ScalarGrid
from uqseg.proxies import (
    boundary_distance,
    boundary_normal,
    boundary_pixels,
    distance_from_mask,
    gradient_magnitude,
    normal_aggregate,
    normal_line_samples,
)


def brute_force_boundary(labels):
    lab = labels.labels
    h, w = lab.shape
    out = np.zeros((h, w), dtype=bool)
    for r in range(h):
        for c in range(w):
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if 0 <= rr < h and 0 <= cc < w and lab[rr, cc] != lab[r, c]:
                    out[r, c] = True
    return out


def brute_force_distance(mask):
    h, w = mask.shape
    sources = np.argwhere(mask)
    out = np.empty((h, w))
    for r in range(h):
        for c in range(w):
            d2 = ((sources[:, 0] - r) ** 2 + (sources[:, 1] - c) ** 2).min()
            out[r, c] = math.sqrt(d2)
    return out


def random_labels(rng, h, w, num_classes=2):
    return LabelGrid(rng.integers(0, num_classes, size=(h, w)), num_classes)


# -- gradient magnitude -------------------------------------------------------


def test_gradient_constant_image_is_zero():
    g = gradient_magnitude(ScalarGrid(np.full((6, 7), 3.25)))
    assert np.all(g.values == 0)


def test_gradient_vertical_step_sobel_response():
    vals = np.zeros((5, 6))
    vals[:, 3:] = 1.0
    g = gradient_magnitude(ScalarGrid(vals)).values
    # columns adjacent to the step carry the full Sobel x response of 4
    assert np.allclose(g[:, 2], 4.0)
    assert np.allclose(g[:, 3], 4.0)
    assert np.all(g[:, [0, 1, 4, 5]] == 0)


def test_gradient_transpose_symmetry():
    rng = np.random.default_rng(5)
    vals = rng.normal(size=(9, 12))
    g1 = gradient_magnitude(ScalarGrid(vals)).values
    g2 = gradient_magnitude(ScalarGrid(vals.T)).values
    assert np.allclose(g1, g2.T)


def test_gradient_invariant_to_constant_shift():
    rng = np.random.default_rng(6)
    vals = rng.normal(size=(8, 8))
    g1 = gradient_magnitude(ScalarGrid(vals)).values
    g2 = gradient_magnitude(ScalarGrid(vals + 11.5)).values
    assert np.allclose(g1, g2)


# -- boundaries ---------------------------------------------------------------


def test_boundary_uniform_grid_empty():
    bset = boundary_pixels(LabelGrid(np.zeros((5, 5), dtype=int), 2))
    assert len(bset) == 0
    assert bset.pixels == frozenset()


def test_boundary_two_by_two():
    bset = boundary_pixels(LabelGrid(np.array([[0, 1], [0, 1]]), 2))
    assert len(bset) == 4


def test_boundary_disk_matches_brute_force():
    rr, cc = np.meshgrid(np.arange(15), np.arange(15), indexing="ij")
    disk = (np.hypot(rr - 7, cc - 7) <= 4).astype(int)
    labels = LabelGrid(disk, 2)
    bset = boundary_pixels(labels)
    assert np.array_equal(bset.mask, brute_force_boundary(labels))


@pytest.mark.parametrize("seed", range(8))
def test_boundary_random_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    labels = random_labels(rng, 9, 11, 3)
    assert np.array_equal(boundary_pixels(labels).mask, brute_force_boundary(labels))


# -- distance transform -------------------------------------------------------


def test_distance_three_four_five():
    mask = np.zeros((5, 5), dtype=bool)
    mask[0, 0] = True
    d = distance_from_mask(mask)
    assert d.values[3, 4] == pytest.approx(5.0, abs=1e-12)
    assert d.values[0, 0] == 0.0


def test_distance_boundary_pixels_are_zero():
    rng = np.random.default_rng(2)
    labels = random_labels(rng, 12, 12)
    d = boundary_distance(labels)
    mask = boundary_pixels(labels).mask
    assert np.all(d.values[mask] == 0)


def test_distance_no_boundary_distinguished():
    assert boundary_distance(LabelGrid(np.ones((4, 4), dtype=int), 2)) is None


@pytest.mark.parametrize("seed", range(12))
def test_distance_matches_brute_force(seed):
    rng = np.random.default_rng(100 + seed)
    h, w = rng.integers(3, 20, size=2)
    mask = rng.random((h, w)) < 0.15
    if not mask.any():
        mask[rng.integers(h), rng.integers(w)] = True
    d = distance_from_mask(mask).values
    assert np.allclose(d, brute_force_distance(mask), atol=1e-9)


def test_distance_lipschitz():
    rng = np.random.default_rng(17)
    labels = random_labels(rng, 16, 16)
    d = boundary_distance(labels).values
    # adjacent pixels differ by at most their Euclidean separation
    assert np.all(np.abs(np.diff(d, axis=0)) <= 1.0 + 1e-12)
    assert np.all(np.abs(np.diff(d, axis=1)) <= 1.0 + 1e-12)
    pts = rng.integers(0, 16, size=(60, 4))
    for r1, c1, r2, c2 in pts:
        lhs = abs(d[r1, c1] - d[r2, c2])
        assert lhs <= math.hypot(r1 - r2, c1 - c2) + 1e-9


# -- normals ------------------------------------------------------------------


def vertical_interface_labels(h=7, w=8, split=4):
    lab = np.zeros((h, w), dtype=int)
    lab[:, split:] = 1
    return LabelGrid(lab, 2)


def test_normal_straight_boundary():
    d = boundary_distance(vertical_interface_labels())
    for c in (1, 2, 6):
        n = boundary_normal(d, PixelIndex(3, c))
        assert n.dy == pytest.approx(0.0, abs=1e-9)
        assert abs(n.dx) == pytest.approx(1.0, abs=1e-9)


def test_normal_rotation_equivariance():
    rng = np.random.default_rng(9)
    vals = np.abs(rng.normal(size=(9, 9))) + np.hypot(*np.meshgrid(
        np.arange(9) - 4.0, np.arange(9) - 4.0, indexing="ij"))
    d1 = ScalarGrid(vals)
    d2 = ScalarGrid(np.rot90(vals).copy())
    h = w = 9
    for r in range(1, 8):
        for c in range(1, 8):
            n1 = boundary_normal(d1, PixelIndex(r, c))
            # (r, c) of the original lands at (w-1-c, r) after rot90
            n2 = boundary_normal(d2, PixelIndex(w - 1 - c, r))
            assert n2.dy == pytest.approx(-n1.dx, abs=1e-6)
            assert n2.dx == pytest.approx(n1.dy, abs=1e-6)


def test_normal_flat_field_fallback():
    d = ScalarGrid(np.full((5, 5), 2.0))
    n = boundary_normal(d, PixelIndex(2, 2))
    assert (n.dy, n.dx) == (0.0, 1.0)


def test_normal_line_samples_zero_radius():
    from uqseg.grids import UnitVector2

    s = normal_line_samples(PixelIndex(2, 2), UnitVector2(0.0, 1.0), 0, 5, 5)
    assert s.samples == (PixelIndex(2, 2),)


def test_normal_line_samples_horizontal():
    from uqseg.grids import UnitVector2

    s = normal_line_samples(PixelIndex(5, 5), UnitVector2(0.0, 1.0), 2, 10, 10)
    assert [p.col for p in s.samples] == [3, 4, 5, 6, 7]
    assert all(p.row == 5 for p in s.samples)


def test_normal_line_samples_clamped_at_corner():
    from uqseg.grids import UnitVector2

    s = normal_line_samples(PixelIndex(0, 0), UnitVector2(0.0, 1.0), 3, 4, 4)
    assert all(p.in_bounds(4, 4) for p in s.samples)
    # clamped duplicates keep the sample count at 2T+1
    assert len(s.samples) == 7


def test_normal_aggregate_hand_case():
    from uqseg.grids import UnitVector2

    g = ScalarGrid(np.array([[1.0, 5.0, 3.0]]))
    u = ScalarGrid(np.array([[0.2, 0.4, 0.6]]))
    s = normal_line_samples(PixelIndex(0, 1), UnitVector2(0.0, 1.0), 1, 1, 3)
    g_t, u_bar = normal_aggregate(g, u, s)
    assert g_t == pytest.approx(5.0)
    assert u_bar == pytest.approx(0.4)


def test_normal_aggregate_singleton_and_constant():
    from uqseg.grids import UnitVector2

    g = ScalarGrid(np.array([[1.0, 2.0], [3.0, 4.0]]))
    u = ScalarGrid(np.full((2, 2), 0.7))
    s = normal_line_samples(PixelIndex(0, 0), UnitVector2(0.0, 1.0), 0, 2, 2)
    g_t, u_bar = normal_aggregate(g, u, s)
    assert (g_t, u_bar) == (1.0, 0.7)
    s2 = normal_line_samples(PixelIndex(1, 1), UnitVector2(0.0, 1.0), 2, 2, 2)
    _, u_bar2 = normal_aggregate(g, u, s2)
    assert u_bar2 == pytest.approx(0.7)
