import math

import numpy as np
import pytest

from uqseg.grids import LabelGrid, ScalarGrid
from uqseg.metrics import (
    BoundaryBand,
    DeltaUSummary,
    MetricReport,
    Perturbation,
    average_ranks,
    boundary_band,
    delta_u_under_perturbation,
    dsc,
    gaussian_blur,
    hd95,
    regression_slope,
    spearman,
    ucc_d,
    ucc_g,
    ucc_sigma,
    ur,
)
from uqseg.proxies import boundary_distance, boundary_pixels, gradient_magnitude


def oracle_spearman(a, b):
    """Independent implementation: sort-based average ranks, then Pearson."""

    def ranks(x):
        order = sorted(range(len(x)), key=lambda i: x[i])
        out = [0.0] * len(x)
        i = 0
        while i < len(x):
            j = i
            while j + 1 < len(x) and x[order[j + 1]] == x[order[i]]:
                j += 1
            for k in range(i, j + 1):
                out[order[k]] = (i + j) / 2 + 1
            i = j + 1
        return out

    ra, rb = ranks(list(a)), ranks(list(b))
    ma = sum(ra) / len(ra)
    mb = sum(rb) / len(rb)
    num = sum((x - ma) * (y - mb) for x, y in zip(ra, rb))
    den = math.sqrt(sum((x - ma) ** 2 for x in ra) * sum((y - mb) ** 2 for y in rb))
    return num / den


def disk_labels(h=24, w=24, r=7):
    rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    return LabelGrid((np.hypot(rr - h / 2, cc - w / 2) <= r).astype(int), 2)


# -- spearman -----------------------------------------------------------------


def test_spearman_perfect_orders():
    a = np.array([1.0, 2.0, 5.0, 9.0])
    assert spearman(a, a.copy()) == pytest.approx(1.0)
    assert spearman(a, -a) == pytest.approx(-1.0)
    assert spearman(a, np.exp(-a)) == pytest.approx(-1.0)  # monotone transform


def test_spearman_constant_is_undefined():
    assert spearman(np.array([1.0, 1.0, 1.0]), np.array([1.0, 2.0, 3.0])) is None


@pytest.mark.parametrize("seed", range(10))
def test_spearman_with_ties_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    a = rng.integers(0, 6, size=50).astype(float)  # heavy ties
    b = rng.integers(0, 6, size=50).astype(float)
    if np.all(a == a[0]) or np.all(b == b[0]):
        pytest.skip("degenerate draw")
    assert spearman(a, b) == pytest.approx(oracle_spearman(a, b), abs=1e-12)


def test_spearman_symmetry_and_negation():
    rng = np.random.default_rng(42)
    a = rng.normal(size=30)
    b = rng.normal(size=30)
    assert spearman(a, b) == pytest.approx(spearman(b, a), abs=1e-12)
    assert spearman(a, -b) == pytest.approx(-spearman(a, b), abs=1e-12)


def test_average_ranks_ties():
    np.testing.assert_allclose(average_ranks([10.0, 20.0, 20.0, 30.0]), [1, 2.5, 2.5, 4])


# -- ur -----------------------------------------------------------------------


def test_ur_tie_and_perfect_cases():
    a = np.array([1.0, 2.0, 3.0])
    assert ur(a, np.array([5.0, 5.0, 5.0]), "inverse") == 1.0
    assert ur(a, -a, "inverse") == 1.0
    assert ur(a, a, "direct") == 1.0
    assert ur(a, a, "inverse") == 0.0


@pytest.mark.parametrize("seed", range(6))
def test_ur_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=12)
    b = rng.normal(size=12)
    for direction in ("inverse", "direct"):
        count = 0
        total = 0
        for i in range(12):
            for j in range(12):
                if i == j:
                    continue
                total += 1
                prod = (a[i] - a[j]) * (b[i] - b[j])
                if (direction == "inverse" and prod <= 0) or (
                    direction == "direct" and prod >= 0
                ):
                    count += 1
        assert ur(a, b, direction) == pytest.approx(count / total, abs=1e-15)


def test_ur_invariant_under_monotone_transform():
    rng = np.random.default_rng(7)
    a = rng.normal(size=15)
    b = rng.normal(size=15)
    base = ur(a, b, "inverse")
    assert ur(np.exp(a), b, "inverse") == base
    assert ur(a, 3 * b + 10, "inverse") == base


# -- boundary band ------------------------------------------------------------


def test_band_distance_zero_is_class_boundary():
    labels = disk_labels()
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 1, 0.0)
    bmask = boundary_pixels(labels).mask & (labels.labels == 1)
    assert set(band.indices) == set(np.nonzero(bmask.ravel())[0])


def test_band_saturates_to_whole_class():
    labels = disk_labels()
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 1, 100.0)
    assert len(band) == int((labels.labels == 1).sum())


@pytest.mark.parametrize("seed", range(5))
def test_band_matches_brute_force_filter(seed):
    rng = np.random.default_rng(seed)
    labels = LabelGrid(rng.integers(0, 3, size=(16, 16)), 3)
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 2, 3.0)
    expect = [
        r * 16 + c
        for r in range(16)
        for c in range(16)
        if labels.labels[r, c] == 2 and distance.values[r, c] <= 3.0
    ]
    assert list(band.indices) == expect


def test_band_absent_class_is_empty():
    labels = disk_labels()
    distance = boundary_distance(labels)
    # only classes 0 and 1 exist in the disk phantom
    band = BoundaryBand(5, 3.0, np.array([], dtype=np.intp), (24, 24))
    assert len(band) == 0
    assert ucc_g(ScalarGrid(np.zeros((24, 24))), ScalarGrid(np.zeros((24, 24))), band) is None


# -- ucc ----------------------------------------------------------------------


def test_ucc_g_signs():
    labels = disk_labels()
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 1, 4.0)
    rng = np.random.default_rng(3)
    g = ScalarGrid(rng.uniform(0, 1, size=(24, 24)))
    u_anti = ScalarGrid(1.5 - g.values)
    assert ucc_g(u_anti, g, band) == pytest.approx(-1.0)
    assert ucc_g(g, g, band) == pytest.approx(1.0)


def test_ucc_equals_oracle_on_permuted_field():
    labels = disk_labels()
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 1, 4.0)
    rng = np.random.default_rng(4)
    g = rng.uniform(0, 1, size=(24, 24))
    u = g.ravel()[rng.permutation(24 * 24)].reshape(24, 24)
    got = ucc_g(ScalarGrid(u), ScalarGrid(g), band)
    expect = oracle_spearman(g.ravel()[band.indices], u.ravel()[band.indices])
    assert got == pytest.approx(expect, abs=1e-12)


def test_ucc_d_strictly_decreasing_field():
    labels = disk_labels()
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 1, 5.0)
    u = ScalarGrid(np.exp(-distance.values))
    assert ucc_d(u, distance, band) == pytest.approx(-1.0)
    const = ScalarGrid(np.ones((24, 24)))
    assert ucc_d(const, distance, band) is None


def test_ucc_sigma_constructed_monotone():
    labels = disk_labels()
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 1, 4.0)
    image = ScalarGrid(np.zeros((24, 24)))

    calls = {"n": 0}

    def increasing_model(img):
        # uncertainty is a constant that tracks the injected noise magnitude
        sigma_seen = float(np.std(img.values))
        return np.full((24, 24), sigma_seen)

    got = ucc_sigma(increasing_model, image, band, [0.0, 0.02, 0.05, 0.1], 2,
                    np.random.default_rng(0))
    assert got == pytest.approx(1.0)

    def decreasing_model(img):
        return np.full((24, 24), 1.0 - float(np.std(img.values)))

    got = ucc_sigma(decreasing_model, image, band, [0.0, 0.02, 0.05, 0.1], 2,
                    np.random.default_rng(0))
    assert got == pytest.approx(-1.0)


# -- segmentation metrics -----------------------------------------------------


def test_dsc_cases():
    truth = disk_labels()
    per, mean = dsc(truth, truth)
    assert per[1] == 1.0 and mean == 1.0

    empty = LabelGrid(np.zeros((24, 24), dtype=int), 2)
    per, mean = dsc(empty, truth)
    assert per[1] == 0.0

    per, mean = dsc(empty, empty)
    assert per[1] is None and mean is None


def test_dsc_half_coverage():
    truth_arr = np.zeros((8, 8), dtype=int)
    truth_arr[:, :4] = 1
    pred_arr = np.zeros((8, 8), dtype=int)
    pred_arr[:, :2] = 1  # covers exactly half of truth, nothing else
    _, mean = dsc(LabelGrid(pred_arr, 2), LabelGrid(truth_arr, 2))
    assert mean == pytest.approx(2 / 3)


def test_dsc_symmetric():
    rng = np.random.default_rng(5)
    a = LabelGrid(rng.integers(0, 2, size=(10, 10)), 2)
    b = LabelGrid(rng.integers(0, 2, size=(10, 10)), 2)
    assert dsc(a, b)[1] == pytest.approx(dsc(b, a)[1], abs=1e-15)


def test_hd95_identical_masks_zero():
    truth = disk_labels()
    per, mean = hd95(truth, truth)
    assert per[1] == 0.0 and mean == 0.0


def test_hd95_single_pixels_three_four_five():
    a = np.zeros((6, 6), dtype=int)
    b = np.zeros((6, 6), dtype=int)
    a[0, 0] = 1
    b[3, 4] = 1
    per, _ = hd95(LabelGrid(a, 2), LabelGrid(b, 2))
    assert per[1] == pytest.approx(5.0)


def test_hd95_missing_class_undefined():
    truth = disk_labels()
    empty = LabelGrid(np.zeros((24, 24), dtype=int), 2)
    per, mean = hd95(empty, truth)
    assert per[1] is None and mean is None


def brute_force_hd95(pred_mask, truth_mask):
    def boundary(mask):
        h, w = mask.shape
        out = []
        for r in range(h):
            for c in range(w):
                if not mask[r, c]:
                    continue
                for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                    rr, cc = r + dr, c + dc
                    if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                        out.append((r, c))
                        break
        return out

    pb, tb = boundary(pred_mask), boundary(truth_mask)
    pooled = []
    for src, dst in ((pb, tb), (tb, pb)):
        for (r, c) in src:
            pooled.append(min(math.hypot(r - rr, c - cc) for rr, cc in dst))
    return float(np.percentile(pooled, 95))


@pytest.mark.parametrize("seed", range(5))
def test_hd95_matches_brute_force(seed):
    rng = np.random.default_rng(seed + 30)
    pred = np.zeros((12, 12), dtype=int)
    truth = np.zeros((12, 12), dtype=int)
    pred[rng.integers(2, 9):rng.integers(9, 12), rng.integers(0, 4):rng.integers(6, 12)] = 1
    truth[rng.integers(0, 4):rng.integers(6, 11), rng.integers(2, 7):rng.integers(8, 12)] = 1
    if not pred.any() or not truth.any():
        pytest.skip("degenerate draw")
    per, _ = hd95(LabelGrid(pred, 2), LabelGrid(truth, 2))
    assert per[1] == pytest.approx(brute_force_hd95(pred.astype(bool), truth.astype(bool)), abs=1e-9)


# -- slopes and delta-u -------------------------------------------------------


def test_regression_slope_cases():
    x = np.array([0.0, 1.0, 2.0, 5.0])
    assert regression_slope(x, 3 * x + 1) == pytest.approx(3.0)
    assert regression_slope(x, np.full(4, 2.2)) == pytest.approx(0.0)
    rng = np.random.default_rng(8)
    xs = rng.normal(size=40)
    ys = rng.normal(size=40)
    expect = float(((xs - xs.mean()) * (ys - ys.mean())).sum() / ((xs - xs.mean()) ** 2).sum())
    assert regression_slope(xs, ys) == pytest.approx(expect, abs=1e-12)
    with pytest.raises(ValueError):
        regression_slope(np.ones(5), np.arange(5.0))


def test_delta_u_identity_perturbation():
    labels = disk_labels()
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 1, 4.0)
    rng = np.random.default_rng(9)
    image = ScalarGrid(rng.uniform(size=(24, 24)))

    def model(img):
        return img.values * 0.5

    out = delta_u_under_perturbation(model, image, band, Perturbation("gaussian_noise", 0.0),
                                     np.random.default_rng(0))
    assert out.fraction_positive == 0.0
    assert out.mean == 0.0
    assert out.q50 == 0.0


def test_delta_u_blur_lowers_gradient_model():
    labels = disk_labels()
    distance = boundary_distance(labels)
    band = boundary_band(labels, distance, 1, 2.0)
    rr, cc = np.meshgrid(np.arange(24.0), np.arange(24.0), indexing="ij")
    image = ScalarGrid((np.hypot(rr - 12, cc - 12) <= 7).astype(float))

    def grad_model(img):
        return gradient_magnitude(img).values

    out = delta_u_under_perturbation(grad_model, image, band, Perturbation("gaussian_blur", 1.5),
                                     np.random.default_rng(0))
    assert out.mean < 0  # blur weakens edges, so this model's "uncertainty" drops


def test_gaussian_blur_basics():
    rng = np.random.default_rng(10)
    img = ScalarGrid(rng.uniform(size=(16, 16)))
    assert gaussian_blur(img, 0.0) is img
    const = ScalarGrid(np.full((9, 9), 0.4))
    np.testing.assert_allclose(gaussian_blur(const, 2.0).values, 0.4, atol=1e-12)
    blurred = gaussian_blur(img, 1.0)
    assert blurred.values.std() < img.values.std()


# -- report -------------------------------------------------------------------


def test_metric_report_csv(tmp_path):
    report = MetricReport()
    report.add_row(0, 1, ucc_g=-0.5, ucc_sigma=0.9, ucc_d=-0.7, ur_g=0.7,
                   ur_sigma=0.9, ur_d=0.8, dsc=0.95, hd95=1.5, slope_g=-0.01, slope_d=-0.02)
    report.add_row(0, 2, dsc=0.5)
    report.add_row(1, 1, ucc_g=None, dsc=0.9)
    path = tmp_path / "report.csv"
    report.to_csv(path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "image_id,class,ucc_g,ucc_sigma,ucc_d,ur_g,ur_sigma,ur_d,dsc,hd95,slope_g,slope_d"
    # 3 data rows + per-class aggregates (2) + overall mean
    assert len(lines) == 1 + 3 + 3
    assert "undefined" in lines[2]
    agg = report.aggregate("dsc")
    assert agg == pytest.approx((0.925 + 0.5) / 2)
    assert report.aggregate("ucc_g", "1") == pytest.approx(-0.5)
