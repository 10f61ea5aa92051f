"""Uncertainty-interpretability and segmentation metrics.

Interpretability is scored on boundary bands: per class, the pixels within a
distance threshold of the nearest boundary. Rank correlation (Spearman with
average ranks) and pairwise ordering ratios compare predicted uncertainty with
the three ambiguity proxies; DSC and HD95 score the segmentation itself.
Degenerate inputs (constant sequences, absent classes) yield None, reported as
"undefined" in CSV, never silently coerced to a number.
"""

import math
from dataclasses import dataclass

import numpy as np

from .grids import LabelGrid, ScalarGrid
from .proxies import distance_from_mask
from .supervision import corrupt

CSV_COLUMNS = (
    "image_id", "class", "ucc_g", "ucc_sigma", "ucc_d", "ur_g", "ur_sigma",
    "ur_d", "dsc", "hd95", "slope_g", "slope_d",
)


@dataclass(frozen=True)
class BoundaryBand:
    """Pixels of one class within d0 of the nearest semantic boundary."""

    class_id: int
    d0: float
    indices: np.ndarray  # flat row-major pixel indices
    shape: tuple

    def __len__(self):
        return self.indices.size


def boundary_band(labels: LabelGrid, distance: ScalarGrid, class_id: int, d0: float) -> BoundaryBand:
    mask = (labels.labels == class_id) & (distance.values <= d0)
    return BoundaryBand(
        class_id=class_id,
        d0=float(d0),
        indices=np.nonzero(mask.ravel())[0],
        shape=labels.labels.shape,
    )


def average_ranks(x):
    """Fractional ranks, ties averaged; rank 1 is the smallest value."""
    x = np.asarray(x, dtype=np.float64)
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=np.float64)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(a, b):
    """Pearson correlation of average ranks, or None when either input is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size < 2:
        raise ValueError("spearman needs two equal-length 1D sequences of length >= 2")
    ra, rb = average_ranks(a), average_ranks(b)
    da, db = ra - ra.mean(), rb - rb.mean()
    denom = math.sqrt(float((da * da).sum()) * float((db * db).sum()))
    if denom == 0.0:
        return None
    return float((da * db).sum()) / denom


def ur(a, b, expected_direction):
    """Fraction of ordered pairs whose orderings agree with the expectation.

    Ties count as consistent under both conventions.
    """
    if expected_direction not in ("inverse", "direct"):
        raise ValueError("expected_direction must be 'inverse' or 'direct'")
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.size < 2:
        raise ValueError("ur needs two equal-length sequences of length >= 2")
    prod = (a[:, None] - a[None, :]) * (b[:, None] - b[None, :])
    off = ~np.eye(a.size, dtype=bool)
    good = prod <= 0 if expected_direction == "inverse" else prod >= 0
    return float((good & off).sum()) / float(off.sum())


def ucc_g(uncertainty: ScalarGrid, gradient: ScalarGrid, band: BoundaryBand):
    if len(band) < 2:
        return None
    return spearman(gradient.values.ravel()[band.indices], uncertainty.values.ravel()[band.indices])


def ucc_d(uncertainty: ScalarGrid, distance: ScalarGrid, band: BoundaryBand):
    if len(band) < 2:
        return None
    return spearman(distance.values.ravel()[band.indices], uncertainty.values.ravel()[band.indices])


def band_mean_u_per_level(model, image: ScalarGrid, band: BoundaryBand, noise_levels, trials, rng):
    """Mean band uncertainty per noise level, averaged over seeded trials."""
    means = []
    for sigma in noise_levels:
        acc = 0.0
        for _ in range(trials):
            u = np.asarray(model(corrupt(image, float(sigma), rng)))
            acc += float(u.ravel()[band.indices].mean())
        means.append(acc / trials)
    return np.asarray(means)


def ucc_sigma(model, image: ScalarGrid, band: BoundaryBand, noise_levels, trials, rng):
    """Spearman between noise level and band-mean uncertainty."""
    if len(noise_levels) < 2:
        raise ValueError("need at least two noise levels")
    if len(band) == 0:
        return None
    means = band_mean_u_per_level(model, image, band, noise_levels, trials, rng)
    return spearman(np.asarray(noise_levels, dtype=np.float64), means)


def ur_sigma(model, image: ScalarGrid, band: BoundaryBand, noise_levels, trials, rng):
    if len(band) == 0:
        return None
    means = band_mean_u_per_level(model, image, band, noise_levels, trials, rng)
    return ur(np.asarray(noise_levels, dtype=np.float64), means, "direct")


def dsc(pred: LabelGrid, truth: LabelGrid):
    """Per-foreground-class Dice and their mean; both-empty classes skipped."""
    if pred.labels.shape != truth.labels.shape:
        raise ValueError("shape mismatch")
    per_class = {}
    for c in range(1, truth.num_classes):
        p = pred.labels == c
        t = truth.labels == c
        total = int(p.sum()) + int(t.sum())
        if total == 0:
            per_class[c] = None
            continue
        per_class[c] = 2.0 * float((p & t).sum()) / total
    defined = [v for v in per_class.values() if v is not None]
    return per_class, (sum(defined) / len(defined) if defined else None)


def _mask_boundary(mask):
    """Boundary of a binary mask; pixels outside the grid count as background."""
    b = np.zeros_like(mask)
    b |= mask & ~np.roll(mask, 1, axis=0)
    b |= mask & ~np.roll(mask, -1, axis=0)
    b |= mask & ~np.roll(mask, 1, axis=1)
    b |= mask & ~np.roll(mask, -1, axis=1)
    b[0, :] |= mask[0, :]
    b[-1, :] |= mask[-1, :]
    b[:, 0] |= mask[:, 0]
    b[:, -1] |= mask[:, -1]
    return b


def hd95(pred: LabelGrid, truth: LabelGrid):
    """95th-percentile symmetric boundary distance per class (pixel units).

    Directed nearest distances from each boundary to the other are pooled and
    the linear-interpolation percentile taken. Classes missing on either side
    are undefined (None).
    """
    if pred.labels.shape != truth.labels.shape:
        raise ValueError("shape mismatch")
    per_class = {}
    for c in range(1, truth.num_classes):
        p = pred.labels == c
        t = truth.labels == c
        if not p.any() or not t.any():
            per_class[c] = None
            continue
        pb = _mask_boundary(p)
        tb = _mask_boundary(t)
        d_to_t = distance_from_mask(tb).values
        d_to_p = distance_from_mask(pb).values
        pooled = np.concatenate([d_to_t[pb], d_to_p[tb]])
        per_class[c] = float(np.percentile(pooled, 95))
    defined = [v for v in per_class.values() if v is not None]
    return per_class, (sum(defined) / len(defined) if defined else None)


def regression_slope(x, y):
    """Ordinary least-squares slope; constant x is an error."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need two equal-length sequences of length >= 2")
    dx = x - x.mean()
    sxx = float((dx * dx).sum())
    if sxx == 0.0:
        raise ValueError("regression slope undefined for constant x")
    return float((dx * (y - y.mean())).sum()) / sxx


def gaussian_blur(image: ScalarGrid, sigma: float) -> ScalarGrid:
    """Separable Gaussian blur, radius ceil(3 sigma), replicated borders."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return image
    radius = max(1, math.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(xs * xs) / (2.0 * sigma * sigma))
    k /= k.sum()
    v = np.pad(image.values, ((radius, radius), (0, 0)), mode="edge")
    rows = sum(k[i] * v[i : i + image.height, :] for i in range(k.size))
    v = np.pad(rows, ((0, 0), (radius, radius)), mode="edge")
    out = sum(k[i] * v[:, i : i + image.width] for i in range(k.size))
    return ScalarGrid(out)


@dataclass(frozen=True)
class Perturbation:
    kind: str  # "gaussian_noise" | "gaussian_blur"
    sigma: float

    def apply(self, image: ScalarGrid, rng) -> ScalarGrid:
        if self.kind == "gaussian_noise":
            return corrupt(image, self.sigma, rng)
        if self.kind == "gaussian_blur":
            return gaussian_blur(image, self.sigma)
        raise ValueError(f"unknown perturbation kind {self.kind!r}")


@dataclass(frozen=True)
class DeltaUSummary:
    mean: float
    fraction_positive: float
    q25: float
    q50: float
    q75: float


def delta_u_under_perturbation(model, image: ScalarGrid, band: BoundaryBand,
                               perturbation: Perturbation, rng) -> DeltaUSummary:
    """Distribution summary of u(perturbed) - u(clean) over the band."""
    if len(band) == 0:
        raise ValueError("band is empty")
    u0 = np.asarray(model(image)).ravel()[band.indices]
    u1 = np.asarray(model(perturbation.apply(image, rng))).ravel()[band.indices]
    delta = u1 - u0
    q25, q50, q75 = np.percentile(delta, [25, 50, 75])
    return DeltaUSummary(
        mean=float(delta.mean()),
        fraction_positive=float((delta > 0).mean()),
        q25=float(q25),
        q50=float(q50),
        q75=float(q75),
    )


def format_value(v):
    if v is None:
        return "undefined"
    if isinstance(v, str):
        return v
    return f"{v:.12g}"


class MetricReport:
    """Row container for per-(image, class) metrics plus an aggregate block."""

    def __init__(self):
        self.rows = []

    def add_row(self, image_id, class_id, **values):
        row = {"image_id": str(image_id), "class": str(class_id)}
        for col in CSV_COLUMNS[2:]:
            row[col] = values.get(col)
        self.rows.append(row)

    def aggregate_rows(self):
        """Per-class means over images (undefined entries skipped), then a
        final row averaging the per-class aggregates."""
        classes = sorted({r["class"] for r in self.rows})
        agg = []
        for cls in classes:
            row = {"image_id": "aggregate", "class": cls}
            for col in CSV_COLUMNS[2:]:
                vals = [r[col] for r in self.rows if r["class"] == cls and r[col] is not None]
                row[col] = sum(vals) / len(vals) if vals else None
            agg.append(row)
        overall = {"image_id": "aggregate", "class": "mean"}
        for col in CSV_COLUMNS[2:]:
            vals = [r[col] for r in agg if r[col] is not None]
            overall[col] = sum(vals) / len(vals) if vals else None
        return agg + [overall]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for row in self.rows + self.aggregate_rows():
                fh.write(",".join(format_value(row[c]) for c in CSV_COLUMNS) + "\n")

    def aggregate(self, column, class_id="mean"):
        for row in self.aggregate_rows():
            if row["class"] == str(class_id):
                return row[column]
        return None
