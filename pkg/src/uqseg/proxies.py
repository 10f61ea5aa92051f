"""Image-derived ambiguity proxies.

Three per-pixel quantities drive the gated supervision terms: Sobel gradient
magnitude (contrast), exact Euclidean distance to the nearest class boundary
(geometry), and boundary normals used to aggregate values along short normal
lines.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .grids import LabelGrid, PixelIndex, ScalarGrid, UnitVector2

_BIG = 1e15


@dataclass(frozen=True)
class BoundarySet:
    """Pixels with at least one 4-neighbor of a different label."""

    mask: np.ndarray  # bool (H, W)
    owner: np.ndarray  # uint8 (H, W), class of each pixel (meaningful on mask)

    @property
    def pixels(self):
        return frozenset(PixelIndex(int(r), int(c)) for r, c in zip(*np.nonzero(self.mask)))

    def __len__(self):
        return int(self.mask.sum())


@dataclass(frozen=True)
class NormalSamples:
    center: PixelIndex
    offsets: tuple
    samples: tuple  # PixelIndex per offset, clamped to the grid


def gradient_magnitude(image: ScalarGrid) -> ScalarGrid:
    """Sobel 3x3 magnitude with replicated borders."""
    v = np.pad(image.values, 1, mode="edge")
    gx = (
        (v[:-2, 2:] + 2.0 * v[1:-1, 2:] + v[2:, 2:])
        - (v[:-2, :-2] + 2.0 * v[1:-1, :-2] + v[2:, :-2])
    )
    gy = (
        (v[2:, :-2] + 2.0 * v[2:, 1:-1] + v[2:, 2:])
        - (v[:-2, :-2] + 2.0 * v[:-2, 1:-1] + v[:-2, 2:])
    )
    return ScalarGrid(np.sqrt(gx * gx + gy * gy))


def boundary_pixels(labels: LabelGrid) -> BoundarySet:
    lab = labels.labels
    mask = np.zeros(lab.shape, dtype=bool)
    mask[:-1, :] |= lab[:-1, :] != lab[1:, :]
    mask[1:, :] |= lab[1:, :] != lab[:-1, :]
    mask[:, :-1] |= lab[:, :-1] != lab[:, 1:]
    mask[:, 1:] |= lab[:, 1:] != lab[:, :-1]
    return BoundarySet(mask=mask, owner=lab.copy())


def boundary_distance(labels: LabelGrid):
    """Exact Euclidean distance to the nearest boundary pixel, or None.

    Returns None when the label grid has no boundary at all, so callers can
    skip distance-gated supervision instead of consuming a bogus map.
    """
    bset = boundary_pixels(labels)
    if len(bset) == 0:
        return None
    return distance_from_mask(bset.mask)


def distance_from_mask(mask: np.ndarray) -> ScalarGrid:
    """Exact EDT to the True pixels of ``mask`` (two-pass squared transform)."""
    h, w = mask.shape
    d = np.full((h, w), _BIG, dtype=np.float64)
    d[mask] = 0.0
    for r in range(1, h):
        np.minimum(d[r], d[r - 1] + 1.0, out=d[r])
    for r in range(h - 2, -1, -1):
        np.minimum(d[r], d[r + 1] + 1.0, out=d[r])
    f = np.where(d >= _BIG, _BIG, d * d)
    sq = _kernels.edt_sq_pass(np.ascontiguousarray(f))
    return ScalarGrid(np.sqrt(sq))


def boundary_normal(distance: ScalarGrid, at: PixelIndex) -> UnitVector2:
    """Unit gradient of the distance field by central differences.

    Border samples clamp to the nearest valid pixel; a degenerate gradient
    (norm below 1e-8) falls back to (0, 1).
    """
    d = distance.values
    h, w = d.shape
    r, c = at.row, at.col
    dy = (d[min(r + 1, h - 1), c] - d[max(r - 1, 0), c]) / 2.0
    dx = (d[r, min(c + 1, w - 1)] - d[r, max(c - 1, 0)]) / 2.0
    norm = math.hypot(dy, dx)
    if norm < 1e-8:
        return UnitVector2(0.0, 1.0)
    return UnitVector2(dy / norm, dx / norm)


def normal_line_samples(center, normal, radius, height, width) -> NormalSamples:
    """2T+1 pixels nearest to center + t*normal, rounded half-up then clamped."""
    if radius < 0:
        raise ValueError("radius must be >= 0")
    offsets = tuple(range(-radius, radius + 1))
    samples = []
    for t in offsets:
        r = math.floor(center.row + t * normal.dy + 0.5)
        c = math.floor(center.col + t * normal.dx + 0.5)
        samples.append(PixelIndex(min(max(r, 0), height - 1), min(max(c, 0), width - 1)))
    return NormalSamples(center=center, offsets=offsets, samples=tuple(samples))


def normal_aggregate(gradient: ScalarGrid, uncertainty: ScalarGrid, samples: NormalSamples):
    """Strongest gradient and mean uncertainty over the sampled line.

    Clamped duplicates count with multiplicity in the mean.
    """
    if gradient.values.shape != uncertainty.values.shape:
        raise ValueError("gradient and uncertainty grids must share a shape")
    g = max(float(gradient.values[p.row, p.col]) for p in samples.samples)
    u = sum(float(uncertainty.values[p.row, p.col]) for p in samples.samples) / len(samples.samples)
    return g, u
