"""Gated uncertainty supervision.

Three differentiable penalty families shape the uncertainty field: contrast
(same-class pairs should order uncertainty inversely to local gradient
strength), corruption (patch uncertainty should grow with injected noise), and
geometry (uncertainty should decay with boundary distance near boundaries and
vanish deep inside homogeneous regions). Each term is a hinge on an ordering
violation, weighted by sharp sigmoid gates of boundary distance.

Scalar forms are provided for every formula; the batched Tensor assembly in
``uncertainty_loss_terms`` is what training differentiates through.
"""

import logging
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .autodiff import Tensor, gather
from .grids import LabelGrid, PixelIndex, ScalarGrid

log = logging.getLogger("uqseg.supervision")


@dataclass(frozen=True)
class GateParams:
    gamma: float
    d_g: float
    d_n: float
    d_f: float
    d_eps: float
    lambda_g: float
    lambda_sigma: float
    lambda_f: float

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        for name in ("d_g", "d_n", "d_f", "d_eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.d_n > self.d_f:
            raise ValueError("d_n must not exceed d_f")
        for name in ("lambda_g", "lambda_sigma", "lambda_f"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass(frozen=True)
class NoiseSchedule:
    """Exactly three non-decreasing noise levels; level 0 is the clean image."""

    sigma: tuple

    def __post_init__(self):
        s = tuple(float(v) for v in self.sigma)
        if len(s) != 3:
            raise ValueError("noise schedule needs exactly three levels")
        if s[0] != 0.0:
            raise ValueError("first noise level must be 0")
        if not (s[0] <= s[1] <= s[2]):
            raise ValueError("noise levels must be non-decreasing")
        object.__setattr__(self, "sigma", s)


@dataclass(frozen=True)
class PatchSpec:
    radius: int = 1

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("patch radius must be >= 0")

    @property
    def size(self):
        return (2 * self.radius + 1) ** 2


@dataclass(frozen=True)
class PairSample:
    i: PixelIndex
    j: PixelIndex
    same_class: bool = False

    def __post_init__(self):
        if self.i == self.j:
            raise ValueError("pair endpoints must differ")


# -- scalar formulas ---------------------------------------------------------


def slope_sigmoid(x, gamma):
    """Sharp logistic 1 / (1 + exp(-gamma x)); saturates without overflow."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    out = special.expit(gamma * np.asarray(x, dtype=np.float64))
    return float(out) if np.isscalar(x) or np.ndim(x) == 0 else out


def contrast_pair_loss(u_bar_i, u_bar_j, g_tilde_i, g_tilde_j):
    """Hinge on co-movement of uncertainty and contrast for a same-class pair."""
    return max(0.0, (u_bar_i - u_bar_j) * (g_tilde_i - g_tilde_j))


def contrast_gate(d_i, d_j, params: GateParams):
    return params.lambda_g * slope_sigmoid(params.d_g - max(d_i, d_j), params.gamma)


def corrupt(image: ScalarGrid, sigma: float, rng) -> ScalarGrid:
    """Additive i.i.d. Gaussian noise; sigma = 0 returns the input unchanged."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0.0:
        return image
    return ScalarGrid(image.values + rng.normal(0.0, sigma, size=image.values.shape))


def patch_mean_uncertainty(u: ScalarGrid, center: PixelIndex, patch: PatchSpec) -> float:
    """Mean over the clamped square patch; clamped duplicates count."""
    h, w = u.values.shape
    total = 0.0
    for dr in range(-patch.radius, patch.radius + 1):
        for dc in range(-patch.radius, patch.radius + 1):
            r = min(max(center.row + dr, 0), h - 1)
            c = min(max(center.col + dc, 0), w - 1)
            total += float(u.values[r, c])
    return total / patch.size


def corruption_pixel_loss(u_bars, schedule: NoiseSchedule) -> float:
    """Hinge on non-monotone patch uncertainty across the noise ladder."""
    if len(u_bars) != 3:
        raise ValueError("need one aggregated uncertainty per noise level")
    total = 0.0
    for n in (1, 2):
        total += max(0.0, -(schedule.sigma[n] - schedule.sigma[n - 1]) * (u_bars[n] - u_bars[n - 1]))
    return total


def corruption_gate(d_i, params: GateParams):
    return params.lambda_sigma * slope_sigmoid(params.d_n - d_i, params.gamma)


def interior_indicator(d_i, d_j, params: GateParams):
    return slope_sigmoid(d_i - params.d_f, params.gamma) * slope_sigmoid(
        d_j - params.d_f, params.gamma
    )


def distance_margin_gate(d_i, d_j, params: GateParams):
    return slope_sigmoid(abs(d_i - d_j) - params.d_eps, params.gamma)


def geometry_modulation(d_i, d_j, params: GateParams):
    t = interior_indicator(d_i, d_j, params)
    w_eps = distance_margin_gate(d_i, d_j, params)
    return (1.0 - t) * w_eps * (d_i - d_j) + params.lambda_f * t


def geometry_pair_loss(u_i, u_j, d_i, d_j, params: GateParams) -> float:
    """Two-regime geometry hinge: ranking near boundaries, joint decay inside."""
    t = interior_indicator(d_i, d_j, params)
    omega = geometry_modulation(d_i, d_j, params)
    return max(0.0, omega * (u_i - (1.0 - 2.0 * t) * u_j))


# -- sampling ----------------------------------------------------------------


@dataclass(frozen=True)
class SampleSet:
    """Flat row-major pixel indices for each supervision family."""

    contrast: np.ndarray  # (P, 2)
    geometry: np.ndarray  # (Q, 2)
    anchors: np.ndarray  # (A,)

    @classmethod
    def from_pixels(cls, shape, contrast_pairs=(), geometry_pairs=(), anchors=()):
        _, w = shape

        def flat(p):
            return p.row * w + p.col

        return cls(
            contrast=np.array([[flat(a), flat(b)] for a, b in contrast_pairs], dtype=np.intp).reshape(-1, 2),
            geometry=np.array([[flat(a), flat(b)] for a, b in geometry_pairs], dtype=np.intp).reshape(-1, 2),
            anchors=np.array([flat(p) for p in anchors], dtype=np.intp),
        )


@dataclass(frozen=True)
class PairSampler:
    """Fixed-budget stochastic sampler realizing the supervision expectation.

    Contrast pairs are same-class pixels within the contrast gate range of a
    boundary; geometry pairs and corruption anchors are uniform over all
    pixels. Budgets keep the per-step cost flat.
    """

    contrast_budget: int = 256
    geometry_budget: int = 256
    corruption_budget: int = 256
    normal_radius: int = 2
    patch: PatchSpec = field(default_factory=PatchSpec)

    def sample(self, labels: LabelGrid, distance: ScalarGrid, params: GateParams, rng) -> SampleSet:
        lab = labels.labels.ravel()
        d = distance.values.ravel()
        n = lab.size

        near = np.nonzero(d <= params.d_g)[0]
        contrast = np.empty((0, 2), dtype=np.intp)
        groups = []
        if near.size >= 2:
            near_labels = lab[near]
            groups = [
                near[near_labels == c] for c in np.unique(near_labels)
            ]
            groups = [g for g in groups if g.size >= 2]
        if groups:
            weights = np.array([g.size for g in groups], dtype=np.float64)
            weights /= weights.sum()
            counts = np.bincount(
                rng.choice(len(groups), size=self.contrast_budget, p=weights),
                minlength=len(groups),
            )
            pieces = []
            for group, k in zip(groups, counts):
                if k == 0:
                    continue
                a = rng.integers(group.size, size=k)
                b = rng.integers(group.size - 1, size=k)
                b = b + (b >= a)
                pieces.append(np.stack([group[a], group[b]], axis=1))
            contrast = np.concatenate(pieces, axis=0)
        else:
            log.warning("no same-class boundary-adjacent pixels; contrast term is empty")

        geometry = np.empty((0, 2), dtype=np.intp)
        if n >= 2:
            i = rng.integers(n, size=self.geometry_budget)
            j = rng.integers(n - 1, size=self.geometry_budget)
            j = j + (j >= i)
            geometry = np.stack([i, j], axis=1).astype(np.intp)

        anchors = rng.integers(n, size=self.corruption_budget)
        return SampleSet(
            contrast=contrast.astype(np.intp),
            geometry=geometry,
            anchors=np.asarray(anchors, dtype=np.intp),
        )


@dataclass(frozen=True)
class FixedSampler:
    """Returns a pre-built SampleSet; for hand-constructed cases."""

    sample_set: SampleSet
    normal_radius: int = 2
    patch: PatchSpec = field(default_factory=PatchSpec)

    def sample(self, labels, distance, params, rng):
        return self.sample_set


# -- batched differentiable assembly ----------------------------------------


def _as_field_tensor(u):
    if isinstance(u, Tensor):
        return u
    if isinstance(u, ScalarGrid):
        return Tensor(u.values)
    return Tensor(np.asarray(u, dtype=np.float64))


def _patch_indices(anchors, patch: PatchSpec, shape):
    h, w = shape
    rows, cols = np.divmod(anchors, w)
    offs = range(-patch.radius, patch.radius + 1)
    cells = []
    for dr in offs:
        rr = np.clip(rows + dr, 0, h - 1)
        for dc in offs:
            cc = np.clip(cols + dc, 0, w - 1)
            cells.append(rr * w + cc)
    return np.stack(cells, axis=1)


_LINE_CACHE = weakref.WeakKeyDictionary()


def _normal_line_field(distance: ScalarGrid, radius):
    """Per-pixel normal-line sample indices, (H*W, 2T+1), cached per grid.

    Vectorized twin of boundary_normal + normal_line_samples: central
    differences of the distance field with clamped borders, (0, 1) fallback for
    degenerate gradients, round-half-up then clamp.
    """
    per_grid = _LINE_CACHE.setdefault(distance, {})
    cached = per_grid.get(radius)
    if cached is not None:
        return cached
    d = distance.values
    h, w = d.shape
    dy = (d[np.minimum(np.arange(h) + 1, h - 1), :] - d[np.maximum(np.arange(h) - 1, 0), :]) / 2.0
    dx = (d[:, np.minimum(np.arange(w) + 1, w - 1)] - d[:, np.maximum(np.arange(w) - 1, 0)]) / 2.0
    norm = np.hypot(dy, dx)
    degenerate = norm < 1e-8
    safe = np.where(degenerate, 1.0, norm)
    ny = np.where(degenerate, 0.0, dy / safe)
    nx = np.where(degenerate, 1.0, dx / safe)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cells = []
    for t in range(-radius, radius + 1):
        rr = np.clip(np.floor(rows + t * ny + 0.5), 0, h - 1).astype(np.intp)
        cc = np.clip(np.floor(cols + t * nx + 0.5), 0, w - 1).astype(np.intp)
        cells.append((rr * w + cc).ravel())
    field = np.stack(cells, axis=1)
    per_grid[radius] = field
    return field


def _normal_aggregate_indices(flat_idx, distance: ScalarGrid, radius):
    """Line-sample index matrix (len(flat_idx), 2T+1) along boundary normals."""
    return _normal_line_field(distance, radius)[flat_idx]


def uncertainty_loss_terms(u_clean, u_noisy, labels, distance, gradient,
                           params: GateParams, schedule: NoiseSchedule,
                           sampler, rng, enable=(True, True, True)):
    """Per-family mean penalties (phi_g, phi_sigma, phi_d) as scalar Tensors.

    ``distance`` may be None (label grid without boundaries); every term is
    then zero since all gates are distance-conditioned. ``enable`` switches the
    (contrast, corruption, geometry) families off entirely for ablations; a
    disabled family contributes an exact zero.
    """
    u0 = _as_field_tensor(u_clean)
    zero = Tensor(0.0)
    if distance is None:
        log.warning("no boundary in label grid; uncertainty supervision skipped")
        return zero, zero, zero

    sset = sampler.sample(labels, distance, params, rng)
    d = distance.values.ravel()
    g = gradient.values.ravel()

    phi_g = zero
    if enable[0] and sset.contrast.size and params.lambda_g > 0:
        idx_i, idx_j = sset.contrast[:, 0], sset.contrast[:, 1]
        line_i = _normal_aggregate_indices(idx_i, distance, sampler.normal_radius)
        line_j = _normal_aggregate_indices(idx_j, distance, sampler.normal_radius)
        g_i, g_j = g[line_i].max(axis=1), g[line_j].max(axis=1)
        ubar_i = gather(u0, line_i).mean(axis=1)
        ubar_j = gather(u0, line_j).mean(axis=1)
        gate = params.lambda_g * slope_sigmoid(
            params.d_g - np.maximum(d[idx_i], d[idx_j]), params.gamma
        )
        phi_g = (((ubar_i - ubar_j) * (g_i - g_j)).relu() * gate).mean()

    phi_sigma = zero
    if enable[1] and sset.anchors.size and params.lambda_sigma > 0:
        u1 = _as_field_tensor(u_noisy[0])
        u2 = _as_field_tensor(u_noisy[1])
        cells = _patch_indices(sset.anchors, sampler.patch, distance.values.shape)
        bar0 = gather(u0, cells).mean(axis=1)
        bar1 = gather(u1, cells).mean(axis=1)
        bar2 = gather(u2, cells).mean(axis=1)
        s = schedule.sigma
        hinge = ((bar1 - bar0) * -(s[1] - s[0])).relu() + ((bar2 - bar1) * -(s[2] - s[1])).relu()
        gate = params.lambda_sigma * slope_sigmoid(params.d_n - d[sset.anchors], params.gamma)
        phi_sigma = (hinge * gate).mean()

    phi_d = zero
    if enable[2] and sset.geometry.size:
        idx_i, idx_j = sset.geometry[:, 0], sset.geometry[:, 1]
        d_i, d_j = d[idx_i], d[idx_j]
        t_ij = slope_sigmoid(d_i - params.d_f, params.gamma) * slope_sigmoid(
            d_j - params.d_f, params.gamma
        )
        w_eps = slope_sigmoid(np.abs(d_i - d_j) - params.d_eps, params.gamma)
        omega = (1.0 - t_ij) * w_eps * (d_i - d_j) + params.lambda_f * t_ij
        u_i = gather(u0, idx_i)
        u_j = gather(u0, idx_j)
        phi_d = ((u_i - u_j * (1.0 - 2.0 * t_ij)) * omega).relu().mean()

    if not sset.contrast.size and not sset.geometry.size and not sset.anchors.size:
        log.warning("sampler produced no samples; uncertainty loss is 0")
    return phi_g, phi_sigma, phi_d


def total_uncertainty_loss(u_clean, u_noisy, image, labels, distance, gradient,
                           params: GateParams, schedule: NoiseSchedule,
                           sampler, rng):
    """Sum of the three gated supervision means; differentiable in u.

    Returns a scalar Tensor when any uncertainty input is a Tensor, else float.
    """
    if image is not None and distance is not None:
        if image.values.shape != distance.values.shape:
            raise ValueError("image and distance grids must share a shape")
    phi_g, phi_sigma, phi_d = uncertainty_loss_terms(
        u_clean, u_noisy, labels, distance, gradient, params, schedule, sampler, rng
    )
    total = phi_g + phi_sigma + phi_d
    tensor_in = isinstance(u_clean, Tensor) or any(isinstance(u, Tensor) for u in u_noisy)
    return total if tensor_in else float(total)
