"""Deterministic concentric-disk segmentation phantoms.

Each sample is a nested-disk label map (background / ring / core by default)
whose interfaces carry independently controllable intensity steps. Around the
circle, narrow arcs get sharp, full-amplitude transitions while the rest of
the interface is rendered as a wide smooth ramp with reduced amplitude: the
regions stay separable by intensity level everywhere (so segmentation remains
learnable) while the local gradient response varies strongly along the same
boundary. A smooth low-frequency texture keeps the background non-trivial
without competing with injected noise. Everything derives from (seed, index),
so datasets regenerate bit-identically.
"""

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import special

from .grids import LabelGrid, ScalarGrid, save_grid
from .metrics import gaussian_blur

_MARGIN = 3.0  # minimum pixel gap between nested interfaces and the border


@dataclass(frozen=True)
class PhantomSpec:
    height: int = 64
    width: int = 64
    num_classes: int = 3
    contrast: tuple = (0.42, 0.2)  # outer-to-inner interface amplitudes
    contrast_mod: float = 0.5  # amplitude modulation depth in [0, 1)
    contrast_mod_sharpness: float = 10.0  # >1 narrows the strong-contrast arcs
    edge_width_sharp: float = 0.6  # transition scale (px) on strong arcs
    edge_width_wide: float = 4.0  # transition scale (px) elsewhere
    texture_amp: float = 0.06
    pre_blur: float = 0.3
    center_jitter: float = 4.0
    outer_radius_range: tuple = (0.28, 0.36)  # fraction of min(h, w)
    inner_radius_range: tuple = (0.45, 0.62)  # fraction of the enclosing radius
    base_intensity: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if len(self.contrast) != self.num_classes - 1:
            raise ValueError("need one contrast amplitude per interface")
        if any(a < 0 for a in self.contrast):
            raise ValueError("contrast amplitudes must be >= 0")
        if not 0.0 <= self.contrast_mod < 1.0:
            raise ValueError("contrast_mod must lie in [0, 1)")
        if self.contrast_mod_sharpness <= 0:
            raise ValueError("contrast_mod_sharpness must be positive")
        if self.edge_width_sharp <= 0 or self.edge_width_wide < self.edge_width_sharp:
            raise ValueError("need 0 < edge_width_sharp <= edge_width_wide")
        top = self.base_intensity + sum(self.contrast) + 2.0 * self.texture_amp
        if top > 1.0 or self.base_intensity - 2.0 * self.texture_amp < 0.0:
            raise ValueError("intensity construction must stay within [0, 1]")
        rmax = self.outer_radius_range[1] * min(self.height, self.width)
        if rmax + self.center_jitter + _MARGIN > min(self.height, self.width) / 2.0:
            raise ValueError("radii incompatible with image size")


def _rng_for(spec: PhantomSpec, index: int):
    return np.random.default_rng(np.random.SeedSequence([spec.seed, int(index)]))


def generate(spec: PhantomSpec, index: int):
    """One (image, labels) pair, a pure function of (spec.seed, index)."""
    rng = _rng_for(spec, index)
    h, w = spec.height, spec.width
    cy = h / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter)
    cx = w / 2.0 + rng.uniform(-spec.center_jitter, spec.center_jitter)

    radii = []
    outer = rng.uniform(*spec.outer_radius_range) * min(h, w)
    radii.append(outer)
    for _ in range(spec.num_classes - 2):
        inner = rng.uniform(*spec.inner_radius_range) * radii[-1]
        inner = min(inner, radii[-1] - _MARGIN)
        radii.append(inner)
    if radii[-1] < _MARGIN:
        raise ValueError("radii incompatible with image size")

    # texture and modulation draws happen before amplitudes are applied, so
    # amplitude sweeps reuse identical geometry and noise
    tex_freq = rng.integers(2, 6, size=4)
    tex_phase = rng.uniform(0.0, 2.0 * math.pi, size=4)
    mod_phase = rng.uniform(0.0, 2.0 * math.pi, size=len(radii))

    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    rho = np.hypot(rr - cy, cc - cx)
    theta = np.arctan2(rr - cy, cc - cx)

    labels = np.zeros((h, w), dtype=np.int64)
    for k, radius in enumerate(radii):
        labels[rho <= radius] = k + 1

    image = np.full((h, w), spec.base_intensity, dtype=np.float64)
    for k, radius in enumerate(radii):
        # bump -> 1 only near the strong-contrast phase; sharpness narrows it
        bump = (0.5 + 0.5 * np.cos(theta - mod_phase[k])) ** spec.contrast_mod_sharpness
        amp = spec.contrast[k] * (1.0 - spec.contrast_mod * (1.0 - bump))
        width = spec.edge_width_wide - (spec.edge_width_wide - spec.edge_width_sharp) * bump
        image += amp * special.expit((radius - rho) / width)
    image += spec.texture_amp * (
        np.cos(2.0 * math.pi * tex_freq[0] * rr / h + tex_phase[0])
        * np.cos(2.0 * math.pi * tex_freq[1] * cc / w + tex_phase[1])
        + np.cos(2.0 * math.pi * tex_freq[2] * rr / h + tex_phase[2])
        * np.cos(2.0 * math.pi * tex_freq[3] * cc / w + tex_phase[3])
    )

    grid = ScalarGrid(np.clip(image, 0.0, 1.0))
    if spec.pre_blur > 0:
        grid = gaussian_blur(grid, spec.pre_blur)
    return grid, LabelGrid(labels, spec.num_classes)


def generate_split(spec: PhantomSpec, n_train: int, n_val: int, n_test: int, out_dir):
    """Write disjoint train/val/test phantoms plus one manifest per split."""
    if min(n_train, n_val, n_test) < 1:
        raise ValueError("every split needs at least one sample")
    os.makedirs(out_dir, exist_ok=True)
    ranges = {
        "train": range(0, n_train),
        "val": range(n_train, n_train + n_val),
        "test": range(n_train + n_val, n_train + n_val + n_test),
    }
    manifests = {}
    for name, idx_range in ranges.items():
        lines = [f"# seed={spec.seed} size={spec.height}x{spec.width}"]
        for i in idx_range:
            image, labels = generate(spec, i)
            img_name = f"img_{i:05d}.grid"
            lab_name = f"lab_{i:05d}.grid"
            save_grid(image, os.path.join(out_dir, img_name))
            save_grid(labels, os.path.join(out_dir, lab_name))
            lines.append(f"{img_name}\t{lab_name}")
        manifest = os.path.join(out_dir, f"{name}.txt")
        with open(manifest, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        manifests[name] = manifest
    return manifests


def load_manifest(path, num_classes=None):
    """Read a manifest into memory as (image, labels) pairs."""
    from .grids import load_grid

    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            img_rel, lab_rel = line.split("\t")
            image = load_grid(os.path.join(base, img_rel))
            labels = load_grid(os.path.join(base, lab_rel), num_classes=num_classes)
            pairs.append((image, labels))
    if not pairs:
        raise ValueError(f"manifest {path} lists no samples")
    return pairs
