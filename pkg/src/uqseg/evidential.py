"""Dirichlet evidence head and the segmentation objective.

Evidence maps turn into per-pixel Dirichlet concentrations alpha = e + W*r with
a frequency-based base rate r and W = C. Expected probabilities are alpha/S and
vacuity u = C/S. The segmentation loss combines the digamma-expected
cross-entropy, a Dice term on expected probabilities, and a Dirichlet KL that
penalizes evidence on wrong classes; the KL weight and the Dice/supervision
trade-off follow fixed epoch schedules.
"""

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .grids import LabelGrid, ScalarGrid

DICE_SMOOTH = 1e-5


@dataclass(frozen=True)
class BaseRate:
    r: np.ndarray  # (C,), positive, sums to 1

    def __post_init__(self):
        r = np.asarray(self.r, dtype=np.float64)
        if r.ndim != 1 or r.size < 2:
            raise ValueError("base rate must be a vector with >= 2 entries")
        if np.any(r < 0) or abs(float(r.sum()) - 1.0) > 1e-9:
            raise ValueError("base rate must be a probability vector")
        object.__setattr__(self, "r", r)

    @property
    def num_classes(self):
        return self.r.size


@dataclass(frozen=True)
class DirichletField:
    """Per-pixel concentrations, shape (C, H, W); alpha may be a Tensor."""

    alpha: object
    weight: float

    def _data(self):
        return self.alpha.data if isinstance(self.alpha, Tensor) else np.asarray(self.alpha)


def base_rate_from_labels(label_grids, eps: float = 1.0) -> BaseRate:
    """Smoothed class-frequency prior: r_c = (count_c + eps) / (total + C*eps)."""
    if not label_grids:
        raise ValueError("need at least one label grid")
    num_classes = label_grids[0].num_classes
    counts = np.zeros(num_classes, dtype=np.float64)
    total = 0
    for g in label_grids:
        if g.num_classes != num_classes:
            raise ValueError("inconsistent class counts across label grids")
        counts += np.bincount(g.labels.ravel(), minlength=num_classes)
        total += g.labels.size
    return BaseRate((counts + eps) / (total + num_classes * eps))


def dirichlet_from_evidence(evidence, base_rate: BaseRate, weight: float) -> DirichletField:
    """alpha = evidence + W * r, with W broadcast over classes."""
    prior = weight * base_rate.r
    if isinstance(evidence, Tensor):
        if np.any(evidence.data < 0):
            raise ValueError("evidence must be non-negative")
        alpha = evidence + prior[:, None, None]
    else:
        ev = np.asarray(evidence, dtype=np.float64)
        if np.any(ev < 0):
            raise ValueError("evidence must be non-negative")
        alpha = ev + prior.reshape((-1,) + (1,) * (ev.ndim - 1))
    return DirichletField(alpha=alpha, weight=float(weight))


def expected_prob_and_uncertainty(field: DirichletField):
    """Expected class probabilities alpha/S and vacuity u = C/S (numpy path)."""
    alpha = field._data()
    num_classes = alpha.shape[0]
    strength = alpha.sum(axis=0)
    probs = alpha / strength
    u = num_classes / strength
    if u.ndim == 2:
        return probs, ScalarGrid(u)
    return probs, u


def one_hot(labels: LabelGrid) -> np.ndarray:
    y = np.zeros((labels.num_classes,) + labels.labels.shape, dtype=np.float64)
    for c in range(labels.num_classes):
        y[c] = labels.labels == c
    return y


def _as_tensor(alpha):
    return alpha if isinstance(alpha, Tensor) else Tensor(np.asarray(alpha, dtype=np.float64))


def _maybe_float(value, alpha):
    return value if isinstance(alpha, Tensor) else float(value)


def evidential_ce_loss(field: DirichletField, labels: LabelGrid):
    """Dirichlet-expected cross-entropy: mean_i sum_c y_ic (psi(S_i) - psi(alpha_ic))."""
    alpha = _as_tensor(field.alpha)
    y = one_hot(labels)
    strength = alpha.sum(axis=0)
    per_class = strength.digamma().reshape((1,) + strength.shape) - alpha.digamma()
    loss = (per_class * y).sum() * (1.0 / y[0].size)
    return _maybe_float(loss, field.alpha)


def evidential_dice_loss(probs, labels: LabelGrid):
    """Soft Dice loss on expected probabilities over foreground classes.

    Classes absent from the labels are skipped; with no foreground present the
    loss is 0 by convention.
    """
    y = one_hot(labels)
    present = [c for c in range(1, labels.num_classes) if y[c].sum() > 0]
    if not present:
        return 0.0 if not isinstance(probs, Tensor) else Tensor(0.0)
    p = probs if isinstance(probs, Tensor) else Tensor(np.asarray(probs, dtype=np.float64))
    total = None
    for c in present:
        pc = p[c]
        inter = (pc * y[c]).sum()
        denom = pc.sum() + float(y[c].sum())
        dice = (2.0 * inter + DICE_SMOOTH) / (denom + DICE_SMOOTH)
        total = dice if total is None else total + dice
    loss = 1.0 - total * (1.0 / len(present))
    return _maybe_float(loss, probs)


def kl_regularizer(field: DirichletField, labels: LabelGrid):
    """KL(Dir(alpha_tilde) || Dir(1)) averaged over pixels.

    alpha_tilde strips true-class evidence: alpha_tilde = y + (1 - y) * alpha,
    so the term only penalizes concentration on wrong classes.
    """
    alpha = _as_tensor(field.alpha)
    y = one_hot(labels)
    num_classes = labels.num_classes
    at = alpha * (1.0 - y) + y
    st = at.sum(axis=0)
    log_norm = st.gammaln() - at.gammaln().sum(axis=0) - math.lgamma(num_classes)
    inner = (at - 1.0) * (at.digamma() - st.digamma().reshape((1,) + st.shape))
    loss = (log_norm + inner.sum(axis=0)).sum() * (1.0 / y[0].size)
    return _maybe_float(loss, field.alpha)


def kl_weight(epoch: int) -> float:
    """Annealed KL coefficient: min(1, t/20)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return min(1.0, epoch / 20.0)


def anneal_alpha(epoch: int, total_epochs: int, alpha0: float = 0.01) -> float:
    """Exponential ramp alpha0 -> 1 over training: alpha0 * exp(-(ln alpha0 / T) t)."""
    if not 0.0 < alpha0 < 1.0:
        raise ValueError("alpha0 must lie in (0, 1)")
    if total_epochs <= 0 or not 0 <= epoch <= total_epochs:
        raise ValueError("need 0 <= epoch <= total_epochs")
    return alpha0 * math.exp(-(math.log(alpha0) / total_epochs) * epoch)


def total_loss(field: DirichletField, labels: LabelGrid, uncertainty_loss,
               lam_ce: float, lam_dice: float, lam_kl: float):
    """Full objective: lam_ce*CE + lam_dice*Dice + lam_kl*KL + L_u."""
    probs_source = field.alpha
    if isinstance(probs_source, Tensor):
        strength = probs_source.sum(axis=0)
        probs = probs_source / strength.reshape((1,) + strength.shape)
    else:
        probs, _ = expected_prob_and_uncertainty(field)
    ce = evidential_ce_loss(field, labels)
    dice = evidential_dice_loss(probs, labels)
    kl = kl_regularizer(field, labels)
    return lam_ce * ce + lam_dice * dice + lam_kl * kl + uncertainty_loss
