"""Utility, degradation and stealthiness metrics."""

import numpy as np
from dataclasses import dataclass

from .engine.model import predict

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_RANGE = 1.0  # features live in [0, 1]


@dataclass
class AccuracyReport:
    overall: float
    per_class: list
    alpha1: float    # accuracy on the unlearned class after honest unlearning
    alpha2: float    # accuracy on the unlearned class after malicious unlearning
    degradation: float = None

    def __post_init__(self):
        if self.degradation is None:
            self.degradation = self.alpha1 - self.alpha2

    def to_dict(self):
        return {
            "overall": self.overall,
            "per_class": list(self.per_class),
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "degradation": self.degradation,
        }


@dataclass
class PredictionHistogram:
    counts: list

    @property
    def total(self):
        return int(sum(self.counts))

    def to_dict(self):
        return {"counts": [int(c) for c in self.counts], "total": self.total}


def accuracy(model, ds) -> float:
    preds = predict(model, ds.features.astype(model.dtype))
    return float((preds == ds.labels).mean())


def per_class_accuracy(model, ds):
    """Accuracy per class (nan where the class is absent from ds)."""
    preds = predict(model, ds.features.astype(model.dtype))
    correct = preds == ds.labels
    out = np.full(model.class_count, np.nan)
    for c in range(model.class_count):
        mask = ds.labels == c
        if mask.any():
            out[c] = correct[mask].mean()
    return out


def over_unlearning_detected(alpha1, alpha2):
    """True iff the malicious-unlearn accuracy fell below the honest one."""
    for name, v in (("alpha1", alpha1), ("alpha2", alpha2)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {v}")
    margin = alpha1 - alpha2
    return alpha2 < alpha1, margin


def prediction_histogram(model, eval_subset) -> PredictionHistogram:
    if len(eval_subset) == 0:
        raise ValueError("evaluation subset must be nonempty")
    preds = predict(model, eval_subset.features.astype(model.dtype))
    counts = np.bincount(preds, minlength=model.class_count)
    return PredictionHistogram(counts=[int(c) for c in counts])


# ---------------------------------------------------------------------------
# SSIM
# ---------------------------------------------------------------------------

def _gaussian_kernel(size, sigma):
    r = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


_KERNEL = _gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA)


def _filter_valid(img, kernel):
    """2-D correlation over fully-contained windows only."""
    k = kernel.shape[0]
    win = np.lib.stride_tricks.sliding_window_view(img, (k, k))
    return np.einsum("xykl,kl->xy", win, kernel)


def _ssim_channel(x, y):
    c1 = (SSIM_K1 * SSIM_RANGE) ** 2
    c2 = (SSIM_K2 * SSIM_RANGE) ** 2
    h, w = x.shape
    if min(h, w) < SSIM_WINDOW:
        # image smaller than the window: single global-statistics window
        mx, my = x.mean(), y.mean()
        vx, vy = x.var(), y.var()
        cov = ((x - mx) * (y - my)).mean()
        return ((2 * mx * my + c1) * (2 * cov + c2)) / (
            (mx * mx + my * my + c1) * (vx + vy + c2))
    mx = _filter_valid(x, _KERNEL)
    my = _filter_valid(y, _KERNEL)
    mxx = _filter_valid(x * x, _KERNEL)
    myy = _filter_valid(y * y, _KERNEL)
    mxy = _filter_valid(x * y, _KERNEL)
    vx = mxx - mx * mx
    vy = myy - my * my
    cov = mxy - mx * my
    ssim_map = ((2 * mx * my + c1) * (2 * cov + c2)) / (
        (mx * mx + my * my + c1) * (vx + vy + c2))
    return ssim_map.mean()


def ssim(a, b) -> float:
    """Structural similarity in [-1, 1] for [0, 1]-valued images.

    Gaussian-weighted 11x11 local statistics (sigma 1.5), averaged over all
    fully-contained windows and over channels. Images smaller than the window
    fall back to one global-statistics window.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    if a.ndim not in (2, 3):
        raise ValueError("ssim expects [H, W] or [H, W, C] images")
    for name, img in (("first", a), ("second", b)):
        if img.min() < -1e-9 or img.max() > 1 + 1e-9:
            raise ValueError(f"{name} image has values outside [0, 1]")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    vals = [_ssim_channel(a[..., c], b[..., c]) for c in range(a.shape[2])]
    return float(np.mean(vals))
