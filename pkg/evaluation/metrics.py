# evaluation/metrics.py
import logging
from typing import Optional, Tuple

import numpy as np

from core.errors import ShapeMismatchError
from core.imaging import FlowField, as_image, check_same_shape, spatial_gradient, warp_backward

logger = logging.getLogger(__name__)


def epe_mean(est: FlowField, gt: FlowField, mask: Optional[np.ndarray] = None) -> float:
    """Mean end-point error over the pixels where mask is True (all pixels by default)."""
    if est.shape != gt.shape:
        raise ShapeMismatchError(f"estimated flow {est.shape} vs ground truth {gt.shape}")
    err = np.hypot(est.u - gt.u, est.v - gt.v)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != err.shape:
            raise ShapeMismatchError(f"mask {mask.shape} vs flow {err.shape}")
        err = err[mask]
    if err.size == 0:
        return float("nan")
    return float(np.mean(err))


def layer_error_ncc(gt_l2, est_l2) -> float:
    """1 - global zero-mean NCC. A constant argument counts as uncorrelated (error 1)."""
    gt_l2 = as_image(gt_l2, "gt_l2")
    est_l2 = as_image(est_l2, "est_l2")
    check_same_shape(("gt_l2", gt_l2), ("est_l2", est_l2))
    a = gt_l2.ravel() - gt_l2.mean()
    b = est_l2.ravel() - est_l2.mean()
    na = np.sqrt(np.sum(a * a))
    nb = np.sqrt(np.sum(b * b))
    if na < 1e-12 or nb < 1e-12:
        return 1.0
    ncc = float(np.sum(a * b) / (na * nb))
    return 1.0 - float(np.clip(ncc, -1.0, 1.0))


def warping_error(l, lp, flow: FlowField) -> float:
    """Mean over valid pixels of |l(x + flow(x)) - lp(x)|_2 across channels, in gray levels."""
    l = as_image(l, "l")
    lp = as_image(lp, "lp")
    check_same_shape(("l", l), ("lp", lp))
    warped, mask = warp_backward(l, flow)
    per_pixel = np.sqrt(np.sum((warped - lp) ** 2, axis=-1))
    if not np.any(mask):
        return float("nan")
    return float(np.mean(per_pixel[mask]) * 255.0)


def gradient_magnitudes(img) -> np.ndarray:
    img = as_image(img)
    gx, gy = spatial_gradient(img)
    return np.hypot(gx, gy).ravel()


def gradient_sparsity(img, threshold: float = 1e-3) -> float:
    """Fraction of forward-difference gradient magnitudes below threshold."""
    return float(np.mean(gradient_magnitudes(img) < threshold))


def gradient_histogram(img, bins: int = 50, max_mag: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Log-density histogram of gradient magnitudes; returns (log_density, bin_edges)."""
    mags = gradient_magnitudes(img)
    top = max_mag if max_mag is not None else max(float(mags.max()), 1e-6)
    density, edges = np.histogram(mags, bins=bins, range=(0.0, top), density=True)
    return np.log(np.maximum(density, 1e-12)), edges
