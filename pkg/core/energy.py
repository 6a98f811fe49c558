# core/energy.py
"""
Evaluation of the joint objective

    E = E_B + lambda_l * E_L + lambda_f * E_F

for any candidate set of layers and flows. E_B is the double-layer
brightness-constancy term, E_L the sparse-gradient layer prior and E_F the
TV or second-order TGV flow prior. All norms are anisotropic l1.
"""
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from core.config import Weights
from core.errors import BoundViolationError, ShapeMismatchError
from core.imaging import (
    FlowField,
    as_image,
    bilinear_stencil,
    check_same_shape,
    forward_mask,
    spatial_gradient,
    symmetrised_divergence,
    symmetrised_gradient,
)

logger = logging.getLogger(__name__)

# Auxiliary TGV field for one flow component: array (2, H, W) holding (w1, w2).
TgvAux = np.ndarray


@dataclass(eq=False)
class LayerDecomposition:
    """Background (l1, l1p) and foreground (l2, l2p) layers of a frame pair."""

    l1: np.ndarray
    l1p: np.ndarray
    l2: np.ndarray
    l2p: np.ndarray
    c: float = 0.25

    def __post_init__(self):
        self.l1 = as_image(self.l1, "l1")
        self.l1p = as_image(self.l1p, "l1p")
        self.l2 = as_image(self.l2, "l2")
        self.l2p = as_image(self.l2p, "l2p")
        check_same_shape(("l1", self.l1), ("l1p", self.l1p), ("l2", self.l2), ("l2p", self.l2p))
        if not 0.0 <= self.c <= 1.0:
            raise BoundViolationError(f"foreground bound c must lie in [0, 1], got {self.c}")

    @classmethod
    def from_foreground(cls, img, img_p, l2, l2p, c: float = 0.25) -> "LayerDecomposition":
        img = as_image(img, "I")
        img_p = as_image(img_p, "I'")
        l2 = as_image(l2, "l2")
        l2p = as_image(l2p, "l2p")
        return cls(img - l2, img_p - l2p, l2, l2p, c)

    @property
    def shape(self) -> Tuple[int, int, int]:
        return self.l1.shape

    def copy(self) -> "LayerDecomposition":
        return LayerDecomposition(self.l1.copy(), self.l1p.copy(), self.l2.copy(), self.l2p.copy(), self.c)

    def violations(self, img, img_p, tol: float = 1e-6) -> List[str]:
        """Human-readable list of additive-model and bound violations."""
        img = as_image(img, "I")
        img_p = as_image(img_p, "I'")
        check_same_shape(("I", img), ("l1", self.l1))
        check_same_shape(("I'", img_p), ("l1p", self.l1p))
        problems = []
        for name, lhs, frame in (("l1 + l2", self.l1 + self.l2, img), ("l1p + l2p", self.l1p + self.l2p, img_p)):
            err = float(np.max(np.abs(lhs - frame)))
            if err > tol:
                problems.append(f"{name} differs from its frame by up to {err:.3g}")
        for name, layer, frame in (("l2", self.l2, img), ("l2p", self.l2p, img_p)):
            lo = float(np.min(layer))
            if lo < -tol:
                problems.append(f"{name} drops to {lo:.3g} below zero")
            excess = float(np.max(layer - np.minimum(frame, self.c)))
            if excess > tol:
                problems.append(f"{name} exceeds min(frame, c={self.c}) by up to {excess:.3g}")
        return problems

    def check(self, img, img_p, tol: float = 1e-6) -> None:
        problems = self.violations(img, img_p, tol)
        if problems:
            raise BoundViolationError(
                "; ".join(problems) + " (pass repair=True / --repair-layers to clip the foreground into bounds)"
            )


@dataclass(frozen=True)
class EnergyBreakdown:
    e_b: float
    e_l: float
    e_f: float
    total: float
    masked_pixels: int = 0

    @classmethod
    def assemble(cls, e_b: float, e_l: float, e_f: float, weights: Weights, masked_pixels: int = 0):
        total = e_b + weights.lambda_l * e_l + weights.lambda_f * e_f
        return cls(float(e_b), float(e_l), float(e_f), float(total), int(masked_pixels))


# ==========================================
# DATA TERM
# ==========================================

def bcc_residual(frame0: np.ndarray, frame1: np.ndarray, flow: FlowField) -> Tuple[np.ndarray, np.ndarray]:
    """frame0(x) - frame1(x + flow(x)), zeroed where the warp leaves the image."""
    if frame0.shape[:2] != flow.shape:
        raise ShapeMismatchError(f"layer {frame0.shape[:2]} and flow {flow.shape} differ in size")
    stencil = bilinear_stencil(flow)
    resid = frame0 - stencil.sample(frame1)
    resid[~stencil.mask] = 0.0
    return resid, stencil.mask


def bcc_l1(frame0: np.ndarray, frame1: np.ndarray, flow: FlowField) -> Tuple[float, int]:
    resid, mask = bcc_residual(frame0, frame1, flow)
    return float(np.sum(np.abs(resid))), int(mask.size - np.count_nonzero(mask))


def _zero_flow_like(dec: LayerDecomposition) -> FlowField:
    return FlowField.zeros(dec.shape[0], dec.shape[1])


def data_term_detail(dec: LayerDecomposition, u: FlowField, v: Optional[FlowField] = None) -> Tuple[float, int]:
    """E_B and the number of (pixel, layer) pairs left out by the warp masks."""
    if v is None:
        v = _zero_flow_like(dec)
    e1, m1 = bcc_l1(dec.l1, dec.l1p, u)
    e2, m2 = bcc_l1(dec.l2, dec.l2p, v)
    return e1 + e2, m1 + m2


def data_term(dec: LayerDecomposition, u: FlowField, v: Optional[FlowField] = None) -> float:
    return data_term_detail(dec, u, v)[0]


# ==========================================
# PRIORS
# ==========================================

def anisotropic_tv(field: np.ndarray) -> float:
    gx, gy = spatial_gradient(field)
    return float(np.sum(np.abs(gx)) + np.sum(np.abs(gy)))


def layer_prior(dec: LayerDecomposition) -> float:
    return sum(anisotropic_tv(layer) for layer in (dec.l1, dec.l1p, dec.l2, dec.l2p))


def flow_prior_tv(flow: FlowField) -> float:
    return anisotropic_tv(flow.u) + anisotropic_tv(flow.v)


def replicated_gradient(p: np.ndarray) -> TgvAux:
    """Forward gradient of p with the missing last column/row copied from its neighbour."""
    gx, gy = spatial_gradient(p)
    if p.shape[1] > 1:
        gx[:, -1] = gx[:, -2]
    if p.shape[0] > 1:
        gy[-1] = gy[-2]
    return np.stack([gx, gy])


def tgv2_component(p: np.ndarray, w: TgvAux, alpha: Tuple[float, float]) -> float:
    """alpha1 * |M(grad p - w)|_1 + alpha0 * |E w|_1 for one scalar field."""
    if w.shape != (2,) + p.shape:
        raise ShapeMismatchError(f"auxiliary field has shape {w.shape}, expected {(2,) + p.shape}")
    alpha1, alpha0 = alpha
    mx, my = forward_mask(p.shape)
    gx, gy = spatial_gradient(p)
    first = np.sum(np.abs(mx * (gx - w[0]))) + np.sum(np.abs(my * (gy - w[1])))
    ea, eb, ec = symmetrised_gradient(w[0], w[1])
    second = np.sum(np.abs(ea)) + np.sum(np.abs(eb)) + np.sum(np.abs(ec))
    return float(alpha1 * first + alpha0 * second)


def _project(q: np.ndarray, bound: float) -> np.ndarray:
    return np.clip(q, -bound, bound)


def minimise_tgv2_aux(p: np.ndarray, alpha: Tuple[float, float], iters: int = 300) -> Tuple[float, TgvAux]:
    """Minimise tgv2_component over w by primal-dual iterations; returns the best (value, w) seen."""
    alpha1, alpha0 = alpha
    mx, my = forward_mask(p.shape)
    gx, gy = spatial_gradient(p)
    w = replicated_gradient(p)
    best_w = w.copy()
    best = tgv2_component(p, w, alpha)
    if best == 0.0:
        return best, best_w

    # ||[M; E]||^2 <= 1 + 12
    step = 0.99 / math.sqrt(13.0)
    q1 = np.zeros_like(w)
    q2 = np.zeros((3,) + p.shape)
    w_bar = w.copy()
    for _ in range(iters):
        q1[0] = _project(q1[0] + step * mx * (w_bar[0] - gx), alpha1)
        q1[1] = _project(q1[1] + step * my * (w_bar[1] - gy), alpha1)
        ea, eb, ec = symmetrised_gradient(w_bar[0], w_bar[1])
        q2[0] = _project(q2[0] + step * ea, alpha0)
        q2[1] = _project(q2[1] + step * eb, alpha0)
        q2[2] = _project(q2[2] + step * ec, alpha0)

        d1, d2 = symmetrised_divergence(q2[0], q2[1], q2[2])
        w_new = np.empty_like(w)
        w_new[0] = w[0] - step * (mx * q1[0] - d1)
        w_new[1] = w[1] - step * (my * q1[1] - d2)
        w_bar = 2.0 * w_new - w
        w = w_new

        value = tgv2_component(p, w, alpha)
        if value < best:
            best, best_w = value, w.copy()
    return best, best_w


def flow_prior_tgv2(flow: FlowField, w: Optional[Tuple[TgvAux, TgvAux]] = None,
                    alpha: Tuple[float, float] = (1.0, 2.0)) -> float:
    """TGV2 of both components. With w omitted the auxiliary fields are minimised internally."""
    if w is None:
        return minimise_tgv2_aux(flow.u, alpha)[0] + minimise_tgv2_aux(flow.v, alpha)[0]
    return tgv2_component(flow.u, w[0], alpha) + tgv2_component(flow.v, w[1], alpha)


def flow_prior(flow: FlowField, weights: Weights, aux: Optional[Tuple[TgvAux, TgvAux]] = None) -> float:
    if weights.tgv_order == 1:
        return flow_prior_tv(flow)
    return flow_prior_tgv2(flow, aux, weights.tgv_alpha)


# ==========================================
# TOTALS
# ==========================================

def flow_energy(frame0: np.ndarray, frame1: np.ndarray, flow: FlowField, weights: Weights) -> float:
    """Single-layer objective |frame0 - warp(frame1)|_1 + lambda_f * prior(flow)."""
    e_b, _ = bcc_l1(frame0, frame1, flow)
    return e_b + weights.lambda_f * flow_prior(flow, weights)


def total_energy(dec: LayerDecomposition, u: FlowField, v: Optional[FlowField] = None,
                 weights: Optional[Weights] = None, tgv_aux=None) -> EnergyBreakdown:
    """Full objective. v=None is the static case: zero second flow and no V prior term.

    tgv_aux is an optional (aux of u, aux of v) pair, each entry None or the
    (w for u-component, w for v-component) fields; missing ones are minimised out.
    """
    weights = weights or Weights()
    aux_u, aux_v = tgv_aux if tgv_aux is not None else (None, None)
    e_b, masked = data_term_detail(dec, u, v)
    e_l = layer_prior(dec)
    e_f = flow_prior(u, weights, aux_u)
    if v is not None:
        e_f += flow_prior(v, weights, aux_v)
    return EnergyBreakdown.assemble(e_b, e_l, e_f, weights, masked)
