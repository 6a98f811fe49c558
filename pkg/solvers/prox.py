# solvers/prox.py
"""
Proximal steps of the relaxed flow problem.

The data step minimises |rho(w)| + |w - aux|^2 / (2 theta) pixel by pixel
for the linearised brightness residual rho. The smoothness steps solve the
TV-L2 (ROF) and TGV2-L2 problems with first-order primal-dual iterations on
the forward-difference grid of core.imaging.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, List, Optional, Tuple

import numpy as np

from core.energy import anisotropic_tv, replicated_gradient, tgv2_component
from core.errors import ShapeMismatchError
from core.imaging import (
    FlowField,
    as_image,
    bilinear_stencil,
    central_gradient,
    divergence,
    forward_mask,
    gaussian_blur,
    spatial_gradient,
    symmetrised_divergence,
    symmetrised_gradient,
)

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1.0 / math.sqrt(8.0)
# ||K||^2 bound for the stacked TGV2 operator, against 8 for the plain gradient
_TGV_NORM2 = 21.0


# ==========================================
# DATA TERM
# ==========================================

@dataclass(eq=False)
class Linearization:
    """First-order expansion of frame1(x + w) - frame0(x) around a base flow.

    rho(w) = offset + gx * w_u + gy * w_v per channel; mask marks pixels whose
    base warp stays inside the image.
    """

    offset: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    mask: np.ndarray

    def residual(self, flow: FlowField) -> np.ndarray:
        return self.offset + self.gx * flow.u[..., None] + self.gy * flow.v[..., None]


def linearize(frame0, frame1, base: FlowField, blur: float = 0.5) -> Linearization:
    frame0 = as_image(frame0, "frame0")
    frame1 = as_image(frame1, "frame1")
    if frame0.shape != frame1.shape or frame0.shape[:2] != base.shape:
        raise ShapeMismatchError(f"frames {frame0.shape}/{frame1.shape} and flow {base.shape} do not match")
    stencil = bilinear_stencil(base)
    warped = stencil.sample(frame1)
    gx, gy = central_gradient(gaussian_blur(frame1, blur))
    gx = stencil.sample(gx)
    gy = stencil.sample(gy)
    offset = warped - frame0 - gx * base.u[..., None] - gy * base.v[..., None]
    return Linearization(offset=offset, gx=gx, gy=gy, mask=stencil.mask)


def _threshold_gray(lin: Linearization, aux: FlowField, theta: float) -> FlowField:
    gx = lin.gx[..., 0]
    gy = lin.gy[..., 0]
    rho = lin.residual(aux)[..., 0]
    grad2 = gx * gx + gy * gy
    informative = (grad2 > 0.0) & lin.mask
    safe = np.where(informative, grad2, 1.0)

    step = np.where(rho < -theta * grad2, theta,
                    np.where(rho > theta * grad2, -theta, -rho / safe))
    step = np.where(informative, step, 0.0)
    return FlowField(aux.u + step * gx, aux.v + step * gy)


def _threshold_color(lin: Linearization, aux: FlowField, theta: float) -> FlowField:
    gx, gy = lin.gx, lin.gy
    # dominant direction of the summed structure tensor
    a = np.sum(gx * gx, axis=-1)
    b = np.sum(gx * gy, axis=-1)
    c = np.sum(gy * gy, axis=-1)
    lam = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    dx = np.where(b != 0.0, lam - c, np.where(a >= c, 1.0, 0.0))
    dy = np.where(b != 0.0, b, np.where(a >= c, 0.0, 1.0))
    norm = np.hypot(dx, dy)
    informative = (lam > 0.0) & lin.mask & (norm > 0.0)
    norm = np.where(norm > 0.0, norm, 1.0)
    dx, dy = dx / norm, dy / norm

    rho0 = lin.residual(aux)                            # (H, W, C)
    slope = gx * dx[..., None] + gy * dy[..., None]     # d rho / d t

    # phi(t) = sum_c |rho0_c + t slope_c| + t^2 / (2 theta) is convex piecewise
    # quadratic, so its minimiser is a breakpoint or a stationary point of one piece.
    candidates = [np.zeros_like(a)]
    safe_slope = np.where(slope != 0.0, slope, 1.0)
    for ch in range(slope.shape[-1]):
        candidates.append(np.where(slope[..., ch] != 0.0, -rho0[..., ch] / safe_slope[..., ch], 0.0))
    for signs in np.ndindex(*(2,) * slope.shape[-1]):
        s = np.array([1.0 if bit else -1.0 for bit in signs])
        candidates.append(-theta * np.sum(s * slope, axis=-1))
    t = np.stack(candidates)                            # (K, H, W)

    phi = np.sum(np.abs(rho0[None] + t[..., None] * slope[None]), axis=-1) + t * t / (2.0 * theta)
    best = np.take_along_axis(t, np.argmin(phi, axis=0)[None], axis=0)[0]
    best = np.where(informative, best, 0.0)
    return FlowField(aux.u + best * dx, aux.v + best * dy)


def threshold_step(lin: Linearization, aux: FlowField, theta: float) -> FlowField:
    """Per-pixel minimiser of |rho(w)|_1 + |w - aux|^2 / (2 theta) for a fixed linearisation."""
    if lin.gx.shape[-1] == 1:
        return _threshold_gray(lin, aux, theta)
    return _threshold_color(lin, aux, theta)


def data_prox(frame0, frame1, base_flow: FlowField, aux_flow: FlowField, theta: float,
              blur: float = 0.5) -> FlowField:
    return threshold_step(linearize(frame0, frame1, base_flow, blur), aux_flow, theta)


def data_prox_objective(lin: Linearization, w: FlowField, aux: FlowField, theta: float) -> np.ndarray:
    """Per-pixel value of the data-step objective; masked pixels count only the coupling."""
    rho = np.sum(np.abs(lin.residual(w)), axis=-1)
    rho = np.where(lin.mask, rho, 0.0)
    return rho + ((w.u - aux.u) ** 2 + (w.v - aux.v) ** 2) / (2.0 * theta)


# ==========================================
# SMOOTHNESS TERM
# ==========================================

# the duality gap is evaluated every this many primal-dual iterations when a tolerance is set
_GAP_EVERY = 10


@dataclass
class ProxResult:
    flow: FlowField
    gap: float
    # solver state for both components, passed back as a warm start
    duals: List[Any] = field(default_factory=list)
    # TGV2 auxiliary fields (w for u, w for v); None for TV
    aux: Optional[Tuple[np.ndarray, np.ndarray]] = None
    iterations: int = 0


def _stack(target: FlowField) -> np.ndarray:
    return np.stack([target.u, target.v], axis=-1)


def _unstack(stacked: np.ndarray) -> FlowField:
    return FlowField(stacked[..., 0].copy(), stacked[..., 1].copy())


def _rof_gap(f: np.ndarray, u: np.ndarray, p: np.ndarray, weight: float) -> float:
    div_p = divergence(p[0], p[1])
    primal = weight * anisotropic_tv(u) + 0.5 * float(np.sum((u - f) ** 2))
    dual_value = -float(np.sum(f * div_p)) - 0.5 * float(np.sum(div_p ** 2))
    return primal - dual_value


def _rof(f: np.ndarray, weight: float, iters: int, tau: float, sigma: float,
         dual: Optional[np.ndarray], tol: float) -> Tuple[np.ndarray, float, np.ndarray, int]:
    """Accelerated primal-dual for weight * TV(u) + 0.5 |u - f|^2 on stacked (H, W, K) fields."""
    if dual is None:
        p = np.zeros((2,) + f.shape)
        u = f.copy()
    else:
        p = np.clip(dual, -weight, weight)
        u = f + divergence(p[0], p[1])
    limit = tol * f.size
    if tol > 0.0 and dual is not None:
        gap = _rof_gap(f, u, p, weight)
        if gap <= limit:
            return u, gap, p, 0

    u_bar = u.copy()
    gap = None
    done = 0
    for done in range(1, iters + 1):
        gx, gy = spatial_gradient(u_bar)
        p[0] = np.clip(p[0] + sigma * gx, -weight, weight)
        p[1] = np.clip(p[1] + sigma * gy, -weight, weight)
        u_new = (u + tau * divergence(p[0], p[1]) + tau * f) / (1.0 + tau)
        # data term is 1-strongly convex
        step = 1.0 / math.sqrt(1.0 + 2.0 * tau)
        tau *= step
        sigma /= step
        u_bar = u_new + step * (u_new - u)
        u = u_new
        gap = None
        if tol > 0.0 and done % _GAP_EVERY == 0:
            gap = _rof_gap(f, u, p, weight)
            if gap <= limit:
                break

    if gap is None:
        gap = _rof_gap(f, u, p, weight)
    return u, gap, p, done


def smooth_prox_tv(target: FlowField, weight: float, iters: int = 50,
                   steps: Tuple[float, float] = (DEFAULT_STEP, DEFAULT_STEP),
                   duals: Optional[List[np.ndarray]] = None, tol: float = 0.0) -> ProxResult:
    """Approximate argmin of weight * TV(flow) + 0.5 |flow - target|^2.

    Both components share one primal-dual loop. With tol > 0 the loop stops
    as soon as the duality gap per pixel and component falls to tol.
    """
    if weight <= 0.0:
        return ProxResult(FlowField(target.u.copy(), target.v.copy()), 0.0, [None])
    tau, sigma = steps
    dual = duals[0] if duals else None
    u, gap, p, done = _rof(_stack(target), weight, iters, tau, sigma, dual, tol)
    return ProxResult(_unstack(u), gap, [p], iterations=done)


def _tgv_gap(f, u, w, p, q, weight, alpha, masks) -> float:
    # gap of the u-problem with w held at its current value
    mx, my = masks
    mp0, mp1 = mx * p[0], my * p[1]
    div_p = divergence(mp0, mp1)
    ea, eb, ec = symmetrised_gradient(w[0], w[1])
    primal = weight * tgv2_component(u, w, alpha) + 0.5 * float(np.sum((u - f) ** 2))
    dual_value = (-float(np.sum(f * div_p)) - 0.5 * float(np.sum(div_p ** 2))
                  - float(np.sum(mp0 * w[0] + mp1 * w[1]))
                  + float(np.sum(q[0] * ea + q[1] * eb + q[2] * ec)))
    return primal - dual_value


def _tgv(f: np.ndarray, weight: float, alpha: Tuple[float, float], iters: int,
         tau: float, sigma: float, state: Optional[dict], tol: float):
    """Primal-dual for weight * TGV2_alpha(u) + 0.5 |u - f|^2 over (u, w), stacked (H, W, K) fields."""
    alpha1, alpha0 = alpha
    b1, b0 = weight * alpha1, weight * alpha0
    mx, my = forward_mask(f.shape)
    if state is None:
        p = np.zeros((2,) + f.shape)
        q = np.zeros((3,) + f.shape)
        w = replicated_gradient(f)
    else:
        p, q, w = state["p"].copy(), state["q"].copy(), state["w"].copy()
    u = f.copy()
    u_bar, w_bar = u.copy(), w.copy()
    limit = tol * f.size

    gap = None
    done = 0
    for done in range(1, iters + 1):
        gx, gy = spatial_gradient(u_bar)
        p[0] = np.clip(p[0] + sigma * mx * (gx - w_bar[0]), -b1, b1)
        p[1] = np.clip(p[1] + sigma * my * (gy - w_bar[1]), -b1, b1)
        ea, eb, ec = symmetrised_gradient(w_bar[0], w_bar[1])
        q[0] = np.clip(q[0] + sigma * ea, -b0, b0)
        q[1] = np.clip(q[1] + sigma * eb, -b0, b0)
        q[2] = np.clip(q[2] + sigma * ec, -b0, b0)

        mp0, mp1 = mx * p[0], my * p[1]
        u_new = (u + tau * divergence(mp0, mp1) + tau * f) / (1.0 + tau)
        d1, d2 = symmetrised_divergence(q[0], q[1], q[2])
        w_new = np.stack([w[0] + tau * (mp0 + d1), w[1] + tau * (mp1 + d2)])
        u_bar = 2.0 * u_new - u
        w_bar = 2.0 * w_new - w
        u, w = u_new, w_new
        gap = None
        if tol > 0.0 and done % _GAP_EVERY == 0:
            gap = _tgv_gap(f, u, w, p, q, weight, alpha, (mx, my))
            if gap <= limit:
                break

    if gap is None:
        gap = _tgv_gap(f, u, w, p, q, weight, alpha, (mx, my))
    return u, gap, {"p": p, "q": q, "w": w}, done


def smooth_prox_tgv2(target: FlowField, weight: float, alpha: Tuple[float, float] = (1.0, 2.0),
                     iters: int = 50, steps: Tuple[float, float] = (DEFAULT_STEP, DEFAULT_STEP),
                     duals: Optional[List[dict]] = None, tol: float = 0.0) -> ProxResult:
    """Approximate argmin of weight * TGV2(flow) + 0.5 |flow - target|^2 with auxiliary fields."""
    if weight <= 0.0:
        aux = (replicated_gradient(target.u), replicated_gradient(target.v))
        return ProxResult(FlowField(target.u.copy(), target.v.copy()), 0.0, [None], aux)
    # rescale steps chosen for ||grad||^2 <= 8 to the larger stacked operator
    shrink = math.sqrt(8.0 / _TGV_NORM2)
    tau, sigma = steps[0] * shrink, steps[1] * shrink
    state = duals[0] if duals else None
    u, gap, state, done = _tgv(_stack(target), weight, alpha, iters, tau, sigma, state, tol)
    w = state["w"]
    return ProxResult(_unstack(u), gap, [state], (w[..., 0].copy(), w[..., 1].copy()), done)
