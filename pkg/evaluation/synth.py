# evaluation/synth.py
"""
Synthetic double-layer instances with exact ground truth.

A textured background moves with U, a sparse-gradient foreground (rain
streaks or flat shapes) stays put or moves with V, and both frames are
built so that L1(x) = L1'(x + U(x)) and L2(x) = L2'(x + V(x)) hold up to
interpolation accuracy (exactly for integer flows). All layers sit on the
16-bit code lattice so they survive a PNG round trip unchanged.
"""
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple, Union

import cv2
import numpy as np
from scipy import ndimage

from core.config import Mode
from core.energy import LayerDecomposition, data_term
from core.errors import BoundViolationError, ConfigError
from core.imaging import FlowField, as_image, compose, gaussian_blur

logger = logging.getLogger(__name__)

LATTICE = 65535.0
FOREGROUND_HEADROOM = 0.8   # foreground peaks at this fraction of c
# static scenes: background squeezed into this range so streaks at 0.8 c dominate its texture
RAIN_BACKGROUND = (0.3, 0.55)
RAIN_PIXELS_PER_STREAK = 180


# ==========================================
# GROUND-TRUTH MOTION
# ==========================================

@dataclass(frozen=True)
class ConstantFlow:
    dx: float
    dy: float


@dataclass(frozen=True)
class AffineFlow:
    """2x3 matrix (a11, a12, b1, a21, a22, b2) acting on image-centred coordinates."""

    params: Tuple[float, float, float, float, float, float] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


@dataclass(frozen=True)
class SmoothRandomFlow:
    amplitude: float
    smoothness: float = 8.0
    seed: int = 0


FlowKind = Union[ConstantFlow, AffineFlow, SmoothRandomFlow]


def make_flow(kind: FlowKind, h: int, w: int) -> FlowField:
    if isinstance(kind, ConstantFlow):
        return FlowField(np.full((h, w), float(kind.dx)), np.full((h, w), float(kind.dy)))

    if isinstance(kind, AffineFlow):
        a11, a12, b1, a21, a22, b2 = kind.params
        ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
        xc = xs - (w - 1) / 2.0
        yc = ys - (h - 1) / 2.0
        return FlowField(a11 * xc + a12 * yc + b1 - xc, a21 * xc + a22 * yc + b2 - yc)

    if isinstance(kind, SmoothRandomFlow):
        if kind.amplitude > min(h, w) / 4.0:
            raise ConfigError(f"amplitude {kind.amplitude} exceeds a quarter of the image ({min(h, w) / 4.0})")
        rng = np.random.default_rng(kind.seed)
        noise = rng.standard_normal((2, h, w))
        u = ndimage.gaussian_filter(noise[0], kind.smoothness, mode="reflect")
        v = ndimage.gaussian_filter(noise[1], kind.smoothness, mode="reflect")
        peak = float(np.max(np.hypot(u, v)))
        scale = kind.amplitude / peak if peak > 0 else 0.0
        return FlowField(u * scale, v * scale)

    raise ConfigError(f"unknown flow kind {kind!r}")


# ==========================================
# RENDERING
# ==========================================

@dataclass(eq=False)
class GroundTruthBundle:
    img: np.ndarray
    img_p: np.ndarray
    gt_dec: LayerDecomposition
    gt_u: FlowField
    gt_v: FlowField
    mode: Mode
    seed: int = 0
    name: str = ""

    @property
    def channels(self) -> int:
        return self.img.shape[2]

    @property
    def size(self) -> Tuple[int, int]:
        return self.img.shape[:2]

    def bcc_error(self) -> float:
        """Mean absolute double-layer BCC residual per pixel and channel."""
        v = None if self.mode is Mode.STATIC else self.gt_v
        return data_term(self.gt_dec, self.gt_u, v) / self.img.size

    def check_invariants(self, bcc_tol: float = 1e-2) -> None:
        dec = self.gt_dec
        composed, clipped = compose(dec.l1, dec.l2)
        composed_p, clipped_p = compose(dec.l1p, dec.l2p)
        if clipped or clipped_p:
            raise BoundViolationError(f"{self.name}: ground-truth layers clip when composed")
        if not (np.array_equal(composed, self.img) and np.array_equal(composed_p, self.img_p)):
            raise BoundViolationError(f"{self.name}: frames are not the sum of their layers")
        dec.check(self.img, self.img_p)
        if self.mode is Mode.STATIC and (not np.array_equal(dec.l2, dec.l2p) or not self.gt_v.is_zero()):
            raise BoundViolationError(f"{self.name}: static bundle with a moving foreground")
        err = self.bcc_error()
        if err > bcc_tol:
            raise BoundViolationError(f"{self.name}: ground-truth BCC residual {err:.3g} above {bcc_tol}")


def quantize(img: np.ndarray, upper: float = 1.0) -> np.ndarray:
    """Snap to the 16-bit code lattice inside [0, upper]."""
    top = np.floor(upper * LATTICE)
    return np.clip(np.round(img * LATTICE), 0.0, top) / LATTICE


def _preimage(flow: FlowField, iters: int = 30) -> Tuple[np.ndarray, np.ndarray]:
    """Points p with p + flow(p) = y for every grid point y (fixed-point iteration)."""
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    px, py = xs - flow.u, ys - flow.v
    for _ in range(iters):
        coords = [py, px]
        fu = ndimage.map_coordinates(flow.u, coords, order=1, mode="nearest")
        fv = ndimage.map_coordinates(flow.v, coords, order=1, mode="nearest")
        px, py = xs - fu, ys - fv
    return px, py


def _advect(layer: np.ndarray, flow: FlowField, upper: float) -> np.ndarray:
    """Second-frame layer: value of the cubic-spline continuation of layer at the preimage of each pixel."""
    if flow.is_zero():
        return layer.copy()
    px, py = _preimage(flow)
    channels = [
        ndimage.map_coordinates(layer[:, :, c], [py, px], order=3, mode="nearest")
        for c in range(layer.shape[2])
    ]
    return quantize(np.stack(channels, axis=-1), upper)


def render_pair(l1, l2, gt_u: FlowField, gt_v: Optional[FlowField], mode: Mode, c: float = 0.25,
                seed: int = 0, name: str = "") -> GroundTruthBundle:
    """Compose a frame pair whose layers obey the per-layer BCC with the given flows."""
    mode = Mode(mode)
    l1 = as_image(l1, "l1")
    l2 = as_image(l2, "l2")
    if l1.shape != l2.shape or gt_u.shape != l1.shape[:2]:
        raise BoundViolationError("layers and flows must share one size")
    if np.min(l1) < 0 or np.min(l2) < 0:
        raise BoundViolationError("layers must be non-negative")

    fg_top = FOREGROUND_HEADROOM * c
    # one code of margin keeps l1 + l2 <= 1 after rounding
    bg_top = 1.0 - fg_top - 1.0 / LATTICE
    peak2 = float(np.max(l2))
    if peak2 > fg_top:
        l2 = l2 * (fg_top / peak2)
    peak1 = float(np.max(l1))
    if peak1 > bg_top:
        l1 = l1 * (bg_top / peak1)
    l1 = quantize(l1, bg_top)
    l2 = quantize(l2, fg_top)

    if mode is Mode.STATIC or gt_v is None:
        gt_v = FlowField.zeros(*l1.shape[:2])
    l1p = _advect(l1, gt_u, bg_top)
    l2p = l2.copy() if mode is Mode.STATIC else _advect(l2, gt_v, fg_top)

    img, _ = compose(l1, l2)
    img_p, _ = compose(l1p, l2p)
    dec = LayerDecomposition(l1, l1p, l2, l2p, c)
    logger.debug("[SYNTH] rendered %s (%s, %dx%dx%d)", name or "pair", mode.value, *l1.shape)
    return GroundTruthBundle(img, img_p, dec, gt_u, gt_v, mode, seed, name)


# ==========================================
# PROCEDURAL CONTENT
# ==========================================

def textured_background(rng: np.random.Generator, h: int, w: int, channels: int) -> np.ndarray:
    """Multi-scale smoothed noise plus a few gratings; values in [0, 1]."""
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.zeros((h, w))
    for sigma, gain in ((1.0, 0.5), (2.5, 1.0), (6.0, 1.5)):
        layer = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma, mode="reflect")
        base += gain * layer / (np.std(layer) + 1e-12)
    for _ in range(3):
        freq = rng.uniform(0.05, 0.25)
        angle = rng.uniform(0, np.pi)
        base += 0.6 * np.sin(freq * (np.cos(angle) * xs + np.sin(angle) * ys) + rng.uniform(0, 2 * np.pi))

    planes = []
    for _ in range(channels):
        tint = ndimage.gaussian_filter(rng.standard_normal((h, w)), 3.0, mode="reflect")
        planes.append(base + 0.3 * tint / (np.std(tint) + 1e-12))
    img = np.stack(planes, axis=-1)
    img -= img.min()
    return img / max(float(img.max()), 1e-12)


def rain_streaks(rng: np.random.Generator, h: int, w: int, channels: int) -> np.ndarray:
    """Near-vertical bright streaks, 2-3 px wide with flat interiors, covering about a sixth of the frame."""
    canvas = np.zeros((h, w), dtype=np.float32)
    count = max(6, (h * w) // RAIN_PIXELS_PER_STREAK)
    for _ in range(count):
        x0, y0 = rng.uniform(0, w), rng.uniform(0, h)
        length = rng.uniform(8, 20)
        angle = np.pi / 2 + rng.uniform(-0.15, 0.15)
        x1, y1 = x0 + length * np.cos(angle), y0 + length * np.sin(angle)
        thickness = int(rng.integers(2, 4))
        cv2.line(canvas, (int(x0), int(y0)), (int(x1), int(y1)), float(rng.uniform(0.75, 1.0)), thickness, cv2.LINE_8)
    tint = rng.uniform(0.8, 1.0, size=channels)
    return np.clip(canvas.astype(np.float64), 0.0, 1.0)[..., None] * tint


def flat_shapes(rng: np.random.Generator, h: int, w: int, channels: int) -> np.ndarray:
    """A few filled discs and boxes of constant brightness, the reflection stand-in."""
    canvas = np.zeros((h, w, 3), dtype=np.float32)
    for _ in range(int(rng.integers(3, 6))):
        colour = tuple(float(x) for x in rng.uniform(0.3, 1.0, size=3))
        cx, cy = int(rng.integers(w // 6, 5 * w // 6)), int(rng.integers(h // 6, 5 * h // 6))
        if rng.random() < 0.5:
            cv2.circle(canvas, (cx, cy), int(rng.integers(4, max(5, min(h, w) // 6))), colour, -1, cv2.LINE_AA)
        else:
            half = int(rng.integers(3, max(4, min(h, w) // 7)))
            cv2.rectangle(canvas, (cx - half, cy - half), (cx + half, cy + half), colour, -1)
    img = np.clip(canvas.astype(np.float64), 0.0, 1.0)
    return img[:, :, :1] if channels == 1 else img


# ==========================================
# SUITE
# ==========================================

# (height, width, channels, background flow kind, its argument)
_STATIC_SPECS = [
    (64, 64, 1, "constant", (2.0, 0.0)),
    (64, 80, 3, "constant", (1.5, -0.75)),
    (96, 96, 1, "affine", (1.02, 0.01, 1.0, -0.01, 0.98, 0.5)),
    (80, 96, 3, "smooth", 2.5),
    (128, 128, 1, "smooth", 4.0),
    (96, 128, 3, "constant", (-1.25, 1.0)),
    (112, 112, 1, "affine", (0.99, -0.02, -1.5, 0.02, 1.01, 1.0)),
    (64, 96, 3, "smooth", 3.0),
    (128, 96, 1, "smooth", 2.0),
    (128, 128, 3, "constant", (0.5, 2.5)),
]

# (height, width, channels, background flow spec, foreground flow spec)
_DYNAMIC_SPECS = [
    (64, 64, 1, ("constant", (1.5, 0.5)), ("constant", (-1.0, 1.0))),
    (96, 96, 3, ("smooth", 2.5), ("constant", (0.0, -1.5))),
    (80, 112, 1, ("affine", (1.01, 0.0, 1.0, 0.0, 1.01, -0.5)), ("constant", (-1.5, 0.0))),
    (128, 128, 3, ("smooth", 3.0), ("smooth", 2.0)),
    (96, 128, 1, ("constant", (-2.0, 1.0)), ("constant", (1.0, 1.5))),
]


def _flow_from_spec(kind: str, arg, h: int, w: int, rng: np.random.Generator) -> FlowField:
    if kind == "constant":
        return make_flow(ConstantFlow(*arg), h, w)
    if kind == "affine":
        return make_flow(AffineFlow(tuple(arg)), h, w)
    return make_flow(SmoothRandomFlow(float(arg), smoothness=10.0, seed=int(rng.integers(2 ** 31))), h, w)


def standard_suite(seed: int = 0, mode: Optional[Mode] = None, size: Optional[Tuple[int, int]] = None,
                   c: float = 0.25) -> List[GroundTruthBundle]:
    """Fixed catalogue of ten static (rain) and five dynamic (reflection) instances."""
    wanted = Mode(mode) if mode is not None else None
    bundles: List[GroundTruthBundle] = []

    if wanted in (None, Mode.STATIC):
        for idx, (h, w, ch, kind, arg) in enumerate(_STATIC_SPECS):
            if size is not None:
                h, w = size
            rng = np.random.default_rng([seed, idx])
            low, high = RAIN_BACKGROUND
            background = low + (high - low) * textured_background(rng, h, w, ch)
            foreground = rain_streaks(rng, h, w, ch)
            gt_u = _flow_from_spec(kind, arg, h, w, rng)
            bundles.append(render_pair(background, foreground, gt_u, None, Mode.STATIC, c,
                                       seed=seed, name=f"static_{idx:02d}"))

    if wanted in (None, Mode.DYNAMIC):
        for idx, (h, w, ch, bg_spec, fg_spec) in enumerate(_DYNAMIC_SPECS):
            if size is not None:
                h, w = size
            rng = np.random.default_rng([seed, 100 + idx])
            background = textured_background(rng, h, w, ch)
            foreground = flat_shapes(rng, h, w, ch)
            gt_u = _flow_from_spec(*bg_spec, h, w, rng)
            gt_v = _flow_from_spec(*fg_spec, h, w, rng)
            bundles.append(render_pair(background, foreground, gt_u, gt_v, Mode.DYNAMIC, c,
                                       seed=seed, name=f"dynamic_{idx:02d}"))

    logger.info("[SYNTH] generated %d bundles (seed %d)", len(bundles), seed)
    return bundles


def perturb_layers(bundle: GroundTruthBundle, sigma: float = 1.0, noise: float = 0.1,
                   seed: int = 0) -> LayerDecomposition:
    """Blurred, noisy copy of the ground-truth foreground, clipped back into bounds."""
    rng = np.random.default_rng(seed)
    dec = bundle.gt_dec
    c = dec.c

    def disturb(layer, frame):
        amp = float(np.max(layer)) if np.max(layer) > 0 else c
        out = gaussian_blur(layer, sigma) + noise * amp * rng.standard_normal(layer.shape)
        # round down so the lattice value stays inside the bound
        return np.floor(np.clip(out, 0.0, np.minimum(frame, c)) * LATTICE) / LATTICE

    l2 = disturb(dec.l2, np.minimum(bundle.img, bundle.img_p) if bundle.mode is Mode.STATIC else bundle.img)
    l2p = l2.copy() if bundle.mode is Mode.STATIC else disturb(dec.l2p, bundle.img_p)
    return LayerDecomposition(bundle.img - l2, bundle.img_p - l2p, l2, l2p, c)
