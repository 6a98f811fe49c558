# core/imaging.py
"""
Image containers and the pixel-grid machinery every solver shares:
layer composition, bilinear backward warping, forward-difference gradients
with their negative-adjoint divergence, and the coarse-to-fine pyramid.

Images are float64 arrays of shape (H, W, C) with C in {1, 3}; brightness
lives in [0, 1]. Flow fields keep the two displacement components apart.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from core.errors import ConfigError, NonFiniteInputError, ShapeMismatchError

logger = logging.getLogger(__name__)


def as_image(data, name: str = "image") -> np.ndarray:
    """Validate and normalise anything array-like into an (H, W, C) float image."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeMismatchError(f"{name}: expected (H, W), (H, W, 1) or (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 2 or arr.shape[1] < 2:
        raise ShapeMismatchError(f"{name}: images must be at least 2x2, got {arr.shape[:2]}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteInputError(f"{name}: contains NaN or infinite values")
    return arr


def check_same_shape(*named_arrays) -> None:
    """Raise unless all (name, array) pairs share one shape."""
    name0, ref = named_arrays[0]
    for name, arr in named_arrays[1:]:
        if arr.shape != ref.shape:
            raise ShapeMismatchError(f"{name} has shape {arr.shape}, {name0} has {ref.shape}")


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement (u horizontal, v vertical) in pixels."""

    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if u.ndim != 2 or u.shape != v.shape:
            raise ShapeMismatchError(f"flow components must be equal 2-D arrays, got {u.shape} and {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise NonFiniteInputError("flow contains NaN or infinite values")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.u.shape

    @classmethod
    def zeros(cls, height: int, width: int) -> "FlowField":
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "FlowField":
        arr = np.asarray(arr)
        if arr.ndim != 3 or arr.shape[2] != 2:
            raise ShapeMismatchError(f"expected an (H, W, 2) flow array, got {arr.shape}")
        return cls(arr[:, :, 0], arr[:, :, 1])

    def to_array(self) -> np.ndarray:
        return np.stack([self.u, self.v], axis=-1)

    def scaled(self, factor: float) -> "FlowField":
        return FlowField(self.u * factor, self.v * factor)

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.u, self.v)

    def is_zero(self) -> bool:
        return not (np.any(self.u) or np.any(self.v))


@dataclass
class Pyramid:
    """Levels ordered finest first."""

    levels: List[np.ndarray] = field(default_factory=list)
    scale_factor: float = 0.5

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, idx) -> np.ndarray:
        return self.levels[idx]

    @property
    def finest(self) -> np.ndarray:
        return self.levels[0]

    @property
    def coarsest(self) -> np.ndarray:
        return self.levels[-1]


# ==========================================
# COMPOSITION
# ==========================================

def compose(l1: np.ndarray, l2: np.ndarray) -> Tuple[np.ndarray, bool]:
    """Additive imaging model. Returns the clamped sum and whether anything clipped."""
    l1 = as_image(l1, "l1")
    l2 = as_image(l2, "l2")
    check_same_shape(("l1", l1), ("l2", l2))
    total = l1 + l2
    clipped = bool(np.any(total < 0.0) or np.any(total > 1.0))
    if clipped:
        total = np.clip(total, 0.0, 1.0)
    return total, clipped


# ==========================================
# BILINEAR BACKWARD WARPING
# ==========================================

@dataclass(frozen=True, eq=False)
class BilinearStencil:
    """Four-neighbour bilinear weights for sampling at x + flow(x).

    index and weight have shape (4, H, W) in the order (y0,x0), (y0,x1),
    (y1,x0), (y1,x1); index holds flat row-major pixel indices. The layer
    solver builds its warp coefficients from the same stencil so energy
    evaluation and the sparse system agree exactly.
    """

    index: np.ndarray
    weight: np.ndarray
    mask: np.ndarray

    def sample(self, img: np.ndarray) -> np.ndarray:
        h, w, c = img.shape
        flat = img.reshape(h * w, c)
        out = self.weight[0][..., None] * flat[self.index[0]]
        for k in range(1, 4):
            out = out + self.weight[k][..., None] * flat[self.index[k]]
        return out


def bilinear_stencil(flow: FlowField) -> BilinearStencil:
    h, w = flow.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    px = xs + flow.u
    py = ys + flow.v
    mask = (px >= 0.0) & (px <= w - 1) & (py >= 0.0) & (py <= h - 1)

    px = np.clip(px, 0.0, w - 1)
    py = np.clip(py, 0.0, h - 1)
    x0 = np.minimum(np.floor(px), w - 2).astype(np.intp)
    y0 = np.minimum(np.floor(py), h - 2).astype(np.intp)
    fx = px - x0
    fy = py - y0

    i00 = y0 * w + x0
    index = np.stack([i00, i00 + 1, i00 + w, i00 + w + 1])
    weight = np.stack([(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy])
    return BilinearStencil(index=index, weight=weight, mask=mask)


def warp_backward(img: np.ndarray, flow: FlowField) -> Tuple[np.ndarray, np.ndarray]:
    """Sample img at x + flow(x). The mask is False where that point leaves the image."""
    img = as_image(img)
    if img.shape[:2] != flow.shape:
        raise ShapeMismatchError(f"image {img.shape[:2]} and flow {flow.shape} differ in size")
    stencil = bilinear_stencil(flow)
    return stencil.sample(img), stencil.mask


# ==========================================
# DISCRETE DIFFERENTIAL OPERATORS
# ==========================================

def spatial_gradient(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Forward differences along x (axis 1) and y (axis 0), zero on the last column/row."""
    img = np.asarray(img, dtype=np.float64)
    gx = np.zeros_like(img)
    gy = np.zeros_like(img)
    gx[:, :-1] = img[:, 1:] - img[:, :-1]
    gy[:-1] = img[1:] - img[:-1]
    return gx, gy


def divergence(px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Negative adjoint of spatial_gradient: <grad p, q> == <p, -div q>."""
    div = np.zeros_like(px, dtype=np.float64)
    div[:, 0] += px[:, 0]
    div[:, 1:-1] += px[:, 1:-1] - px[:, :-2]
    div[:, -1] -= px[:, -2]
    div[0] += py[0]
    div[1:-1] += py[1:-1] - py[:-2]
    div[-1] -= py[-2]
    return div


def forward_mask(shape: Tuple[int, int]) -> Tuple[np.ndarray, np.ndarray]:
    """1 where a forward neighbour exists along x (resp. y), else 0."""
    mx = np.ones(shape)
    my = np.ones(shape)
    mx[:, -1] = 0.0
    my[-1] = 0.0
    return mx, my


def symmetrised_gradient(w1: np.ndarray, w2: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(dx w1, dy w2, dy w1 + dx w2) with the same forward differences as spatial_gradient."""
    gx1, gy1 = spatial_gradient(w1)
    gx2, gy2 = spatial_gradient(w2)
    return gx1, gy2, gy1 + gx2


def symmetrised_divergence(qa: np.ndarray, qb: np.ndarray, qc: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Negative adjoint of symmetrised_gradient."""
    return divergence(qa, qc), divergence(qc, qb)


def central_gradient(img: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    gy, gx = np.gradient(np.asarray(img, dtype=np.float64), axis=(0, 1))
    return gx, gy


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if sigma <= 0:
        return img.copy()
    sigmas = (sigma, sigma) + (0.0,) * (img.ndim - 2)
    return ndimage.gaussian_filter(img, sigma=sigmas, mode="nearest")


# ==========================================
# PYRAMID / RESAMPLING
# ==========================================

def _scaled_size(n: int, factor: float) -> int:
    # round first so 10 * 0.8 does not become 9
    return int(math.ceil(round(n * factor, 9)))


def _resample_plane(plane: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = plane.shape
    rows = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    cols = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return ndimage.map_coordinates(plane, [rr, cc], order=1, mode="nearest")


def resample(img: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    """Bilinear resampling with pixel-centre alignment; 2-D or (H, W, C) input."""
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] == (new_h, new_w):
        return img.copy()
    if img.ndim == 2:
        return _resample_plane(img, new_h, new_w)
    return np.stack([_resample_plane(img[:, :, c], new_h, new_w) for c in range(img.shape[2])], axis=-1)


def build_pyramid(img: np.ndarray, scale_factor: float = 0.5, min_size: int = 16) -> Pyramid:
    """Gaussian blur then subsample until the next level would drop below min_size."""
    if not 0.5 <= scale_factor <= 0.95:
        raise ConfigError(f"pyramid scale_factor must lie in [0.5, 0.95], got {scale_factor}")
    img = as_image(img)
    sigma = 1.0 / math.sqrt(2.0 * scale_factor)
    levels = [img]
    while True:
        h, w = levels[-1].shape[:2]
        nh, nw = _scaled_size(h, scale_factor), _scaled_size(w, scale_factor)
        if nh < min_size or nw < min_size or (nh, nw) == (h, w):
            break
        levels.append(resample(gaussian_blur(levels[-1], sigma), nh, nw))
    logger.debug("[PYRAMID] %d levels from %dx%d down to %dx%d",
                 len(levels), img.shape[0], img.shape[1], levels[-1].shape[0], levels[-1].shape[1])
    return Pyramid(levels=levels, scale_factor=scale_factor)


def rescale_flow(flow: FlowField, new_h: int, new_w: int) -> FlowField:
    """Resample a flow to a new grid and rescale its displacements to the new pixel units."""
    if flow.shape == (new_h, new_w):
        return FlowField(flow.u.copy(), flow.v.copy())
    u = _resample_plane(flow.u, new_h, new_w) * (new_w / flow.width)
    v = _resample_plane(flow.v, new_h, new_w) * (new_h / flow.height)
    return FlowField(u, v)


def median_filter_flow(flow: FlowField, size: int = 5) -> FlowField:
    return FlowField(
        ndimage.median_filter(flow.u, size=size, mode="nearest"),
        ndimage.median_filter(flow.v, size=size, mode="nearest"),
    )
