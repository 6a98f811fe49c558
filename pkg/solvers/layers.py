# solvers/layers.py
"""
Layer-separation subproblem: with both flows fixed, minimise
E_B + lambda_l * E_L over the foreground layers (L2, L2') subject to
0 <= L2 <= min(I, c), 0 <= L2' <= min(I', c). The backgrounds are
substituted as L1 = I - L2, L1' = I' - L2', which turns the problem into
min |A l - b|_1 over a box, solved by bounded IRLS.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg

from core.config import IrlsConfig, Weights
from core.energy import LayerDecomposition
from core.errors import NonFiniteInputError, ShapeMismatchError
from core.imaging import FlowField, as_image, bilinear_stencil, check_same_shape

logger = logging.getLogger(__name__)

_RIDGE = 1e-10


@dataclass(eq=False)
class SparseL1System:
    """min sum_i |a_i . l - b_i| subject to lower <= l <= upper.

    Unknowns are the foreground layers flattened in (block, y, x, channel)
    order; block 1 (L2') is absent in the static case where L2' == L2.
    """

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    image_shape: Tuple[int, int, int] = (0, 0, 0)
    n_blocks: int = 2

    def __post_init__(self):
        self.matrix = sparse.csr_matrix(self.matrix)
        self.rhs = np.asarray(self.rhs, dtype=np.float64)
        self.lower = np.asarray(self.lower, dtype=np.float64)
        self.upper = np.asarray(self.upper, dtype=np.float64)
        m, n = self.matrix.shape
        if self.rhs.shape != (m,) or self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ShapeMismatchError(
                f"system with {m}x{n} matrix got rhs {self.rhs.shape}, bounds {self.lower.shape}/{self.upper.shape}"
            )
        if not (np.all(np.isfinite(self.matrix.data)) and np.all(np.isfinite(self.rhs))
                and np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise NonFiniteInputError("layer system contains non-finite coefficients")

    @property
    def unknowns(self) -> int:
        return self.matrix.shape[1]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]

    def residual(self, x: np.ndarray) -> np.ndarray:
        return self.matrix @ x - self.rhs

    def l1_objective(self, x: np.ndarray) -> float:
        return float(np.sum(np.abs(self.residual(x))))

    def huber_objective(self, x: np.ndarray, epsilon: float) -> float:
        return float(np.sum(huber(self.residual(x), epsilon)))

    def clip(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def stack(self, l2: np.ndarray, l2p: Optional[np.ndarray] = None) -> np.ndarray:
        parts = [np.asarray(l2, dtype=np.float64).ravel()]
        if self.n_blocks == 2:
            parts.append(np.asarray(l2p if l2p is not None else l2, dtype=np.float64).ravel())
        return np.concatenate(parts)

    def split(self, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        n = int(np.prod(self.image_shape))
        l2 = x[:n].reshape(self.image_shape)
        l2p = x[n:2 * n].reshape(self.image_shape) if self.n_blocks == 2 else l2.copy()
        return l2, l2p


def huber(r: np.ndarray, epsilon: float) -> np.ndarray:
    """Smoothed |r|: r^2 / (2 eps) below eps, |r| - eps / 2 above."""
    a = np.abs(r)
    return np.where(a < epsilon, 0.5 * r * r / epsilon, a - 0.5 * epsilon)


# ==========================================
# ASSEMBLY
# ==========================================

class _RowBuffer:
    """Collects COO triplets for blocks of rows with a fixed number of entries each."""

    def __init__(self):
        self.count = 0
        self.rows: List[np.ndarray] = []
        self.cols: List[np.ndarray] = []
        self.vals: List[np.ndarray] = []
        self.rhs: List[np.ndarray] = []

    def add(self, cols: np.ndarray, vals: np.ndarray, rhs: np.ndarray) -> None:
        # cols, vals: (k, m) for m rows of k entries
        m = rhs.shape[0]
        if m == 0:
            return
        ids = self.count + np.arange(m)
        self.rows.append(np.broadcast_to(ids, cols.shape).ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())
        self.rhs.append(rhs)
        self.count += m

    def build(self, n_unknowns: int) -> Tuple[sparse.csr_matrix, np.ndarray]:
        if self.count == 0:
            return sparse.csr_matrix((0, n_unknowns)), np.zeros(0)
        coo = sparse.coo_matrix(
            (np.concatenate(self.vals), (np.concatenate(self.rows), np.concatenate(self.cols))),
            shape=(self.count, n_unknowns),
        )
        mat = coo.tocsr()
        mat.sum_duplicates()
        mat.eliminate_zeros()
        return mat, np.concatenate(self.rhs)


def assemble_system(img, img_p, u: FlowField, v: Optional[FlowField] = None,
                    weights: Optional[Weights] = None, c: float = 0.25) -> SparseL1System:
    """Build the l1 system for the foreground layers. v=None selects the static case (V = 0, L2' = L2)."""
    weights = weights or Weights()
    img = as_image(img, "I")
    img_p = as_image(img_p, "I'")
    check_same_shape(("I", img), ("I'", img_p))
    h, w, ch = img.shape
    if u.shape != (h, w) or (v is not None and v.shape != (h, w)):
        raise ShapeMismatchError(f"flows must be {h}x{w}")

    static = v is None
    n = h * w * ch
    n_blocks = 1 if static else 2
    second = 0 if static else 1
    pix = np.arange(h * w).reshape(h, w)

    def var(block, pixel, chan):
        return block * n + pixel * ch + chan

    buf = _RowBuffer()

    # (i) I - L2 at x against I' - L2' sampled at x + U
    st_u = bilinear_stencil(u)
    valid = st_u.mask.ravel()
    centre = pix.ravel()[valid]
    nbr = st_u.index.reshape(4, -1)[:, valid]
    wts = st_u.weight.reshape(4, -1)[:, valid]
    warped_ip = st_u.sample(img_p).reshape(h * w, ch)[valid]
    flat_i = img.reshape(h * w, ch)[valid]
    for chan in range(ch):
        cols = np.vstack([var(0, centre, chan)[None], var(second, nbr, chan)])
        vals = np.vstack([-np.ones((1, centre.size)), wts])
        buf.add(cols, vals, warped_ip[:, chan] - flat_i[:, chan])

    # (ii) L2 at x against L2' sampled at x + V
    if not static:
        st_v = bilinear_stencil(v)
        valid_v = st_v.mask.ravel()
        centre_v = pix.ravel()[valid_v]
        nbr_v = st_v.index.reshape(4, -1)[:, valid_v]
        wts_v = st_v.weight.reshape(4, -1)[:, valid_v]
        for chan in range(ch):
            cols = np.vstack([var(0, centre_v, chan)[None], var(1, nbr_v, chan)])
            vals = np.vstack([np.ones((1, centre_v.size)), -wts_v])
            buf.add(cols, vals, np.zeros(centre_v.size))

    # (iii) forward-difference rows of I - L2, I' - L2', L2, L2'
    lam = weights.lambda_l
    if lam > 0:
        pairs = [(pix[:, :-1].ravel(), pix[:, 1:].ravel()), (pix[:-1, :].ravel(), pix[1:, :].ravel())]
        fg_scale = 2.0 * lam if static else lam
        for p, q in pairs:
            ones = np.ones((1, p.size))
            for chan in range(ch):
                for block, frame in ((0, img), (second, img_p)):
                    flat = frame.reshape(h * w, ch)[:, chan]
                    cols = np.vstack([var(block, p, chan), var(block, q, chan)])
                    buf.add(cols, lam * np.vstack([ones, -ones]), lam * (flat[p] - flat[q]))
                for block in range(n_blocks):
                    cols = np.vstack([var(block, p, chan), var(block, q, chan)])
                    buf.add(cols, fg_scale * np.vstack([-ones, ones]), np.zeros(p.size))

    matrix, rhs = buf.build(n_blocks * n)

    cap = max(float(c), 0.0)
    if static:
        upper = np.minimum(np.minimum(img, img_p), cap).ravel()
    else:
        upper = np.concatenate([np.minimum(img, cap).ravel(), np.minimum(img_p, cap).ravel()])
    upper = np.maximum(upper, 0.0)
    lower = np.zeros_like(upper)

    logger.debug("[LAYERS] assembled %d rows x %d unknowns (%d nonzeros)", matrix.shape[0], matrix.shape[1], matrix.nnz)
    return SparseL1System(matrix, rhs, lower, upper, image_shape=(h, w, ch), n_blocks=n_blocks)


# ==========================================
# BOUNDED IRLS
# ==========================================

@dataclass
class IrlsResult:
    values: np.ndarray
    objective: float
    l1_objective: float
    iterations: int
    history: List[float] = field(default_factory=list)
    clipped_init: bool = False


def _bounded_weighted_lsq(system: SparseL1System, row_weights: np.ndarray, x: np.ndarray,
                          cfg: IrlsConfig) -> np.ndarray:
    """Approximately minimise sum w_i (a_i.l - b_i)^2 over the box, starting from x."""
    a = system.matrix
    normal = (a.T @ sparse.diags(row_weights) @ a).tocsr()
    target = a.T @ (row_weights * system.rhs)
    pinned = system.upper - system.lower <= 0.0

    z = x.copy()
    for _ in range(cfg.active_set_passes):
        grad = normal @ z - target
        blocked = ((z <= system.lower) & (grad > 0)) | ((z >= system.upper) & (grad < 0)) | pinned
        free = ~blocked
        if not np.any(free):
            break
        z_fixed = np.where(free, 0.0, z)
        rhs = (target - normal @ z_fixed)[free]
        sub = normal[free][:, free] + _RIDGE * sparse.identity(int(free.sum()), format="csr")
        precond = sparse.diags(1.0 / np.maximum(sub.diagonal(), _RIDGE))
        sol, info = cg(sub, rhs, x0=z[free], rtol=cfg.cg_tol, atol=0.0, maxiter=cfg.cg_maxiter, M=precond)
        if info > 0:
            logger.debug("[LAYERS] cg stopped at maxiter=%d", cfg.cg_maxiter)
        z_new = z.copy()
        z_new[free] = np.clip(sol, system.lower[free], system.upper[free])
        if np.array_equal(z_new, z):
            break
        z = z_new
    return z


def irls_solve(system: SparseL1System, init: np.ndarray, cfg: Optional[IrlsConfig] = None) -> IrlsResult:
    """Bounded IRLS on the Huber-smoothed l1 objective.

    Each outer step reweights rows by 1 / max(|r|, epsilon), solves the
    bounded weighted least-squares problem and backtracks along the segment
    from the current iterate so the smoothed objective never increases.
    """
    cfg = cfg or IrlsConfig()
    init = np.asarray(init, dtype=np.float64)
    if init.shape != (system.unknowns,):
        raise ShapeMismatchError(f"init has shape {init.shape}, system has {system.unknowns} unknowns")
    if not np.all(np.isfinite(init)):
        raise NonFiniteInputError("IRLS initial values are not finite")

    x = system.clip(init)
    clipped = not np.array_equal(x, init)
    if clipped:
        logger.warning("[LAYERS] initial layers outside bounds, clipped (max violation %.3g)",
                       float(np.max(np.abs(x - init))))

    eps = cfg.epsilon
    f = system.huber_objective(x, eps)
    history = [f]
    iterations = 0
    for iterations in range(1, cfg.max_outer + 1):
        r = system.residual(x)
        row_weights = 1.0 / np.maximum(np.abs(r), eps)
        step = _bounded_weighted_lsq(system, row_weights, x, cfg) - x

        t = 1.0
        accepted = False
        for _ in range(cfg.max_backtracks + 1):
            candidate = system.clip(x + t * step)
            f_new = system.huber_objective(candidate, eps)
            if f_new <= f:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            logger.debug("[LAYERS] irls %d: no descent along the step, stopping", iterations)
            break

        decrease = f - f_new
        x, f = candidate, f_new
        history.append(f)
        logger.debug("[LAYERS] irls %d: objective %.6g (step %.3g)", iterations, f, t)
        if decrease <= cfg.stop_tol * max(history[-2], np.finfo(float).tiny):
            break

    return IrlsResult(values=x, objective=f, l1_objective=system.l1_objective(x),
                      iterations=iterations, history=history, clipped_init=clipped)


def solve_layers(img, img_p, u: FlowField, v: Optional[FlowField], weights: Weights, c: float,
                 prev: LayerDecomposition, cfg: Optional[IrlsConfig] = None) -> LayerDecomposition:
    """One layer half-step, warm-started at prev. v=None is the static case.

    The returned decomposition is never worse than prev (projected into
    bounds) in the true l1 objective, which equals E_B + lambda_l * E_L.
    """
    img = as_image(img, "I")
    img_p = as_image(img_p, "I'")
    system = assemble_system(img, img_p, u, v, weights, c)
    start = system.clip(system.stack(prev.l2, prev.l2p))
    result = irls_solve(system, start, cfg)

    baseline = system.l1_objective(start)
    values = result.values
    if result.l1_objective > baseline:
        logger.debug("[LAYERS] l1 objective %.6g above warm start %.6g, keeping warm start",
                     result.l1_objective, baseline)
        values = start
    else:
        logger.debug("[LAYERS] l1 objective %.6g -> %.6g in %d IRLS steps",
                     baseline, result.l1_objective, result.iterations)

    l2, l2p = system.split(values)
    return LayerDecomposition(img - l2, img_p - l2p, l2, l2p, c)
