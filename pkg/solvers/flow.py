# solvers/flow.py
"""
Flow subproblem: with the layers fixed, U depends only on (L1, L1') and V
only on (L2, L2'). Each is a single-layer l1 optical-flow problem with a TV
or TGV2 prior, solved coarse-to-fine by warping, quadratic relaxation and
primal-dual smoothing.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from core.config import RelaxConfig, Weights
from core.energy import LayerDecomposition, flow_energy
from core.errors import ShapeMismatchError
from core.imaging import FlowField, as_image, build_pyramid, median_filter_flow, rescale_flow
from solvers.prox import linearize, smooth_prox_tgv2, smooth_prox_tv, threshold_step

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class FlowProblem:
    """One layer pair and the prior it is regularised with (weights.lambda_f, tgv_order, tgv_alpha)."""

    frame0: np.ndarray
    frame1: np.ndarray
    weights: Weights

    def __post_init__(self):
        self.frame0 = as_image(self.frame0, "frame0")
        self.frame1 = as_image(self.frame1, "frame1")
        if self.frame0.shape != self.frame1.shape:
            raise ShapeMismatchError(f"frame0 {self.frame0.shape} and frame1 {self.frame1.shape} differ")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.frame0.shape[:2]


def smoothing_weight(cfg: RelaxConfig, lambda_f: float) -> float:
    """ROF / TGV weight of the smoothing step.

    The relaxed problem is |rho(w)| + |w - u|^2 / (2 theta) + lambda_f * prior(u):
    the data step sees theta itself, the smoothing step theta * lambda_f.
    """
    return cfg.theta * lambda_f


def _smooth(target: FlowField, problem: FlowProblem, cfg: RelaxConfig, duals):
    weights = problem.weights
    weight = smoothing_weight(cfg, weights.lambda_f)
    steps = (cfg.tau, cfg.sigma)
    if weights.tgv_order == 1:
        return smooth_prox_tv(target, weight, cfg.pd_iters, steps, duals, cfg.pd_tol)
    return smooth_prox_tgv2(target, weight, weights.tgv_alpha, cfg.pd_iters, steps, duals, cfg.pd_tol)


def solve_single_flow(problem: FlowProblem, init: Optional[FlowField] = None,
                      cfg: Optional[RelaxConfig] = None) -> FlowField:
    """Coarse-to-fine TV-L1 / TGV2-L1 flow from frame0 to frame1 (frame0(x) ~ frame1(x + flow))."""
    cfg = cfg or RelaxConfig()
    h, w = problem.shape
    init = init if init is not None else FlowField.zeros(h, w)
    if init.shape != (h, w):
        raise ShapeMismatchError(f"init flow {init.shape} does not match frames {(h, w)}")

    pyr0 = build_pyramid(problem.frame0, cfg.scale_factor, cfg.min_size)
    pyr1 = build_pyramid(problem.frame1, cfg.scale_factor, cfg.min_size)

    coarsest = pyr0.coarsest
    flow = rescale_flow(init, coarsest.shape[0], coarsest.shape[1])
    for level in range(len(pyr0) - 1, -1, -1):
        f0, f1 = pyr0[level], pyr1[level]
        flow = rescale_flow(flow, f0.shape[0], f0.shape[1])
        duals = None
        pd_total = 0
        for _ in range(cfg.warps_per_level):
            lin = linearize(f0, f1, flow, cfg.gradient_blur)
            current = flow
            for _ in range(cfg.relax_iters):
                target = threshold_step(lin, current, cfg.theta)
                result = _smooth(target, problem, cfg, duals)
                current, duals = result.flow, result.duals
                pd_total += result.iterations
            flow = median_filter_flow(current) if cfg.median_filter else current
        logger.debug("[FLOW] level %d (%dx%d): gap %.3g after %d primal-dual steps",
                     level, f0.shape[0], f0.shape[1], result.gap, pd_total)

    start = flow_energy(problem.frame0, problem.frame1, init, problem.weights)
    final = flow_energy(problem.frame0, problem.frame1, flow, problem.weights)
    if final > start:
        logger.debug("[FLOW] single-layer energy %.6g above init %.6g, keeping init", final, start)
        return FlowField(init.u.copy(), init.v.copy())
    return flow


def solve_flows(dec: LayerDecomposition, u_init: FlowField, v_init: Optional[FlowField],
                weights: Weights, cfg: Optional[RelaxConfig] = None,
                static: bool = False) -> Tuple[FlowField, FlowField]:
    """Flow half-step. U is solved on (L1, L1'), V on (L2, L2'); static mode returns V = 0."""
    cfg = cfg or RelaxConfig()
    h, w = dec.shape[:2]
    background = FlowProblem(dec.l1, dec.l1p, weights)
    if static:
        return solve_single_flow(background, u_init, cfg), FlowField.zeros(h, w)

    foreground = FlowProblem(dec.l2, dec.l2p, weights)
    v_init = v_init if v_init is not None else FlowField.zeros(h, w)
    if cfg.parallel_layers:
        with ThreadPoolExecutor(max_workers=2) as pool:
            fut_u = pool.submit(solve_single_flow, background, u_init, cfg)
            fut_v = pool.submit(solve_single_flow, foreground, v_init, cfg)
            return fut_u.result(), fut_v.result()
    return solve_single_flow(background, u_init, cfg), solve_single_flow(foreground, v_init, cfg)
