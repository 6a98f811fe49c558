# solvers/alternation.py
"""
Outer block-coordinate descent: alternate the layer half-step and the flow
half-step, refusing any half-step that raises the total energy, and keep a
per-iteration trace of the energy terms and (optionally) ground-truth errors.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from core.config import InitPolicy, Mode, SolverConfig
from core.energy import EnergyBreakdown, LayerDecomposition, total_energy
from core.errors import BoundViolationError, InitializationError, ShapeMismatchError
from core.imaging import FlowField, as_image, check_same_shape
from evaluation.metrics import epe_mean, layer_error_ncc
from solvers.flow import FlowProblem, solve_flows, solve_single_flow
from solvers.layers import solve_layers

logger = logging.getLogger(__name__)

__all__ = [
    "GroundTruth", "InitPolicy", "Mode", "Trace", "TraceRecord",
    "alternate", "initialize", "oracle_flow", "repair_layers",
]


@dataclass(eq=False)
class GroundTruth:
    u: Optional[FlowField] = None
    v: Optional[FlowField] = None
    l2: Optional[np.ndarray] = None


@dataclass
class TraceRecord:
    iteration: int
    energy: EnergyBreakdown
    epe_u: Optional[float] = None
    epe_v: Optional[float] = None
    layer_err: Optional[float] = None
    layers_accepted: bool = True
    flows_accepted: bool = True


@dataclass
class Trace:
    records: List[TraceRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)

    def totals(self) -> List[float]:
        return [r.energy.total for r in self.records]

    @property
    def rejected_steps(self) -> int:
        return sum((not r.layers_accepted) + (not r.flows_accepted) for r in self.records)


# ==========================================
# INITIALISATION
# ==========================================

def repair_layers(img, img_p, l2, l2p, c: float = 0.25) -> LayerDecomposition:
    """Clip a supplied foreground into [0, min(frame, c)] and rebuild the backgrounds from the frames."""
    img = as_image(img, "I")
    img_p = as_image(img_p, "I'")
    l2 = np.clip(as_image(l2, "l2"), 0.0, np.maximum(np.minimum(img, c), 0.0))
    l2p = np.clip(as_image(l2p, "l2p"), 0.0, np.maximum(np.minimum(img_p, c), 0.0))
    return LayerDecomposition(img - l2, img_p - l2p, l2, l2p, c)


def _static_layers(img, img_p, dec: LayerDecomposition, c: float) -> LayerDecomposition:
    # the static foreground is one image shared by both frames
    l2 = dec.l2.copy()
    return LayerDecomposition(img - l2, img_p - l2, l2, l2.copy(), c)


def _validated_layers(mode: Mode, img, img_p, layers: LayerDecomposition, c: float,
                      repair: bool) -> LayerDecomposition:
    if mode is Mode.STATIC:
        layers = _static_layers(img, img_p, layers, c)
    problems = layers.violations(img, img_p)
    if not problems:
        return LayerDecomposition(layers.l1, layers.l1p, layers.l2, layers.l2p, c)
    if not repair:
        raise BoundViolationError(
            "supplied layers rejected: " + "; ".join(problems)
            + " (use repair=True / --repair-layers to clip the foreground into bounds)"
        )
    logger.warning("[ALTERNATION] repairing supplied layers: %s", "; ".join(problems))
    if mode is Mode.STATIC:
        lower_frame = np.minimum(img, img_p)
        fixed = repair_layers(lower_frame, lower_frame, layers.l2, layers.l2, c)
        return _static_layers(img, img_p, fixed, c)
    return repair_layers(img, img_p, layers.l2, layers.l2p, c)


def initialize(mode: Mode, img, img_p, policy: InitPolicy, cfg: Optional[SolverConfig] = None,
               layers: Optional[LayerDecomposition] = None,
               flows: Optional[Tuple[FlowField, Optional[FlowField]]] = None,
               repair: bool = False) -> Tuple[LayerDecomposition, FlowField, FlowField]:
    """Starting point of the alternation.

    ZERO_FOREGROUND (static only): empty foreground and the naive flow of the
    composite frames. SUPPLIED_LAYERS: flows estimated on the given layers.
    SUPPLIED_FLOWS: layers from one layer solve with the given flows.
    """
    cfg = cfg or SolverConfig()
    mode = Mode(mode)
    policy = InitPolicy(policy)
    img = as_image(img, "I")
    img_p = as_image(img_p, "I'")
    check_same_shape(("I", img), ("I'", img_p))
    h, w = img.shape[:2]
    static = mode is Mode.STATIC
    zeros = FlowField.zeros(h, w)

    if policy is InitPolicy.ZERO_FOREGROUND:
        if not static:
            raise InitializationError(
                "dynamic mode cannot start from an empty foreground: supply initial layers "
                "(--init-layers L1 L1p L2 L2p) or initial flows"
            )
        empty = np.zeros_like(img)
        dec = LayerDecomposition(img.copy(), img_p.copy(), empty, empty.copy(), cfg.c)
        u0 = solve_single_flow(FlowProblem(img, img_p, cfg.weights), zeros, cfg.relax)
        logger.info("[ALTERNATION] naive flow: mean |U| = %.3f px", float(np.mean(u0.magnitude())))
        return dec, u0, zeros

    if policy is InitPolicy.SUPPLIED_LAYERS:
        if layers is None:
            raise InitializationError("initial layers are required for the supplied_layers policy")
        dec = _validated_layers(mode, img, img_p, layers, cfg.c, repair)
        u0, v0 = solve_flows(dec, zeros, zeros, cfg.weights, cfg.relax, static=static)
        return dec, u0, v0

    if flows is None:
        raise InitializationError("initial flows are required for the supplied_flows policy")
    u0, v0 = flows
    v0 = zeros if static or v0 is None else v0
    empty = np.zeros_like(img)
    start = LayerDecomposition(img, img_p, empty, empty.copy(), cfg.c)
    dec = solve_layers(img, img_p, u0, None if static else v0, cfg.weights, cfg.c, start, cfg.irls)
    return dec, u0, v0


def oracle_flow(gt_dec: LayerDecomposition, mode: Mode, cfg: Optional[SolverConfig] = None
                ) -> Tuple[FlowField, FlowField]:
    """Flows estimated directly on the clean ground-truth layer pairs."""
    cfg = cfg or SolverConfig()
    h, w = gt_dec.shape[:2]
    zeros = FlowField.zeros(h, w)
    return solve_flows(gt_dec, zeros, zeros, cfg.weights, cfg.relax, static=Mode(mode) is Mode.STATIC)


# ==========================================
# OUTER LOOP
# ==========================================

def _record(iteration: int, energy: EnergyBreakdown, dec: LayerDecomposition, u: FlowField, v: FlowField,
            static: bool, gt: Optional[GroundTruth], layers_ok: bool = True, flows_ok: bool = True) -> TraceRecord:
    rec = TraceRecord(iteration, energy, layers_accepted=layers_ok, flows_accepted=flows_ok)
    if gt is not None:
        if gt.u is not None:
            rec.epe_u = epe_mean(u, gt.u)
        if gt.v is not None and not static:
            rec.epe_v = epe_mean(v, gt.v)
        if gt.l2 is not None:
            rec.layer_err = layer_error_ncc(gt.l2, dec.l2)
    return rec


def _accept(new: EnergyBreakdown, old: EnergyBreakdown, tol: float) -> bool:
    return new.total <= old.total + tol * max(abs(old.total), np.finfo(float).tiny)


def alternate(img, img_p, mode: Mode, cfg: Optional[SolverConfig] = None, gt: Optional[GroundTruth] = None,
              start: Optional[Tuple[LayerDecomposition, FlowField, FlowField]] = None,
              ) -> Tuple[LayerDecomposition, FlowField, FlowField, Trace]:
    """Run the alternation. start defaults to initialize(mode, img, img_p, cfg.init, cfg)."""
    cfg = cfg or SolverConfig()
    mode = Mode(mode)
    img = as_image(img, "I")
    img_p = as_image(img_p, "I'")
    check_same_shape(("I", img), ("I'", img_p))
    for name, frame in (("I", img), ("I'", img_p)):
        if np.min(frame) < 0.0 or np.max(frame) > 1.0:
            raise BoundViolationError(f"{name} has values outside [0, 1]")
    static = mode is Mode.STATIC

    dec, u, v = start if start is not None else initialize(mode, img, img_p, cfg.init, cfg)
    if dec.shape != img.shape or u.shape != img.shape[:2]:
        raise ShapeMismatchError("initial state does not match the input frames")
    if static:
        v = FlowField.zeros(*img.shape[:2])

    def energy_of(d, uu, vv):
        return total_energy(d, uu, None if static else vv, cfg.weights)

    energy = energy_of(dec, u, v)
    trace = Trace()
    trace.append(_record(0, energy, dec, u, v, static, gt))
    logger.info("[ALTERNATION] start: total %.6g (E_B %.4g, E_L %.4g, E_F %.4g)",
                energy.total, energy.e_b, energy.e_l, energy.e_f)

    for it in range(1, cfg.outer_iters + 1):
        start_energy = energy
        previous = energy.total

        cand_dec = solve_layers(img, img_p, u, None if static else v, cfg.weights, cfg.c, dec, cfg.irls)
        cand = energy_of(cand_dec, u, v)
        layers_ok = _accept(cand, energy, cfg.accept_tol)
        if layers_ok:
            dec, energy = cand_dec, cand
        else:
            logger.warning("[ALTERNATION] iter %d: layer step raised energy %.6g -> %.6g, rejected",
                           it, energy.total, cand.total)

        cand_u, cand_v = solve_flows(dec, u, v, cfg.weights, cfg.relax, static=static)
        cand = energy_of(dec, cand_u, cand_v)
        # both slacks together stay within one tolerance of the iteration start
        flows_ok = _accept(cand, energy, cfg.accept_tol) and _accept(cand, start_energy, cfg.accept_tol)
        if flows_ok:
            u, v, energy = cand_u, cand_v, cand
        else:
            logger.warning("[ALTERNATION] iter %d: flow step raised energy %.6g -> %.6g, rejected",
                           it, energy.total, cand.total)

        trace.append(_record(it, energy, dec, u, v, static, gt, layers_ok, flows_ok))
        logger.info("[ALTERNATION] iter %d/%d: total %.6g (E_B %.4g, E_L %.4g, E_F %.4g)",
                    it, cfg.outer_iters, energy.total, energy.e_b, energy.e_l, energy.e_f)

        if not (layers_ok or flows_ok):
            logger.info("[ALTERNATION] both half-steps rejected, stopping at iter %d", it)
            break
        if cfg.stop_tol > 0 and previous - energy.total <= cfg.stop_tol * max(previous, np.finfo(float).tiny):
            logger.info("[ALTERNATION] relative decrease below %.3g, stopping at iter %d", cfg.stop_tol, it)
            break

    return dec, u, v, trace
