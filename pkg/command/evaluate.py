# command/evaluate.py
"""
duoflow evaluate: score a result directory against a ground-truth directory.

Report keys: epe_u, epe_v, layer_err, warp_err_l1, warp_err_l2; then, when the
result holds them, naive / initial metrics, final-minus-baseline deltas and the
oracle EPEs. Anything that cannot be computed is listed under "omitted" with
the reason instead of appearing as a number.
"""
import argparse
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional

from core.errors import FormatError
from core.imaging import FlowField
from evaluation.metrics import epe_mean, layer_error_ncc, warping_error
from storage.bundles import LayerSet, load_layer_set, write_json
from storage.formats import read_flo

logger = logging.getLogger(__name__)

METRIC_KEYS = ("epe_u", "epe_v", "layer_err", "warp_err_l1", "warp_err_l2")


def register(commands) -> argparse.ArgumentParser:
    parser = commands.add_parser("evaluate", help="compare an estimate directory with ground truth")
    parser.add_argument("--result", type=Path, required=True, help="directory written by estimate")
    parser.add_argument("--gt", type=Path, required=True, help="ground-truth directory (synthesize layout)")
    parser.add_argument("--json", type=Path, default=None,
                        help="report path (default: RESULT/evaluation.json)")
    parser.set_defaults(handler=run)
    return parser


def _finite(value: Optional[float]) -> Optional[float]:
    return None if value is None or math.isnan(value) else float(value)


def _flow_or_none(path: Path) -> Optional[FlowField]:
    return read_flo(path) if path.exists() else None


def layer_metrics(result: LayerSet, gt: LayerSet, omitted: Dict[str, str], prefix: str = "") -> Dict[str, float]:
    """The five headline metrics for one state; reasons for skipped ones land in omitted."""
    metrics: Dict[str, float] = {}

    def put(key: str, value: Optional[float], reason: str) -> None:
        value = _finite(value)
        if value is None:
            omitted[prefix + key] = reason
        else:
            metrics[key] = value

    put("epe_u", epe_mean(result.u, gt.u) if result.u is not None and gt.u is not None else None,
        "U.flo missing from " + ("result" if result.u is None else "ground truth"))
    static = result.meta.get("mode") == "static"
    if static:
        omitted[prefix + "epe_v"] = "static result has no foreground flow"
    else:
        put("epe_v", epe_mean(result.v, gt.v) if result.v is not None and gt.v is not None else None,
            "V.flo missing from " + ("result" if result.v is None else "ground truth"))
    put("layer_err", layer_error_ncc(gt.l2, result.l2) if result.l2 is not None and gt.l2 is not None else None,
        "L2.png missing from " + ("result" if result.l2 is None else "ground truth"))

    if result.l1 is not None and result.l1p is not None and result.u is not None:
        put("warp_err_l1", warping_error(result.l1, result.l1p, result.u), "no pixel stays inside the frame")
    else:
        omitted[prefix + "warp_err_l1"] = "result lacks L1, L1p or U"
    if result.l2 is not None and result.l2p is not None:
        v = result.v
        if v is None and static:
            v = FlowField.zeros(*result.l2.shape[:2])
        if v is None:
            omitted[prefix + "warp_err_l2"] = "result lacks V"
        else:
            put("warp_err_l2", warping_error(result.l2, result.l2p, v), "no pixel stays inside the frame")
    else:
        omitted[prefix + "warp_err_l2"] = "result lacks L2 or L2p"
    return metrics


def evaluate_directories(result_dir: Path, gt_dir: Path) -> Dict[str, Any]:
    for name, directory in (("result", result_dir), ("ground truth", gt_dir)):
        if not directory.is_dir():
            raise FormatError(f"{name} directory {directory} does not exist")
    result = load_layer_set(result_dir)
    gt = load_layer_set(gt_dir)
    omitted: Dict[str, str] = {}
    report: Dict[str, Any] = dict(layer_metrics(result, gt, omitted))

    naive: Dict[str, float] = {}
    for key, name, truth in (("epe_u", "U_naive.flo", gt.u), ("epe_v", "V_naive.flo", gt.v)):
        flow = _flow_or_none(result_dir / name)
        if flow is not None and truth is not None:
            value = _finite(epe_mean(flow, truth))
            if value is not None:
                naive[key] = value
    if naive:
        report["naive"] = naive
        report["delta"] = {key: report[key] - value for key, value in naive.items() if key in report}

    initial_dir = result_dir / "initial"
    if initial_dir.is_dir():
        initial = load_layer_set(initial_dir)
        initial.meta = result.meta
        initial_metrics = layer_metrics(initial, gt, {}, prefix="initial.")
        report["initial"] = initial_metrics
        report["delta_initial"] = {key: report[key] - value for key, value in initial_metrics.items()
                                   if key in report}

    for key, name, truth in (("epe_u_oracle", "U_oracle.flo", gt.u), ("epe_v_oracle", "V_oracle.flo", gt.v)):
        flow = _flow_or_none(result_dir / name)
        if flow is not None and truth is not None:
            value = _finite(epe_mean(flow, truth))
            if value is not None:
                report[key] = value

    report["omitted"] = omitted
    return report


def run(args) -> int:
    report = evaluate_directories(args.result, args.gt)
    target = args.json or args.result / "evaluation.json"
    write_json(target, report)
    logger.info("[EVALUATE] %s vs %s -> %s", args.result, args.gt, target)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0
