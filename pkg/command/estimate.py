# command/estimate.py
"""
duoflow estimate: run the alternation on a frame pair and write the result
directory (layers, flows, colour-coded flows, trace.csv, initial state,
naive and optional oracle flows, meta.json, optional report.pdf).
"""
import argparse
import logging
from pathlib import Path
from typing import Any, Dict, Optional

from core.config import InitPolicy, Mode, RunSettings, resolve_settings
from core.energy import LayerDecomposition
from core.errors import InitializationError
from core.imaging import check_same_shape
from evaluation.reporting import convergence_report
from solvers.alternation import GroundTruth, alternate, initialize, oracle_flow
from solvers.flow import FlowProblem, solve_single_flow
from storage.bundles import load_layer_set, save_flow, save_layers, write_json
from storage.formats import read_flo, read_image

logger = logging.getLogger(__name__)

# solver flags by argparse type; all default to None so unset flags defer to the config file
_FLOAT_FLAGS = ("c", "lambda-l", "lambda-f", "stop-tol", "accept-tol", "irls-epsilon", "irls-tol",
                "cg-tol", "theta", "pd-tol", "tau", "sigma", "scale-factor", "gradient-blur")
_INT_FLAGS = ("outer", "irls-max-outer", "cg-maxiter", "warps", "relax-iters", "pd-iters", "min-size")
_BOOL_FLAGS = ("median-filter", "parallel-layers")
_SETTING_FLAGS = ("mode", "init", "reg", "tgv-alpha") + _FLOAT_FLAGS + _INT_FLAGS + _BOOL_FLAGS


def register(commands) -> argparse.ArgumentParser:
    parser = commands.add_parser("estimate", help="separate layers and estimate flows for a frame pair")
    parser.add_argument("--i0", type=Path, required=True, help="first frame I")
    parser.add_argument("--i1", type=Path, required=True, help="second frame I'")
    parser.add_argument("--out", type=Path, required=True, help="result directory")
    parser.add_argument("--config", type=Path, default=None, help="key=value settings file")
    parser.add_argument("--init-layers", type=Path, nargs=4, metavar=("L1", "L1p", "L2", "L2p"),
                        help="initial layers (required in dynamic mode unless --init-flows is given)")
    parser.add_argument("--init-flows", type=Path, nargs="+", metavar="FLO",
                        help="initial U.flo (and V.flo in dynamic mode)")
    parser.add_argument("--repair-layers", action="store_true",
                        help="clip supplied layers into bounds instead of rejecting them")
    parser.add_argument("--gt", type=Path, default=None,
                        help="ground-truth directory; adds errors to the trace and writes oracle flows")
    parser.add_argument("--pdf", action="store_true", help="also write report.pdf")

    solver = parser.add_argument_group("solver settings (override --config)")
    solver.add_argument("--mode", choices=[m.value for m in Mode], default=None)
    solver.add_argument("--init", choices=[p.value for p in InitPolicy], default=None)
    solver.add_argument("--reg", choices=["tv", "tgv2"], default=None, help="flow regularizer")
    solver.add_argument("--tgv-alpha", default=None, metavar="A1,A0", help="TGV weights, e.g. 1,2")
    for name in _FLOAT_FLAGS:
        solver.add_argument(f"--{name}", type=float, default=None)
    for name in _INT_FLAGS:
        solver.add_argument(f"--{name}", type=int, default=None)
    for name in _BOOL_FLAGS:
        solver.add_argument(f"--{name}", action=argparse.BooleanOptionalAction, default=None)
    parser.set_defaults(handler=run)
    return parser


def settings_from_args(args) -> RunSettings:
    flags = {name: getattr(args, name.replace("-", "_")) for name in _SETTING_FLAGS}
    return resolve_settings(flags, args.config)


def _load_ground_truth(directory: Path):
    found = load_layer_set(directory)
    if found.missing:
        logger.warning("[IO] ground truth %s lacks %s", directory, ", ".join(found.missing))
    gt = GroundTruth(u=found.u, v=found.v, l2=found.l2)
    gt_dec = None
    if all(layer is not None for layer in (found.l1, found.l1p, found.l2, found.l2p)):
        gt_dec = LayerDecomposition(found.l1, found.l1p, found.l2, found.l2p, float(found.meta.get("c", 0.25)))
    return gt, gt_dec


def _policy(args, settings: RunSettings) -> InitPolicy:
    if args.init is not None:
        return InitPolicy(args.init)
    if args.init_layers:
        return InitPolicy.SUPPLIED_LAYERS
    if args.init_flows:
        return InitPolicy.SUPPLIED_FLOWS
    return settings.solver.init


def _details(args, settings: RunSettings, policy: InitPolicy) -> Dict[str, str]:
    weights = settings.solver.weights
    return {
        "frames": f"{args.i0} / {args.i1}",
        "mode": settings.mode.value,
        "initialization": policy.value,
        "c": f"{settings.solver.c:g}",
        "lambda_l / lambda_f": f"{weights.lambda_l:g} / {weights.lambda_f:g}",
        "flow prior": "TV" if weights.tgv_order == 1 else f"TGV2 alpha={weights.tgv_alpha}",
        "outer iterations": str(settings.solver.outer_iters),
    }


def run(args) -> int:
    settings = settings_from_args(args)
    cfg = settings.solver
    mode = settings.mode
    static = mode is Mode.STATIC
    policy = _policy(args, settings)

    img = read_image(args.i0)
    img_p = read_image(args.i1)
    check_same_shape(("I", img), ("I'", img_p))

    layers: Optional[LayerDecomposition] = None
    if args.init_layers:
        layers = LayerDecomposition(*(read_image(path) for path in args.init_layers), cfg.c)
    flows = None
    if args.init_flows:
        if len(args.init_flows) > 2:
            raise InitializationError("--init-flows takes U.flo and at most one V.flo")
        u_init = read_flo(args.init_flows[0])
        v_init = read_flo(args.init_flows[1]) if len(args.init_flows) == 2 else None
        flows = (u_init, v_init)

    gt, gt_dec = (None, None)
    if args.gt is not None:
        gt, gt_dec = _load_ground_truth(args.gt)

    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)

    logger.info("[ESTIMATE] %s mode, %s initialization, %dx%d", mode.value, policy.value, *img.shape[:2])
    start = initialize(mode, img, img_p, policy, cfg, layers=layers, flows=flows, repair=args.repair_layers)
    dec0, u0, v0 = start
    save_layers(out / "initial", dec0)
    save_flow(out / "initial", "U", u0)
    if not static:
        save_flow(out / "initial", "V", v0)

    # flow of the composite frames, the baseline the separation has to beat
    if static and policy is InitPolicy.ZERO_FOREGROUND:
        naive = u0
    else:
        naive = solve_single_flow(FlowProblem(img, img_p, cfg.weights), None, cfg.relax)
    save_flow(out, "U_naive", naive, colour=False)
    if not static:
        save_flow(out, "V_naive", naive, colour=False)

    meta: Dict[str, Any] = {
        "mode": mode.value,
        "c": cfg.c,
        "init": policy.value,
        "inputs": {"i0": str(args.i0), "i1": str(args.i1)},
        "settings": settings.model_dump(mode="json"),
        "oracle": False,
    }
    if gt_dec is not None:
        if gt_dec.shape != img.shape:
            logger.warning("[ESTIMATE] ground-truth layers %s do not match the frames %s, no oracle flow",
                           gt_dec.shape, img.shape)
        else:
            u_oracle, v_oracle = oracle_flow(gt_dec, mode, cfg)
            save_flow(out, "U_oracle", u_oracle, colour=False)
            if not static:
                save_flow(out, "V_oracle", v_oracle, colour=False)
            meta["oracle"] = True

    dec, u, v, trace = alternate(img, img_p, mode, cfg, gt=gt, start=start)

    save_layers(out, dec)
    save_flow(out, "U", u)
    if not static:
        save_flow(out, "V", v)
    summary = convergence_report(
        trace,
        csv_path=out / "trace.csv",
        pdf_path=out / "report.pdf" if args.pdf else None,
        title="duoflow estimate",
        details=_details(args, settings, policy),
    )
    last = trace.records[-1].energy
    meta.update({
        "iterations": len(trace) - 1,
        "rejected_steps": trace.rejected_steps,
        "energy": {"e_b": last.e_b, "e_l": last.e_l, "e_f": last.e_f, "total": last.total},
    })
    write_json(out / "meta.json", meta)
    print(summary)
    return 0
