# storage/bundles.py
"""
Directory layouts.

Synthetic bundle:  I.png Iprime.png L1.png L1p.png L2.png L2p.png U.flo V.flo meta.json
                   (+ init_L1.png init_L1p.png init_L2.png init_L2p.png for dynamic bundles)
Estimate result:   L1.png L1p.png L2.png L2p.png U.flo U.png [V.flo V.png] trace.csv meta.json
                   U_naive.flo [V_naive.flo] [U_oracle.flo V_oracle.flo] initial/ [report.pdf]
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from core.config import Mode
from core.energy import LayerDecomposition
from core.errors import FormatError
from core.imaging import FlowField
from evaluation.synth import GroundTruthBundle
from storage.formats import flow_to_color, read_flo, read_image, write_flo, write_image

logger = logging.getLogger(__name__)

LAYER_FILES = ("L1.png", "L1p.png", "L2.png", "L2p.png")
INIT_LAYER_FILES = ("init_L1.png", "init_L1p.png", "init_L2.png", "init_L2p.png")


def _ensure_dir(directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


def write_json(path, payload: Dict[str, Any]) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc


def save_layers(directory, dec: LayerDecomposition, names=LAYER_FILES) -> None:
    directory = _ensure_dir(directory)
    for name, layer in zip(names, (dec.l1, dec.l1p, dec.l2, dec.l2p)):
        write_image(layer, directory / name, bit_depth=16)


def save_flow(directory, name: str, flow: FlowField, colour: bool = True) -> None:
    directory = _ensure_dir(directory)
    write_flo(flow, directory / f"{name}.flo")
    if colour:
        write_image(flow_to_color(flow), directory / f"{name}.png", bit_depth=8)


def _optional(path: Path, reader):
    return reader(path) if path.exists() else None


# ==========================================
# SYNTHETIC BUNDLES
# ==========================================

def save_bundle(bundle: GroundTruthBundle, directory, init_layers: Optional[LayerDecomposition] = None) -> Path:
    directory = _ensure_dir(directory)
    write_image(bundle.img, directory / "I.png")
    write_image(bundle.img_p, directory / "Iprime.png")
    save_layers(directory, bundle.gt_dec)
    write_flo(bundle.gt_u, directory / "U.flo")
    write_flo(bundle.gt_v, directory / "V.flo")
    if init_layers is not None:
        save_layers(directory, init_layers, INIT_LAYER_FILES)
    write_json(directory / "meta.json", {
        "mode": bundle.mode.value,
        "c": bundle.gt_dec.c,
        "seed": bundle.seed,
        "name": bundle.name,
        "channels": bundle.channels,
        "size": list(bundle.size),
    })
    logger.debug("[IO] bundle %s -> %s", bundle.name, directory)
    return directory


def load_bundle(directory) -> GroundTruthBundle:
    """Read a complete synthetic bundle back into memory."""
    directory = Path(directory)
    meta = read_json(directory / "meta.json")
    img = read_image(directory / "I.png")
    img_p = read_image(directory / "Iprime.png")
    l1, l1p, l2, l2p = (read_image(directory / name) for name in LAYER_FILES)
    dec = LayerDecomposition(l1, l1p, l2, l2p, float(meta.get("c", 0.25)))
    return GroundTruthBundle(img, img_p, dec, read_flo(directory / "U.flo"), read_flo(directory / "V.flo"),
                             Mode(meta.get("mode", "static")), int(meta.get("seed", 0)), meta.get("name", ""))


@dataclass(eq=False)
class LayerSet:
    """Whatever subset of layers, flows and metadata a directory holds."""

    l1: Optional[np.ndarray] = None
    l1p: Optional[np.ndarray] = None
    l2: Optional[np.ndarray] = None
    l2p: Optional[np.ndarray] = None
    u: Optional[FlowField] = None
    v: Optional[FlowField] = None
    meta: Dict[str, Any] = field(default_factory=dict)
    missing: List[str] = field(default_factory=list)


def load_layer_set(directory, flow_suffix: str = "") -> LayerSet:
    directory = Path(directory)
    found = LayerSet()
    for attr, name in zip(("l1", "l1p", "l2", "l2p"), LAYER_FILES):
        value = _optional(directory / name, read_image)
        setattr(found, attr, value)
        if value is None:
            found.missing.append(name)
    for attr, stem in (("u", "U"), ("v", "V")):
        name = f"{stem}{flow_suffix}.flo"
        value = _optional(directory / name, read_flo)
        setattr(found, attr, value)
        if value is None:
            found.missing.append(name)
    meta_path = directory / "meta.json"
    if meta_path.exists():
        found.meta = read_json(meta_path)
    return found
