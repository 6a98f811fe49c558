"""
Shared fixtures: seeded generators, small synthetic instances and solver
settings cut down so unit tests stay fast.
"""
import os
import sys

import numpy as np
import pytest

# repository root on the import path, like running `python main.py` from it
sys.path.insert(0, os.path.join(os.path.dirname(__file__), ".."))

from core.config import IrlsConfig, Mode, RelaxConfig, SolverConfig  # noqa: E402
from evaluation.synth import (  # noqa: E402
    ConstantFlow,
    flat_shapes,
    make_flow,
    rain_streaks,
    render_pair,
    textured_background,
)


@pytest.fixture(autouse=True)
def _clean_environment(monkeypatch):
    for name in ("DUOFLOW_CONFIG", "DUOFLOW_LOG_LEVEL", "DUOFLOW_LOGGING_INI"):
        monkeypatch.delenv(name, raising=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def textured():
    """Factory for smooth textured images in [0, 1]."""
    def make(h=32, w=32, channels=1, seed=0):
        return textured_background(np.random.default_rng(seed), h, w, channels)
    return make


@pytest.fixture
def fast_cfg():
    return SolverConfig(
        outer_iters=3,
        irls=IrlsConfig(max_outer=15),
        relax=RelaxConfig(warps_per_level=3, relax_iters=3, pd_iters=20, parallel_layers=False),
    )


@pytest.fixture
def static_bundle():
    rng = np.random.default_rng(7)
    h, w = 32, 32
    return render_pair(textured_background(rng, h, w, 1), rain_streaks(rng, h, w, 1),
                       make_flow(ConstantFlow(1.0, 0.0), h, w), None, Mode.STATIC, name="static_small")


@pytest.fixture
def dynamic_bundle():
    rng = np.random.default_rng(11)
    h, w = 32, 32
    return render_pair(textured_background(rng, h, w, 1), flat_shapes(rng, h, w, 1),
                       make_flow(ConstantFlow(1.0, 0.0), h, w), make_flow(ConstantFlow(-1.0, 1.0), h, w),
                       Mode.DYNAMIC, name="dynamic_small")
