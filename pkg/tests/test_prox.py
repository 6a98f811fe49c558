import numpy as np
import pytest

from core.energy import flow_prior_tgv2, flow_prior_tv, tgv2_component
from core.imaging import FlowField, divergence, spatial_gradient, warp_backward
from solvers.prox import (
    Linearization,
    data_prox,
    data_prox_objective,
    linearize,
    smooth_prox_tgv2,
    smooth_prox_tv,
    threshold_step,
)


def _lin(offset, gx, gy, mask=None):
    offset = np.asarray(offset, dtype=float)
    shape = offset.shape[:2]
    mask = np.ones(shape, dtype=bool) if mask is None else mask
    return Linearization(offset, np.asarray(gx, dtype=float), np.asarray(gy, dtype=float), mask)


def _rof_oracle(f, weight, iters=20000):
    """FISTA on the dual of weight * TV(u) + 0.5 |u - f|^2; returns u = f + div p."""
    p = np.zeros((2,) + f.shape)
    y = p.copy()
    t = 1.0
    for _ in range(iters):
        gx, gy = spatial_gradient(f + divergence(y[0], y[1]))
        p_new = np.clip(y + np.stack([gx, gy]) / 8.0, -weight, weight)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = p_new + ((t - 1.0) / t_new) * (p_new - p)
        p, t = p_new, t_new
    return f + divergence(p[0], p[1])


def _rms(a, b):
    return float(np.sqrt(np.mean((a - b) ** 2)))


class TestThreshold:

    @pytest.mark.parametrize("rho, expected", [(1.0, -0.5), (0.2, -0.2), (-1.0, 0.5), (-0.3, 0.3)])
    def test_gray_three_regimes(self, rho, expected):
        lin = _lin(np.full((2, 2, 1), rho), np.ones((2, 2, 1)), np.zeros((2, 2, 1)))
        out = threshold_step(lin, FlowField.zeros(2, 2), theta=0.5)
        np.testing.assert_allclose(out.u, expected)
        np.testing.assert_allclose(out.v, 0.0)

    def test_gray_matches_brute_force(self, rng):
        theta = 0.3
        gx, gy = rng.standard_normal((2, 1, 1, 1))
        lin = _lin(rng.standard_normal((1, 1, 1)), gx, gy)
        aux = FlowField(rng.standard_normal((1, 1)), rng.standard_normal((1, 1)))
        out = threshold_step(lin, aux, theta)
        best = data_prox_objective(lin, out, aux, theta)[0, 0]

        grid = np.linspace(-3, 3, 601)
        uu, vv = np.meshgrid(aux.u[0, 0] + grid, aux.v[0, 0] + grid)
        rho = np.abs(lin.offset[0, 0, 0] + gx[0, 0, 0] * uu + gy[0, 0, 0] * vv)
        objective = rho + ((uu - aux.u[0, 0]) ** 2 + (vv - aux.v[0, 0]) ** 2) / (2 * theta)
        assert best <= objective.min() + 1e-9

    def test_colour_step_is_optimal_on_its_line(self, rng):
        theta = 0.25
        lin = _lin(rng.standard_normal((4, 4, 3)), rng.standard_normal((4, 4, 3)), rng.standard_normal((4, 4, 3)))
        aux = FlowField(rng.standard_normal((4, 4)), rng.standard_normal((4, 4)))
        out = threshold_step(lin, aux, theta)
        value = data_prox_objective(lin, out, aux, theta)
        assert np.all(value <= data_prox_objective(lin, aux, aux, theta) + 1e-12)

        du, dv = out.u - aux.u, out.v - aux.v
        norm = np.hypot(du, dv)
        moved = norm > 1e-12
        for scale in np.linspace(-2.0, 2.0, 41):
            candidate = FlowField(aux.u + scale * np.where(moved, du, 0.0), aux.v + scale * np.where(moved, dv, 0.0))
            assert np.all(value <= data_prox_objective(lin, candidate, aux, theta) + 1e-9)

    def test_masked_pixels_keep_aux(self):
        mask = np.array([[True, False], [False, True]])
        lin = _lin(np.ones((2, 2, 1)), np.ones((2, 2, 1)), np.ones((2, 2, 1)), mask)
        aux = FlowField(np.full((2, 2), 0.1), np.full((2, 2), -0.1))
        out = threshold_step(lin, aux, 0.5)
        assert out.u[0, 1] == 0.1 and out.v[1, 0] == -0.1
        assert out.u[0, 0] != 0.1

    def test_linearisation_exact_at_base(self, textured):
        f0 = textured(16, 16)
        f1 = textured(16, 16, seed=3)
        base = FlowField(np.full((16, 16), 0.4), np.full((16, 16), -0.2))
        lin = linearize(f0, f1, base, blur=0.0)
        warped, _ = warp_backward(f1, base)
        np.testing.assert_allclose(lin.residual(base), warped - f0, atol=1e-12)

    def test_data_prox_lowers_its_objective(self, textured):
        f0 = textured(16, 16, channels=3)
        f1 = textured(16, 16, channels=3, seed=4)
        base = FlowField.zeros(16, 16)
        out = data_prox(f0, f1, base, base, theta=0.3, blur=0.0)
        lin = linearize(f0, f1, base, blur=0.0)
        assert np.all(data_prox_objective(lin, out, base, 0.3) <= data_prox_objective(lin, base, base, 0.3) + 1e-12)

    def test_ramp_recovers_subpixel_shift(self):
        width, shift = 16, 0.4
        xs = np.tile(np.arange(width, dtype=float), (4, 1))[..., None]
        f1 = xs / width
        f0 = (xs + shift) / width
        base = FlowField.zeros(4, width)
        out = data_prox(f0, f1, base, base, theta=100.0, blur=0.0)
        np.testing.assert_allclose(out.u, shift, atol=1e-12)
        np.testing.assert_allclose(out.v, 0.0)


class TestRof:

    def test_matches_dual_oracle(self, rng):
        target = FlowField(rng.random((8, 8)), rng.random((8, 8)))
        result = smooth_prox_tv(target, 0.1, iters=500)
        assert _rms(result.flow.u, _rof_oracle(target.u, 0.1)) <= 1e-3
        assert _rms(result.flow.v, _rof_oracle(target.v, 0.1)) <= 1e-3
        assert result.gap >= -1e-9

    def test_constant_target_unchanged(self):
        target = FlowField(np.full((6, 6), 0.8), np.full((6, 6), -1.2))
        result = smooth_prox_tv(target, 0.5, iters=30)
        np.testing.assert_allclose(result.flow.u, target.u, atol=1e-12)
        np.testing.assert_allclose(result.flow.v, target.v, atol=1e-12)

    def test_zero_weight_copies(self, rng):
        target = FlowField(rng.random((5, 5)), rng.random((5, 5)))
        result = smooth_prox_tv(target, 0.0)
        assert np.array_equal(result.flow.u, target.u)
        assert result.flow.u is not target.u

    def test_warm_start_reduces_gap(self, rng):
        target = FlowField(rng.random((8, 8)), rng.random((8, 8)))
        first = smooth_prox_tv(target, 0.2, iters=20)
        again = smooth_prox_tv(target, 0.2, iters=200, duals=first.duals)
        assert again.gap <= first.gap + 1e-12

    def test_lowers_total_variation_and_objective(self, rng):
        target = FlowField(rng.random((12, 12)), rng.random((12, 12)))
        weight = 0.3
        out = smooth_prox_tv(target, weight, iters=300).flow
        closeness = 0.5 * float(np.sum((out.u - target.u) ** 2 + (out.v - target.v) ** 2))
        assert flow_prior_tv(out) <= flow_prior_tv(target)
        assert weight * flow_prior_tv(out) + closeness <= weight * flow_prior_tv(target)

    def test_gap_tolerance_stops_early(self, rng):
        target = FlowField(rng.random((16, 16)), rng.random((16, 16)))
        tol = 1e-5
        first = smooth_prox_tv(target, 0.1, iters=5000, tol=tol)
        assert first.iterations < 5000
        assert first.gap <= tol * 2 * 16 * 16
        again = smooth_prox_tv(target, 0.1, iters=5000, duals=first.duals, tol=tol)
        assert again.iterations <= first.iterations
        assert _rms(again.flow.u, first.flow.u) <= 1e-2

    def test_without_tolerance_runs_every_iteration(self, rng):
        target = FlowField(rng.random((6, 6)), rng.random((6, 6)))
        assert smooth_prox_tv(target, 0.2, iters=37).iterations == 37


class TestTgvProx:

    def test_long_run_agreement(self, rng):
        target = FlowField(rng.random((8, 8)), rng.random((8, 8)))
        short = smooth_prox_tgv2(target, 0.1, iters=2000)
        long = smooth_prox_tgv2(target, 0.1, iters=20000)
        assert _rms(short.flow.u, long.flow.u) <= 1e-3
        assert _rms(short.flow.v, long.flow.v) <= 1e-3

    def test_affine_target_is_fixed_point(self):
        ys, xs = np.mgrid[0:9, 0:9].astype(float)
        target = FlowField(0.2 * xs - 0.1 * ys + 1.0, -0.05 * xs + 0.3 * ys)
        result = smooth_prox_tgv2(target, 0.5, iters=100)
        np.testing.assert_allclose(result.flow.u, target.u, atol=1e-8)
        np.testing.assert_allclose(result.flow.v, target.v, atol=1e-8)
        assert result.aux is not None and result.aux[0].shape == (2, 9, 9)

    def test_zero_weight_returns_aux(self, rng):
        target = FlowField(rng.random((5, 5)), rng.random((5, 5)))
        result = smooth_prox_tgv2(target, 0.0)
        assert np.array_equal(result.flow.v, target.v)
        assert result.aux[1].shape == (2, 5, 5)

    def test_lowers_objective(self, rng):
        target = FlowField(rng.random((10, 10)), rng.random((10, 10)))
        weight = 0.2
        result = smooth_prox_tgv2(target, weight, iters=2000)
        out = result.flow
        # the solver's own auxiliary fields bound TGV2(out) from above
        prior_out = sum(tgv2_component(p, w, (1.0, 2.0)) for p, w in zip((out.u, out.v), result.aux))
        closeness = 0.5 * float(np.sum((out.u - target.u) ** 2 + (out.v - target.v) ** 2))
        prior_target = flow_prior_tgv2(target)
        assert prior_out <= prior_target
        assert weight * prior_out + closeness <= weight * prior_target
