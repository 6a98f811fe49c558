import numpy as np
import pytest
from scipy import sparse
from scipy.optimize import linprog

from core.config import Weights
from core.energy import (
    EnergyBreakdown,
    LayerDecomposition,
    anisotropic_tv,
    data_term,
    data_term_detail,
    flow_prior_tgv2,
    flow_prior_tv,
    layer_prior,
    minimise_tgv2_aux,
    replicated_gradient,
    tgv2_component,
    total_energy,
)
from core.errors import BoundViolationError
from core.imaging import FlowField, forward_mask, spatial_gradient, symmetrised_gradient


def _affine(h, w, coeffs):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    a, b, c = coeffs
    return a * xs + b * ys + c


def _random_decomposition(rng, h=16, w=16, ch=1):
    l1, l1p = rng.uniform(0.2, 0.7, (2, h, w, ch))
    l2, l2p = rng.uniform(0.0, 0.2, (2, h, w, ch))
    return LayerDecomposition(l1, l1p, l2, l2p)


def _smooth_flow(rng, h, w, scale=1.5):
    return FlowField(scale * rng.uniform(-1, 1) + 0.3 * rng.standard_normal((h, w)),
                     scale * rng.uniform(-1, 1) + 0.3 * rng.standard_normal((h, w)))


class TestPriors:

    def test_tv_of_constant_flow_is_zero(self):
        assert flow_prior_tv(FlowField(np.full((6, 7), 1.3), np.full((6, 7), -0.4))) == 0.0

    def test_tgv_of_affine_flow_vanishes(self):
        flow = FlowField(_affine(9, 11, (0.3, -0.2, 1.0)), _affine(9, 11, (-0.1, 0.05, 2.0)))
        assert flow_prior_tgv2(flow) <= 1e-8

    def test_tgv_with_replicated_gradient_on_affine(self):
        p = _affine(8, 8, (0.5, 0.25, -3.0))
        assert tgv2_component(p, replicated_gradient(p), (1.0, 2.0)) <= 1e-8

    def test_tgv_matches_linear_program(self):
        alpha = (1.0, 2.0)
        p = _affine(4, 4, (1.0, 0.0, 0.0)) ** 2
        n = p.size
        mx, my = forward_mask(p.shape)
        gx, gy = spatial_gradient(p)

        # columns of the symmetrised gradient as a linear map of w
        cols = []
        for k in range(2 * n):
            e = np.zeros(2 * n)
            e[k] = 1.0
            w = e.reshape(2, *p.shape)
            cols.append(np.concatenate([part.ravel() for part in symmetrised_gradient(w[0], w[1])]))
        sym = np.array(cols).T                                   # (3n, 2n)
        first = -np.diag(np.concatenate([mx.ravel(), my.ravel()]))  # M(grad p - w) = M grad p + first @ w
        offset = np.concatenate([(mx * gx).ravel(), (my * gy).ravel()])

        # variables: w (2n), t1 (2n), t2 (3n)
        cost = np.concatenate([np.zeros(2 * n), alpha[0] * np.ones(2 * n), alpha[1] * np.ones(3 * n)])
        eye1, eye2 = np.eye(2 * n), np.eye(3 * n)
        z12, z21 = np.zeros((2 * n, 3 * n)), np.zeros((3 * n, 2 * n))
        a_ub = np.block([
            [first, -eye1, z12],
            [-first, -eye1, z12],
            [sym, z21, -eye2],
            [-sym, z21, -eye2],
        ])
        b_ub = np.concatenate([-offset, offset, np.zeros(3 * n), np.zeros(3 * n)])
        bounds = [(None, None)] * (2 * n) + [(0, None)] * (5 * n)
        lp = linprog(cost, A_ub=sparse.csr_matrix(a_ub), b_ub=b_ub, bounds=bounds, method="highs")
        assert lp.status == 0

        value, w = minimise_tgv2_aux(p, alpha, iters=5000)
        assert value == pytest.approx(tgv2_component(p, w, alpha))
        assert value >= lp.fun - 1e-9
        assert value <= 1.01 * lp.fun + 1e-9


class TestDataTerm:

    def test_integer_shift_is_exact(self, rng):
        h, w = 6, 8
        l1 = rng.uniform(0.2, 0.7, (h, w, 1))
        l1p = np.full_like(l1, 0.45)
        l1p[:, 1:] = l1[:, :-1]
        l2 = np.full_like(l1, 0.1)
        dec = LayerDecomposition(l1, l1p, l2, l2.copy())
        u = FlowField(np.ones((h, w)), np.zeros((h, w)))
        assert data_term(dec, u, FlowField.zeros(h, w)) == 0.0

    def test_hand_computed_two_by_two(self):
        l1 = np.array([[0.5, 0.4], [0.3, 0.2]])
        l1p = np.array([[0.4, 0.4], [0.5, 0.1]])
        l2 = np.array([[0.1, 0.0], [0.2, 0.05]])
        l2p = np.array([[0.0, 0.0], [0.1, 0.1]])
        dec = LayerDecomposition(l1, l1p, l2, l2p)
        zeros = FlowField.zeros(2, 2)
        # (0.1 + 0 + 0.2 + 0.1) + (0.1 + 0 + 0.1 + 0.05)
        assert data_term(dec, zeros, zeros) == pytest.approx(0.65)

    def test_constant_layers_any_flow(self, rng):
        dec = LayerDecomposition(*np.full((4, 7, 7, 1), 0.2))
        assert data_term(dec, _smooth_flow(rng, 7, 7), _smooth_flow(rng, 7, 7)) == 0.0


class TestPriorExamples:

    def test_tv_of_ramp(self):
        h, w = 5, 7
        flow = FlowField(_affine(h, w, (1.0, 0.0, 0.0)), np.zeros((h, w)))
        assert flow_prior_tv(flow) == pytest.approx(h * (w - 1))

    @pytest.mark.parametrize("scale", [0.0, 0.5, 3.0])
    def test_tv_is_positively_homogeneous(self, rng, scale):
        flow = _smooth_flow(rng, 9, 9)
        scaled = FlowField(scale * flow.u, scale * flow.v)
        assert flow_prior_tv(scaled) == pytest.approx(scale * flow_prior_tv(flow))

    def test_layer_prior_of_step_edge(self):
        h, w, step = 6, 8, 0.2
        flat = np.full((h, w), 0.5)
        l2 = np.zeros((h, w))
        l2[:, 4:] = step
        dec = LayerDecomposition(flat, flat.copy(), l2, np.zeros((h, w)))
        assert layer_prior(dec) == pytest.approx(step * h)


class TestTotals:

    def test_assemble_weights_terms(self):
        e = EnergyBreakdown.assemble(2.0, 3.0, 4.0, Weights(lambda_l=0.5, lambda_f=0.25))
        assert e.total == pytest.approx(2.0 + 1.5 + 1.0)

    def test_layer_prior_sums_four_layers(self, rng):
        dec = _random_decomposition(rng)
        expected = sum(anisotropic_tv(x) for x in (dec.l1, dec.l1p, dec.l2, dec.l2p))
        assert layer_prior(dec) == pytest.approx(expected)

    def test_masked_pixels_counted(self):
        dec = LayerDecomposition(*np.full((4, 5, 6, 1), 0.1))
        u = FlowField(np.full((5, 6), 1.0), np.zeros((5, 6)))
        _, masked = data_term_detail(dec, u, None)
        assert masked == 5

    @pytest.mark.parametrize("static", [True, False])
    def test_shift_ambiguity(self, rng, static):
        for _ in range(10):
            dec = _random_decomposition(rng)
            u = _smooth_flow(rng, 16, 16)
            v = None if static else _smooth_flow(rng, 16, 16)
            s = rng.uniform(-0.3, 0.3)
            shifted = LayerDecomposition(dec.l1 + s, dec.l1p + s, dec.l2 - s, dec.l2p - s, dec.c)
            before = total_energy(dec, u, v).total
            after = total_energy(shifted, u, v).total
            assert abs(before - after) <= 1e-10 * max(1.0, abs(before))

    def test_static_has_no_second_prior(self, rng):
        dec = _random_decomposition(rng)
        u = _smooth_flow(rng, 16, 16)
        static = total_energy(dec, u, None)
        moving = total_energy(dec, u, FlowField(np.ones((16, 16)), np.ones((16, 16))))
        assert static.e_f == pytest.approx(flow_prior_tv(u))
        assert moving.e_f == pytest.approx(flow_prior_tv(u))
        assert moving.e_b != static.e_b


class TestDecomposition:

    def test_bounds_violation_has_repair_hint(self):
        img = np.full((4, 4), 0.5)
        dec = LayerDecomposition.from_foreground(img, img, np.full((4, 4), 0.4), np.full((4, 4), 0.1))
        assert any("l2 exceeds" in p for p in dec.violations(img, img))
        with pytest.raises(BoundViolationError, match="--repair-layers"):
            dec.check(img, img)

    def test_valid_decomposition_passes(self):
        img = np.full((4, 4), 0.5)
        dec = LayerDecomposition.from_foreground(img, img, np.full((4, 4), 0.2), np.full((4, 4), 0.25))
        dec.check(img, img)

    def test_c_range(self):
        with pytest.raises(BoundViolationError):
            LayerDecomposition(*np.zeros((4, 3, 3)), c=1.5)
