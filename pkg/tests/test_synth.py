import numpy as np
import pytest

from core.config import Mode
from core.errors import ConfigError
from evaluation.metrics import gradient_sparsity
from evaluation.synth import (
    LATTICE,
    AffineFlow,
    SmoothRandomFlow,
    make_flow,
    perturb_layers,
    quantize,
    rain_streaks,
    standard_suite,
)


@pytest.fixture(scope="module")
def suite():
    return standard_suite(seed=0)


class TestSuite:

    def test_catalogue_size(self, suite):
        assert len(suite) == 15
        assert sum(b.mode is Mode.STATIC for b in suite) == 10
        assert [b.name for b in suite][:2] == ["static_00", "static_01"]

    def test_every_bundle_is_consistent(self, suite):
        for bundle in suite:
            bundle.check_invariants()

    def test_integer_shift_is_exact(self, suite):
        assert suite[0].bcc_error() < 1e-12

    def test_colour_and_gray_present(self, suite):
        assert {b.channels for b in suite} == {1, 3}

    def test_mode_filter(self):
        dynamic = standard_suite(seed=0, mode=Mode.DYNAMIC, size=(32, 32))
        assert len(dynamic) == 5
        assert all(b.mode is Mode.DYNAMIC and b.size == (32, 32) for b in dynamic)

    def test_deterministic_per_seed(self):
        a = standard_suite(seed=4, mode=Mode.STATIC, size=(24, 24))
        b = standard_suite(seed=4, mode=Mode.STATIC, size=(24, 24))
        c = standard_suite(seed=5, mode=Mode.STATIC, size=(24, 24))
        assert all(np.array_equal(x.img, y.img) and np.array_equal(x.img_p, y.img_p) for x, y in zip(a, b))
        assert not np.array_equal(a[0].img, c[0].img)


class TestFlows:

    def test_identity_affine_is_zero(self):
        assert make_flow(AffineFlow(), 10, 12).is_zero()

    def test_smooth_flow_peak_equals_amplitude(self):
        flow = make_flow(SmoothRandomFlow(3.0, seed=2), 48, 40)
        assert float(flow.magnitude().max()) == pytest.approx(3.0)

    def test_amplitude_limited(self):
        with pytest.raises(ConfigError):
            make_flow(SmoothRandomFlow(20.0), 40, 40)


class TestContent:

    def test_rain_is_gradient_sparse(self):
        rain = rain_streaks(np.random.default_rng(0), 64, 64, 1)
        assert gradient_sparsity(rain) >= 0.7

    def test_suite_foregrounds_are_gradient_sparse(self, suite):
        for bundle in suite:
            assert gradient_sparsity(bundle.gt_dec.l2) >= 0.7, bundle.name

    def test_quantize_stays_on_lattice(self, rng):
        q = quantize(rng.uniform(-0.2, 1.2, (8, 8)), upper=0.5)
        codes = q * LATTICE
        np.testing.assert_allclose(codes, np.round(codes), atol=1e-6)
        assert q.min() >= 0.0 and q.max() <= 0.5

    @pytest.mark.parametrize("name", ["static_bundle", "dynamic_bundle"])
    def test_perturbed_layers_valid_but_different(self, request, name):
        bundle = request.getfixturevalue(name)
        dec = perturb_layers(bundle, seed=1)
        dec.check(bundle.img, bundle.img_p)
        assert not np.array_equal(dec.l2, bundle.gt_dec.l2)
        if bundle.mode is Mode.STATIC:
            assert np.array_equal(dec.l2, dec.l2p)

    def test_rain_dominates_static_background(self, suite):
        for bundle in suite:
            if bundle.mode is not Mode.STATIC:
                continue
            dec = bundle.gt_dec
            assert float(np.max(dec.l2)) >= 0.75 * float(np.ptp(dec.l1)), bundle.name
            assert float(np.mean(np.any(dec.l2 > 0, axis=-1))) >= 0.1, bundle.name
