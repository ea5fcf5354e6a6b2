import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from singpert.comparison import (
    ComparisonCurve,
    CurveClass,
    DEFAULT_GRID,
    check_class,
    check_small_gain,
    compose,
    constant,
    construct_sigma,
    curve_from_spec,
    curve_sum,
    identity,
    invert_numeric,
    linear,
    log_grid,
    power,
    saturation,
)
from singpert.errors import BracketError, CurveEvaluationError, NonMonotoneError, PreconditionError


def test_log_grid_shape_and_bounds():
    g = log_grid()
    assert g.size == 200 and g[0] == pytest.approx(1e-6) and g[-1] == pytest.approx(1e6)
    assert np.all(np.diff(g) > 0)
    with pytest.raises(ValueError):
        log_grid(0.0, 1.0)


class TestCompose:
    def test_gain_pair_is_linear_ratio(self):
        c = compose(linear(1 / 4.41), linear(4.0))
        assert c.tag is CurveClass.K_INF
        for r in (1e-3, 1.0, 7.5, 1e4):
            assert c(r) == pytest.approx(4 / 4.41 * r, rel=1e-14)

    def test_identity_outer_is_pointwise_equal(self):
        c = power(3.0, 0.7)
        comp = compose(identity(), c)
        grid = log_grid(1e-3, 1e3, 50)
        np.testing.assert_allclose(comp(grid), c(grid), rtol=0, atol=0)

    def test_power_composition(self):
        assert compose(power(1, 2), power(1, 3))(2.0) == pytest.approx(64.0)

    def test_tag_rules(self):
        k_only = ComparisonCurve(lambda r: r / (1 + r), CurveClass.K)
        assert compose(linear(2), k_only).tag is CurveClass.K
        assert compose(saturation(), linear(2)).tag is CurveClass.PD
        assert compose(constant(1.0), linear(2)).tag is CurveClass.UNSPECIFIED

    def test_negative_inner_value_raises_on_evaluation(self):
        bad = ComparisonCurve(lambda r: -r, CurveClass.UNSPECIFIED)
        c = compose(identity(), bad)
        with pytest.raises(CurveEvaluationError):
            c(1.0)

    @given(st.floats(1e-4, 1e4))
    def test_associativity(self, r):
        a, b, c = power(2.0, 0.5), linear(3.0), power(0.5, 1.7)
        left = compose(compose(a, b), c)(r)
        right = compose(a, compose(b, c))(r)
        assert left == pytest.approx(right, rel=1e-12)


class TestInvert:
    def test_square_root(self):
        assert invert_numeric(power(1, 2), 4.0) == pytest.approx(2.0, rel=1e-12)

    def test_scaled_root_curve(self):
        c = ComparisonCurve(lambda r: 6.2 * math.sqrt(r), CurveClass.K_INF)
        assert invert_numeric(c, 6.2) == pytest.approx(1.0, rel=1e-11)

    def test_cubic_sum_substitutes_back(self):
        c = ComparisonCurve(lambda r: 4 * r + r**3, CurveClass.K_INF)
        r = invert_numeric(c, 5.0)
        # 4r + r^3 = 5 has the exact root r = 1
        assert abs(4 * r + r**3 - 5.0) <= 1e-9
        assert r == pytest.approx(1.0, rel=1e-10)

    def test_zero_target(self):
        assert invert_numeric(linear(3.0), 0.0) == 0.0

    def test_bounded_curve_cannot_be_bracketed(self):
        with pytest.raises(BracketError):
            invert_numeric(saturation(), 2.0)

    def test_negative_target_rejected(self):
        with pytest.raises(BracketError):
            invert_numeric(linear(1.0), -1.0)

    def test_decreasing_curve_detected(self):
        bump = ComparisonCurve(lambda r: r if r < 1 else max(0.0, 2 - r) + 10 * (r > 3) * r, CurveClass.UNSPECIFIED)
        with pytest.raises((NonMonotoneError, BracketError)):
            invert_numeric(bump, 5.0)

    def test_inverse_method_uses_exact_inverse(self):
        c = power(2.0, 3.0)
        inv = c.inverse()
        np.testing.assert_allclose(inv(c(np.array([0.5, 2.0]))), [0.5, 2.0], rtol=1e-14)

    @pytest.mark.parametrize("curve", [
        linear(2.5), power(1.0, 2.0), power(0.3, 0.5), identity(),
        ComparisonCurve(lambda r: r + r**3, CurveClass.K_INF, name="r+r^3", vectorized=True),
        curve_sum(linear(1.0), power(2.0, 0.5)),
    ], ids=lambda c: c.name)
    def test_right_inverse_on_random_targets(self, curve, rng):
        ys = 10 ** rng.uniform(-5, 5, size=100)
        for y in ys:
            r = invert_numeric(curve, y)
            assert curve(r) == pytest.approx(y, rel=1e-9)

    def test_vectorized_numeric_inverse(self):
        c = ComparisonCurve(lambda r: r + r**3, CurveClass.K_INF, vectorized=True)
        inv = c.inverse()
        ys = np.array([0.0, 1e-8, 2.0, 1e6])
        np.testing.assert_allclose(c(inv(ys)), ys, rtol=1e-10)


class TestClassCheck:
    def test_catalog_curves_pass(self):
        for c in (identity(), linear(2.0), power(0.5, 2), saturation(), constant(3.0)):
            assert check_class(c), c.name

    def test_mistagged_curve_fails(self):
        c = ComparisonCurve(lambda r: np.minimum(1.0, r), CurveClass.K_INF, vectorized=True)
        rep = check_class(c)
        assert not rep and "strictly increasing" in rep.problems[0]

    def test_nonzero_at_zero_fails_for_k(self):
        c = ComparisonCurve(lambda r: r + 1.0, CurveClass.K)
        assert not check_class(c)

    def test_negative_values_reported(self):
        c = ComparisonCurve(lambda r: r - 1.0, CurveClass.P)
        assert not check_class(c)


class TestSmallGain:
    def test_shipped_gain_pair_margin(self):
        rep = check_small_gain(linear(1 / 4.41), linear(4.0))
        assert rep.passed
        assert rep.worst_margin == pytest.approx(1 - 4 / 4.41, rel=1e-12)

    def test_identity_pair_fails_with_zero_margin(self):
        rep = check_small_gain(identity(), identity())
        assert not rep.passed and rep.worst_margin == 0.0

    def test_sqrt_pair_fails_below_quarter(self):
        rep = check_small_gain(linear(0.5), power(1.0, 0.5))
        assert not rep.passed
        assert rep.worst_r < 0.25

    def test_non_kinf_gain_rejected(self):
        with pytest.raises(PreconditionError):
            check_small_gain(saturation(), linear(1.0))


class TestSigma:
    def test_geometric_mean_of_shipped_gains(self):
        s = construct_sigma(linear(4.0), linear(1 / 4.41))
        for r in (1e-4, 1.0, 123.0):
            assert s(r) == pytest.approx(4.2 * r, rel=1e-12)

    def test_symmetric_pair_gives_identity(self):
        s = construct_sigma(linear(0.5), linear(0.5))
        assert s(3.0) == pytest.approx(3.0, rel=1e-12)

    def test_failed_small_gain_is_precondition_error(self):
        with pytest.raises(PreconditionError):
            construct_sigma(power(1.0, 2.0), identity())

    def test_numeric_inverse_path(self):
        gf = ComparisonCurve(lambda r: 0.2 * r + 0.1 * r * r / (1 + r), CurveClass.K_INF, vectorized=True)
        gs = linear(2.0)
        s = construct_sigma(gs, gf)
        grid = DEFAULT_GRID
        inv = gf.inverse()(grid)
        vals = s(grid)
        assert np.all(vals > gs(grid) * (1 + 1e-12)) and np.all(vals < inv * (1 - 1e-12))

    @settings(max_examples=50)
    @given(st.floats(0.05, 0.95), st.floats(0.3, 3.0))
    def test_strictly_between_bounds(self, k, p):
        gs = power(1.0, p)
        gf = power(k, 1.0 / p)
        if not check_small_gain(gf, gs).passed:
            return
        s = construct_sigma(gs, gf)
        g = DEFAULT_GRID
        lo, hi = gs(g), gf.inverse()(g)
        vals = s(g)
        assert np.all(vals >= lo * (1 + 1e-12)) and np.all(vals <= hi * (1 - 1e-12))


class TestCatalog:
    def test_spec_round_trip(self):
        c = curve_from_spec({"kind": "sum", "terms": [{"kind": "linear", "k": 2}, {"kind": "power", "k": 1, "p": 2}],
                             "scale": 0.5})
        assert c(2.0) == pytest.approx(0.5 * (4 + 4))
        assert c.tag is CurveClass.K_INF

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown curve kind"):
            curve_from_spec({"kind": "exp"})

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            linear(0.0)
        with pytest.raises(ValueError):
            power(1.0, -1.0)

    def test_product_tags(self):
        assert (constant(2.0) * linear(1.0)).tag is CurveClass.PD
        assert (constant(2.0) * constant(3.0)).tag is CurveClass.P
        assert (linear(2.0) * 3)(1.0) == 6.0

    def test_scalar_and_array_agree(self, rng):
        c = curve_sum(linear(1.0), saturation())
        r = rng.uniform(0, 5, 20)
        np.testing.assert_allclose(c(r), [c(float(v)) for v in r])
