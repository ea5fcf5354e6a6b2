import math

import numpy as np
import pytest

from singpert import _pykernels, kernels


def test_selector_exposes_active_backend():
    assert kernels.BACKEND in {"cython", "python"}
    assert kernels.backends()[-1] is _pykernels


@pytest.mark.parametrize("z,expected", [(0.0, (0.0, 0.0)), (2.0, (-0.4, -1.0)), (-0.5, (0.2, 0.5))])
def test_saturated_rhs(backend, z, expected):
    dx, dz = backend.planar_rhs(kernels.SATURATED, (0.4,), 0.0, z)
    assert (dx, dz) == pytest.approx(expected)


def test_cubic_rhs_nonlinear_gain(backend):
    # 0.004 * |-2|^2 * (-2) and -(2 - 0 - 1)^3
    dx, dz = backend.planar_rhs(kernels.CUBIC, (0.004, 2.0, 2.0, 1.0, 1.0), 0.0, 2.0)
    assert dx == pytest.approx(-0.032) and dz == pytest.approx(-1.0)


def test_cubic_rhs_constant_gain(backend):
    dx, _ = backend.planar_rhs(kernels.CUBIC, (0.004, 0.0, 2.0, 1.0, 1.0), 0.0, 2.0)
    assert dx == pytest.approx(-0.008)


def test_step_count_lands_on_final_time(backend):
    ts, xs, zs, steps, div = backend.rk4_planar(kernels.SATURATED, (0.4,), 1.0, 1.0, 1.0005, 1e-3, 1, 1e8)
    assert steps == 1001 and not div
    assert ts[-1] == pytest.approx(1.0005, abs=1e-15)
    assert np.all(np.diff(ts) > 0)


def test_record_every_keeps_endpoints(backend):
    ts, xs, zs, steps, _ = backend.rk4_planar(kernels.SATURATED, (0.4,), 1.0, 1.0, 1.0, 1e-3, 300, 1e8)
    np.testing.assert_allclose(ts, [0.0, 0.3, 0.6, 0.9, 1.0], atol=1e-12)
    assert xs[0] == 1.0 and zs[0] == 1.0


def test_divergence_truncates_and_flags(backend):
    # anti-damped cubic fast dynamics blow up: negative gain scale flips the sign of g
    ts, xs, zs, steps, div = backend.rk4_planar(kernels.CUBIC, (1.0, 0.0, -1.0, 0.0, 0.0), 5.0, 0.0,
                                                100.0, 1e-2, 1, 1e3)
    assert div
    assert math.hypot(xs[-1], zs[-1]) > 1e3
    assert np.all(np.isfinite(xs)) and ts.size == steps + 1


def test_backends_bit_identical():
    if kernels.compiled_backend is None:
        pytest.skip("compiled backend not built")
    for model, prm, x0, z0 in [(kernels.SATURATED, (0.4,), 3.0, -2.0),
                               (kernels.CUBIC, (0.004, 2.0, 2.0, 1.0, 1.0), 2.0, -1.0),
                               (kernels.CUBIC, (1.0, 0.0, 1.0, 0.0, 0.0), 0.5, 0.5)]:
        a = kernels.compiled_backend.rk4_planar(model, prm, x0, z0, 20.0, 1e-3, 7, 1e8)
        b = _pykernels.rk4_planar(model, prm, x0, z0, 20.0, 1e-3, 7, 1e8)
        for u, v in zip(a[:3], b[:3]):
            np.testing.assert_array_equal(u, v)
        assert a[3:] == b[3:]
