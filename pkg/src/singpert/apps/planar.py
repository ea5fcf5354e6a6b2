"""Planar (n = m = 1) scenarios: the saturated example, feedback optimization
with a state-dependent slow gain, and nonlinear integral control."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .. import kernels
from ..certificates import (
    ISSCertificate,
    TheoremConditions,
    build_gtilde_s,
    find_c0_max,
    make_rng,
    sample_states,
)
from ..comparison import ComparisonCurve, CurveClass, compose, constant, linear, power
from ..system import NativeModel, PerturbedSystem, rhs

__all__ = [
    "ScenarioBundle",
    "psi_curve",
    "example1_certificate",
    "example1_scenario",
    "example1_c0_sweep",
    "feedback_optimization_scenario",
    "integral_control_scenario",
    "equilibrium_jacobian",
    "expm_norm",
]


@dataclass(frozen=True)
class ScenarioBundle:
    """A system with its certificate, optional theorem data and the sampling box."""

    name: str
    system: PerturbedSystem
    certificate: ISSCertificate | None
    conditions: TheoremConditions | None = None
    g_breve: ComparisonCurve | None = None
    x_box: float = 5.0
    z_box: float = 5.0
    input_box: float = 1.0

    @property
    def equilibrium(self):
        return self.system.equilibrium()

    def samples(self, count=10_000, seed=0, stream=0):
        return sample_states(self.system, count, self.x_box, self.z_box, self.input_box, seed, stream)

    def initial_conditions(self, count, seed=0, stream=1):
        """``count`` points drawn uniformly from the box around the equilibrium."""
        rng = make_rng(seed, stream)
        x_eq, z_eq = self.equilibrium
        xs = x_eq + rng.uniform(-self.x_box, self.x_box, size=(count, self.system.n))
        zs = z_eq + rng.uniform(-self.z_box, self.z_box, size=(count, self.system.m))
        return list(zip(xs, zs))


def _sat(v):
    return np.clip(v, -1.0, 1.0)


def _arr(v):
    return np.atleast_1d(np.asarray(v, dtype=float))


def psi_curve():
    """``r * min(1, r)``."""
    return ComparisonCurve(lambda r: r * np.minimum(1.0, r), CurveClass.K_INF, name="psi", vectorized=True)


def _sqrt2r():
    return power(math.sqrt(2.0), 0.5)


def _quadratic_certificate(alpha_s, gamma_s, alpha_f, lambda_f1, scale, shift=0.0):
    """``V_s = scale*|x|^2``, ``V_f = scale*|z - x - shift|^2`` with matching gradients."""
    sq = power(scale, 2.0)
    return ISSCertificate(
        V_s=lambda x: scale * np.sum(np.square(x), axis=-1),
        grad_V_s=lambda x: 2.0 * scale * np.asarray(x, dtype=float),
        V_f=lambda z, x: scale * np.sum(np.square(np.asarray(z) - np.asarray(x) - shift), axis=-1),
        grad_V_f_z=lambda z, x: 2.0 * scale * (np.asarray(z) - np.asarray(x) - shift),
        grad_V_f_x=lambda z, x: -2.0 * scale * (np.asarray(z) - np.asarray(x) - shift),
        alpha_s_lower=sq, alpha_s_upper=sq, gamma_s=gamma_s, alpha_s=alpha_s,
        alpha_f_lower=sq, alpha_f_upper=sq, alpha_f=alpha_f, lambda_f1=lambda_f1,
    )


# -- saturated example ---------------------------------------------------------

def example1_certificate(rho=0.9):
    """Certificate family indexed by ``rho`` in (0, 1).

    ``gamma_s(r) = r / rho^2`` and ``alpha_s(r) = (1 - rho) psi(sqrt(2r))``.
    """
    if not 0 < rho < 1:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    psi = psi_curve()
    s = _sqrt2r()
    alpha_f = compose(psi, s)
    alpha_s = alpha_f.scaled(1.0 - rho)
    return _quadratic_certificate(alpha_s, linear(1.0 / rho**2), alpha_f, s, 0.5)


def _example1_system(c0):
    return PerturbedSystem(
        n=1, m=1,
        g_s=lambda x, z, d: -_sat(_arr(z)),
        g_f=lambda z, x, w: -_sat(_arr(z) - _arr(x)),
        rho_s=lambda x, z, d: c0,
        rho_f=lambda z, x, w: 1.0,
        phi=lambda x: _arr(x).copy(),
        name=f"saturated(c0={c0:g})",
        native=NativeModel(kernels.SATURATED, (float(c0),)),
    )


def example1_scenario(c0=0.4, rho=0.9, rho_prime=None):
    """Saturated two-time-scale loop ``x' = -c0 sat(z)``, ``z' = -sat(z - x)``.

    Theorem data are attached when ``c0 / (1 - c0) < rho``: then ``gamma_f``
    uses a ``rho_prime`` strictly between the two (midpoint by default),
    ``rho_upper_s = c0 * g_tilde`` and the rate floors are ``c0`` and 1.
    """
    if not c0 > 0:
        raise ValueError("c0 must be positive")
    cert = example1_certificate(rho)
    g_breve = ComparisonCurve(lambda r: np.minimum(1.0, r), CurveClass.PD, name="sat", vectorized=True)
    conditions = None
    lo = c0 / (1.0 - c0) if c0 < 1 else math.inf
    if rho_prime is None and lo < rho:
        rho_prime = 0.5 * (lo + rho)
    if rho_prime is not None:
        gamma_f = linear(rho_prime**2)
        g_tilde = build_gtilde_s(cert, gamma_f, g_breve)
        conditions = TheoremConditions(
            rho_lower_s=constant(c0),
            gamma_f=gamma_f,
            rho_upper_s=ComparisonCurve(g_tilde.fn, CurveClass.P, name="c0*g_tilde", vectorized=True).scaled(c0),
            rho_lower_f=constant(1.0),
        )
    return ScenarioBundle("example1_saturated", _example1_system(c0), cert, conditions, g_breve, 5.0, 5.0)


def example1_c0_sweep(rhos=None, grid=None):
    """Best admissible ``c0`` over the certificate family.

    Returns ``(c0_max, rho_at_max, bounds)`` with one :class:`C0Bound` per rho.
    """
    rhos = np.arange(1, 100) / 100.0 if rhos is None else np.asarray(rhos, dtype=float)
    g_breve = ComparisonCurve(lambda r: np.minimum(1.0, r), CurveClass.PD, name="sat", vectorized=True)
    bounds = [find_c0_max(example1_certificate(float(r)), g_breve, grid) for r in rhos]
    values = np.array([b.value if b.feasible else 0.0 for b in bounds])
    i = int(np.argmax(values))
    return float(values[i]), float(rhos[i]), bounds


# -- cubic fast dynamics -------------------------------------------------------

def _cubic_system(name, k, p_exp, g_scale, z_ref, shift):
    """``x' = k |g|^p g`` with ``g = -g_scale (z - z_ref)`` and ``z' = -(z - x - shift)^3``."""
    def g_s(x, z, d):
        return -g_scale * (_arr(z) - z_ref)

    def rho_s(x, z, d):
        if p_exp == 0:
            return k
        return k * float(np.linalg.norm(g_s(x, z, d))) ** p_exp

    return PerturbedSystem(
        n=1, m=1,
        g_s=g_s,
        g_f=lambda z, x, w: -(_arr(z) - _arr(x) - shift) ** 3,
        rho_s=rho_s,
        rho_f=lambda z, x, w: 1.0,
        phi=lambda x: _arr(x) + shift,
        name=name,
        native=NativeModel(kernels.CUBIC, (float(k), float(p_exp), float(g_scale), float(z_ref), float(shift))),
    )


def feedback_optimization_scenario(rho_coeff=0.004, use_nonlinear_gain=True):
    """Feedback optimization loop in shifted coordinates, equilibrium ``(0, 1)``.

    Slow law ``x' = rho(|-2z + 2|) (-2z + 2)`` with ``rho(r) = rho_coeff r^2``
    (or the constant ``rho_coeff``), plant ``z' = -(z - x - 1)^3``.
    Certificate ``V_s = x^2``, ``V_f = (z - x - 1)^2``; theorem data
    ``gamma_f(r) = r / 4.41``, ``rho_upper_s(r) = 0.99 r^1.5`` and
    ``rho_lower_s(r) = 0.975 rho_coeff r``.
    """
    if not rho_coeff > 0:
        raise ValueError("rho_coeff must be positive")
    p_exp = 2.0 if use_nonlinear_gain else 0.0
    label = "nonlinear" if use_nonlinear_gain else "constant"
    system = _cubic_system(f"feedback_opt({label}, {rho_coeff:g})", rho_coeff, p_exp, 2.0, 1.0, 1.0)
    cert = _quadratic_certificate(linear(2.0), linear(4.0), power(2.0, 2.0), power(2.0, 0.5), 1.0, shift=1.0)
    conditions = TheoremConditions(
        rho_lower_s=linear(0.975 * rho_coeff) if use_nonlinear_gain else constant(0.975 * rho_coeff),
        gamma_f=linear(1.0 / 4.41),
        rho_upper_s=power(0.99, 1.5),
        rho_lower_f=constant(1.0),
    )
    return ScenarioBundle("example2_feedback_opt", system, cert, conditions, linear(2.0), 3.0, 3.0)


def integral_control_scenario(use_nonlinear_gain=True, rho_coeff=0.004):
    """Integral control ``x' = -rho(|z|) z`` of the plant ``z' = -(z - x)^3``.

    ``rho(r) = rho_coeff r^2`` when ``use_nonlinear_gain``, else the constant
    ``rho_coeff`` (the classical integrator).  Certificate ``V_s = x^2/2``,
    ``V_f = (z - x)^2/2``; the theorem data hold for the nonlinear law when
    ``29.791 rho_coeff <= 0.99``.
    """
    if not rho_coeff > 0:
        raise ValueError("rho_coeff must be positive")
    p_exp = 2.0 if use_nonlinear_gain else 0.0
    label = "nonlinear" if use_nonlinear_gain else "linear"
    system = _cubic_system(f"integral_control({label}, {rho_coeff:g})", rho_coeff, p_exp, 1.0, 0.0, 0.0)
    cert = _quadratic_certificate(linear(1.0), linear(4.0), power(4.0, 2.0), _sqrt2r(), 0.5)
    floor = linear(0.99 * rho_coeff / 2.0) if use_nonlinear_gain else constant(0.99 * rho_coeff)
    conditions = TheoremConditions(
        rho_lower_s=floor,
        gamma_f=linear(1.0 / 4.41),
        rho_upper_s=power(0.99 * 2.0**1.5, 1.5),
        rho_lower_f=constant(1.0),
    )
    return ScenarioBundle("integral_control", system, cert, conditions, linear(1.0), 3.0, 3.0)


def equilibrium_jacobian(system, h=1e-6):
    """Central-difference Jacobian of the full vector field at the equilibrium."""
    x0, z0 = system.equilibrium()
    y0 = np.concatenate([x0, z0])
    n = system.n
    cols = []
    for j in range(y0.size):
        yp, ym = y0.copy(), y0.copy()
        yp[j] += h
        ym[j] -= h
        fp = np.concatenate(rhs(system, 0.0, yp[:n], yp[n:]))
        fm = np.concatenate(rhs(system, 0.0, ym[:n], ym[n:]))
        cols.append((fp - fm) / (2 * h))
    return np.column_stack(cols)


def expm_norm(jacobian, t):
    """Spectral norm of ``exp(J t)``."""
    return float(np.linalg.norm(scipy.linalg.expm(np.asarray(jacobian) * t), 2))

