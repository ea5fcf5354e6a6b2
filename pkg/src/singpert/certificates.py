"""ISS-Lyapunov certificates: sampled verification, perturbation-function
synthesis and the max-type composite Lyapunov function.

Every "for all states" statement is checked on a finite :class:`SampleSet`
(uniform in a box, plus the equilibrium and points on the coordinate axes),
and every "for all r > 0" statement on a log-spaced grid.  Nothing is claimed
outside those sets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .comparison import (
    DEFAULT_GRID,
    ComparisonCurve,
    CurveClass,
    check_small_gain,
    compose,
    construct_sigma,
    curve_sum,
)
from .errors import InequalityViolationError, PreconditionError
from .report import ConditionResult, Report

__all__ = [
    "ISSCertificate",
    "TheoremConditions",
    "SampleSet",
    "sample_states",
    "make_rng",
    "verify_assumption2",
    "check_gradients",
    "verify_theorem1",
    "build_gbar_s",
    "build_gtilde_s",
    "C0Bound",
    "c0_bound_from_curves",
    "find_c0_max",
    "derive_rho_s0",
    "check_rho_s0",
    "derive_rho_f0",
    "validate_g_breve",
    "validate_gf_lower",
    "Branch",
    "MaxLyapunov",
    "build_max_lyapunov",
    "DecreaseReport",
    "check_decrease_along_trajectory",
]

TOL = 1e-9
GUARD_INFLATION = 1.0 + 1e-9
C0_SAFETY = 0.999
RHO_S0_SAFETY = 0.96
RHO_F0_SAFETY = 1.04
TIE_RTOL = 1e-12
DECREASE_SLACK = 1e-7


@dataclass(frozen=True)
class ISSCertificate:
    """Lyapunov functions and comparison curves for the two subsystems.

    ``V_s(x)``, ``V_f(z, x)`` and their gradients take single state vectors.
    With ``batched=True`` they also accept stacks whose last axis is the state
    dimension, which lets trajectories be evaluated without a Python loop.
    ``chi_s``/``chi_f``/``lambda_f2`` may be ``None`` when the corresponding
    input or coupling term is absent.
    """

    V_s: Callable
    grad_V_s: Callable
    V_f: Callable
    grad_V_f_z: Callable
    grad_V_f_x: Callable
    alpha_s_lower: ComparisonCurve
    alpha_s_upper: ComparisonCurve
    gamma_s: ComparisonCurve
    alpha_s: ComparisonCurve
    alpha_f_lower: ComparisonCurve
    alpha_f_upper: ComparisonCurve
    alpha_f: ComparisonCurve
    lambda_f1: ComparisonCurve
    lambda_f2: ComparisonCurve | None = None
    chi_s: ComparisonCurve | None = None
    chi_f: ComparisonCurve | None = None
    batched: bool = True

    def lambda_f2_at(self, r):
        if self.lambda_f2 is None:
            return np.zeros_like(np.asarray(r, dtype=float)) if np.ndim(r) else 0.0
        return self.lambda_f2(r)

    def replace(self, **changes):
        from dataclasses import replace as _replace
        return _replace(self, **changes)


@dataclass(frozen=True)
class TheoremConditions:
    rho_lower_s: ComparisonCurve
    gamma_f: ComparisonCurve
    rho_upper_s: ComparisonCurve
    rho_lower_f: ComparisonCurve
    grid: np.ndarray | None = None
    margin_min: float = 1e-9

    def curve_grid(self):
        return DEFAULT_GRID if self.grid is None else np.asarray(self.grid, dtype=float)

    def sigma(self, cert):
        return construct_sigma(cert.gamma_s, self.gamma_f, self.curve_grid())


# -- sample sets -------------------------------------------------------------

def make_rng(seed, stream=0):
    """Counter-based generator keyed by ``(seed, stream)``; draw order in one
    stream never depends on work done in another."""
    key = (int(seed) % 2**64) | ((int(stream) % 2**64) << 64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class SampleSet:
    x: np.ndarray
    z: np.ndarray
    d: np.ndarray
    w: np.ndarray
    box: dict = field(default_factory=dict)

    def __len__(self):
        return self.x.shape[0]

    def point(self, i):
        return {"x": self.x[i], "z": self.z[i], "d": self.d[i], "w": self.w[i]}


def sample_states(system, count=10_000, x_box=5.0, z_box=None, input_box=1.0,
                  seed=0, stream=0, axis_levels=(0.01, 0.1, 0.5, 1.0)):
    """Uniform samples in a box around the equilibrium ``(0, phi(0))``.

    Random points draw inputs uniformly from ``[-input_box, input_box]``;
    the equilibrium and the axis points (each state coordinate moved by
    ``±level * box``) carry zero inputs.
    """
    z_box = x_box if z_box is None else z_box
    rng = make_rng(seed, stream)
    n, m, p, q = system.n, system.m, system.p, system.q
    x_eq, z_eq = system.equilibrium()
    xs = x_eq + rng.uniform(-x_box, x_box, size=(count, n))
    zs = z_eq + rng.uniform(-z_box, z_box, size=(count, m))
    ds = rng.uniform(-input_box, input_box, size=(count, p))
    ws = rng.uniform(-input_box, input_box, size=(count, q))
    ex, ez = [x_eq], [z_eq]
    for j in range(n + m):
        for lvl in axis_levels:
            for sgn in (-1.0, 1.0):
                dx, dz = np.zeros(n), np.zeros(m)
                if j < n:
                    dx[j] = sgn * lvl * x_box
                else:
                    dz[j - n] = sgn * lvl * z_box
                ex.append(x_eq + dx)
                ez.append(z_eq + dz)
    k = len(ex)
    box = {"x_box": x_box, "z_box": z_box, "input_box": input_box, "count": count, "seed": seed}
    return SampleSet(np.vstack([xs, ex]), np.vstack([zs, ez]),
                     np.vstack([ds, np.zeros((k, p))]), np.vstack([ws, np.zeros((k, q))]), box)


def _norms(a):
    return np.linalg.norm(a, axis=1) if a.shape[1] else np.zeros(a.shape[0])


def _evaluate_samples(system, cert, s):
    k = len(s)
    out = {name: np.empty(k) for name in ("vs", "vf", "dvs", "dvf", "gx", "gs", "ezn")}
    for i in range(k):
        x, z, d, w = s.x[i], s.z[i], s.d[i], s.w[i]
        out["vs"][i] = cert.V_s(x)
        out["vf"][i] = cert.V_f(z, x)
        gs = np.asarray(system.g_s(x, z, d), dtype=float)
        out["dvs"][i] = float(np.dot(cert.grad_V_s(x), gs))
        out["dvf"][i] = float(np.dot(cert.grad_V_f_z(z, x), system.g_f(z, x, w)))
        out["gx"][i] = float(np.linalg.norm(cert.grad_V_f_x(z, x)))
        out["gs"][i] = float(np.linalg.norm(gs))
        out["ezn"][i] = float(np.linalg.norm(z - np.asarray(system.phi(x), dtype=float)))
    out["xn"] = _norms(s.x)
    out["dn"] = _norms(s.d)
    out["wn"] = _norms(s.w)
    return out


def _result(name, margins, mask, samples, tol=TOL, detail=""):
    """Worst-margin reduction over the samples selected by ``mask``."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return ConditionResult(name, True, math.inf, None, 0, detail or "guard never active")
    sub = margins[idx]
    j = int(idx[np.argmin(sub)])
    worst = float(margins[j])
    return ConditionResult(name, worst >= -tol, worst, samples.point(j), int(idx.size), detail)


def verify_assumption2(system, cert, samples, tol=TOL):
    """Sandwich bounds, both ISS implications and the cross-gradient bound.

    Implications are checked only where their guard holds, with the guard
    inflated by ``1 + 1e-9`` so samples sitting on its boundary are skipped.
    """
    e = _evaluate_samples(system, cert, samples)
    vs, vf = e["vs"], e["vf"]
    rep = Report("assumption2", meta={"samples": len(samples), **{f"box.{k}": v for k, v in samples.box.items()}})
    everywhere = np.ones(len(samples), dtype=bool)

    lo, hi = cert.alpha_s_lower(e["xn"]), cert.alpha_s_upper(e["xn"])
    rep.add(_result("slow_sandwich", np.minimum(vs - lo, hi - vs), everywhere, samples, tol))
    lo, hi = cert.alpha_f_lower(e["ezn"]), cert.alpha_f_upper(e["ezn"])
    rep.add(_result("fast_sandwich", np.minimum(vf - lo, hi - vf), everywhere, samples, tol))

    bound = cert.gamma_s(vf)
    if cert.chi_s is not None:
        bound = np.maximum(bound, cert.chi_s(e["dn"]))
    guard = vs >= GUARD_INFLATION * bound
    rep.add(_result("slow_decrease", -cert.alpha_s(vs) - e["dvs"], guard, samples, tol))

    guard = vf >= GUARD_INFLATION * cert.chi_f(e["wn"]) if cert.chi_f is not None else everywhere
    rep.add(_result("fast_decrease", -cert.alpha_f(vf) - e["dvf"], guard, samples, tol))

    cap = cert.lambda_f1(vf) + cert.lambda_f2_at(vs)
    rep.add(_result("cross_gradient", cap - e["gx"], everywhere, samples, tol))
    return rep


def _fd_gradient(f, v, h_rel=1e-6):
    g = np.empty_like(v)
    for j in range(v.size):
        h = h_rel * max(1.0, abs(v[j]))
        vp, vm = v.copy(), v.copy()
        vp[j] += h
        vm[j] -= h
        g[j] = (f(vp) - f(vm)) / (vp[j] - vm[j])
    return g


def check_gradients(cert, samples, abs_tol=1e-6, rel_tol=1e-4):
    """Supplied gradients against central differences.

    The error at a sample is ``|fd - grad|`` and must stay within
    ``max(abs_tol, rel_tol * |grad|)``.
    """
    rep = Report("gradients")
    names = ("grad_V_s", "grad_V_f_z", "grad_V_f_x")
    margins = {k: np.empty(len(samples)) for k in names}
    for i in range(len(samples)):
        x, z = samples.x[i].astype(float), samples.z[i].astype(float)
        pairs = (
            (np.asarray(cert.grad_V_s(x), float), _fd_gradient(cert.V_s, x)),
            (np.asarray(cert.grad_V_f_z(z, x), float), _fd_gradient(lambda zz: cert.V_f(zz, x), z)),
            (np.asarray(cert.grad_V_f_x(z, x), float), _fd_gradient(lambda xx: cert.V_f(z, xx), x)),
        )
        for k, (g, fd) in zip(names, pairs):
            margins[k][i] = max(abs_tol, rel_tol * np.linalg.norm(g)) - np.linalg.norm(fd - g)
    everywhere = np.ones(len(samples), dtype=bool)
    for k in names:
        rep.add(_result(k, margins[k], everywhere, samples, tol=0.0))
    return rep


def verify_theorem1(system, cert, conditions, samples):
    """Rate floors and caps on samples; small gain and rate balance on the grid."""
    grid = conditions.curve_grid()
    c = conditions
    rep = Report("theorem1", meta={"samples": len(samples), "grid_points": grid.size,
                                   "grid": f"[{grid[0]:g}, {grid[-1]:g}]"})
    k = len(samples)
    rs = np.empty(k)
    rf = np.empty(k)
    e = _evaluate_samples(system, cert, samples)
    for i in range(k):
        x, z, d, w = samples.x[i], samples.z[i], samples.d[i], samples.w[i]
        rs[i] = system.rho_s(x, z, d)
        rf[i] = system.rho_f(z, x, w)
    vs, vf = e["vs"], e["vf"]

    bound = cert.gamma_s(vf)
    if cert.chi_s is not None:
        bound = np.maximum(bound, cert.chi_s(e["dn"]))
    guard = vs >= GUARD_INFLATION * bound
    rep.add(_result("slow_rate_floor", rs - c.rho_lower_s(vs), guard, samples))

    sg = check_small_gain(c.gamma_f, cert.gamma_s, grid, c.margin_min)
    rep.add(ConditionResult("small_gain", sg.passed, sg.worst_margin, {"r": sg.worst_r}, grid.size,
                            "relative margin of gamma_f(gamma_s(r)) < r"))

    gf_inv = c.gamma_f.inverse()
    lhs = c.rho_upper_s(grid) * (cert.lambda_f1(grid) + cert.lambda_f2_at(gf_inv(grid)))
    rhs_ = c.rho_lower_f(grid) * cert.alpha_f(grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(rhs_ > 0, (rhs_ - lhs) / rhs_, -np.inf)
    j = int(np.argmin(rel))
    rep.add(ConditionResult("rate_balance", bool(np.all(rel >= c.margin_min)), float(rel[j]),
                            {"r": grid[j]}, grid.size, "relative margin of the fast-dominance inequality"))

    bound = np.maximum(c.gamma_f(vs), cert.chi_f(e["wn"]) if cert.chi_f is not None else 0.0)
    if cert.chi_s is not None:
        bound = np.maximum(bound, c.gamma_f(cert.chi_s(e["dn"])))
    guard = vf >= GUARD_INFLATION * bound
    rep.add(_result("slow_speed_cap", c.rho_upper_s(vf) - rs * e["gs"], guard, samples))
    rep.add(_result("fast_rate_floor", rf - c.rho_lower_f(vf), guard, samples))
    return rep


# -- curve constructions -----------------------------------------------------

def _gs_envelope(cert, g_breve, gain):
    terms = [compose(cert.alpha_s_lower.inverse(), gain), cert.alpha_f_lower.inverse()]
    if cert.chi_s is not None:
        terms.append(compose(gain, cert.chi_s.inverse()))
    return compose(g_breve, curve_sum(*terms))


def build_gbar_s(cert, g_breve):
    """``g_breve(alpha_s_lower^-1(gamma_s(r)) + alpha_f_lower^-1(r) + gamma_s(chi_s^-1(r)))``.

    The last term is dropped when the certificate has no ``chi_s``.
    """
    return _gs_envelope(cert, g_breve, cert.gamma_s)


def build_gtilde_s(cert, gamma_f, g_breve):
    """As :func:`build_gbar_s` with ``gamma_f^-1`` in place of ``gamma_s``."""
    return _gs_envelope(cert, g_breve, gamma_f.inverse())


@dataclass
class C0Bound:
    value: float
    feasible: bool
    worst_r: float
    infimum: float
    vanishing: bool = False

    def admits(self, c0):
        return self.feasible and 0 < c0 < self.value / C0_SAFETY


def c0_bound_from_curves(alpha_f, gbar_s, lambda_bar_f, grid=None, safety=C0_SAFETY):
    """Largest ``c0`` with ``c0 * gbar_s(r) * lambda_bar_f(r) < alpha_f(r)`` on the grid.

    Returns ``safety * inf(alpha_f / (gbar_s * lambda_bar_f))``.  When the ratio
    attains its minimum at a grid end while still falling outward (log-log
    slope beyond 0.01 in magnitude), the true infimum is taken to be 0 and the
    bound is reported infeasible.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    num = alpha_f(grid)
    den = gbar_s(grid) * lambda_bar_f(grid)
    ok = den > 0
    if not np.any(ok):
        return C0Bound(math.inf, True, math.nan, math.inf)
    r, ratio = grid[ok], num[ok] / den[ok]
    i = int(np.argmin(ratio))
    inf = float(ratio[i])
    vanishing = inf <= 0.0
    if not vanishing and r.size > 1 and i in (0, r.size - 1):
        nb = 1 if i == 0 else r.size - 2
        slope = (math.log(ratio[i]) - math.log(ratio[nb])) / (math.log(r[i]) - math.log(r[nb]))
        vanishing = slope > 0.01 if i == 0 else slope < -0.01
    if vanishing:
        return C0Bound(0.0, False, float(r[i]), inf, True)
    return C0Bound(safety * inf, True, float(r[i]), inf)


def find_c0_max(cert, g_breve, grid=None):
    """Admissible constant slow gain for ``rho_s = c0``, ``rho_f = 1``."""
    gbar = build_gbar_s(cert, g_breve)
    if cert.lambda_f2 is None:
        lam = cert.lambda_f1
    else:
        lam = curve_sum(cert.lambda_f1, compose(cert.lambda_f2, cert.gamma_s))
    return c0_bound_from_curves(cert.alpha_f, gbar, lam, grid)


def _limit_at_zero(f, r_min):
    a, b = f(r_min * 1e-2), f(r_min * 1e-4)
    if abs(a - b) <= 1e-6 * max(abs(a), abs(b)) + 1e-12:
        return b
    return f(r_min)


def derive_rho_s0(rho_upper_s, g_tilde, grid=None, safety=RHO_S0_SAFETY):
    """``rho_s0(r) = safety * rho_upper_s(g_tilde^-1(r)) / r``.

    The value at ``r = 0`` is the numerical limit when one is apparent, else
    the value at the smallest grid point.  Raises
    :class:`InequalityViolationError` if ``rho_s0(r) * r`` still exceeds
    ``rho_upper_s(g_tilde^-1(r))`` somewhere on the grid.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    g_inv = g_tilde.inverse()
    r_min = float(grid[0])

    def raw(r):
        return safety * rho_upper_s(g_inv(r)) / r

    at_zero = _limit_at_zero(raw, r_min)

    def fn(r):
        if np.ndim(r) == 0:
            return raw(r) if r > 0 else at_zero
        r = np.asarray(r, dtype=float)
        out = np.full(r.shape, at_zero)
        pos = r > 0
        out[pos] = raw(r[pos])
        return out

    curve = ComparisonCurve(fn, CurveClass.P, g_tilde.domain, "rho_s0", True)
    rep = check_rho_s0(curve, rho_upper_s, g_tilde, grid)
    if not rep.passed:
        raise InequalityViolationError(
            f"derived rho_s0 violates rho_s0(r)*r <= rho_upper_s(g_tilde^-1(r)) at r={rep.witness['r']:g}")
    return curve


def check_rho_s0(candidate, rho_upper_s, g_tilde, grid=None):
    """Whether ``candidate(r) * r <= rho_upper_s(g_tilde^-1(r))`` on the grid.

    The margin is relative to the right-hand side.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    cap = rho_upper_s(g_tilde.inverse()(grid))
    lhs = candidate(grid) * grid
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(cap > 0, (cap - lhs) / cap, np.where(lhs > 0, -np.inf, 0.0))
    j = int(np.argmin(rel))
    return ConditionResult("rho_s0_admissible", bool(np.all(rel >= 0)), float(rel[j]), {"r": grid[j]}, grid.size)


def derive_rho_f0(cert, rho_lower_f, g_f_lower, grid=None, safety=RHO_F0_SAFETY):
    """``rho_f0(s) = safety * rho_lower_f(alpha_f_upper(g_f_lower^-1(s)))``.

    Checks ``rho_f0(g_f_lower(r)) >= rho_lower_f(alpha_f_upper(r))`` on the grid.
    """
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    inner = compose(cert.alpha_f_upper, g_f_lower.inverse())
    base = compose(rho_lower_f, inner)
    curve = ComparisonCurve(base.fn, CurveClass.P, g_f_lower.domain, "rho_f0", base.vectorized).scaled(safety)
    lhs = curve(g_f_lower(grid))
    need = rho_lower_f(cert.alpha_f_upper(grid))
    if np.any(lhs < need):
        j = int(np.argmax(lhs < need))
        raise InequalityViolationError(f"derived rho_f0 falls short of its lower bound at r={grid[j]:g}")
    return curve


def validate_g_breve(system, g_breve, samples):
    """Sampled check of ``|g_s(x,z,d)| <= g_breve(|x| + |z - phi(x)| + |d|)``."""
    k = len(samples)
    margins = np.empty(k)
    for i in range(k):
        x, z, d = samples.x[i], samples.z[i], samples.d[i]
        arg = np.linalg.norm(x) + np.linalg.norm(z - system.phi(x)) + np.linalg.norm(d)
        margins[i] = g_breve(arg) - np.linalg.norm(system.g_s(x, z, d))
    return _result("g_breve_envelope", margins, np.ones(k, dtype=bool), samples)


def validate_gf_lower(system, cert, g_f_lower, samples):
    """Sampled check of ``V_f >= chi_f(|w|)  =>  |g_f| >= g_f_lower(|z - phi(x)|)``."""
    k = len(samples)
    margins = np.empty(k)
    guard = np.ones(k, dtype=bool)
    for i in range(k):
        x, z, w = samples.x[i], samples.z[i], samples.w[i]
        if cert.chi_f is not None:
            guard[i] = cert.V_f(z, x) >= GUARD_INFLATION * cert.chi_f(np.linalg.norm(w))
        margins[i] = np.linalg.norm(system.g_f(z, x, w)) - g_f_lower(np.linalg.norm(z - system.phi(x)))
    return _result("g_f_lower_envelope", margins, guard, samples)


# -- max-type Lyapunov function ----------------------------------------------

class Branch(str, Enum):
    SLOW = "slow"
    FAST = "fast"
    TIE = "tie"


@dataclass(frozen=True)
class MaxLyapunov:
    """``V(x, z) = max{V_s(x), sigma(V_f(z, x))}``."""

    cert: ISSCertificate
    sigma: ComparisonCurve

    def parts(self, x, z):
        vs = float(self.cert.V_s(np.asarray(x, dtype=float)))
        vf = float(self.cert.V_f(np.asarray(z, dtype=float), np.asarray(x, dtype=float)))
        return vs, vf, float(self.sigma(vf))

    def __call__(self, x, z):
        vs, _, sv = self.parts(x, z)
        return max(vs, sv)

    def branch(self, x, z):
        vs, _, sv = self.parts(x, z)
        if abs(vs - sv) <= TIE_RTOL * max(vs, sv):
            return Branch.TIE
        return Branch.SLOW if vs > sv else Branch.FAST

    def evaluate(self, xs, zs):
        """``(K, 3)`` array of ``(V_s, V_f, V)`` along stacked states."""
        xs = np.asarray(xs, dtype=float)
        zs = np.asarray(zs, dtype=float)
        if self.cert.batched:
            vs = np.asarray(self.cert.V_s(xs), dtype=float).reshape(-1)
            vf = np.asarray(self.cert.V_f(zs, xs), dtype=float).reshape(-1)
        else:
            vs = np.array([self.cert.V_s(x) for x in xs])
            vf = np.array([self.cert.V_f(z, x) for x, z in zip(xs, zs)])
        return np.column_stack([vs, vf, np.maximum(vs, self.sigma(vf))])


def build_max_lyapunov(cert, sigma):
    return MaxLyapunov(cert, sigma)


@dataclass
class DecreaseReport:
    violations: int
    pairs_checked: int
    fraction_above: float
    worst_increase: float
    witness_time: float | None
    values: np.ndarray

    @property
    def passed(self):
        return self.violations == 0

    def as_condition(self, name="lyapunov_decrease"):
        w = None if self.witness_time is None else {"t": self.witness_time}
        return ConditionResult(name, self.passed, -self.worst_increase, w, self.pairs_checked,
                               f"{self.violations} violations")


def check_decrease_along_trajectory(traj, V, input_level=0.0, slack=DECREASE_SLACK):
    """Difference-form decrease test of ``V`` along recorded samples.

    For consecutive samples with ``V(t_k) > input_level`` an increase beyond
    ``slack * max(1, V(t_k))`` counts as a violation.
    """
    vals = V.evaluate(traj.x, traj.z)
    v = vals[:, 2]
    if v.size < 2:
        return DecreaseReport(0, 0, 0.0, -math.inf, None, vals)
    prev, nxt = v[:-1], v[1:]
    active = prev > input_level
    excess = nxt - prev - slack * np.maximum(1.0, prev)
    bad = active & (excess > 0)
    inc = np.where(active, nxt - prev, -np.inf)
    j = int(np.argmax(inc))
    worst = float(inc[j]) if active.any() else -math.inf
    wt = float(traj.times[j + 1]) if bad.any() else None
    if bad.any():
        j = int(np.argmax(np.where(bad, excess, -np.inf)))
        wt = float(traj.times[j + 1])
    return DecreaseReport(int(bad.sum()), int(active.sum()), float(np.mean(v > input_level)), worst, wt, vals)
