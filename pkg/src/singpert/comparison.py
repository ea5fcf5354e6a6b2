"""Comparison functions on the nonnegative half-line.

A :class:`ComparisonCurve` wraps a scalar map ``r -> value`` together with a
declared class tag (K, K-infinity, P, PD).  Class membership is never proven
symbolically: :func:`check_class` samples the curve on a grid and reports what
it saw.  The same applies to the small-gain predicate, which is evaluated with
a relative margin so that a strict inequality becomes a testable one.

Catalog constructors (:func:`linear`, :func:`power`, :func:`saturation`,
:func:`constant`, :func:`curve_sum`) produce numpy-vectorized curves; arbitrary
user callables are evaluated point by point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import (
    BracketError,
    CurveEvaluationError,
    NonMonotoneError,
    PreconditionError,
)

__all__ = [
    "CurveClass",
    "ComparisonCurve",
    "ClassReport",
    "SmallGainReport",
    "log_grid",
    "DEFAULT_GRID",
    "compose",
    "invert_numeric",
    "check_class",
    "check_small_gain",
    "construct_sigma",
    "identity",
    "linear",
    "power",
    "saturation",
    "constant",
    "curve_sum",
    "curve_from_spec",
]

SMALL_GAIN_MARGIN = 1e-9
MAX_EXPANSIONS = 60
_NOISE = 8 * np.finfo(float).eps  # rounding allowance in monotonicity checks


class CurveClass(str, Enum):
    K = "K"
    K_INF = "K_INF"
    P = "P"
    PD = "PD"
    UNSPECIFIED = "UNSPECIFIED"


_INCREASING = (CurveClass.K, CurveClass.K_INF)


def log_grid(lo=1e-6, hi=1e6, num=200):
    """Log-spaced sample points on ``[lo, hi]``."""
    if not 0 < lo < hi:
        raise ValueError(f"log_grid needs 0 < lo < hi, got {lo}, {hi}")
    return np.logspace(math.log10(lo), math.log10(hi), int(num))


DEFAULT_GRID = log_grid()
DEFAULT_DOMAIN = (1e-6, 1e6)


@dataclass(frozen=True)
class ComparisonCurve:
    """Scalar monotone-style map on ``[0, inf)`` with a declared class tag.

    ``fn`` may be a plain float function; set ``vectorized=True`` when it also
    accepts numpy arrays elementwise, which lets grid checks and inversions run
    without a Python loop.  ``inverse_fn`` is an optional exact inverse.
    """

    fn: Callable
    tag: CurveClass = CurveClass.UNSPECIFIED
    domain: tuple = DEFAULT_DOMAIN
    name: str = "curve"
    vectorized: bool = False
    inverse_fn: Callable | None = field(default=None, compare=False)

    def __call__(self, r):
        if np.ndim(r) == 0:
            return self._scalar(float(r))
        arr = np.asarray(r, dtype=float)
        if self.vectorized:
            out = np.asarray(self.fn(arr), dtype=float)
            out = np.broadcast_to(out, arr.shape).astype(float)
        else:
            out = np.array([float(self.fn(v)) for v in arr.ravel()]).reshape(arr.shape)
        if not np.all(np.isfinite(out)) or np.any(out < 0):
            bad = np.flatnonzero(~np.isfinite(out.ravel()) | (out.ravel() < 0))[0]
            raise CurveEvaluationError(
                f"{self.name}({arr.ravel()[bad]!r}) = {out.ravel()[bad]!r} is not finite and nonnegative"
            )
        return out

    def _scalar(self, r):
        v = float(self.fn(r))
        if not math.isfinite(v) or v < 0:
            raise CurveEvaluationError(f"{self.name}({r!r}) = {v!r} is not finite and nonnegative")
        return v

    def inverse(self, bracket=(0.0, 1.0)):
        """Inverse curve; exact when ``inverse_fn`` is known, bisection otherwise."""
        if self.inverse_fn is not None:
            return ComparisonCurve(self.inverse_fn, self.tag, self.domain,
                                   f"{self.name}^-1", self.vectorized, self.fn)
        if self.vectorized:
            def inv(y, _c=self):
                if np.ndim(y) == 0:
                    return invert_numeric(_c, float(y), bracket)
                return _invert_array(_c, np.asarray(y, dtype=float), bracket)
            return ComparisonCurve(inv, self.tag, self.domain, f"{self.name}^-1", True, self.fn)
        return ComparisonCurve(lambda y, _c=self: invert_numeric(_c, y, bracket), self.tag,
                               self.domain, f"{self.name}^-1", False, self.fn)

    def scaled(self, k):
        """``r -> k * self(r)`` for ``k > 0``; the class tag is preserved."""
        if not k > 0:
            raise ValueError("scale factor must be positive")
        inv = None
        if self.inverse_fn is not None:
            inv = lambda y, _f=self.inverse_fn: _f(np.asarray(y) / k) if np.ndim(y) else _f(y / k)
        return ComparisonCurve(lambda r, _f=self.fn: k * _f(r), self.tag, self.domain,
                               f"{k:g}*{self.name}", self.vectorized, inv)

    def __add__(self, other):
        return curve_sum(self, other)

    def __mul__(self, other):
        """Pointwise product with another curve; tag follows the P/PD algebra."""
        if isinstance(other, (int, float)):
            return self.scaled(float(other))
        tag = CurveClass.UNSPECIFIED
        if {self.tag, other.tag} <= {CurveClass.P, CurveClass.PD, *_INCREASING}:
            zero_at_zero = (self.tag != CurveClass.P) or (other.tag != CurveClass.P)
            tag = CurveClass.PD if zero_at_zero else CurveClass.P
        return ComparisonCurve(lambda r, _a=self.fn, _b=other.fn: _a(r) * _b(r), tag,
                               self.domain, f"({self.name})*({other.name})",
                               self.vectorized and other.vectorized)

    __rmul__ = __mul__


def _compose_tag(outer, inner):
    if outer == CurveClass.K_INF and inner == CurveClass.K_INF:
        return CurveClass.K_INF
    if outer in _INCREASING and inner in _INCREASING:
        return CurveClass.K
    if inner in (*_INCREASING, CurveClass.PD) and outer in (*_INCREASING, CurveClass.PD):
        return CurveClass.PD
    return CurveClass.UNSPECIFIED


def compose(outer, inner):
    """Curve ``r -> outer(inner(r))``.

    The result is tagged with the weaker of the two classes.  Domain
    compatibility is checked lazily: evaluating the result raises
    :class:`CurveEvaluationError` if ``inner`` returns a negative value.
    """
    def fn(r, _o=outer, _i=inner):
        return _o(_i(r))

    inv = None
    if outer.inverse_fn is not None and inner.inverse_fn is not None:
        inv = lambda y, _o=outer.inverse_fn, _i=inner.inverse_fn: _i(_o(y))
    return ComparisonCurve(fn, _compose_tag(outer.tag, inner.tag), inner.domain,
                           f"{outer.name}o{inner.name}", outer.vectorized and inner.vectorized, inv)


def invert_numeric(curve, y, bracket=(0.0, 1.0), rtol=1e-12, y_floor=1e-300):
    """Solve ``curve(r) = y`` for ``r >= 0`` by bisection.

    The upper end of ``bracket`` is doubled (at most 60 times) until it
    encloses ``y``.  Raises :class:`BracketError` when it never does and
    :class:`NonMonotoneError` when a midpoint falls outside the values at the
    current bracket ends.
    """
    y = float(y)
    if not math.isfinite(y) or y < 0:
        raise BracketError(f"cannot invert {curve.name} at y={y!r}")
    lo, hi = float(bracket[0]), float(bracket[1])
    flo = curve(lo)
    tol = rtol * max(y, y_floor)
    if abs(flo - y) <= tol:
        return lo
    if flo > y:
        raise BracketError(f"{curve.name}({lo}) = {flo} already exceeds {y}")
    if hi <= lo:
        hi = lo + 1.0
    fhi = curve(hi)
    expansions = 0
    while fhi < y:
        if expansions == MAX_EXPANSIONS:
            raise BracketError(
                f"{curve.name} stays below {y} up to r={hi:g}; not K-infinity or y out of range"
            )
        if fhi < flo:
            raise NonMonotoneError(f"{curve.name} decreases between {lo} and {hi}")
        lo, flo = hi, fhi
        hi *= 2.0
        fhi = curve(hi)
        expansions += 1
    if abs(fhi - y) <= tol:
        return hi
    while True:
        mid = 0.5 * (lo + hi)
        if not lo < mid < hi:
            break
        fm = curve(mid)
        noise = _NOISE * max(abs(flo), abs(fhi))
        if fm < flo - noise or fm > fhi + noise:
            raise NonMonotoneError(f"{curve.name} is not monotone on [{lo!r}, {hi!r}]")
        if abs(fm - y) <= tol:
            return mid
        if fm < y:
            lo, flo = mid, fm
        else:
            hi, fhi = mid, fm
    return lo if abs(flo - y) <= abs(fhi - y) else hi


def _invert_array(curve, ys, bracket=(0.0, 1.0), rtol=1e-12, y_floor=1e-300):
    # vectorized twin of invert_numeric for numpy-capable curves
    shape = ys.shape
    ys = ys.ravel()
    if np.any(~np.isfinite(ys)) or np.any(ys < 0):
        raise BracketError(f"cannot invert {curve.name} at negative or non-finite values")
    lo = np.full(ys.shape, float(bracket[0]))
    hi = np.full(ys.shape, max(float(bracket[1]), float(bracket[0]) + 1.0))
    flo = curve(lo)
    if np.any(flo > ys + rtol * np.maximum(ys, y_floor)):
        raise BracketError(f"{curve.name} exceeds the target at the lower bracket end")
    fhi = curve(hi)
    for _ in range(MAX_EXPANSIONS):
        short = fhi < ys
        if not short.any():
            break
        lo[short], flo[short] = hi[short], fhi[short]
        hi[short] *= 2.0
        fhi[short] = curve(hi[short])
    else:
        if np.any(fhi < ys):
            raise BracketError(f"{curve.name} never reaches the target; not K-infinity?")
    tol = rtol * np.maximum(ys, y_floor)
    for _ in range(1100):
        mid = 0.5 * (lo + hi)
        done = np.minimum(np.abs(flo - ys), np.abs(fhi - ys)) <= tol
        active = (lo < mid) & (mid < hi) & ~done
        if not active.any():
            break
        fm = curve(mid)
        noise = _NOISE * np.maximum(np.abs(flo), np.abs(fhi))
        if np.any(active & ((fm < flo - noise) | (fm > fhi + noise))):
            raise NonMonotoneError(f"{curve.name} is not monotone on the bracket")
        below = active & (fm < ys)
        above = active & ~below
        lo[below], flo[below] = mid[below], fm[below]
        hi[above], fhi[above] = mid[above], fm[above]
    out = np.where(np.abs(flo - ys) <= np.abs(fhi - ys), lo, hi)
    return out.reshape(shape)


@dataclass
class ClassReport:
    curve: str
    tag: CurveClass
    passed: bool
    problems: list

    def __bool__(self):
        return self.passed


def check_class(curve, grid=None, num=200):
    """Sample ``curve`` against its declared tag.

    Runs on ``grid`` if given, else on ``num`` log-spaced points across the
    curve's ``domain``.  Zero is always checked directly.
    """
    grid = log_grid(*curve.domain, num) if grid is None else np.asarray(grid, dtype=float)
    problems = []
    try:
        vals = curve(grid)
        v0 = curve(0.0)
    except CurveEvaluationError as exc:
        return ClassReport(curve.name, curve.tag, False, [str(exc)])
    tag = curve.tag
    if tag in _INCREASING:
        steps = np.diff(vals)
        if np.any(steps <= 0):
            i = int(np.argmax(steps <= 0))
            problems.append(f"not strictly increasing between r={grid[i]:g} and r={grid[i + 1]:g}")
    if tag in (*_INCREASING, CurveClass.PD) and v0 != 0.0:
        problems.append(f"value at zero is {v0!r}, expected 0")
    if tag in (CurveClass.P, CurveClass.PD, *_INCREASING) and np.any(vals <= 0):
        i = int(np.argmax(vals <= 0))
        problems.append(f"nonpositive value {vals[i]!r} at r={grid[i]:g}")
    return ClassReport(curve.name, tag, not problems, problems)


@dataclass
class SmallGainReport:
    passed: bool
    worst_margin: float
    worst_r: float
    margin_min: float

    def __bool__(self):
        return self.passed


def check_small_gain(gamma_1, gamma_2, grid=None, margin_min=SMALL_GAIN_MARGIN):
    """Test ``gamma_1(gamma_2(r)) < r`` on a positive grid.

    The margin at ``r`` is ``(r - gamma_1(gamma_2(r))) / r``; the check passes
    iff every margin is at least ``margin_min``.  Failing is a normal outcome.
    """
    for g in (gamma_1, gamma_2):
        if g.tag != CurveClass.K_INF:
            raise PreconditionError(f"small-gain check needs K-infinity gains, {g.name} is {g.tag.value}")
    grid = DEFAULT_GRID if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0 or np.any(grid <= 0):
        raise PreconditionError("small-gain grid must be nonempty and strictly positive")
    loop = gamma_1(gamma_2(grid))
    margins = (grid - loop) / grid
    i = int(np.argmin(margins))
    return SmallGainReport(bool(np.all(margins >= margin_min)), float(margins[i]), float(grid[i]), margin_min)


def construct_sigma(gamma_s, gamma_f, grid=None):
    """Scaling function strictly between ``gamma_s`` and ``gamma_f^-1``.

    Returns the pointwise geometric mean ``sqrt(gamma_s(r) * gamma_f^-1(r))``,
    with the inverse computed by :func:`invert_numeric`.
    """
    report = check_small_gain(gamma_f, gamma_s, grid)
    if not report.passed:
        raise PreconditionError(
            f"small-gain condition fails at r={report.worst_r:g} (margin {report.worst_margin:.3g}); "
            "no sigma exists between the gains"
        )

    if gamma_f.inverse_fn is not None:
        inv = gamma_f.inverse()
    elif gamma_f.vectorized:
        inv = ComparisonCurve(lambda y, _f=gamma_f: _invert_array(_f, np.asarray(y, dtype=float))
                              if np.ndim(y) else invert_numeric(_f, y), vectorized=True)
    else:
        inv = ComparisonCurve(lambda y, _f=gamma_f: invert_numeric(_f, y))
    vec = gamma_s.vectorized and inv.vectorized

    def sigma(r, _s=gamma_s, _i=inv):
        return np.sqrt(_s(r) * _i(r))

    return ComparisonCurve(sigma, CurveClass.K_INF, gamma_s.domain,
                           f"sigma[{gamma_s.name},{gamma_f.name}]", vec)


# -- catalog ---------------------------------------------------------------

def identity():
    return ComparisonCurve(lambda r: r * 1.0, CurveClass.K_INF, name="id", vectorized=True,
                           inverse_fn=lambda y: y * 1.0)


def linear(k):
    k = float(k)
    if not k > 0:
        raise ValueError("linear curve needs k > 0")
    return ComparisonCurve(lambda r: k * r, CurveClass.K_INF, name=f"{k:g}r", vectorized=True,
                           inverse_fn=lambda y: y / k)


def power(k, p):
    """``k * r**p``; K-infinity for ``k, p > 0``."""
    k, p = float(k), float(p)
    if not (k > 0 and p > 0):
        raise ValueError("power curve needs k > 0 and p > 0")
    return ComparisonCurve(lambda r: k * np.power(r, p), CurveClass.K_INF, name=f"{k:g}r^{p:g}",
                           vectorized=True, inverse_fn=lambda y: np.power(np.divide(y, k), 1.0 / p))


def saturation():
    """``min(1, r)``: increasing then flat, so only class PD."""
    return ComparisonCurve(lambda r: np.minimum(1.0, r), CurveClass.PD, name="sat", vectorized=True)


def constant(c):
    c = float(c)
    if not c > 0:
        raise ValueError("constant curve needs c > 0")
    return ComparisonCurve(lambda r: np.full(np.shape(r), c) if np.ndim(r) else c,
                           CurveClass.P, name=f"{c:g}", vectorized=True)


def curve_sum(*curves: ComparisonCurve):
    """Pointwise sum; K-infinity if any term is and all terms are K."""
    if not curves:
        raise ValueError("curve_sum needs at least one term")
    tags = {c.tag for c in curves}
    if tags <= set(_INCREASING):
        tag = CurveClass.K_INF if CurveClass.K_INF in tags else CurveClass.K
    elif tags <= {*_INCREASING, CurveClass.PD}:
        tag = CurveClass.PD
    elif tags <= {*_INCREASING, CurveClass.PD, CurveClass.P} and CurveClass.P in tags:
        tag = CurveClass.P
    else:
        tag = CurveClass.UNSPECIFIED
    fns = tuple(c.fn for c in curves)

    def fn(r, _fns=fns):
        total = _fns[0](r)
        for f in _fns[1:]:
            total = total + f(r)
        return total

    return ComparisonCurve(fn, tag, curves[0].domain, "+".join(c.name for c in curves),
                           all(c.vectorized for c in curves))


def curve_from_spec(spec):
    """Build a catalog curve from a mapping such as ``{"kind": "power", "k": 2, "p": 0.5}``.

    Kinds: ``identity``, ``linear`` (k), ``power`` (k, p), ``saturation``,
    ``constant`` (c), ``sum`` (terms: list of specs), optionally ``scale``.
    """
    if isinstance(spec, ComparisonCurve):
        return spec
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ValueError(f"curve spec must be a table with a 'kind' key, got {spec!r}")
    kind = spec["kind"]
    known = {"identity", "linear", "power", "saturation", "constant", "sum"}
    if kind not in known:
        raise ValueError(f"unknown curve kind {kind!r}; expected one of {sorted(known)}")
    if kind == "identity":
        curve = identity()
    elif kind == "linear":
        curve = linear(spec["k"])
    elif kind == "power":
        curve = power(spec.get("k", 1.0), spec["p"])
    elif kind == "saturation":
        curve = saturation()
    elif kind == "constant":
        curve = constant(spec["c"])
    else:
        terms: Sequence = spec.get("terms", [])
        curve = curve_sum(*(curve_from_spec(t) for t in terms))
    if "scale" in spec:
        curve = curve.scaled(float(spec["scale"]))
    return curve
