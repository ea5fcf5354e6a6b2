"""Scalar field objectives for source seeking and the Taylor-remainder check."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..report import ConditionResult

__all__ = ["Objective", "quadratic_objective", "soft_quadratic_objective", "wavy_objective",
           "lemma1_check", "strong_convexity_check", "random_pairs"]


@dataclass(frozen=True)
class Objective:
    """``h`` with gradient, strong-convexity constant ``omega`` and gradient
    Lipschitz constant ``theta``; ``p_star`` is the minimizer."""

    h: Callable
    grad: Callable
    omega: float
    theta: float
    p_star: np.ndarray
    name: str = "objective"


def quadratic_objective(p_star, scale=1.0):
    """``scale * |p - p_star|^2``."""
    ps = np.asarray(p_star, dtype=float)
    return Objective(lambda p: scale * float(np.sum((np.asarray(p) - ps) ** 2)),
                     lambda p: 2.0 * scale * (np.asarray(p, dtype=float) - ps),
                     2.0 * scale, 2.0 * scale, ps, "quadratic")


def soft_quadratic_objective(p_star):
    """``|u|^2 + sqrt(1 + |u|^2)`` with ``u = p - p_star``; Hessian between 2 and 3."""
    ps = np.asarray(p_star, dtype=float)

    def h(p):
        u2 = float(np.sum((np.asarray(p) - ps) ** 2))
        return u2 + np.sqrt(1.0 + u2)

    def grad(p):
        u = np.asarray(p, dtype=float) - ps
        return 2.0 * u + u / np.sqrt(1.0 + u @ u)

    return Objective(h, grad, 2.0, 3.0, ps, "soft_quadratic")


def wavy_objective(dim=2):
    """``|xi|^2 + sin(xi_1)``; Hessian eigenvalues lie in [1, 3]."""
    def h(p):
        p = np.asarray(p, dtype=float)
        return float(p @ p + np.sin(p[0]))

    def grad(p):
        p = np.asarray(p, dtype=float)
        g = 2.0 * p
        g[0] += np.cos(p[0])
        return g

    # minimizer solves 2 t + cos t = 0
    t = -0.4501836112948736
    return Objective(h, grad, 1.0, 3.0, np.r_[t, np.zeros(dim - 1)], "wavy")


def random_pairs(rng, count, dim, box=10.0):
    return rng.uniform(-box, box, size=(count, 2, dim))


def lemma1_check(h, grad, theta, pairs, rtol=1e-12):
    """``|h(a) - h(b) - grad h(a).(a - b)| <= theta |a - b|^2`` on every pair.

    ``worst_margin`` is ``1 - worst ratio`` of the two sides; coincident
    pairs have both sides zero and ratio 0.
    """
    ratios = np.zeros(len(pairs))
    for i, (a, b) in enumerate(pairs):
        gap = float(np.sum((a - b) ** 2))
        lhs = abs(h(a) - h(b) - float(np.dot(grad(a), a - b)))
        if gap > 0:
            ratios[i] = lhs / (theta * gap)
        elif lhs > 0:
            ratios[i] = np.inf
    j = int(np.argmax(ratios)) if len(ratios) else 0
    worst = float(ratios[j]) if len(ratios) else 0.0
    witness = {"a": pairs[j][0], "b": pairs[j][1]} if len(ratios) else None
    return ConditionResult("lemma1_remainder", worst <= 1.0 + rtol, 1.0 - worst, witness, len(pairs),
                           f"worst ratio {worst:.6g}")


def strong_convexity_check(obj, pairs, rtol=1e-12):
    """``(a - b).(grad h(a) - grad h(b)) >= omega |a - b|^2`` on every pair."""
    margins = np.zeros(len(pairs))
    for i, (a, b) in enumerate(pairs):
        gap = float(np.sum((a - b) ** 2))
        if gap > 0:
            margins[i] = float(np.dot(a - b, obj.grad(a) - obj.grad(b))) / (obj.omega * gap) - 1.0
    j = int(np.argmin(margins))
    return ConditionResult("strong_convexity", margins[j] >= -rtol, float(margins[j]),
                           {"a": pairs[j][0], "b": pairs[j][1]}, len(pairs))
