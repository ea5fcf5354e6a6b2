"""Pure-Python planar kernels; behaviour mirrors ``_kernels.pyx`` step for step."""
import math

import numpy as np

SATURATED = 0
CUBIC = 1

BACKEND = "python"


def _sat(r):
    return 1.0 if r > 1.0 else (-1.0 if r < -1.0 else r)


def planar_rhs(model, prm, x, z):
    if model == SATURATED:
        return -prm[0] * _sat(z), -_sat(z - x)
    g = -prm[2] * (z - prm[3])
    rho = prm[0] * abs(g) ** prm[1] if prm[1] != 0.0 else prm[0]
    e = z - x - prm[4]
    return rho * g, -e * e * e


def step_count(t_final, dt):
    n = int(math.ceil(t_final / dt - 1e-9))
    return max(n, 1)


def rk4_planar(model, params, x0, z0, t_final, dt, record_every, radius):
    """Classical RK4 on one of the built-in planar models.

    Returns ``(times, xs, zs, steps, diverged)``; samples are kept every
    ``record_every`` steps plus the final one.
    """
    prm = [float(v) for v in params] + [0.0] * (5 - len(params))
    n = step_count(t_final, dt)
    cap = n // record_every + 2
    ts = np.empty(cap)
    xs = np.empty(cap)
    zs = np.empty(cap)
    x, z = float(x0), float(z0)
    ts[0], xs[0], zs[0] = 0.0, x, z
    k = 1
    diverged = False
    steps = 0
    rhs = planar_rhs
    for i in range(n):
        t = i * dt
        h = dt if i < n - 1 else t_final - t
        a1, b1 = rhs(model, prm, x, z)
        a2, b2 = rhs(model, prm, x + 0.5 * h * a1, z + 0.5 * h * b1)
        a3, b3 = rhs(model, prm, x + 0.5 * h * a2, z + 0.5 * h * b2)
        a4, b4 = rhs(model, prm, x + h * a3, z + h * b3)
        xn = x + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        zn = z + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        if not (math.isfinite(xn) and math.isfinite(zn)):
            diverged = True
            break
        x, z = xn, zn
        steps += 1
        if math.sqrt(x * x + z * z) > radius:
            diverged = True
        if diverged or (i + 1) % record_every == 0 or i == n - 1:
            ts[k] = t + h if i == n - 1 else (i + 1) * dt
            xs[k], zs[k] = x, z
            k += 1
        if diverged:
            break
    return ts[:k].copy(), xs[:k].copy(), zs[:k].copy(), steps, diverged
