# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled planar RK4 kernels.  Same contract as ``_pykernels``."""
import numpy as np

from libc.math cimport ceil, fabs, isfinite, pow, sqrt

SATURATED = 0
CUBIC = 1

BACKEND = "cython"


cdef inline double _sat(double r) noexcept nogil:
    if r > 1.0:
        return 1.0
    if r < -1.0:
        return -1.0
    return r


cdef inline void _rhs(int model, double* prm, double x, double z,
                      double* dx, double* dz) noexcept nogil:
    cdef double g, rho, e
    if model == 0:
        dx[0] = -prm[0] * _sat(z)
        dz[0] = -_sat(z - x)
    else:
        g = -prm[2] * (z - prm[3])
        if prm[1] != 0.0:
            rho = prm[0] * pow(fabs(g), prm[1])
        else:
            rho = prm[0]
        e = z - x - prm[4]
        dx[0] = rho * g
        dz[0] = -e * e * e


def planar_rhs(int model, params, double x, double z):
    cdef double prm[5]
    cdef double dx = 0.0, dz = 0.0
    cdef int j
    for j in range(5):
        prm[j] = float(params[j]) if j < len(params) else 0.0
    _rhs(model, prm, x, z, &dx, &dz)
    return dx, dz


def step_count(double t_final, double dt):
    cdef long n = <long>ceil(t_final / dt - 1e-9)
    return n if n > 1 else 1


def rk4_planar(int model, params, double x0, double z0, double t_final, double dt,
               long record_every, double radius):
    cdef double prm[5]
    cdef int j
    for j in range(5):
        prm[j] = float(params[j]) if j < len(params) else 0.0
    cdef long n = step_count(t_final, dt)
    cdef long cap = n // record_every + 2
    ts_arr = np.empty(cap)
    xs_arr = np.empty(cap)
    zs_arr = np.empty(cap)
    cdef double[::1] ts = ts_arr
    cdef double[::1] xs = xs_arr
    cdef double[::1] zs = zs_arr
    cdef double x = x0, z = z0, xn, zn, t, h
    cdef double a1, a2, a3, a4, b1, b2, b3, b4
    cdef long i, k = 1, steps = 0
    cdef bint diverged = False
    ts[0] = 0.0
    xs[0] = x
    zs[0] = z
    with nogil:
        for i in range(n):
            t = i * dt
            h = dt if i < n - 1 else t_final - t
            _rhs(model, prm, x, z, &a1, &b1)
            _rhs(model, prm, x + 0.5 * h * a1, z + 0.5 * h * b1, &a2, &b2)
            _rhs(model, prm, x + 0.5 * h * a2, z + 0.5 * h * b2, &a3, &b3)
            _rhs(model, prm, x + h * a3, z + h * b3, &a4, &b4)
            xn = x + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
            zn = z + h / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
            if not (isfinite(xn) and isfinite(zn)):
                diverged = True
                break
            x = xn
            z = zn
            steps += 1
            if sqrt(x * x + z * z) > radius:
                diverged = True
            if diverged or (i + 1) % record_every == 0 or i == n - 1:
                if i == n - 1:
                    ts[k] = t + h
                else:
                    ts[k] = (i + 1) * dt
                xs[k] = x
                zs[k] = z
                k += 1
            if diverged:
                break
    return ts_arr[:k].copy(), xs_arr[:k].copy(), zs_arr[:k].copy(), steps, bool(diverged)
