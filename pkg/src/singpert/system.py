"""Generalized singularly perturbed systems and their simulation.

The model is the pair

    x' = rho_s(x, z, d) * g_s(x, z, d)
    z' = rho_f(z, x, w) * g_f(z, x, w)

with nonnegative state-dependent perturbation functions ``rho_s``/``rho_f``
and a steady-state map ``phi`` satisfying ``g_f(phi(x), x, 0) = 0``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from . import kernels
from .errors import ConfigError, NonPositiveRateError, StepUnderflowError

__all__ = [
    "NativeModel",
    "PerturbedSystem",
    "Method",
    "SimConfig",
    "Trajectory",
    "SteadyStateReport",
    "rhs",
    "simulate",
    "simulate_batch",
    "check_steady_state_map",
    "write_trajectory_csv",
]

RESIDUAL_TOL = 1e-9


@dataclass(frozen=True)
class NativeModel:
    """Identifies a planar model that the compiled kernels can integrate directly."""

    model: int
    params: tuple


@dataclass(frozen=True)
class PerturbedSystem:
    n: int
    m: int
    g_s: Callable
    g_f: Callable
    rho_s: Callable
    rho_f: Callable
    phi: Callable
    p: int = 0
    q: int = 0
    d_signal: Callable | None = None
    w_signal: Callable | None = None
    name: str = "system"
    native: NativeModel | None = None
    x_eq: np.ndarray | None = None

    def inputs(self, t):
        d = self.d_signal(t) if self.d_signal is not None else np.zeros(self.p)
        w = self.w_signal(t) if self.w_signal is not None else np.zeros(self.q)
        return d, w

    def with_inputs(self, d_signal=None, w_signal=None):
        return replace(self, d_signal=d_signal, w_signal=w_signal)

    def equilibrium(self):
        """The point ``(x_eq, phi(x_eq))``; ``x_eq`` defaults to the origin."""
        x0 = np.zeros(self.n) if self.x_eq is None else np.asarray(self.x_eq, dtype=float).copy()
        return x0, np.asarray(self.phi(x0), dtype=float)


def _rate(value, label, name):
    r = float(value)
    if not math.isfinite(r) or r < 0.0:
        raise NonPositiveRateError(f"{label} of {name} evaluated to {r!r}")
    return r


def rhs(system, t, x, z):
    """Right-hand side ``(rho_s * g_s, rho_f * g_f)`` at time ``t``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    d, w = system.inputs(t)
    rs = _rate(system.rho_s(x, z, d), "rho_s", system.name)
    rf = _rate(system.rho_f(z, x, w), "rho_f", system.name)
    return rs * np.asarray(system.g_s(x, z, d), dtype=float), rf * np.asarray(system.g_f(z, x, w), dtype=float)


class Method(str, Enum):
    RK4_FIXED = "rk4"
    RK45_ADAPTIVE = "rk45"


@dataclass(frozen=True)
class SimConfig:
    t_final: float
    method: Method = Method.RK4_FIXED
    dt: float = 1e-3
    rtol: float = 1e-8
    atol: float = 1e-10
    divergence_radius: float = 1e8
    record_every: int = 1
    max_step: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        if not self.t_final > 0:
            raise ConfigError(f"t_final must be positive, got {self.t_final}", "t_final")
        if self.method is Method.RK4_FIXED and not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}", "dt")
        if self.method is Method.RK45_ADAPTIVE:
            if not self.rtol > 0:
                raise ConfigError(f"rtol must be positive, got {self.rtol}", "rtol")
            if not self.atol > 0:
                raise ConfigError(f"atol must be positive, got {self.atol}", "atol")
        if not self.divergence_radius > 0:
            raise ConfigError("divergence_radius must be positive", "divergence_radius")
        if int(self.record_every) < 1:
            raise ConfigError(f"record_every must be a positive integer, got {self.record_every}", "record_every")
        if not self.max_step > 0:
            raise ConfigError("max_step must be positive", "max_step")


@dataclass
class Trajectory:
    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    accepted: int = 0
    rejected: int = 0
    diverged: bool = False
    lyapunov: np.ndarray | None = None
    backend: str = "generic"

    def __len__(self):
        return len(self.times)

    @property
    def states(self):
        return np.hstack([self.x, self.z])

    def final(self):
        return self.x[-1].copy(), self.z[-1].copy()

    def distance_to(self, x_ref, z_ref):
        """Euclidean distance of every sample to the point ``(x_ref, z_ref)``."""
        ref = np.concatenate([np.atleast_1d(x_ref), np.atleast_1d(z_ref)]).astype(float)
        return np.linalg.norm(self.states - ref, axis=1)


def _split(system, y):
    return y[: system.n], y[system.n:]


def _field(system):
    n = system.n

    def f(t, y):
        dx, dz = rhs(system, t, y[:n], y[n:])
        return np.concatenate([dx, dz])

    return f


def _rk4_generic(system, y0, cfg):
    f = _field(system)
    dt, t_final = cfg.dt, cfg.t_final
    steps_total = kernels.python_backend.step_count(t_final, dt)
    ts, ys = [0.0], [y0.copy()]
    y = y0.copy()
    diverged = False
    steps = 0
    for i in range(steps_total):
        t = i * dt
        h = dt if i < steps_total - 1 else t_final - t
        k1 = f(t, y)
        k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
        k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
        k4 = f(t + h, y + h * k3)
        yn = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(yn)):
            diverged = True
            break
        y = yn
        steps += 1
        diverged = bool(np.linalg.norm(y) > cfg.divergence_radius)
        if diverged or (i + 1) % cfg.record_every == 0 or i == steps_total - 1:
            ts.append(t + h if i == steps_total - 1 else (i + 1) * dt)
            ys.append(y.copy())
        if diverged:
            break
    return np.array(ts), np.array(ys), steps, 0, diverged


# Dormand-Prince 5(4) tableau
_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_DP_B5 = np.array(_DP_A[6] + [0.0])
_DP_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_DP_E = _DP_B5 - _DP_B4


def _rk45_generic(system, y0, cfg):
    f = _field(system)
    t_final = cfg.t_final
    rtol, atol = cfg.rtol, cfg.atol
    h_floor = 1e-14 * t_final
    t = 0.0
    y = y0.copy()
    k = np.empty((7, y.size))
    k[0] = f(t, y)
    scale = atol + rtol * np.abs(y)
    d0 = np.sqrt(np.mean((y / scale) ** 2)) if y.size else 0.0
    d1 = np.sqrt(np.mean((k[0] / scale) ** 2)) if y.size else 0.0
    h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-6
    h = min(h, cfg.max_step, t_final)
    err_prev = 1.0
    ts, ys = [0.0], [y.copy()]
    accepted = rejected = 0
    diverged = False
    while t < t_final:
        if t + h > t_final:
            h = t_final - t
        for s in range(1, 7):
            ys_stage = y + h * (np.dot(_DP_A[s], k[:s]))
            k[s] = f(t + _DP_C[s] * h, ys_stage)
        y_new = ys_stage  # stage 7 point is the 5th-order solution
        err_vec = h * np.dot(_DP_E, k)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = np.sqrt(np.mean((err_vec / scale) ** 2)) if y.size else 0.0
        if not np.isfinite(err) or not np.all(np.isfinite(y_new)):
            err = np.inf
        if err <= 1.0:
            t = t + h if t + h < t_final else t_final
            y = y_new
            k[0] = k[6]
            accepted += 1
            diverged = bool(np.linalg.norm(y) > cfg.divergence_radius)
            if diverged or accepted % cfg.record_every == 0 or t >= t_final:
                ts.append(t)
                ys.append(y.copy())
            if diverged:
                break
            fac = 0.9 * (max(err, 1e-10) ** -0.14) * (err_prev ** 0.08)
            h = h * min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
        else:
            rejected += 1
            fac = 0.9 * err ** -0.2 if np.isfinite(err) else 0.1
            h = h * max(0.1, fac)
        h = min(h, cfg.max_step)
        if h < h_floor and t < t_final:
            raise StepUnderflowError(
                f"adaptive step fell to {h:.3g} at t={t:.6g} (floor {h_floor:.3g}); "
                "the problem is too stiff for the requested tolerance"
            )
    if ts[-1] != t:
        ts.append(t)
        ys.append(y.copy())
    return np.array(ts), np.array(ys), accepted, rejected, diverged


def _use_native(system, cfg, backend):
    if backend == "generic":
        return False
    ok = (system.native is not None and cfg.method is Method.RK4_FIXED
          and system.d_signal is None and system.w_signal is None
          and system.n == 1 and system.m == 1)
    if backend == "native" and not ok:
        raise ValueError(f"{system.name} cannot use the native kernel with this configuration")
    return ok


def simulate(system, x0, z0, config, backend="auto"):
    """Integrate from ``(x0, z0)`` over ``[0, config.t_final]``.

    ``backend`` is ``"auto"`` (compiled planar kernel when the system declares
    one and the run is fixed-step with no inputs), ``"native"`` or
    ``"generic"``.  A run leaving the ball of radius ``divergence_radius`` is
    truncated and flagged rather than raised.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    z0 = np.atleast_1d(np.asarray(z0, dtype=float))
    if x0.shape != (system.n,) or z0.shape != (system.m,):
        raise ValueError(f"initial state shapes {x0.shape}, {z0.shape} do not match n={system.n}, m={system.m}")
    if not (np.all(np.isfinite(x0)) and np.all(np.isfinite(z0))):
        raise ValueError("initial state must be finite")
    cfg = config
    if _use_native(system, cfg, backend):
        nat = system.native
        ts, xs, zs, steps, div = kernels.rk4_planar(
            nat.model, nat.params, float(x0[0]), float(z0[0]), cfg.t_final, cfg.dt,
            int(cfg.record_every), cfg.divergence_radius)
        return Trajectory(ts, xs[:, None], zs[:, None], steps, 0, bool(div), backend=kernels.BACKEND)
    y0 = np.concatenate([x0, z0])
    if cfg.method is Method.RK4_FIXED:
        ts, ys, acc, rej, div = _rk4_generic(system, y0, cfg)
    else:
        ts, ys, acc, rej, div = _rk45_generic(system, y0, cfg)
    return Trajectory(ts, ys[:, : system.n], ys[:, system.n:], acc, rej, div)


def simulate_batch(system, initial_states, config, workers=None, backend="auto"):
    """Run independent simulations; results keep the order of ``initial_states``."""
    jobs = [(np.atleast_1d(x0), np.atleast_1d(z0)) for x0, z0 in initial_states]
    if not workers or workers <= 1:
        return [simulate(system, x0, z0, config, backend) for x0, z0 in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(simulate, system, x0, z0, config, backend) for x0, z0 in jobs]
        return [f.result() for f in futures]


@dataclass
class SteadyStateReport:
    max_residual: float
    witness_x: np.ndarray | None
    equilibrium_residual: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_residual <= self.tol and self.equilibrium_residual <= self.tol


def check_steady_state_map(system, x_grid, tol=RESIDUAL_TOL):
    """Residuals ``|g_f(phi(x), x, 0)|`` over ``x_grid`` and ``|g_s(0, phi(0), 0)|``."""
    xs = np.asarray(x_grid, dtype=float).reshape(-1, system.n)
    if xs.shape[0] == 0:
        raise ValueError("x_grid must be nonempty")
    w0, d0 = np.zeros(system.q), np.zeros(system.p)
    res = np.array([np.linalg.norm(system.g_f(np.asarray(system.phi(x), float), x, w0)) for x in xs])
    i = int(np.argmax(res))
    x_eq, z_eq = system.equilibrium()
    eq_res = float(np.linalg.norm(system.g_s(x_eq, z_eq, d0)))
    return SteadyStateReport(float(res[i]), xs[i].copy(), eq_res, tol)


def write_trajectory_csv(traj, path):
    """CSV with header ``t,x_1..x_n,z_1..z_m[,V_s,V_f,V]`` at 17 significant digits."""
    n, m = traj.x.shape[1], traj.z.shape[1]
    cols = ["t"] + [f"x_{i + 1}" for i in range(n)] + [f"z_{i + 1}" for i in range(m)]
    blocks = [traj.times[:, None], traj.x, traj.z]
    if traj.lyapunov is not None:
        cols += ["V_s", "V_f", "V"]
        blocks.append(traj.lyapunov)
    data = np.hstack(blocks)
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(cols), comments="")
