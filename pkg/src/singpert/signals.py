"""Deterministic input signals for the disturbance channels ``d`` and ``w``."""
import numpy as np


def zero(dim):
    z = np.zeros(dim)
    return lambda t: z


def constant(value):
    v = np.atleast_1d(np.asarray(value, dtype=float))
    return lambda t: v


def step(before, after, t_step):
    b = np.atleast_1d(np.asarray(before, dtype=float))
    a = np.atleast_1d(np.asarray(after, dtype=float))
    return lambda t: b if t < t_step else a


def sinusoid(amplitude, omega, phase=0.0, offset=0.0):
    amp = np.atleast_1d(np.asarray(amplitude, dtype=float))
    off = np.broadcast_to(np.asarray(offset, dtype=float), amp.shape)
    ph = np.broadcast_to(np.asarray(phase, dtype=float), amp.shape)
    om = np.broadcast_to(np.asarray(omega, dtype=float), amp.shape)
    return lambda t: off + amp * np.sin(om * t + ph)


def signal_from_spec(spec):
    """``{"kind": "constant"|"step"|"sinusoid", ...}`` to a callable ``t -> array``."""
    kind = spec.get("kind")
    if kind == "constant":
        return constant(spec["value"])
    if kind == "step":
        return step(spec["before"], spec["after"], float(spec["t_step"]))
    if kind == "sinusoid":
        return sinusoid(spec["amplitude"], spec["omega"], spec.get("phase", 0.0), spec.get("offset", 0.0))
    raise ValueError(f"unknown signal kind {kind!r}; expected constant, step or sinusoid")
