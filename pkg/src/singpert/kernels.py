"""Backend selection for the planar integration kernels.

The compiled extension is used when it imports; otherwise, or when the
environment variable ``SINGPERT_PURE_PYTHON`` is set, the pure-Python twin is
used.  Both expose ``rk4_planar``, ``planar_rhs``, ``step_count`` and the model
ids ``SATURATED`` / ``CUBIC``.
"""
import os

from . import _pykernels as python_backend

compiled_backend = None
if not os.environ.get("SINGPERT_PURE_PYTHON"):
    try:
        from . import _kernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

active = compiled_backend if compiled_backend is not None else python_backend

BACKEND = active.BACKEND
SATURATED = python_backend.SATURATED
CUBIC = python_backend.CUBIC


def backends():
    """Available backends, compiled first."""
    return [b for b in (compiled_backend, python_backend) if b is not None]


def rk4_planar(*args, backend=None):
    return (backend or active).rk4_planar(*args)


def planar_rhs(*args, backend=None):
    return (backend or active).planar_rhs(*args)
