"""Per-step simulation kernels, compiled when available.

The Cython module ``mpgmerge._kernels`` is imported if it was built; otherwise
the NumPy versions in ``mpgmerge._kernels_py`` are used.  Setting
``MPGMERGE_PURE_PYTHON=1`` forces the fallback.  Both backends return the
same values (checked by the test suite), so results do not depend on which
one is active.
"""

import os

import numpy as np

from mpgmerge import _kernels_py

BACKEND = "python"
_impl = _kernels_py
if os.environ.get("MPGMERGE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from mpgmerge import _kernels as _impl  # type: ignore[no-redef]
        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def _f(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def neighbors(x, lane, ramp_sees_target=True):
    return _impl.neighbors(_f(x), _i(lane), bool(ramp_sees_target))


def pair_terms(x, v, lane, v_c, eps, x_c, w21, w22):
    return _impl.pair_terms(_f(x), _f(v), _i(lane), float(v_c), float(eps), float(x_c),
                            float(w21), float(w22))


def feasible_bounds(x, v, phi, leader, follower, dt, tau_s, length, g, vmax):
    return _impl.feasible_bounds(_f(x), _f(v), _f(phi), _i(leader), _i(follower), float(dt),
                                 float(tau_s), float(length), float(g), float(vmax))


def collisions(x, y, phi, length, width):
    return _impl.collisions(_f(x), _f(y), _f(phi), float(length), float(width))
