"""Pure-NumPy reference implementation of the hot-loop kernels.

Semantics match ``_core`` (the compiled extension); either backend can serve
the bandit. ``u`` is always the maintained inverse kernel matrix, C-contiguous
float64, and the rank-one downdates mutate it in place.
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericalError

DENOM_FLOOR = 1e-12


def quad_form(u: np.ndarray, g: np.ndarray) -> float:
    """g' U g for symmetric U."""
    return float(g @ (u @ g))


def quad_forms(u: np.ndarray, gs: np.ndarray) -> np.ndarray:
    """Row-wise quadratic forms for a (K, p) stack of vectors."""
    v = gs @ u
    return np.einsum("ij,ij->i", v, gs)


def quad_form_idx(u: np.ndarray, idx: np.ndarray, vals: np.ndarray) -> float:
    """Quadratic form for a sparse vector given as (indices, values)."""
    sub = u[np.ix_(idx, idx)]
    return float(vals @ (sub @ vals))


def _downdate(u: np.ndarray, v: np.ndarray, q: float, m: float) -> float:
    denom = m + q
    if not np.isfinite(denom) or denom <= DENOM_FLOOR:
        raise NumericalError(f"rank-one update denominator {denom!r} is not usable")
    u -= np.outer(v, v) / denom
    return denom


def sm_update(u: np.ndarray, g: np.ndarray, m: float) -> float:
    """In-place Sherman-Morrison downdate of U^-1 for U += g g'/m.

    Returns the denominator m + g' U^-1 g; raises NumericalError (leaving
    ``u`` untouched) when it falls at or below the stability floor.
    """
    v = u @ g
    q = float(g @ v)
    return _downdate(u, v, q, m)


def sm_update_idx(u: np.ndarray, idx: np.ndarray, vals: np.ndarray, m: float) -> float:
    """Sherman-Morrison downdate for a sparse update vector."""
    v = u[:, idx] @ vals
    q = float(vals @ v[idx])
    return _downdate(u, v, q, m)
