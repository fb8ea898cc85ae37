import numpy as np


def simplex_projection(v) -> np.ndarray:
    """Euclidean projection of ``v`` onto ``{p >= 0, sum(p) = 1}``.

    Sort-based algorithm: find the largest ``k`` with
    ``u_k - (sum_{j<=k} u_j - 1) / k > 0`` over the sorted entries ``u`` and
    shift by the corresponding threshold.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("simplex_projection expects a non-empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("simplex_projection needs finite entries")
    return project_rows(v[None, :])[0]


def project_rows(V) -> np.ndarray:
    """Project every row of a 2-D array onto the simplex."""
    V = np.asarray(V, dtype=float)
    n = V.shape[1]
    U = -np.sort(-V, axis=1)
    css = np.cumsum(U, axis=1) - 1.0
    k = np.arange(1, n + 1)
    cond = U - css / k > 0
    rho = n - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(V.shape[0]), rho - 1] / rho
    return np.maximum(V - theta[:, None], 0.0)
