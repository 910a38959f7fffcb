"""Reference computations that share no code path with the package solver."""

import math

import numpy as np

INF = math.inf


def recursion_law(lam, mu, c, gamma, k1, k2, alpha, levels):
    """Stationary law by forward recursion over level cuts, truncated at ``levels``.

    Uses only local balance: the off line is solved state by state and the on
    line from the flow across each cut between q and q+1.  All terms are
    positive, so the recursion is numerically stable.  Returns (on, off)
    arrays over q = 0..levels, normalised over the truncated support.
    """
    on = np.zeros(levels + 1)
    off = np.zeros(levels + 1)
    if alpha == 0:
        on[0] = 1.0
    elif alpha == INF:
        off[0] = 1.0
    else:
        on[0] = 1.0
        off[0] = alpha / lam
    for q in range(levels):
        if alpha > 0:
            out_rate = lam + (gamma if q + 1 >= k1 else 0.0)
            off[q + 1] = lam * off[q] / out_rate
        rate = c * mu if q + 1 >= k2 else mu
        on[q + 1] = lam * (on[q] + off[q]) / rate
    total = on.sum() + off.sum()
    return on / total, off / total


def dense_null_vector(matrix):
    """Stationary vector of a small dense generator via SVD."""
    q = np.asarray(matrix.todense() if hasattr(matrix, "todense") else matrix)
    _, _, vt = np.linalg.svd(q.T)
    v = vt[-1]
    return v / v.sum()


def mm1_mean_response(lam, rate):
    return 1.0 / (rate - lam)


def smallest_truncation(rho, knee, floor, tol):
    """Brute-force smallest q >= floor with rho**(q - knee) / (1 - rho) < tol."""
    q = floor
    while rho ** (q - knee) / (1 - rho) >= tol:
        q += 1
    return q
