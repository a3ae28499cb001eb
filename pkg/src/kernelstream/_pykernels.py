"""Pure-numpy reference versions of the compiled kernels in ``_core``."""
import math

import numpy as np
from scipy.linalg import solve_triangular


def rbf_cross(a, b, length_scale):
    scale = -0.5 / (length_scale * length_scale)
    d = np.subtract.outer(a, b)
    return np.exp(scale * d * d)


def rbf_gram(a, length_scale):
    out = rbf_cross(a, a, length_scale)
    # exact symmetry and unit diagonal regardless of exp rounding
    out = np.triu(out, 1)
    out = out + out.T
    np.fill_diagonal(out, 1.0)
    return out


def chol_append(L, n, k, diag):
    if n:
        row = solve_triangular(L[:n, :n], k[:n], lower=True, check_finite=False)
        L[n, :n] = row
        piv = diag - float(row @ row)
    else:
        piv = float(diag)
    if piv > 0.0:
        L[n, n] = math.sqrt(piv)
    return piv


def probe_append(L, n, V, kp):
    if n:
        V[n] = (kp - L[n, :n] @ V[:n]) / L[n, n]
    else:
        V[n] = kp / L[n, n]
    return V[n]
