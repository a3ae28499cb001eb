"""Gaussian RBF kernels on the real line and RKHS test functions."""
import math
from dataclasses import dataclass, field

import numpy as np

from . import _backend

FAMILIES = ("gaussian-rbf",)

# Hand-placed so that f has a local max near 0.06 and the global max near 0.92.
DEFAULT_CENTERS = (0.05, 0.25, 0.45, 0.6, 0.85, 1.0)
DEFAULT_COEFFICIENTS = (0.375, 2.0, -1.875, -0.5, 2.75, -0.625)
DEFAULT_LENGTH_SCALE = 0.3


def _as_points(x):
    return np.ascontiguousarray(np.atleast_1d(np.asarray(x, dtype=np.float64)).ravel())


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and length scale. Only ``gaussian-rbf`` is implemented."""

    length_scale: float = DEFAULT_LENGTH_SCALE
    family: str = "gaussian-rbf"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.length_scale > 0:
            raise ValueError("length_scale must be positive")

    def diag(self, x):
        return np.ones(_as_points(x).shape[0])


def eval_kernel(spec, x, x2):
    d = float(x) - float(x2)
    return math.exp(-d * d / (2.0 * spec.length_scale**2))


def kernel_matrix(spec, points):
    pts = _as_points(points)
    if pts.size == 0:
        raise ValueError("kernel_matrix needs at least one point")
    return _backend.rbf_gram(pts, spec.length_scale)


def kernel_cross(spec, a, b):
    """Rectangular matrix ``k(a_i, b_j)``; either side may be empty."""
    pa, pb = _as_points(a), _as_points(b)
    if pa.size == 0 or pb.size == 0:
        return np.zeros((pa.size, pb.size))
    return _backend.rbf_cross(pa, pb, spec.length_scale)


def kernel_vector(spec, x, points):
    pts = _as_points(points)
    if pts.size == 0:
        raise ValueError("kernel_vector needs at least one point")
    return kernel_cross(spec, [x], pts)[0]


@dataclass(frozen=True, eq=False)
class RkhsFunction:
    """Finite kernel expansion ``f(x) = sum_i alpha_i k(x, c_i)``."""

    centers: np.ndarray
    coefficients: np.ndarray
    kernel: KernelSpec
    rkhs_norm: float = field(default=float("nan"))

    def __call__(self, x):
        scalar = np.ndim(x) == 0
        vals = kernel_cross(self.kernel, x, self.centers) @ self.coefficients
        return float(vals[0]) if scalar else vals

    def recompute_norm(self):
        K = kernel_matrix(self.kernel, self.centers)
        return math.sqrt(max(float(self.coefficients @ K @ self.coefficients), 0.0))

    def to_dict(self):
        return {
            "centers": self.centers.tolist(),
            "coefficients": self.coefficients.tolist(),
            "length_scale": self.kernel.length_scale,
            "rkhs_norm": self.rkhs_norm,
        }


def synth_test_function(spec, centers, coefficients):
    c = _as_points(centers)
    a = np.asarray(coefficients, dtype=np.float64).ravel()
    if c.size != a.size or c.size == 0:
        raise ValueError(
            f"need as many coefficients as centers (got {a.size} and {c.size})"
        )
    c.setflags(write=False)
    a.setflags(write=False)
    f = RkhsFunction(c, a, spec)
    object.__setattr__(f, "rkhs_norm", f.recompute_norm())
    return f


def default_test_function(spec=None):
    return synth_test_function(spec or KernelSpec(), DEFAULT_CENTERS, DEFAULT_COEFFICIENTS)
