"""Pure numpy implementations of the speedup kernels.

These are the reference implementations; the Cython versions in
_speedups.pyx must match them (see benchmarks/bench_kernels.py and the
kernel tests).
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND = "pure"


def grid_sin_lat_extremes(center, ex, ey, half_a, half_b, n):
    """Extremes of y/|p| over an n x n grid on a tangent plane patch.

    The patch is p(a, b) = center + a*ex + b*ey with a in
    [-half_a, half_a], b in [-half_b, half_b], both sampled with n
    evenly spaced values including the endpoints.  y is the polar-axis
    component, so y/|p| is the sine of the latitude of the centrally
    projected point.

    Returns (min_ratio, max_ratio).
    """
    a = np.linspace(-half_a, half_a, n)
    b = np.linspace(-half_b, half_b, n)
    x = center[0] + np.add.outer(a * ex[0], b * ey[0])
    y = center[1] + np.add.outer(a * ex[1], b * ey[1])
    z = center[2] + np.add.outer(a * ex[2], b * ey[2])
    ratio = y / np.sqrt(x * x + y * y + z * z)
    return float(ratio.min()), float(ratio.max())


def conv1d_forward(x, w, b):
    """Valid cross-correlation along the last axis.

    x: (batch, c_in, length), w: (c_out, c_in, k), b: (c_out,)
    returns (batch, c_out, length - k + 1).
    """
    k = w.shape[2]
    windows = sliding_window_view(x, k, axis=2)
    out = np.einsum("bilk,oik->bol", windows, w, optimize=True)
    out += b[None, :, None]
    return out


def conv1d_backward(x, w, grad_out):
    """Gradients of conv1d_forward w.r.t. x, w and b."""
    k = w.shape[2]
    windows = sliding_window_view(x, k, axis=2)
    grad_b = grad_out.sum(axis=(0, 2))
    grad_w = np.einsum("bilk,bol->oik", windows, grad_out, optimize=True)
    padded = np.pad(grad_out, ((0, 0), (0, 0), (k - 1, k - 1)))
    gwin = sliding_window_view(padded, k, axis=2)
    grad_x = np.einsum("bolk,oik->bil", gwin, w[:, :, ::-1], optimize=True)
    return grad_x, grad_w, grad_b
