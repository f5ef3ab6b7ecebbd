"""Central finite differences shared by the gradient tests."""
import numpy as np

H = 1e-6
# coordinates whose derivative is far below the FD round-off (~1e-10 / h)
# are compared against this floor instead of their own magnitude
FLOOR = 1e-4


def central_diff(f, v, h=H):
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        out[i] = (f(v + e) - f(v - e)) / (2 * h)
    return out


def max_rel_error(analytic, fd, floor=FLOOR):
    analytic, fd = np.asarray(analytic), np.asarray(fd)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), floor)
    return float(np.max(np.abs(analytic - fd) / denom))
