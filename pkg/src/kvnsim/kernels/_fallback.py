"""Pure numpy versions of the hot kernels (same signatures as ``_core``)."""
import itertools

import numpy as np


def periodic_interp(values, x_min, dx, points):
    """Multilinear interpolation of periodic grid ``values`` at ``points``.

    ``values`` has the grid shape; ``points`` has shape ``(d, M)``.
    """
    values = np.asarray(values, dtype=float)
    pts = np.asarray(points, dtype=float)
    d = values.ndim
    shape = values.shape
    s = (pts - np.asarray(x_min, dtype=float)[:, None]) / np.asarray(dx, dtype=float)[:, None]
    base = np.floor(s)
    frac = s - base
    base = base.astype(np.int64)
    out = np.zeros(pts.shape[1])
    for corner in itertools.product((0, 1), repeat=d):
        weight = np.ones(pts.shape[1])
        idx = []
        for j, c in enumerate(corner):
            weight *= frac[j] if c else 1.0 - frac[j]
            idx.append((base[j] + c) % shape[j])
        out += weight * values[tuple(idx)]
    return out


def ae_loglik(theta, m, hits, shots):
    """Log-likelihood of Grover-schedule outcomes on a grid of angles.

    Level ``k`` ran ``m[k]`` Grover steps ``shots[k]`` times and saw
    ``hits[k]`` good outcomes; P(good) = sin^2((2m+1) theta).
    """
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    tiny = 1e-300
    for mk, hk, nk in zip(m, hits, shots):
        ang = (2 * mk + 1) * theta
        if hk > 0:
            out += hk * np.log(np.maximum(np.sin(ang) ** 2, tiny))
        if nk - hk > 0:
            out += (nk - hk) * np.log(np.maximum(np.cos(ang) ** 2, tiny))
    return out
