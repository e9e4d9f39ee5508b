"""Independent numerical oracles shared by the test suite.

Everything here derives expected values by brute force (central finite
differences, direct summation, kernel double sums) so the quantities under
test are checked against a second, unrelated computation path.
"""

from __future__ import annotations

import math

import numpy as np


def finite_difference(f, arrays, step: float = 1e-5):
    """Central-difference gradients of a scalar function of several arrays.

    ``f`` maps a list of float64 arrays to a Python float.  The arrays are
    perturbed in place and restored, one coordinate at a time.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + step
            fp = f(arrays)
            flat[i] = saved - step
            fm = f(arrays)
            flat[i] = saved
            gflat[i] = (fp - fm) / (2.0 * step)
        grads.append(g)
    return grads


def relative_gradient_error(computed, reference) -> float:
    """Max-norm relative error with an absolute floor for near-zero gradients."""
    worst = 0.0
    for c, r in zip(computed, reference):
        scale = max(float(np.max(np.abs(r))), 1e-6)
        worst = max(worst, float(np.max(np.abs(c - r))) / scale)
    return worst


def exact_rbf_mmd_squared(x: np.ndarray, y: np.ndarray, gamma: float = 1.0) -> float:
    """Biased (V-statistic) squared MMD under the exact RBF kernel."""

    def gram(a, b):
        d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        return np.exp(-gamma * d2)

    return float(gram(x, x).mean() + gram(y, y).mean() - 2.0 * gram(x, y).mean())


def direct_mutual_info(table: np.ndarray) -> float:
    """I(rows; cols) of a 2-D joint by direct double-loop summation, in nats."""
    pa = table.sum(axis=1)
    pb = table.sum(axis=0)
    total = 0.0
    for i in range(table.shape[0]):
        for j in range(table.shape[1]):
            p = table[i, j]
            if p > 0.0:
                total += p * math.log(p / (pa[i] * pb[j]))
    return total


def plugin_mutual_info(a: np.ndarray, b: np.ndarray) -> float:
    """Plug-in MI estimate (nats) from paired integer label samples."""
    a = np.asarray(a, dtype=int)
    b = np.asarray(b, dtype=int)
    ka, kb = a.max() + 1, b.max() + 1
    counts = np.zeros((ka, kb))
    np.add.at(counts, (a, b), 1.0)
    return direct_mutual_info(counts / counts.sum())


def gaussian_mi_from_correlation(rho: float) -> float:
    """Analytic MI of a bivariate Gaussian with correlation rho, in nats."""
    return -0.5 * math.log(1.0 - rho * rho)
