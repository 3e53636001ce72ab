"""Differentiable ascending ranks via regularized permutahedron projection.

The soft rank of a vector theta is the Euclidean projection of
(input_scale / epsilon) * theta onto the permutahedron of (1, ..., n), the
convex hull of all permutations of those integers. The projection is the
maximizer of <mu, scaled theta> - ||mu||^2 / 2 over the hull, so as
epsilon -> 0 it snaps to the vertex holding the hard ascending ranks
(smallest entry -> rank 1) and as epsilon -> infinity it relaxes to the
centroid (n+1)/2 in every coordinate.

Computationally the projection reduces to a single L2 isotonic regression on
the sorted input (pool-adjacent-violators, O(n) after the sort). The PAV
pools also carry the exact Jacobian: within a pool the derivative is
(identity minus pool-average), across pools it is zero, all scaled by
input_scale / epsilon. At ties the pooled expression is a valid
(block-structured) subgradient and is what the VJP returns.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SoftRankParams:
    """Regularization strength and pre-scaling for the soft rank operator.

    epsilon is the quadratic regularization strength. input_scale multiplies
    inputs before ranking; None resolves to 2n at call time, which places
    typical gaps of [0, 1]-valued distance vectors on the order of one rank
    unit (neither saturated nor effectively hard).
    """

    epsilon: float = 1.0
    input_scale: float | None = None

    def __post_init__(self):
        if not (np.isfinite(self.epsilon) and self.epsilon > 0.0):
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if self.input_scale is not None and not (
            np.isfinite(self.input_scale) and self.input_scale > 0.0
        ):
            raise ValueError(f"input_scale must be positive, got {self.input_scale}")

    def scale_for(self, n: int) -> float:
        return 2.0 * n if self.input_scale is None else self.input_scale


def _as_value_vector(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size < 1:
        raise ValueError(f"expected a nonempty 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("input vector contains non-finite values")
    return arr


def _pav_nondecreasing(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pool-adjacent-violators for the nondecreasing L2 fit.

    Returns (block means, block sizes); merging only on strict violations
    keeps equal-mean neighbors as separate blocks.
    """
    means: list[float] = []
    sizes: list[int] = []
    for v in y:
        cur_mean = float(v)
        cur_size = 1
        while means and means[-1] > cur_mean:
            prev_mean = means.pop()
            prev_size = sizes.pop()
            total = prev_size + cur_size
            cur_mean = (prev_mean * prev_size + cur_mean * cur_size) / total
            cur_size = total
        means.append(cur_mean)
        sizes.append(cur_size)
    return np.asarray(means, dtype=np.float64), np.asarray(sizes, dtype=np.intp)


def isotonic_regression_l2(y) -> np.ndarray:
    """Least-squares fit of a nondecreasing vector to y.

    The solution is blockwise constant, each block value being the mean of
    the pooled entries.
    """
    arr = _as_value_vector(y)
    means, sizes = _pav_nondecreasing(arr)
    return np.repeat(means, sizes)


def _soft_rank_core(theta: np.ndarray, params: SoftRankParams):
    """Shared forward pass; returns ranks plus the pool structure for the VJP."""
    n = theta.size
    factor = params.scale_for(n) / params.epsilon
    z = factor * theta
    perm = np.argsort(-z, kind="stable")
    s = z[perm]
    w = np.arange(n, 0, -1, dtype=np.float64)
    # nonincreasing fit of (s - w), via the nondecreasing fit of its negation
    means, sizes = _pav_nondecreasing(w - s)
    r_sorted = s + np.repeat(means, sizes)
    ranks = np.empty(n, dtype=np.float64)
    ranks[perm] = r_sorted
    return ranks, perm, sizes, factor


def soft_rank(theta, params: SoftRankParams = SoftRankParams()) -> np.ndarray:
    """Ascending soft ranks of theta; entries lie in [1, n] and sum to n(n+1)/2."""
    arr = _as_value_vector(theta)
    ranks, _, _, _ = _soft_rank_core(arr, params)
    return ranks


def soft_rank_vjp(theta, params: SoftRankParams, upstream) -> np.ndarray:
    """upstream^T times the Jacobian of soft_rank at theta.

    The Jacobian is symmetric and block-structured by the PAV pools, so the
    product only needs per-pool mean removal in sorted order.
    """
    arr = _as_value_vector(theta)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != arr.shape:
        raise ValueError(f"upstream shape {up.shape} does not match input shape {arr.shape}")
    _, perm, sizes, factor = _soft_rank_core(arr, params)
    u_sorted = up[perm]
    out_sorted = u_sorted.copy()
    start = 0
    for size in sizes:
        block = slice(start, start + size)
        out_sorted[block] -= u_sorted[block].mean()
        start += size
    out = np.empty_like(out_sorted)
    out[perm] = factor * out_sorted
    return out


def soft_rank_jacobian(theta, params: SoftRankParams = SoftRankParams()) -> np.ndarray:
    """Dense n x n Jacobian, assembled row by row from vector-Jacobian products."""
    arr = _as_value_vector(theta)
    n = arr.size
    rows = [soft_rank_vjp(arr, params, np.eye(n)[i]) for i in range(n)]
    return np.stack(rows, axis=0)


def hard_rank(theta) -> np.ndarray:
    """Integer ascending ranks in 1..n; ties broken by original index."""
    arr = _as_value_vector(theta)
    order = np.argsort(arr, kind="stable")
    ranks = np.empty(arr.size, dtype=np.float64)
    ranks[order] = np.arange(1, arr.size + 1, dtype=np.float64)
    return ranks
