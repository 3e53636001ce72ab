"""Independent oracles the tests compare production code against.

Everything here is deliberately written from raw definitions with
different algorithms and different numerics than the package: isotonic
regression as a brute-force projected-gradient QP and as exhaustive
partition enumeration, retrieval metrics as explicit fsum/sorted loops,
footrule minima by permutation enumeration, and gradients by central
finite differences.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction

import numpy as np


def isotonic_pgd_nondecreasing(ys: np.ndarray, iters: int = 20000) -> np.ndarray:
    """Projected-gradient solver for min ||x - y||^2 s.t. x nondecreasing.

    Reparametrizes x = L d with L the lower-triangular ones matrix; the
    constraint becomes d_j >= 0 for j >= 2, whose projection is clipping.
    Step size 1 / lambda_max(L^T L) guarantees convergence; the iteration
    count is overkill on purpose. ys is a (batch, n) stack.
    """
    ys = np.asarray(ys, dtype=np.float64)
    m, n = ys.shape
    lower = np.tril(np.ones((n, n)))
    step = 1.0 / np.linalg.eigvalsh(lower.T @ lower).max()
    d = np.zeros_like(ys)
    d[:, 0] = ys[:, 0]
    for _ in range(iters):
        x = d @ lower.T
        grad = (x - ys) @ lower
        d -= step * grad
        d[:, 1:] = np.maximum(d[:, 1:], 0.0)
    return d @ lower.T


def isotonic_enumeration(y: np.ndarray) -> np.ndarray:
    """Exact isotonic fit by enumerating all consecutive partitions.

    Every candidate assigns each block its mean; the optimum is the
    feasible (nondecreasing) candidate with minimal distance. Costs are
    compared in exact rational arithmetic (floats are exact rationals), so
    candidates whose gap is below one ulp of the cost are still ordered
    correctly. Exponential in n, so keep n small.
    """
    ys = [Fraction(float(v)) for v in np.asarray(y, dtype=np.float64)]
    n = len(ys)
    best_cost, best_x = None, None
    for mask in range(1 << (n - 1)):
        bounds = [0] + [i + 1 for i in range(n - 1) if (mask >> i) & 1] + [n]
        x: list[Fraction] = []
        for a, b in zip(bounds, bounds[1:]):
            mean = sum(ys[a:b], Fraction(0)) / (b - a)
            x.extend([mean] * (b - a))
        if any(x[i] > x[i + 1] for i in range(n - 1)):
            continue
        cost = sum(((xi - yi) ** 2 for xi, yi in zip(x, ys)), Fraction(0))
        if best_cost is None or cost < best_cost:
            best_cost, best_x = cost, x
    return np.array([float(v) for v in best_x])


def footrule_min_bruteforce(n: int, p: int) -> float:
    """Minimum normalized footrule over all n! hard rankings, p positives."""
    targets = [1.0] * p + [float(n)] * (n - p)
    best = min(
        sum(abs(r - t) for r, t in zip(perm, targets))
        for perm in itertools.permutations(range(1, n + 1))
    )
    return best / n


def footrule_closed_form(n: int, p: int) -> float:
    return (p * (p - 1) / 2 + (n - p) * (n - p - 1) / 2) / n


def central_diff(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat_x = x.reshape(-1)
    flat_g = g.reshape(-1)
    for i in range(flat_x.size):
        orig = flat_x[i]
        flat_x[i] = orig + h
        up = f(x)
        flat_x[i] = orig - h
        down = f(x)
        flat_x[i] = orig
        flat_g[i] = (up - down) / (2.0 * h)
    return g


def halved_cosine_distance(q, g) -> float:
    num = math.fsum(float(a) * float(b) for a, b in zip(q, g))
    nq = math.sqrt(math.fsum(float(a) * float(a) for a in q))
    ng = math.sqrt(math.fsum(float(b) * float(b) for b in g))
    return (1.0 - num / (nq * ng)) / 2.0


def rank_gallery_bruteforce(q, gallery) -> list[int]:
    dists = [halved_cosine_distance(q, g) for g in gallery]
    return sorted(range(len(gallery)), key=lambda j: (dists[j], j))


def retrieval_metrics_bruteforce(
    query_embs,
    query_ids,
    query_cams,
    gallery_embs,
    gallery_ids,
    gallery_cams,
    cmc_ks=(1, 10, 20),
    camera_filter: bool = True,
):
    """Recompute CMC/mAP/mINP from scratch with explicit loops.

    Returns (cmc dict, map, minp, n_queries, n_skipped), or None when every
    query ends up without a valid positive.
    """
    first_hits = []
    aps = []
    inps = []
    n_skipped = 0
    for qi in range(len(query_embs)):
        order = rank_gallery_bruteforce(query_embs[qi], gallery_embs)
        rank = 0
        n_pos_seen = 0
        ap_terms = []
        first = None
        last_pos_rank = None
        for j in order:
            if camera_filter and gallery_ids[j] == query_ids[qi] and gallery_cams[j] == query_cams[qi]:
                continue
            rank += 1
            if gallery_ids[j] == query_ids[qi]:
                n_pos_seen += 1
                ap_terms.append(n_pos_seen / rank)
                if first is None:
                    first = rank
                last_pos_rank = rank
        if first is None:
            n_skipped += 1
            continue
        first_hits.append(first)
        aps.append(math.fsum(ap_terms) / len(ap_terms))
        inps.append(len(ap_terms) / last_pos_rank)
    if not first_hits:
        return None
    n = len(first_hits)
    cmc = {k: sum(1 for fh in first_hits if fh <= k) / n for k in cmc_ks}
    return cmc, math.fsum(aps) / n, math.fsum(inps) / n, n, n_skipped
