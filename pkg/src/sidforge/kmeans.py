"""Deterministic Lloyd k-means and the size-balanced variant.

Both fits share seeded k-means++ initialization and fixed iteration caps
so identical (points, k, iters, seed) inputs give bit-identical results.
Ties in every nearest-centroid decision go to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class KmeansResult:
    centroids: np.ndarray          # (k, d) cluster means of the final assignment
    assignments: np.ndarray        # (n,) int cluster index per point
    sse: float                     # sum of squared distances to assigned centroids
    sse_per_iter: list[float] = field(default_factory=list)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.assignments, minlength=self.centroids.shape[0])


def _as_points(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("point set must be a nonempty (n, d) array")
    return pts


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, shape (n, k)."""
    d2 = (
        np.sum(points**2, axis=1)[:, None]
        - 2.0 * points @ centroids.T
        + np.sum(centroids**2, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def kmeanspp_seed(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Seeded k-means++ initialization; duplicates chosen if k exceeds spread."""
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        chosen.append(idx)
        d2 = np.minimum(d2, np.sum((points - points[idx]) ** 2, axis=1))
    return points[chosen].copy()


def _update_means(points: np.ndarray, assign: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Cluster means of the assignment; empty clusters keep their old centroid."""
    k, d = centroids.shape
    sums = np.zeros((k, d))
    np.add.at(sums, assign, points)
    counts = np.bincount(assign, minlength=k).astype(np.float64)
    out = centroids.copy()
    nonempty = counts > 0
    out[nonempty] = sums[nonempty] / counts[nonempty, None]
    return out


def _repair_empty(points, assign, centroids, dists):
    """Re-seed each empty cluster with the point farthest from its centroid."""
    k = centroids.shape[0]
    assigned_d = dists[np.arange(points.shape[0]), assign]
    counts = np.bincount(assign, minlength=k)
    for j in np.flatnonzero(counts == 0):
        donor = int(np.argmax(assigned_d))
        if counts[assign[donor]] <= 1:
            # do not empty another cluster; fall back to the next-farthest point
            order = np.argsort(-assigned_d, kind="stable")
            for cand in order:
                if counts[assign[cand]] > 1:
                    donor = int(cand)
                    break
            else:
                break  # fewer distinct points than clusters; leave j empty
        counts[assign[donor]] -= 1
        assign[donor] = j
        counts[j] = 1
        assigned_d[donor] = 0.0
    return assign


def kmeans_fit(points: np.ndarray, k: int, iters: int = 25, seed: int = 0) -> KmeansResult:
    """Lloyd iterations from deterministic k-means++ seeding.

    The returned centroids are the means of the final assignment, so the
    total within-cluster squared error never exceeds the input energy and
    is non-increasing across iterations.
    """
    points = _as_points(points)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rng = np.random.default_rng(seed)
    centroids = kmeanspp_seed(points, k, rng)
    assign = np.zeros(points.shape[0], dtype=np.int64)
    sse_per_iter: list[float] = []
    for _ in range(max(1, iters)):
        dists = _sq_dists(points, centroids)
        new_assign = np.argmin(dists, axis=1)
        new_assign = _repair_empty(points, new_assign, centroids, dists)
        centroids = _update_means(points, new_assign, centroids)
        sse = float(np.sum((points - centroids[new_assign]) ** 2))
        sse_per_iter.append(sse)
        converged = bool(np.array_equal(new_assign, assign)) and len(sse_per_iter) > 1
        assign = new_assign
        if converged:
            break
    return KmeansResult(centroids, assign, sse_per_iter[-1], sse_per_iter)


def _balanced_assign(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """Greedy-margin capacity assignment with cluster sizes in {floor, ceil}.

    Points are processed by descending margin (second-best distance minus
    best distance), each taking its nearest centroid that still has room.
    At most ``n mod k`` clusters may grow to ceil(n/k); the rest stop at
    floor(n/k), which pins max-min cluster size to <= 1.
    """
    n, k = points.shape[0], centroids.shape[0]
    dists = _sq_dists(points, centroids)
    if k == 1:
        return np.zeros(n, dtype=np.int64)
    part = np.partition(dists, 1, axis=1)
    margin = part[:, 1] - part[:, 0]
    order = np.argsort(-margin, kind="stable")
    prefs = np.argsort(dists, axis=1, kind="stable")

    floor, extra = divmod(n, k)
    counts = np.zeros(k, dtype=np.int64)
    ceil_used = 0
    assign = np.full(n, -1, dtype=np.int64)
    for p in order:
        for c in prefs[p]:
            if counts[c] < floor or (counts[c] == floor and ceil_used < extra):
                if counts[c] == floor:
                    ceil_used += 1
                counts[c] += 1
                assign[p] = c
                break
    return assign


# pairwise-swap polish is quadratic in n; skip it for big fits
_SWAP_REFINE_MAX_POINTS = 1024

# exact two-cluster search is used when the balanced-partition count fits
_EXACT_TWO_MAX_PARTITIONS = 100_000


def _exact_balanced_two(points: np.ndarray) -> KmeansResult | None:
    """Exhaustive minimum-SSE balanced 2-partition for small inputs.

    Greedy balanced Lloyd sits in alternating fixed points on a sizable
    share of unstructured inputs, so tiny fits take the exact route. The
    per-partition cost uses sum identities, vectorized over the whole
    combination table.
    """
    from itertools import combinations
    from math import comb

    n = points.shape[0]
    big = (n + 1) // 2
    if n < 2 or comb(n, big) > _EXACT_TWO_MAX_PARTITIONS:
        return None
    combos = np.array(list(combinations(range(n), big)), dtype=np.int64)
    total_sum = points.sum(axis=0)
    total_sq = float(np.sum(points**2))
    left_sums = points[combos].sum(axis=1)                 # (m, d)
    right_sums = total_sum[None, :] - left_sums
    # SSE(C) = sum ||x||^2 - ||sum_C||^2/|C| summed over both sides
    cost = (
        total_sq
        - np.sum(left_sums**2, axis=1) / big
        - (np.sum(right_sums**2, axis=1) / (n - big) if n > big else 0.0)
    )
    best = int(np.argmin(cost))
    assign = np.ones(n, dtype=np.int64)
    assign[combos[best]] = 0
    centroids = np.stack([
        left_sums[best] / big,
        right_sums[best] / (n - big) if n > big else left_sums[best] / big,
    ])
    sse = float(cost[best])
    return KmeansResult(centroids, assign, sse, [sse])


def _swap_refine(points, assign, centroids, max_passes: int = 25):
    """Greedy disjoint cross-cluster swaps until none lowers the cost.

    Swapping two points never changes cluster sizes, so the balance
    invariant survives; centroids are re-averaged after every pass.
    """
    n = points.shape[0]
    for _ in range(max_passes):
        dists = _sq_dists(points, centroids)
        own = dists[np.arange(n), assign]
        cross = dists[:, assign]          # cross[i, j] = d(i, cluster of j)
        delta = cross + cross.T - own[:, None] - own[None, :]
        delta[assign[:, None] == assign[None, :]] = 0.0
        ii, jj = np.nonzero(delta < -1e-12)
        if ii.size == 0:
            break
        upper = ii < jj
        ii, jj = ii[upper], jj[upper]
        order = np.argsort(delta[ii, jj], kind="stable")
        used = np.zeros(n, dtype=bool)
        for idx in order:
            a, b = int(ii[idx]), int(jj[idx])
            if used[a] or used[b]:
                continue
            assign[a], assign[b] = assign[b], assign[a]
            used[a] = used[b] = True
        centroids = _update_means(points, assign, centroids)
    return assign, centroids


def balanced_kmeans_fit(points: np.ndarray, k: int, iters: int = 25, seed: int = 0) -> KmeansResult:
    """Balanced Lloyd loop; keeps the lowest-SSE iterate since balanced
    assignment does not guarantee monotone SSE, then polishes small fits
    with cross-cluster swaps."""
    points = _as_points(points)
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k == 2:
        exact = _exact_balanced_two(points)
        if exact is not None:
            return exact
    rng = np.random.default_rng(seed)
    centroids = kmeanspp_seed(points, k, rng)
    best: KmeansResult | None = None
    prev_assign = None
    sse_per_iter: list[float] = []
    for _ in range(max(1, iters)):
        assign = _balanced_assign(points, centroids)
        centroids = _update_means(points, assign, centroids)
        sse = float(np.sum((points - centroids[assign]) ** 2))
        sse_per_iter.append(sse)
        if best is None or sse < best.sse:
            best = KmeansResult(centroids.copy(), assign.copy(), sse)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
    assert best is not None
    if points.shape[0] <= _SWAP_REFINE_MAX_POINTS and k > 1:
        assign, centroids = _swap_refine(points, best.assignments, best.centroids, max_passes=iters)
        sse = float(np.sum((points - centroids[assign]) ** 2))
        if sse <= best.sse:
            best = KmeansResult(centroids, assign, sse)
        sse_per_iter.append(best.sse)
    best.sse_per_iter = sse_per_iter
    return best
