"""Slow, obviously-correct reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import math

import numpy as np


def naive_covariance(X: np.ndarray) -> np.ndarray:
    n, d = X.shape
    mean = [sum(X[r, c] for r in range(n)) / n for c in range(d)]
    cov = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            cov[i, j] = sum((X[r, i] - mean[i]) * (X[r, j] - mean[j]) for r in range(n)) / (n - 1)
    return cov


def minimal_components(evr, target):
    for m in range(1, len(evr) + 1):
        if math.fsum(evr[:m]) >= target:
            return m
    return len(evr)


def brute_hull(points: np.ndarray) -> set[int]:
    """Indices of extreme points: a point is on the hull iff some pair (i, j)
    through it has every other point on one side, checked over all pairs."""
    k = len(points)
    on = set()
    for i in range(k):
        for j in range(k):
            if i == j or np.allclose(points[i], points[j]):
                continue
            a, b = points[i], points[j]
            cross = [(b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) for p in points]
            if all(c >= -1e-12 for c in cross):
                # every point left of or on a->b; keep the segment endpoints only
                on.add(i)
                on.add(j)
    # drop points lying strictly inside a hull edge (collinear, not a vertex)
    verts = set()
    for i in on:
        p = points[i]
        interior = False
        for a, b in itertools.combinations(on - {i}, 2):
            pa, pb = points[a], points[b]
            cr = (pb[0] - pa[0]) * (p[1] - pa[1]) - (pb[1] - pa[1]) * (p[0] - pa[0])
            if abs(cr) < 1e-12 and min(pa[0], pb[0]) - 1e-12 <= p[0] <= max(pa[0], pb[0]) + 1e-12 \
                    and min(pa[1], pb[1]) - 1e-12 <= p[1] <= max(pa[1], pb[1]) + 1e-12 \
                    and not np.allclose(p, pa) and not np.allclose(p, pb):
                interior = True
                break
        if not interior:
            verts.add(i)
    return verts


def brute_assignment_cost(cost: np.ndarray) -> float:
    k, m = cost.shape
    if k <= m:
        return min(sum(cost[i, p[i]] for i in range(k)) for p in itertools.permutations(range(m), k))
    return min(sum(cost[p[j], j] for j in range(m)) for p in itertools.permutations(range(k), m))


def _dist(a, b, metric):
    diff = [abs(x - y) for x, y in zip(a, b)]
    if metric == "euclidean":
        return math.sqrt(sum(v * v for v in diff))
    if metric == "manhattan":
        return sum(diff)
    if metric == "chebyshev":
        return max(diff)
    return sum(v**3 for v in diff) ** (1.0 / 3.0)


def brute_lof(refs: np.ndarray, queries: np.ndarray, k: int, metric: str) -> np.ndarray:
    """Textbook novelty LOF with neighbor ties broken by index."""
    m = len(refs)

    def neighbors(p, skip=None):
        ds = sorted((_dist(p, refs[j], metric), j) for j in range(m) if j != skip)
        return ds[:k]

    ref_nb = [neighbors(refs[i], skip=i) for i in range(m)]
    kdist = [nb[-1][0] for nb in ref_nb]

    def lrd_of(nb):
        reach = [max(kdist[j], d) for d, j in nb]
        return 1.0 / max(sum(reach) / k, 1e-12)

    lrd = [lrd_of(nb) for nb in ref_nb]
    out = []
    for q in queries:
        nb = neighbors(q)
        out.append(sum(lrd[j] for _, j in nb) / k / lrd_of(nb))
    return np.array(out)


def brute_best_f1(scores, labels):
    """Best F1 over every midpoint between consecutive distinct scores."""
    s = sorted(set(scores))
    cands = [(a + b) / 2 for a, b in zip(s, s[1:])]
    best = -1.0
    for t in cands:
        tp = sum(1 for x, y in zip(scores, labels) if x > t and y == 1)
        fp = sum(1 for x, y in zip(scores, labels) if x > t and y == 0)
        fn = sum(1 for x, y in zip(scores, labels) if x <= t and y == 1)
        f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
        best = max(best, f1)
    return best


def smooth_mae_instance(seed: int, min_margin: float = 1e-3, max_tries: int = 500):
    """A d'=4 toy MAE and masked batch whose ReLU pre-activations all sit at
    least ``min_margin`` from zero, so central differences with h=1e-4 never
    straddle a kink. Deterministic per seed."""
    from safe_ids.mae import MaeConfig, _forward, apply_masks, init_mae, make_masks

    rng = np.random.default_rng(seed)
    cfg = MaeConfig(grid_size=4, latent_dim=3, seed=seed)
    for _ in range(max_tries):
        model = init_mae(cfg)
        for name in model.params:
            model.params[name] = model.params[name] + rng.normal(0.0, 0.1, size=model.params[name].shape)
        x = rng.random((2, 4, 4))
        batch = apply_masks(x, make_masks(2, 4, 0.75, rng))
        _, _, cache = _forward(model.params, batch.masked_inputs, cfg)
        margin = min(float(np.min(np.abs(cache[z]))) for z in ("z1", "z2", "z3", "z4"))
        if margin >= min_margin:
            return model, batch
    raise RuntimeError("no smooth instance found")


def finite_difference_errors(model, batch, h: float = 1e-4, floor: float = 1e-6):
    """Per-parameter relative error |analytic - central FD| / max(|a|, |fd|, floor)."""
    from safe_ids.mae import _forward, loss_and_gradients

    def loss(params):
        recon, _, _ = _forward(params, batch.masked_inputs, model.config)
        diff = (recon - batch.originals) * batch.masks
        return float(np.sum(diff * diff) / batch.masks.sum())

    _, grads = loss_and_gradients(model, batch)
    errs = []
    for name, p in model.params.items():
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss(model.params)
            p[idx] = old - h
            down = loss(model.params)
            p[idx] = old
            fd = (up - down) / (2 * h)
            a = grads[name][idx]
            errs.append(abs(a - fd) / max(abs(a), abs(fd), floor))
    return np.array(errs)
