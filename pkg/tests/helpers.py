"""Independent oracles shared by the unit and acceptance suites."""

import itertools
import math

import numpy as np

from wearagen.model import backward, forward
from wearagen.train import task_losses


def loss_and_grads(windows, params, config, weights, training=False, seed=None):
    rng = None if seed is None else np.random.default_rng(seed)
    out = forward(windows, params, config, training=training, rng=rng)
    losses, dl = task_losses(out.logits, windows)
    dlogits = np.einsum("c,btcn->btcn", weights, dl)
    return float(weights @ losses), backward(out, dlogits, params, config)


def finite_difference_grads(windows, params, config, weights, h=1e-4, training=False, seed=None):
    """Analytic gradients and central differences for every scalar parameter."""
    _, grads = loss_and_grads(windows, params, config, weights, training, seed)
    fds = {}
    for name, p in params.items():
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up, _ = loss_and_grads(windows, params, config, weights, training, seed)
            p[idx] = orig - h
            down, _ = loss_and_grads(windows, params, config, weights, training, seed)
            p[idx] = orig
            fd[idx] = (up - down) / (2 * h)
        fds[name] = fd
    return grads, fds


def relative_errors(grads, fds):
    """Per-tensor ``|g - fd|_2 / (|g|_2 + |fd|_2)``."""
    out = {}
    for name, g in grads.items():
        fd = fds[name]
        denom = max(np.linalg.norm(g) + np.linalg.norm(fd), 1e-12)
        out[name] = float(np.linalg.norm(g - fd) / denom)
    return out


def finite_difference_check(windows, params, config, weights, h=1e-4, training=False, seed=None):
    return relative_errors(*finite_difference_grads(windows, params, config, weights, h, training, seed))


def naive_causal_attention(q, k, v):
    """Double-loop scaled dot-product attention restricted to s <= t."""
    n, d = q.shape
    out = np.zeros_like(v, dtype=np.float64)
    for t in range(n):
        scores = [sum(q[t, i] * k[s, i] for i in range(d)) / math.sqrt(d) for s in range(t + 1)]
        m = max(scores)
        w = [math.exp(x - m) for x in scores]
        z = math.fsum(w)
        for s in range(t + 1):
            out[t] += (w[s] / z) * v[s]
    return out


def _alignments(n, m):
    # every monotone path from (0, 0) to (n-1, m-1) with unit steps
    def rec(i, j, path):
        if (i, j) == (n - 1, m - 1):
            yield path
            return
        for di, dj in ((1, 0), (0, 1), (1, 1)):
            a, b = i + di, j + dj
            if a < n and b < m:
                yield from rec(a, b, path + [(a, b)])
    yield from rec(0, 0, [(0, 0)])


def brute_force_dtw(x, y):
    """Minimum over all monotone alignments of the summed absolute cost."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    best = math.inf
    for path in _alignments(len(x), len(y)):
        cost = 0.0
        for i, j in path:
            cost += abs(x[i] - y[j])
        best = min(best, cost)
    return best


def count_alignments(n, m):
    return sum(1 for _ in _alignments(n, m))


def all_pairs(n):
    return list(itertools.combinations(range(n), 2))
