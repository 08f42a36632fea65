"""Brute-force reference computations written with plain Python loops.

These deliberately share no code with the vectorized paths they check.
"""

from __future__ import annotations

import math


def weighted_mean_oracle(values, weights):
    """Elementwise ``sum_i w_i v_i / sum_i w_i`` over nested lists of floats."""
    total = math.fsum(weights)
    if total <= 0:
        raise ValueError("weights sum to zero")

    def rec(items):
        if isinstance(items[0], list):
            return [rec([it[k] for it in items]) for k in range(len(items[0]))]
        return math.fsum(w * v for w, v in zip(weights, items)) / total

    return rec([v for v in values])


def aggregate_oracle(prev_down, prev_up, updates, entries):
    """Layer-wise aggregation by explicit loops.

    ``prev_down[j]``/``prev_up[j]`` are nested lists, ``updates`` is a list of
    ``(n_samples, {layer: (down, up)})`` and ``entries[i][j]`` the allocation.
    Layers with no clients keep the previous value.
    """
    L = len(prev_down)
    down_out, up_out = [], []
    for j in range(L):
        rows = [i for i in range(len(updates)) if entries[i][j]]
        if not rows:
            down_out.append(prev_down[j])
            up_out.append(prev_up[j])
            continue
        w = [float(updates[i][0]) for i in rows]
        down_out.append(weighted_mean_oracle([updates[i][1][j][0] for i in rows], w))
        up_out.append(weighted_mean_oracle([updates[i][1][j][1] for i in rows], w))
    return down_out, up_out


def matvec(W, x):
    return [math.fsum(W[r][c] * x[c] for c in range(len(x))) for r in range(len(W))]


def forward_oracle(x, input_w, input_b, blocks, head_w, head_b, act="relu"):
    """Logits for one input vector; ``blocks`` is a list of (W, b, D, U, s) in order."""
    f = (lambda z: max(z, 0.0)) if act == "relu" else math.tanh
    h = [v + b for v, b in zip(matvec(input_w, x), input_b)]
    for W, b, D, U, s in blocks:
        low = matvec(D, h)
        delta = matvec(U, low)
        base = matvec(W, h)
        h = [h[k] + f(base[k] + s * delta[k] + b[k]) for k in range(len(h))]
    return [v + b for v, b in zip(matvec(head_w, h), head_b)]
