"""Pure-numpy residual-stack kernels.

Reference implementation of the two hot routines used during local training
and evaluation. ``fedra._kernels`` (Cython) exposes the same signatures; see
``fedra.kernels`` for backend selection.

Array layout (all float64, C-contiguous):

    H0      (B, d)      projected inputs
    W       (k, d, d)   frozen block weights, row = output unit
    b       (k, d)      frozen block biases
    D       (k, r, d)   adapter down factors
    U       (k, d, r)   adapter up factors
    scale   (k,)        adapter scales
    Wh      (C, d)      head weight
    bh      (C,)        head bias
    labels  (B,)        intp class indices
"""

import numpy as np

RELU = 0
TANH = 1


def _act(z, act):
    if act == RELU:
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _act_grad_from_output(a, act):
    if act == RELU:
        return (a > 0.0).astype(np.float64)
    return 1.0 - a * a


def forward_features(H0, W, b, D, U, scale, act):
    """Return the residual-stack output for a batch; blocks applied in array order."""
    H = np.array(H0, dtype=np.float64, copy=True)
    for j in range(W.shape[0]):
        Z = H @ W[j].T + b[j]
        Z += scale[j] * ((H @ D[j].T) @ U[j].T)
        H += _act(Z, act)
    return H


def forward_logits(H0, W, b, D, U, scale, act, Wh, bh):
    H = forward_features(H0, W, b, D, U, scale, act)
    return H @ Wh.T + bh


def forward_backward(H0, W, b, D, U, scale, act, Wh, bh, labels, gD, gU, gWh, gbh):
    """Mean cross-entropy over the batch; gradients are written into gD, gU, gWh, gbh."""
    k = W.shape[0]
    B = H0.shape[0]
    if B == 0:
        raise ValueError("empty batch")
    C = Wh.shape[0]
    bad = (labels < 0) | (labels >= C)
    if np.any(bad):
        raise IndexError(f"label {labels[np.argmax(bad)]} out of range for {C} classes")
    Hs = [np.array(H0, dtype=np.float64, copy=True)]
    Ps = []
    As = []
    H = Hs[0]
    for j in range(k):
        P = H @ D[j].T
        Z = H @ W[j].T + b[j]
        Z += scale[j] * (P @ U[j].T)
        A = _act(Z, act)
        H = H + A
        Ps.append(P)
        As.append(A)
        Hs.append(H)

    logits = H @ Wh.T + bh
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(B)
    loss = float(np.mean(lse - shifted[rows, labels]))

    G = np.exp(shifted - lse[:, None])
    G[rows, labels] -= 1.0
    G /= B
    gWh[...] = G.T @ H
    gbh[...] = G.sum(axis=0)
    dH = G @ Wh
    for j in range(k - 1, -1, -1):
        dZ = dH * _act_grad_from_output(As[j], act)
        s = scale[j]
        gU[j] = s * (dZ.T @ Ps[j])
        dP = s * (dZ @ U[j])
        gD[j] = dP.T @ Hs[j]
        dH = dH + dZ @ W[j] + dP @ D[j]
    return loss
