"""Compiled numeric core: score forward passes, losses, and SGD updates.

One implementation serves every caller — checkpoint risk evaluation inside
the trainer, public risk functions, and the analytic gradients used by the
finite-difference checks — so recomputed risks agree bit for bit.

Parameter vectors are flat float64 in layer order.  For ``depth == 0`` the
layout is ``[w (d), b]``; for ``depth >= 1`` with hidden width ``W`` it is
``[W1 (d*W), b1 (W), {Wk (W*W), bk (W)} x (depth-1), w_out (W), b_out]``.
Hidden activations are tanh; the score output is linear.

Loss codes: 0 = clipped scaled logistic, 1 = zero-one.  The clipped logistic
is ``min(B, (B/2) * softplus(-y*s) / ln 2)``: it equals ``B/2`` at the
decision boundary, saturates at ``B`` once ``y*s <= -ln 3``, and its slope
never exceeds ``B * 3/(8 ln 2) < B``, so it is B-bounded and B-Lipschitz.
The zero-one loss counts ties (``y*s == 0``) as errors.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

LN2 = math.log(2.0)

LOSS_CLIPPED_LOGISTIC = 0
LOSS_ZERO_ONE = 1


@njit(cache=True, nogil=True, inline="always")
def _softplus(z: float) -> float:
    if z > 0.0:
        return z + math.log1p(math.exp(-z))
    return math.log1p(math.exp(z))


@njit(cache=True, nogil=True, inline="always")
def _sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def forward_scores(params, X, depth, width):
    d = X.shape[1]
    if depth == 0:
        return np.dot(X, params[:d]) + params[d]
    off = 0
    W1 = params[off : off + d * width].reshape(d, width)
    off += d * width
    b1 = params[off : off + width]
    off += width
    H = np.tanh(np.dot(X, W1) + b1)
    for _ in range(depth - 1):
        Wk = params[off : off + width * width].reshape(width, width)
        off += width * width
        bk = params[off : off + width]
        off += width
        H = np.tanh(np.dot(H, Wk) + bk)
    w_out = params[off : off + width]
    b_out = params[off + width]
    return np.dot(H, w_out) + b_out


@njit(cache=True, nogil=True)
def loss_values(y, s, kind, bound):
    n = y.shape[0]
    out = np.empty(n)
    if kind == LOSS_CLIPPED_LOGISTIC:
        c = 0.5 * bound / LN2
        for i in range(n):
            v = c * _softplus(-y[i] * s[i])
            out[i] = bound if v >= bound else v
    else:
        for i in range(n):
            out[i] = bound if y[i] * s[i] <= 0.0 else 0.0
    return out


@njit(cache=True, nogil=True)
def risk_of(params, X, y, depth, width, kind, bound):
    s = forward_scores(params, X, depth, width)
    n = y.shape[0]
    total = 0.0
    if kind == LOSS_CLIPPED_LOGISTIC:
        c = 0.5 * bound / LN2
        for i in range(n):
            v = c * _softplus(-y[i] * s[i])
            total += bound if v >= bound else v
    else:
        for i in range(n):
            if y[i] * s[i] <= 0.0:
                total += bound
    return total / n


@njit(cache=True, nogil=True)
def _batch_grad(params, Xb, yb, depth, width, bound, gout):
    """Mean clipped-logistic risk on the batch; gradient written to ``gout``."""
    b, d = Xb.shape
    inv = 1.0 / b
    c = 0.5 * bound / LN2

    if depth == 0:
        s = np.dot(Xb, params[:d]) + params[d]
        dls = np.empty(b)
        risk = 0.0
        for i in range(b):
            z = -yb[i] * s[i]
            v = c * _softplus(z)
            if v >= bound:
                risk += bound
                dls[i] = 0.0
            else:
                risk += v
                dls[i] = -yb[i] * c * _sigmoid(z) * inv
        gout[:d] = np.dot(dls, Xb)
        gout[d] = dls.sum()
        return risk * inv

    off = 0
    W1 = params[off : off + d * width].reshape(d, width)
    o_W1 = off
    off += d * width
    b1 = params[off : off + width]
    o_b1 = off
    off += width
    A1 = np.tanh(np.dot(Xb, W1) + b1)

    A2 = A1
    o_W2 = o_b2 = 0
    if depth >= 2:
        W2 = params[off : off + width * width].reshape(width, width)
        o_W2 = off
        off += width * width
        b2 = params[off : off + width]
        o_b2 = off
        off += width
        A2 = np.tanh(np.dot(A1, W2) + b2)
    else:
        W2 = W1  # placeholder, unused

    A3 = A2
    o_W3 = o_b3 = 0
    if depth >= 3:
        W3 = params[off : off + width * width].reshape(width, width)
        o_W3 = off
        off += width * width
        b3 = params[off : off + width]
        o_b3 = off
        off += width
        A3 = np.tanh(np.dot(A2, W3) + b3)
    else:
        W3 = W1  # placeholder, unused

    w_out = params[off : off + width]
    o_wout = off
    o_bout = off + width
    s = np.dot(A3, w_out) + params[o_bout]

    dls = np.empty(b)
    risk = 0.0
    for i in range(b):
        z = -yb[i] * s[i]
        v = c * _softplus(z)
        if v >= bound:
            risk += bound
            dls[i] = 0.0
        else:
            risk += v
            dls[i] = -yb[i] * c * _sigmoid(z) * inv

    gout[o_wout : o_wout + width] = np.dot(dls, A3)
    gout[o_bout] = dls.sum()
    dA = np.outer(dls, w_out)

    if depth >= 3:
        dZ = dA * (1.0 - A3 * A3)
        gW = gout[o_W3 : o_W3 + width * width].reshape(width, width)
        np.dot(A2.T, dZ, gW)
        for j in range(width):
            acc = 0.0
            for i in range(b):
                acc += dZ[i, j]
            gout[o_b3 + j] = acc
        dA = np.dot(dZ, W3.T)

    if depth >= 2:
        dZ = dA * (1.0 - A2 * A2)
        gW = gout[o_W2 : o_W2 + width * width].reshape(width, width)
        np.dot(A1.T, dZ, gW)
        for j in range(width):
            acc = 0.0
            for i in range(b):
                acc += dZ[i, j]
            gout[o_b2 + j] = acc
        dA = np.dot(dZ, W2.T)

    dZ = dA * (1.0 - A1 * A1)
    gW = gout[o_W1 : o_W1 + d * width].reshape(d, width)
    np.dot(Xb.T, dZ, gW)
    for j in range(width):
        acc = 0.0
        for i in range(b):
            acc += dZ[i, j]
        gout[o_b1 + j] = acc
    return risk * inv


@njit(cache=True, nogil=True)
def objective_grad(params, X, y, depth, width, bound):
    """Full-batch clipped-logistic objective and its analytic gradient."""
    gout = np.empty_like(params)
    risk = _batch_grad(params, X, y, depth, width, bound, gout)
    return risk, gout


@njit(cache=True, nogil=True)
def sgd_segment(params, X, y, order, step_lo, step_hi, batch, lr, depth, width, bound):
    """Run SGD steps ``[step_lo, step_hi)`` of one shuffled epoch in place."""
    m = order.shape[0]
    d = X.shape[1]
    gout = np.empty_like(params)
    for k in range(step_lo, step_hi):
        i0 = k * batch
        i1 = min(i0 + batch, m)
        nb = i1 - i0
        Xb = np.empty((nb, d))
        yb = np.empty(nb)
        for j in range(nb):
            r = order[i0 + j]
            for col in range(d):
                Xb[j, col] = X[r, col]
            yb[j] = y[r]
        _batch_grad(params, Xb, yb, depth, width, bound, gout)
        for t in range(params.shape[0]):
            params[t] -= lr * gout[t]
