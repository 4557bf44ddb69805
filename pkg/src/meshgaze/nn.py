"""Minimal numpy layers with hand-written reverse-mode gradients.

Every forward returns (out, cache); the matching backward consumes the
upstream gradient and the cache. All math is float64; parameters live in
plain dicts keyed by name so optimizers, checkpoints, and gradient checks
can iterate them in a fixed order.
"""

from __future__ import annotations

import numpy as np

BN_EPS = 1e-5


def init_uniform(rng, fan_in, shape):
    """Uniform in +-1/sqrt(fan_in)."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


# --- linear -------------------------------------------------------------

def linear_fwd(x, w, b=None):
    out = x @ w
    if b is not None:
        out = out + b
    return out, (x, w, b is not None)


def linear_bwd(dout, cache):
    x, w, has_b = cache
    dx = dout @ w.T
    dw = x.T @ dout
    db = dout.sum(axis=0) if has_b else None
    return dx, dw, db


# --- activations ----------------------------------------------------------

def relu_fwd(x):
    return np.maximum(x, 0.0), (x > 0.0)


def relu_bwd(dout, mask):
    return dout * mask


def tanh_fwd(x):
    out = np.tanh(x)
    return out, out


def tanh_bwd(dout, out):
    return dout * (1.0 - out * out)


def sigmoid_fwd(x):
    out = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                   np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    return out, out


def sigmoid_bwd(dout, out):
    return dout * out * (1.0 - out)


def softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_bwd(dout, probs):
    # dz = p * (dout - sum(dout * p))
    dot = (dout * probs).sum(axis=-1, keepdims=True)
    return probs * (dout - dot)


# --- batch-style normalization over the point dimension -------------------

def bn_fwd_train(x, gamma, beta, eps=BN_EPS):
    """Per-channel statistics over the m points of one mesh.

    Returns (out, cache, batch_mean, batch_var); the caller owns the
    running-statistic update.
    """
    mu = x.mean(axis=0)
    var = x.var(axis=0)  # population
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    out = gamma * xhat + beta
    return out, (xhat, inv, gamma), mu, var


def bn_bwd(dout, cache):
    xhat, inv, gamma = cache
    m = xhat.shape[0]
    dxhat = dout * gamma
    dgamma = (dout * xhat).sum(axis=0)
    dbeta = dout.sum(axis=0)
    dx = inv * (dxhat - dxhat.mean(axis=0) - xhat * (dxhat * xhat).sum(axis=0) / m)
    return dx, dgamma, dbeta


def bn_fwd_eval(x, gamma, beta, run_mean, run_var, eps=BN_EPS):
    return gamma * (x - run_mean) / np.sqrt(run_var + eps) + beta


# --- neighborhood max pooling ---------------------------------------------

def maxpool_fwd(x, neighbors):
    """Row-wise max over x[neighbors[i]] for each point i.

    neighbors: (m, k) integer indices into the rows of x.
    """
    gathered = x[neighbors]                       # (m, k, c)
    arg = gathered.argmax(axis=1)                 # (m, c)
    out = np.take_along_axis(gathered, arg[:, None, :], axis=1)[:, 0, :]
    return out, (arg, neighbors, x.shape)


def maxpool_bwd(dout, cache):
    arg, neighbors, shape = cache
    dx = np.zeros(shape)
    m, c = dout.shape
    rows = np.take_along_axis(neighbors, arg, axis=1)  # winning source row per (i, ch)
    cols = np.broadcast_to(np.arange(c), (m, c))
    np.add.at(dx, (rows.ravel(), cols.ravel()), dout.ravel())
    return dx


# --- multi-head attention ---------------------------------------------------

def attention_fwd(hq, hkv, wq, wk, wv, wo, n_heads):
    """softmax(Q Kt / sqrt(dk)) V per head, concatenated, projected by wo."""
    m, d = hq.shape
    dk = d // n_heads
    q = hq @ wq
    k = hkv @ wk
    v = hkv @ wv
    heads = []
    per_head = []
    scale = 1.0 / np.sqrt(dk)
    for h in range(n_heads):
        sl = slice(h * dk, (h + 1) * dk)
        z = q[:, sl] @ k[:, sl].T * scale
        a = softmax_rows(z)
        heads.append(a @ v[:, sl])
        per_head.append(a)
    concat = np.concatenate(heads, axis=1)
    out = concat @ wo
    cache = (hq, hkv, q, k, v, per_head, concat, wq, wk, wv, wo, n_heads)
    return out, cache


def attention_bwd(dout, cache):
    hq, hkv, q, k, v, per_head, concat, wq, wk, wv, wo, n_heads = cache
    m, d = hq.shape
    dk = d // n_heads
    scale = 1.0 / np.sqrt(dk)

    dwo = concat.T @ dout
    dconcat = dout @ wo.T
    dq = np.zeros_like(q)
    dkm = np.zeros_like(k)
    dv = np.zeros_like(v)
    for h in range(n_heads):
        sl = slice(h * dk, (h + 1) * dk)
        a = per_head[h]
        dhead = dconcat[:, sl]
        da = dhead @ v[:, sl].T
        dv[:, sl] = a.T @ dhead
        dz = softmax_rows_bwd(da, a)
        dq[:, sl] = dz @ k[:, sl] * scale
        dkm[:, sl] = dz.T @ q[:, sl] * scale

    dhq = dq @ wq.T
    dhkv = dkm @ wk.T + dv @ wv.T
    dwq = hq.T @ dq
    dwk = hkv.T @ dkm
    dwv = hkv.T @ dv
    return dhq, dhkv, {"wq": dwq, "wk": dwk, "wv": dwv, "wo": dwo}


# --- optimizer ---------------------------------------------------------------

class AdamW:
    """Adaptive moments with decoupled weight decay."""

    def __init__(self, param_names, lr=1e-4, weight_decay=1e-4,
                 beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: None for n in param_names}
        self.v = {n: None for n in param_names}

    def step(self, params, grads):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name in self.m:
            g = grads[name]
            if self.m[name] is None:
                self.m[name] = np.zeros_like(params[name])
                self.v[name] = np.zeros_like(params[name])
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            mhat = self.m[name] / b1c
            vhat = self.v[name] / b2c
            params[name] = (params[name]
                            - self.lr * mhat / (np.sqrt(vhat) + self.eps)
                            - self.lr * self.weight_decay * params[name])
        return params
