"""Independent plain-numpy reference implementations used by several test modules."""

import numpy as np


def silu(x):
    return x / (1.0 + np.exp(-x))


def memory_mlp(params, x):
    w1, b1, w2, b2 = params
    return silu(x @ w1 + b1) @ w2 + b2


def assoc_grad(params, k, v):
    """Gradient of mean_n ||M(k_n) - v_n||^2, by the chain rule written out longhand."""
    w1, b1, w2, b2 = params
    n = k.shape[0]
    z = k @ w1 + b1
    sig = 1.0 / (1.0 + np.exp(-z))
    a = z * sig
    err = a @ w2 + b2 - v
    d_out = 2.0 * err / n
    g_w2 = a.T @ d_out
    g_b2 = d_out.sum(0, keepdims=True)
    d_a = d_out @ w2.T
    d_z = d_a * (sig + z * sig * (1.0 - sig))
    return [k.T @ d_z, d_z.sum(0, keepdims=True), g_w2, g_b2]


def memory_recurrence(params, xs, w_k, w_v, theta, eta, alpha):
    """Explicit per-step momentum/forgetting loop; returns the parameter list after every step."""
    params = [p.copy() for p in params]
    mom = [np.zeros_like(p) for p in params]
    history = []
    for x in xs:
        grads = assoc_grad(params, x @ w_k, x @ w_v)
        for i in range(4):
            mom[i] = eta * mom[i] - theta * grads[i]
            params[i] = (1.0 - alpha) * params[i] + mom[i]
        history.append([p.copy() for p in params])
    return history
