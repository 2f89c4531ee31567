"""Reference computations the package is checked against.

Everything here is written independently of the implementation paths it
verifies: explicit loops instead of im2col, finite differences instead of
backprop, 1-D search instead of closed-form prox, quadrature instead of
the incomplete beta continued fraction.
"""
import math

import mpmath
import numpy as np

from sparsecnn.tensor_net import CONV, FC, MAXPOOL, RELU


def loop_forward(net, x):
    """Forward pass with explicit loops, float64 throughout."""
    a = np.asarray(x, dtype=np.float64)
    for idx, layer in enumerate(net.spec.layers):
        if layer.kind == CONV:
            w = net.params[idx]["weight"].astype(np.float64)
            b = net.params[idx]["bias"].astype(np.float64)
            n, m, kh, kw = w.shape
            (pt, pb), (pl, pr) = layer.pads()
            B, C, H, W = a.shape
            padded = np.zeros((B, C, H + pt + pb, W + pl + pr))
            padded[:, :, pt:pt + H, pl:pl + W] = a
            s = layer.stride
            ho = (H + pt + pb - kh) // s + 1
            wo = (W + pl + pr - kw) // s + 1
            out = np.zeros((B, n, ho, wo))
            for bi in range(B):
                for j in range(n):
                    for y in range(ho):
                        for xx in range(wo):
                            acc = b[j]
                            for i in range(m):
                                for u in range(kh):
                                    for v in range(kw):
                                        acc += w[j, i, u, v] * padded[bi, i, y * s + u, xx * s + v]
                            out[bi, j, y, xx] = acc
            a = out
        elif layer.kind == FC:
            w = net.params[idx]["weight"].astype(np.float64)
            b = net.params[idx]["bias"].astype(np.float64)
            flat = a.reshape(a.shape[0], -1)
            out = np.zeros((a.shape[0], w.shape[0]))
            for bi in range(a.shape[0]):
                for j in range(w.shape[0]):
                    out[bi, j] = b[j] + sum(w[j, k] * flat[bi, k] for k in range(w.shape[1]))
            a = out
        elif layer.kind == RELU:
            a = np.where(a > 0, a, 0.0)
        elif layer.kind == MAXPOOL:
            k = layer.pool
            B, C, H, W = a.shape
            out = np.zeros((B, C, H // k, W // k))
            for bi in range(B):
                for c in range(C):
                    for y in range(H // k):
                        for xx in range(W // k):
                            out[bi, c, y, xx] = a[bi, c, y * k:(y + 1) * k, xx * k:(xx + 1) * k].max()
            a = out
    return a


def loop_loss(logits, labels):
    total = 0.0
    for row, y in zip(np.asarray(logits, dtype=np.float64), labels):
        mx = max(row)
        total += math.log(sum(math.exp(v - mx) for v in row)) + mx - row[y]
    return total / len(labels)


def central_difference_grads(loss_fn, net, h=1e-3):
    """Central differences of ``loss_fn(net)`` w.r.t. every parameter entry."""
    grads = {}
    for idx, p in net.params.items():
        grads[idx] = {}
        for name, arr in p.items():
            g = np.zeros(arr.shape, dtype=np.float64)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                pos = it.multi_index
                orig = arr[pos]
                arr[pos] = orig + h
                fp = loss_fn(net)
                arr[pos] = orig - h
                fm = loss_fn(net)
                arr[pos] = orig
                g[pos] = (fp - fm) / (2 * h)
            grads[idx][name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-8):
    worst = 0.0
    for idx in analytic:
        for name in analytic[idx]:
            a = np.asarray(analytic[idx][name], dtype=np.float64)
            n = numeric[idx][name]
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
            worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def golden_section(f, lo, hi, tol=1e-12, max_iter=500):
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if abs(b - a) < tol:
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return (a + b) / 2


def group_l1_objective(F, V, mu, rho):
    F = np.asarray(F, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    return mu * float(np.linalg.norm(F)) + 0.5 * rho * float(np.sum((F - V) ** 2))


def prox_l1_search(V, mu, rho, grid=2001):
    """Best value of ``mu ||F|| + rho/2 ||F - V||^2`` over ``F = t V / ||V||``, ``t >= 0``."""
    V = np.asarray(V, dtype=np.float64)
    norm = float(np.linalg.norm(V))
    if norm == 0:
        return 0.0, group_l1_objective(np.zeros_like(V), V, mu, rho)
    u = V / norm

    def obj(t):
        return group_l1_objective(t * u, V, mu, rho)

    ts = np.linspace(0.0, norm, grid)
    # coarse scan of the same objective, evaluated row-wise
    cand = ts[:, None] * u.ravel()[None, :]
    vals = mu * np.linalg.norm(cand, axis=1) + 0.5 * rho * np.sum((cand - V.ravel()) ** 2, axis=1)
    k = int(np.argmin(vals))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, grid - 1)]
    t = golden_section(obj, lo, hi)
    best_t, best = min([(t, obj(t)), (0.0, obj(0.0)), (ts[k], vals[k])], key=lambda p: p[1])
    return best_t, best


def prox_l0_brute(V, mu, rho):
    """``mu 1[F != 0] + rho/2 ||F - V||^2`` compared over ``{V, 0}``; returns the winner."""
    V = np.asarray(V, dtype=np.float64)
    keep_cost = mu * (1.0 if np.any(V != 0) else 0.0)
    zero_cost = 0.5 * rho * float(np.sum(V ** 2))
    return V.copy() if keep_cost < zero_cost else np.zeros_like(V)


def t_two_sided_p(t, df, dps=30):
    """``2 * integral_{|t|}^inf`` of the Student-t density, by quadrature."""
    with mpmath.workdps(dps):
        nu = mpmath.mpf(df)
        c = mpmath.gamma((nu + 1) / 2) / (mpmath.sqrt(nu * mpmath.pi) * mpmath.gamma(nu / 2))
        pdf = lambda x: c * (1 + x * x / nu) ** (-(nu + 1) / 2)
        tail = mpmath.quad(pdf, [abs(mpmath.mpf(t)), abs(mpmath.mpf(t)) + 10, mpmath.inf])
        return float(2 * tail)


def welch_reference(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va ** 2 / (len(a) - 1) + vb ** 2 / (len(b) - 1))
    return t, df


def loop_mac_count(spec, mask):
    """Count MACs by walking every output position and every filter tap."""
    shapes = spec.shapes()
    dense = sparse = 0
    pruned = set(mask.pruned)
    for idx in spec.param_layers():
        layer = spec.layers[idx]
        out_shape = shapes[idx + 1]
        if layer.kind == CONV:
            n, m = layer.out_size, layer.in_size
            kh, kw = layer.kernel
            for j in range(n):
                for i in range(m):
                    skip = (idx, i, j) in pruned
                    for _y in range(out_shape[1]):
                        for _x in range(out_shape[2]):
                            for _u in range(kh):
                                for _v in range(kw):
                                    dense += 1
                                    sparse += 0 if skip else 1
        else:
            for j in range(layer.out_size):
                skip = (idx, 0, j) in pruned
                for _k in range(layer.in_size):
                    dense += 1
                    sparse += 0 if skip else 1
    return dense, sparse
