"""Independent reference implementations used only by the tests.

These are deliberately naive: scalar math and explicit loops, written
from the model definitions rather than from the package code.
"""
import math

import numpy as np


def ward_scalar(rho_d, rho_s, alpha, wi, wo, n):
    """Ward BRDF for one channel and one direction pair, plain floats."""
    dot = lambda a, b: a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    cos_i, cos_o = dot(wi, n), dot(wo, n)
    if cos_i <= 0 or cos_o <= 0:
        return 0.0
    h = [wi[k] + wo[k] for k in range(3)]
    norm = math.sqrt(dot(h, h))
    h = [c / norm for c in h]
    cos_d = dot(h, n)
    cos2 = cos_d * cos_d
    tan2 = (1.0 - cos2) / max(cos2, 1e-12)
    spec = rho_s * math.exp(-tan2 / (alpha * alpha)) / (4.0 * math.pi * alpha * alpha * math.sqrt(cos_i * cos_o))
    return rho_d / math.pi + spec


def texel_cosine_integral(height, i, j, n, sub=64):
    """Integral of max(w . n, 0) over texel (i, j) by a fine midpoint rule."""
    width = 2 * height
    t0, t1 = i * math.pi / height, (i + 1) * math.pi / height
    p0, p1 = j * 2 * math.pi / width, (j + 1) * 2 * math.pi / width
    total = 0.0
    dt, dp = (t1 - t0) / sub, (p1 - p0) / sub
    for a in range(sub):
        t = t0 + (a + 0.5) * dt
        st, ct = math.sin(t), math.cos(t)
        for b in range(sub):
            p = p0 + (b + 0.5) * dp
            w = (st * math.cos(p), st * math.sin(p), ct)
            c = w[0] * n[0] + w[1] * n[1] + w[2] * n[2]
            if c > 0:
                total += c * st * dt * dp
    return total


def conv2d_loop(x, w, b):
    """Stride-1 same-padded convolution (cross-correlation) with explicit loops."""
    n, c, h, wd = x.shape
    o, _, k, _ = w.shape
    p = k // 2
    xp = np.zeros((n, c, h + 2 * p, wd + 2 * p))
    xp[:, :, p : p + h, p : p + wd] = x
    out = np.zeros((n, o, h, wd))
    for bi in range(n):
        for oc in range(o):
            for r in range(h):
                for s in range(wd):
                    acc = b[oc]
                    for ic in range(c):
                        for u in range(k):
                            for v in range(k):
                                acc += w[oc, ic, u, v] * xp[bi, ic, r + u, s + v]
                    out[bi, oc, r, s] = acc
    return out


def maxpool_loop(x, size):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // size, w // size))
    for bi in range(n):
        for ch in range(c):
            for r in range(h // size):
                for s in range(w // size):
                    out[bi, ch, r, s] = x[bi, ch, r * size : (r + 1) * size, s * size : (s + 1) * size].max()
    return out


def dense_loop(x, w, b):
    out = np.zeros((x.shape[0], w.shape[1]))
    for i in range(x.shape[0]):
        for j in range(w.shape[1]):
            out[i, j] = b[j] + sum(x[i, k] * w[k, j] for k in range(w.shape[0]))
    return out
