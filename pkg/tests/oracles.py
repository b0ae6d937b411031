"""Independent reference implementations used as test oracles."""

import numpy as np


def conv_oracle(x, w, b, stride, pad):
    """Direct-loop cross-correlation."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b_ in range(n):
        for o in range(cout):
            for i in range(ho):
                for j in range(wo):
                    acc = 0.0
                    for c in range(cin):
                        for u in range(kh):
                            for v in range(kw):
                                acc += xp[b_, c, i * stride + u, j * stride + v] * w[o, c, u, v]
                    out[b_, o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def reference_kernel(x, a=-0.5):
    x = abs(x)
    if x <= 1:
        return (a + 2) * x**3 - (a + 3) * x**2 + 1
    if x < 2:
        return a * x**3 - 5 * a * x**2 + 8 * a * x - 4 * a
    return 0.0


def dense_resample_matrix(n, s):
    """Row i holds the normalized weights of output pixel i over all n inputs, reflections folded in."""
    m = np.zeros((n // s, n))
    for i in range(n // s):
        centre = (i + 0.5) * s - 0.5
        row = np.zeros(n)
        for j in range(int(np.floor(centre - 2 * s)) - 1, int(np.ceil(centre + 2 * s)) + 2):
            wgt = reference_kernel((centre - j) / s) / s
            jj = j
            while jj < 0 or jj >= n:
                jj = -jj - 1 if jj < 0 else 2 * n - 1 - jj
            row[jj] += wgt
        m[i] = row / row.sum()
    return m


def dense_downsample(img, s):
    mh = dense_resample_matrix(img.shape[-2], s)
    mw = dense_resample_matrix(img.shape[-1], s)
    return np.einsum("oh,chw,pw->cop", mh, img, mw)
