"""Independent oracles shared across the test modules.

These deliberately avoid the package's im2col/matmul path: convolution is
re-done with explicit window loops, FLOPs by literal per-tap enumeration.
"""

import numpy as np


def naive_conv2d(x, w, b=None, stride=1, padding=1, groups=1):
    """Six explicit loops; use only on tiny shapes."""
    n, cin, h, wdt = x.shape
    cout, cin_g, k, _ = w.shape
    og = cout // groups
    hout = (h + 2 * padding - k) // stride + 1
    wout = (wdt + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, hout, wout), dtype=x.dtype)
    for ni in range(n):
        for co in range(cout):
            g = co // og
            for oy in range(hout):
                for ox in range(wout):
                    acc = 0.0
                    for ci in range(cin_g):
                        for i in range(k):
                            for j in range(k):
                                acc += w[co, ci, i, j] * xp[ni, g * cin_g + ci,
                                                            oy * stride + i,
                                                            ox * stride + j]
                    out[ni, co, oy, ox] = acc + (0.0 if b is None else b[co])
    return out


def loop_conv2d(x, w, b=None, stride=1, padding=0, groups=1):
    """Quadruple loop over output coordinates with a vectorized window MAC;
    summation order within a window matches the naive oracle."""
    n, cin, h, wdt = x.shape
    cout, cin_g, k, _ = w.shape
    og = cout // groups
    hout = (h + 2 * padding - k) // stride + 1
    wout = (wdt + 2 * padding - k) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((n, cout, hout, wout), dtype=x.dtype)
    for ni in range(n):
        for co in range(cout):
            g = co // og
            chans = slice(g * cin_g, (g + 1) * cin_g)
            for oy in range(hout):
                for ox in range(wout):
                    win = xp[ni, chans, oy * stride:oy * stride + k,
                             ox * stride:ox * stride + k]
                    out[ni, co, oy, ox] = np.sum(win * w[co]) + (
                        0.0 if b is None else b[co])
    return out


def enumerate_conv_macs(cout, cin_g, k, hout, wout):
    """Literal per-output-element multiply-accumulate count."""
    count = 0
    for _ in range(cout):
        for _ in range(hout):
            for _ in range(wout):
                count += cin_g * k * k
    return count
