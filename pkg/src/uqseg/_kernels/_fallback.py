"""Pure numpy implementations of the hot kernels.

Same contract as the compiled core (``_core``): 3x3 convolution with replicate
padding, 2x2 max pooling, 2x nearest upsampling, and the per-row lower-envelope
pass of the exact squared Euclidean distance transform. All arrays are float64;
convolution inputs are (N, C, H, W).
"""

import numpy as np

BACKEND = "numpy"

_INF = 1e15


def _im2col(x):
    n, cin, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    cols = np.empty((n, cin, 9, h, w), dtype=np.float64)
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[:, :, k] = xp[:, :, dy : dy + h, dx : dx + w]
            k += 1
    return cols.reshape(n, cin * 9, h * w)


def conv3x3_fwd(x, w, b):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    cols = _im2col(x)
    y = np.matmul(w.reshape(cout, cin * 9), cols)
    y += b[:, None]
    return np.ascontiguousarray(y.reshape(n, cout, h, wd))


def conv3x3_bwd(x, w, gy):
    n, cin, h, wd = x.shape
    cout = w.shape[0]
    cols = _im2col(x)
    gyf = gy.reshape(n, cout, h * wd)
    gb = gyf.sum(axis=(0, 2))
    gw = np.matmul(gyf, cols.transpose(0, 2, 1)).sum(axis=0).reshape(cout, cin, 3, 3)
    gcols = np.matmul(w.reshape(cout, cin * 9).T, gyf).reshape(n, cin, 9, h, wd)
    gxp = np.zeros((n, cin, h + 2, wd + 2), dtype=np.float64)
    k = 0
    for dy in range(3):
        for dx in range(3):
            gxp[:, :, dy : dy + h, dx : dx + wd] += gcols[:, :, k]
            k += 1
    # adjoint of replicate padding: fold the pad ring back onto the border
    gx = gxp[:, :, 1:-1, 1:-1].copy()
    gx[:, :, 0, :] += gxp[:, :, 0, 1:-1]
    gx[:, :, -1, :] += gxp[:, :, -1, 1:-1]
    gx[:, :, :, 0] += gxp[:, :, 1:-1, 0]
    gx[:, :, :, -1] += gxp[:, :, 1:-1, -1]
    gx[:, :, 0, 0] += gxp[:, :, 0, 0]
    gx[:, :, 0, -1] += gxp[:, :, 0, -1]
    gx[:, :, -1, 0] += gxp[:, :, -1, 0]
    gx[:, :, -1, -1] += gxp[:, :, -1, -1]
    return gx, gw, gb


def maxpool2_fwd(x):
    n, c, h, w = x.shape
    xr = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    xr = np.ascontiguousarray(xr).reshape(n, c, h // 2, w // 2, 4)
    idx = xr.argmax(axis=4)  # ties resolve to scan order, deterministically
    y = np.take_along_axis(xr, idx[..., None], axis=4)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.int8)


def maxpool2_bwd(idx, gy):
    n, c, hh, ww = gy.shape
    g4 = np.zeros((n, c, hh, ww, 4), dtype=np.float64)
    np.put_along_axis(g4, idx[..., None].astype(np.int64), gy[..., None], axis=4)
    gx = g4.reshape(n, c, hh, ww, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return np.ascontiguousarray(gx).reshape(n, c, hh * 2, ww * 2)


def upsample2_fwd(x):
    return np.ascontiguousarray(x.repeat(2, axis=2).repeat(2, axis=3))


def upsample2_bwd(gy):
    n, c, h, w = gy.shape
    return gy.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def edt_sq_pass(f):
    """Lower-envelope pass along each row of squared-distance seeds.

    ``f[r, q]`` is the squared distance cost of using column q as a site; the
    output is ``min_p (q - p)^2 + f[r, p]`` per row, the exact 1D transform.
    """
    h, w = f.shape
    out = np.empty_like(f)
    v = np.zeros(w, dtype=np.intp)
    z = np.empty(w + 1, dtype=np.float64)
    for r in range(h):
        row = f[r]
        k = 0
        v[0] = 0
        z[0] = -_INF
        z[1] = _INF
        for q in range(1, w):
            fq = row[q] + q * q
            while True:
                p = v[k]
                s = (fq - (row[p] + p * p)) / (2.0 * q - 2.0 * p)
                if s <= z[k]:
                    k -= 1
                else:
                    break
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = _INF
        k = 0
        for q in range(w):
            while z[k + 1] < q:
                k += 1
            p = v[k]
            out[r, q] = (q - p) * (q - p) + row[p]
    return out
