"""Hot numeric kernels with numba-compiled and pure-numpy implementations.

The numba path is used by default when numba imports cleanly; set
DIFFROUTER_NO_NUMBA=1 to force the numpy fallback. Both paths compute the
same floating-point operations so results are interchangeable.
`benchmarks/bench_kernels.py` compares the two.
"""

import os

import numpy as np


def _silu_np(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return z * s


def _silu_grad_np(z):
    s = 1.0 / (1.0 + np.exp(-z))
    return s * (1.0 + z * (1.0 - s))


def _affine_np(h, w, b):
    return h @ w.T + b


def _adamw_update_np(p, g, m, v, lr, b1, b2, eps, wd, step):
    m[:] = b1 * m + (1.0 - b1) * g
    v[:] = b2 * v + (1.0 - b2) * g * g
    mhat = m / (1.0 - b1**step)
    vhat = v / (1.0 - b2**step)
    p -= lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)


def _mmd_terms_np(a, b, gamma):
    """Unbiased MMD^2 kernel sums: (sum_xx, sum_yy, sum_xy) with RBF kernel
    exp(-gamma * ||.||^2); diagonal excluded from the same-set sums."""
    d_aa = np.sum((a[:, None, :] - a[None, :, :]) ** 2, axis=-1)
    d_bb = np.sum((b[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    d_ab = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
    k_aa = np.exp(-gamma * d_aa)
    k_bb = np.exp(-gamma * d_bb)
    np.fill_diagonal(k_aa, 0.0)
    np.fill_diagonal(k_bb, 0.0)
    return float(k_aa.sum()), float(k_bb.sum()), float(np.exp(-gamma * d_ab).sum())


_DISABLED = os.environ.get("DIFFROUTER_NO_NUMBA", "0") not in ("0", "")

if not _DISABLED:
    try:
        from numba import njit

        _silu_nb = njit(cache=True, fastmath=False)(_silu_np)
        _silu_grad_nb = njit(cache=True, fastmath=False)(_silu_grad_np)

        @njit(cache=True)
        def _affine_nb(h, w, b):
            out = h @ w.T
            return out + b

        @njit(cache=True)
        def _adamw_update_nb(p, g, m, v, lr, b1, b2, eps, wd, step):
            n = p.size
            pf = p.reshape(n)
            gf = g.reshape(n)
            mf = m.reshape(n)
            vf = v.reshape(n)
            c1 = 1.0 - b1**step
            c2 = 1.0 - b2**step
            for i in range(n):
                mf[i] = b1 * mf[i] + (1.0 - b1) * gf[i]
                vf[i] = b2 * vf[i] + (1.0 - b2) * gf[i] * gf[i]
                mhat = mf[i] / c1
                vhat = vf[i] / c2
                pf[i] -= lr * (mhat / (np.sqrt(vhat) + eps) + wd * pf[i])

        @njit(cache=True)
        def _mmd_terms_nb(a, b, gamma):
            na, nb, d = a.shape[0], b.shape[0], a.shape[1]
            s_aa = 0.0
            s_bb = 0.0
            s_ab = 0.0
            for i in range(na):
                for j in range(na):
                    if i == j:
                        continue
                    acc = 0.0
                    for k in range(d):
                        diff = a[i, k] - a[j, k]
                        acc += diff * diff
                    s_aa += np.exp(-gamma * acc)
            for i in range(nb):
                for j in range(nb):
                    if i == j:
                        continue
                    acc = 0.0
                    for k in range(d):
                        diff = b[i, k] - b[j, k]
                        acc += diff * diff
                    s_bb += np.exp(-gamma * acc)
            for i in range(na):
                for j in range(nb):
                    acc = 0.0
                    for k in range(d):
                        diff = a[i, k] - b[j, k]
                        acc += diff * diff
                    s_ab += np.exp(-gamma * acc)
            return s_aa, s_bb, s_ab

        USING_NUMBA = True
    except ImportError:  # pragma: no cover - exercised via env flag instead
        USING_NUMBA = False
else:
    USING_NUMBA = False

if USING_NUMBA:
    silu = _silu_nb
    silu_grad = _silu_grad_nb
    affine = _affine_nb
    adamw_update = _adamw_update_nb
    _mmd_terms = _mmd_terms_nb
else:
    silu = _silu_np
    silu_grad = _silu_grad_np
    affine = _affine_np
    adamw_update = _adamw_update_np
    _mmd_terms = _mmd_terms_np
