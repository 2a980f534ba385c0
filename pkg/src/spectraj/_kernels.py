"""Hot numeric kernels.

Each kernel has a numba-compiled implementation and a pure-numpy one with the
same rotation order. ``SPECTRAJ_DISABLE_NUMBA=1`` (read at import time) forces
the numpy path; it is also used when numba is not importable.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        def decorator(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return decorator


def _env_disabled() -> bool:
    return os.environ.get("SPECTRAJ_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


USE_NUMBA = NUMBA_AVAILABLE and not _env_disabled()

# Rotations are skipped for off-diagonal entries at or below this magnitude.
_SKIP = 1e-300


def _rotation(app: float, aqq: float, apq: float) -> tuple[float, float, float]:
    theta = (aqq - app) / (2.0 * apq)
    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
    if theta < 0.0:
        t = -t
    c = 1.0 / math.sqrt(t * t + 1.0)
    return t, c, t * c


def jacobi_eigh_numpy(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Cyclic Jacobi eigensolver, numpy row/column updates.

    Returns ``(eigenvalues, eigenvectors, sweeps, off_norm)`` with eigenvalues
    unsorted (diagonal order) and eigenvectors as columns.
    """
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    sweeps = 0
    off = _off_norm_numpy(a)
    while off >= tol and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= _SKIP:
                    continue
                t, c, s = _rotation(a[p, p], a[q, q], apq)
                ap = a[:, p].copy()
                aq = a[:, q]
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                rp = a[p, :].copy()
                rq = a[q, :]
                a[p, :] = c * rp - s * rq
                a[q, :] = s * rp + c * rq
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        sweeps += 1
        off = _off_norm_numpy(a)
    return np.diag(a).copy(), v, sweeps, off


def _off_norm_numpy(a: np.ndarray) -> float:
    off = a.copy()
    np.fill_diagonal(off, 0.0)
    return float(np.sqrt(np.sum(off * off)))


@njit(cache=True)
def _off_norm_nb(a):
    n = a.shape[0]
    acc = 0.0
    for i in range(n):
        for j in range(n):
            if i != j:
                acc += a[i, j] * a[i, j]
    return math.sqrt(acc)


@njit(cache=True)
def _jacobi_nb(a, tol, max_sweeps):
    n = a.shape[0]
    v = np.eye(n)
    sweeps = 0
    off = _off_norm_nb(a)
    while off >= tol and sweeps < max_sweeps:
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= 1e-300:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                if theta < 0.0:
                    t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        sweeps += 1
        off = _off_norm_nb(a)
    d = np.empty(n)
    for i in range(n):
        d[i] = a[i, i]
    return d, v, sweeps, off


def jacobi_eigh_numba(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Same contract as :func:`jacobi_eigh_numpy`, compiled with numba."""
    if not NUMBA_AVAILABLE:  # pragma: no cover
        raise RuntimeError("numba is not available")
    a = np.array(a, dtype=np.float64, copy=True, order="C")
    d, v, sweeps, off = _jacobi_nb(a, float(tol), int(max_sweeps))
    return d, v, int(sweeps), float(off)


def jacobi_eigh(a: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100):
    """Dispatch to the numba kernel unless disabled."""
    if USE_NUMBA:
        return jacobi_eigh_numba(a, tol, max_sweeps)
    return jacobi_eigh_numpy(a, tol, max_sweeps)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"


def adam_step_numpy(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    """In-place Adam update of ``param``, ``m`` and ``v`` (any shape)."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    denom = np.sqrt(v / c2)
    denom += eps
    param -= lr * (m / c1) / denom


@njit(cache=True)
def _adam_nb(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    for i in range(param.size):
        g = grad[i]
        mi = beta1 * m[i] + (1.0 - beta1) * g
        vi = beta2 * v[i] + (1.0 - beta2) * g * g
        m[i] = mi
        v[i] = vi
        param[i] -= lr * (mi / c1) / (math.sqrt(vi / c2) + eps)


def adam_step_numba(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    """Same contract as :func:`adam_step_numpy`; arrays must be C-contiguous."""
    _adam_nb(param.reshape(-1), np.ascontiguousarray(grad).reshape(-1), m.reshape(-1), v.reshape(-1),
             float(lr), float(beta1), float(beta2), float(eps), float(c1), float(c2))


def adam_step(param, grad, m, v, lr, beta1, beta2, eps, c1, c2):
    if USE_NUMBA:
        adam_step_numba(param, grad, m, v, lr, beta1, beta2, eps, c1, c2)
    else:
        adam_step_numpy(param, grad, m, v, lr, beta1, beta2, eps, c1, c2)
