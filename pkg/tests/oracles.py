"""Independent reference computations shared by the unit and acceptance tests.

Nothing here calls the package's eigensolver; eigenpairs come from LAPACK
(numpy.linalg.eigh) or closed forms.
"""
import numpy as np


def dct_basis(h):
    """Orthonormal DCT-II vectors cos(pi j (t + 1/2) / h) as columns."""
    t = np.arange(h)[:, None]
    j = np.arange(h)[None, :]
    u = np.cos(np.pi * j * (t + 0.5) / h)
    return u / np.linalg.norm(u, axis=0)


def max_err_up_to_sign(a, b):
    """Largest column-wise deviation allowing each column a sign flip."""
    plus = np.abs(a - b).max(axis=0)
    minus = np.abs(a + b).max(axis=0)
    return float(np.minimum(plus, minus).max())


def group(values, tol=1e-8):
    out = []
    for i in np.argsort(values, kind="stable"):
        if out and abs(values[i] - values[out[-1][0]]) <= tol:
            out[-1].append(i)
        else:
            out.append([i])
    return out


def product_projector_error(u_s, lam_s, u_t, lam_t, lap_product):
    """Compare eigenspace projectors of the factored basis with a direct
    eigendecomposition of the product Laplacian; returns max abs deviation.

    Factored column (i, j) is kron(U_T[:, j], U_S[:, i]) with eigenvalue
    lam_s[i] + lam_t[j] (spatial index fastest in vec order).
    """
    w, v = np.linalg.eigh(lap_product)
    fact = np.kron(u_t, u_s)
    fact_vals = np.add.outer(lam_t, lam_s).ravel()
    worst = 0.0
    for grp in group(w):
        lam = w[grp[0]]
        cols = np.flatnonzero(np.abs(fact_vals - lam) <= 1e-8)
        if len(cols) != len(grp):
            return np.inf
        p_direct = v[:, grp] @ v[:, grp].T
        p_fact = fact[:, cols] @ fact[:, cols].T
        worst = max(worst, float(np.abs(p_direct - p_fact).max()))
    return worst


def star_spectrum(n):
    return np.concatenate([[0.0], np.ones(n - 2), [float(n)]])


def cross_vehicle_std(values):
    return np.asarray(values).std(axis=-2)
