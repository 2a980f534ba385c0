import numpy as np
import pytest

from spectraj import _kernels

backends = [("numpy", _kernels.jacobi_eigh_numpy, _kernels.adam_step_numpy)]
if _kernels.NUMBA_AVAILABLE:
    backends.append(("numba", _kernels.jacobi_eigh_numba, _kernels.adam_step_numba))


def _sym(rng, n):
    a = rng.normal(size=(n, n))
    return a + a.T


@pytest.mark.parametrize("name,jacobi,_", backends)
@pytest.mark.parametrize("n", [1, 2, 5, 17])
def test_jacobi_matches_lapack(name, jacobi, _, n, rng):
    a = _sym(rng, n)
    d, v, sweeps, off = jacobi(a.copy())
    assert off < 1e-12
    np.testing.assert_allclose(np.sort(d), np.linalg.eigvalsh(a), atol=1e-10)
    np.testing.assert_allclose(v.T @ v, np.eye(n), atol=1e-12)
    np.testing.assert_allclose(a @ v, v * d, atol=1e-10)


@pytest.mark.parametrize("name,jacobi,_", backends)
def test_jacobi_diagonal_input_needs_no_sweep(name, jacobi, _):
    d, v, sweeps, off = jacobi(np.diag([3.0, 1.0, 2.0]))
    assert sweeps == 0 and off == 0
    np.testing.assert_array_equal(v, np.eye(3))


@pytest.mark.skipif(not _kernels.NUMBA_AVAILABLE, reason="numba missing")
def test_backends_agree(rng):
    a = _sym(rng, 12)
    d1, v1, s1, _ = _kernels.jacobi_eigh_numpy(a.copy())
    d2, v2, s2, _ = _kernels.jacobi_eigh_numba(a.copy())
    assert s1 == s2
    np.testing.assert_allclose(d1, d2, atol=1e-12)
    np.testing.assert_allclose(v1, v2, atol=1e-10)


@pytest.mark.parametrize("name,_,adam", backends)
def test_adam_step_formula(name, _, adam, rng):
    p = rng.normal(size=(3, 4))
    g = rng.normal(size=(3, 4))
    m, v = rng.normal(size=(3, 4)), rng.uniform(size=(3, 4))
    b1, b2, lr, eps, c1, c2 = 0.9, 0.999, 1e-2, 1e-8, 0.5, 0.25
    m_ref = b1 * m + (1 - b1) * g
    v_ref = b2 * v + (1 - b2) * g * g
    p_ref = p - lr * (m_ref / c1) / (np.sqrt(v_ref / c2) + eps)
    adam(p, g, m, v, lr, b1, b2, eps, c1, c2)
    np.testing.assert_allclose(m, m_ref, rtol=1e-14)
    np.testing.assert_allclose(v, v_ref, rtol=1e-14)
    np.testing.assert_allclose(p, p_ref, rtol=1e-13)


def test_backend_name():
    assert _kernels.backend_name() in {"numba", "numpy"}


def test_env_flag_selects_numpy():
    import os
    import subprocess
    import sys

    env = dict(os.environ, SPECTRAJ_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from spectraj import _kernels; print(_kernels.backend_name())"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
