"""Laplacian eigenbases, the factored two-dimensional graph Fourier transform,
and low-pass filtering along the spatial and temporal axes.

All Laplacians here are real symmetric, so the transform pair reduces to

    forward:  C_k = U_S^T F_k U_T
    inverse:  F_k = U_S C_k U_T^T

applied independently to every feature ``k`` (and to any leading batch axes).
"""
from __future__ import annotations

import csv
import functools
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Iterable, Union

import numpy as np

from . import _kernels
from .graph import FactorGraph, build_path_graph, build_star_graph

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
# Eigenvalues closer than this are treated as one degenerate group.
DEGENERACY_TOL = 1e-9
# Entries within this of the column's max |entry| count as ties for the sign rule.
SIGN_TIE_TOL = 1e-9


class ConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class Eigenbasis:
    """Eigenvalues sorted ascending and matching orthonormal eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]

    def groups(self) -> list[np.ndarray]:
        """Index arrays of degenerate eigenvalue groups, in ascending order."""
        return _group_indices(self.eigenvalues)


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Spectral coefficients with axes ``(..., feature, spatial index, temporal index)``."""

    coefficients: np.ndarray
    spatial_eigenvalues: np.ndarray
    temporal_eigenvalues: np.ndarray

    @property
    def shape(self) -> tuple[int, ...]:
        return self.coefficients.shape

    def replace(self, coefficients: np.ndarray) -> "Spectrum":
        return Spectrum(coefficients, self.spatial_eigenvalues, self.temporal_eigenvalues)


def _group_indices(values: np.ndarray) -> list[np.ndarray]:
    groups: list[list[int]] = []
    for i, lam in enumerate(values):
        if groups and abs(lam - values[groups[-1][0]]) <= DEGENERACY_TOL * max(1.0, abs(lam)):
            groups[-1].append(i)
        else:
            groups.append([i])
    return [np.asarray(g) for g in groups]


def _apply_sign_convention(vectors: np.ndarray) -> np.ndarray:
    vectors = vectors.copy()
    for j in range(vectors.shape[1]):
        col = vectors[:, j]
        mags = np.abs(col)
        lead = int(np.flatnonzero(mags >= mags.max() - SIGN_TIE_TOL)[0])
        if col[lead] < 0:
            vectors[:, j] = -col
    return vectors


def eigendecompose(graph: Union[FactorGraph, np.ndarray]) -> Eigenbasis:
    """Eigendecomposition of a factor Laplacian by cyclic Jacobi rotations.

    Output is canonicalised: eigenvalues ascending, each column's largest
    magnitude entry positive (lowest index wins ties), and columns inside a
    degenerate group ordered by their entries rounded to 1e-9, descending
    lexicographically. Individual columns within a degenerate group remain a
    basis choice; only whole groups are basis independent.
    """
    lap = graph.laplacian if isinstance(graph, FactorGraph) else np.asarray(graph, dtype=np.float64)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {lap.shape}")
    scale = max(1.0, float(np.abs(lap).max(initial=0.0)))
    if not np.allclose(lap, lap.T, rtol=0.0, atol=1e-12 * scale):
        raise ValueError("matrix is not symmetric")

    values, vectors, sweeps, off = _kernels.jacobi_eigh(lap, JACOBI_TOL, JACOBI_MAX_SWEEPS)
    if off >= JACOBI_TOL:
        raise ConvergenceError(
            f"Jacobi did not converge: off-diagonal norm {off:.3e} after {sweeps} sweeps"
        )
    values = np.where((values < 0) & (values > -1e-10), 0.0, values)
    order = np.argsort(values, kind="stable")
    values, vectors = values[order], _apply_sign_convention(vectors[:, order])

    perm = []
    for grp in _group_indices(values):
        if len(grp) > 1:
            keys = [tuple(np.round(vectors[:, i], 9)) for i in grp]
            grp = grp[sorted(range(len(grp)), key=lambda i: keys[i], reverse=True)]
        perm.extend(grp.tolist())
    values, vectors = values[perm], vectors[:, perm]

    values.setflags(write=False)
    vectors = np.ascontiguousarray(vectors)
    vectors.setflags(write=False)
    return Eigenbasis(values, vectors)


@functools.lru_cache(maxsize=32)
def factor_bases(n_vehicles: int, n_steps: int) -> tuple[Eigenbasis, Eigenbasis]:
    """Shared (spatial star, temporal path) eigenbases for a given size."""
    return eigendecompose(build_star_graph(n_vehicles)), eigendecompose(build_path_graph(n_steps))


def _values(signal) -> np.ndarray:
    return np.asarray(getattr(signal, "values", signal), dtype=np.float64)


def _check_dims(arr: np.ndarray, n: int, h: int, what: str) -> None:
    if arr.ndim < 2 or arr.shape[-2:] != (n, h):
        raise ValueError(f"{what} trailing shape {arr.shape[-2:]} does not match bases ({n}, {h})")


def gft_forward(signal, basis_s: Eigenbasis, basis_t: Eigenbasis) -> Spectrum:
    """Forward transform of a ``(..., N, H)`` signal or ScenarioTensor."""
    f = _values(signal)
    _check_dims(f, basis_s.size, basis_t.size, "signal")
    coeff = basis_s.eigenvectors.T @ f @ basis_t.eigenvectors
    return Spectrum(coeff, basis_s.eigenvalues, basis_t.eigenvalues)


def gft_inverse(spectrum: Union[Spectrum, np.ndarray], basis_s: Eigenbasis, basis_t: Eigenbasis) -> np.ndarray:
    """Inverse transform back to a ``(..., N, H)`` array."""
    c = np.asarray(getattr(spectrum, "coefficients", spectrum), dtype=np.float64)
    _check_dims(c, basis_s.size, basis_t.size, "spectrum")
    return basis_s.eigenvectors @ c @ basis_t.eigenvectors.T


def filter_temporal(spectrum: Spectrum, keep: int) -> Spectrum:
    """Zero every coefficient whose temporal index is ``>= keep``."""
    h = spectrum.coefficients.shape[-1]
    if not isinstance(keep, (int, np.integer)) or not 1 <= keep <= h:
        raise ValueError(f"keep must be an integer in [1, {h}], got {keep!r}")
    coeff = spectrum.coefficients.copy()
    coeff[..., keep:] = 0.0
    return spectrum.replace(coeff)


def filter_spatial(spectrum: Spectrum, keep_indices: Iterable[int]) -> Spectrum:
    """Zero every coefficient whose spatial index is not in ``keep_indices``.

    Keeping or dropping only part of a degenerate eigenvalue group depends on
    the basis chosen inside that group.
    """
    n = spectrum.coefficients.shape[-2]
    keep = sorted({int(i) for i in keep_indices})
    bad = [i for i in keep if not 0 <= i < n]
    if bad:
        raise ValueError(f"spatial indices {bad} outside [0, {n})")
    mask = np.zeros(n, dtype=bool)
    mask[keep] = True
    coeff = spectrum.coefficients.copy()
    coeff[..., ~mask, :] = 0.0
    return spectrum.replace(coeff)


def flatten_subset(spectrum: Union[Spectrum, np.ndarray], p: int) -> np.ndarray:
    """First ``p`` temporal columns flattened feature-major, then spatial, then temporal.

    Leading batch axes before ``(K, N, H)`` are kept.
    """
    c = np.asarray(getattr(spectrum, "coefficients", spectrum))
    if c.ndim < 3:
        raise ValueError("expected (..., K, N, H) coefficients")
    h = c.shape[-1]
    if not 1 <= p <= h:
        raise ValueError(f"p must be in [1, {h}], got {p}")
    sub = c[..., :p]
    return np.ascontiguousarray(sub).reshape(*sub.shape[:-3], -1)


def unflatten_subset(vector: np.ndarray, n_features: int, n_nodes: int, p: int) -> np.ndarray:
    v = np.asarray(vector)
    if v.shape[-1] != n_features * n_nodes * p:
        raise ValueError(f"vector length {v.shape[-1]} != {n_features}*{n_nodes}*{p}")
    return v.reshape(*v.shape[:-1], n_features, n_nodes, p)


SPECTRUM_COLUMNS = (
    "feature",
    "spatial_index",
    "spatial_eigenvalue",
    "temporal_index",
    "temporal_eigenvalue",
    "coefficient",
)


def write_spectrum_csv(spectrum: Spectrum, dest: Union[str, Path, IO[str]]) -> None:
    """Dump a ``(K, N, H)`` spectrum as long-format CSV, 9 significant digits."""
    c = spectrum.coefficients
    if c.ndim != 3:
        raise ValueError("only a single (K, N, H) spectrum can be dumped")
    if isinstance(dest, (str, Path)):
        with open(dest, "w", newline="") as fh:
            write_spectrum_csv(spectrum, fh)
        return
    w = csv.writer(dest, lineterminator="\n")
    w.writerow(SPECTRUM_COLUMNS)
    ls, lt = spectrum.spatial_eigenvalues, spectrum.temporal_eigenvalues
    for k in range(c.shape[0]):
        for i in range(c.shape[1]):
            for j in range(c.shape[2]):
                w.writerow((k, i, f"{ls[i]:.9g}", j, f"{lt[j]:.9g}", f"{c[k, i, j]:.9g}"))


def read_spectrum_csv(src: Union[str, Path]) -> Spectrum:
    with open(src, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{src}: no spectrum rows")
    k = 1 + max(int(r["feature"]) for r in rows)
    n = 1 + max(int(r["spatial_index"]) for r in rows)
    h = 1 + max(int(r["temporal_index"]) for r in rows)
    c = np.zeros((k, n, h))
    ls, lt = np.zeros(n), np.zeros(h)
    for r in rows:
        i, j = int(r["spatial_index"]), int(r["temporal_index"])
        c[int(r["feature"]), i, j] = float(r["coefficient"])
        ls[i] = float(r["spatial_eigenvalue"])
        lt[j] = float(r["temporal_eigenvalue"])
    return Spectrum(c, ls, lt)
