"""Spatial (star) and temporal (path) factor graphs and their Laplacians."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

GraphKind = Literal["spatial-star", "temporal-path"]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FactorGraph:
    """Unweighted undirected factor graph stored as dense matrices."""

    kind: GraphKind
    adjacency: np.ndarray
    degree: np.ndarray = field(init=False, repr=False)
    laplacian: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        a = np.asarray(self.adjacency, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"adjacency must be square, got shape {a.shape}")
        if not np.array_equal(a, a.T):
            raise ValueError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise ValueError("self-loops are not allowed")
        if not np.all((a == 0) | (a == 1)):
            raise ValueError("adjacency entries must be 0 or 1")
        object.__setattr__(self, "adjacency", _frozen(a))
        object.__setattr__(self, "degree", _frozen(np.diag(a.sum(axis=1))))
        object.__setattr__(self, "laplacian", _frozen(self.degree - a))

    @property
    def node_count(self) -> int:
        return self.adjacency.shape[0]

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum()) // 2


def build_star_graph(n_vehicles: int) -> FactorGraph:
    """Star graph with the target vehicle at node 0 linked to every neighbour."""
    n = int(n_vehicles)
    if n != n_vehicles or n < 2:
        raise ValueError(f"a star graph needs at least 2 nodes, got {n_vehicles}")
    a = np.zeros((n, n))
    a[0, 1:] = 1.0
    a[1:, 0] = 1.0
    return FactorGraph("spatial-star", a)


def build_path_graph(n_steps: int) -> FactorGraph:
    """Path graph linking each time step to its predecessor and successor."""
    n = int(n_steps)
    if n != n_steps or n < 2:
        raise ValueError(f"a path graph needs at least 2 nodes, got {n_steps}")
    a = np.eye(n, k=1) + np.eye(n, k=-1)
    return FactorGraph("temporal-path", a)


def cartesian_product_laplacian(spatial: FactorGraph, temporal: FactorGraph) -> np.ndarray:
    """Laplacian of the product graph, ``L_T (x) I_N + I_H (x) L_S``.

    Vectorisation stacks the spatial index fastest, i.e. entry ``(s, t)`` of a
    N x H signal lands at position ``t * N + s``.
    """
    if not isinstance(spatial, FactorGraph) or not isinstance(temporal, FactorGraph):
        raise TypeError("both arguments must be FactorGraph instances")
    n, h = spatial.node_count, temporal.node_count
    return np.kron(temporal.laplacian, np.eye(n)) + np.kron(np.eye(h), spatial.laplacian)
