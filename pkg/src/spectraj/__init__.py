"""Trajectory prediction in the graph spectral domain of a spatio-temporal
star x path product graph."""

__version__ = "0.1.0"

from .graph import FactorGraph, build_path_graph, build_star_graph, cartesian_product_laplacian
from .spectral import (
    Eigenbasis,
    Spectrum,
    eigendecompose,
    factor_bases,
    filter_spatial,
    filter_temporal,
    flatten_subset,
    gft_forward,
    gft_inverse,
)

__all__ = [
    "FactorGraph",
    "build_star_graph",
    "build_path_graph",
    "cartesian_product_laplacian",
    "Eigenbasis",
    "Spectrum",
    "eigendecompose",
    "factor_bases",
    "gft_forward",
    "gft_inverse",
    "filter_temporal",
    "filter_spatial",
    "flatten_subset",
]
