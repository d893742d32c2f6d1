"""Desk-scale workbench for quasi-redirection of quasi-geodesic rays.

Spaces are locally finite graphs with exact rational edge weights; rays are
finite realizations with a symbolic tail descriptor.
"""

from qrlab.space import GeoPath, MetricGraph, ball, distance, geodesic, norm
from qrlab.qg import QQ, QGPath, RaySpec, Tail, concat, min_q, restrict, tame, verify_qq

__version__ = "0.1.0"

__all__ = [
    "GeoPath",
    "MetricGraph",
    "QGPath",
    "QQ",
    "RaySpec",
    "Tail",
    "ball",
    "concat",
    "distance",
    "geodesic",
    "min_q",
    "norm",
    "restrict",
    "tame",
    "verify_qq",
]
