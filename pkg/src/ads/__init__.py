"""Adaptive Delaunay sampling of occupancy fields."""
from .fields import (AnalyticField, GridField, MeshWindingField, OccupancyField,
                     Unsupported, exact_surface_distance, load_field)
from .delaunay import Scaffold, build_initial, crossing_edges, insert_vertex
from .mesh import SampleSet, SurfaceMesh, manifold_report, optimize_mesh, reject_subsample
from .pipeline import AdsConfig, IterationCap, RunStats, run

__all__ = [
    "AnalyticField", "GridField", "MeshWindingField", "OccupancyField", "Unsupported",
    "exact_surface_distance", "load_field", "Scaffold", "build_initial", "crossing_edges",
    "insert_vertex", "SampleSet", "SurfaceMesh", "manifold_report", "optimize_mesh",
    "reject_subsample", "AdsConfig", "IterationCap", "RunStats", "run",
]
