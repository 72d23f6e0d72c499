"""Nested meningeal surface pipeline.

Voxel volumes in, statistics out: signed distance fields with an
enforced layer ordering, watertight isosurface meshes, curvature and
distance metrics, enclosed-volume measures, and longitudinal
mixed-effects fits, plus analytic phantoms to exercise all of it.
"""

from .grid import (BINARY_MASK, REAL_FIELD, VolumeFormatError, VoxelGrid,
                   read_volume, voxel_center_arrays, voxel_of_world,
                   world_of_voxel, write_volume)
from .lme import (CRITERIA, RESPONSES, CohortTable, LmeFit, fit_lme,
                  read_cohort_csv, report_table, sex_adjusted_trend,
                  simulate_cohort, write_report_csv, write_trajectory_csv)
from .mesher import (MeshDiagnostics, MeshFormatError, TriangleMesh,
                     marching_cubes, mesh_diagnostics, read_mesh, write_mesh)
from .metrics import (CurvatureField, PointSet, SurfaceDistanceResult,
                      curvature_gradient, gaussian_curvature, mean_absolute_error,
                      median_cg, read_point_set, surface_distance,
                      surface_distance_bruteforce, triangle_gradients,
                      write_curvature_csv, write_point_distances)
from .phantom import (PHANTOM_KINDS, Corruption, PhantomSpec, generate,
                      inject_violations, read_phantom_spec)
from .sdf import (LAYER_NAMES, NestedSdfSet, NestingReport, SdfVolume,
                  check_nesting, enforce_nesting, lipschitz_excess,
                  read_layer_set, reinitialize_sdf, signed_distance_from_mask,
                  write_layer_set)
from .volumetry import (ICV_SURFACES, VOLUME_CSV_HEADER, VolumeReport,
                        enclosed_volume, measure_nested, volume_csv_row)

__version__ = "0.1.0"

__all__ = [
    "BINARY_MASK", "REAL_FIELD", "VolumeFormatError", "VoxelGrid",
    "read_volume", "voxel_center_arrays", "voxel_of_world",
    "world_of_voxel", "write_volume",
    "CRITERIA", "RESPONSES", "CohortTable", "LmeFit", "fit_lme",
    "read_cohort_csv", "report_table", "sex_adjusted_trend",
    "simulate_cohort", "write_report_csv", "write_trajectory_csv",
    "MeshDiagnostics", "MeshFormatError", "TriangleMesh",
    "marching_cubes", "mesh_diagnostics", "read_mesh", "write_mesh",
    "CurvatureField", "PointSet", "SurfaceDistanceResult",
    "curvature_gradient", "gaussian_curvature", "mean_absolute_error",
    "median_cg", "read_point_set", "surface_distance",
    "surface_distance_bruteforce", "triangle_gradients",
    "write_curvature_csv", "write_point_distances",
    "PHANTOM_KINDS", "Corruption", "PhantomSpec", "generate",
    "inject_violations", "read_phantom_spec",
    "LAYER_NAMES", "NestedSdfSet", "NestingReport", "SdfVolume",
    "check_nesting", "enforce_nesting", "lipschitz_excess",
    "read_layer_set", "reinitialize_sdf", "signed_distance_from_mask",
    "write_layer_set",
    "ICV_SURFACES", "VOLUME_CSV_HEADER", "VolumeReport",
    "enclosed_volume", "measure_nested", "volume_csv_row",
    "__version__",
]
