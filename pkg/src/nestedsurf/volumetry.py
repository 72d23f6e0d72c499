"""Enclosed volumes of closed meshes and the derived clinical measures.

The divergence theorem turns a closed, outward-oriented triangle mesh
into a sum of signed origin tetrahedra.  From the three nested layer
surfaces this yields the intracranial volume (the outer boundary's
enclosed volume) and the subarachnoid-space volume (arachnoid minus
pia).  Volumes are carried in mm^3 and reported in cm^3.
"""

from dataclasses import dataclass

import numpy as np

from .mesher import TriangleMesh, marching_cubes, mesh_diagnostics
from .sdf import NestedSdfSet

ICV_SURFACES = ("epidural", "arachnoid")


@dataclass(frozen=True)
class VolumeReport:
    """Per-layer enclosed volumes plus the two derived measures, cm^3."""

    icv_cm3: float
    sas_cm3: float
    pia_cm3: float
    ara_cm3: float
    epi_cm3: float


def enclosed_volume(mesh: TriangleMesh) -> float:
    """Enclosed volume in mm^3 of a closed outward-oriented mesh.

    One-sixth the sum of triangle determinants; a negative sum means the
    winding points inward and is reported as an error rather than
    silently flipped, since upstream orientation bugs must surface.
    """
    diag = mesh_diagnostics(mesh)
    if diag.boundary_edge_count:
        raise ValueError(
            f"mesh is open ({diag.boundary_edge_count} boundary edges)")
    tris = mesh.triangles
    a = mesh.vertices[tris[:, 0]]
    b = mesh.vertices[tris[:, 1]]
    c = mesh.vertices[tris[:, 2]]
    signed = float((a * np.cross(b, c)).sum()) / 6.0
    if signed < 0.0:
        raise ValueError(
            f"signed volume {signed:.6g} mm^3 is negative: inward orientation")
    return signed


def measure_nested(layers: NestedSdfSet, icv_surface: str = "epidural") -> VolumeReport:
    """Mesh each layer at iso 0 and report enclosed volumes in cm^3.

    icv_surface selects which boundary counts as the intracranial
    envelope; the outer (epidural) boundary is the default.
    """
    if icv_surface not in ICV_SURFACES:
        raise ValueError(f"icv_surface must be one of {ICV_SURFACES}")
    mm3 = [enclosed_volume(marching_cubes(layer)) for layer in layers.layers()]
    pia, ara, epi = (v / 1000.0 for v in mm3)
    icv = epi if icv_surface == "epidural" else ara
    return VolumeReport(icv_cm3=icv, sas_cm3=ara - pia,
                        pia_cm3=pia, ara_cm3=ara, epi_cm3=epi)


VOLUME_CSV_HEADER = ("subject_id,visit_index,interval_years,sex,baseline_age,"
                     "icv_cm3,sas_cm3,pia_cm3,ara_cm3,epi_cm3")


def volume_csv_row(report: VolumeReport, subject_id: str, visit_index: int,
                   interval_years: float, sex: str, baseline_age: float) -> str:
    """One subject-visit CSV row; volumes fixed to 3 decimals."""
    vols = (report.icv_cm3, report.sas_cm3, report.pia_cm3,
            report.ara_cm3, report.epi_cm3)
    return (f"{subject_id},{visit_index},{interval_years!r},{sex},"
            f"{baseline_age!r}," + ",".join(f"{v:.3f}" for v in vols))
