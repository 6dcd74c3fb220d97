"""Legacy ASCII VTK unstructured-grid snapshots of nodal fields."""

import io
import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Union

import numpy as np

from tools.mesh import Mesh
from utils.reporting import atomic_write_text

logger = logging.getLogger(__name__)

VTK_TETRA = 10


def format_vtk(mesh: Mesh, point_data: Mapping[str, np.ndarray], title: str = "thermistor") -> str:
    n = mesh.n_vertices
    out = io.StringIO()
    out.write("# vtk DataFile Version 3.0\n")
    out.write(f"{title}\n")
    out.write("ASCII\n")
    out.write("DATASET UNSTRUCTURED_GRID\n")
    out.write(f"POINTS {n} double\n")
    np.savetxt(out, mesh.vertices, fmt="%.17g")
    out.write(f"CELLS {mesh.n_tets} {5 * mesh.n_tets}\n")
    np.savetxt(out, np.column_stack([np.full(mesh.n_tets, 4), mesh.tets]), fmt="%d")
    out.write(f"CELL_TYPES {mesh.n_tets}\n")
    np.savetxt(out, np.full(mesh.n_tets, VTK_TETRA), fmt="%d")
    if point_data:
        out.write(f"POINT_DATA {n}\n")
    for name, values in point_data.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (n,):
            raise ValueError(f"field '{name}' has shape {values.shape}, expected ({n},)")
        out.write(f"SCALARS {name} double 1\n")
        out.write("LOOKUP_TABLE default\n")
        np.savetxt(out, values, fmt="%.17g")
    return out.getvalue()


def write_vtk(path: Union[str, Path], mesh: Mesh, point_data: Optional[Dict[str, np.ndarray]] = None,
              title: str = "thermistor") -> None:
    """Write ``mesh`` with scalar point data; field names must not contain spaces."""
    point_data = point_data or {}
    for name in point_data:
        if not name or any(c.isspace() for c in name):
            raise ValueError(f"invalid VTK field name '{name}'")
    atomic_write_text(path, format_vtk(mesh, point_data, title))
    logger.debug(f"VTK snapshot written to {path} ({', '.join(point_data) or 'geometry only'})")
