"""Output files: history and boundary CSV, VTK fields, tables and reports."""

import logging
from pathlib import Path

import meshio
import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray

from .exceptions import FieldMismatchError
from .fem import ScalarField, VectorField
from .mesh import Mesh
from .models import HISTORY_COLUMNS, ComparisonReport, OptimHistory
from .shape_calc import BoundaryClassification, BoundaryLabel

logger = logging.getLogger(__name__)

PointData = ScalarField | VectorField | ArrayLike


def _point_array(mesh: Mesh, name: str, value: PointData) -> NDArray[np.generic]:
    if isinstance(value, ScalarField | VectorField):
        if value.mesh is not mesh:
            raise FieldMismatchError(f"Field '{name}' is defined on another mesh")
        array = np.asarray(value.values)
    else:
        array = np.asarray(value)
    if array.shape[0] != mesh.n_vertices or array.ndim > 2:
        raise FieldMismatchError(
            f"Field '{name}' has shape {array.shape}; expected one row per vertex"
        )
    if array.ndim == 2:
        if array.shape[1] != 2:
            raise FieldMismatchError(f"Vector field '{name}' must have 2 components")
        array = np.column_stack((array, np.zeros(len(array))))
    return array


def write_vtk(
    mesh: Mesh, path: Path | str, fields: dict[str, PointData] | None = None
) -> Path:
    """Write a legacy ASCII VTK unstructured grid with point data.

    Scalars keep their dtype (integer status arrays stay integers); 2D
    vectors are padded with a zero z-component.
    """
    path = Path(path)
    point_data = {
        name: _point_array(mesh, name, value)
        for name, value in (fields or {}).items()
    }
    points = np.column_stack((mesh.vertices, np.zeros(mesh.n_vertices)))
    grid = meshio.Mesh(points, [("triangle", np.asarray(mesh.triangles))], point_data=point_data)
    try:
        grid.write(path, file_format="vtk", binary=False)
    except OSError as e:
        raise OSError(f"Cannot write VTK file {path}: {e}") from e
    logger.debug(f"Wrote {path}")
    return path


def read_vtk(path: Path | str) -> meshio.Mesh:
    return meshio.read(Path(path), file_format="vtk")


def write_history_csv(history: OptimHistory, path: Path | str) -> Path:
    """Write ``iter,J,area,p,tau,stick,slip_plus,slip_minus,min_angle``."""
    path = Path(path)
    try:
        history.to_frame().to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise OSError(f"Cannot write history to {path}: {e}") from e
    return path


def read_history_csv(path: Path | str) -> pd.DataFrame:
    frame = pd.read_csv(path)
    if tuple(frame.columns) != HISTORY_COLUMNS:
        raise ValueError(
            f"{path}: unexpected history columns {list(frame.columns)}"
        )
    return frame


def write_boundary_csv(mesh: Mesh, path: Path | str) -> Path:
    """Write the boundary loop as ``x,y`` rows in boundary order.

    The closing segment back to the first node is implied.
    """
    path = Path(path)
    points = mesh.vertices[mesh.boundary_nodes]
    frame = pd.DataFrame({"x": points[:, 0], "y": points[:, 1]})
    try:
        frame.to_csv(path, index=False, float_format="%.17g")
    except OSError as e:
        raise OSError(f"Cannot write boundary to {path}: {e}") from e
    return path


def read_boundary_csv(path: Path | str) -> NDArray[np.float64]:
    frame = pd.read_csv(path)
    if list(frame.columns) != ["x", "y"]:
        raise ValueError(f"{path}: expected columns x,y, got {list(frame.columns)}")
    return frame.to_numpy(dtype=np.float64)


def classification_frame(
    mesh: Mesh,
    classification: BoundaryClassification,
    u: ScalarField,
    flux: ArrayLike,
    g: ArrayLike,
) -> pd.DataFrame:
    points = mesh.vertices[mesh.boundary_nodes]
    return pd.DataFrame(
        {
            "node": mesh.boundary_nodes,
            "x": points[:, 0],
            "y": points[:, 1],
            "u": u.boundary_values,
            "q": np.asarray(flux),
            "g": np.asarray(g),
            "label": [BoundaryLabel(k).name for k in classification.labels],
        }
    )


def write_classification_csv(
    mesh: Mesh,
    classification: BoundaryClassification,
    u: ScalarField,
    flux: ArrayLike,
    g: ArrayLike,
    path: Path | str,
) -> Path:
    """Per boundary node: vertex, position, u, flux, threshold and label."""
    path = Path(path)
    classification_frame(mesh, classification, u, flux, g).to_csv(
        path, index=False, float_format="%.17g"
    )
    return path


def write_fd_csv(frame: pd.DataFrame, path: Path | str) -> Path:
    """Write a finite-difference or summary table."""
    path = Path(path)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def write_report_json(report: ComparisonReport, path: Path | str) -> Path:
    path = Path(path)
    path.write_text(report.model_dump_json(indent=2), encoding="utf-8")
    return path


def read_report_json(path: Path | str) -> ComparisonReport:
    return ComparisonReport.model_validate_json(Path(path).read_text(encoding="utf-8"))
