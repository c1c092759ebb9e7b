"""Conforming triangle meshes of the moving domain.

A :class:`Mesh` is immutable: counterclockwise triangles plus one positively
oriented boundary loop stored in chained order, so that boundary edge ``k``
runs from ``boundary_nodes[k]`` to ``boundary_nodes[k + 1]``. Everything that
changes the geometry returns a new mesh.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial.distance import pdist

from .exceptions import (
    FieldMismatchError,
    GeometryError,
    MeshInversionError,
    MeshValidationError,
)

if TYPE_CHECKING:
    from .fem import VectorField

logger = logging.getLogger(__name__)

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

CurvatureMethodName = Literal["osculating", "extension"]


def _signed_areas(vertices: FloatArray, triangles: IntArray) -> FloatArray:
    p0 = vertices[triangles[:, 0]]
    p1 = vertices[triangles[:, 1]]
    p2 = vertices[triangles[:, 2]]
    return 0.5 * (
        (p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
        - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0])
    )


def _directed_edges(triangles: IntArray) -> IntArray:
    # Row e belongs to triangle e % nt.
    return np.concatenate(
        (triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]])
    )


def _edge_keys(edges: IntArray, nv: int) -> IntArray:
    return edges[:, 0].astype(np.int64) * nv + edges[:, 1]


def _chain_loops(edges: IntArray) -> list[list[int]]:
    """Split directed boundary edges into closed loops, in input order."""
    leaving: dict[int, int] = {}
    for idx, (i, _) in enumerate(edges.tolist()):
        if i in leaving:
            raise MeshValidationError(
                f"Boundary vertex {i} starts two boundary edges; "
                "the boundary is not a simple curve"
            )
        leaving[i] = idx

    used = np.zeros(len(edges), dtype=bool)
    loops: list[list[int]] = []
    for start in range(len(edges)):
        if used[start]:
            continue
        loop: list[int] = []
        idx = start
        while not used[idx]:
            used[idx] = True
            loop.append(idx)
            end = int(edges[idx, 1])
            if end not in leaving:
                raise MeshValidationError(
                    f"Boundary is not closed: no boundary edge leaves vertex {end}"
                )
            idx = leaving[end]
        if idx != start:
            raise MeshValidationError(
                f"Boundary edges starting at edge {start} do not close up"
            )
        loops.append(loop)
    return loops


def _triangle_boundary_keys(triangles: IntArray, nv: int) -> IntArray:
    """Keys of directed triangle edges whose reverse is not present."""
    keys = _edge_keys(_directed_edges(triangles), nv)
    unique, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        key = int(unique[np.argmax(counts > 1)])
        raise MeshValidationError(
            f"Edge ({key // nv}, {key % nv}) is used twice with the same "
            "orientation; triangles are not consistently oriented"
        )
    reverse = (keys % nv) * nv + keys // nv
    return np.sort(keys[~np.isin(reverse, keys)])


def _check_topology(
    vertices: FloatArray, triangles: IntArray, boundary_edges: IntArray
) -> None:
    nv = len(vertices)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshValidationError(
            f"Vertices must have shape (nv, 2), got {vertices.shape}"
        )
    if triangles.ndim != 2 or triangles.shape[1] != 3 or not len(triangles):
        raise MeshValidationError(
            f"Triangles must have shape (nt, 3), got {triangles.shape}"
        )
    if boundary_edges.ndim != 2 or boundary_edges.shape[1] != 2:
        raise MeshValidationError(
            f"Boundary edges must have shape (nb, 2), got {boundary_edges.shape}"
        )
    for name, index in (("triangle", triangles), ("boundary edge", boundary_edges)):
        bad = np.flatnonzero(np.any((index < 0) | (index >= nv), axis=1))
        if bad.size:
            raise MeshValidationError(
                f"{name.capitalize()} {bad[0]} references a vertex outside 0..{nv - 1}"
            )

    areas = _signed_areas(vertices, triangles)
    bad = np.flatnonzero(~(areas > 0))
    if bad.size:
        t = int(bad[0])
        raise MeshValidationError(
            f"Triangle {t} {triangles[t].tolist()} has non-positive signed "
            f"area {areas[t]:.3e}; triangles must be counterclockwise"
        )

    tri_keys = _triangle_boundary_keys(triangles, nv)
    all_keys = _edge_keys(_directed_edges(triangles), nv)
    given = _edge_keys(boundary_edges, nv)
    if len(np.unique(given)) != len(given):
        raise MeshValidationError("Boundary edges contain duplicates")
    for k in np.flatnonzero(~np.isin(given, tri_keys)):
        i, j = boundary_edges[k].tolist()
        if np.isin(j * nv + i, tri_keys):
            reason = "is oriented clockwise"
        elif np.isin(given[k], all_keys):
            reason = "is shared by two triangles"
        else:
            reason = "is not an edge of any triangle"
        raise MeshValidationError(f"Boundary edge {k} ({i}, {j}) {reason}")
    missing = tri_keys[~np.isin(tri_keys, given)]
    if missing.size:
        key = int(missing[0])
        raise MeshValidationError(
            f"Edge ({key // nv}, {key % nv}) belongs to a single triangle "
            "but is missing from the boundary edges"
        )

    loops = _chain_loops(boundary_edges)
    if len(loops) != 1:
        raise MeshValidationError(
            f"Boundary edges form {len(loops)} loops; expected exactly one"
        )


@dataclass(frozen=True, eq=False)
class Mesh:
    """Triangle mesh with a single ordered boundary loop.

    Use :meth:`build` for raw connectivity; the constructor expects the
    boundary already chained and validates everything.
    """

    vertices: FloatArray
    triangles: IntArray
    boundary_edges: IntArray
    boundary_nodes: IntArray

    def __post_init__(self) -> None:
        for name, dtype in (
            ("vertices", np.float64),
            ("triangles", np.int64),
            ("boundary_edges", np.int64),
            ("boundary_nodes", np.int64),
        ):
            array = np.array(getattr(self, name), dtype=dtype)
            array.setflags(write=False)
            object.__setattr__(self, name, array)

        _check_topology(self.vertices, self.triangles, self.boundary_edges)
        edges = self.boundary_edges
        if not (
            np.array_equal(edges[:, 1], np.roll(edges[:, 0], -1))
            and np.array_equal(self.boundary_nodes, edges[:, 0])
        ):
            raise MeshValidationError(
                "boundary_nodes and boundary_edges are not in chained order"
            )

    @classmethod
    def build(
        cls,
        vertices: ArrayLike,
        triangles: ArrayLike,
        boundary_edges: ArrayLike | None = None,
    ) -> "Mesh":
        """Create a mesh, inferring and chaining the boundary loop.

        When ``boundary_edges`` is None the loop is taken from the triangle
        edges without a twin; otherwise the given edges are validated and
        reordered to start at the first one.
        """
        v = np.asarray(vertices, dtype=np.float64)
        t = np.asarray(triangles, dtype=np.int64)
        if boundary_edges is None:
            if t.ndim != 2 or t.shape[1] != 3:
                raise MeshValidationError(
                    f"Triangles must have shape (nt, 3), got {t.shape}"
                )
            keys = _triangle_boundary_keys(t, len(v))
            edges = np.column_stack((keys // len(v), keys % len(v)))
        else:
            edges = np.asarray(boundary_edges, dtype=np.int64).reshape(-1, 2)
        _check_topology(v, t, edges)
        chained = edges[_chain_loops(edges)[0]]
        return cls(v, t, chained, chained[:, 0].copy())

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_nodes)

    @cached_property
    def element_areas(self) -> FloatArray:
        return _signed_areas(self.vertices, self.triangles)

    @cached_property
    def basis_gradients(self) -> FloatArray:
        """Constant P1 basis gradients, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        nxt = p[:, [1, 2, 0]]
        prv = p[:, [2, 0, 1]]
        grads = np.stack(
            (nxt[..., 1] - prv[..., 1], prv[..., 0] - nxt[..., 0]), axis=-1
        )
        return grads / (2.0 * self.element_areas[:, None, None])

    @cached_property
    def edge_vectors(self) -> FloatArray:
        edges = self.boundary_edges
        return self.vertices[edges[:, 1]] - self.vertices[edges[:, 0]]

    @cached_property
    def edge_lengths(self) -> FloatArray:
        return np.linalg.norm(self.edge_vectors, axis=1)

    @cached_property
    def edge_tangents(self) -> FloatArray:
        return self.edge_vectors / self.edge_lengths[:, None]

    @cached_property
    def edge_normals(self) -> FloatArray:
        """Outward unit normals: tangents rotated clockwise."""
        t = self.edge_tangents
        return np.column_stack((t[:, 1], -t[:, 0]))

    @cached_property
    def edge_triangles(self) -> IntArray:
        """Index of the triangle owning each boundary edge."""
        nv = self.n_vertices
        keys = _edge_keys(_directed_edges(self.triangles), nv)
        order = np.argsort(keys)
        pos = np.searchsorted(keys[order], _edge_keys(self.boundary_edges, nv))
        return order[pos] % self.n_triangles

    @cached_property
    def boundary_weights(self) -> FloatArray:
        """Half the sum of the two boundary edges adjacent to each node."""
        lengths = self.edge_lengths
        return 0.5 * (lengths + np.roll(lengths, 1))

    @cached_property
    def boundary_normal_measure(self) -> FloatArray:
        """Per-node (l_prev n_prev + l_next n_next) / 2, shape (nb, 2).

        Moving boundary node b by dx changes the polygon area by
        ``measure[b] . dx`` to first order.
        """
        scaled = self.edge_lengths[:, None] * self.edge_normals
        return 0.5 * (scaled + np.roll(scaled, 1, axis=0))

    @cached_property
    def boundary_normals(self) -> FloatArray:
        measure = self.boundary_normal_measure
        return measure / np.linalg.norm(measure, axis=1)[:, None]

    @cached_property
    def boundary_index(self) -> IntArray:
        """Position of each vertex in ``boundary_nodes``; -1 for interior."""
        index = np.full(self.n_vertices, -1, dtype=np.int64)
        index[self.boundary_nodes] = np.arange(self.n_boundary)
        return index

    @cached_property
    def interior_nodes(self) -> IntArray:
        return np.flatnonzero(self.boundary_index < 0)

    @property
    def perimeter(self) -> float:
        return float(self.edge_lengths.sum())


@dataclass(frozen=True)
class BoundaryGeometry:
    """Per-boundary-node outward normal, lumped weight and mean curvature."""

    normal: FloatArray
    weight: FloatArray
    curvature: FloatArray
    method: CurvatureMethodName = "osculating"


def _osculating_curvature(mesh: Mesh) -> FloatArray:
    bn = mesh.boundary_nodes
    prev = mesh.vertices[np.roll(bn, 1)]
    here = mesh.vertices[bn]
    nxt = mesh.vertices[np.roll(bn, -1)]
    a = here - prev
    b = nxt - here
    c = nxt - prev
    cross = a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]
    denom = (
        np.linalg.norm(a, axis=1)
        * np.linalg.norm(b, axis=1)
        * np.linalg.norm(c, axis=1)
    )
    return 2.0 * cross / denom


def _extension_curvature(mesh: Mesh, normals: FloatArray) -> FloatArray:
    from .fem import harmonic_extension, node_gradient

    bn = mesh.boundary_nodes
    gx = node_gradient(mesh, harmonic_extension(mesh, normals[:, 0])).values[bn]
    gy = node_gradient(mesh, harmonic_extension(mesh, normals[:, 1])).values[bn]
    nx, ny = normals[:, 0], normals[:, 1]
    div = gx[:, 0] + gy[:, 1]
    normal_part = nx * (gx[:, 0] * nx + gx[:, 1] * ny) + ny * (
        gy[:, 0] * nx + gy[:, 1] * ny
    )
    return div - normal_part


def boundary_geometry(
    mesh: Mesh, method: CurvatureMethodName = "osculating"
) -> BoundaryGeometry:
    """Normals, lumped weights and curvature at the boundary nodes.

    Parameters
    ----------
    mesh : Mesh
        A valid mesh.
    method : {"osculating", "extension"}
        ``osculating`` uses the circle through three consecutive boundary
        nodes; ``extension`` extends the normal harmonically into the domain
        and evaluates div(n) - (grad(n) n).n on the boundary.

    Raises
    ------
    GeometryError
        If a boundary edge has zero length or curvature comes out non-finite.
    """
    lengths = mesh.edge_lengths
    if np.any(lengths <= 0):
        k = int(np.argmin(lengths))
        raise GeometryError(
            f"Boundary edge {k} {mesh.boundary_edges[k].tolist()} has zero length"
        )
    normals = mesh.boundary_normals
    if method == "osculating":
        curvature = _osculating_curvature(mesh)
    elif method == "extension":
        curvature = _extension_curvature(mesh, normals)
    else:
        raise ValueError(
            f"Unknown curvature method {method!r}; use 'osculating' or 'extension'"
        )
    if not np.all(np.isfinite(curvature)):
        raise GeometryError(f"Curvature ({method}) is not finite on the boundary")
    return BoundaryGeometry(
        normal=normals,
        weight=mesh.boundary_weights.copy(),
        curvature=curvature,
        method=method,
    )


def vector_values(mesh: Mesh, V: "VectorField | ArrayLike") -> FloatArray:
    field_mesh = getattr(V, "mesh", None)
    if field_mesh is not None and field_mesh is not mesh:
        raise FieldMismatchError("Vector field is defined on another mesh")
    values = np.asarray(getattr(V, "values", V), dtype=np.float64)
    if values.shape != (mesh.n_vertices, 2):
        raise FieldMismatchError(
            f"Vector field must have shape ({mesh.n_vertices}, 2), got {values.shape}"
        )
    return values


def deform_mesh(mesh: Mesh, V: "VectorField | ArrayLike", tau: float) -> Mesh:
    """Move every vertex x to x + tau V(x), keeping the connectivity.

    Raises
    ------
    MeshInversionError
        If some triangle ends up with non-positive area; ``min_area`` holds
        the smallest signed area so callers can backtrack ``tau``.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    values = vector_values(mesh, V)
    if tau == 0:
        return mesh
    moved = mesh.vertices + tau * values
    areas = _signed_areas(moved, mesh.triangles)
    worst = int(np.argmin(areas))
    if not areas[worst] > 0:
        raise MeshInversionError(
            f"Deformation with tau={tau:g} inverts triangle {worst} "
            f"(signed area {areas[worst]:.3e})",
            min_area=float(areas[worst]),
        )
    return Mesh(moved, mesh.triangles, mesh.boundary_edges, mesh.boundary_nodes)


def area(mesh: Mesh) -> float:
    return float(mesh.element_areas.sum())


def quality(mesh: Mesh) -> tuple[float, float]:
    """Worst-element metrics: (minimum angle in degrees, minimum area)."""
    p = mesh.vertices[mesh.triangles]
    angles = []
    for i in range(3):
        u = p[:, (i + 1) % 3] - p[:, i]
        w = p[:, (i + 2) % 3] - p[:, i]
        cos = np.einsum("ij,ij->i", u, w) / (
            np.linalg.norm(u, axis=1) * np.linalg.norm(w, axis=1)
        )
        angles.append(np.arccos(np.clip(cos, -1.0, 1.0)))
    min_angle = float(np.degrees(np.min(angles)))
    return min_angle, float(mesh.element_areas.min())


def diameter(mesh: Mesh) -> float:
    """Largest distance between two boundary nodes."""
    return float(pdist(mesh.vertices[mesh.boundary_nodes]).max())


def _ring_counts(n_theta: int, n_rings: int) -> list[int]:
    floor = min(n_theta, 6)
    counts = [
        max(floor, round(n_theta * k / n_rings)) for k in range(1, n_rings + 1)
    ]
    counts[-1] = n_theta
    return counts


def _zip_rings(
    inner: list[int], outer: list[int]
) -> list[tuple[int, int, int]]:
    """Triangulate the annulus between two rings that both start at angle 0."""
    mi, mo = len(inner), len(outer)
    triangles = []
    i = j = 0
    while i < mi or j < mo:
        advance_outer = i == mi or (j < mo and (j + 1) / mo < (i + 1) / mi)
        if advance_outer:
            triangles.append((inner[i % mi], outer[j], outer[(j + 1) % mo]))
            j += 1
        else:
            triangles.append((inner[i], outer[j % mo], inner[(i + 1) % mi]))
            i += 1
    return triangles


def generate_ellipse_mesh(
    a: float, b: float, n_theta: int, n_rings: int
) -> Mesh:
    """Structured mesh of the ellipse x^2/a^2 + y^2/b^2 <= 1.

    A center vertex is surrounded by ``n_rings`` concentric scaled rings;
    the outer ring carries exactly ``n_theta`` nodes on the ellipse and the
    inner rings are graded so that elements stay shape-regular.
    """
    if not (a > 0 and b > 0):
        raise MeshValidationError(
            f"Semi-axes must be positive, got a={a}, b={b}"
        )
    if n_theta < 4 or n_rings < 1:
        raise MeshValidationError(
            f"Need n_theta >= 4 and n_rings >= 1, got {n_theta}, {n_rings}"
        )
    points: list[tuple[float, float]] = [(0.0, 0.0)]
    rings: list[list[int]] = []
    for k, count in enumerate(_ring_counts(n_theta, n_rings), start=1):
        scale = k / n_rings
        theta = 2.0 * np.pi * np.arange(count) / count
        start = len(points)
        points.extend(
            zip(
                (a * scale * np.cos(theta)).tolist(),
                (b * scale * np.sin(theta)).tolist(),
                strict=True,
            )
        )
        rings.append(list(range(start, start + count)))

    first = rings[0]
    triangles = [
        (0, first[i], first[(i + 1) % len(first)]) for i in range(len(first))
    ]
    for inner, outer in zip(rings, rings[1:], strict=False):
        triangles.extend(_zip_rings(inner, outer))

    outer = rings[-1]
    edges = [(outer[i], outer[(i + 1) % len(outer)]) for i in range(len(outer))]
    mesh = Mesh.build(points, triangles, edges)
    logger.debug(
        f"Ellipse mesh a={a:g} b={b:g}: {mesh.n_vertices} vertices, "
        f"{mesh.n_triangles} triangles"
    )
    return mesh


def generate_rectangle_mesh(
    x0: float, y0: float, x1: float, y1: float, nx: int, ny: int
) -> Mesh:
    """Structured mesh of [x0, x1] x [y0, y1], each cell cut along a diagonal."""
    if not (x1 > x0 and y1 > y0):
        raise MeshValidationError("Rectangle needs x1 > x0 and y1 > y0")
    if nx < 1 or ny < 1:
        raise MeshValidationError(f"Need nx, ny >= 1, got {nx}, {ny}")
    xs, ys = np.meshgrid(np.linspace(x0, x1, nx + 1), np.linspace(y0, y1, ny + 1))
    vertices = np.column_stack((xs.ravel(), ys.ravel()))
    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    a = (j * (nx + 1) + i).ravel()
    b = a + 1
    c = b + nx + 1
    d = a + nx + 1
    triangles = np.concatenate(
        (np.column_stack((a, b, c)), np.column_stack((a, c, d)))
    )
    return Mesh.build(vertices, triangles)


def save_mesh(mesh: Mesh, path: Path | str) -> None:
    """Write the line-oriented text format (``nv nt nb`` header, 0-based)."""
    lines = [f"{mesh.n_vertices} {mesh.n_triangles} {mesh.n_boundary}"]
    lines.extend(f"{x:.17g} {y:.17g}" for x, y in mesh.vertices.tolist())
    lines.extend(f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist())
    lines.extend(f"{i} {j}" for i, j in mesh.boundary_edges.tolist())
    try:
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise OSError(f"Cannot write mesh to {path}: {e}") from e


def load_mesh(path: Path | str) -> Mesh:
    """Read a mesh in the text format written by :func:`save_mesh`.

    Raises
    ------
    MeshValidationError
        On malformed lines, wrong counts, or any topology violation.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise MeshValidationError(f"{path}: not a text mesh file: {e}") from e
    rows: list[tuple[int, list[str]]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if tokens:
            rows.append((lineno, tokens))
    if not rows:
        raise MeshValidationError(f"{path}: empty mesh file")

    def parse(
        row: tuple[int, list[str]], count: int, kind: type[int] | type[float]
    ) -> list[float] | list[int]:
        lineno, tokens = row
        if len(tokens) != count:
            raise MeshValidationError(
                f"{path}:{lineno}: expected {count} values, got {len(tokens)}"
            )
        try:
            return [kind(token) for token in tokens]
        except ValueError as e:
            raise MeshValidationError(f"{path}:{lineno}: {e}") from e

    nv, nt, nb = (int(value) for value in parse(rows[0], 3, int))
    if len(rows) - 1 != nv + nt + nb:
        raise MeshValidationError(
            f"{path}: header announces {nv + nt + nb} data lines, "
            f"found {len(rows) - 1}"
        )
    body = rows[1:]
    vertices = [parse(row, 2, float) for row in body[:nv]]
    triangles = [parse(row, 3, int) for row in body[nv : nv + nt]]
    edges = [parse(row, 2, int) for row in body[nv + nt :]]
    mesh = Mesh.build(
        np.asarray(vertices, dtype=np.float64).reshape(-1, 2),
        np.asarray(triangles, dtype=np.int64).reshape(-1, 3),
        np.asarray(edges, dtype=np.int64).reshape(-1, 2),
    )
    logger.info(f"Loaded mesh {path} ({mesh.n_vertices} vertices)")
    return mesh


