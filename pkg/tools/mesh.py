"""Tetrahedral meshes with tagged boundary faces and a marked design region."""

import logging
from dataclasses import dataclass
from enum import IntEnum
from itertools import permutations
from pathlib import Path
from typing import Dict, Sequence, Union

import numpy as np

from utils.reporting import atomic_write_text

logger = logging.getLogger(__name__)

MESH_HEADER = "TETMESH v1"


class MeshError(ValueError):
    """Raised when a mesh violates one of its structural invariants."""


class MeshFormatError(MeshError):
    """Raised by the mesh reader; ``line`` is the 1-based offending line."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class BoundaryTag(IntEnum):
    DIRICHLET = 0
    CONTROL = 1
    INSULATED = 2

    @property
    def word(self) -> str:
        return self.name.lower()

    @classmethod
    def from_word(cls, word: str) -> "BoundaryTag":
        try:
            return cls[word.upper()]
        except KeyError:
            raise ValueError(f"unknown boundary tag '{word}'") from None


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p = vertices[tets]
    edges = p[:, 1:, :] - p[:, :1, :]
    return np.linalg.det(edges) / 6.0


def triangle_areas(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    p = vertices[faces]
    return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def topological_boundary(tets: np.ndarray) -> np.ndarray:
    """Faces (sorted vertex triples, lexicographic order) owned by exactly one tet."""
    local = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
    all_faces = np.sort(tets[:, local].reshape(-1, 3), axis=1)
    unique, counts = np.unique(all_faces, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise MeshError("a face is shared by more than two tetrahedra")
    return unique[counts == 1]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable tetrahedral mesh.

    Boundary faces are stored as sorted vertex triples in lexicographic
    order, with one ``BoundaryTag`` value per face. ``design_cells`` lists the
    tetrahedra of the design region in increasing order.
    """

    vertices: np.ndarray
    tets: np.ndarray
    faces: np.ndarray
    face_tags: np.ndarray
    design_cells: np.ndarray

    def __post_init__(self):
        vertices = np.ascontiguousarray(self.vertices, dtype=float).reshape(-1, 3)
        tets = np.ascontiguousarray(self.tets, dtype=np.int64).reshape(-1, 4)
        faces = np.sort(np.asarray(self.faces, dtype=np.int64).reshape(-1, 3), axis=1)
        tags = np.asarray(self.face_tags, dtype=np.int8).reshape(-1)
        design = np.asarray(self.design_cells, dtype=np.int64).reshape(-1)

        order = np.lexsort(faces.T[::-1])
        faces, tags = faces[order], tags[order]
        design = np.unique(design)

        for name, array in (("vertices", vertices), ("tets", tets), ("faces", faces),
                            ("face_tags", tags), ("design_cells", design)):
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        self._validate()

    def _validate(self):
        n = len(self.vertices)
        if not np.all(np.isfinite(self.vertices)):
            raise MeshError("vertex coordinates must be finite")
        if len(self.tets) == 0:
            raise MeshError("mesh has no tetrahedra")
        if self.tets.min() < 0 or self.tets.max() >= n:
            raise MeshError("tetrahedron references a vertex out of range")
        volumes = signed_volumes(self.vertices, self.tets)
        bad = np.flatnonzero(volumes <= 0.0)
        if bad.size:
            raise MeshError(f"inverted element: tet {bad[0]} has signed volume {volumes[bad[0]]:.3e}")
        if len(self.faces) != len(self.face_tags):
            raise MeshError("every boundary face needs exactly one tag")
        if len(self.face_tags) and not np.isin(self.face_tags, [t.value for t in BoundaryTag]).all():
            raise MeshError("unknown boundary tag value")
        boundary = topological_boundary(self.tets)
        if boundary.shape != self.faces.shape or not np.array_equal(boundary, self.faces):
            raise MeshError("boundary faces do not match the topological boundary of the tetrahedra")
        if self.design_cells.size and (self.design_cells[0] < 0 or self.design_cells[-1] >= len(self.tets)):
            raise MeshError("design cell index out of range")

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    def faces_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return self.faces[self.face_tags == tag]

    def vertices_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        return np.unique(self.faces_with_tag(tag))

    def scaled(self, factor: float) -> "Mesh":
        """Copy of the mesh with all coordinates multiplied by ``factor``."""
        if not factor > 0.0:
            raise MeshError(f"scale factor must be positive, got {factor}")
        return Mesh(self.vertices * factor, self.tets, self.faces, self.face_tags, self.design_cells)

    def equals(self, other: "Mesh") -> bool:
        return all(
            np.array_equal(getattr(self, name), getattr(other, name))
            for name in ("vertices", "tets", "faces", "face_tags", "design_cells")
        )


def build_box_mesh(
    nx: int,
    ny: int,
    nz: int,
    dims: Sequence[float],
    contact_fraction: float,
    design_depth: float,
) -> Mesh:
    """Structured box [0,Lx]×[0,Ly]×[0,Lz] with six Kuhn tetrahedra per cell.

    On the top face, triangles whose centroid lies left of
    ``contact_fraction·Lx`` form the control contact and those right of
    ``(1 − contact_fraction)·Lx`` the grounded contact; every other boundary
    face is insulated. The design region holds the tetrahedra whose centroid
    lies in the upper ``design_depth`` slab between the two contacts.
    """
    if min(nx, ny, nz) < 1:
        raise MeshError(f"cell counts must be at least 1, got {(nx, ny, nz)}")
    lx, ly, lz = (float(d) for d in dims)
    if not all(np.isfinite(d) and d > 0.0 for d in (lx, ly, lz)):
        raise MeshError(f"box dimensions must be positive, got {tuple(dims)}")
    if not 0.0 < contact_fraction < 1.0 or not 0.0 < design_depth < 1.0:
        raise MeshError("contact_fraction and design_depth must lie in (0, 1)")

    xs, ys, zs = np.linspace(0.0, lx, nx + 1), np.linspace(0.0, ly, ny + 1), np.linspace(0.0, lz, nz + 1)
    gx, gy, gz = np.meshgrid(xs, ys, zs, indexing="ij")
    vertices = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    ci, cj, ck = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz), indexing="ij")
    ci, cj, ck = ci.ravel(), cj.ravel(), ck.ravel()

    tets = []
    for perm in permutations(range(3)):
        corner = np.zeros((len(ci), 3), dtype=np.int64)
        path = [vid(ci, cj, ck)]
        for axis in perm:
            corner[:, axis] += 1
            path.append(vid(ci + corner[:, 0], cj + corner[:, 1], ck + corner[:, 2]))
        tets.append(np.column_stack(path))
    # cell-major ordering: the six tets of a cell are contiguous
    tets = np.stack(tets, axis=1).reshape(-1, 4)

    volumes = signed_volumes(vertices, tets)
    flip = volumes < 0.0
    tets[flip, 2], tets[flip, 3] = tets[flip, 3].copy(), tets[flip, 2].copy()

    faces = topological_boundary(tets)
    centroids = vertices[faces].mean(axis=1)
    on_top = np.all(np.isclose(vertices[faces][:, :, 2], lz), axis=1)
    tags = np.full(len(faces), BoundaryTag.INSULATED, dtype=np.int8)
    tags[on_top & (centroids[:, 0] < contact_fraction * lx)] = BoundaryTag.CONTROL
    tags[on_top & (centroids[:, 0] > (1.0 - contact_fraction) * lx)] = BoundaryTag.DIRICHLET

    tet_centroids = vertices[tets].mean(axis=1)
    design = np.flatnonzero(
        (tet_centroids[:, 2] > (1.0 - design_depth) * lz)
        & (tet_centroids[:, 0] >= contact_fraction * lx)
        & (tet_centroids[:, 0] <= (1.0 - contact_fraction) * lx)
    )

    mesh = Mesh(vertices, tets, faces, tags, design)
    for tag in (BoundaryTag.CONTROL, BoundaryTag.DIRICHLET):
        if not np.any(mesh.face_tags == tag):
            logger.warning(f"Box mesh {(nx, ny, nz)} has no {tag.word} faces at contact_fraction={contact_fraction}")
    logger.info(
        f"Built box mesh {(nx, ny, nz)}: {mesh.n_vertices} vertices, {mesh.n_tets} tets, "
        f"{len(mesh.faces)} boundary faces, {mesh.design_cells.size} design cells"
    )
    return mesh


def save_mesh(mesh: Mesh, path: Union[str, Path]) -> None:
    lines = [MESH_HEADER, f"vertices {mesh.n_vertices}"]
    lines += [" ".join(f"{c:.17g}" for c in v) for v in mesh.vertices]
    lines.append(f"tets {mesh.n_tets}")
    lines += [" ".join(str(i) for i in t) for t in mesh.tets]
    lines.append(f"faces {len(mesh.faces)}")
    lines += [f"{f[0]} {f[1]} {f[2]} {BoundaryTag(int(t)).word}" for f, t in zip(mesh.faces, mesh.face_tags)]
    lines.append(f"design {mesh.design_cells.size}")
    lines += [str(c) for c in mesh.design_cells]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_mesh(path: Union[str, Path]) -> Mesh:
    """Read a mesh in the ``TETMESH v1`` ASCII format.

    Raises MeshFormatError naming the line for malformed counts, out-of-range
    indices, unknown tags and inverted elements.
    """
    with open(path, "r", encoding="utf-8") as handle:
        raw = handle.read().splitlines()
    rows = iter(enumerate(raw, start=1))
    last_line = len(raw)

    def next_row():
        for number, text in rows:
            text = text.split("#", 1)[0].strip()
            if text:
                return number, text.split()
        raise MeshFormatError("unexpected end of file", last_line + 1)

    def section(keyword):
        number, tokens = next_row()
        if len(tokens) != 2 or tokens[0] != keyword:
            raise MeshFormatError(f"expected '{keyword} <count>'", number)
        try:
            count = int(tokens[1])
        except ValueError:
            raise MeshFormatError(f"malformed {keyword} count '{tokens[1]}'", number) from None
        if count < 0:
            raise MeshFormatError(f"negative {keyword} count", number)
        return count

    def integers(tokens, width, number):
        if len(tokens) != width:
            raise MeshFormatError(f"expected {width} indices, got {len(tokens)}", number)
        try:
            return [int(t) for t in tokens]
        except ValueError:
            raise MeshFormatError("malformed index", number) from None

    number, tokens = next_row()
    if " ".join(tokens) != MESH_HEADER:
        raise MeshFormatError(f"missing '{MESH_HEADER}' header", number)

    n_vertices = section("vertices")
    vertices = np.empty((n_vertices, 3))
    for i in range(n_vertices):
        number, tokens = next_row()
        if len(tokens) != 3:
            raise MeshFormatError(f"expected 3 coordinates, got {len(tokens)}", number)
        try:
            vertices[i] = [float(t) for t in tokens]
        except ValueError:
            raise MeshFormatError("malformed coordinate", number) from None

    n_tets = section("tets")
    tets = np.empty((n_tets, 4), dtype=np.int64)
    for i in range(n_tets):
        number, tokens = next_row()
        tet = integers(tokens, 4, number)
        if min(tet) < 0 or max(tet) >= n_vertices:
            raise MeshFormatError(f"vertex index out of range [0, {n_vertices})", number)
        tets[i] = tet
        if signed_volumes(vertices, tets[i:i + 1])[0] <= 0.0:
            raise MeshFormatError("inverted element", number)

    n_faces = section("faces")
    faces = np.empty((n_faces, 3), dtype=np.int64)
    tags = np.empty(n_faces, dtype=np.int8)
    for i in range(n_faces):
        number, tokens = next_row()
        if len(tokens) != 4:
            raise MeshFormatError("expected 3 indices and a tag", number)
        face = integers(tokens[:3], 3, number)
        if min(face) < 0 or max(face) >= n_vertices:
            raise MeshFormatError(f"vertex index out of range [0, {n_vertices})", number)
        try:
            tags[i] = BoundaryTag.from_word(tokens[3])
        except ValueError as exc:
            raise MeshFormatError(str(exc), number) from None
        faces[i] = face

    n_design = section("design")
    design = np.empty(n_design, dtype=np.int64)
    for i in range(n_design):
        number, tokens = next_row()
        (cell,) = integers(tokens, 1, number)
        if not 0 <= cell < n_tets:
            raise MeshFormatError(f"design cell out of range [0, {n_tets})", number)
        design[i] = cell

    try:
        return Mesh(vertices, tets, faces, tags, design)
    except MeshError as exc:
        raise MeshFormatError(str(exc), last_line) from exc


def mesh_measures(mesh: Mesh) -> Dict[str, object]:
    volumes = signed_volumes(mesh.vertices, mesh.tets)
    areas = triangle_areas(mesh.vertices, mesh.faces)
    return {
        "volume": float(volumes.sum()),
        "boundary_area": float(areas.sum()),
        "area_per_tag": {tag.word: float(areas[mesh.face_tags == tag].sum()) for tag in BoundaryTag},
        "design_volume": float(volumes[mesh.design_cells].sum()),
        "n_vertices": mesh.n_vertices,
        "n_tets": mesh.n_tets,
        "n_boundary_faces": int(len(mesh.faces)),
    }
