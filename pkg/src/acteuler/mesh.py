"""Triangle meshes: topology, generation, Gmsh import, uniform refinement.

A Triangulation stores cells with positive orientation plus a full facet
table.  Every facet carries a fixed unit normal: interior facets point from
the lower-indexed adjacent cell to the higher-indexed one, boundary facets
point outward.  Facet vertex pairs are stored with the lower vertex index
first, which fixes the tangential parametrization used by the velocity
degrees of freedom.

Boundary facets are labeled with one of the markers inflow, outflow, wall,
obstacle; interior facets carry the interior marker.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MARKER_CODES",
    "MARKER_NAMES",
    "MeshFormatError",
    "Triangulation",
    "MeshHierarchy",
    "build_triangulation",
    "generate_rectangle",
    "import_gmsh",
    "refine_uniform",
    "dump_mesh",
]

MARKER_CODES = {"interior": 0, "inflow": 1, "outflow": 2, "wall": 3, "obstacle": 4}
MARKER_NAMES = {v: k for k, v in MARKER_CODES.items()}


class MeshFormatError(ValueError):
    """Malformed or unsupported mesh input, with file location context."""


@dataclass
class Triangulation:
    """Conforming triangle mesh with facet topology.

    Attributes:
        vertices: (n, 2) float coordinates.
        cells: (m, 3) vertex indices, positively oriented.
        cell_facets: (m, 3) facet index opposite each local vertex.
        facet_vertices: (k, 2) vertex pairs, lower index first.
        facet_cells: (k, 2) adjacent cells (plus, minus); minus is -1 on
            the boundary and plus < minus holds in the interior.
        facet_normals: (k, 2) unit normals, plus-to-minus / outward.
        facet_lengths: (k,) facet lengths h_F.
        facet_markers: (k,) marker codes (see MARKER_CODES).
        cell_areas: (m,) positive cell areas.
    """

    vertices: np.ndarray
    cells: np.ndarray
    cell_facets: np.ndarray
    facet_vertices: np.ndarray
    facet_cells: np.ndarray
    facet_normals: np.ndarray
    facet_lengths: np.ndarray
    facet_markers: np.ndarray
    cell_areas: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facet_vertices.shape[0]

    @property
    def interior_facets(self) -> np.ndarray:
        return np.nonzero(self.facet_cells[:, 1] >= 0)[0]

    @property
    def boundary_facets(self) -> np.ndarray:
        return np.nonzero(self.facet_cells[:, 1] < 0)[0]

    def facets_with_marker(self, name: str) -> np.ndarray:
        return np.nonzero(self.facet_markers == MARKER_CODES[name])[0]

    def facet_midpoints(self) -> np.ndarray:
        v = self.vertices
        return 0.5 * (v[self.facet_vertices[:, 0]] + v[self.facet_vertices[:, 1]])

    def cell_centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def stats(self) -> dict:
        return {
            "n_vertices": self.n_vertices,
            "n_cells": self.n_cells,
            "n_facets": self.n_facets,
            "n_boundary_facets": int(self.boundary_facets.size),
            "h_min": float(self.facet_lengths.min()),
            "h_max": float(self.facet_lengths.max()),
            "area": float(self.cell_areas.sum()),
        }


def _signed_areas(vertices, cells):
    p = vertices[cells]
    return 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                  - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))


def build_triangulation(vertices, cells, boundary_marker_edges) -> Triangulation:
    """Assemble the facet topology for given cells and boundary labels.

    Args:
        vertices: (n, 2) array-like.
        cells: (m, 3) array-like of vertex indices; cells with negative
            orientation are flipped.
        boundary_marker_edges: iterable of (v0, v1, marker_code) for every
            boundary facet.  Boundary facets left unlabeled raise
            MeshFormatError.

    Returns:
        Triangulation with normals, lengths and markers populated.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    cells = np.ascontiguousarray(cells, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise MeshFormatError("vertices must be an (n, 2) array")
    if cells.ndim != 2 or cells.shape[1] != 3:
        raise MeshFormatError("cells must be an (m, 3) array")

    areas = _signed_areas(vertices, cells)
    flip = areas < 0.0
    if np.any(flip):
        cells = cells.copy()
        cells[flip] = cells[flip][:, [0, 2, 1]]
        areas = np.abs(areas)
    if np.any(areas <= 0.0):
        bad = int(np.nonzero(areas <= 0.0)[0][0])
        raise MeshFormatError(f"degenerate cell {bad} with zero area")

    # local edge e is opposite local vertex e
    edges = np.concatenate([cells[:, [1, 2]], cells[:, [2, 0]], cells[:, [0, 1]]])
    edges_sorted = np.sort(edges, axis=1)
    facet_vertices, inverse = np.unique(edges_sorted, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    n_facets = facet_vertices.shape[0]
    cell_facets = inverse.reshape(3, -1).T.copy()

    owner = np.arange(cells.shape[0])
    owners = np.concatenate([owner, owner, owner])
    facet_cells = np.full((n_facets, 2), -1, dtype=np.int64)
    order = np.argsort(inverse, kind="stable")
    sorted_facets = inverse[order]
    sorted_owners = owners[order]
    starts = np.searchsorted(sorted_facets, np.arange(n_facets), side="left")
    ends = np.searchsorted(sorted_facets, np.arange(n_facets), side="right")
    counts = ends - starts
    if np.any(counts > 2):
        bad = int(np.nonzero(counts > 2)[0][0])
        raise MeshFormatError(
            f"facet {tuple(facet_vertices[bad])} shared by more than two cells")
    first = sorted_owners[starts]
    facet_cells[:, 0] = first
    has_two = counts == 2
    second = sorted_owners[np.minimum(starts + 1, len(sorted_owners) - 1)]
    facet_cells[has_two, 1] = second[has_two]
    # plus side is the lower cell index
    swap = has_two & (facet_cells[:, 0] > facet_cells[:, 1])
    facet_cells[swap] = facet_cells[swap][:, ::-1]

    p0 = vertices[facet_vertices[:, 0]]
    p1 = vertices[facet_vertices[:, 1]]
    tangents = p1 - p0
    lengths = np.hypot(tangents[:, 0], tangents[:, 1])
    if np.any(lengths <= 0.0):
        raise MeshFormatError("zero-length facet")
    tangents /= lengths[:, None]
    normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])

    centroids = vertices[cells].mean(axis=1)
    mid = 0.5 * (p0 + p1)
    plus_c = centroids[facet_cells[:, 0]]
    # interior: orient plus -> minus; boundary: orient away from plus cell
    target = np.where(has_two[:, None],
                      centroids[np.maximum(facet_cells[:, 1], 0)] - plus_c,
                      mid - plus_c)
    wrong = np.einsum("ij,ij->i", normals, target) < 0.0
    normals[wrong] *= -1.0

    markers = np.full(n_facets, MARKER_CODES["interior"], dtype=np.int64)
    lookup = {}
    for v0, v1, code in boundary_marker_edges:
        lookup[(min(v0, v1), max(v0, v1))] = int(code)
    boundary = np.nonzero(~has_two)[0]
    for f in boundary:
        key = (int(facet_vertices[f, 0]), int(facet_vertices[f, 1]))
        if key not in lookup:
            raise MeshFormatError(
                f"boundary facet {key} near {tuple(np.round(mid[f], 6))} "
                "has no marker")
        markers[f] = lookup[key]
    if np.any(markers[has_two] != MARKER_CODES["interior"]):
        bad = int(np.nonzero(has_two & (markers != MARKER_CODES["interior"]))[0][0])
        raise MeshFormatError(f"interior facet {bad} carries a boundary marker")

    return Triangulation(
        vertices=vertices, cells=cells, cell_facets=cell_facets,
        facet_vertices=facet_vertices, facet_cells=facet_cells,
        facet_normals=normals, facet_lengths=lengths,
        facet_markers=markers, cell_areas=areas,
    )


def generate_rectangle(nx, ny, x_range=(0.0, 1.0), y_range=(0.0, 1.0),
                       markers=None, split="diagonal") -> Triangulation:
    """Structured triangulation of a rectangle.

    Args:
        nx, ny: cell counts per direction (quads before splitting).
        x_range, y_range: rectangle extents.
        markers: dict mapping side names left/right/bottom/top to marker
            names; default {left: inflow, right: outflow, bottom: wall,
            top: wall}.
        split: "diagonal" (2 triangles per quad) or "crossed" (4 per quad,
            center vertex added).

    Returns:
        Triangulation with 2*nx*ny cells ("diagonal") or 4*nx*ny ("crossed").
    """
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be at least 1")
    if markers is None:
        markers = {"left": "inflow", "right": "outflow",
                   "bottom": "wall", "top": "wall"}
    xs = np.linspace(x_range[0], x_range[1], nx + 1)
    ys = np.linspace(y_range[0], y_range[1], ny + 1)
    xg, yg = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xg.ravel(), yg.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    if split == "diagonal":
        for i in range(nx):
            for j in range(ny):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                cells.append((a, b, c))
                cells.append((a, c, d))
    elif split == "crossed":
        centers = []
        for i in range(nx):
            for j in range(ny):
                centers.append([0.5 * (xs[i] + xs[i + 1]),
                                0.5 * (ys[j] + ys[j + 1])])
        base = vertices.shape[0]
        vertices = np.vstack([vertices, np.array(centers)])
        for i in range(nx):
            for j in range(ny):
                a, b = vid(i, j), vid(i + 1, j)
                c, d = vid(i + 1, j + 1), vid(i, j + 1)
                m = base + i * ny + j
                cells += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
    else:
        raise ValueError(f"unknown split {split!r}")

    sides = {
        "left": [(vid(0, j), vid(0, j + 1)) for j in range(ny)],
        "right": [(vid(nx, j), vid(nx, j + 1)) for j in range(ny)],
        "bottom": [(vid(i, 0), vid(i + 1, 0)) for i in range(nx)],
        "top": [(vid(i, ny), vid(i + 1, ny)) for i in range(nx)],
    }
    labeled = []
    for side, seglist in sides.items():
        code = MARKER_CODES[markers[side]]
        labeled += [(a, b, code) for a, b in seglist]
    return build_triangulation(vertices, np.array(cells), labeled)


def import_gmsh(path, tag_map) -> Triangulation:
    """Read a Gmsh ASCII v2.2 file.

    Supports 2-node lines (boundary markers through physical tags) and
    3-node triangles.  Any other element type among the 2D cells raises
    MeshFormatError with the offending line number.

    Args:
        path: file path.
        tag_map: dict physical tag (int) -> marker name (str).

    Returns:
        Triangulation.
    """
    with open(path) as fh:
        lines = [ln.strip() for ln in fh]

    def find_section(name):
        try:
            start = lines.index(f"${name}")
            end = lines.index(f"$End{name}")
        except ValueError:
            raise MeshFormatError(f"{path}: missing ${name} section") from None
        return start, end

    s, _ = find_section("MeshFormat")
    fmt = lines[s + 1].split()
    if not fmt or not fmt[0].startswith("2.2"):
        raise MeshFormatError(f"{path}:{s + 2}: unsupported format {fmt[:1]}, "
                              "expected ASCII 2.2")
    if len(fmt) > 1 and fmt[1] != "0":
        raise MeshFormatError(f"{path}:{s + 2}: binary Gmsh files not supported")

    s, e = find_section("Nodes")
    try:
        n_nodes = int(lines[s + 1])
    except ValueError:
        raise MeshFormatError(f"{path}:{s + 2}: bad node count") from None
    if e - s - 2 != n_nodes:
        raise MeshFormatError(f"{path}: $Nodes declares {n_nodes} nodes but "
                              f"contains {e - s - 2}")
    ids = np.empty(n_nodes, dtype=np.int64)
    coords = np.empty((n_nodes, 2), dtype=float)
    for i, ln in enumerate(lines[s + 2:e]):
        parts = ln.split()
        if len(parts) < 4:
            raise MeshFormatError(f"{path}:{s + 3 + i}: bad node line {ln!r}")
        ids[i] = int(parts[0])
        coords[i] = [float(parts[1]), float(parts[2])]
    id_to_index = {int(g): i for i, g in enumerate(ids)}

    s, e = find_section("Elements")
    try:
        n_elems = int(lines[s + 1])
    except ValueError:
        raise MeshFormatError(f"{path}:{s + 2}: bad element count") from None
    if e - s - 2 != n_elems:
        raise MeshFormatError(f"{path}: $Elements declares {n_elems} elements "
                              f"but contains {e - s - 2}")
    cells = []
    marker_edges = []
    for i, ln in enumerate(lines[s + 2:e]):
        lineno = s + 3 + i
        parts = ln.split()
        if len(parts) < 3:
            raise MeshFormatError(f"{path}:{lineno}: bad element line {ln!r}")
        etype = int(parts[1])
        n_tags = int(parts[2])
        tags = [int(t) for t in parts[3:3 + n_tags]]
        nodes = [int(t) for t in parts[3 + n_tags:]]
        if etype == 1:
            if len(nodes) != 2:
                raise MeshFormatError(f"{path}:{lineno}: line element needs "
                                      "2 nodes")
            phys = tags[0] if tags else None
            if phys is None or phys not in tag_map:
                raise MeshFormatError(
                    f"{path}:{lineno}: boundary line with unmapped physical "
                    f"tag {phys}")
            name = tag_map[phys]
            if name not in MARKER_CODES or name == "interior":
                raise MeshFormatError(
                    f"{path}:{lineno}: tag {phys} maps to invalid marker "
                    f"{name!r}")
            marker_edges.append((id_to_index[nodes[0]], id_to_index[nodes[1]],
                                 MARKER_CODES[name]))
        elif etype == 2:
            if len(nodes) != 3:
                raise MeshFormatError(f"{path}:{lineno}: triangle needs 3 nodes")
            cells.append([id_to_index[n] for n in nodes])
        elif etype == 15:
            continue  # isolated point elements carry no mesh content
        else:
            raise MeshFormatError(
                f"{path}:{lineno}: unsupported element type {etype} "
                "(only 2-node lines and 3-node triangles)")
    if not cells:
        raise MeshFormatError(f"{path}: no triangles found")

    # drop nodes not referenced by any triangle (gmsh sometimes emits extras)
    cells = np.asarray(cells, dtype=np.int64)
    used = np.zeros(n_nodes, dtype=bool)
    used[cells.ravel()] = True
    for v0, v1, _ in marker_edges:
        if not (used[v0] and used[v1]):
            raise MeshFormatError(f"{path}: boundary line references a node "
                                  "outside the triangulation")
    renum = -np.ones(n_nodes, dtype=np.int64)
    renum[used] = np.arange(int(used.sum()))
    cells = renum[cells]
    marker_edges = [(int(renum[a]), int(renum[b]), c) for a, b, c in marker_edges]
    try:
        return build_triangulation(coords[used], cells, marker_edges)
    except MeshFormatError as err:
        raise MeshFormatError(f"{path}: {err}") from None


def refine_uniform(tri: Triangulation):
    """Split every cell into four via facet midpoints.

    Straight facets only: midpoints are arithmetic means, no boundary
    reprojection.  Child boundary facets inherit the parent marker.

    Returns:
        (fine Triangulation, parent_cells array mapping child -> parent).
    """
    nv = tri.n_vertices
    mid = tri.facet_midpoints()
    vertices = np.vstack([tri.vertices, mid])

    # midpoint vertex of facet f is nv + f; local facet e is opposite vertex e
    m = nv + tri.cell_facets
    a, b, c = tri.cells[:, 0], tri.cells[:, 1], tri.cells[:, 2]
    ma, mb, mc = m[:, 0], m[:, 1], m[:, 2]
    children = np.empty((4 * tri.n_cells, 3), dtype=np.int64)
    children[0::4] = np.column_stack([a, mc, mb])
    children[1::4] = np.column_stack([mc, b, ma])
    children[2::4] = np.column_stack([mb, ma, c])
    children[3::4] = np.column_stack([mc, ma, mb])
    parents = np.repeat(np.arange(tri.n_cells), 4)

    marker_edges = []
    for f in tri.boundary_facets:
        v0, v1 = tri.facet_vertices[f]
        code = int(tri.facet_markers[f])
        marker_edges.append((int(v0), nv + int(f), code))
        marker_edges.append((nv + int(f), int(v1), code))
    fine = build_triangulation(vertices, children, marker_edges)
    return fine, parents


@dataclass
class MeshHierarchy:
    """Nested sequence of uniformly refined meshes with parent maps."""

    levels: list = field(default_factory=list)
    parent_cells: list = field(default_factory=list)  # entry i maps level i+1 -> i

    @classmethod
    def build(cls, base: Triangulation, n_refinements: int) -> "MeshHierarchy":
        levels = [base]
        parents = []
        for _ in range(n_refinements):
            fine, par = refine_uniform(levels[-1])
            levels.append(fine)
            parents.append(par)
        return cls(levels=levels, parent_cells=parents)

    def __len__(self):
        return len(self.levels)


def export_gmsh(tri: Triangulation, path, tag_map=None):
    """Write the mesh as Gmsh ASCII v2.2 (inverse of import_gmsh).

    Args:
        tri: mesh to write.
        tag_map: dict physical tag -> marker name; defaults to
            {1: inflow, 2: outflow, 3: wall, 4: obstacle}.
    """
    if tag_map is None:
        tag_map = {1: "inflow", 2: "outflow", 3: "wall", 4: "obstacle"}
    code_to_tag = {MARKER_CODES[name]: tag for tag, name in tag_map.items()}
    bnd = tri.boundary_facets
    with open(path, "w") as fh:
        fh.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
        fh.write(f"$Nodes\n{tri.n_vertices}\n")
        for i, (x, y) in enumerate(tri.vertices, start=1):
            fh.write(f"{i} {x:.17g} {y:.17g} 0\n")
        fh.write("$EndNodes\n")
        fh.write(f"$Elements\n{bnd.size + tri.n_cells}\n")
        eid = 1
        for f in bnd:
            tag = code_to_tag[int(tri.facet_markers[f])]
            v0, v1 = tri.facet_vertices[f] + 1
            fh.write(f"{eid} 1 2 {tag} {tag} {v0} {v1}\n")
            eid += 1
        for a, b, c in tri.cells + 1:
            fh.write(f"{eid} 2 2 0 0 {a} {b} {c}\n")
            eid += 1
        fh.write("$EndElements\n")


def dump_mesh(tri: Triangulation, path):
    """Native plain-text dump: vertices, cells, boundary facet markers."""
    with open(path, "w") as fh:
        fh.write(f"vertices {tri.n_vertices}\n")
        for x, y in tri.vertices:
            fh.write(f"{x:.17g} {y:.17g}\n")
        fh.write(f"cells {tri.n_cells}\n")
        for a, b, c in tri.cells:
            fh.write(f"{a} {b} {c}\n")
        bnd = tri.boundary_facets
        fh.write(f"boundary_facets {bnd.size}\n")
        for f in bnd:
            v0, v1 = tri.facet_vertices[f]
            fh.write(f"{v0} {v1} {MARKER_NAMES[int(tri.facet_markers[f])]}\n")
