"""Differentiable marching cubes.

The forward pass is the classic table-driven marching cubes with one shared
vertex per crossed grid edge. Each vertex remembers the edge it came from and
its interpolation weight, which is all the backward pass needs: the gradient on
a vertex is pushed onto the scalar field along the inverse surface normal and
split between the two edge endpoints.

Sign convention: values below the iso level are *inside*. Faces are wound so
that ``cross(b - a, c - a)`` points toward increasing field values (outward).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ._mc_tables import CORNERS, EDGE_CORNERS, TRIANGLES
from .errors import EmptySurfaceError

# per-edge axis (0=x, 1=y, 2=z) and lower-corner offset
_EDGE_AXIS = np.argmax(CORNERS[EDGE_CORNERS[:, 1]] - CORNERS[EDGE_CORNERS[:, 0]], axis=1)
_EDGE_ORIGIN = CORNERS[EDGE_CORNERS[:, 0]]
_N_TRIS = (TRIANGLES >= 0).sum(axis=1) // 3


@dataclass
class TriangleMesh:
    """Triangle mesh with optional marching-cubes provenance.

    ``edge_nodes[v]`` holds the flat grid indices of the two endpoints of the
    edge vertex ``v`` was created on and ``edge_weights[v]`` its position along
    that edge, so ``v = origin + spacing * ((1 - w) * A + w * B)``.
    """

    vertices: np.ndarray
    faces: np.ndarray
    vertex_normals: np.ndarray | None = None
    edge_nodes: np.ndarray | None = None
    edge_weights: np.ndarray | None = None
    grid_shape: tuple[int, int, int] | None = None

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def face_normals(self) -> np.ndarray:
        """Unnormalized face normals (twice the face area in length)."""
        a, b, c = (self.vertices[self.faces[:, k]] for k in range(3))
        return np.cross(b - a, c - a)

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_normals(), axis=1)

    def transformed(self, offset, scale) -> "TriangleMesh":
        """Axis-aligned affine map ``x -> offset + scale * x``.

        Normals use the inverse-transpose of the scale. Provenance is dropped
        from the copy: it only refers to the grid frame.
        """
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (3,))
        verts = np.asarray(offset, dtype=float) + self.vertices * scale
        normals = None
        if self.vertex_normals is not None:
            normals = self.vertex_normals / scale
            normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)
        faces = self.faces
        if np.prod(np.sign(scale)) < 0:
            faces = faces[:, ::-1]
        return TriangleMesh(verts, faces, normals)


def marching_cubes(
    phi: np.ndarray,
    iso: float = 0.0,
    origin=0.0,
    spacing=None,
) -> TriangleMesh:
    """Extract the ``iso`` level set of a 3D grid.

    Node ``(i, j, k)`` sits at ``origin + spacing * (i, j, k)``; ``spacing``
    defaults to ``1 / r`` along each axis so a periodic ``r^3`` grid maps onto
    the unit cube. Only the ``(r-1)^3`` interior cells are polygonized.
    """
    phi = np.asarray(phi)
    if phi.ndim != 3 or min(phi.shape) < 2:
        raise ValueError("phi must be a 3D grid with at least 2 nodes per axis")
    if not np.all(np.isfinite(phi)):
        raise ValueError("phi contains non-finite values")
    nx, ny, nz = phi.shape
    if spacing is None:
        spacing = 1.0 / np.array(phi.shape, dtype=float)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    origin = np.broadcast_to(np.asarray(origin, dtype=float), (3,))

    inside = phi < iso
    case = np.zeros((nx - 1, ny - 1, nz - 1), dtype=np.int64)
    for k, (ox, oy, oz) in enumerate(CORNERS):
        case |= inside[ox : nx - 1 + ox, oy : ny - 1 + oy, oz : nz - 1 + oz].astype(np.int64) << k
    active = np.flatnonzero((case != 0) & (case != 255))
    if active.size == 0:
        raise EmptySurfaceError("no iso-surface crossing in grid")

    cell_case = case.ravel()[active]
    ci, cj, ck = np.unravel_index(active, case.shape)
    ntri = _N_TRIS[cell_case]
    # one row per emitted triangle, in scan order of cells
    tri_cell = np.repeat(np.arange(active.size), ntri)
    tri_slot = np.arange(tri_cell.size) - np.repeat(np.cumsum(ntri) - ntri, ntri)
    edges = TRIANGLES[cell_case[tri_cell][:, None], 3 * tri_slot[:, None] + np.arange(3)]

    # global edge id = 3 * (flat index of lower node) + axis
    lo = _EDGE_ORIGIN[edges]
    gi = ci[tri_cell][:, None] + lo[..., 0]
    gj = cj[tri_cell][:, None] + lo[..., 1]
    gk = ck[tri_cell][:, None] + lo[..., 2]
    node_a = (gi * ny + gj) * nz + gk
    axis = _EDGE_AXIS[edges]
    edge_id = 3 * node_a + axis

    uniq, inverse = np.unique(edge_id.ravel(), return_inverse=True)
    faces = inverse.reshape(-1, 3).astype(np.int64)

    a = uniq // 3
    ax = uniq % 3
    stride = np.array([ny * nz, nz, 1], dtype=np.int64)
    b = a + stride[ax]
    flat = phi.ravel()
    fa, fb = flat[a], flat[b]
    w = (iso - fa) / (fb - fa)

    verts = _provenance_positions(a, b, w, phi.shape, origin, spacing)

    grad = np.stack(np.gradient(phi), axis=-1).reshape(-1, 3) / spacing
    normals = (1.0 - w)[:, None] * grad[a] + w[:, None] * grad[b]
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-300)

    mesh = TriangleMesh(
        vertices=verts,
        faces=faces,
        vertex_normals=normals,
        edge_nodes=np.stack([a, b], axis=1),
        edge_weights=w,
        grid_shape=phi.shape,
    )
    return _orient_outward(mesh)


def _provenance_positions(a, b, w, shape, origin, spacing):
    ia = np.stack(np.unravel_index(a, shape), axis=1).astype(float)
    ib = np.stack(np.unravel_index(b, shape), axis=1).astype(float)
    return origin + spacing * ((1.0 - w)[:, None] * ia + w[:, None] * ib)


def vertices_from_provenance(mesh: TriangleMesh, origin=0.0, spacing=None) -> np.ndarray:
    """Recompute vertex positions from the stored edges and weights."""
    if mesh.edge_nodes is None:
        raise ValueError("mesh has no marching-cubes provenance")
    shape = mesh.grid_shape
    if spacing is None:
        spacing = 1.0 / np.array(shape, dtype=float)
    spacing = np.broadcast_to(np.asarray(spacing, dtype=float), (3,))
    origin = np.broadcast_to(np.asarray(origin, dtype=float), (3,))
    return _provenance_positions(
        mesh.edge_nodes[:, 0], mesh.edge_nodes[:, 1], mesh.edge_weights, shape, origin, spacing
    )


def _orient_outward(mesh: TriangleMesh) -> TriangleMesh:
    # The table winding is uniform across cases; flip it globally if it disagrees
    # with the field gradient. Sum over faces so a few sliver faces cannot decide.
    fn = mesh.face_normals()
    g = mesh.vertex_normals[mesh.faces].sum(axis=1)
    if np.sum(fn * g) < 0:
        mesh = replace(mesh, faces=np.ascontiguousarray(mesh.faces[:, ::-1]))
    return mesh


def mc_backward(mesh: TriangleMesh, dL_dV: np.ndarray) -> np.ndarray:
    """Map vertex gradients onto the grid through ``dV/dphi = -n``.

    Each vertex contributes ``-(dL/dV . n)`` split ``(1 - w, w)`` between its
    two edge endpoints.
    """
    if mesh.edge_nodes is None or mesh.edge_weights is None:
        raise ValueError("mesh has no marching-cubes provenance")
    dL_dV = np.asarray(dL_dV, dtype=float)
    if dL_dV.shape != mesh.vertices.shape:
        raise ValueError("dL_dV must match the vertex array shape")
    g = -np.einsum("ij,ij->i", dL_dV, mesh.vertex_normals)
    w = mesh.edge_weights
    size = int(np.prod(mesh.grid_shape))
    out = np.bincount(mesh.edge_nodes[:, 0], weights=(1.0 - w) * g, minlength=size)
    out += np.bincount(mesh.edge_nodes[:, 1], weights=w * g, minlength=size)
    return out.reshape(mesh.grid_shape)


@dataclass
class WatertightReport:
    is_watertight: bool
    boundary_edge_count: int
    euler_characteristic: int
    n_components: int


def watertight_check(mesh: TriangleMesh) -> WatertightReport:
    """Count edge incidences; watertight iff every edge has exactly two faces."""
    f = np.asarray(mesh.faces)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    n_edges = counts.size
    used = np.unique(f)
    n_vertices = used.size
    chi = n_vertices - n_edges + len(f)
    if len(f):
        graph = coo_matrix(
            (np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(mesh.n_vertices, mesh.n_vertices)
        )
        n_comp, labels = connected_components(graph, directed=False)
        n_comp = np.unique(labels[used]).size
    else:
        n_comp = 0
    return WatertightReport(
        is_watertight=bool(len(f) > 0 and np.all(counts == 2)),
        boundary_edge_count=int(np.sum(counts == 1)),
        euler_characteristic=int(chi),
        n_components=int(n_comp),
    )


def component_euler(mesh: TriangleMesh) -> list[int]:
    """Euler characteristic of each connected component."""
    f = np.asarray(mesh.faces)
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e.sort(axis=1)
    graph = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(mesh.n_vertices,) * 2)
    _, labels = connected_components(graph, directed=False)
    ue = np.unique(e, axis=0)
    out = []
    for lab in np.unique(labels[np.unique(f)]):
        nv = np.sum(labels[np.unique(f)] == lab)
        ne = np.sum(labels[ue[:, 0]] == lab)
        nf = np.sum(labels[f[:, 0]] == lab)
        out.append(int(nv - ne + nf))
    return out
