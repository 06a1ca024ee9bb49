"""Simplicial meshes (1D intervals, 2D triangles) with tagged boundary facets.

The boundary is split into the sub-boundaries used by the solver: ``GAMMA``
(clamped, no fluid flux), ``SIGMA`` (traction / drained) and an optional
``SIGMA_TRACTION`` strip for partially loaded edges.  Meshes are immutable
after construction; tagging returns a new object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GAMMA = "Gamma"
SIGMA = "Sigma"
SIGMA_TRACTION = "SigmaTraction"
UNTAGGED = "Untagged"


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    """Simplicial mesh of dimension 1 or 2.

    vertices : (V, dim) coordinates
    cells    : (C, dim+1) vertex indices, positively oriented
    bfacet_vertices : (Nb, dim) vertex indices of boundary facets
    bfacet_cells    : (Nb,) owning cell of each boundary facet
    bfacet_tags     : (Nb,) tag strings
    """

    dim: int
    vertices: np.ndarray
    cells: np.ndarray
    bfacet_vertices: np.ndarray
    bfacet_cells: np.ndarray
    bfacet_tags: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.bfacet_tags is None:
            object.__setattr__(
                self, "bfacet_tags",
                np.array([UNTAGGED] * len(self.bfacet_cells), dtype=object))
        vols = self.cell_volumes()
        if np.any(vols <= 0):
            bad = int(np.argmin(vols))
            raise MeshError(f"cell {bad} has non-positive volume {vols[bad]:g}")

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    @property
    def num_bfacets(self):
        return self.bfacet_vertices.shape[0]

    def cell_volumes(self):
        x = self.vertices[self.cells]
        if self.dim == 1:
            return x[:, 1, 0] - x[:, 0, 0]
        e1 = x[:, 1] - x[:, 0]
        e2 = x[:, 2] - x[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def cell_diameters(self):
        x = self.vertices[self.cells]
        if self.dim == 1:
            return x[:, 1, 0] - x[:, 0, 0]
        d01 = np.linalg.norm(x[:, 0] - x[:, 1], axis=1)
        d12 = np.linalg.norm(x[:, 1] - x[:, 2], axis=1)
        d20 = np.linalg.norm(x[:, 2] - x[:, 0], axis=1)
        return np.max(np.stack([d01, d12, d20]), axis=0)

    def diameter(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def facet_midpoints(self):
        return self.vertices[self.bfacet_vertices].mean(axis=1)

    def facet_measures(self):
        """Length of boundary facets (1.0 for point facets in 1D)."""
        if self.dim == 1:
            return np.ones(self.num_bfacets)
        x = self.vertices[self.bfacet_vertices]
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)

    def facet_normals(self):
        """Outward unit normals of boundary facets."""
        mids = self.facet_midpoints()
        cent = self.vertices[self.cells[self.bfacet_cells]].mean(axis=1)
        if self.dim == 1:
            n = np.sign(mids - cent)
            return n
        x = self.vertices[self.bfacet_vertices]
        t = x[:, 1] - x[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        n /= np.linalg.norm(n, axis=1)[:, None]
        flip = np.einsum("ij,ij->i", n, mids - cent) < 0
        n[flip] *= -1.0
        return n

    def facets_with_tag(self, tag):
        return np.flatnonzero(self.bfacet_tags == tag)

    def edges(self):
        """Unique edges of a 2D mesh (for Euler-characteristic checks)."""
        if self.dim != 2:
            raise MeshError("edges() requires a 2D mesh")
        c = self.cells
        e = np.vstack([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def dump_text(self, path):
        """Plain-text dump: ``dim V C`` header, vertices, cells, tagged facets."""
        with open(path, "w") as f:
            f.write(f"{self.dim} {self.num_vertices} {self.num_cells}\n")
            for v in self.vertices:
                f.write(" ".join(repr(float(c)) for c in v) + "\n")
            for c in self.cells:
                f.write(" ".join(str(int(i)) for i in c) + "\n")
            for verts, cell, tag in zip(self.bfacet_vertices,
                                        self.bfacet_cells, self.bfacet_tags):
                ids = " ".join(str(int(i)) for i in np.atleast_1d(verts))
                f.write(f"{ids} {int(cell)} {tag}\n")


def load_text(path):
    """Inverse of :meth:`Mesh.dump_text`."""
    with open(path) as f:
        dim, nv, nc = (int(t) for t in f.readline().split())
        verts = np.array([[float(t) for t in f.readline().split()]
                          for _ in range(nv)])
        cells = np.array([[int(t) for t in f.readline().split()]
                          for _ in range(nc)], dtype=np.int64)
        fverts, fcells, ftags = [], [], []
        for line in f:
            parts = line.split()
            if not parts:
                continue
            fverts.append([int(t) for t in parts[:dim]])
            fcells.append(int(parts[dim]))
            ftags.append(parts[dim + 1])
    return Mesh(dim, verts, cells, np.array(fverts, dtype=np.int64),
                np.array(fcells, dtype=np.int64), np.array(ftags, dtype=object))


def _orient_cells(vertices, cells):
    """Flip vertex order of triangles with negative signed area."""
    x = vertices[cells]
    e1 = x[:, 1] - x[:, 0]
    e2 = x[:, 2] - x[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flip = det < 0
    cells = cells.copy()
    cells[flip] = cells[flip][:, [0, 2, 1]]
    return cells


def _boundary_facets_2d(cells):
    """Edges owned by exactly one cell, with that cell's index."""
    edges = np.vstack([cells[:, [0, 1]], cells[:, [1, 2]], cells[:, [2, 0]]])
    owner = np.tile(np.arange(len(cells)), 3)
    key = np.sort(edges, axis=1)
    order = np.lexsort((key[:, 1], key[:, 0]))
    key, edges, owner = key[order], edges[order], owner[order]
    uniq, start, counts = np.unique(key, axis=0, return_index=True,
                                    return_counts=True)
    single = start[counts == 1]
    return edges[single], owner[single]


def interval_mesh(n, a, b):
    """Uniform 1D mesh of ``n`` segments on [a, b]."""
    if n < 1:
        raise MeshError("interval_mesh needs at least one cell")
    if not a < b:
        raise MeshError(f"empty interval [{a}, {b}]")
    verts = np.linspace(a, b, n + 1)[:, None]
    cells = np.stack([np.arange(n), np.arange(1, n + 1)], axis=1).astype(np.int64)
    bverts = np.array([[0], [n]], dtype=np.int64)
    bcells = np.array([0, n - 1], dtype=np.int64)
    return Mesh(1, verts, cells, bverts, bcells)


def rectangle_mesh(nx, ny, Lx, Ly, pattern="crossed"):
    """Structured triangulation of (0, Lx) x (0, Ly).

    ``crossed`` splits every grid square by both diagonals (4 triangles,
    barycentre added); ``right`` splits by one diagonal (2 triangles).
    """
    if nx < 1 or ny < 1:
        raise MeshError("rectangle_mesh needs at least one subdivision per side")
    if pattern not in ("crossed", "right"):
        raise MeshError(f"unknown pattern {pattern!r}")
    xs = np.linspace(0.0, Lx, nx + 1)
    ys = np.linspace(0.0, Ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    verts = np.stack([X.ravel(), Y.ravel()], axis=1)

    def vid(i, j):
        return i * (ny + 1) + j

    cells = []
    if pattern == "crossed":
        centres = []
        cbase = (nx + 1) * (ny + 1)
        for i in range(nx):
            for j in range(ny):
                c = cbase + len(centres)
                centres.append([0.5 * (xs[i] + xs[i + 1]),
                                0.5 * (ys[j] + ys[j + 1])])
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                cells += [[v00, v10, c], [v10, v11, c],
                          [v11, v01, c], [v01, v00, c]]
        verts = np.vstack([verts, np.array(centres)])
    else:
        for i in range(nx):
            for j in range(ny):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                cells += [[v00, v10, v11], [v00, v11, v01]]
    cells = _orient_cells(verts, np.array(cells, dtype=np.int64))
    bverts, bcells = _boundary_facets_2d(cells)
    return Mesh(2, verts, cells, bverts, bcells)


def tag_boundary(mesh, rules):
    """Tag every boundary facet by the first matching geometric predicate.

    ``rules`` is a list of ``(predicate, tag)`` pairs; predicates are
    evaluated at facet midpoints.  Facets left untagged raise an error
    naming the offending midpoint.
    """
    mids = mesh.facet_midpoints()
    tags = np.array([UNTAGGED] * mesh.num_bfacets, dtype=object)
    for i, x in enumerate(mids):
        for pred, tag in rules:
            if pred(x):
                tags[i] = tag
                break
        else:
            raise MeshError(f"boundary facet with midpoint {x} matched no rule")
    return Mesh(mesh.dim, mesh.vertices, mesh.cells, mesh.bfacet_vertices,
                mesh.bfacet_cells, tags)


def near(value, target, tol):
    return abs(value - target) <= tol


def refine_uniform(mesh):
    """Split every segment in two (1D) or every triangle in four (2D).

    Boundary tags are inherited by the child facets.
    """
    if mesh.dim == 1:
        x = mesh.vertices[:, 0]
        mids = 0.5 * (x[mesh.cells[:, 0]] + x[mesh.cells[:, 1]])
        nv = mesh.num_vertices
        verts = np.concatenate([x, mids])[:, None]
        cells = []
        for c, (i, j) in enumerate(mesh.cells):
            m = nv + c
            cells += [[i, m], [m, j]]
        order = np.argsort([verts[c[0], 0] for c in cells], kind="stable")
        cells = np.array(cells, dtype=np.int64)[order]
        perm = np.argsort(verts[:, 0], kind="stable")
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        verts = verts[perm]
        cells = inv[cells]
        n = len(cells)
        bverts = np.array([[0], [n]], dtype=np.int64)
        bcells = np.array([0, n - 1], dtype=np.int64)
        fine = Mesh(1, verts, cells, bverts, bcells)
        return _inherit_tags(mesh, fine)

    # 2D red refinement via edge midpoints
    edges = mesh.edges()
    edge_id = {tuple(e): k for k, e in enumerate(edges)}
    nv = mesh.num_vertices
    mids = mesh.vertices[edges].mean(axis=1)
    verts = np.vstack([mesh.vertices, mids])

    def mid(i, j):
        return nv + edge_id[(min(i, j), max(i, j))]

    cells = []
    for (i, j, k) in mesh.cells:
        a, b, c = mid(i, j), mid(j, k), mid(k, i)
        cells += [[i, a, c], [a, j, b], [c, b, k], [a, b, c]]
    cells = _orient_cells(verts, np.array(cells, dtype=np.int64))
    bverts, bcells = _boundary_facets_2d(cells)
    fine = Mesh(2, verts, cells, bverts, bcells)
    return _inherit_tags(mesh, fine)


def _inherit_tags(coarse, fine):
    """Tag fine boundary facets from the nearest coarse facet's tag."""
    if np.all(coarse.bfacet_tags == UNTAGGED):
        return fine
    cm = coarse.facet_midpoints()
    fm = fine.facet_midpoints()
    if coarse.dim == 1:
        idx = np.argmin(np.abs(fm - cm.T), axis=1)
        tags = coarse.bfacet_tags[idx]
    else:
        # fine facet midpoints lie on their parent coarse facet
        d = np.linalg.norm(fm[:, None, :] - cm[None, :, :], axis=2)
        tags = coarse.bfacet_tags[np.argmin(d, axis=1)]
    return Mesh(fine.dim, fine.vertices, fine.cells, fine.bfacet_vertices,
                fine.bfacet_cells, tags)
