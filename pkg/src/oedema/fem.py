"""Reference elements, simplex quadrature, and degree-of-freedom maps.

Displacement uses the MINI element (P1 enriched with the cell bubble, the
unnormalised product of barycentric coordinates); all scalar fields use
continuous P1.  The monolithic unknown ordering is
``[c_p | c_l | u | p | phi_f]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

P1 = "P1"
P1_BUBBLE = "P1Bubble"

FIELDS = ("cp", "cl", "u", "p", "phi")


@dataclass(frozen=True)
class ElementSpec:
    family: str
    components: int = 1


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates, weights in the reference measure."""

    points: np.ndarray
    weights: np.ndarray
    degree: int


# Dunavant symmetric triangle rules; weights sum to 1 before scaling by the
# reference measure 1/2.  Degree 3 reuses the positive-weight degree-4 rule.
def _orbit1():
    return [(1 / 3, 1 / 3, 1 / 3)]


def _orbit3(beta):
    a = 1.0 - 2.0 * beta
    return [(a, beta, beta), (beta, a, beta), (beta, beta, a)]


def _orbit6(g, d):
    e = 1.0 - g - d
    return [(g, d, e), (d, g, e), (g, e, d), (d, e, g), (e, g, d), (e, d, g)]


_TRI_RULES = {
    1: (_orbit1(), [1.0]),
    2: (_orbit3(1 / 6), [1 / 3] * 3),
    4: (_orbit3(0.445948490915965) + _orbit3(0.091576213509771),
        [0.223381589678011] * 3 + [0.109951743655322] * 3),
    5: (_orbit1() + _orbit3(0.470142064105115) + _orbit3(0.101286507323456),
        [0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
    6: (_orbit3(0.249286745170910) + _orbit3(0.063089014491502)
        + _orbit6(0.310352451033785, 0.053145049844816),
        [0.116786275726379] * 3 + [0.050844906370207] * 3
        + [0.082851075618374] * 6),
}
_TRI_RULES[3] = _TRI_RULES[4]


def quadrature_rule(dim, degree):
    """Rule exact for polynomials up to ``degree`` on the reference simplex."""
    if not 1 <= degree <= 6:
        raise ValueError(f"unsupported quadrature degree {degree}")
    if dim == 1:
        npts = (degree + 2) // 2
        x, w = np.polynomial.legendre.leggauss(npts)
        t = 0.5 * (x + 1.0)
        pts = np.stack([1.0 - t, t], axis=1)
        return QuadratureRule(pts, 0.5 * w, degree)
    if dim == 2:
        pts, w = _TRI_RULES[degree]
        return QuadratureRule(np.array(pts), 0.5 * np.array(w), degree)
    raise ValueError(f"unsupported dimension {dim}")


def eval_basis(spec: ElementSpec, points):
    """Basis values and reference-coordinate gradients at barycentric points.

    Returns ``(vals, grads)`` with shapes (nbasis, npts) and
    (nbasis, npts, dim).  P1 values are the barycentric coordinates; the
    bubble is their product.
    """
    pts = np.atleast_2d(points)
    dim = pts.shape[1] - 1
    # gradients of barycentric coordinates wrt reference coordinates
    if dim == 1:
        glam = np.array([[-1.0], [1.0]])
    else:
        glam = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    vals = pts.T.copy()
    grads = np.repeat(glam[:, None, :], len(pts), axis=1)
    if spec.family == P1:
        return vals, grads
    if spec.family == P1_BUBBLE:
        bub = np.prod(pts, axis=1)
        gbub = np.zeros((len(pts), dim))
        for i in range(dim + 1):
            rest = np.prod(np.delete(pts, i, axis=1), axis=1)
            gbub += rest[:, None] * glam[i]
        vals = np.vstack([vals, bub[None, :]])
        grads = np.concatenate([grads, gbub[None, :, :]], axis=0)
        return vals, grads
    raise ValueError(f"unknown element family {spec.family!r}")


def _vertices_on_tags(mesh, tags):
    sel = np.isin(mesh.bfacet_tags, list(tags))
    return np.unique(mesh.bfacet_vertices[sel].ravel())


@dataclass(frozen=True)
class DofMap:
    """Cell-to-global dof tables and monolithic offsets for the five fields.

    Scalar P1 dofs coincide with vertex indices.  Displacement dofs are
    interleaved per node: vertex ``v`` component ``i`` maps to ``v*dim + i``,
    bubbles follow after all vertices.
    """

    mesh: object
    specs: dict
    counts: dict
    offsets: dict
    cell_dofs: dict
    total: int

    def field_slice(self, field):
        o = self.offsets[field]
        return slice(o, o + self.counts[field])

    def dirichlet_dofs(self, field, tags, component=None):
        """Global (field-local) dofs of ``field`` on tagged boundary, with
        their coordinates.  Bubble dofs never lie on the boundary."""
        mesh = self.mesh
        verts = _vertices_on_tags(mesh, tags)
        if self.specs[field].components == 1:
            return verts.copy(), mesh.vertices[verts]
        d = mesh.dim
        comps = range(d) if component is None else [component]
        dofs = np.concatenate([verts * d + c for c in comps])
        coords = np.vstack([mesh.vertices[verts] for _ in comps])
        return dofs, coords


def build_dofmap(mesh, specs=None):
    """Monolithic dof map in the ordering ``[cp | cl | u | p | phi]``."""
    d = mesh.dim
    if specs is None:
        specs = {
            "cp": ElementSpec(P1), "cl": ElementSpec(P1),
            "u": ElementSpec(P1_BUBBLE, components=d),
            "p": ElementSpec(P1), "phi": ElementSpec(P1),
        }
    V, C = mesh.num_vertices, mesh.num_cells
    counts, offsets, cell_dofs = {}, {}, {}
    off = 0
    for f in FIELDS:
        spec = specs[f]
        if spec.family == P1:
            counts[f] = V
            cell_dofs[f] = mesh.cells.astype(np.int64)
        elif spec.family == P1_BUBBLE:
            nb = spec.components
            counts[f] = nb * (V + C)
            nodes = np.hstack([mesh.cells,
                               (V + np.arange(C))[:, None]])  # (C, d+2)
            tab = (nodes[:, :, None] * nb
                   + np.arange(nb)[None, None, :]).reshape(C, -1)
            cell_dofs[f] = tab.astype(np.int64)
        else:
            raise ValueError(f"unknown family {spec.family}")
        offsets[f] = off
        off += counts[f]
    return DofMap(mesh, dict(specs), counts, offsets, cell_dofs, off)
