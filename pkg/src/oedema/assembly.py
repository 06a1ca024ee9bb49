"""Residual and Newton tangent of the backward-Euler five-field system.

Unknowns per time step: pathogen and leukocyte concentrations, skeleton
displacement, fluid pressure and Lagrangian porosity.  The tangent is the
exact derivative of the discrete residual (verified against finite
differences), assembled cell-wise with vectorised numpy kernels into the
5x5 block layout

    [A1  B1' B2' 0   B3']
    [B1  A2  B4' 0   B5']
    [0   0   A3  C1' 0  ]
    [C2  0   C1  A4  C3']
    [0   0   C4  0  -A5 ]

Zero blocks are never allocated.  The product time derivative D_t(phi c) is
discretised as phi^{n+1} d_t c + c^{n+1} d_t phi, whose exact linearisation
carries the (2 phi^k - phi^n)/dt coefficients of the Newton forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import biology, constitutive
from .constitutive import NonPositiveJacobian, kinematics
from .fem import FIELDS, ElementSpec, P1_BUBBLE, build_dofmap, eval_basis, quadrature_rule


def _es(*args, **kw):
    kw.setdefault("optimize", True)
    return np.einsum(*args, **kw)


# ---------------------------------------------------------------------------
# problem data containers


@dataclass
class State:
    """Coefficient vectors of the five fields at one time level."""

    cp: np.ndarray
    cl: np.ndarray
    u: np.ndarray
    p: np.ndarray
    phi: np.ndarray

    def copy(self):
        return State(self.cp.copy(), self.cl.copy(), self.u.copy(),
                     self.p.copy(), self.phi.copy())

    def to_vector(self, dofmap):
        return np.concatenate([self.cp, self.cl, self.u, self.p, self.phi])

    @staticmethod
    def from_vector(dofmap, vec):
        parts = [vec[dofmap.field_slice(f)] for f in FIELDS]
        return State(*[p.copy() for p in parts])

    def add_scaled(self, dofmap, delta, alpha):
        v = self.to_vector(dofmap) + alpha * delta
        return State.from_vector(dofmap, v)

    @staticmethod
    def zeros(dofmap):
        return State(*[np.zeros(dofmap.counts[f]) for f in FIELDS])


@dataclass(frozen=True)
class MaterialParams:
    """Model constants and law selectors shared by all equations."""

    solid: object
    perm: object
    alpha: float
    phi0: object = 0.2            # scalar or callable(x)
    rho_f: float = 1.0
    mu_f: float = 1.0
    immune: biology.ImmuneParams = None
    starling: biology.StarlingParams = None

    def phi0_at(self, x):
        if callable(self.phi0):
            flat = x.reshape(-1, x.shape[-1])
            return np.asarray(self.phi0(flat), dtype=float).reshape(x.shape[:-1])
        return np.full(x.shape[:-1], float(self.phi0))


@dataclass(frozen=True)
class DirichletRule:
    field: str
    tags: tuple
    fn: object                     # fn(x, t) -> values
    component: int = None


@dataclass(frozen=True)
class TractionRule:
    tags: tuple
    fn: object                     # fn(x, t, n) -> traction vectors
    follower: bool = True


@dataclass(frozen=True)
class FluxRule:
    tags: tuple
    fn: object                     # fn(x, t, n) -> scalar normal flux


@dataclass
class ProblemData:
    """Boundary conditions and external sources for one experiment."""

    dirichlet: list = field(default_factory=list)
    tractions: list = field(default_factory=list)
    flux_p: list = field(default_factory=list)
    body: object = None            # fn(x, t) -> force density (incl. rho_s b)
    source_cp: object = None
    source_cl: object = None
    source_p: object = None


# ---------------------------------------------------------------------------
# geometry cache


class GeometryCache:
    """Per-mesh precomputation: physical basis gradients, quadrature data,
    and boundary-facet embeddings, shared across all assemblies."""

    def __init__(self, mesh, dofmap, quad_degree=4):
        self.mesh = mesh
        self.dofmap = dofmap
        self.quad_degree = quad_degree
        d = mesh.dim
        nv = d + 1
        rule = quadrature_rule(d, quad_degree)
        self.rule = rule
        pts, w = rule.points, rule.weights
        nq = len(w)

        vals1, grads1 = eval_basis(ElementSpec("P1"), pts)
        valsb, gradsb = eval_basis(ElementSpec(P1_BUBBLE), pts)
        self.N1 = vals1                      # (nv, nq)
        self.NB = valsb[nv]                  # (nq,)
        self.VU = valsb                      # (nv+1, nq)

        x = mesh.vertices[mesh.cells]        # (C, nv, d)
        B = np.swapaxes(x[:, 1:] - x[:, :1], 1, 2)   # (C, d, d) columns e_i
        detB = B[:, 0, 0] if d == 1 else \
            B[:, 0, 0] * B[:, 1, 1] - B[:, 0, 1] * B[:, 1, 0]
        if d == 1:
            invB = (1.0 / detB)[:, None, None]
        else:
            invB = np.empty_like(B)
            invB[:, 0, 0] = B[:, 1, 1]
            invB[:, 0, 1] = -B[:, 0, 1]
            invB[:, 1, 0] = -B[:, 1, 0]
            invB[:, 1, 1] = B[:, 0, 0]
            invB /= detB[:, None, None]
        self.detB = detB
        self.invB = invB

        # physical gradients: vertex ones are constant per cell
        self.G1 = _es("ar,crd->cad", grads1[:nv, 0, :], invB)
        self.GB = _es("qr,crd->cqd", gradsb[nv], invB)      # (C, nq, d)
        # stacked displacement-basis gradients (C, nv+1, nq, d)
        GU = np.empty((mesh.num_cells, nv + 1, nq, d))
        GU[:, :nv] = self.G1[:, :, None, :]
        GU[:, nv] = self.GB
        self.GU = GU

        self.dV = w[None, :] * detB[:, None]                      # (C, nq)
        lam = pts                                                  # (nq, nv)
        self.X = _es("qa,cad->cqd", lam, x)                  # (C, nq, d)

        self._facet_groups = {}

    def facet_group(self, tags):
        """Quadrature/embedding data for the boundary facets carrying any of
        ``tags``: basis values/gradients at facet quadrature points mapped
        into the owner cell."""
        key = tuple(sorted(tags))
        if key in self._facet_groups:
            return self._facet_groups[key]
        mesh = self.mesh
        d = mesh.dim
        nv = d + 1
        sel = np.flatnonzero(np.isin(mesh.bfacet_tags, list(tags)))
        group = None
        if len(sel):
            cells = mesh.bfacet_cells[sel]
            fverts = mesh.bfacet_vertices[sel]
            normals = mesh.facet_normals()[sel]
            meas = mesh.facet_measures()[sel]
            if d == 1:
                nfq = 1
                VUf = np.zeros((len(sel), nv + 1, nfq))
                GUf = np.zeros((len(sel), nv + 1, nfq, d))
                Xf = mesh.vertices[fverts[:, 0]][:, None, :]
                dS = meas[:, None] * np.ones((1, nfq))
                for k, (fc, fv) in enumerate(zip(cells, fverts)):
                    loc = list(mesh.cells[fc]).index(fv[0])
                    other = 1 - loc
                    VUf[k, loc, 0] = 1.0
                    # bubble value 0 at endpoints; gradient = grad(lam_other)
                    GUf[k, :nv, 0, :] = self.G1[fc]
                    GUf[k, nv, 0, :] = self.G1[fc, other]
            else:
                gs, gw = np.polynomial.legendre.leggauss(3)
                s = 0.5 * (gs + 1.0)
                ws = 0.5 * gw
                nfq = len(s)
                VUf = np.zeros((len(sel), nv + 1, nfq))
                GUf = np.zeros((len(sel), nv + 1, nfq, d))
                x0 = mesh.vertices[fverts[:, 0]]
                x1 = mesh.vertices[fverts[:, 1]]
                Xf = (1.0 - s)[None, :, None] * x0[:, None, :] \
                    + s[None, :, None] * x1[:, None, :]
                dS = meas[:, None] * ws[None, :]
                for k, (fc, fv) in enumerate(zip(cells, fverts)):
                    cell = list(mesh.cells[fc])
                    l0, l1 = cell.index(fv[0]), cell.index(fv[1])
                    l2 = 3 - l0 - l1
                    VUf[k, l0] = 1.0 - s
                    VUf[k, l1] = s
                    GUf[k, :nv, :, :] = self.G1[fc][:, None, :]
                    # bubble gradient on the edge: s(1-s) grad(lam_opposite)
                    GUf[k, nv] = (s * (1.0 - s))[:, None] * self.G1[fc, l2]
            group = {
                "facets": sel, "cells": cells, "normals": normals,
                "VUf": VUf, "GUf": GUf, "X": Xf, "dS": dS,
                "N1f": VUf[:, :nv, :],
            }
        self._facet_groups[key] = group
        return group


# ---------------------------------------------------------------------------
# Dirichlet constraints


@dataclass
class Constraints:
    rows: np.ndarray               # monolithic dof indices (unique, sorted)
    groups: list                   # (rows, coords, fn, column) per rule
    mask: np.ndarray               # boolean, True on constrained dofs

    def values(self, t):
        g = np.zeros(self.mask.shape[0])
        for rows, coords, fn, col in self.groups:
            vals = np.asarray(fn(coords, t), dtype=float)
            if col is not None and vals.ndim == 2:
                vals = vals[:, col]
            g[rows] = vals
        return g[self.rows]


def build_constraints(mesh, dofmap, bc: ProblemData):
    """Resolve Dirichlet rules to monolithic dof rows.

    For vector fields constrained in all components the rule's function may
    return (npts, dim) arrays (one column per component) or a single array
    applied to every component.
    """
    groups = []
    mask = np.zeros(dofmap.total, dtype=bool)
    for rule in bc.dirichlet:
        ncomp = dofmap.specs[rule.field].components
        if ncomp > 1 and rule.component is None:
            for c in range(ncomp):
                dofs, coords = dofmap.dirichlet_dofs(rule.field, rule.tags, c)
                rows = dofs + dofmap.offsets[rule.field]
                mask[rows] = True
                groups.append((rows, coords, rule.fn, c))
        else:
            dofs, coords = dofmap.dirichlet_dofs(rule.field, rule.tags,
                                                 rule.component)
            rows = dofs + dofmap.offsets[rule.field]
            mask[rows] = True
            groups.append((rows, coords, rule.fn, None))
    rows = np.flatnonzero(mask)
    return Constraints(rows, groups, mask)


# ---------------------------------------------------------------------------
# field evaluation helpers


def _scalar_at_qp(cache, dofs, z):
    zc = z[dofs]                                  # (C, nv)
    val = _es("aq,ca->cq", cache.N1, zc)
    grad = _es("cad,ca->cd", cache.G1, zc)  # constant over qp
    nq = cache.dV.shape[1]
    return val, np.repeat(grad[:, None, :], nq, axis=1)


def _grad_u_at_qp(cache, dofs, u):
    d = cache.mesh.dim
    uc = u[dofs].reshape(len(dofs), d + 2, d)     # (C, nodes, comp)
    return _es("cai,caqd->cqid", uc, cache.GU)


def min_jacobian(cache, u):
    """Cheap admissibility probe: min det(I + grad u) over all qp."""
    gu = _grad_u_at_qp(cache, cache.dofmap.cell_dofs["u"], u)
    d = cache.mesh.dim
    F = gu + np.eye(d)
    if d == 1:
        J = F[..., 0, 0]
    else:
        J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return float(J.min())


# ---------------------------------------------------------------------------
# main assembly


def _eval_fn(fn, X, t, n=None):
    flat = X.reshape(-1, X.shape[-1])
    if n is None:
        out = fn(flat, t)
    else:
        nf = np.broadcast_to(n, X.shape).reshape(-1, X.shape[-1])
        out = fn(flat, t, nf)
    return np.asarray(out)


def assemble_system(cache, state_k, state_n, dt, mat, bc, t,
                    want_matrix=True):
    """Residual (and tangent blocks) at Newton state ``state_k``, previous
    time state ``state_n``, evaluated at time ``t``.

    Returns ``(res, blocks)`` where blocks is None unless requested; Dirichlet
    rows are left untouched (see :func:`apply_dirichlet`).
    """
    mesh, dofmap = cache.mesh, cache.dofmap
    d = mesh.dim
    nv = d + 1
    dV = cache.dV
    N1, G1, GU, VU = cache.N1, cache.G1, cache.GU, cache.VU

    dof_s = {f: dofmap.cell_dofs[f] for f in ("cp", "cl", "p", "phi")}
    dof_u = dofmap.cell_dofs["u"]

    cp, gcp = _scalar_at_qp(cache, dof_s["cp"], state_k.cp)
    cl, gcl = _scalar_at_qp(cache, dof_s["cl"], state_k.cl)
    p, gp = _scalar_at_qp(cache, dof_s["p"], state_k.p)
    phi, _ = _scalar_at_qp(cache, dof_s["phi"], state_k.phi)
    cp_n, _ = _scalar_at_qp(cache, dof_s["cp"], state_n.cp)
    cl_n, _ = _scalar_at_qp(cache, dof_s["cl"], state_n.cl)
    phi_n, _ = _scalar_at_qp(cache, dof_s["phi"], state_n.phi)
    gu = _grad_u_at_qp(cache, dof_u, state_k.u)

    kin = kinematics(gu, cells=np.broadcast_to(
        np.arange(mesh.num_cells)[:, None], gu.shape[:2]))
    J, Fi, FiT = kin.J, kin.Finv, kin.FinvT
    Bm = J[..., None, None] * (Fi @ FiT)          # J F^-1 F^-T
    FiFiT = Fi @ FiT

    phi0q = mat.phi0_at(cache.X)
    alpha, rho_f, mu_f = mat.alpha, mat.rho_f, mat.mu_f

    mob = mat.perm.scalar(J, phi, phi0q) / mu_f
    dmob_J, dmob_phi = (g / mu_f for g in mat.perm.d_scalar(J, phi, phi0q))

    if mat.immune is not None:
        im = mat.immune
        Dp, Dl, chi = im.D_p, im.D_l, im.chi
        rp = biology.reaction_p(phi, cp, cl, im)
        rl = biology.reaction_l(phi, cp, cl, im)
    else:
        Dp = Dl = chi = 0.0
        zero = np.zeros_like(phi)
        rp = biology.Reaction(zero, zero, zero, zero)
        rl = biology.Reaction(zero, zero, zero, zero)

    if mat.starling is not None:
        ell, dell_p, dell_cp = biology.starling_source(p, cp, mat.starling)
    else:
        ell = dell_p = dell_cp = np.zeros_like(p)

    dtcp = (cp - cp_n) / dt
    dtcl = (cl - cl_n) / dt
    dtphi = (phi - phi_n) / dt

    res = np.zeros(dofmap.total)

    def scatter(fieldname, loc):
        off = dofmap.offsets[fieldname]
        if fieldname == "u":
            np.add.at(res, off + dof_u.ravel(), loc.reshape(-1))
        else:
            np.add.at(res, off + dof_s[fieldname].ravel(), loc.reshape(-1))

    # --- species residuals -------------------------------------------------
    Bgcp = _es("cqij,cqj->cqi", Bm, gcp)
    Bgcl = _es("cqij,cqj->cqi", Bm, gcl)
    Bgp = _es("cqij,cqj->cqi", Bm, gp)

    mass_cp = J * (phi * dtcp + cp * dtphi) - J * rp.value
    mass_cl = J * (phi * dtcl + cl * dtphi) - J * rl.value
    if bc.source_cp is not None:
        mass_cp = mass_cp - _eval_fn(bc.source_cp, cache.X, t).reshape(phi.shape)
    if bc.source_cl is not None:
        mass_cl = mass_cl - _eval_fn(bc.source_cl, cache.X, t).reshape(phi.shape)
    flux_cp = Dp * phi[..., None] * Bgcp
    flux_cl = Dl * phi[..., None] * Bgcl - chi * (phi * cl)[..., None] * Bgcp
    r_cp = _es("cq,aq->ca", dV * mass_cp, N1) \
        + _es("cq,cqi,cai->ca", dV, flux_cp, G1)
    r_cl = _es("cq,aq->ca", dV * mass_cl, N1) \
        + _es("cq,cqi,cai->ca", dV, flux_cl, G1)
    scatter("cp", r_cp)
    scatter("cl", r_cl)

    # --- momentum residual -------------------------------------------------
    Peff = mat.solid.first_pk(kin)
    Ptot = Peff - (alpha * p * J)[..., None, None] * FiT
    r_u = _es("cq,cqij,caqj->cai", dV, Ptot, GU)
    if bc.body is not None:
        bval = _eval_fn(bc.body, cache.X, t).reshape(phi.shape + (d,))
        r_u -= _es("cq,cqi,aq->cai", dV, bval, VU)
    scatter("u", r_u)

    # --- fluid mass residual -----------------------------------------------
    mass_p = rho_f * J * (dtphi - ell)
    if bc.source_p is not None:
        mass_p = mass_p - _eval_fn(bc.source_p, cache.X, t).reshape(phi.shape)
    darcy = (rho_f * phi * mob)[..., None] * Bgp
    r_p = _es("cq,aq->ca", dV * mass_p, N1) \
        + _es("cq,cqi,cai->ca", dV, darcy, G1)
    scatter("p", r_p)

    # --- porosity constraint -----------------------------------------------
    r_phi = _es("cq,aq->ca", dV * (J - phi - (1.0 - phi0q)), N1)
    scatter("phi", r_phi)

    # --- boundary terms ----------------------------------------------------
    trac_blocks = []
    for rule in bc.tractions:
        grp = cache.facet_group(rule.tags)
        if grp is None:
            continue
        tvec = _eval_fn(rule.fn, grp["X"], t, grp["normals"][:, None, :]) \
            .reshape(grp["X"].shape)
        if rule.follower:
            guf = _es("fai,faqd->fqid",
                            state_k.u[dof_u[grp["cells"]]].reshape(
                                len(grp["cells"]), d + 2, d),
                            grp["GUf"])
            kinf = kinematics(guf)
            load = kinf.J[..., None] * _es("fqij,fqj->fqi",
                                                 kinf.FinvT, tvec)
            if want_matrix:
                trac_blocks.append((grp, kinf, tvec))
        else:
            load = tvec
        r_loc = -_es("fq,fqi,faq->fai", grp["dS"], load, grp["VUf"])
        np.add.at(res, dofmap.offsets["u"] + dof_u[grp["cells"]].ravel(),
                  r_loc.reshape(-1))

    for rule in bc.flux_p:
        grp = cache.facet_group(rule.tags)
        if grp is None:
            continue
        g = _eval_fn(rule.fn, grp["X"], t, grp["normals"][:, None, :]) \
            .reshape(grp["dS"].shape)
        r_loc = -_es("fq,fq,faq->fa", grp["dS"], g, grp["N1f"])
        np.add.at(res, dofmap.offsets["p"] + dof_s["p"][grp["cells"]].ravel(),
                  r_loc.reshape(-1))

    if not want_matrix:
        return res, None

    # ----------------------------------------------------------------------
    # tangent blocks
    blocks = {}

    def mass(coef):
        return _es("cq,aq,bq->cab", dV * coef, N1, N1)

    def stiff(coef):
        return _es("cq,cai,cqij,cbj->cab", dV * coef, G1, Bm, G1)

    def grad_mass(vec):
        # d(flux)/d(scalar coefficient): (grad w_a . vec) N_b
        return _es("cq,cai,cqi,bq->cab", dV, G1, vec, N1)

    Tr = _es("cq,cqkl,cbql->cqbk", J, FiT, GU)   # J F^-T : grad(du)

    def mass_u(coef):
        # scalar-test row, displacement column: coef (J F^-T:grad du) N_a
        out = _es("cq,aq,cqbk->cabk", dV * coef, N1, Tr)
        return out.reshape(out.shape[0], nv, -1)

    def geo_flux(pref, y, extra1=None):
        """u-derivative of pref * (J F^-1 F^-T) grad z against scalar test
        gradients; ``extra1`` adds a coefficient to the dJ-direction term
        (permeability J-dependence)."""
        S1 = _es("cai,cqij,cqj->cqa", G1, Bm, y)
        c1 = pref if extra1 is None else pref + extra1
        t1 = _es("cq,cqa,cqkl,cbql->cabk", dV * c1, S1, FiT, GU)
        prefJ = dV * pref * J
        Za = _es("cam,cqmk->cqak", G1, Fi)
        W = _es("cqlm,cqm->cql", FiFiT, y)
        t2 = _es("cq,cqak,cql,cbql->cabk", prefJ, Za, W, GU)
        FiTy = _es("cqkl,cql->cqk", FiT, y)
        Ma = _es("cqlm,cam->cqal", FiFiT, G1)
        t3 = _es("cq,cqk,cqal,cbql->cabk", prefJ, FiTy, Ma, GU)
        out = t1 - t2 - t3
        return out.reshape(out.shape[0], nv, -1)

    coef_mass = J * (2.0 * phi - phi_n) / dt

    # row 0: pathogen equation
    blocks[(0, 0)] = mass(coef_mass - J * rp.d_cp) + stiff(Dp * phi)
    blocks[(0, 1)] = mass(-J * rp.d_cl)
    blocks[(0, 2)] = mass_u(phi * dtcp + cp * dtphi - rp.value) \
        + geo_flux(Dp * phi, gcp)
    blocks[(0, 4)] = mass(J * (2.0 * cp - cp_n) / dt - J * rp.d_phi) \
        + grad_mass(Dp * Bgcp)

    # row 1: leukocyte equation
    blocks[(1, 0)] = stiff(-chi * phi * cl) + mass(-J * rl.d_cp)
    blocks[(1, 1)] = mass(coef_mass - J * rl.d_cl) + stiff(Dl * phi) \
        + grad_mass(-chi * phi[..., None] * Bgcp)
    blocks[(1, 2)] = mass_u(phi * dtcl + cl * dtphi - rl.value) \
        + geo_flux(Dl * phi, gcl) + geo_flux(-chi * phi * cl, gcp)
    blocks[(1, 4)] = mass(J * (2.0 * cl - cl_n) / dt - J * rl.d_phi) \
        + grad_mass(Dl * Bgcl - chi * cl[..., None] * Bgcp)

    # row 2: momentum equation
    Atan = mat.solid.stress_tangent(kin)
    pJ = alpha * p * J
    Atan = Atan - _es("cq,cqij,cqkl->cqijkl", pJ, FiT, FiT) \
        + _es("cq,cqil,cqkj->cqijkl", pJ, FiT, FiT)
    A3 = _es("cq,cqijkl,caqj,cbql->caibk", dV, Atan, GU, GU)
    A3 = A3.reshape(A3.shape[0], (nv + 1) * d, (nv + 1) * d)
    blocks[(2, 2)] = A3
    C1t = _es("cq,cq,cqij,caqj,bq->caib", dV, -alpha * J, FiT, GU, N1)
    blocks[(2, 3)] = C1t.reshape(C1t.shape[0], (nv + 1) * d, nv)

    # row 3: fluid mass equation
    blocks[(3, 0)] = mass(-rho_f * J * dell_cp)
    blocks[(3, 2)] = mass_u(rho_f * (dtphi - ell)) \
        + geo_flux(rho_f * phi * mob, gp, extra1=rho_f * phi * dmob_J * J)
    blocks[(3, 3)] = stiff(rho_f * phi * mob) + mass(-rho_f * J * dell_p)
    blocks[(3, 4)] = grad_mass(rho_f * (mob + phi * dmob_phi)[..., None] * Bgp) \
        + mass(rho_f * J / dt)

    # row 4: porosity constraint
    C4 = _es("cq,aq,cqbk->cabk", dV, N1, Tr)
    blocks[(4, 2)] = C4.reshape(C4.shape[0], nv, -1)
    blocks[(4, 4)] = mass(-np.ones_like(J))

    # follower-traction surface linearisation
    for grp, kinf, tvec in trac_blocks:
        Jf, FiTf = kinf.J, kinf.FinvT
        GUf, VUf, dS = grp["GUf"], grp["VUf"], grp["dS"]
        FiTt = _es("fqij,fqj->fqi", FiTf, tvec)
        t1 = _es("fq,faq,fqi,fqkl,fbql->faibk", dS * Jf, VUf, FiTt,
                       FiTf, GUf)
        t2 = _es("fq,faq,fqil,fbql,fqk->faibk", dS * Jf, VUf, FiTf,
                       GUf, FiTt)
        sb = (-(t1 - t2)).reshape(len(dS), (nv + 1) * d, (nv + 1) * d)
        key = (2, 2)
        rows = dof_u[grp["cells"]]
        blocks.setdefault("surf", []).append((key, rows, sb))

    return res, blocks


_BLOCK_FIELDS = ("cp", "cl", "u", "p", "phi")


def blocks_to_matrix(dofmap, blocks):
    """Scatter local blocks into one monolithic CSR matrix."""
    rows_all, cols_all, vals_all = [], [], []

    def push(rdof, cdof, loc):
        rows_all.append(np.broadcast_to(rdof[:, :, None], loc.shape).reshape(-1))
        cols_all.append(np.broadcast_to(cdof[:, None, :], loc.shape).reshape(-1))
        vals_all.append(loc.reshape(-1))

    for key, loc in blocks.items():
        if key == "surf":
            continue
        fi, fj = _BLOCK_FIELDS[key[0]], _BLOCK_FIELDS[key[1]]
        push(dofmap.cell_dofs[fi] + dofmap.offsets[fi],
             dofmap.cell_dofs[fj] + dofmap.offsets[fj], loc)
    for (i, j), rows, loc in blocks.get("surf", []):
        fi, fj = _BLOCK_FIELDS[i], _BLOCK_FIELDS[j]
        push(rows + dofmap.offsets[fi], rows + dofmap.offsets[fj], loc)

    n = dofmap.total
    A = sp.coo_matrix((np.concatenate(vals_all),
                       (np.concatenate(rows_all), np.concatenate(cols_all))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def apply_dirichlet(A, res, constraints, state_vec, t):
    """Replace constrained rows by identity with residual = value mismatch."""
    mask = constraints.mask
    if A is not None:
        keep = sp.diags((~mask).astype(float))
        fix = sp.diags(mask.astype(float))
        A = (keep @ A + fix).tocsr()
    res = res.copy()
    res[constraints.rows] = state_vec[constraints.rows] - constraints.values(t)
    return A, res
