"""Linear coupled reaction-diffusion / three-field Biot system in
total-pressure form.

This is the simplified system obtained by linearising the full model about
the rest state and substituting the total pressure zeta = alpha p -
lambda_s div u for the porosity.  It exists to exercise the
incompressibility-robustness properties: the discrete solution's energy
quantities stay bounded uniformly in lambda_s.

Unknowns per step: (c_p, c_l, u, p, zeta); spaces (P1, P1, MINI, P1, P1).
The zeta coefficients live in the ``phi`` slot of the shared dof map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import GeometryCache, _eval_fn
from .fem import FIELDS, build_dofmap


def total_pressure(p, div_u, alpha, lam_s):
    """zeta = alpha p - lambda_s div u."""
    return alpha * p - lam_s * div_u


@dataclass(frozen=True)
class LinearBiotParams:
    mu_s: float
    lam_s: float
    alpha: float
    mobility: float = 1.0          # kappa / mu_f
    D_p: float = 1.0
    D_l: float = 1.0
    beta1: float = 1.0             # linearisation couplings into the species
    beta2: float = 1.0

    def __post_init__(self):
        if self.lam_s <= 0:
            raise ValueError("lam_s must be positive (enters as 1/lam_s)")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")


@dataclass
class LinearBiotData:
    """Source fields and boundary data; all optional."""

    f_cp: object = None            # fn(x, t) -> scalar
    f_cl: object = None
    f_u: object = None             # fn(x, t) -> vector
    f_p: object = None
    traction: object = None        # fn(x, t, n) on Sigma facets (tags)
    traction_tags: tuple = ()
    flux_p: object = None          # fn(x, t, n) on Gamma facets
    flux_tags: tuple = ()
    dirichlet: list = field(default_factory=list)  # assembly.DirichletRule


def _u_ops(cache):
    """Elasticity and divergence coupling blocks on the MINI space."""
    dV, GU, G1, N1 = cache.dV, cache.GU, cache.G1, cache.N1
    d = cache.mesh.dim
    nv = d + 1
    GA = GU  # (C, nv+1, q, d)
    dot = np.einsum("cq,caqd,cbqd->cab", dV, GA, GA)
    cross = np.einsum("cq,caqk,cbqi->caibk", dV, GA, GA)
    eye = np.eye(d)
    # eps(u):eps(v) pairing: 0.5 (delta_ik grad.grad + dv_k du_i)
    E = 0.5 * (np.einsum("cab,ik->caibk", dot, eye) + cross)
    E = E.reshape(E.shape[0], (nv + 1) * d, (nv + 1) * d)
    # -int div(u) psi  ->  rows psi (P1), cols u
    Bdiv = -np.einsum("cq,aq,cbqk->cabk", dV, N1, GU)
    Bdiv = Bdiv.reshape(Bdiv.shape[0], nv, (nv + 1) * d)
    return E, Bdiv


def _scalar_ops(cache):
    dV, N1, G1 = cache.dV, cache.N1, cache.G1
    M = np.einsum("cq,aq,bq->cab", dV, N1, N1)
    K = np.einsum("cq,cai,cbi->cab", dV, G1, G1)
    return M, K


def _scatter(dofmap, fi, fj, loc):
    rd = dofmap.cell_dofs[fi] + dofmap.offsets[fi]
    cd = dofmap.cell_dofs[fj] + dofmap.offsets[fj]
    rows = np.broadcast_to(rd[:, :, None], loc.shape).reshape(-1)
    cols = np.broadcast_to(cd[:, None, :], loc.shape).reshape(-1)
    return rows, cols, loc.reshape(-1)


def assemble_linear_biot(mesh, dofmap, params, dt, cache=None):
    """Time-step matrix of the linearised system (constant in time).

    Returns ``(A, blocks)`` with the zeta field stored in the ``phi`` slot.
    """
    cache = cache or GeometryCache(mesh, dofmap)
    q = params
    M, K = _scalar_ops(cache)
    E, Bdiv = _u_ops(cache)

    blocks = {
        ("cp", "cp"): M / dt + q.D_p * K,
        ("cp", "p"): -(q.beta1 / dt) * M,
        ("cp", "phi"): -(q.beta2 / dt) * M,
        ("cl", "cl"): M / dt + q.D_l * K,
        ("cl", "p"): -(q.beta1 / dt) * M,
        ("cl", "phi"): -(q.beta2 / dt) * M,
        ("u", "u"): 2.0 * q.mu_s * E,
        ("u", "phi"): np.swapaxes(Bdiv, 1, 2),
        ("p", "cp"): -M / dt,
        ("p", "p"): (1.0 + q.alpha / q.lam_s) * M / dt + q.mobility * K,
        ("p", "phi"): -M / (q.lam_s * dt),
        ("phi", "u"): Bdiv,
        ("phi", "p"): (q.alpha / q.lam_s) * M,
        ("phi", "phi"): -M / q.lam_s,
    }
    rows, cols, vals = [], [], []
    for (fi, fj), loc in blocks.items():
        r, c, v = _scatter(dofmap, fi, fj, loc)
        rows.append(r)
        cols.append(c)
        vals.append(v)
    n = dofmap.total
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A, blocks


def _rhs(cache, dofmap, params, data, dt, prev, t):
    """Right-hand side at time t given the previous-step vector."""
    q = params
    mesh = cache.mesh
    n = dofmap.total
    b = np.zeros(n)
    dV, N1, VU = cache.dV, cache.N1, cache.VU
    X = cache.X

    def add_scalar_source(fieldname, fn):
        if fn is None:
            return
        vals = _eval_fn(fn, X, t).reshape(dV.shape)
        loc = np.einsum("cq,aq->ca", dV * vals, N1)
        np.add.at(b, dofmap.offsets[fieldname]
                  + dofmap.cell_dofs[fieldname].ravel(), loc.reshape(-1))

    add_scalar_source("cp", data.f_cp)
    add_scalar_source("cl", data.f_cl)
    add_scalar_source("p", data.f_p)
    if data.f_u is not None:
        d = mesh.dim
        vals = _eval_fn(data.f_u, X, t).reshape(dV.shape + (d,))
        loc = np.einsum("cq,cqi,aq->cai", dV, vals, VU)
        np.add.at(b, dofmap.offsets["u"] + dofmap.cell_dofs["u"].ravel(),
                  loc.reshape(-1))
    if data.traction is not None:
        grp = cache.facet_group(data.traction_tags)
        if grp is not None:
            tv = _eval_fn(data.traction, grp["X"], t,
                          grp["normals"][:, None, :]).reshape(grp["X"].shape)
            loc = np.einsum("fq,fqi,faq->fai", grp["dS"], tv, grp["VUf"])
            rows = dofmap.cell_dofs["u"][grp["cells"]] + dofmap.offsets["u"]
            np.add.at(b, rows.ravel(), loc.reshape(-1))
    if data.flux_p is not None:
        grp = cache.facet_group(data.flux_tags)
        if grp is not None:
            g = _eval_fn(data.flux_p, grp["X"], t,
                         grp["normals"][:, None, :]).reshape(grp["dS"].shape)
            loc = np.einsum("fq,fq,faq->fa", grp["dS"], g, grp["N1f"])
            rows = dofmap.cell_dofs["p"][grp["cells"]] + dofmap.offsets["p"]
            np.add.at(b, rows.ravel(), loc.reshape(-1))

    # backward-Euler history terms
    M, _ = _scalar_ops(cache)

    def add_hist(fieldname, coef, src_field):
        vec = prev[dofmap.field_slice(src_field)]
        loc = np.einsum("cab,cb->ca", M, vec[dofmap.cell_dofs[src_field]])
        np.add.at(b, dofmap.offsets[fieldname]
                  + dofmap.cell_dofs[fieldname].ravel(),
                  (coef * loc).reshape(-1))

    add_hist("cp", 1.0 / dt, "cp")
    add_hist("cl", 1.0 / dt, "cl")
    add_hist("p", (1.0 + q.alpha / q.lam_s) / dt, "p")
    add_hist("p", -1.0 / (q.lam_s * dt), "phi")
    return b


def solve_linear_biot(mesh, params, data, dt, n_steps, initial=None,
                      dofmap=None):
    """Backward-Euler march of the linear system; returns the trajectory of
    monolithic vectors and the stability quantities per step."""
    dofmap = dofmap or build_dofmap(mesh)
    cache = GeometryCache(mesh, dofmap)
    A, _ = assemble_linear_biot(mesh, dofmap, params, dt, cache)

    # Dirichlet rows: identity with prescribed values
    from .assembly import build_constraints, ProblemData
    cons = build_constraints(mesh, dofmap, ProblemData(dirichlet=data.dirichlet))
    mask = cons.mask
    keep = sp.diags((~mask).astype(float))
    fix = sp.diags(mask.astype(float))
    A = (keep @ A + fix).tocsr()
    lu = spla.splu(A.tocsc())

    x = np.zeros(dofmap.total) if initial is None else initial.copy()
    traj = [x.copy()]
    for n in range(n_steps):
        t = (n + 1) * dt
        b = _rhs(cache, dofmap, params, data, dt, x, t)
        b[cons.rows] = cons.values(t)
        x = lu.solve(b)
        traj.append(x.copy())
    return dofmap, traj


def field_norms(mesh, dofmap, vec, cache=None):
    """(||u||_1, ||p||_0, ||p||_1, ||zeta||_0, ||c_p||_0, ||c_l||_0,
    |c_p|_1, |c_l|_1) of one monolithic vector."""
    cache = cache or GeometryCache(mesh, dofmap)
    dV, N1, G1, GU, VU = cache.dV, cache.N1, cache.G1, cache.GU, cache.VU
    d = mesh.dim

    def scal(fieldname):
        z = vec[dofmap.field_slice(fieldname)][dofmap.cell_dofs[fieldname]]
        val = np.einsum("aq,ca->cq", N1, z)
        grad = np.einsum("cad,ca->cd", G1, z)
        l2 = np.sum(dV * val ** 2)
        h1 = np.sum(dV.sum(axis=1) * np.sum(grad ** 2, axis=1))
        return np.sqrt(l2), np.sqrt(h1)

    uloc = vec[dofmap.field_slice("u")][dofmap.cell_dofs["u"]]
    uloc = uloc.reshape(len(uloc), d + 2, d)
    uval = np.einsum("cai,aq->cqi", uloc, VU)
    ugrad = np.einsum("cai,caqd->cqid", uloc, GU)
    u_h1 = np.sqrt(np.sum(dV * (np.sum(uval ** 2, axis=2)
                                + np.sum(ugrad ** 2, axis=(2, 3)))))
    p0, p1 = scal("p")
    z0, _ = scal("phi")
    cp0, cp1 = scal("cp")
    cl0, cl1 = scal("cl")
    return u_h1, p0, np.hypot(p0, p1), z0, cp0, cl0, cp1, cl1


def stability_lhs(mesh, dofmap, traj, dt):
    """Left-hand side of the discrete continuous-dependence estimate: final
    field norms plus the time-accumulated dissipation norms."""
    cache = GeometryCache(mesh, dofmap)
    acc_p = acc_cp = acc_cl = 0.0
    for vec in traj[1:]:
        u1, p0, ph1, z0, cp0, cl0, cp1, cl1 = field_norms(mesh, dofmap, vec,
                                                          cache)
        acc_p += dt * ph1 ** 2
        acc_cp += dt * cp1 ** 2
        acc_cl += dt * cl1 ** 2
    u1, p0, _, z0, cp0, cl0, _, _ = field_norms(mesh, dofmap, traj[-1], cache)
    return (u1 + p0 + z0 + np.sqrt(acc_p) + cp0 + cl0
            + np.sqrt(acc_cp) + np.sqrt(acc_cl))


def infsup_constant(mesh, dofmap=None):
    """Discrete inf-sup constant of the (u, zeta) pairing: smallest
    generalised singular value of the divergence coupling with respect to
    the H1(u) and L2(zeta) inner products (dense; small meshes only)."""
    dofmap = dofmap or build_dofmap(mesh)
    cache = GeometryCache(mesh, dofmap)
    E, Bdiv = _u_ops(cache)
    M, _ = _scalar_ops(cache)

    def assemble(fi, fj, loc):
        r, c, v = _scatter(dofmap, fi, fj, loc)
        shape = (dofmap.counts[fi], dofmap.counts[fj])
        r = r - dofmap.offsets[fi]
        c = c - dofmap.offsets[fj]
        return sp.coo_matrix((v, (r, c)), shape=shape).toarray()

    dV, GU, VU = cache.dV, cache.GU, cache.VU
    d = mesh.dim
    nv = d + 1
    dot = np.einsum("cq,caqd,cbqd->cab", dV, GU, GU)
    val = np.einsum("cq,aq,bq->cab", dV, VU, VU)
    eye = np.eye(d)
    H1 = np.einsum("cab,ik->caibk", dot + val, eye)
    H1 = H1.reshape(H1.shape[0], (nv + 1) * d, (nv + 1) * d)

    A = assemble("u", "u", H1)
    B = assemble("phi", "u", Bdiv)
    Mz = assemble("phi", "phi", M)

    # constrain u on the whole boundary (H1_0-type pairing)
    bverts = np.unique(mesh.bfacet_vertices.ravel())
    fixed = np.concatenate([bverts * d + c for c in range(d)])
    free = np.setdiff1d(np.arange(dofmap.counts["u"]), fixed)
    A = A[np.ix_(free, free)]
    B = B[:, free]

    Ainv_Bt = np.linalg.solve(A, B.T)
    S = B @ Ainv_Bt
    # zeta has a constant nullspace component when u = 0 on the boundary;
    # measure the inf-sup constant on the orthogonal complement
    from scipy.linalg import eigh
    w = np.sort(eigh(S, Mz, eigvals_only=True))
    return float(np.sqrt(max(w[1], 0.0)))
