"""Manufactured-solution verification harness.

Closed-form fields (all proportional to t except the heterogeneous baseline
porosity) are substituted into the strong equations to produce compatible
sources and boundary data; the solver then runs a few implicit steps on a
refinement ladder and per-field error norms yield convergence rates.

The spatial derivatives of the exact fields are hand-coded and checked
against finite differences; divergences of the composite fluxes are taken
by central differences of the analytically evaluated flux (step 1e-5, far
below discretisation error).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mesh as mesh_mod
from .assembly import (DirichletRule, FluxRule, MaterialParams, ProblemData,
                       State, TractionRule)
from .biology import ImmuneParams, StarlingParams, reaction_l, reaction_p, \
    starling_source
from .constitutive import KCIso, NeoHookean
from .fem import build_dofmap
from .solver import SolverConfig, time_loop


@dataclass(frozen=True)
class MMSParams:
    lam_s: float = 36.4
    mu_s: float = 22.1
    alpha: float = 0.5
    D_p: float = 0.9
    D_l: float = 0.8
    chi: float = 1.0
    rho_f: float = 1.0
    mu_f: float = 1.0
    kappa0: float = 1.0


def immune_params(q: MMSParams):
    return ImmuneParams(gamma_p=1.0, lambda_lp=1.0, lambda_pl=1.0,
                        D_p=q.D_p, D_l=q.D_l, chi=q.chi)


def starling_params():
    # the dimensionless unit set; Hill exponent 2, threshold pressure 1
    return StarlingParams(ell0=1.0, p_c=1.0, pi_c=1.0, pi_i=1.0, k_m=1.0,
                          p0=1.0, v_max=1.0, n=2, s_over_v=1.0, L_p0=1.0,
                          L_bp=1.0, L_br=1.0, sigma0=1.0)


class ExactSolution:
    """The manufactured fields and their first spatial/time derivatives."""

    def __init__(self, params: MMSParams = MMSParams()):
        self.q = params

    # -- scalar fields ----------------------------------------------------
    def cp(self, x, t):
        return t * (0.3 * np.exp(x[:, 0])
                    + 0.1 * np.cos(np.pi * x[:, 0]) * np.cos(np.pi * x[:, 1]))

    def grad_cp(self, x, t):
        pi = np.pi
        gx = t * (0.3 * np.exp(x[:, 0])
                  - 0.1 * pi * np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1]))
        gy = -0.1 * t * pi * np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1])
        return np.stack([gx, gy], axis=1)

    def cl(self, x, t):
        return t * (0.3 * np.exp(x[:, 0])
                    + 0.1 * np.sin(np.pi * x[:, 0]) * np.sin(np.pi * x[:, 1]))

    def grad_cl(self, x, t):
        pi = np.pi
        gx = t * (0.3 * np.exp(x[:, 0])
                  + 0.1 * pi * np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1]))
        gy = 0.1 * t * pi * np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1])
        return np.stack([gx, gy], axis=1)

    def p(self, x, t):
        # sin(pi x y) cos(pi x y) = sin(2 pi x y) / 2
        return 0.5 * t * np.sin(2.0 * np.pi * x[:, 0] * x[:, 1])

    def grad_p(self, x, t):
        pi = np.pi
        c = np.cos(2.0 * pi * x[:, 0] * x[:, 1])
        return np.stack([t * pi * x[:, 1] * c, t * pi * x[:, 0] * c], axis=1)

    # -- displacement ------------------------------------------------------
    def u(self, x, t):
        pi, lam = np.pi, self.q.lam_s
        u1 = np.sin(pi * x[:, 0]) * np.cos(pi * x[:, 1]) + x[:, 0] ** 2 / lam
        u2 = -np.cos(pi * x[:, 0]) * np.sin(pi * x[:, 1]) + x[:, 1] ** 2 / lam
        return 0.25 * t * np.stack([u1, u2], axis=1)

    def grad_u(self, x, t):
        pi, lam = np.pi, self.q.lam_s
        sx, cx = np.sin(pi * x[:, 0]), np.cos(pi * x[:, 0])
        sy, cy = np.sin(pi * x[:, 1]), np.cos(pi * x[:, 1])
        g = np.empty(x.shape[:1] + (2, 2))
        g[:, 0, 0] = pi * cx * cy + 2.0 * x[:, 0] / lam
        g[:, 0, 1] = -pi * sx * sy
        g[:, 1, 0] = pi * sx * sy
        g[:, 1, 1] = -pi * cx * cy + 2.0 * x[:, 1] / lam
        return 0.25 * t * g

    # -- porosity ----------------------------------------------------------
    def phi0(self, x):
        return 0.6 + 0.1 * np.sin(x[:, 0] * x[:, 1])

    def jacobian(self, x, t):
        g = self.grad_u(x, t)
        F = g + np.eye(2)
        return F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]

    def phi_f(self, x, t):
        return self.jacobian(x, t) - 1.0 + self.phi0(x)

    def dt_phi_f(self, x, t):
        # d/dt det(I + t G) = J tr(F^-1 G) with G the spatial gradient factor
        g = self.grad_u(x, t)
        G = self.grad_u(x, 1.0)
        F = g + np.eye(2)
        J = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
        Fi = np.empty_like(F)
        Fi[:, 0, 0] = F[:, 1, 1]
        Fi[:, 0, 1] = -F[:, 0, 1]
        Fi[:, 1, 0] = -F[:, 1, 0]
        Fi[:, 1, 1] = F[:, 0, 0]
        Fi /= J[:, None, None]
        return J * np.einsum("nij,nji->n", Fi, G)


class ForcingTerms:
    """Pointwise strong-form sources for the manufactured solution."""

    def __init__(self, exact: ExactSolution, fd_step=1e-5):
        self.ex = exact
        self.q = exact.q
        self.h = fd_step
        self.immune = immune_params(self.q)
        self.starling = starling_params()
        self.perm = KCIso(self.q.kappa0, 0.6)  # phi0 overridden pointwise
        self.solid = NeoHookean(self.q.mu_s, self.q.lam_s)

    # analytic flux evaluations (first derivatives only)
    def _kin(self, x, t):
        g = self.ex.grad_u(x, t)
        F = g + np.eye(2)
        J = F[:, 0, 0] * F[:, 1, 1] - F[:, 0, 1] * F[:, 1, 0]
        Fi = np.empty_like(F)
        Fi[:, 0, 0] = F[:, 1, 1]
        Fi[:, 0, 1] = -F[:, 0, 1]
        Fi[:, 1, 0] = -F[:, 1, 0]
        Fi[:, 1, 1] = F[:, 0, 0]
        Fi /= J[:, None, None]
        return F, J, Fi

    def flux_cp(self, x, t):
        F, J, Fi = self._kin(x, t)
        phi = J - 1.0 + self.ex.phi0(x)
        y = np.einsum("nji,nj->ni", Fi, self.ex.grad_cp(x, t))  # F^-T grad
        return self.immune.D_p * (phi * J)[:, None] * np.einsum(
            "nij,nj->ni", Fi, y)

    def flux_cl(self, x, t):
        F, J, Fi = self._kin(x, t)
        phi = J - 1.0 + self.ex.phi0(x)
        ycl = np.einsum("nji,nj->ni", Fi, self.ex.grad_cl(x, t))
        ycp = np.einsum("nji,nj->ni", Fi, self.ex.grad_cp(x, t))
        cl = self.ex.cl(x, t)
        inner = self.immune.D_l * ycl - self.immune.chi * cl[:, None] * ycp
        return (phi * J)[:, None] * np.einsum("nij,nj->ni", Fi, inner)

    def flux_p(self, x, t):
        F, J, Fi = self._kin(x, t)
        phi = J - 1.0 + self.ex.phi0(x)
        kap = self.perm.scalar(J, phi, self.ex.phi0(x)) / self.q.mu_f
        y = np.einsum("nji,nj->ni", Fi, self.ex.grad_p(x, t))
        return self.q.rho_f * (phi * J * kap)[:, None] * np.einsum(
            "nij,nj->ni", Fi, y)

    def total_stress(self, x, t):
        F, J, Fi = self._kin(x, t)
        lnJ = np.log(J)[:, None, None]
        FiT = np.swapaxes(Fi, 1, 2)
        Peff = self.q.mu_s * (F - FiT) + self.q.lam_s * lnJ * FiT
        return Peff - (self.q.alpha * self.ex.p(x, t) * J)[:, None, None] * FiT

    def _div(self, fn, x, t):
        """Central-difference divergence of an analytic vector field."""
        h = self.h
        out = np.zeros(len(x))
        for j in range(2):
            dx = np.zeros((1, 2))
            dx[0, j] = h
            out += (fn(x + dx, t)[:, j] - fn(x - dx, t)[:, j]) / (2.0 * h)
        return out

    def _div_tensor(self, fn, x, t):
        h = self.h
        out = np.zeros((len(x), 2))
        for j in range(2):
            dx = np.zeros((1, 2))
            dx[0, j] = h
            out += (fn(x + dx, t)[:, :, j] - fn(x - dx, t)[:, :, j]) / (2.0 * h)
        return out

    # the per-equation sources
    def source_cp(self, x, t):
        ex = self.ex
        F, J, Fi = self._kin(x, t)
        phi = ex.phi_f(x, t)
        mass = J * (phi * ex.cp(x, 1.0) + ex.cp(x, t) * ex.dt_phi_f(x, t))
        r = reaction_p(phi, ex.cp(x, t), ex.cl(x, t), self.immune)
        return mass - self._div(self.flux_cp, x, t) - J * r.value

    def source_cl(self, x, t):
        ex = self.ex
        F, J, Fi = self._kin(x, t)
        phi = ex.phi_f(x, t)
        mass = J * (phi * ex.cl(x, 1.0) + ex.cl(x, t) * ex.dt_phi_f(x, t))
        r = reaction_l(phi, ex.cp(x, t), ex.cl(x, t), self.immune)
        return mass - self._div(self.flux_cl, x, t) - J * r.value

    def body_force(self, x, t):
        return -self._div_tensor(self.total_stress, x, t)

    def source_p(self, x, t):
        ex = self.ex
        F, J, Fi = self._kin(x, t)
        ell, _, _ = starling_source(ex.p(x, t), ex.cp(x, t), self.starling)
        return self.q.rho_f * J * ex.dt_phi_f(x, t) \
            - self._div(self.flux_p, x, t) - self.q.rho_f * J * ell

    # boundary data
    def traction(self, x, t, n):
        return np.einsum("nij,nj->ni", self.total_stress(x, t), n)

    def pressure_flux(self, x, t, n):
        return np.einsum("ni,ni->n", self.flux_p(x, t), n)


def problem_data(forcing: ForcingTerms):
    """Boundary conditions and sources of the convergence study: exact
    displacement on the left edge, exact traction and pressure elsewhere,
    exact concentrations on the whole boundary."""
    ex = forcing.ex
    return ProblemData(
        dirichlet=[
            DirichletRule("u", (mesh_mod.GAMMA,), lambda x, t: ex.u(x, t)),
            DirichletRule("p", (mesh_mod.SIGMA,), lambda x, t: ex.p(x, t)),
            DirichletRule("cp", (mesh_mod.GAMMA, mesh_mod.SIGMA),
                          lambda x, t: ex.cp(x, t)),
            DirichletRule("cl", (mesh_mod.GAMMA, mesh_mod.SIGMA),
                          lambda x, t: ex.cl(x, t)),
        ],
        tractions=[TractionRule((mesh_mod.SIGMA,), forcing.traction,
                                follower=False)],
        flux_p=[FluxRule((mesh_mod.GAMMA,), forcing.pressure_flux)],
        body=forcing.body_force,
        source_cp=forcing.source_cp,
        source_cl=forcing.source_cl,
        source_p=forcing.source_p,
    )


def material_params(forcing: ForcingTerms):
    q = forcing.q
    return MaterialParams(solid=forcing.solid, perm=forcing.perm,
                          alpha=q.alpha, phi0=forcing.ex.phi0,
                          rho_f=q.rho_f, mu_f=q.mu_f,
                          immune=forcing.immune, starling=forcing.starling)


def mms_mesh(n):
    # single-diagonal triangulation: on uniform crossed grids the porosity
    # projection superconverges (rate 2), masking the generic first-order
    # behaviour the study is meant to expose (observed rate here: 1.3)
    msh = mesh_mod.rectangle_mesh(n, n, 1.0, 1.0, "right")
    return mesh_mod.tag_boundary(msh, [
        (lambda x: mesh_mod.near(x[0], 0.0, 1e-10), mesh_mod.GAMMA),
        (lambda x: True, mesh_mod.SIGMA),
    ])


def initial_state(dofmap, exact: ExactSolution):
    s = State.zeros(dofmap)
    s.phi[:] = exact.phi0(dofmap.mesh.vertices)
    return s


def interpolate_exact(dofmap, exact: ExactSolution, t):
    """Vertex interpolant of the exact fields (bubble coefficients zero)."""
    V = dofmap.mesh.vertices
    s = State.zeros(dofmap)
    s.cp[:] = exact.cp(V, t)
    s.cl[:] = exact.cl(V, t)
    s.p[:] = exact.p(V, t)
    s.phi[:] = exact.phi_f(V, t)
    uv = exact.u(V, t)
    for c in range(2):
        s.u[np.arange(len(V)) * 2 + c] = uv[:, c]
    return s


def error_norms(mesh, dofmap, state, exact: ExactSolution, t, quad_degree=6):
    """H1 errors for u, p, c_p, c_l and the L2 error for phi_f."""
    from .assembly import GeometryCache, _grad_u_at_qp

    cache = GeometryCache(mesh, dofmap, quad_degree)
    X = cache.X
    dV = cache.dV
    flat = X.reshape(-1, 2)

    def scal_err(z, val_fn, grad_fn):
        zc = z[dofmap.cell_dofs["p"]]
        val = np.einsum("aq,ca->cq", cache.N1, zc)
        grad = np.einsum("cad,ca->cd", cache.G1, zc)[:, None, :]
        dv = val - val_fn(flat, t).reshape(val.shape)
        dg = grad - grad_fn(flat, t).reshape(X.shape)
        l2 = np.sum(dV * dv ** 2)
        h1 = np.sum(dV * np.sum(dg ** 2, axis=2))
        return np.sqrt(l2 + h1), np.sqrt(l2)

    e_p, _ = scal_err(state.p, exact.p, exact.grad_p)
    e_cp, _ = scal_err(state.cp, exact.cp, exact.grad_cp)
    e_cl, _ = scal_err(state.cl, exact.cl, exact.grad_cl)

    _, e_phi = scal_err(state.phi, lambda x, tt: exact.phi_f(x, tt),
                        lambda x, tt: np.zeros_like(x))

    uloc = state.u[dofmap.cell_dofs["u"]].reshape(-1, 4, 2)
    uval = np.einsum("cai,aq->cqi", uloc, cache.VU)
    ugrad = _grad_u_at_qp(cache, dofmap.cell_dofs["u"], state.u)
    du = uval - exact.u(flat, t).reshape(uval.shape)
    dg = ugrad - exact.grad_u(flat, t).reshape(ugrad.shape)
    e_u = np.sqrt(np.sum(dV * (np.sum(du ** 2, axis=2)
                               + np.sum(dg ** 2, axis=(2, 3)))))
    return {"u_H1": e_u, "p_H1": e_p, "cp_H1": e_cp, "cl_H1": e_cl,
            "phi_L2": e_phi}


def fit_rates(hs, errtable):
    """Least-squares slope of log(err) against log(h) per field."""
    out = {}
    lh = np.log(np.asarray(hs))
    for key in errtable[0]:
        le = np.log([row[key] for row in errtable])
        out[key] = float(np.polyfit(lh, le, 1)[0])
    return out


def run_convergence(levels, dt=0.01, t_final=0.03, base_n=4,
                    params=MMSParams(), quad_degree=4, newton_tol=1e-6,
                    log_fn=None):
    """Refinement study; returns (report rows, fitted rates, newton averages)."""
    exact = ExactSolution(params)
    forcing = ForcingTerms(exact)
    bc = problem_data(forcing)
    mat = material_params(forcing)
    rows, hs, newton_avg = [], [], []
    for lev in range(levels):
        n = base_n * 2 ** lev
        msh = mms_mesh(n)
        dm = build_dofmap(msh)
        cfg = SolverConfig(dt=dt, t_final=t_final, newton_tol=newton_tol,
                           quad_degree=quad_degree)
        traj = time_loop(msh, dm, initial_state(dm, exact), mat, bc, cfg)
        errs = error_norms(msh, dm, traj.states[-1], exact, traj.times[-1])
        h = float(msh.cell_diameters().max())
        hs.append(h)
        counts = traj.newton_counts[1:]
        newton_avg.append(float(np.mean(counts)))
        row = {"level": lev, "h": h, "dofs": dm.total, **errs}
        rows.append(row)
        if log_fn:
            log_fn(f"level={lev} n={n} h={h:.4f} dofs={dm.total} "
                   + " ".join(f"{k}={v:.4e}" for k, v in errs.items()))
    rates = fit_rates(hs, [{k: r[k] for k in
                            ("u_H1", "p_H1", "cp_H1", "cl_H1", "phi_L2")}
                           for r in rows])
    return rows, rates, newton_avg


def write_report_csv(path, rows, rates):
    cols = ["level", "h", "dofs", "err_u_H1", "err_p_H1", "err_cp_H1",
            "err_cl_H1", "err_phi_L2"]
    keymap = {"err_u_H1": "u_H1", "err_p_H1": "p_H1", "err_cp_H1": "cp_H1",
              "err_cl_H1": "cl_H1", "err_phi_L2": "phi_L2"}
    with open(path, "w") as f:
        f.write(",".join(cols) + "\n")
        for r in rows:
            vals = [str(r["level"]), repr(r["h"]), str(r["dofs"])]
            vals += [repr(float(r[keymap[c]])) for c in cols[3:]]
            f.write(",".join(vals) + "\n")
        vals = ["rate", "", ""]
        vals += [repr(float(rates[keymap[c]])) for c in cols[3:]]
        f.write(",".join(vals) + "\n")
