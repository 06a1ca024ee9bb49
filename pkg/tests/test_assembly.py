import numpy as np
import pytest

import conftest as ct
from oedema import constitutive as co, mesh as mesh_mod
from oedema.assembly import (DirichletRule, GeometryCache, ProblemData,
                             State, TractionRule, apply_dirichlet,
                             assemble_system, blocks_to_matrix,
                             build_constraints)
from oedema.fem import FIELDS, build_dofmap


def assemble_full(mesh, dofmap, sk, sn, dt, mat, bc, t, quad=4):
    cache = GeometryCache(mesh, dofmap, quad)
    res, blocks = assemble_system(cache, sk, sn, dt, mat, bc, t)
    return res, blocks_to_matrix(dofmap, blocks)


class TestResidual:
    def test_rest_state_equilibrium(self):
        msh = ct.tagged_square(3)
        dm = build_dofmap(msh)
        mat = ct.toy_material(with_bio=False)
        bc = ct.clamped_bc(msh)
        s = ct.rest_state(dm)
        cache = GeometryCache(msh, dm)
        res, _ = assemble_system(cache, s, s, 0.1, mat, bc, 0.0,
                                 want_matrix=False)
        assert np.abs(res).max() <= 1e-12

    def test_constraint_block_zero_at_rest(self):
        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        mat = ct.toy_material()
        bc = ct.clamped_bc(msh)
        s = ct.rest_state(dm)
        rng = np.random.default_rng(0)
        s.cp[:] = 0.01 * rng.random(dm.counts["cp"])  # constraint unaffected
        cache = GeometryCache(msh, dm)
        res, _ = assemble_system(cache, s, s, 0.1, mat, bc, 0.0,
                                 want_matrix=False)
        assert np.abs(res[dm.field_slice("phi")]).max() == 0.0

    def test_1d_single_cell_hand_integrated_pressure_row(self):
        # one segment [0, 1], one-point quadrature, linear fields
        msh = mesh_mod.interval_mesh(1, 0.0, 1.0)
        dm = build_dofmap(msh)
        mat = ct.toy_material(perm=co.PowerLaw(0.3, 0.2), alpha=0.25)
        bc = ProblemData()
        sk = State(cp=np.array([0.01, 0.02]), cl=np.array([0.005, 0.01]),
                   u=np.array([0.0, 0.05, 0.0]), p=np.array([0.2, -0.1]),
                   phi=np.array([0.21, 0.19]))
        sn = State(cp=sk.cp * 0.9, cl=sk.cl.copy(), u=sk.u * 0.5,
                   p=sk.p * 0.8, phi=np.array([0.2, 0.2]))
        dt = 0.05
        cache = GeometryCache(msh, dm, quad_degree=1)
        res, _ = assemble_system(cache, sk, sn, dt, mat, bc, 0.0,
                                 want_matrix=False)
        # hand evaluation at the midpoint
        rho, mu_f = mat.rho_f, mat.mu_f
        F = 1.0 + (sk.u[1] - sk.u[0])  # du/dx; bubble grad vanishes mid-cell
        J = F
        phi_m = 0.5 * (sk.phi[0] + sk.phi[1])
        phin_m = 0.5 * (sn.phi[0] + sn.phi[1])
        cp_m = 0.5 * (sk.cp[0] + sk.cp[1])
        p_m = 0.5 * (sk.p[0] + sk.p[1])
        gradp = sk.p[1] - sk.p[0]
        kap = mat.perm.scalar(J, phi_m) / mu_f
        darcy = rho * phi_m * J * (1.0 / F) * kap * (1.0 / F) * gradp
        from oedema.biology import starling_source
        ell, _, _ = starling_source(p_m, cp_m, mat.starling)
        mass = rho * J * ((phi_m - phin_m) / dt - ell)
        expected = np.array([mass * 0.5 + darcy * (-1.0),
                             mass * 0.5 + darcy * (+1.0)])
        got = res[dm.field_slice("p")]
        assert np.abs(got - expected).max() <= 1e-12 * max(1, abs(darcy))

    def test_source_terms_subtract(self):
        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        mat = ct.toy_material(with_bio=False)
        s = ct.rest_state(dm)
        bc = ProblemData(source_p=lambda x, t: np.ones(len(x)))
        cache = GeometryCache(msh, dm)
        res, _ = assemble_system(cache, s, s, 0.1, mat, bc, 0.0,
                                 want_matrix=False)
        # minus the P1 load vector of the unit source
        assert res[dm.field_slice("p")].sum() == pytest.approx(-1.0)


class TestTangent:
    def fd_check(self, mesh, mat, bc, rng, quad=4, n_dirs=10, rel=1e-5):
        dm = build_dofmap(mesh)
        sn = ct.random_state(dm, rng)
        x = sn.to_vector(dm) + 0.005 * rng.standard_normal(dm.total)
        sk = State.from_vector(dm, x)
        dt, t = 0.05, 0.7
        cache = GeometryCache(mesh, dm, quad)
        res, blocks = assemble_system(cache, sk, sn, dt, mat, bc, t)
        A = blocks_to_matrix(dm, blocks)
        worst = 0.0
        for _ in range(n_dirs):
            dv = rng.standard_normal(dm.total)
            eps = 1e-6 * (1 + np.linalg.norm(x)) / np.linalg.norm(dv)
            rp, _ = assemble_system(cache, State.from_vector(dm, x + eps * dv),
                                    sn, dt, mat, bc, t, want_matrix=False)
            rm, _ = assemble_system(cache, State.from_vector(dm, x - eps * dv),
                                    sn, dt, mat, bc, t, want_matrix=False)
            fd = (rp - rm) / (2 * eps)
            Ad = A @ dv
            worst = max(worst, np.linalg.norm(Ad - fd) / np.linalg.norm(Ad))
        assert worst <= rel

    def test_fd_consistency_full_physics_2d(self):
        rng = np.random.default_rng(42)
        msh = ct.tagged_square(2)
        trac = TractionRule((mesh_mod.SIGMA,),
                            lambda x, t, n: 0.05 * np.sin(t) * n,
                            follower=True)
        self.fd_check(msh, ct.toy_material(), ct.clamped_bc(msh, traction=trac),
                      rng)

    def test_fd_consistency_1d(self):
        rng = np.random.default_rng(7)
        msh = ct.tagged_interval(5)
        self.fd_check(msh, ct.toy_material(perm=co.PowerLaw(0.3, 0.2)),
                      ct.clamped_bc(msh), rng, n_dirs=6)

    def test_fd_consistency_exponential_perm(self):
        rng = np.random.default_rng(9)
        msh = ct.tagged_square(2, pattern="right")
        self.fd_check(msh, ct.toy_material(perm=co.Exponential(0.3)),
                      ct.clamped_bc(msh), rng, n_dirs=6)

    def test_linear_elasticity_block_at_rest(self):
        # (u,u) block at rest with NH equals 2 mu eps:eps + lam div div,
        # assembled here independently from P1/bubble gradients
        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        mat = ct.toy_material(with_bio=False)
        s = ct.rest_state(dm)
        cache = GeometryCache(msh, dm)
        _, blocks = assemble_system(cache, s, s, 0.1, mat, ProblemData(), 0.0)
        A3 = blocks[(2, 2)]

        mu, lam = mat.solid.mu_s, mat.solid.lam_s
        dV, GU = cache.dV, cache.GU
        dot = np.einsum("cq,caqd,cbqd->cab", dV, GU, GU)
        cross = np.einsum("cq,caqk,cbqi->caibk", dV, GU, GU)
        div = np.einsum("cq,caqi,cbqk->caibk", dV, GU, GU)
        eye = np.eye(2)
        ref = (mu * np.einsum("cab,ik->caibk", dot, eye) + mu * cross
               + lam * div)
        ref = ref.reshape(ref.shape[0], 8, 8)
        assert np.abs(A3 - ref).max() <= 1e-12 * np.abs(ref).max()

    def test_zero_blocks_never_assembled(self):
        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        rng = np.random.default_rng(3)
        sk = ct.random_state(dm, rng)
        cache = GeometryCache(msh, dm)
        _, blocks = assemble_system(cache, sk, sk, 0.1, ct.toy_material(),
                                    ct.clamped_bc(msh), 0.2)
        present = {k for k in blocks if k != "surf"}
        zero_pattern = {(2, 0), (2, 1), (2, 4), (0, 3), (1, 3), (3, 1),
                        (4, 0), (4, 1), (4, 3)}
        assert present.isdisjoint(zero_pattern)
        assert len(present) == 16

    def test_traversal_order_independence(self):
        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        rng = np.random.default_rng(5)
        sk = ct.random_state(dm, rng)
        mat = ct.toy_material()
        bc = ct.clamped_bc(msh)
        res1, A1 = assemble_full(msh, dm, sk, sk, 0.1, mat, bc, 0.1)

        # same mesh with cells visited in a different order; bubble dofs are
        # cell-indexed, so the monolithic dofs permute accordingly
        perm = np.random.default_rng(1).permutation(msh.num_cells)
        msh2 = mesh_mod.Mesh(2, msh.vertices, msh.cells[perm],
                             msh.bfacet_vertices,
                             np.array([np.flatnonzero(perm == c)[0]
                                       for c in msh.bfacet_cells]),
                             msh.bfacet_tags)
        dm2 = build_dofmap(msh2)
        V, C = msh.num_vertices, msh.num_cells
        dofmap_perm = np.arange(dm.total)
        off_u = dm.offsets["u"]
        for i in range(C):
            for c in range(2):
                dofmap_perm[off_u + 2 * (V + i) + c] = \
                    off_u + 2 * (V + perm[i]) + c
        sk2 = State.from_vector(dm2, sk.to_vector(dm)[dofmap_perm])
        res2, A2 = assemble_full(msh2, dm2, sk2, sk2, 0.1, mat, bc, 0.1)
        scale = max(1.0, np.abs(A1.data).max())
        res1p = res1[dofmap_perm]
        A1p = A1[dofmap_perm][:, dofmap_perm]
        assert np.abs(res1p - res2).max() <= 1e-12
        assert np.abs((A1p - A2).toarray()).max() <= 1e-12 * scale


class TestDirichlet:
    def test_increment_formulation(self):
        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        mat = ct.toy_material(with_bio=False)
        gval = 0.037
        bc = ProblemData(dirichlet=[
            DirichletRule("u", (mesh_mod.GAMMA,),
                          lambda x, t: np.full(len(x), gval)),
            DirichletRule("p", (mesh_mod.SIGMA,), ct.zero_fn)])
        cons = build_constraints(msh, dm, bc)
        s = ct.rest_state(dm)
        res, A = assemble_full(msh, dm, s, s, 0.1, mat, bc, 0.0)
        A, res = apply_dirichlet(A, res, cons, s.to_vector(dm), 0.0)
        # constrained rows: residual equals current - prescribed, so the
        # Newton update moves them exactly onto the data
        assert np.allclose(res[cons.rows],
                           s.to_vector(dm)[cons.rows] - cons.values(0.0))
        delta = -res
        moved = s.to_vector(dm)[cons.rows] + delta[cons.rows]
        assert np.allclose(moved, cons.values(0.0))
        # rows replaced by identity
        rows = A[cons.rows].toarray()
        eye_cols = rows[:, cons.rows]
        assert np.allclose(eye_cols, np.eye(len(cons.rows)))
        off = rows.copy()
        off[:, cons.rows] -= np.eye(len(cons.rows))
        assert np.abs(off).max() == 0.0

    def test_time_dependent_pressure_value(self):
        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        p0 = 1.3
        bc = ProblemData(dirichlet=[DirichletRule(
            "p", (mesh_mod.SIGMA,),
            lambda x, t: np.full(len(x), p0 * np.sin(np.pi * t) ** 2))])
        cons = build_constraints(msh, dm, bc)
        for t in (0.0, 0.25, 0.5):
            expect = p0 * np.sin(np.pi * t) ** 2
            assert np.allclose(cons.values(t), expect)

    def test_natural_neumann_needs_no_action(self):
        # zero-flux boundaries leave the rest state in equilibrium
        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        mat = ct.toy_material(with_bio=False)
        s = ct.rest_state(dm)
        cache = GeometryCache(msh, dm)
        res, _ = assemble_system(cache, s, s, 0.1, mat, ProblemData(), 0.0,
                                 want_matrix=False)
        assert np.abs(res).max() <= 1e-13


class TestSymmetry:
    def test_species_relabelling(self):
        # chi = 0, equal diffusion, equal (zero) reactions, same data:
        # the two concentration fields stay identical through a solve
        from oedema.biology import ImmuneParams
        from oedema.solver import SolverConfig, time_loop

        msh = ct.tagged_square(2)
        dm = build_dofmap(msh)
        immune = ImmuneParams(gamma_p=0.0, lambda_lp=0.0, lambda_pl=0.0,
                              D_p=0.1, D_l=0.1, chi=0.0)
        mat = ct.toy_material()
        mat = type(mat)(solid=mat.solid, perm=mat.perm, alpha=mat.alpha,
                        phi0=mat.phi0, rho_f=mat.rho_f, mu_f=mat.mu_f,
                        immune=immune, starling=ct.toy_starling())
        bc = ct.clamped_bc(msh)
        s0 = ct.rest_state(dm)
        x = msh.vertices
        blob = 0.01 * np.exp(-10 * ((x[:, 0] - 0.4) ** 2
                                    + (x[:, 1] - 0.6) ** 2))
        s0.cp[:] = blob
        s0.cl[:] = blob
        traj = time_loop(msh, dm, s0, mat, bc,
                         SolverConfig(dt=0.05, t_final=0.25))
        for s in traj.states:
            assert np.abs(s.cp - s.cl).max() <= 1e-12
