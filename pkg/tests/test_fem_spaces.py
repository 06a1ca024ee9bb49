from math import factorial

import numpy as np
import pytest

from oedema import fem, mesh as m


def tri_moment(a, b):
    # int over the reference triangle of x^a y^b
    return factorial(a) * factorial(b) / factorial(a + b + 2)


class TestQuadrature:
    def test_centroid_rule(self):
        q = fem.quadrature_rule(2, 1)
        assert len(q.weights) == 1
        assert q.weights[0] == pytest.approx(0.5)
        assert np.allclose(q.points[0], [1 / 3, 1 / 3, 1 / 3])

    def test_linear_moment(self):
        q = fem.quadrature_rule(2, 1)
        x = q.points[:, 1]
        assert np.sum(q.weights * x) == pytest.approx(1 / 6, abs=1e-15)

    def test_degree4_x2y2(self):
        q = fem.quadrature_rule(2, 4)
        x, y = q.points[:, 1], q.points[:, 2]
        val = np.sum(q.weights * x ** 2 * y ** 2)
        assert abs(val - 1.0 / 180.0) < 1e-14

    @pytest.mark.parametrize("deg", range(1, 7))
    def test_triangle_exactness(self, deg):
        q = fem.quadrature_rule(2, deg)
        x, y = q.points[:, 1], q.points[:, 2]
        for a in range(deg + 1):
            for b in range(deg + 1 - a):
                val = np.sum(q.weights * x ** a * y ** b)
                assert val == pytest.approx(tri_moment(a, b), abs=2e-15)

    @pytest.mark.parametrize("deg", range(1, 7))
    def test_interval_exactness(self, deg):
        q = fem.quadrature_rule(1, deg)
        t = q.points[:, 1]
        for a in range(deg + 1):
            assert np.sum(q.weights * t ** a) == pytest.approx(
                1.0 / (a + 1), abs=1e-15)

    @pytest.mark.parametrize("dim", [1, 2])
    @pytest.mark.parametrize("deg", range(1, 7))
    def test_weights_positive_sum_to_measure(self, dim, deg):
        q = fem.quadrature_rule(dim, deg)
        assert np.all(q.weights > 0)
        ref = 1.0 if dim == 1 else 0.5
        assert q.weights.sum() == pytest.approx(ref, abs=1e-14)

    def test_rejects_unsupported_degree(self):
        with pytest.raises(ValueError):
            fem.quadrature_rule(2, 7)
        with pytest.raises(ValueError):
            fem.quadrature_rule(2, 0)


class TestBasis:
    def test_bubble_at_barycentre(self):
        spec = fem.ElementSpec(fem.P1_BUBBLE, 2)
        vals, _ = fem.eval_basis(spec, [[1 / 3, 1 / 3, 1 / 3]])
        assert vals[3, 0] == pytest.approx(1.0 / 27.0, abs=1e-16)

    def test_bubble_vanishes_on_edges(self):
        spec = fem.ElementSpec(fem.P1_BUBBLE, 2)
        pts = [[0.0, 0.4, 0.6], [0.3, 0.0, 0.7], [0.5, 0.5, 0.0]]
        vals, _ = fem.eval_basis(spec, pts)
        assert np.allclose(vals[3], 0.0)

    def test_partition_of_unity(self):
        rng = np.random.default_rng(11)
        lam = rng.dirichlet(np.ones(3), size=100)
        vals, grads = fem.eval_basis(fem.ElementSpec(fem.P1), lam)
        assert np.allclose(vals.sum(axis=0), 1.0)
        assert np.allclose(grads[:3].sum(axis=0), 0.0)

    def test_1d_bubble_quadratic(self):
        spec = fem.ElementSpec(fem.P1_BUBBLE, 1)
        vals, _ = fem.eval_basis(spec, [[0.5, 0.5], [1.0, 0.0]])
        assert vals[2, 0] == pytest.approx(0.25)
        assert vals[2, 1] == 0.0


class TestDofMap:
    def test_mini_displacement_count(self):
        msh = m.rectangle_mesh(1, 1, 1.0, 1.0, "crossed")
        dm = fem.build_dofmap(msh)
        assert dm.counts["u"] == 2 * (5 + 4)

    def test_single_free_pressure_dof(self):
        msh = m.rectangle_mesh(1, 1, 1.0, 1.0, "crossed")
        msh = m.tag_boundary(msh, [(lambda x: True, m.SIGMA)])
        dm = fem.build_dofmap(msh)
        fixed, _ = dm.dirichlet_dofs("p", [m.SIGMA])
        assert dm.counts["p"] - len(fixed) == 1

    def test_interval_scalar_dofs(self):
        msh = m.interval_mesh(4, 0.0, 1.0)
        dm = fem.build_dofmap(msh)
        for f in ("cp", "cl", "p", "phi"):
            assert dm.counts[f] == 5
        assert dm.counts["u"] == 5 + 4

    def test_monolithic_ordering(self):
        msh = m.rectangle_mesh(2, 2, 1.0, 1.0, "crossed")
        dm = fem.build_dofmap(msh)
        offsets = [dm.offsets[f] for f in fem.FIELDS]
        assert offsets == sorted(offsets)
        assert dm.offsets["cp"] == 0
        assert dm.total == sum(dm.counts.values())

    def test_cell_dof_bijection(self):
        msh = m.rectangle_mesh(2, 3, 1.0, 1.0, "crossed")
        dm = fem.build_dofmap(msh)
        for f in fem.FIELDS:
            seen = np.unique(dm.cell_dofs[f])
            assert seen.min() == 0
            assert seen.max() == dm.counts[f] - 1
            assert len(seen) == dm.counts[f]
