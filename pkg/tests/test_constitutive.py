import numpy as np
import pytest

from oedema import constitutive as co


def rand_kinematics(rng, d=2, scale=0.1):
    return co.kinematics(scale * rng.standard_normal((d, d)))


def fd_stress_from_energy(law, grad_u, step=1e-7):
    d = grad_u.shape[-1]
    F = grad_u + np.eye(d)
    h = step * (1.0 + np.linalg.norm(F))
    P = np.zeros((d, d))
    for i in range(d):
        for j in range(d):
            dF = np.zeros((d, d))
            dF[i, j] = h
            Wp = law.energy(co.kinematics(grad_u + dF))
            Wm = law.energy(co.kinematics(grad_u - dF))
            P[i, j] = (Wp - Wm) / (2.0 * h)
    return P


class TestKinematics:
    def test_reference_state(self):
        k = co.kinematics(np.zeros((2, 2)))
        assert k.J == pytest.approx(1.0)
        assert np.allclose(k.F, np.eye(2))
        assert np.allclose(k.C, np.eye(2))

    def test_diagonal_determinant(self):
        k = co.kinematics(np.diag([0.1, -0.05]))
        assert k.J == pytest.approx(1.045, abs=1e-15)

    def test_inverse_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            k = rand_kinematics(rng)
            assert np.allclose(k.F @ k.Finv, np.eye(2), atol=1e-13)

    def test_nonpositive_jacobian_raises(self):
        with pytest.raises(co.NonPositiveJacobian):
            co.kinematics(np.diag([-1.5, 0.0]))

    def test_batched(self):
        g = 0.05 * np.random.default_rng(2).standard_normal((7, 3, 2, 2))
        k = co.kinematics(g)
        assert k.J.shape == (7, 3)


class TestInvariants:
    def test_identity(self):
        I1, I4f, I4s, I8 = co.invariants(np.eye(3), (1, 0, 0), (0, 1, 0))
        assert (I1, I4f, I4s, I8) == (3.0, 1.0, 1.0, 0.0)

    def test_scaling(self):
        I1, I4f, _, _ = co.invariants(2 * np.eye(3), (1, 0, 0), (0, 1, 0))
        assert I1 == 6.0
        assert I4f == 2.0

    def test_diagonal_stretch(self):
        I1, I4f, _, _ = co.invariants(np.diag([4.0, 1.0]), (1, 0), (0, 1))
        assert I4f == 4.0


class TestNeoHookean:
    law = co.NeoHookean(mu_s=2.0, lam_s=4.0)

    def test_stress_free_reference(self):
        k = co.kinematics(np.zeros((2, 2)))
        assert np.allclose(self.law.first_pk(k), 0.0)

    def test_stress_is_energy_gradient(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            G = 0.1 * rng.standard_normal((2, 2))
            P = self.law.first_pk(co.kinematics(G))
            Pfd = fd_stress_from_energy(self.law, G)
            assert np.abs(P - Pfd).max() <= 1e-6 * max(1, np.abs(P).max())

    def test_tangent_at_identity_is_linear_elasticity(self):
        k = co.kinematics(np.zeros((2, 2)))
        A = self.law.stress_tangent(k)
        rng = np.random.default_rng(3)
        dF = rng.standard_normal((2, 2))
        expect = (self.law.mu_s * dF + self.law.mu_s * dF.T
                  + self.law.lam_s * np.trace(dF) * np.eye(2))
        assert np.allclose(np.einsum("ijkl,kl->ij", A, dF), expect)

    def test_tangent_matches_fd(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            G = 0.1 * rng.standard_normal((2, 2))
            kin = co.kinematics(G)
            A = self.law.stress_tangent(kin)
            dF = rng.standard_normal((2, 2))
            eps = 1e-6 * (1.0 + np.linalg.norm(kin.F))
            Pp = self.law.first_pk(co.kinematics(G + eps * dF))
            Pm = self.law.first_pk(co.kinematics(G - eps * dF))
            fd = (Pp - Pm) / (2 * eps)
            ad = np.einsum("ijkl,kl->ij", A, dF)
            assert np.abs(ad - fd).max() <= 1e-5 * np.abs(ad).max()

    def test_angular_momentum_at_identity(self):
        k = co.kinematics(np.zeros((2, 2)))
        P = self.law.first_pk(k)
        assert np.allclose(k.F @ P.T, P @ k.F.T)


HO_2D = co.HolzapfelOgden(a=0.496, b=0.041, a_f=0.193, b_f=0.176,
                          a_s=0.123, b_s=0.209, a_fs=0.162, b_fs=0.166,
                          f0=(1.0, 0.0), s0=(0.0, 1.0))
HO_3D = co.HolzapfelOgden(a=0.496, b=0.041, a_f=0.193, b_f=0.176,
                          a_s=0.123, b_s=0.209, a_fs=0.162, b_fs=0.166,
                          f0=(1.0, 0.0, 0.0), s0=(0.0, 1.0, 0.0))


class TestHolzapfelOgden:
    def test_reference_stress_is_isotropic(self):
        k = co.kinematics(np.zeros((3, 3)))
        P = HO_3D.first_pk(k)
        assert np.allclose(P, HO_3D.a * np.eye(3), atol=1e-14)

    def test_energy_at_identity(self):
        k = co.kinematics(np.zeros((3, 3)))
        assert HO_3D.energy(k) == HO_3D.a / (2 * HO_3D.b)

    def test_stress_is_energy_gradient_3d(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            G = 0.05 * rng.standard_normal((3, 3))
            P = HO_3D.first_pk(co.kinematics(G))
            Pfd = fd_stress_from_energy(HO_3D, G, step=1e-6)
            assert np.abs(P - Pfd).max() <= 1e-5 * np.abs(P).max()

    def test_compression_does_not_activate_fibres(self):
        # uniaxial fibre compression vs reference: the fibre term stays off
        for lam_f in (0.9, 1.0):
            G = np.diag([lam_f - 1.0, 0.0])
            P = HO_2D.first_pk(co.kinematics(G))
            iso = co.HolzapfelOgden(HO_2D.a, HO_2D.b, 0.0, HO_2D.b_f,
                                    0.0, HO_2D.b_s, 0.0, HO_2D.b_fs,
                                    HO_2D.f0, HO_2D.s0)
            P_iso = iso.first_pk(co.kinematics(G))
            assert np.allclose(P, P_iso, atol=1e-14)

    def test_extension_activates_fibres(self):
        G = np.diag([0.1, 0.0])
        P = HO_2D.first_pk(co.kinematics(G))
        iso = co.HolzapfelOgden(HO_2D.a, HO_2D.b, 0.0, HO_2D.b_f,
                                0.0, HO_2D.b_s, 0.0, HO_2D.b_fs,
                                HO_2D.f0, HO_2D.s0)
        assert not np.allclose(P, iso.first_pk(co.kinematics(G)))

    def test_fd_tangent_consistency(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            G = 0.05 * rng.standard_normal((2, 2))
            kin = co.kinematics(G)
            A = HO_2D.stress_tangent(kin)
            dF = rng.standard_normal((2, 2))
            eps = 2e-6 * (1.0 + np.linalg.norm(kin.F))
            Pp = HO_2D.first_pk(co.kinematics(G + eps * dF))
            Pm = HO_2D.first_pk(co.kinematics(G - eps * dF))
            fd = (Pp - Pm) / (2 * eps)
            ad = np.einsum("ijkl,kl->ij", A, dF)
            assert np.abs(ad - fd).max() <= 1e-5 * np.abs(ad).max()


class TestPermeability:
    def test_power_law_reference(self):
        pl = co.PowerLaw(kappa0=2.5, phi0=0.2)
        assert pl.scalar(1.0, 0.2) == pytest.approx(2.5)

    def test_kc_reference_value(self):
        kc = co.KCIso(kappa0=1.0, phi0=0.2)
        assert kc.scalar(1.0, 0.2) == pytest.approx(1.0 + 0.8 ** 4, abs=1e-14)

    def test_anisotropic_ratio(self):
        law = co.KCAniso(kappa0=1.0, phi0=0.2, kappa_f=2.5, kappa_s=1.0,
                         f0=(1, 0), s0=(0, 1))
        K = law.tensor(co.kinematics(np.zeros((2, 2))), 0.2)
        ev = np.linalg.eigvalsh(K)
        assert ev.max() / ev.min() == pytest.approx(2.5)

    def test_3d_anisotropic_spd(self):
        law = co.KCAniso(kappa0=1.0, phi0=0.2, kappa_f=2.5, kappa_s=1.0,
                         f0=(1, 0, 0), s0=(0, 1, 0))
        rng = np.random.default_rng(7)
        for _ in range(5):
            kin = co.kinematics(0.1 * rng.standard_normal((3, 3)))
            K = law.tensor(kin, 0.22)
            K = K + 1e-12 * np.eye(3)  # fibre-plane tensor is rank-2 in 3D
            assert np.allclose(K, K.T)

    @pytest.mark.parametrize("law", [
        co.KCIso(1.0, 0.2), co.PowerLaw(1.0, 0.2), co.Exponential(1.0)])
    def test_spd_on_random_states(self, law):
        rng = np.random.default_rng(8)
        for _ in range(20):
            kin = co.kinematics(0.1 * rng.standard_normal((2, 2)))
            phi = 0.2 + 0.1 * rng.random()
            K = co.permeability(kin, phi, law)
            np.linalg.cholesky(K)  # raises if not SPD

    @pytest.mark.parametrize("law", [
        co.KCIso(0.7, 0.25), co.PowerLaw(0.7, 0.25), co.Exponential(0.7)])
    def test_derivatives_match_fd(self, law):
        J0, phi = 1.07, 0.3
        dJ, dphi = law.d_scalar(J0, phi)
        h = 1e-6
        fd_J = (law.scalar(J0 + h, phi) - law.scalar(J0 - h, phi)) / (2 * h)
        fd_p = (law.scalar(J0, phi + h) - law.scalar(J0, phi - h)) / (2 * h)
        assert dJ == pytest.approx(fd_J, rel=1e-6)
        assert dphi == pytest.approx(fd_p, rel=1e-6)

    def test_rejects_nonphysical_porosity(self):
        kc = co.KCIso(1.0, 0.2)
        with pytest.raises(co.PermeabilityError):
            kc.scalar(1.0, -0.1)
