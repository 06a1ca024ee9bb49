import numpy as np
import pytest

from oedema import biology as bio

REF_IMMUNE = bio.ImmuneParams(gamma_p=0.12 / 0.2, lambda_lp=1.5 / 0.2,
                              lambda_pl=7.1 / 0.2, D_p=5e-3, D_l=0.25,
                              chi=0.05)

REF_STARLING = bio.StarlingParams(
    ell0=6.82e-5, p_c=20.0, pi_c=20.0, pi_i=10.0, k_m=6.5, p0=0.0,
    v_max=200.0, n=1.0, s_over_v=174.0, L_p0=3.6e-8, L_bp=1e4, L_br=1e4,
    sigma0=0.91)


class TestReactions:
    def test_pathogen_zero_concentration(self):
        assert bio.reaction_p(0.2, 0.0, 0.5, REF_IMMUNE).value == 0.0

    def test_pathogen_reference_value(self):
        r = bio.reaction_p(0.2, 0.001, 0.003, REF_IMMUNE)
        assert r.value == pytest.approx(1.155e-4, rel=1e-12)

    def test_leukocyte_zero_cases(self):
        assert bio.reaction_l(0.2, 0.01, 0.0, REF_IMMUNE).value == 0.0
        assert bio.reaction_l(0.2, 0.0, 0.01, REF_IMMUNE).value == 0.0

    def test_leukocyte_reference_value(self):
        r = bio.reaction_l(0.2, 0.01, 0.01, REF_IMMUNE)
        assert r.value == pytest.approx(7.1e-4, rel=1e-12)

    def test_no_spontaneous_generation(self):
        # c_p = 0: both reactions vanish identically
        for cl in (0.0, 0.003, 1.0):
            assert bio.reaction_p(0.3, 0.0, cl, REF_IMMUNE).value == 0.0
            assert bio.reaction_l(0.3, 0.0, cl, REF_IMMUNE).value == 0.0

    @pytest.mark.parametrize("fn", [bio.reaction_p, bio.reaction_l])
    def test_partials_match_fd(self, fn):
        rng = np.random.default_rng(0)
        h = 1e-7
        for _ in range(10):
            phi, cp, cl = 0.3 * rng.random() + 0.05, rng.random(), rng.random()
            r = fn(phi, cp, cl, REF_IMMUNE)
            for attr, args in (("d_cp", (phi, cp + h, cl, phi, cp - h, cl)),
                               ("d_cl", (phi, cp, cl + h, phi, cp, cl - h)),
                               ("d_phi", (phi + h, cp, cl, phi - h, cp, cl))):
                a = args
                fd = (fn(a[0], a[1], a[2], REF_IMMUNE).value
                      - fn(a[3], a[4], a[5], REF_IMMUNE).value) / (2 * h)
                assert getattr(r, attr) == pytest.approx(fd, rel=1e-6,
                                                         abs=1e-12)

    def test_rejects_negative_rates(self):
        with pytest.raises(ValueError):
            bio.ImmuneParams(-0.1, 1.0, 1.0, 1.0, 1.0, 1.0)


class TestStarling:
    def test_near_equilibrium_at_rest(self):
        ell, _, _ = bio.starling_source(0.0, 0.0, REF_STARLING)
        # 174 * 3.6e-8 * (20 - 0.91*10) - 6.82e-5
        assert ell == pytest.approx(7.76e-8, rel=1e-3)

    def test_degenerate_hill_is_linear(self):
        q = bio.StarlingParams(ell0=1.0, p_c=5.0, pi_c=2.0, pi_i=1.0,
                               k_m=1.0, p0=0.0, v_max=0.0, n=1.0,
                               s_over_v=2.0, L_p0=0.5, L_bp=0.0, L_br=0.0,
                               sigma0=0.5)
        p = np.linspace(0.0, 4.0, 9)
        ell, dp, dcp = bio.starling_source(p, 0.0 * p, q)
        slope = np.diff(ell) / np.diff(p)
        assert np.allclose(slope, -q.s_over_v * q.L_p0)
        assert np.allclose(dp, -q.s_over_v * q.L_p0)
        assert np.allclose(dcp, 0.0)

    def test_partials_match_fd(self):
        rng = np.random.default_rng(1)
        h = 1e-6
        for _ in range(10):
            p = 15.0 * rng.random() + 0.5
            cp = 0.05 * rng.random()
            ell, dp, dcp = bio.starling_source(p, cp, REF_STARLING)
            fd_p = (bio.starling_source(p + h, cp, REF_STARLING)[0]
                    - bio.starling_source(p - h, cp, REF_STARLING)[0]) / (2 * h)
            fd_c = (bio.starling_source(p, cp + h, REF_STARLING)[0]
                    - bio.starling_source(p, cp - h, REF_STARLING)[0]) / (2 * h)
            assert dp == pytest.approx(fd_p, rel=1e-6)
            assert dcp == pytest.approx(fd_c, rel=1e-6)

    def test_reflection_monotone_decreasing(self):
        cp = np.linspace(0.0, 0.1, 50)
        sig = REF_STARLING.sigma0 / (1.0 + REF_STARLING.L_br * cp)
        assert np.all(np.diff(sig) < 0)

    def test_conductivity_monotone_increasing(self):
        cp = np.linspace(0.0, 0.1, 50)
        cf = (REF_STARLING.s_over_v * REF_STARLING.L_p0
              * (1.0 + REF_STARLING.L_bp * cp))
        assert np.all(np.diff(cf) > 0)

    def test_drainage_bounded(self):
        q = REF_STARLING
        p = np.linspace(-5.0, 500.0, 200)
        ell, _, _ = bio.starling_source(p, 0.0 * p, q)
        cf = q.s_over_v * q.L_p0
        drainage = cf * (q.p_c - p - q.sigma0 * (q.pi_c - q.pi_i)) - ell
        assert np.all(drainage >= q.ell0 * (1.0 - 1e-12))
        assert np.all(drainage <= q.ell0 * (1.0 + q.v_max) * (1.0 + 1e-12))

    def test_subnormal_pressure_clamped(self):
        # below p0 the drainage stays at the baseline and has zero slope
        ell, dp, _ = bio.starling_source(-3.0, 0.0, REF_STARLING)
        cf = REF_STARLING.s_over_v * REF_STARLING.L_p0
        filt = cf * (REF_STARLING.p_c + 3.0
                     - REF_STARLING.sigma0 * 10.0)
        assert ell == pytest.approx(filt - REF_STARLING.ell0)
        assert dp == pytest.approx(-cf)

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            bio.StarlingParams(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 0.5,
                               1.0, 1.0, 1.0, 1.0, 0.91)
        with pytest.raises(ValueError):
            bio.StarlingParams(1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0,
                               1.0, 1.0, 1.0, 1.0, 1.5)
