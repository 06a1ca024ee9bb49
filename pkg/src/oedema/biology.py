"""Immune reaction kinetics and the Starling-Hill transcapillary fluid source.

Reaction rates use the porosity-relative ("barred") coefficients; experiment
configs derive them from raw tissue values by dividing by the baseline
porosity.  All functions are pure and accept scalars or arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ImmuneParams:
    """Relative rates: gamma_p (pathogen reproduction, 1/day),
    lambda_lp (phagocytosis), lambda_pl (leukocyte migration),
    diffusions D_p, D_l (cm^2/day) and chemotaxis chi."""

    gamma_p: float
    lambda_lp: float
    lambda_pl: float
    D_p: float
    D_l: float
    chi: float

    def __post_init__(self):
        for name in ("gamma_p", "lambda_lp", "lambda_pl", "D_p", "D_l", "chi"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class Reaction:
    value: np.ndarray
    d_cp: np.ndarray
    d_cl: np.ndarray
    d_phi: np.ndarray


def reaction_p(phi_f, c_p, c_l, params):
    """Pathogen net production r_p = phi_f (gamma_p - lambda_lp c_l) c_p
    with its partial derivatives."""
    g = params.gamma_p - params.lambda_lp * c_l
    return Reaction(
        value=phi_f * g * c_p,
        d_cp=phi_f * g,
        d_cl=-phi_f * params.lambda_lp * c_p,
        d_phi=g * c_p,
    )


def reaction_l(phi_f, c_p, c_l, params):
    """Leukocyte recruitment r_l = lambda_pl phi_f c_p c_l with partials."""
    lam = params.lambda_pl
    return Reaction(
        value=lam * phi_f * c_p * c_l,
        d_cp=lam * phi_f * c_l,
        d_cl=lam * phi_f * c_p,
        d_phi=lam * c_p * c_l,
    )


@dataclass(frozen=True)
class StarlingParams:
    """Transcapillary filtration minus Hill-saturated lymphatic drainage.

    ell0: normal lymph flow; p_c, pi_c, pi_i, k_m, p0: pressures;
    v_max, n: Hill saturation; s_over_v: vessel area per volume;
    L_p0: capillary wall conductivity; L_bp, L_br: pathogen influence on
    conductivity and on the reflection coefficient; sigma0: baseline
    reflection coefficient.
    """

    ell0: float
    p_c: float
    pi_c: float
    pi_i: float
    k_m: float
    p0: float
    v_max: float
    n: float
    s_over_v: float
    L_p0: float
    L_bp: float
    L_br: float
    sigma0: float

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("Hill coefficient must be >= 1")
        if not 0.0 <= self.sigma0 <= 1.0:
            raise ValueError("sigma0 must lie in [0, 1]")


def starling_source(p, c_p, params):
    """Fluid source ell(p, c_p) and its partial derivatives (d/dp, d/dc_p).

    The Hill term uses (p - p0)_+^n: drainage never drops below the baseline
    ell0 for sub-normal pressures.
    """
    q = params
    cf = q.s_over_v * q.L_p0 * (1.0 + q.L_bp * c_p)
    dcf = q.s_over_v * q.L_p0 * q.L_bp
    sig = q.sigma0 / (1.0 + q.L_br * c_p)
    dsig = -q.sigma0 * q.L_br / (1.0 + q.L_br * c_p) ** 2
    dpi = q.pi_c - q.pi_i

    pm = np.maximum(np.asarray(p, dtype=float) - q.p0, 0.0)
    pn = pm ** q.n
    den = q.k_m ** q.n + pn
    hill = pn / den
    # derivative taken on the clamped side at the p0 kink (0 for p <= p0)
    dhill = np.where(pm > 0.0,
                     q.n * pm ** (q.n - 1.0) * q.k_m ** q.n / den ** 2, 0.0)

    ell = cf * (q.p_c - p - sig * dpi) - q.ell0 * (1.0 + q.v_max * hill)
    d_p = -cf - q.ell0 * q.v_max * dhill
    d_cp = dcf * (q.p_c - p - sig * dpi) - cf * dsig * dpi
    return ell, d_p, d_cp
