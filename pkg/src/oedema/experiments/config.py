"""Experiment configuration: reference parameters, unit conversion, and
strict config validation.

The reference parameter set uses the raw literature units (mixed mmHg,
seconds, days, centimetres).  The tissue experiments run in a consistent
days-cm-mmHg system; :func:`build_tissue_material` performs the conversion
and derives the porosity-relative rates.  The compression experiments run
in SI-like metre-second units and take their constants verbatim.
"""

from __future__ import annotations

import copy
import json

import numpy as np

from .. import biology, constitutive
from ..assembly import MaterialParams

SECONDS_PER_DAY = 86400.0
PA_PER_MMHG = 133.322387415
# 1 kg/(cm s^2) = 100 Pa
KG_CM_S2_TO_MMHG = 100.0 / PA_PER_MMHG


class ConfigError(ValueError):
    pass


#: raw model constants (units per the reference table; L_br has no
#: published value and defaults to L_bp)
REFERENCE_PARAMS = {
    "E": 60.0,              # kg/(cm s^2), Young modulus
    "nu": 0.35,             # Poisson coefficient
    "alpha": 0.25,          # Biot-Willis coefficient
    "phi0": 0.2,            # initial fluid fraction
    "rho_f": 1.0,           # fluid density scale
    "rho_s": 2e-3,          # solid density scale (body load off)
    "D_p": 1e-3,            # cm^2/day pathogen diffusion
    "D_l": 5e-2,            # cm^2/day leukocyte diffusion
    "chi": 1e-2,            # cm^2/(day conc) chemotaxis
    "gamma_p": 0.12,        # 1/day pathogen reproduction
    "lambda_lp": 1.5,       # 1/(day conc) phagocytosis
    "lambda_pl": 7.1,       # 1/(day conc) leukocyte migration
    "pi_i": 10.0,           # mmHg interstitial oncotic pressure
    "pi_c": 20.0,           # mmHg capillary oncotic pressure
    "sigma_0": 0.91,        # reflection coefficient
    "L_bp": 1e4,            # 1/conc pathogen influence on conductivity
    "L_br": 1e4,            # 1/conc pathogen influence on reflection
    "p_c": 20.0,            # mmHg capillary pressure
    "L_p0": 3.6e-8,         # cm/(s mmHg) capillary wall conductivity
    "ell_0": 6.82e-5,       # 1/s normal lymph flow
    "k_m": 6.5,             # mmHg lymph-flow half saturation
    "n_hill": 1.0,          # Hill exponent
    "v_max": 200.0,         # max lymph-flow amplification
    "K": 2.5e-7,            # cm^2/(s mmHg) baseline Darcy mobility
    "S_over_V": 174.0,      # 1/cm vessel area per volume
    "p_0": 0.0,             # mmHg baseline interstitial pressure
}


def merged_params(overrides):
    params = dict(REFERENCE_PARAMS)
    unknown = set(overrides) - set(params)
    if unknown:
        raise ConfigError(f"unknown parameter keys: {sorted(unknown)}")
    params.update(overrides)
    return params


def lame_constants(E, nu):
    mu = E / (2.0 * (1.0 + nu))
    lam = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu))
    return mu, lam


def build_tissue_material(raw):
    """Days-cm-mmHg material for the 1D sensitivity and 2D oedema runs."""
    q = merged_params(raw)
    phi0 = q["phi0"]
    E_mmHg = q["E"] * KG_CM_S2_TO_MMHG
    mu_s, lam_s = lame_constants(E_mmHg, q["nu"])
    immune = biology.ImmuneParams(
        gamma_p=q["gamma_p"] / phi0,
        lambda_lp=q["lambda_lp"] / phi0,
        lambda_pl=q["lambda_pl"] / phi0,
        D_p=q["D_p"] / phi0,
        D_l=q["D_l"] / phi0,
        chi=q["chi"] / phi0,
    )
    starling = biology.StarlingParams(
        ell0=q["ell_0"] * SECONDS_PER_DAY,
        p_c=q["p_c"], pi_c=q["pi_c"], pi_i=q["pi_i"], k_m=q["k_m"],
        p0=q["p_0"], v_max=q["v_max"], n=q["n_hill"],
        s_over_v=q["S_over_V"],
        L_p0=q["L_p0"] * SECONDS_PER_DAY,
        L_bp=q["L_bp"], L_br=q["L_br"], sigma0=q["sigma_0"],
    )
    perm = constitutive.KCIso(kappa0=q["K"] * SECONDS_PER_DAY, phi0=phi0)
    solid = constitutive.NeoHookean(mu_s=mu_s, lam_s=lam_s)
    return MaterialParams(solid=solid, perm=perm, alpha=q["alpha"],
                          phi0=phi0, rho_f=q["rho_f"], mu_f=1.0,
                          immune=immune, starling=starling)


_DEFAULTS = {
    "sensitivity1d": {
        "experiment": "sensitivity1d",
        "mesh": {"cells": 400, "length": 8.0},
        "params": {},
        "vary": ["E", "lambda_lp", "gamma_p"],
        "factors": [1.0, 2.0, 0.5],
        "ic": {"cp_peak": 0.001, "cp_window": [3.95, 4.05], "cl": 0.003},
        "solver": {"dt": 0.1, "t_final": 40.0, "newton_tol": 1e-6,
                   "newton_max": 25, "quad_degree": 4},
        "early_stop_days": 3.0,
        "output": {"dir": None},
        "notes": [
            "units: days / cm / mmHg; E converted from kg/(cm s^2)",
            "rates, diffusions and chemotaxis divided by phi0 (relative values)",
            "mobility K and Starling constants converted from 1/s to 1/day",
        ],
    },
    "compression2d": {
        "experiment": "compression2d",
        "mesh": {"nx": 50, "ny": 50, "Lx": 1.0, "Ly": 1.0,
                 "pattern": "crossed"},
        "nu_values": [0.2, 0.33, 0.495, 0.499999],
        "params": {"E": 1e4, "alpha": 0.25, "rho_s": 2e-3, "rho_f": 1e-3,
                   "mu_f": 1e-3, "kappa0": 1e-5,
                   "traction_amp": 2000.0, "p_in": 200.0},
        "solver": {"dt": 0.1, "t_final": 1.0, "newton_tol": 1e-6,
                   "newton_max": 40, "quad_degree": 4},
        "output": {"dir": None, "vtk_every": 1},
        "notes": ["units: m / s / Pa; power-law permeability,"
                  " compressible neo-Hookean solid",
                  "p_in read as 0.2 kPa: the nominal 0.2 MPa drain pressure"
                  " against a 10 kPa solid implies boundary stretches of"
                  " order exp(alpha p / lambda_s) ~ 1e3, which contradicts"
                  " the mild compression this case demonstrates"],
    },
    "benchmark2d": {
        "experiment": "benchmark2d",
        "mesh": {"nx": 32, "ny": 20, "Lx": 8.0, "Ly": 5.0,
                 "pattern": "crossed"},
        "params": {"E": 3e4, "nu": 0.2, "alpha": 1.0, "rho_s": 2e-3,
                   "rho_f": 1e-3, "mu_f": 1e-3, "kappa0": 1e-8,
                   "phi0": 0.33, "strip_end": 1.0},
        "probes": [{"label": "A", "x": [0.5, 4.5]},
                   {"label": "B", "x": [8.0, 4.5]}],
        "solver": {"dt": 1.0, "t_final": 100.0, "newton_tol": 1e-6,
                   "newton_max": 40, "quad_degree": 4},
        "load_period": 15.0,
        "output": {"dir": None, "vtk_times": [34.0, 41.0]},
        "notes": ["footing strip 0 <= x <= 1 on the top edge; rollers on"
                  " the vertical walls; drained top; Kozeny-Carman law",
                  "uniform mesh stands in for the graded mesh of the"
                  " reference setup"],
    },
    "mms": {
        "experiment": "mms",
        "levels": 4,
        "base_n": 4,
        "solver": {"dt": 0.01, "t_final": 0.03, "newton_tol": 1e-6,
                   "quad_degree": 4},
        "output": {"dir": None},
        "notes": ["dimensionless unit-square study; errors at t = 0.03"],
    },
    "oedema2d": {
        "experiment": "oedema2d",
        "mesh": {"n": 80, "L": 4.0},
        "params": {},
        "ic": {"cp_peak": 0.001, "radius2": 0.03, "centre": [2.0, 2.0],
               "cl": 0.003},
        "solver": {"dt": 0.1, "t_final": 18.0, "newton_tol": 1e-6,
                   "newton_max": 25, "quad_degree": 4},
        "output": {"dir": None, "vtk_days": [8.0, 13.0, 18.0]},
        "notes": ["units: days / cm / mmHg as in the sensitivity study"],
    },
    "precond": {
        "experiment": "precond",
        "mesh": {"n": 8, "L": 4.0},
        "levels": 2,
        "params": {},
        "ic": {"cp_peak": 0.001, "radius2": 0.03, "centre": [2.0, 2.0],
               "cl": 0.003},
        "solver": {"dt": 0.1, "fgmres_tol": 1e-8, "restart": 200},
        "grid": {"first_level": ["lower", "diagonal"],
                 "modes": ["exact", "inexact"]},
        "output": {"dir": None},
        "notes": ["first-step tangent of the 2D oedema problem; iteration"
                  " counts of right-preconditioned fGMRES"],
    },
}


def default_config(experiment):
    if experiment not in _DEFAULTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    return copy.deepcopy(_DEFAULTS[experiment])


def _check_keys(given, allowed, where):
    unknown = set(given) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def load_config(experiment, path=None, overrides=None):
    """Default config merged with a JSON file; unknown keys are rejected."""
    cfg = default_config(experiment)
    user = {}
    if path is not None:
        with open(path) as f:
            try:
                user = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if overrides:
        user = _deep_merge(user, overrides)
    if "experiment" in user and user["experiment"] != experiment:
        raise ConfigError(
            f"config file is for {user['experiment']!r}, expected "
            f"{experiment!r}")
    _check_keys(user, cfg, f"{experiment} config")
    for key, val in user.items():
        if isinstance(val, dict) and isinstance(cfg.get(key), dict):
            _check_keys(val, cfg[key], f"{experiment}.{key}")
            cfg[key].update(val)
        else:
            cfg[key] = val
    if experiment in ("sensitivity1d", "oedema2d", "precond"):
        merged_params(cfg["params"])  # validate override keys
    return cfg


def _deep_merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out
