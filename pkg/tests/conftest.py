import numpy as np
import pytest

from oedema import biology, constitutive, mesh as mesh_mod
from oedema.assembly import (DirichletRule, MaterialParams, ProblemData,
                             State, TractionRule)
from oedema.fem import build_dofmap


def zero_fn(x, t):
    return np.zeros(len(x))


def tagged_square(n=2, pattern="crossed"):
    msh = mesh_mod.rectangle_mesh(n, n, 1.0, 1.0, pattern)
    return mesh_mod.tag_boundary(msh, [
        (lambda x: mesh_mod.near(x[0], 0.0, 1e-10), mesh_mod.GAMMA),
        (lambda x: True, mesh_mod.SIGMA)])


def tagged_interval(n=6, length=2.0):
    msh = mesh_mod.interval_mesh(n, 0.0, length)
    return mesh_mod.tag_boundary(msh, [
        (lambda x: mesh_mod.near(x[0], 0.0, 1e-9), mesh_mod.GAMMA),
        (lambda x: True, mesh_mod.SIGMA)])


def toy_immune():
    return biology.ImmuneParams(gamma_p=0.6, lambda_lp=7.5, lambda_pl=35.5,
                                D_p=5e-3, D_l=0.25, chi=0.05)


def toy_starling():
    return biology.StarlingParams(ell0=0.5, p_c=2.0, pi_c=2.0, pi_i=1.0,
                                  k_m=1.5, p0=0.0, v_max=3.0, n=2,
                                  s_over_v=1.7, L_p0=0.3, L_bp=2.0,
                                  L_br=1.5, sigma0=0.91)


def toy_material(with_bio=True, law=None, perm=None, alpha=0.5, rho_f=1.3):
    return MaterialParams(
        solid=law or constitutive.NeoHookean(2.0, 4.0),
        perm=perm or constitutive.KCIso(0.3, 0.2),
        alpha=alpha, phi0=0.2, rho_f=rho_f, mu_f=1.0,
        immune=toy_immune() if with_bio else None,
        starling=toy_starling() if with_bio else None)


def clamped_bc(mesh, pressure_sigma=True, traction=None):
    rules = [DirichletRule("u", (mesh_mod.GAMMA,), zero_fn)]
    if pressure_sigma:
        rules.append(DirichletRule("p", (mesh_mod.SIGMA,), zero_fn))
    tractions = [traction] if traction else []
    return ProblemData(dirichlet=rules, tractions=tractions)


def random_state(dofmap, rng, around_phi=0.2, scale=1.0):
    return State(
        cp=0.01 * scale * rng.random(dofmap.counts["cp"]),
        cl=0.01 * scale * rng.random(dofmap.counts["cl"]),
        u=0.02 * scale * rng.standard_normal(dofmap.counts["u"]),
        p=0.1 * scale * rng.standard_normal(dofmap.counts["p"]),
        phi=around_phi + 0.02 * scale * rng.standard_normal(
            dofmap.counts["phi"]))


def rest_state(dofmap, phi0=0.2):
    s = State.zeros(dofmap)
    s.phi[:] = phi0
    return s
