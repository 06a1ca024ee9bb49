"""Experiment drivers reproducing the sensitivity, compression, benchmark,
convergence, oedema and preconditioner studies.

Every driver consumes a validated config dict, writes CSV (and VTK) files
into the output directory, and returns a summary dict used by the
acceptance suite.
"""

from __future__ import annotations

import logging
import os

import numpy as np

from .. import io, linalg, mesh as mesh_mod, mms
from ..assembly import (DirichletRule, MaterialParams, ProblemData, State,
                        TractionRule, assemble_system, apply_dirichlet,
                        blocks_to_matrix, build_constraints, GeometryCache)
from ..constitutive import NeoHookean, PowerLaw, KCIso
from ..fem import build_dofmap
from ..solver import SolverConfig, time_loop
from .config import build_tissue_material, lame_constants, merged_params

log = logging.getLogger("oedema")


def _zero(x, t):
    return np.zeros(len(x))


def _solver_config(cfg, **extra):
    s = cfg["solver"]
    kw = dict(dt=s["dt"], t_final=s["t_final"],
              newton_tol=s.get("newton_tol", 1e-6),
              newton_max=s.get("newton_max", 25),
              quad_degree=s.get("quad_degree", 4))
    kw.update(extra)
    return SolverConfig(**kw)


# ---------------------------------------------------------------------------
# Example 1: 1D sensitivity


def _sensitivity_initial(mesh, dofmap, icfg):
    x = mesh.vertices[:, 0]
    s = State.zeros(dofmap)
    lo, hi = icfg["cp_window"]
    s.cp[(x >= lo - 1e-12) & (x <= hi + 1e-12)] = icfg["cp_peak"]
    s.cl[:] = icfg["cl"]
    s.phi[:] = 0.2
    return s


def _peak_observer(store, stop_after):
    """Stop once the pathogen peak is established and clearly passed; the
    initial diffusive decay of the sharp inoculation spike must not count."""

    def observer(step, t, state):
        m = float(state.cp.max())
        if m > store["peak"]:
            store["peak"] = m
            store["t_peak"] = t
        established = store["peak"] >= 1.5 * store["initial"]
        if stop_after and established \
                and t - store["t_peak"] >= stop_after \
                and m <= 0.9 * store["peak"]:
            return True
        return False

    return observer


def run_sensitivity_1d(cfg, outdir):
    """One scenario per (parameter, factor): spatial profiles at the
    pathogen-peak time plus a scenario summary table."""
    os.makedirs(outdir, exist_ok=True)
    mcfg = cfg["mesh"]
    msh = mesh_mod.interval_mesh(mcfg["cells"], 0.0, mcfg["length"])
    L = mcfg["length"]
    msh = mesh_mod.tag_boundary(msh, [
        (lambda x: mesh_mod.near(x[0], 0.0, 1e-10 * L), mesh_mod.GAMMA),
        (lambda x: True, mesh_mod.SIGMA)])
    dm = build_dofmap(msh)
    bc = ProblemData(dirichlet=[
        DirichletRule("u", (mesh_mod.GAMMA,), _zero),
        DirichletRule("p", (mesh_mod.SIGMA,), _zero)])

    scenario_names = {1.0: "ref", 2.0: "double", 0.5: "half"}
    summary_rows = []
    summary = {}
    profiles = {}
    for param in cfg["vary"]:
        for factor in cfg["factors"]:
            name = scenario_names.get(factor, f"x{factor:g}")
            key = (param, name)
            if factor == 1.0 and "ref" in profiles:
                # the reference run is shared between parameters
                res = profiles["ref"]
            else:
                overrides = dict(cfg["params"])
                base = merged_params(overrides)[param]
                if factor != 1.0:
                    overrides[param] = base * factor
                res = _run_sensitivity_case(cfg, msh, dm, bc, overrides)
                if factor == 1.0:
                    profiles["ref"] = res
            x = msh.vertices[:, 0]
            state = res["state"]
            io.write_csv(
                os.path.join(outdir, f"sensitivity_{param}_{name}.csv"),
                ["x", "c_p", "c_l", "p", "phi_f", "u"],
                list(zip(x, state.cp, state.cl, state.p, state.phi,
                         state.u[: msh.num_vertices])),
            )
            summary_rows.append([param, name, res["t_peak"], res["peak_cp"],
                                 res["max_p"], res["max_phi"],
                                 res["max_abs_u"]])
            summary[key] = res
    io.write_csv(os.path.join(outdir, "sensitivity_summary.csv"),
                 ["param", "scenario", "peak_time", "peak_cp", "max_p",
                  "max_phi_f", "max_abs_u"], summary_rows)
    return summary


def _run_sensitivity_case(cfg, msh, dm, bc, overrides):
    mat = build_tissue_material(overrides)
    s0 = _sensitivity_initial(msh, dm, cfg["ic"])
    s0.phi[:] = merged_params(overrides)["phi0"]
    solver_cfg = _solver_config(cfg)
    store = {"peak": 0.0, "t_peak": 0.0, "initial": float(s0.cp.max())}
    traj = time_loop(msh, dm, s0, mat, bc, solver_cfg,
                     observer=_peak_observer(store, cfg["early_stop_days"]))
    # profile at the snapshot closest to the recorded peak time
    peaks = [float(s.cp.max()) for s in traj.states]
    k = int(np.argmax(peaks))
    state = traj.states[k]
    return {
        "state": state, "t_peak": traj.times[k], "peak_cp": peaks[k],
        "max_p": float(state.p.max()), "max_phi": float(state.phi.max()),
        "max_abs_u": float(np.abs(state.u).max()),
        "newton": traj.newton_counts,
    }


# ---------------------------------------------------------------------------
# Example 2: compression of a unit box


def _compression_material(q, nu, lam_override=None):
    mu_s, lam_s = lame_constants(q["E"], nu)
    if lam_override is not None:
        lam_s = lam_override
    return MaterialParams(
        solid=NeoHookean(mu_s=mu_s, lam_s=lam_s),
        perm=PowerLaw(kappa0=q["kappa0"], phi0=0.6),
        alpha=q["alpha"], rho_f=q["rho_f"], mu_f=q["mu_f"],
        phi0=lambda x: 0.6 + 0.1 * np.sin(x[:, 0] * x[:, 1]))


def _lambda_ladder(msh, dm, q, nu, bc, solver_cfg):
    """Continuation rescue in the volumetric stiffness.

    Near the incompressible limit any deviatoric Newton response of size
    eps produces a lambda_s * O(eps^2) volumetric residual, which traps the
    plain iteration.  Chaining through a lambda_s ladder solves the
    deviatoric content at soft stiffness; the remaining stage-to-stage
    corrections are purely volumetric and quadratically small.  The ladder
    factor bisects geometrically on stage failure.  Returns a callable
    ``rescue(state_n, t, dt) -> guess`` for the time loop.
    """
    import dataclasses

    from ..solver import NoConvergence, NonlinearSolver

    mu_s, lam_target = lame_constants(q["E"], nu)
    ladder_cfg = dataclasses.replace(solver_cfg, newton_max=12,
                                     strict_fallback=False)
    solvers = {}
    stage_states = {}               # per-lambda states of the previous step
    schedule = []                   # lambda stages that worked last time

    def stage_solver(lam):
        if lam not in solvers:
            mat_l = _compression_material(q, nu, lam_override=lam)
            solvers[lam] = NonlinearSolver(msh, dm, mat_l, bc, ladder_cfg)
        return solvers[lam]

    def try_stage(lam, state_n, t, dt, guess):
        stage_guess = stage_states.get(lam, guess)
        try:
            out, _, _, _ = stage_solver(lam).newton_solve(
                state_n, t, guess=stage_guess, dt=dt)
        except NoConvergence:
            if stage_guess is guess or guess is None:
                return None
            try:
                out, _, _, _ = stage_solver(lam).newton_solve(
                    state_n, t, guess=guess, dt=dt)
            except NoConvergence:
                return None
        stage_states[lam] = out
        return out

    def rescue(state_n, t, dt):
        guess = None
        if schedule:
            for lam in schedule:
                nxt = try_stage(lam, state_n, t, dt, guess)
                if nxt is None:
                    break  # schedule went stale: rediscover from here
                guess = nxt
            else:
                return guess
        lam = 100.0 * mu_s
        factor = 10.0
        schedule.clear()
        guess = None
        while lam < lam_target:
            lam_next = min(lam * factor, lam_target)
            nxt = try_stage(lam_next, state_n, t, dt, guess)
            if nxt is None:
                factor = np.sqrt(factor)
                if factor < 1.02:
                    raise NoConvergence([float("nan")])
                continue
            guess = nxt
            log.info("ladder stage lambda_s=%.3e done", lam_next)
            schedule.append(lam_next)
            lam = lam_next
            factor = min(factor * 1.5, 10.0)
        return guess

    return rescue


def run_compression_2d(cfg, outdir):
    """Sweep of Poisson ratios on the traction-compressed drained box."""
    os.makedirs(outdir, exist_ok=True)
    mcfg = cfg["mesh"]
    msh = mesh_mod.rectangle_mesh(mcfg["nx"], mcfg["ny"], mcfg["Lx"],
                                  mcfg["Ly"], mcfg["pattern"])
    Lx, Ly = mcfg["Lx"], mcfg["Ly"]
    tol = 1e-10 * max(Lx, Ly)
    msh = mesh_mod.tag_boundary(msh, [
        (lambda x: mesh_mod.near(x[1], 0.0, tol), mesh_mod.GAMMA),
        (lambda x: mesh_mod.near(x[1], Ly, tol), mesh_mod.SIGMA_TRACTION),
        (lambda x: True, mesh_mod.SIGMA)])
    dm = build_dofmap(msh)
    q = cfg["params"]
    amp, p_in = q["traction_amp"], q["p_in"]
    bc = ProblemData(
        dirichlet=[
            DirichletRule("u", (mesh_mod.GAMMA,), _zero),
            DirichletRule("p", (mesh_mod.SIGMA_TRACTION,),
                          lambda x, t: np.full(len(x), p_in)),
            DirichletRule("p", (mesh_mod.SIGMA,), _zero),
        ],
        tractions=[TractionRule((mesh_mod.SIGMA_TRACTION,),
                                lambda x, t, n: -amp * np.sin(np.pi * t) * n,
                                follower=True)])
    results = {}
    for nu in cfg["nu_values"]:
        mat = _compression_material(q, nu)
        s0 = State.zeros(dm)
        s0.phi[:] = mat.phi0_at(msh.vertices[:, None, :])[:, 0]
        solver_cfg = _solver_config(cfg)
        mu_s, lam_s = lame_constants(q["E"], nu)
        guess_fn = None
        if lam_s > 1e4 * mu_s:
            # deep incompressible regime: plain Newton is structurally
            # trapped, so every step is seeded by the stiffness ladder
            guess_fn = _lambda_ladder(msh, dm, q, nu, bc, solver_cfg)
        traj = time_loop(msh, dm, s0, mat, bc, solver_cfg,
                         guess_fn=guess_fn)
        tag = f"nu{nu:g}".replace(".", "p")
        rows = []
        for t, s, st in zip(traj.times, traj.states, traj.stats):
            rows.append([t, float(np.abs(s.u).max()), float(s.p.max()),
                         float(s.p.min()), float(s.phi.max()),
                         float(s.phi.min()), st.constraint_res,
                         st.newton_iters])
        io.write_csv(os.path.join(outdir, f"compression_{tag}.csv"),
                     ["t", "max_abs_u", "max_p", "min_p", "max_phi_f",
                      "min_phi_f", "constraint_res", "newton_iters"], rows)
        every = cfg["output"].get("vtk_every", 0)
        if every:
            for k, (t, s) in enumerate(zip(traj.times, traj.states)):
                if k % every == 0 and k > 0:
                    io.write_vtk(msh, s, os.path.join(
                        outdir, f"compression_{tag}_{k:03d}.vtk"))
        finite = all(np.all(np.isfinite(v)) for s in traj.states
                     for v in (s.u, s.p, s.phi, s.cp, s.cl))
        results[nu] = {
            "finite": bool(finite),
            "max_constraint_res": max(st.constraint_res
                                      for st in traj.stats[1:]),
            "max_abs_u": float(max(np.abs(s.u).max() for s in traj.states)),
            "newton": traj.newton_counts,
        }
    return results


def run_benchmark_2d(cfg, outdir):
    """Footing-strip consolidation benchmark with probe transients."""
    os.makedirs(outdir, exist_ok=True)
    mcfg = cfg["mesh"]
    msh = mesh_mod.rectangle_mesh(mcfg["nx"], mcfg["ny"], mcfg["Lx"],
                                  mcfg["Ly"], mcfg["pattern"])
    Lx, Ly = mcfg["Lx"], mcfg["Ly"]
    q = cfg["params"]
    strip = q["strip_end"]
    tol = 1e-10 * max(Lx, Ly)
    msh = mesh_mod.tag_boundary(msh, [
        (lambda x: mesh_mod.near(x[1], 0.0, tol), mesh_mod.GAMMA),
        (lambda x: mesh_mod.near(x[1], Ly, tol) and x[0] <= strip + tol,
         mesh_mod.SIGMA_TRACTION),
        (lambda x: mesh_mod.near(x[1], Ly, tol), mesh_mod.SIGMA),
        (lambda x: True, "Roller")])
    dm = build_dofmap(msh)
    mu_s, lam_s = lame_constants(q["E"], q["nu"])
    mat = MaterialParams(
        solid=NeoHookean(mu_s=mu_s, lam_s=lam_s),
        perm=KCIso(kappa0=q["kappa0"], phi0=q["phi0"]),
        alpha=q["alpha"], rho_f=q["rho_f"], mu_f=q["mu_f"], phi0=q["phi0"])
    amp = (lam_s + 2.0 * mu_s) / 5.0
    period = cfg["load_period"]
    bc = ProblemData(
        dirichlet=[
            DirichletRule("u", (mesh_mod.GAMMA,), _zero),
            DirichletRule("u", ("Roller",), _zero, component=0),
            DirichletRule("p", (mesh_mod.SIGMA, mesh_mod.SIGMA_TRACTION),
                          _zero),
        ],
        tractions=[TractionRule(
            (mesh_mod.SIGMA_TRACTION,),
            lambda x, t, n: -amp * np.sin(2.0 * np.pi * t / period) * n,
            follower=True)])
    s0 = State.zeros(dm)
    s0.phi[:] = q["phi0"]
    traj = time_loop(msh, dm, s0, mat, bc, _solver_config(cfg))
    pts = [p["x"] for p in cfg["probes"]]
    labels = [p["label"] for p in cfg["probes"]]
    header, rows = io.probe_series(msh, traj, pts, labels)
    io.write_csv(os.path.join(outdir, "benchmark_probes.csv"), header, rows)
    for t_vtk in cfg["output"].get("vtk_times", []):
        k = int(np.argmin(np.abs(np.array(traj.times) - t_vtk)))
        io.write_vtk(msh, traj.states[k],
                     os.path.join(outdir, f"benchmark_t{t_vtk:g}.vtk"))
    iA = header.index(f"uy_{labels[0]}")
    iB = header.index(f"uy_{labels[1]}")
    uyA = np.array([r[iA] for r in rows])
    uyB = np.array([r[iB] for r in rows])
    times = np.array([r[0] for r in rows])
    return {"times": times, "uyA": uyA, "uyB": uyB,
            "header": header, "rows": rows,
            "newton": traj.newton_counts}


# ---------------------------------------------------------------------------
# Example 3: manufactured-solution convergence


def run_mms(cfg, outdir):
    os.makedirs(outdir, exist_ok=True)
    s = cfg["solver"]
    rows, rates, navg = mms.run_convergence(
        cfg["levels"], dt=s["dt"], t_final=s["t_final"],
        base_n=cfg["base_n"], quad_degree=s.get("quad_degree", 4),
        newton_tol=s.get("newton_tol", 1e-6), log_fn=log.info)
    mms.write_report_csv(os.path.join(outdir, "mms.csv"), rows, rates)
    return {"rows": rows, "rates": rates, "newton_avg": navg}


# ---------------------------------------------------------------------------
# Example 4: 2D oedema localisation


def run_oedema_2d(cfg, outdir):
    os.makedirs(outdir, exist_ok=True)
    msh, dm, mat, bc, s0 = oedema_setup(cfg)
    solver_cfg = _solver_config(cfg)
    traj = time_loop(msh, dm, s0, mat, bc, solver_cfg)

    rows = []
    for t, s in zip(traj.times, traj.states):
        umag = np.hypot(s.u[0::2][: msh.num_vertices],
                        s.u[1::2][: msh.num_vertices])
        rows.append([t, float(s.cp.max()), float(s.cl.max()),
                     float(s.p.max()), float(s.phi.max()),
                     float(umag.max())])
    io.write_csv(os.path.join(outdir, "oedema_series.csv"),
                 ["t", "max_cp", "max_cl", "max_p", "max_phi_f", "max_u"],
                 rows)
    for day in cfg["output"].get("vtk_days", []):
        k = int(np.argmin(np.abs(np.array(traj.times) - day)))
        io.write_vtk(msh, traj.states[k],
                     os.path.join(outdir, f"oedema_day{day:g}.vtk"))

    arr = np.array(rows)
    k_peak = int(np.argmax(arr[:, 1]))
    state_pk = traj.states[k_peak]
    argmax_phi = msh.vertices[int(np.argmax(state_pk.phi))]

    def at_day(day):
        k = int(np.argmin(np.abs(arr[:, 0] - day)))
        return arr[k]

    summary = {
        "t_peak": float(arr[k_peak, 0]),
        "peak_cp": float(arr[k_peak, 1]),
        "argmax_phi": argmax_phi.tolist(),
        "max_p_day13": float(at_day(13.0)[3]),
        "max_p_day18": float(at_day(18.0)[3]),
        "newton": traj.newton_counts,
    }
    io.write_csv(os.path.join(outdir, "oedema_summary.csv"),
                 ["t_peak", "peak_cp", "argmax_phi_x", "argmax_phi_y",
                  "max_p_day13", "max_p_day18"],
                 [[summary["t_peak"], summary["peak_cp"],
                   argmax_phi[0], argmax_phi[1],
                   summary["max_p_day13"], summary["max_p_day18"]]])
    return summary


def oedema_setup(cfg):
    """Mesh, material, boundary data and initial state of Example 4."""
    mcfg = cfg["mesh"]
    L = mcfg["L"]
    msh = mesh_mod.rectangle_mesh(mcfg["n"], mcfg["n"], L, L, "crossed")
    tol = 1e-10 * L
    msh = mesh_mod.tag_boundary(msh, [
        (lambda x: mesh_mod.near(x[0], 0.0, tol), mesh_mod.GAMMA),
        (lambda x: True, mesh_mod.SIGMA)])
    dm = build_dofmap(msh)
    mat = build_tissue_material(cfg["params"])
    bc = ProblemData(dirichlet=[
        DirichletRule("u", (mesh_mod.GAMMA,), _zero),
        DirichletRule("p", (mesh_mod.SIGMA,), _zero)])
    icfg = cfg["ic"]
    s0 = State.zeros(dm)
    cx, cy = icfg["centre"]
    r2 = (msh.vertices[:, 0] - cx) ** 2 + (msh.vertices[:, 1] - cy) ** 2
    s0.cp[r2 <= icfg["radius2"] + 1e-12] = icfg["cp_peak"]
    s0.cl[:] = icfg["cl"]
    s0.phi[:] = merged_params(cfg["params"])["phi0"]
    return msh, dm, mat, bc, s0


# ---------------------------------------------------------------------------
# preconditioner study


def first_step_system(cfg, refine=0):
    """BC-applied tangent and residual of the first Newton iterate of the
    oedema problem (the hardest instant reported for the solver)."""
    base = dict(cfg)
    mcfg = dict(cfg["mesh"])
    mcfg["n"] = mcfg["n"] * 2 ** refine
    base["mesh"] = mcfg
    msh, dm, mat, bc, s0 = oedema_setup(base)
    cache = GeometryCache(msh, dm, 4)
    dt = cfg["solver"]["dt"]
    res, blocks = assemble_system(cache, s0, s0, dt, mat, bc, dt)
    A = blocks_to_matrix(dm, blocks)
    cons = build_constraints(msh, dm, bc)
    A, res = apply_dirichlet(A, res, cons, s0.to_vector(dm), dt)
    return A, res, dm


def run_precond_study(cfg, outdir):
    os.makedirs(outdir, exist_ok=True)
    rows = []
    results = {}
    scfg = cfg["solver"]
    for lev in range(cfg["levels"]):
        A, res, dm = first_step_system(cfg, refine=lev)
        part = linalg.BlockPartition.from_dofmap(dm)
        b = -res
        if not np.linalg.norm(b):
            rng = np.random.default_rng(0)
            b = rng.standard_normal(dm.total)
        for first in cfg["grid"]["first_level"]:
            for mode in cfg["grid"]["modes"]:
                if mode == "exact":
                    pcfg = linalg.PreconditionerConfig(
                        first_level=first, second_level="full",
                        chem_approx="exact", schur_approx="exact",
                        exact=True)
                else:
                    pcfg = linalg.PreconditionerConfig(
                        first_level=first, second_level="full",
                        chem_approx="ilu0", schur_approx="simple")
                pre = linalg.SchurPreconditioner(A, part, pcfg,
                                                 warn=log.warning)
                converged = True
                try:
                    x, iters = linalg.fgmres(
                        lambda v: A @ v, b, apply_M=pre.apply,
                        tol=scfg["fgmres_tol"], restart=scfg["restart"],
                        maxiter=scfg["restart"])
                except linalg.LinearSolverError as exc:
                    log.warning("precond study: %s", exc)
                    converged, iters = False, scfg["restart"]
                rows.append([lev, dm.total, first, mode, iters,
                             int(converged)])
                results[(lev, first, mode)] = iters
    io.write_csv(os.path.join(outdir, "precond_iterations.csv"),
                 ["level", "dofs", "first_level", "mode", "outer_iters",
                  "converged"], rows)
    return results
