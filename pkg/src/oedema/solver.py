"""Backward Euler time stepping with damped Newton-Raphson iterations.

Each step starts Newton from the previous time level and iterates until the
Euclidean norm of the monolithic residual (Dirichlet rows zeroed) drops
below the tolerance.  Non-positive Jacobians or residual growth trigger
step halving of the Newton update (at most 10 halvings).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .assembly import (GeometryCache, State, apply_dirichlet,
                       assemble_system, blocks_to_matrix, build_constraints,
                       min_jacobian)
from .constitutive import InadmissibleState

log = logging.getLogger("oedema")


class NoConvergence(RuntimeError):
    def __init__(self, norms, step=None):
        self.norms = norms
        self.step = step
        at = "" if step is None else f" at step {step}"
        super().__init__(
            f"Newton did not converge{at}; residual norms {norms}")


@dataclass
class SolverConfig:
    dt: float
    t_final: float
    newton_tol: float = 1e-6
    newton_max: int = 25
    linear_solver: str = "direct"          # "direct" or "fgmres"
    precond: object = None                 # PreconditionerConfig for fgmres
    fgmres_tol: float = 1e-8
    fgmres_restart: int = 200
    line_search: bool = True
    watchdog: int = 4                      # iterations allowed above the best
    strict_fallback: bool = True           # monotone second phase on failure
    max_halvings: int = 10
    quad_degree: int = 4
    output_every: int = 1

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.newton_tol <= 0:
            raise ValueError("newton_tol must be positive")


@dataclass
class StepStats:
    t: float
    newton_iters: int
    lin_iters: int
    res_norm: float
    constraint_res: float


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    stats: list = field(default_factory=list)

    def append(self, t, state, stat):
        if self.times and t <= self.times[-1]:
            raise ValueError("trajectory times must increase strictly")
        self.times.append(t)
        self.states.append(state)
        self.stats.append(stat)

    @property
    def newton_counts(self):
        return [s.newton_iters for s in self.stats]


class NonlinearSolver:
    """Assembles and solves one backward-Euler step with Newton's method."""

    def __init__(self, mesh, dofmap, mat, bc, config):
        self.mesh = mesh
        self.dofmap = dofmap
        self.mat = mat
        self.bc = bc
        self.cfg = config
        self.cache = GeometryCache(mesh, dofmap, config.quad_degree)
        self.constraints = build_constraints(mesh, dofmap, bc)

    # residual with Dirichlet rows replaced by the BC mismatch
    def _residual(self, state, state_n, t, want_matrix, dt=None):
        res, blocks = assemble_system(self.cache, state, state_n,
                                      dt or self.cfg.dt, self.mat, self.bc,
                                      t, want_matrix=want_matrix)
        A = blocks_to_matrix(self.dofmap, blocks) if want_matrix else None
        A, res = apply_dirichlet(A, res, self.constraints,
                                 state.to_vector(self.dofmap), t)
        return A, res

    def _norm(self, res):
        free = res.copy()
        free[self.constraints.rows] = 0.0
        return float(np.linalg.norm(free))

    def _bc_ok(self, res, tol):
        bc_rows = res[self.constraints.rows]
        return bc_rows.size == 0 or float(np.abs(bc_rows).max()) <= tol

    def _solve_linear(self, A, rhs):
        if self.cfg.linear_solver == "direct":
            return linalg.sparse_lu_solve(A, rhs), 0
        part = linalg.BlockPartition.from_dofmap(self.dofmap)
        pre = linalg.SchurPreconditioner(A, part, self.cfg.precond,
                                         warn=log.warning)
        x, iters = linalg.fgmres(lambda v: A @ v, rhs, apply_M=pre.apply,
                                 tol=self.cfg.fgmres_tol,
                                 restart=self.cfg.fgmres_restart)
        return x, iters

    def newton_solve(self, state_n, t, guess=None, dt=None):
        """Solve for the state at time ``t`` starting from ``state_n``.

        Two globalisation phases.  First a watchdog Newton iteration: full
        steps are taken freely (quadratic convergence is routinely preceded
        by large transient overshoots of the residual), but the phase is
        abandoned when the best norm seen has not improved for ``watchdog``
        consecutive iterations.  The fallback is strict monotone
        backtracking, needed when iterates straddle the lymph-drainage kink.
        Inadmissible trial states (non-positive Jacobian, porosity outside
        the constitutive domain) always trigger step halving.  ``guess``
        overrides the default initial iterate (the previous time level),
        e.g. for parameter-continuation warm starts.
        Returns (state, iterations, linear iterations, residual).
        """
        cfg = self.cfg
        total_iters = 0
        lin_total = 0
        all_norms = []
        for strict in (False, True):
            state = (guess or state_n).copy()
            _, res = self._residual(state, state_n, t, False, dt)
            norm = self._norm(res)
            norms = [norm]
            best = norm
            since_best = 0
            crawl = 0
            for _ in range(cfg.newton_max):
                if norm <= cfg.newton_tol and self._bc_ok(res, cfg.newton_tol):
                    return state, total_iters, lin_total, res
                if not strict and cfg.line_search \
                        and since_best > cfg.watchdog:
                    break  # cycling or diverging: restart strictly
                if strict and crawl >= 3:
                    break  # damped steps make no headway: give up early
                A, res_k = self._residual(state, state_n, t, True, dt)
                delta, lin = self._solve_linear(A, -res_k)
                lin_total += lin
                total_iters += 1

                accepted = False
                alpha = 1.0
                for _ in range(cfg.max_halvings + 1):
                    trial = state.add_scaled(self.dofmap, delta, alpha)
                    if min_jacobian(self.cache, trial.u) <= 0.0:
                        alpha *= 0.5
                        continue
                    try:
                        _, res_t = self._residual(trial, state_n, t,
                                                  False, dt)
                    except InadmissibleState:
                        alpha *= 0.5
                        continue
                    norm_t = self._norm(res_t)
                    ok = norm_t < norm or norm_t <= cfg.newton_tol
                    if not ok and not strict and cfg.line_search:
                        ok = np.isfinite(norm_t) \
                            and norm_t <= 1e8 * max(norms[0], 1.0)
                    if not ok:
                        alpha *= 0.5
                        continue
                    accepted = True
                    break
                if not accepted:
                    break
                if strict and alpha <= 2.0 ** -6 \
                        and norm_t > 0.9 * norm:
                    crawl += 1
                else:
                    crawl = 0
                prev = norms[-1]
                state, res, norm = trial, res_t, norm_t
                norms.append(norm)
                if norm < best:
                    best = norm
                    since_best = 0
                elif norm < 0.5 * prev:
                    since_best = 0  # descending strongly after an overshoot
                else:
                    since_best += 1
            all_norms.extend(norms)
            if norm <= cfg.newton_tol and self._bc_ok(res, cfg.newton_tol):
                return state, total_iters, lin_total, res
            if strict or not cfg.line_search or not cfg.strict_fallback:
                break
        raise NoConvergence(all_norms)

    def constraint_residual(self, res):
        sl = self.dofmap.field_slice("phi")
        return float(np.linalg.norm(res[sl]))


def _advance(solver, state, t0, t1, guess=None, depth=2, rescue=None):
    """One backward-Euler step from t0 to t1.

    On Newton failure, ``rescue(state, t, dt)`` (when given) may produce a
    better initial iterate (e.g. by material-parameter continuation); as a
    last resort the step is bisected recursively (both halves still use the
    implicit scheme, so the reported trajectory keeps its nominal cadence).
    """
    try:
        return solver.newton_solve(state, t1, guess=guess, dt=t1 - t0)
    except NoConvergence:
        pass
    if rescue is not None:
        try:
            log.info("continuation rescue at t=%g", t1)
            better = rescue(state, t1, t1 - t0)
            return solver.newton_solve(state, t1, guess=better, dt=t1 - t0)
        except NoConvergence:
            pass
    if depth <= 0:
        raise NoConvergence([float("nan")])
    mid = 0.5 * (t0 + t1)
    log.info("bisection recovery: substep to t=%g", mid)
    s_mid, it1, lin1, _ = _advance(solver, state, t0, mid,
                                   depth=depth - 1, rescue=rescue)
    s_end, it2, lin2, res = _advance(solver, s_mid, mid, t1,
                                     depth=depth - 1, rescue=rescue)
    return s_end, it1 + it2, lin1 + lin2, res


def time_loop(mesh, dofmap, initial, mat, bc, config, observer=None,
              first_guess=None, rescue=None, guess_fn=None):
    """March the coupled system to ``t_final`` with fixed steps.

    ``observer(step, t, state)`` is called after every accepted step and may
    return True to stop early (used by peak-detection drivers).  Snapshots
    are recorded every ``output_every`` steps (plus the final one).
    ``first_guess`` seeds the Newton iteration of the first step;
    ``guess_fn(state_n, t, dt)`` seeds every step (proactive continuation);
    ``rescue`` of the same signature is only invoked after a failure.
    """
    solver = NonlinearSolver(mesh, dofmap, mat, bc, config)
    n_steps = int(round(config.t_final / config.dt))
    traj = Trajectory()
    traj.append(0.0, initial.copy(),
                StepStats(0.0, 0, 0, 0.0, 0.0))
    state = initial
    for n in range(n_steps):
        t = (n + 1) * config.dt
        guess = first_guess if n == 0 else None
        if guess is None and guess_fn is not None:
            guess = guess_fn(state, t, config.dt)
        try:
            state, iters, lin, res = _advance(
                solver, state, t - config.dt, t, guess=guess, rescue=rescue)
        except NoConvergence as exc:
            raise NoConvergence(exc.norms, step=n + 1) from exc
        norm = solver._norm(res)
        cres = solver.constraint_residual(res)
        log.info("step=%d t=%g newton=%d |r|=%.3e liniters=%d",
                 n + 1, t, iters, norm, lin)
        if (n + 1) % config.output_every == 0 or n + 1 == n_steps:
            traj.append(t, state.copy(), StepStats(t, iters, lin, norm, cres))
        if observer is not None and observer(n + 1, t, state):
            break
    return traj
