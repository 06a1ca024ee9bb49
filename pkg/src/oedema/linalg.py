"""Sparse kernels: flexible GMRES, ILU(0), direct solves, and the two-level
nested Schur-complement block preconditioner.

First level: lower-triangular (or diagonal/full) Schur decomposition over the
poroelastic block (u, p, phi_f) and the chemotaxis block (c_p, c_l).  Second
level: full Schur decomposition of the poroelastic block over u and
Pi = (p, phi_f).  With exact inner solves and exact Schur complements the
preconditioned operator is unit upper-triangular, so a Krylov method
converges in a couple of iterations; inexact inner solves (relative
tolerance 0.1) vary between applications, which is what requires the
flexible variant of GMRES.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class LinearSolverError(RuntimeError):
    pass


def sparse_lu_solve(A, b):
    """Direct solve via sparse LU; raises LinearSolverError on singularity."""
    try:
        return spla.splu(A.tocsc()).solve(b)
    except RuntimeError as exc:
        raise LinearSolverError(f"sparse LU failed: {exc}") from exc


def fgmres(apply_A, b, apply_M=None, tol=1e-8, restart=200, maxiter=None,
           x0=None, track=None, raise_on_stall=True):
    """Right-preconditioned flexible GMRES.

    ``apply_M`` may change between iterations (inexact inner solves), which
    is why the preconditioned directions Z are stored.  Returns
    ``(x, iters)``; ``track``, if given, collects the residual-norm history.
    Happy breakdown counts as convergence.  Hitting the iteration cap raises
    LinearSolverError unless ``raise_on_stall`` is False, in which case the
    current iterate is returned.
    """
    n = len(b)
    if maxiter is None:
        maxiter = 10 * restart
    if apply_M is None:
        apply_M = lambda r: r
    x = np.zeros(n) if x0 is None else x0.copy()
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n), 0
    total = 0
    while True:
        r = b - apply_A(x)
        beta = float(np.linalg.norm(r))
        if track is not None:
            track.append(beta)
        if beta <= tol * bnorm:
            return x, total
        if total >= maxiter:
            if raise_on_stall:
                raise LinearSolverError(
                    f"fGMRES stagnated: |r|/|b| = {beta / bnorm:.3e} "
                    f"after {total} iterations")
            return x, total
        V = np.zeros((restart + 1, n))
        Z = np.zeros((restart, n))
        H = np.zeros((restart + 1, restart))
        V[0] = r / beta
        g = np.zeros(restart + 1)
        g[0] = beta
        cs = np.zeros(restart)
        sn = np.zeros(restart)
        k = 0
        while k < restart and total < maxiter:
            Z[k] = apply_M(V[k])
            w = np.array(apply_A(Z[k]), dtype=float)  # copy: A may alias
            for i in range(k + 1):
                H[i, k] = w @ V[i]
                w -= H[i, k] * V[i]
            H[k + 1, k] = np.linalg.norm(w)
            happy = H[k + 1, k] < 1e-14 * max(beta, 1.0)
            if not happy:
                V[k + 1] = w / H[k + 1, k]
            for i in range(k):
                hi = cs[i] * H[i, k] + sn[i] * H[i + 1, k]
                H[i + 1, k] = -sn[i] * H[i, k] + cs[i] * H[i + 1, k]
                H[i, k] = hi
            denom = np.hypot(H[k, k], H[k + 1, k])
            cs[k] = H[k, k] / denom
            sn[k] = H[k + 1, k] / denom
            H[k, k] = denom
            H[k + 1, k] = 0.0
            g[k + 1] = -sn[k] * g[k]
            g[k] = cs[k] * g[k]
            total += 1
            k += 1
            if track is not None:
                track.append(abs(g[k]))
            if abs(g[k]) <= tol * bnorm or happy:
                break
        if k:
            y = np.linalg.solve(np.triu(H[:k, :k]), g[:k])
            x = x + Z[:k].T @ y
        # loop back: convergence is always certified on the true residual


def ilu0(A):
    """ILU(0): incomplete LU restricted to the sparsity pattern of ``A``.

    Returns an object whose ``solve(b)`` applies the two triangular sweeps.
    """
    A = A.tocsr().copy()
    A.sort_indices()
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, A.data
    diag_pos = np.empty(n, dtype=np.int64)
    for i in range(n):
        row = indices[indptr[i]:indptr[i + 1]]
        pos = np.searchsorted(row, i)
        if pos >= len(row) or row[pos] != i:
            raise LinearSolverError(f"ILU(0): missing diagonal in row {i}")
        diag_pos[i] = indptr[i] + pos
    # IKJ variant restricted to the existing pattern
    colmap = {}
    for i in range(n):
        start, end = indptr[i], indptr[i + 1]
        colmap.clear()
        for pos in range(start, end):
            colmap[indices[pos]] = pos
        for pos in range(start, end):
            k = indices[pos]
            if k >= i:
                break
            piv = data[diag_pos[k]]
            if piv == 0.0:
                raise LinearSolverError(f"ILU(0): zero pivot in row {k}")
            lik = data[pos] / piv
            data[pos] = lik
            for pos_k in range(diag_pos[k] + 1, indptr[k + 1]):
                j = indices[pos_k]
                tgt = colmap.get(j)
                if tgt is not None:
                    data[tgt] -= lik * data[pos_k]
    LU = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    L = sp.tril(LU, k=-1).tocsr() + sp.eye(n, format="csr")
    U = sp.triu(LU, k=0).tocsr()
    return _ILU0(L, U)


class _ILU0:
    def __init__(self, L, U):
        self.L, self.U = L, U

    def solve(self, b):
        y = spla.spsolve_triangular(self.L, b, lower=True,
                                    unit_diagonal=True)
        return spla.spsolve_triangular(self.U, y, lower=False)


def write_matrix_market(A, path, comment=""):
    """Coordinate-format MatrixMarket dump (1-based indices)."""
    A = A.tocoo()
    with open(path, "w") as f:
        f.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            f.write(f"% {comment}\n")
        f.write(f"{A.shape[0]} {A.shape[1]} {A.nnz}\n")
        for i, j, v in zip(A.row, A.col, A.data):
            f.write(f"{i + 1} {j + 1} {v!r}\n")


# ---------------------------------------------------------------------------
# block partition and nested Schur preconditioner


@dataclass(frozen=True)
class BlockPartition:
    """Index sets of the two-level splitting: chem = (c_p, c_l),
    poro = (u, p, phi); within poro, u versus Pi = (p, phi)."""

    chem: np.ndarray
    poro: np.ndarray
    u_in_poro: np.ndarray
    pi_in_poro: np.ndarray

    @staticmethod
    def from_dofmap(dofmap):
        def rng(f):
            o = dofmap.offsets[f]
            return np.arange(o, o + dofmap.counts[f])

        chem = np.concatenate([rng("cp"), rng("cl")])
        poro = np.concatenate([rng("u"), rng("p"), rng("phi")])
        nu = dofmap.counts["u"]
        u_in = np.arange(nu)
        pi_in = np.arange(nu, len(poro))
        return BlockPartition(chem, poro, u_in, pi_in)


@dataclass(frozen=True)
class PreconditionerConfig:
    first_level: str = "lower"      # lower | diagonal | full
    second_level: str = "full"      # full | lower
    inner_tol: float = 0.1
    inner_max: int = 200
    chem_approx: str = "ilu0"       # ilu0 | jacobi | exact
    schur_approx: str = "simple"    # exact | simple | blockdiag
    exact: bool = False             # exact inner solves everywhere

    def __post_init__(self):
        if not 0.0 < self.inner_tol < 1.0:
            raise ValueError("inner_tol must lie in (0, 1)")


def exact_config():
    return PreconditionerConfig(first_level="lower", second_level="full",
                                chem_approx="exact", schur_approx="exact",
                                exact=True)


class _InnerSolve:
    """Sub-block solve: direct LU below the size threshold, otherwise an
    inexact GMRES (relative tolerance ``tol``) preconditioned by ILU(0)."""

    def __init__(self, A, tol, maxiter, exact, warn, lu_nnz_cap=50_000):
        self.A = A.tocsr()
        self.tol = tol
        self.maxiter = maxiter
        self.warn = warn
        self.exact = exact or A.nnz <= lu_nnz_cap
        if self.exact:
            self.lu = spla.splu(A.tocsc())
        else:
            self.ilu = ilu0(self.A)

    def __call__(self, b):
        if self.exact:
            return self.lu.solve(b)
        x, _ = fgmres(lambda v: self.A @ v, b, apply_M=self.ilu.solve,
                      tol=self.tol, restart=self.maxiter,
                      maxiter=self.maxiter, raise_on_stall=False)
        return x


class SchurPreconditioner:
    """Two-level nested Schur preconditioner for the five-field tangent."""

    def __init__(self, A, partition, config=None, warn=None):
        self.cfg = config or PreconditionerConfig()
        self.part = partition
        self.warn = warn or (lambda msg: None)
        A = A.tocsr()
        ch, po = partition.chem, partition.poro
        self.J_chem = A[np.ix_(ch, ch)].tocsr()
        self.J_cp = A[np.ix_(ch, po)].tocsr()      # chem rows, poro cols
        self.J_pc = A[np.ix_(po, ch)].tocsr()      # poro rows, chem cols
        J_poro = A[np.ix_(po, po)].tocsr()
        ui, pi = partition.u_in_poro, partition.pi_in_poro
        self.J_u = J_poro[np.ix_(ui, ui)].tocsr()
        self.J_upi = J_poro[np.ix_(ui, pi)].tocsr()
        self.J_piu = J_poro[np.ix_(pi, ui)].tocsr()
        self.J_pi = J_poro[np.ix_(pi, pi)].tocsr()
        self.J_poro = J_poro
        cfg = self.cfg

        self.solve_u = _InnerSolve(self.J_u, cfg.inner_tol, cfg.inner_max,
                                   cfg.exact, self.warn)
        self.solve_pi = _InnerSolve(self._schur_pi(), cfg.inner_tol,
                                    cfg.inner_max, cfg.exact, self.warn)
        self._setup_chem()

    def _schur_pi(self):
        cfg = self.cfg
        if cfg.schur_approx == "exact":
            if self.J_u.shape[0] > 4000:
                raise LinearSolverError(
                    "exact Schur complement requested on a large block")
            lu = spla.splu(self.J_u.tocsc())
            S = self.J_pi.toarray() - self.J_piu @ lu.solve(self.J_upi.toarray())
            return sp.csr_matrix(S)
        if cfg.schur_approx == "simple":
            dinv = sp.diags(1.0 / self.J_u.diagonal())
            return (self.J_pi - self.J_piu @ dinv @ self.J_upi).tocsr()
        if cfg.schur_approx == "blockdiag":
            return self.J_pi
        raise ValueError(f"unknown schur_approx {cfg.schur_approx!r}")

    def _setup_chem(self):
        cfg = self.cfg
        if cfg.chem_approx == "exact":
            # S_chem = J_chem - J_cp J_poro^-1 J_pc, formed densely
            lu = spla.splu(self.J_poro.tocsc())
            cols = lu.solve(self.J_pc.toarray())
            S = self.J_chem.toarray() - self.J_cp @ cols
            self._chem_lu = spla.splu(sp.csc_matrix(S))
            self.solve_chem = lambda b: self._chem_lu.solve(b)
        elif cfg.chem_approx == "ilu0":
            M = ilu0(self.J_chem)
            self.solve_chem = self._make_inner(self.J_chem, M.solve)
        elif cfg.chem_approx == "jacobi":
            dinv = 1.0 / self.J_chem.diagonal()
            self.solve_chem = self._make_inner(self.J_chem,
                                               lambda r: dinv * r)
        else:
            raise ValueError(f"unknown chem_approx {cfg.chem_approx!r}")

    def _make_inner(self, A, M):
        cfg = self.cfg

        def solve(b):
            x, it = fgmres(lambda v: A @ v, b, apply_M=M,
                           tol=cfg.inner_tol, restart=cfg.inner_max,
                           maxiter=cfg.inner_max, raise_on_stall=False)
            if it >= cfg.inner_max:
                res = np.linalg.norm(b - A @ x) / max(np.linalg.norm(b), 1e-300)
                self.warn(f"inner chem solve stalled at |r|/|b| = {res:.2e}")
            return x

        return solve

    def _apply_poro_inv(self, r):
        ui, pi = self.part.u_in_poro, self.part.pi_in_poro
        ru, rpi = r[ui], r[pi]
        yu = self.solve_u(ru)
        ypi = self.solve_pi(rpi - self.J_piu @ yu)
        if self.cfg.second_level == "full":
            yu = yu - self.solve_u(self.J_upi @ ypi)
        out = np.empty_like(r)
        out[ui] = yu
        out[pi] = ypi
        return out

    def apply(self, r):
        ch, po = self.part.chem, self.part.poro
        z = np.empty_like(r)
        rp, rc = r[po], r[ch]
        if self.cfg.first_level == "diagonal":
            z[po] = self._apply_poro_inv(rp)
            z[ch] = self.solve_chem(rc)
            return z
        xp = self._apply_poro_inv(rp)
        xc = self.solve_chem(rc - self.J_cp @ xp)
        if self.cfg.first_level == "full":
            xp = xp - self._apply_poro_inv(self.J_pc @ xc)
        z[po] = xp
        z[ch] = xc
        return z
