"""Kinematics, effective stress laws and porosity-dependent permeability.

All functions are batched: tensor arguments may carry arbitrary leading axes
(cells x quadrature points during assembly, or single states in tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class InadmissibleState(RuntimeError):
    """A trial state outside the constitutive domain (the Newton driver
    treats this as a line-search trigger, not a fatal error)."""


class NonPositiveJacobian(InadmissibleState):
    """Raised when det(I + grad u) <= 0 somewhere."""

    def __init__(self, jmin, where=None):
        self.jmin = jmin
        self.where = where
        loc = "" if where is None else f" (cell {where})"
        super().__init__(f"non-positive Jacobian J={jmin:g}{loc}")


@dataclass(frozen=True)
class Kinematics:
    F: np.ndarray
    J: np.ndarray
    Finv: np.ndarray
    FinvT: np.ndarray
    C: np.ndarray

    @property
    def dim(self):
        return self.F.shape[-1]


def _det(F):
    d = F.shape[-1]
    if d == 1:
        return F[..., 0, 0]
    if d == 2:
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
    return np.linalg.det(F)


def _inv(F, J):
    d = F.shape[-1]
    if d == 1:
        return 1.0 / F
    if d == 2:
        Fi = np.empty_like(F)
        Fi[..., 0, 0] = F[..., 1, 1]
        Fi[..., 0, 1] = -F[..., 0, 1]
        Fi[..., 1, 0] = -F[..., 1, 0]
        Fi[..., 1, 1] = F[..., 0, 0]
        return Fi / J[..., None, None]
    return np.linalg.inv(F)


def kinematics(grad_u, cells=None):
    """Deformation gradient bundle for F = I + grad_u.

    Raises :class:`NonPositiveJacobian` if det F <= 0 anywhere; ``cells``
    (same leading shape as grad_u) names the offending cell if given.
    """
    grad_u = np.asarray(grad_u, dtype=float)
    d = grad_u.shape[-1]
    F = grad_u + np.eye(d)
    J = _det(F)
    if np.any(J <= 0.0):
        flat = np.argmin(J)
        where = None
        if cells is not None:
            where = int(np.asarray(cells).ravel()[flat])
        raise NonPositiveJacobian(float(np.min(J)), where)
    Finv = _inv(F, J)
    FinvT = np.swapaxes(Finv, -1, -2)
    C = np.swapaxes(F, -1, -2) @ F
    return Kinematics(F, J, Finv, FinvT, C)


def invariants(C, f0, s0):
    """(I1, I4f, I4s, I8fs) of the right Cauchy-Green tensor."""
    C = np.asarray(C, dtype=float)
    f0 = np.asarray(f0, dtype=float)
    s0 = np.asarray(s0, dtype=float)
    I1 = np.trace(C, axis1=-2, axis2=-1)
    Cf = C @ f0
    Cs = C @ s0
    I4f = np.einsum("i,...i->...", f0, Cf)
    I4s = np.einsum("i,...i->...", s0, Cs)
    I8fs = np.einsum("i,...i->...", f0, Cs)
    return I1, I4f, I4s, I8fs


@dataclass(frozen=True)
class NeoHookean:
    """Compressible neo-Hookean solid:
    Psi = mu_s/2 (I1 - d) - mu_s ln J + lam_s/2 (ln J)^2."""

    mu_s: float
    lam_s: float

    def energy(self, kin):
        d = kin.dim
        I1 = np.trace(kin.C, axis1=-2, axis2=-1)
        lnJ = np.log(kin.J)
        return 0.5 * self.mu_s * (I1 - d) - self.mu_s * lnJ \
            + 0.5 * self.lam_s * lnJ ** 2

    def first_pk(self, kin):
        lnJ = np.log(kin.J)[..., None, None]
        return self.mu_s * (kin.F - kin.FinvT) + self.lam_s * lnJ * kin.FinvT

    def stress_tangent(self, kin):
        """A[dF] = mu dF + (mu - lam lnJ) F^-T dF^T F^-T + lam (F^-T:dF) F^-T,
        returned as the full 4th-order tensor A[...,i,j,k,l]."""
        d = kin.dim
        FiT = kin.FinvT
        lnJ = np.log(kin.J)
        eye = np.eye(d)
        ident4 = np.einsum("ik,jl->ijkl", eye, eye)
        shape = kin.J.shape
        A = self.mu_s * np.broadcast_to(ident4, shape + (d, d, d, d)).copy()
        coef = (self.mu_s - self.lam_s * lnJ)[..., None, None, None, None]
        A += coef * np.einsum("...il,...kj->...ijkl", FiT, FiT)
        A += self.lam_s * np.einsum("...ij,...kl->...ijkl", FiT, FiT)
        return A


def _plus(x):
    return np.maximum(x, 0.0)


@dataclass(frozen=True)
class HolzapfelOgden:
    """Orthotropic myocardium law with fibre/sheet directions f0, s0.

    Fibre and sheet terms only engage in extension: the (.)_+ gate zeroes
    them when I4 <= 1.
    """

    a: float
    b: float
    a_f: float
    b_f: float
    a_s: float
    b_s: float
    a_fs: float
    b_fs: float
    f0: tuple
    s0: tuple

    def _dirs(self):
        return np.asarray(self.f0, dtype=float), np.asarray(self.s0, dtype=float)

    def energy(self, kin):
        d = kin.dim
        f0, s0 = self._dirs()
        I1, I4f, I4s, I8 = invariants(kin.C, f0, s0)
        W = self.a / (2 * self.b) * np.exp(self.b * (I1 - d))
        W = W + self.a_fs / (2 * self.b_fs) * (np.exp(self.b_fs * I8 ** 2) - 1.0)
        for ai, bi, I4 in ((self.a_f, self.b_f, I4f), (self.a_s, self.b_s, I4s)):
            e = _plus(I4 - 1.0)
            W = W + ai / (2 * bi) * (np.exp(bi * e ** 2) - 1.0)
        return W

    def first_pk(self, kin):
        d = kin.dim
        f0, s0 = self._dirs()
        I1, I4f, I4s, I8 = invariants(kin.C, f0, s0)
        dI1 = self.a / 2 * np.exp(self.b * (I1 - d))
        dI4f = self.a_f * _plus(I4f - 1.0) * np.exp(self.b_f * _plus(I4f - 1.0) ** 2)
        dI4s = self.a_s * _plus(I4s - 1.0) * np.exp(self.b_s * _plus(I4s - 1.0) ** 2)
        dI8 = self.a_fs * I8 * np.exp(self.b_fs * I8 ** 2)
        eye = np.eye(d)
        ff = np.outer(f0, f0)
        ss = np.outer(s0, s0)
        fs = np.outer(f0, s0) + np.outer(s0, f0)
        S2 = (2 * dI1[..., None, None] * eye
              + 2 * dI4f[..., None, None] * ff
              + 2 * dI4s[..., None, None] * ss
              + dI8[..., None, None] * fs)
        return kin.F @ S2

    def stress_tangent(self, kin, step=1e-7):
        """Central finite differences of the analytic stress (no closed-form
        tangent is used for this law)."""
        d = kin.dim
        h = step * (1.0 + np.sqrt(np.sum(kin.F ** 2, axis=(-2, -1))))
        shape = kin.J.shape
        A = np.zeros(shape + (d, d, d, d))
        for k in range(d):
            for l in range(d):
                dF = np.zeros((d, d))
                dF[k, l] = 1.0
                hp = h[..., None, None] * dF
                Pp = self.first_pk(kinematics(kin.F + hp - np.eye(d)))
                Pm = self.first_pk(kinematics(kin.F - hp - np.eye(d)))
                A[..., :, :, k, l] = (Pp - Pm) / (2.0 * h[..., None, None])
        return A


def first_pk_effective(kin, law):
    return law.first_pk(kin)


def stress_tangent(kin, law):
    return law.stress_tangent(kin)


class PermeabilityError(InadmissibleState):
    pass


def _check_porosity(J, phi_f, phi0):
    if np.any(phi_f <= 0.0) or np.any(phi_f >= J + phi0):
        raise PermeabilityError("porosity outside the physical window (0, J + phi0)")


@dataclass(frozen=True)
class KCIso:
    """Normalised isotropic Kozeny-Carman law:
    kappa = kappa0 [1 + (1-phi0)^2/phi0^3 J phi^3 (J-phi)^2]."""

    kappa0: float
    phi0: float

    def scalar(self, J, phi_f, phi0=None):
        phi0 = self.phi0 if phi0 is None else phi0
        _check_porosity(J, phi_f, phi0)
        c = (1.0 - phi0) ** 2 / phi0 ** 3
        return self.kappa0 * (1.0 + c * J * phi_f ** 3 * (J - phi_f) ** 2)

    def d_scalar(self, J, phi_f, phi0=None):
        """(d kappa / dJ, d kappa / d phi_f)."""
        phi0 = self.phi0 if phi0 is None else phi0
        c = self.kappa0 * (1.0 - phi0) ** 2 / phi0 ** 3
        dJ = c * (phi_f ** 3 * (J - phi_f) ** 2
                  + 2.0 * J * phi_f ** 3 * (J - phi_f))
        dphi = c * J * (3.0 * phi_f ** 2 * (J - phi_f) ** 2
                        - 2.0 * phi_f ** 3 * (J - phi_f))
        return dJ, dphi


@dataclass(frozen=True)
class PowerLaw:
    """kappa = kappa0 (J phi / phi0)^(2/3)."""

    kappa0: float
    phi0: float

    def scalar(self, J, phi_f, phi0=None):
        phi0 = self.phi0 if phi0 is None else phi0
        _check_porosity(J, phi_f, phi0)
        return self.kappa0 * (J * phi_f / phi0) ** (2.0 / 3.0)

    def d_scalar(self, J, phi_f, phi0=None):
        phi0 = self.phi0 if phi0 is None else phi0
        base = (J * phi_f / phi0) ** (-1.0 / 3.0)
        pref = self.kappa0 * (2.0 / 3.0) * base / phi0
        return pref * phi_f, pref * J


@dataclass(frozen=True)
class Exponential:
    """kappa = kappa0 ((J - phi^3)/(1 - phi^3))^3 exp(M0 (J^2-1)/2)."""

    kappa0: float
    M0: float = 4.638

    def scalar(self, J, phi_f, phi0=None):
        g = (J - phi_f ** 3) / (1.0 - phi_f ** 3)
        if np.any(g <= 0.0):
            raise PermeabilityError("exponential law: J <= phi_f^3")
        return self.kappa0 * g ** 3 * np.exp(self.M0 * (J ** 2 - 1.0) / 2.0)

    def d_scalar(self, J, phi_f, phi0=None):
        den = 1.0 - phi_f ** 3
        g = (J - phi_f ** 3) / den
        e = np.exp(self.M0 * (J ** 2 - 1.0) / 2.0)
        dJ = self.kappa0 * e * (3.0 * g ** 2 / den + g ** 3 * self.M0 * J)
        dg_dphi = 3.0 * phi_f ** 2 * (J - 1.0) / den ** 2
        dphi = self.kappa0 * e * 3.0 * g ** 2 * dg_dphi
        return dJ, dphi


@dataclass(frozen=True)
class KCAniso:
    """Kozeny-Carman scalar times the fibre/sheet structure tensor
    (kf/I4f) Ff0 (x) Ff0 + (ks/I4s) Fs0 (x) Fs0."""

    kappa0: float
    phi0: float
    kappa_f: float
    kappa_s: float
    f0: tuple
    s0: tuple

    def tensor(self, kin, phi_f, phi0=None):
        phi0v = self.phi0 if phi0 is None else phi0
        iso = KCIso(self.kappa0, self.phi0)
        k = iso.scalar(kin.J, phi_f, phi0v) / self.kappa0  # normalised factor
        f0 = np.asarray(self.f0, dtype=float)
        s0 = np.asarray(self.s0, dtype=float)
        _, I4f, I4s, _ = invariants(kin.C, f0, s0)
        Ff = kin.F @ f0
        Fs = kin.F @ s0
        struct = (self.kappa_f / I4f)[..., None, None] * np.einsum("...i,...j->...ij", Ff, Ff) \
            + (self.kappa_s / I4s)[..., None, None] * np.einsum("...i,...j->...ij", Fs, Fs)
        return self.kappa0 * k[..., None, None] * struct


def permeability(kin, phi_f, law, phi0=None):
    """Permeability tensor for the selected law (d x d, batched)."""
    if isinstance(law, KCAniso):
        return law.tensor(kin, phi_f, phi0)
    d = kin.dim
    k = law.scalar(kin.J, phi_f, phi0)
    return np.asarray(k)[..., None, None] * np.eye(d)
