"""Elliptic-hyperbolic normal form of a symplectic 4x4 map and its effective Hamiltonian.

A fixed point with multipliers ``{sigma, 1/sigma, exp(+-i psi)}`` has a
symplectic basis ``C`` in which the linearized map is

    Lambda = diag([[sigma, 0], [0, 1/sigma]], [[cos r, sin r], [-sin r, cos r]])

acting on local coordinates ``(q1, p1, q2, p2)``. The rotation ``r`` is
``psi`` or ``2 pi - psi`` depending on the Krein sign of the center pair: only
one orientation admits a basis with ``C^T J C = J``. The time-``T`` flow of

    H2 = lambda_t q1 p1 + nu_t / 2 (q2^2 + p2^2),  lambda_t = ln(sigma)/T, nu_t = r/T

reproduces ``Lambda`` exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import block_diag, expm

from .models import J4

__all__ = [
    "J_LOCAL",
    "SpectrumError",
    "NormalForm",
    "MapEigenbasis",
    "EffectiveHamiltonian",
    "lambda_matrix",
    "normal_form",
    "symplectic_eigenbasis",
    "effective_hamiltonian",
    "verify_proposition_1",
]

# symplectic form in local (q1, p1, q2, p2) ordering
J_LOCAL = np.array(
    [
        [0.0, 1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.0, 0.0, -1.0, 0.0],
    ]
)


class SpectrumError(ValueError):
    """The spectrum is not of elliptic-hyperbolic type, or is degenerate."""


def lambda_matrix(sigma: float, rotation: float) -> np.ndarray:
    c, s = math.cos(rotation), math.sin(rotation)
    out = np.zeros((4, 4))
    out[0, 0] = sigma
    out[1, 1] = 1.0 / sigma
    out[2:, 2:] = [[c, s], [-s, c]]
    return out


@dataclass(frozen=True)
class NormalForm:
    """Multipliers of an elliptic-hyperbolic fixed point.

    Attributes
    ----------
    sigma : float
        Real multiplier larger than one.
    psi : float
        Argument of the unit-circle multiplier with positive imaginary part.
    krein : int
        Krein sign of that multiplier (+1 or -1).
    """

    sigma: float
    psi: float
    krein: int = 1

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0.0 <= self.psi < 2 * math.pi:
            raise ValueError("psi must lie in [0, 2 pi)")
        if self.krein not in (1, -1):
            raise ValueError("krein must be +1 or -1")

    @property
    def rotation(self) -> float:
        """Rotation angle of the center block in a symplectic basis."""
        return self.psi if self.krein > 0 or self.psi == 0 else 2 * math.pi - self.psi

    @property
    def lambda_matrix(self) -> np.ndarray:
        return lambda_matrix(self.sigma, self.rotation)

    def to_dict(self) -> dict:
        return {"sigma": self.sigma, "psi": self.psi, "krein": self.krein, "rotation": self.rotation}


def _pairing(a, b, J):
    return float(a @ J @ b)


def _center_columns(w, J, zero_index: int = 3):
    """Symplectic real pair from a complex eigenvector ``w``.

    Returns ``(c3, c4, krein)`` with ``c3^T J c4 = 1``. The free phase of ``w``
    is fixed so that ``c3[zero_index] = 0`` and the leading entry of ``c3``
    that is not negligible is positive.
    """
    a, b = w.real, w.imag
    kappa = _pairing(a, b, J)
    if abs(kappa) < 1e-14 * (np.linalg.norm(a) * np.linalg.norm(b) + 1e-300):
        raise SpectrumError("center eigenvector has zero symplectic pairing")
    krein = 1 if kappa > 0 else -1
    scale = math.sqrt(abs(kappa))
    a, b = a / scale, krein * b / scale
    # (a, b) -> (cos t a - sin t b, sin t a + cos t b) keeps the pairing
    alpha = math.atan2(a[zero_index], b[zero_index])
    c3 = math.cos(alpha) * a - math.sin(alpha) * b
    c4 = math.sin(alpha) * a + math.cos(alpha) * b
    c3[zero_index] = 0.0 if abs(c3[zero_index]) < 1e-15 * np.abs(c3).max() else c3[zero_index]
    lead = np.flatnonzero(np.abs(c3) > 1e-12 * np.abs(c3).max())[0]
    if c3[lead] < 0:
        c3, c4 = -c3, -c4
    return c3, c4, krein


def _saddle_columns(u, s, J):
    """Scale ``(u, s)`` so ``u^T J s = 1`` with ``u[0] > 0``."""
    u = np.real(u).astype(float)
    s = np.real(s).astype(float)
    if u[0] < 0:
        u = -u
    omega = _pairing(u, s, J)
    if abs(omega) < 1e-14 * np.linalg.norm(u) * np.linalg.norm(s):
        raise SpectrumError("saddle eigenvectors have zero symplectic pairing")
    scale = math.sqrt(abs(omega))
    return u / scale, math.copysign(1.0, omega) * s / scale


def _classify(m, unit_tol):
    vals = np.linalg.eigvals(m)
    order = np.argsort(-np.abs(vals))
    vals = vals[order]
    top = vals[0]
    if abs(top.imag) > 1e-9 * abs(top) or top.real <= 0:
        raise SpectrumError(f"dominant multiplier {top} is not real and positive")
    sigma = float(top.real)
    if sigma <= 1.0 + 1e-8:
        raise SpectrumError("no hyperbolic pair: spectrum is elliptic or degenerate")
    center = vals[1:3]
    if np.any(np.abs(np.abs(center) - 1.0) > unit_tol):
        raise SpectrumError(f"second multiplier pair {center} is not on the unit circle")
    pos = center[np.argmax(center.imag)]
    if abs(pos.imag) < 1e-9:
        raise SpectrumError("center multipliers at +-1: degenerate rotation")
    return sigma, float(np.angle(pos)), vals


def normal_form(m, period: Optional[float] = None, unit_tol: float = 1e-4) -> NormalForm:
    """Reduce a symplectic monodromy matrix to ``(sigma, psi)`` and its Krein sign.

    Parameters
    ----------
    m : array_like, shape (4, 4)
        Symplectic with respect to ``J4`` (physical ordering) or ``J_LOCAL``;
        the Krein sign is taken with respect to whichever form ``m`` preserves.
    period : float, optional
        Accepted for symmetry with :func:`effective_hamiltonian`; unused.
    unit_tol : float
        Allowed distance of the center multipliers from the unit circle.
    """
    m = np.asarray(m, dtype=float)
    if m.shape != (4, 4) or not np.all(np.isfinite(m)):
        raise ValueError("monodromy must be a finite 4x4 matrix")
    sigma, psi, _ = _classify(m, unit_tol)
    J = _preserved_form(m)
    vals, vecs = np.linalg.eig(m)
    k = np.argmin(np.abs(vals - complex(math.cos(psi), math.sin(psi))))
    _, _, krein = _center_columns(vecs[:, k], J)
    return NormalForm(sigma=sigma, psi=psi, krein=krein)


def _preserved_form(m):
    scale = np.linalg.norm(m) ** 2
    d4 = np.linalg.norm(m.T @ J4 @ m - J4) / scale
    dl = np.linalg.norm(m.T @ J_LOCAL @ m - J_LOCAL) / scale
    return J4 if d4 <= dl else J_LOCAL


@dataclass
class MapEigenbasis:
    """Symplectic change of basis ``C`` with ``C^{-1} M C = Lambda``.

    Columns are (unstable, stable, center-q, center-p).
    """

    c: np.ndarray
    normal_form: NormalForm
    orbit_ref: object = None

    def to_local(self, dx) -> np.ndarray:
        return np.linalg.solve(self.c, np.asarray(dx, dtype=float).T).T

    def to_displacement(self, local) -> np.ndarray:
        return np.asarray(local, dtype=float) @ self.c.T


def symplectic_eigenbasis(m, nf: NormalForm, m_inv=None, J=None, orbit_ref=None) -> MapEigenbasis:
    """Build ``C`` for the monodromy ``m`` and its normal form ``nf``.

    The unstable column is the dominant eigenvector of ``m``; the stable
    column is the dominant eigenvector of ``m_inv``. When ``m_inv`` is not
    given the symplectic inverse ``-J m^T J`` is used, which needs no
    inversion of an ill-conditioned matrix.
    """
    m = np.asarray(m, dtype=float)
    J = _preserved_form(m) if J is None else np.asarray(J, dtype=float)
    if m_inv is None:
        m_inv = -J @ m.T @ J
    vals, vecs = np.linalg.eig(m)
    u = vecs[:, np.argmax(np.abs(vals))]
    ivals, ivecs = np.linalg.eig(np.asarray(m_inv, dtype=float))
    s = ivecs[:, np.argmax(np.abs(ivals))]
    u, s = _saddle_columns(u, s, J)

    target = complex(math.cos(nf.psi), math.sin(nf.psi))
    w = vecs[:, np.argmin(np.abs(vals - target))]
    # strip the hyperbolic components left by rounding (symplectic projector)
    w = w - (w @ J @ s) * u + (w @ J @ u) * s
    c3, c4, krein = _center_columns(w, J)
    if krein != nf.krein:
        raise SpectrumError("Krein sign of the center pair disagrees with the normal form")
    return MapEigenbasis(np.column_stack([u, s, c3, c4]), nf, orbit_ref)


@dataclass(frozen=True)
class EffectiveHamiltonian:
    """Quadratic Hamiltonian whose time-``T`` flow is the normal-form map."""

    lambda_tilde: float
    nu_tilde: float
    period: float

    @property
    def a_matrix(self) -> np.ndarray:
        lt, nt = self.lambda_tilde, self.nu_tilde
        return np.array(
            [[lt, 0.0, 0.0, 0.0], [0.0, -lt, 0.0, 0.0], [0.0, 0.0, 0.0, nt], [0.0, 0.0, -nt, 0.0]]
        )

    def energy(self, local) -> np.ndarray:
        """``H2(q1, p1, q2, p2)`` for one point or a batch ``(n, 4)``."""
        z = np.asarray(local, dtype=float)
        q1, p1, q2, p2 = np.moveaxis(z, -1, 0)
        return self.lambda_tilde * q1 * p1 + 0.5 * self.nu_tilde * (q2 * q2 + p2 * p2)

    def to_dict(self) -> dict:
        return {"lambda_tilde": self.lambda_tilde, "nu_tilde": self.nu_tilde, "period": self.period}


def effective_hamiltonian(nf: NormalForm, period: float) -> EffectiveHamiltonian:
    """``lambda_t = ln(sigma)/T`` and ``nu_t = rotation/T``."""
    if not nf.sigma > 1.0:
        raise ValueError("sigma must exceed 1")
    if not period > 0:
        raise ValueError("period must be positive")
    return EffectiveHamiltonian(math.log(nf.sigma) / period, nf.rotation / period, float(period))


def verify_proposition_1(eh: EffectiveHamiltonian, nf: NormalForm) -> float:
    """``||exp(A T) - Lambda||_F / ||Lambda||_F``."""
    lam = nf.lambda_matrix
    at = eh.a_matrix * eh.period
    # A is block diagonal; exponentiating the blocks apart keeps the large
    # saddle norm from inflating the scaling-and-squaring error of the rotation
    flow = block_diag(expm(at[:2, :2]), expm(at[2:, 2:]))
    return float(np.linalg.norm(flow - lam) / np.linalg.norm(lam))
