"""Equilibria of the circular problem, Hill-region energy levels and the L1/L2 linearization."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .models import Cr3bp, J4, hamiltonian, jacobian
from .symmap import SpectrumError, _center_columns, _saddle_columns

__all__ = [
    "LagrangePointSet",
    "EnergyThresholds",
    "LinearizedSaddleCenter",
    "collinear_residual",
    "collinear_points",
    "lagrange_points",
    "equilibrium_state",
    "energy_thresholds",
    "hill_region_case",
    "linearize_collinear",
    "ROUTH_MU",
]

ROUTH_MU = 0.5 * (1.0 - math.sqrt(23.0 / 27.0))


def _check_mu(mu):
    if not 0.0 < mu < 0.5:
        raise ValueError(f"mu must lie in (0, 0.5), got {mu!r}")


@dataclass(frozen=True)
class LagrangePointSet:
    l1: float
    l2: float
    l3: float
    l4: tuple = (math.nan, math.nan)
    l5: tuple = (math.nan, math.nan)

    def to_dict(self) -> dict:
        return {"l1": self.l1, "l2": self.l2, "l3": self.l3, "l4": list(self.l4), "l5": list(self.l5)}


@dataclass(frozen=True)
class EnergyThresholds:
    e1: float
    e2: float
    e3: float
    e4: float

    def to_dict(self) -> dict:
        return {"e1": self.e1, "e2": self.e2, "e3": self.e3, "e4": self.e4}


@dataclass(frozen=True)
class LinearizedSaddleCenter:
    """Rates of the saddle-center and the symplectic basis in which the
    linear flow reads ``q1' = lam q1, p1' = -lam p1, q2' = nu p2, p2' = -nu q2``."""

    lam: float
    nu: float
    basis: np.ndarray
    point: float

    def h2(self, local) -> np.ndarray:
        q1, p1, q2, p2 = np.moveaxis(np.asarray(local, dtype=float), -1, 0)
        return self.lam * q1 * p1 + 0.5 * self.nu * (q2 * q2 + p2 * p2)


def collinear_residual(x, mu: float):
    """``dU/dx`` on the x-axis; zero at a collinear equilibrium."""
    d1 = x + mu
    d2 = x - 1.0 + mu
    return x - (1.0 - mu) * d1 / abs(d1) ** 3 - mu * d2 / abs(d2) ** 3


def _bisect(f, lo, hi, sign_lo):
    # bracket ends may be singular, so their signs are passed in rather than evaluated
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if (f(mid) > 0) == (sign_lo > 0):
            lo = mid
        else:
            hi = mid
    cands = [v for v in (lo, hi) if math.isfinite(f(v))]
    return min(cands, key=lambda v: abs(f(v)))


def collinear_points(mu: float) -> LagrangePointSet:
    """Collinear points by bisection of ``dU/dx`` in the three brackets."""
    _check_mu(mu)
    f = lambda x: collinear_residual(x, mu)  # noqa: E731
    l3 = _bisect(f, -2.0, -mu, -1)
    l1 = _bisect(f, -mu, 1.0 - mu, -1)
    l2 = _bisect(f, 1.0 - mu, 2.0, -1)
    for x in (l1, l2, l3):
        if abs(f(x)) > 1e-13 * max(1.0, abs(x)):
            raise ArithmeticError(f"bisection residual {f(x):.2e} too large at x={x}")
    return LagrangePointSet(l1, l2, l3)


def lagrange_points(mu: float) -> LagrangePointSet:
    pts = collinear_points(mu)
    half = math.sqrt(3.0) / 2.0
    return LagrangePointSet(pts.l1, pts.l2, pts.l3, (0.5 - mu, half), (0.5 - mu, -half))


def equilibrium_state(x: float, y: float = 0.0) -> np.ndarray:
    """Phase-space state of a rest point: ``(x, y, -y, x)``."""
    return np.array([x, y, -y, x], dtype=float)


def energy_thresholds(mu: float) -> EnergyThresholds:
    pts = lagrange_points(mu)
    model = Cr3bp(mu)
    e = [float(hamiltonian(model, equilibrium_state(x))) for x in (pts.l1, pts.l2, pts.l3)]
    e4 = float(hamiltonian(model, equilibrium_state(*pts.l4)))
    return EnergyThresholds(e[0], e[1], e[2], e4)


def hill_region_case(mu: float, energy: float) -> int:
    """Hill-region case 1..5; an energy equal to a threshold goes to the lower case."""
    th = energy_thresholds(mu)
    for case, level in enumerate((th.e1, th.e2, th.e3, th.e4), start=1):
        if energy <= level:
            return case
    return 5


def linearize_collinear(mu: float, which: str = "L1") -> LinearizedSaddleCenter:
    """Saddle-center linearization at L1 or L2 with a symplectic eigenbasis.

    The basis columns are (unstable, stable, center-q, center-p), satisfy
    ``B^T J B = J_LOCAL`` and take ``jacobian(L)`` to
    ``diag([[lam, 0], [0, -lam]], [[0, nu], [-nu, 0]])``.
    """
    key = which.upper()
    if key not in ("L1", "L2"):
        raise ValueError("which must be 'L1' or 'L2'")
    pts = collinear_points(mu)
    x = pts.l1 if key == "L1" else pts.l2
    a = jacobian(Cr3bp(mu), equilibrium_state(x))
    vals, vecs = np.linalg.eig(a)
    real = np.abs(vals.imag) < 1e-12 * np.abs(vals).max()
    if real.sum() != 2:
        raise SpectrumError("equilibrium is not of saddle-center type")
    i_u = np.flatnonzero(real)[np.argmax(vals[real].real)]
    i_s = np.flatnonzero(real)[np.argmin(vals[real].real)]
    i_c = np.flatnonzero(~real)[np.argmax(vals[~real].imag)]
    lam = float(vals[i_u].real)
    nu = float(vals[i_c].imag)
    u, s = _saddle_columns(vecs[:, i_u], vecs[:, i_s], J4)
    c3, c4, krein = _center_columns(vecs[:, i_c], J4)
    if krein < 0:
        raise SpectrumError("center pair has negative Krein sign at the collinear point")
    return LinearizedSaddleCenter(lam, nu, np.column_stack([u, s, c3, c4]), x)
