"""Transit and non-transit initial conditions near a Lagrange periodic orbit.

Local coordinates ``z = (q1, p1, q2, p2)`` are displacements from the periodic
orbit expressed in the map eigenbasis ``C``; the linearized period map is
``Lambda`` and the effective Hamiltonian ``H2`` is conserved by it. The
equilibrium region is bounded by the lines ``n1: p1 - q1 = +c`` and
``n2: p1 - q1 = -c``. On each line the sign of ``q1 p1`` separates transit
(``> 0``) from non-transit (``< 0``) points.

With the unstable column oriented towards ``+x``, transit points on ``n1``
come from the larger-primary realm (``m1``) and leave into the smaller-primary
realm (``m2``); ``n2`` is the mirror image and carries the ``m2 -> m1`` set.
"""
from __future__ import annotations

import enum
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .integrate import (
    DEFAULT_SETTINGS,
    IntegrationError,
    IntegratorSettings,
    Trajectory,
    flow,
    flow_batch,
    flow_with_stm,
    phase_to_time,
    solve,
)
from .lagrange import collinear_points
from .models import J4, Model, SingularityError, vector_field
from .porbit import PeriodicOrbit
from .symmap import EffectiveHamiltonian, MapEigenbasis, NormalForm, _center_columns

__all__ = [
    "LocalState",
    "OrbitClass",
    "Outcome",
    "BoundarySet",
    "TransitOutcome",
    "RealmWindow",
    "PhaseFrame",
    "IterateResult",
    "classify_local",
    "boundary_set",
    "phase_frame",
    "to_physical",
    "to_local",
    "verify_transit",
    "verify_transit_batch",
    "transit_cap",
    "iterate_region",
    "iterates_to_exit",
]


class LocalState(NamedTuple):
    q1: float
    p1: float
    q2: float
    p2: float

    def as_array(self) -> np.ndarray:
        return np.array(self, dtype=float)


class OrbitClass(str, enum.Enum):
    TRANSIT = "transit"
    NONTRANSIT = "nontransit"
    ASYMPTOTIC = "asymptotic"
    CENTER = "center"


class Outcome(str, enum.Enum):
    TRANSIT = "transit"
    NONTRANSIT = "nontransit"
    BOUNDED = "bounded"
    UNDECIDED = "undecided"


def classify_local(s) -> OrbitClass:
    """Orbit class from the sign of ``q1 p1``."""
    q1, p1 = float(s[0]), float(s[1])
    if q1 == 0.0 and p1 == 0.0:
        return OrbitClass.CENTER
    if q1 == 0.0 or p1 == 0.0:
        return OrbitClass.ASYMPTOTIC
    return OrbitClass.TRANSIT if q1 * p1 > 0 else OrbitClass.NONTRANSIT


def _side_sign(side: str) -> float:
    if side not in ("n1", "n2"):
        raise ValueError("side must be 'n1' or 'n2'")
    return 1.0 if side == "n1" else -1.0


def _center_radius(eh: EffectiveHamiltonian, h, q1, p1):
    rest = h - eh.lambda_tilde * q1 * p1
    return np.sqrt(np.maximum(2.0 * rest / eh.nu_tilde, 0.0)), rest


@dataclass
class BoundarySet:
    """Samples of one bounding line on the energy surface ``H2 = h``.

    ``transit`` and ``nontransit`` are arrays of shape ``(n, 4)``; the transit
    samples end at the point where the center circle shrinks to zero.
    """

    side: str
    energy: float
    offset: float
    transit: np.ndarray
    nontransit: np.ndarray
    asymptotic: LocalState
    q1_max: float

    def all_points(self) -> tuple[np.ndarray, list]:
        pts = np.vstack([self.transit, self.nontransit])
        labels = [OrbitClass.TRANSIT] * len(self.transit) + [OrbitClass.NONTRANSIT] * len(self.nontransit)
        return pts, labels


def _transit_q1_max(eh, h, c):
    # positive root of q1 (q1 + c) = h / lambda_t
    k = h / eh.lambda_tilde
    return 2.0 * k / (c + math.sqrt(c * c + 4.0 * k))


def _line_points(eh, h, c, q1, sign, angle):
    q1 = sign * np.asarray(q1, dtype=float)
    p1 = q1 + sign * c
    r, rest = _center_radius(eh, h, q1, p1)
    out = np.column_stack([q1, p1, r * math.cos(angle), r * math.sin(angle)])
    return out[rest >= 0.0]


def boundary_set(
    eh: EffectiveHamiltonian, h: float, c: float, n: int = 40, side: str = "n1", center_angle: float = 0.0
) -> BoundarySet:
    """Sample the transit segment and the entering non-transit segment of a boundary line.

    On ``n1`` transit points have ``q1 in (0, q1_max]`` and the entering
    non-transit points have ``q1 in (-c/2, 0)``; ``n2`` is the mirror image
    ``(q1, p1) -> (-q1, -p1)``. Each saddle sample carries one center point
    on its circle at ``center_angle``.
    """
    if not (h > 0 and c > 0):
        raise ValueError("h and c must be positive")
    if n < 1:
        raise ValueError("n must be positive")
    sign = _side_sign(side)
    q1_max = _transit_q1_max(eh, h, c)
    k = np.arange(1, n + 1)
    transit = _line_points(eh, h, c, q1_max * k / n, sign, center_angle)
    # the last transit sample sits on the zero-velocity boundary: radius exactly 0
    if len(transit):
        transit[-1, 2:] = 0.0
    nontransit = _line_points(eh, h, c, -0.5 * c * k / (n + 1), sign, center_angle)
    r0 = math.sqrt(2.0 * h / eh.nu_tilde)
    asym = LocalState(0.0, sign * c, r0 * math.cos(center_angle), r0 * math.sin(center_angle))
    return BoundarySet(side, h, c, transit, nontransit, asym, q1_max)


@dataclass
class PhaseFrame:
    """Orbit point and eigenbasis transported to phase ``theta``."""

    theta: float
    t: float
    x_bar: np.ndarray
    c: np.ndarray

    def to_physical(self, local) -> np.ndarray:
        return self.x_bar + np.asarray(local, dtype=float) @ self.c.T

    def to_local(self, state) -> np.ndarray:
        d = np.asarray(state, dtype=float) - self.x_bar
        return np.linalg.solve(self.c, d.T).T


def phase_frame(
    basis: MapEigenbasis,
    orbit: PeriodicOrbit,
    theta: Optional[float] = None,
    cfg: IntegratorSettings = DEFAULT_SETTINGS,
    normalize: bool = True,
) -> PhaseFrame:
    """Carry ``x_bar`` and ``C`` from the orbit's phase to ``theta``.

    The unstable and center columns go forward with ``Phi(t, t0)``. The stable
    column is carried backward from ``t0 + T`` and divided by ``sigma``, which
    avoids multiplying a contracting vector by a large matrix. With
    ``normalize`` the result follows the same conventions as the eigenbasis
    at the orbit's own phase (see :func:`_renormalize`).
    """
    t0 = orbit.t0
    if theta is None or theta == orbit.theta0:
        return PhaseFrame(orbit.theta0, t0, np.asarray(orbit.x_bar, dtype=float), basis.c.copy())
    T = orbit.period
    t = phase_to_time(orbit.model, theta)
    # wrap into [t0, t0 + T): the orbit and its basis are T-periodic
    t = t0 + ((t - t0) % T)
    if t == t0:
        return PhaseFrame(theta, t, np.asarray(orbit.x_bar, dtype=float), basis.c.copy())
    fwd = flow_with_stm(orbit.model, orbit.x_bar, t0, t, cfg)
    bwd = flow_with_stm(orbit.model, orbit.x_bar, t0 + T, t, cfg)
    c = fwd.stm @ basis.c
    c[:, 1] = bwd.stm @ basis.c[:, 1] / basis.normal_form.sigma
    if normalize:
        c = _renormalize(c)
    return PhaseFrame(theta, t, fwd.final_state, c)


def _renormalize(c):
    """Bring a transported basis back to the eigenbasis conventions.

    ``Phi C`` is symplectic and diagonalizes the map at the new phase, but its
    saddle columns are stretched by the flow. Rescaling ``u -> a u``,
    ``s -> s / a`` to equal norms and rotating the center pair to the fixed
    phase reproduces the basis that would be computed from the monodromy
    matrix at that phase.
    """
    c = c.copy()
    # integration error spoils the symplectic pairings at the 1e-6 level;
    # restore u^T J s = 1 and strip the saddle part of the center pair
    u, s = c[:, 0], c[:, 1] / (c[:, 0] @ J4 @ c[:, 1])
    w = c[:, 2] + 1j * c[:, 3]
    w = w - (w @ J4 @ s) * u + (w @ J4 @ u) * s
    a = math.sqrt(np.linalg.norm(s) / np.linalg.norm(u))
    c[:, 0] = u * a
    c[:, 1] = s / a
    if c[0, 0] < 0:
        c[:, :2] *= -1.0
    c3, c4, _ = _center_columns(w, J4)
    c[:, 2], c[:, 3] = c3, c4
    return c


def to_physical(
    basis: MapEigenbasis,
    orbit: PeriodicOrbit,
    s,
    theta0: Optional[float] = None,
    frame: Optional[PhaseFrame] = None,
    warn_above: float = 1e-2,
) -> np.ndarray:
    """``x_bar(theta0) + C(theta0) z`` for one local point or a batch."""
    z = np.asarray(s, dtype=float)
    if np.any(np.linalg.norm(np.atleast_2d(z), axis=1) > warn_above):
        warnings.warn("local displacement beyond the linear range", RuntimeWarning, stacklevel=2)
    frame = frame or phase_frame(basis, orbit, theta0)
    return frame.to_physical(z)


def to_local(basis: MapEigenbasis, orbit: PeriodicOrbit, state, theta0=None, frame=None) -> np.ndarray:
    frame = frame or phase_frame(basis, orbit, theta0)
    return frame.to_local(state)


@dataclass(frozen=True)
class RealmWindow:
    """Detection window ``|x - center| <= half_width`` around the neck.

    Leaving through the left edge means the ``m1`` realm, through the right
    edge the ``m2`` realm.
    """

    center: float
    half_width: float = 0.15

    @classmethod
    def around_l1(cls, mu: float, half_width: float = 0.15) -> "RealmWindow":
        return cls(collinear_points(mu).l1, half_width)

    def realm(self, x) -> str:
        return "m1" if x < self.center else "m2"


@dataclass
class TransitOutcome:
    classification: Outcome
    entry_side: Optional[str]
    exit_side: Optional[str]
    exit_time: Optional[float]
    trajectory: Optional[Trajectory] = None
    entry_time: Optional[float] = None


def _decide(entry, exit_):
    if entry is None and exit_ is None:
        return Outcome.BOUNDED
    if entry is None or exit_ is None:
        return Outcome.UNDECIDED
    return Outcome.TRANSIT if entry != exit_ else Outcome.NONTRANSIT


def _exits(model, states, t0, span, window, cfg):
    """Integrate a batch until each member leaves the window; returns (side, time) per member."""
    n = len(states)
    out = [(None, None)] * n
    stop = lambda t, y: np.abs(np.atleast_2d(y)[:, 0] - window.center) > window.half_width  # noqa: E731
    try:
        _, stopped = flow_batch(model, states, t0, t0 + span, cfg, stop=stop)
    except (SingularityError, IntegrationError):
        if n == 1:
            return out
        # isolate the offending member
        return [o for i in range(n) for o in _exits(model, states[i : i + 1], t0, span, window, cfg)]
    for idx, (t, y) in stopped.items():
        out[idx] = (window.realm(float(y[0])), float(t))
    return out


def verify_transit_batch(
    model: Model,
    ics,
    theta0: float,
    window: RealmWindow,
    cfg: IntegratorSettings = DEFAULT_SETTINGS,
    max_periods: float = 6.0,
    n_jobs: int = 1,
) -> list:
    """Nonlinear classification of an ensemble by forward and backward exits.

    Members share one step size inside a worker; ``n_jobs > 1`` splits the
    ensemble across processes.
    """
    ics = np.atleast_2d(np.asarray(ics, dtype=float))
    if n_jobs > 1 and len(ics) > 1:
        chunks = np.array_split(ics, min(n_jobs, len(ics)))
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            parts = pool.map(
                verify_transit_batch,
                [model] * len(chunks),
                chunks,
                [theta0] * len(chunks),
                [window] * len(chunks),
                [cfg] * len(chunks),
                [max_periods] * len(chunks),
            )
            return [o for part in parts for o in part]
    t0 = phase_to_time(model, theta0)
    span = max_periods * (model.period if model.periodic else 2 * math.pi)
    fwd = _exits(model, ics, t0, span, window, cfg)
    bwd = _exits(model, ics, t0, -span, window, cfg)
    return [
        TransitOutcome(_decide(b[0], f[0]), b[0], f[0], f[1], None, b[1]) for f, b in zip(fwd, bwd)
    ]


def verify_transit(
    model: Model,
    ic,
    theta0: float,
    window: RealmWindow,
    cfg: IntegratorSettings = DEFAULT_SETTINGS,
    max_periods: float = 6.0,
    n_samples: int = 400,
) -> TransitOutcome:
    """Classify one initial condition and keep its trajectory from entry to exit."""
    ic = np.asarray(ic, dtype=float)
    out = verify_transit_batch(model, ic[None, :], theta0, window, cfg, max_periods)[0]
    t0 = phase_to_time(model, theta0)
    span = max_periods * (model.period if model.periodic else 2 * math.pi)
    t_lo = out.entry_time if out.entry_time is not None else t0 - span
    t_hi = out.exit_time if out.exit_time is not None else t0 + span
    fun = lambda t, y: vector_field(model, y, t)  # noqa: E731
    grid_b = np.linspace(t0, t_lo, n_samples // 2)[1:-1]
    grid_f = np.linspace(t0, t_hi, n_samples // 2)[1:-1]
    try:
        tb, sb, _ = solve(fun, t0, ic, t_lo, cfg, t_eval=grid_b)
        tf, sf, _ = solve(fun, t0, ic, t_hi, cfg, t_eval=grid_f)
    except (SingularityError, IntegrationError):
        return out
    times = np.array([float(v) for v in tb[::-1]] + [float(v) for v in tf[1:]])
    states = np.array(sb[::-1] + sf[1:], dtype=float)
    out.trajectory = Trajectory(times, states, model)
    return out


@dataclass
class CapSample:
    """Grid over the transit cap: saddle samples times center angles."""

    local: np.ndarray  # (n_saddle * n_angle, 4)
    physical: np.ndarray
    q1: np.ndarray
    angle: np.ndarray


def transit_cap(
    basis: MapEigenbasis,
    orbit: PeriodicOrbit,
    eh: EffectiveHamiltonian,
    h: float,
    c: float,
    grid: tuple = (20, 16),
    side: str = "n1",
    theta0: Optional[float] = None,
    frame: Optional[PhaseFrame] = None,
) -> CapSample:
    """Two-parameter sample of the transit cap: ``q1`` along the transit segment times the
    full center circle, lifted to physical space."""
    n_s, n_a = grid
    sign = _side_sign(side)
    q1_max = _transit_q1_max(eh, h, c)
    q1 = sign * q1_max * np.arange(1, n_s + 1) / n_s
    ang = 2 * math.pi * np.arange(n_a) / n_a
    Q, A = np.meshgrid(q1, ang, indexing="ij")
    Q, A = Q.ravel(), A.ravel()
    P = Q + sign * c
    r, _ = _center_radius(eh, h, Q, P)
    r[np.abs(Q) == q1_max] = 0.0
    local = np.column_stack([Q, P, r * np.cos(A), r * np.sin(A)])
    frame = frame or phase_frame(basis, orbit, theta0)
    return CapSample(local, frame.to_physical(local), Q, A)


class IterateResult(NamedTuple):
    state: LocalState
    crossed: bool


def iterate_region(s, nf: NormalForm, k: int, c: Optional[float] = None, side: str = "n1") -> IterateResult:
    """Apply ``Lambda^k`` in local coordinates.

    ``crossed`` reports whether the iterate lies beyond the line opposite to
    ``side`` (``p1 - q1 < -c`` for ``n1``, ``> c`` for ``n2``).
    """
    q1, p1, q2, p2 = (float(v) for v in s)
    g = nf.sigma ** k
    ang = k * nf.rotation
    cs, sn = math.cos(ang), math.sin(ang)
    out = LocalState(q1 * g, p1 / g, cs * q2 + sn * p2, -sn * q2 + cs * p2)
    crossed = False
    if c is not None:
        d = out.p1 - out.q1
        crossed = d < -c if _side_sign(side) > 0 else d > c
    return IterateResult(out, crossed)


def iterate_array(z, nf: NormalForm, k: int) -> np.ndarray:
    """``Lambda^k`` applied to a batch ``(n, 4)``."""
    z = np.asarray(z, dtype=float)
    g = nf.sigma ** k
    ang = k * nf.rotation
    cs, sn = math.cos(ang), math.sin(ang)
    out = np.empty_like(z)
    out[:, 0] = z[:, 0] * g
    out[:, 1] = z[:, 1] / g
    out[:, 2] = cs * z[:, 2] + sn * z[:, 3]
    out[:, 3] = -sn * z[:, 2] + cs * z[:, 3]
    return out


def iterates_to_exit(delta: float, c: float, sigma: float) -> int:
    """Iterates needed for ``q1 = delta`` to exceed ``c`` under ``q1 -> sigma q1``."""
    if not (delta > 0 and c > 0 and sigma > 1):
        raise ValueError("need delta > 0, c > 0, sigma > 1")
    if delta > c:
        return 0
    k = math.ceil(math.log(c / delta) / math.log(sigma))
    # guard the ceiling against rounding of the logs
    while delta * sigma ** k <= c:
        k += 1
    while k > 0 and delta * sigma ** (k - 1) > c:
        k -= 1
    return k
