"""Planar restricted three-body models in the rotating frame.

Three variants share one interface: the autonomous circular problem
(:class:`Cr3bp`), the Sun-perturbed bicircular problem (:class:`Bcp`) and the
elliptic problem written in the uniformly rotating frame (:class:`Er3bp`).

States are position-momentum vectors ``(x, y, px, py)`` with
``px = xdot - y`` and ``py = ydot + x``. Every function accepts either a single
state of shape ``(4,)`` or a batch of shape ``(n, 4)``; the dtype of the input
is preserved so the same code runs in ``float64`` and ``longdouble``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Union

import numpy as np

__all__ = [
    "J4",
    "PhaseState",
    "Cr3bp",
    "Bcp",
    "Er3bp",
    "Model",
    "SingularityError",
    "hamiltonian",
    "vector_field",
    "jacobian",
    "vector_field_and_jacobian",
    "true_anomaly",
    "true_anomaly_rate",
    "perturber_angle",
    "primary_positions",
    "model_from_config",
    "model_to_config",
    "EARTH_MOON_MU",
]

EARTH_MOON_MU = 0.012150582
DEFAULT_COLLISION_RADIUS = 1e-6

# standard symplectic structure for (x, y, px, py)
J4 = np.array(
    [
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, 0.0, 0.0],
    ]
)


class SingularityError(ArithmeticError):
    """Raised when a state comes within the collision radius of a massive body."""


class PhaseState(NamedTuple):
    x: float
    y: float
    px: float
    py: float

    def as_array(self, dtype=float) -> np.ndarray:
        return np.array(self, dtype=dtype)

    @classmethod
    def from_array(cls, s) -> "PhaseState":
        s = np.asarray(s, dtype=float).reshape(4)
        if not np.all(np.isfinite(s)):
            raise ValueError("phase state must be finite")
        return cls(*(float(v) for v in s))


def _check_mu(mu: float) -> None:
    if not 0.0 < mu < 0.5:
        raise ValueError(f"mass parameter must lie in (0, 0.5), got {mu!r}")


@dataclass(frozen=True)
class Cr3bp:
    """Circular restricted three-body problem."""

    mu: float = EARTH_MOON_MU
    collision_radius: float = field(default=DEFAULT_COLLISION_RADIUS, compare=False)

    name = "cr3bp"
    periodic = False

    def __post_init__(self):
        _check_mu(self.mu)

    @property
    def period(self) -> float:
        raise AttributeError("the circular problem is autonomous and has no period")

    def bodies(self, t):
        """Return ``[(mass, xb, yb), ...]`` for every attracting body at time ``t``."""
        return [(1.0 - self.mu, -self.mu, 0.0), (self.mu, 1.0 - self.mu, 0.0)]

    def tidal(self, t):
        """Coefficients of the linear (indirect) potential term ``ax*x + ay*y``."""
        return 0.0, 0.0


@dataclass(frozen=True)
class Bcp:
    """Bicircular problem: the circular problem plus a distant perturber.

    The perturber sits at distance ``a0`` and angle
    ``theta = -omega_m0 * t + theta_m0_0`` in the rotating frame.
    Defaults are the Sun-Earth-Moon values.
    """

    mu: float = EARTH_MOON_MU
    mu0: float = 328900.54
    a0: float = 388.81114
    omega_m0: float = 0.925195985520347
    theta_m0_0: float = 0.0
    collision_radius: float = field(default=DEFAULT_COLLISION_RADIUS, compare=False)

    name = "bcp"
    periodic = True

    def __post_init__(self):
        _check_mu(self.mu)
        if self.mu0 < 0:
            raise ValueError("perturber mass mu0 must be non-negative")
        if not self.a0 > 1:
            raise ValueError("perturber distance a0 must exceed 1")
        if self.omega_m0 == 0:
            raise ValueError("perturber rate omega_m0 must be non-zero")

    @property
    def omega(self) -> float:
        return abs(self.omega_m0)

    @property
    def period(self) -> float:
        return 2.0 * math.pi / abs(self.omega_m0)

    def bodies(self, t):
        base = [(1.0 - self.mu, -self.mu, 0.0), (self.mu, 1.0 - self.mu, 0.0)]
        if self.mu0 == 0:
            return base
        th = perturber_angle(self, t)
        _, cos, sin = _fns(th)
        return base + [(self.mu0, self.a0 * cos(th), self.a0 * sin(th))]

    def tidal(self, t):
        if self.mu0 == 0:
            return 0.0, 0.0
        th = perturber_angle(self, t)
        _, cos, sin = _fns(th)
        k = self.mu0 / self.a0**2
        return k * cos(th), k * sin(th)


@dataclass(frozen=True)
class Er3bp:
    """Elliptic restricted problem in the uniformly rotating (mean-motion) frame.

    The primaries sit on the line at angle ``phi(t) - t`` from the x-axis with
    separation ``1 / (1 + e cos phi)`` (unit semi-latus rectum), while ``phi``
    advances with unit mean motion, so the perturbation period is ``2*pi``.
    """

    mu: float = EARTH_MOON_MU
    e: float = 0.0549006
    phi0: float = 0.0
    collision_radius: float = field(default=DEFAULT_COLLISION_RADIUS, compare=False)

    name = "er3bp"
    periodic = True
    omega = 1.0

    def __post_init__(self):
        _check_mu(self.mu)
        if not 0.0 <= self.e < 1.0:
            raise ValueError(f"eccentricity must lie in [0, 1), got {self.e!r}")

    @property
    def period(self) -> float:
        return 2.0 * math.pi

    def bodies(self, t):
        (x1, y1), (x2, y2) = primary_positions(self, t)
        return [(1.0 - self.mu, x1, y1), (self.mu, x2, y2)]

    def tidal(self, t):
        return 0.0, 0.0


Model = Union[Cr3bp, Bcp, Er3bp]


def _fns(v):
    """math functions for plain floats, numpy ufuncs for arrays and longdouble."""
    if isinstance(v, float):
        return math.sqrt, math.cos, math.sin
    return np.sqrt, np.cos, np.sin


def perturber_angle(p: Bcp, t):
    """Angle of the perturber in the rotating frame, ``-omega_m0 t + theta_m0_0``."""
    return -p.omega_m0 * t + p.theta_m0_0


def _mean_anomaly_at_epoch(e: float, phi0: float) -> float:
    ecc_anom = 2.0 * math.atan2(math.sqrt(1 - e) * math.sin(phi0 / 2), math.sqrt(1 + e) * math.cos(phi0 / 2))
    return ecc_anom - e * math.sin(ecc_anom)


def true_anomaly(p: Er3bp, t, tol: float = 1e-14, max_iter: int = 50):
    """True anomaly of the primaries at time ``t`` with ``phi(0) = phi0``.

    Kepler's equation is solved by Newton iteration on the eccentric anomaly.
    The result is continuous in ``t`` (it advances by ``2*pi`` per period),
    and for ``e = 0`` equals ``t + phi0`` exactly.
    """
    e = p.e
    if e == 0:
        return t + p.phi0
    if isinstance(t, float):
        mean = t + _mean_anomaly_at_epoch(e, p.phi0)
        wraps = math.floor((mean + math.pi) / (2 * math.pi))
        m = mean - wraps * 2 * math.pi
        ecc = m + e * math.sin(m)
        for _ in range(max_iter):
            step = (ecc - e * math.sin(ecc) - m) / (1 - e * math.cos(ecc))
            ecc -= step
            if abs(step) <= tol:
                break
        nu = 2 * math.atan2(math.sqrt(1 + e) * math.sin(ecc / 2), math.sqrt(1 - e) * math.cos(ecc / 2))
        return nu + wraps * 2 * math.pi
    t_arr = np.asarray(t)
    mean = t_arr + _mean_anomaly_at_epoch(e, p.phi0)
    # reduce to (-pi, pi] for the solve, restore the winding afterwards
    two_pi = 2 * np.pi
    wraps = np.floor((mean + np.pi) / two_pi)
    m = mean - wraps * two_pi
    ecc = m + e * np.sin(m)
    for _ in range(max_iter):
        step = (ecc - e * np.sin(ecc) - m) / (1 - e * np.cos(ecc))
        ecc = ecc - step
        if np.all(np.abs(step) <= tol):
            break
    nu = 2 * np.arctan2(np.sqrt(1 + e) * np.sin(ecc / 2), np.sqrt(1 - e) * np.cos(ecc / 2))
    out = nu + wraps * two_pi
    return out if t_arr.ndim else out[()]


def true_anomaly_rate(p: Er3bp, phi):
    """Right-hand side of the true-anomaly ODE, ``(1 + e cos phi)^2 / (1 - e^2)^(3/2)``."""
    return (1 + p.e * np.cos(phi)) ** 2 / (1 - p.e**2) ** 1.5


def primary_positions(model: Model, t):
    """Positions ``((x1, y1), (x2, y2))`` of the two primaries at time ``t``."""
    mu = model.mu
    if not isinstance(model, Er3bp):
        return (-mu, 0.0), (1.0 - mu, 0.0)
    _, cos, sin = _fns(t)
    phi = true_anomaly(model, t)
    rho = 1 / (1 + model.e * cos(phi))
    ang = phi - t
    ux, uy = cos(ang), sin(ang)
    return (-mu * rho * ux, -mu * rho * uy), ((1 - mu) * rho * ux, (1 - mu) * rho * uy)


def _split(s):
    s = np.asarray(s)
    if s.shape[-1] != 4:
        raise ValueError(f"expected trailing dimension 4, got shape {s.shape}")
    if s.ndim == 1 and s.dtype == np.float64:
        return s, *s.tolist()
    return s, s[..., 0], s[..., 1], s[..., 2], s[..., 3]


def _scalar_time(t):
    if isinstance(t, np.float64) or isinstance(t, (int, np.integer)):
        return float(t)
    return t


def _distances(model, t, x, y):
    sqrt = _fns(x)[0]
    out = []
    for m, bx, by in model.bodies(t):
        dx = x - bx
        dy = y - by
        r = sqrt(dx * dx + dy * dy)
        bad = r < model.collision_radius
        if bad if isinstance(bad, bool) else bad.any():
            raise SingularityError(f"state within collision radius of body at ({float(bx):.6g}, {float(by):.6g})")
        out.append((m, dx, dy, r))
    return out


def hamiltonian(model: Model, s, t=0.0):
    """Hamiltonian energy at state ``s`` and time ``t``."""
    s, x, y, px, py = _split(s)
    t = _scalar_time(t)
    h = 0.5 * (px * px + py * py) - x * py + y * px
    for m, dx, dy, r in _distances(model, t, x, y):
        h = h - m / r
    ax, ay = model.tidal(t)
    return h + ax * x + ay * y


def _forces(model, t, x, y, with_hessian):
    ax, ay = model.tidal(t)
    fx = -ax
    fy = -ay
    vxx = vyy = vxy = 0.0
    for m, dx, dy, r in _distances(model, t, x, y):
        r2 = r * r
        r3 = r2 * r
        k = m / r3
        fx = fx - k * dx
        fy = fy - k * dy
        if with_hessian:
            k5 = 3 * k / r2
            vxx = vxx + k - k5 * dx * dx
            vyy = vyy + k - k5 * dy * dy
            vxy = vxy - k5 * dx * dy
    return fx, fy, vxx, vyy, vxy


def vector_field(model: Model, s, t=0.0):
    """Hamilton's equations ``J grad H`` evaluated at ``(s, t)``."""
    s, x, y, px, py = _split(s)
    fx, fy, *_ = _forces(model, _scalar_time(t), x, y, False)
    if s.ndim == 1:
        return np.array([px + y, py - x, py + fx, -px + fy], dtype=np.result_type(s, float))
    out = np.empty_like(s, dtype=np.result_type(s, float))
    out[..., 0] = px + y
    out[..., 1] = py - x
    out[..., 2] = py + fx
    out[..., 3] = -px + fy
    return out


def _jacobian_matrix(vxx, vyy, vxy, shape, dtype):
    if not shape:
        return np.array(
            [[0, 1, 1, 0], [-1, 0, 0, 1], [-vxx, -vxy, 0, 1], [-vxy, -vyy, -1, 0]],
            dtype=dtype,
        )
    jac = np.zeros(shape + (4, 4), dtype=dtype)
    jac[..., 0, 1] = 1
    jac[..., 0, 2] = 1
    jac[..., 1, 0] = -1
    jac[..., 1, 3] = 1
    jac[..., 2, 0] = -vxx
    jac[..., 2, 1] = -vxy
    jac[..., 2, 3] = 1
    jac[..., 3, 0] = -vxy
    jac[..., 3, 1] = -vyy
    jac[..., 3, 2] = -1
    return jac


def jacobian(model: Model, s, t=0.0):
    """Analytic Jacobian of :func:`vector_field` with respect to the state.

    Returns shape ``(4, 4)`` for one state or ``(n, 4, 4)`` for a batch.
    """
    s, x, y, px, py = _split(s)
    _, _, vxx, vyy, vxy = _forces(model, _scalar_time(t), x, y, True)
    return _jacobian_matrix(vxx, vyy, vxy, s.shape[:-1], np.result_type(s, float))


def vector_field_and_jacobian(model: Model, s, t=0.0):
    """Both :func:`vector_field` and :func:`jacobian` for one state, sharing the distance work."""
    s, x, y, px, py = _split(s)
    fx, fy, vxx, vyy, vxy = _forces(model, _scalar_time(t), x, y, True)
    dtype = np.result_type(s, float)
    f = np.array([px + y, py - x, py + fx, -px + fy], dtype=dtype)
    return f, _jacobian_matrix(vxx, vyy, vxy, (), dtype)


_CONFIG_KEYS = {
    "cr3bp": {"mu"},
    "bcp": {"mu", "mu0", "a0", "omega_m0", "theta_m0_0"},
    "er3bp": {"mu", "e", "phi0"},
}
_CLASSES = {"cr3bp": Cr3bp, "bcp": Bcp, "er3bp": Er3bp}


def model_from_config(cfg) -> Model:
    """Build a model from a JSON record such as ``{"model": "bcp", "mu0": 0}``.

    Keys that do not belong to the chosen model are rejected.
    """
    if isinstance(cfg, (str, bytes)):
        cfg = json.loads(cfg)
    cfg = dict(cfg)
    kind = cfg.pop("model", None)
    if kind not in _CLASSES:
        raise ValueError(f"unknown model {kind!r}; expected one of {sorted(_CLASSES)}")
    extra = set(cfg) - _CONFIG_KEYS[kind] - {"collision_radius"}
    if extra:
        raise ValueError(f"unexpected keys for {kind}: {sorted(extra)}")
    return _CLASSES[kind](**{k: float(v) for k, v in cfg.items()})


def model_to_config(model: Model) -> dict:
    d = asdict(model)
    d.pop("collision_radius")
    return {"model": model.name, **d}
