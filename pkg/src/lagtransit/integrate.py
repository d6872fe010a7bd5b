"""Adaptive propagation of states and state transition matrices.

The propagator is an embedded Dormand-Prince 5(4) pair with a PI step-size
controller. It is written against numpy only so that it runs in whatever
floating type the initial state carries; passing a ``np.longdouble`` state
gives an extended-precision flow, which the periodic-orbit corrector uses to
push fixed-point residuals below what ``float64`` can represent once the
unstable multiplier is of order 1e8.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from fractions import Fraction as Fr
from typing import Callable, Optional

import numpy as np

from .models import Model, vector_field, vector_field_and_jacobian

__all__ = [
    "IntegratorSettings",
    "IntegrationError",
    "Trajectory",
    "StmResult",
    "solve",
    "flow",
    "flow_with_stm",
    "flow_batch",
    "stroboscopic_map",
    "extended_flow",
    "phase_to_time",
    "monodromy",
    "symplectic_defect",
]


@dataclass(frozen=True)
class IntegratorSettings:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-12
    max_step: float = math.inf
    max_time: float = math.inf
    max_steps: int = 2_000_000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("integration tolerances must be positive")
        if not self.max_step > 0:
            raise ValueError("max_step must be positive")


DEFAULT_SETTINGS = IntegratorSettings()


class IntegrationError(RuntimeError):
    """Step-size underflow, step budget exhausted or time span too long."""


# Dormand & Prince (1980), kept as exact fractions and cast per dtype
_C = [Fr(0), Fr(1, 5), Fr(3, 10), Fr(4, 5), Fr(8, 9), Fr(1), Fr(1)]
_A = [
    [],
    [Fr(1, 5)],
    [Fr(3, 40), Fr(9, 40)],
    [Fr(44, 45), Fr(-56, 15), Fr(32, 9)],
    [Fr(19372, 6561), Fr(-25360, 2187), Fr(64448, 6561), Fr(-212, 729)],
    [Fr(9017, 3168), Fr(-355, 33), Fr(46732, 5247), Fr(49, 176), Fr(-5103, 18656)],
    [Fr(35, 384), Fr(0), Fr(500, 1113), Fr(125, 192), Fr(-2187, 6784), Fr(11, 84)],
]
_E = [Fr(71, 57600), Fr(0), Fr(-71, 16695), Fr(71, 1920), Fr(-17253, 339200), Fr(22, 525), Fr(-1, 40)]

_NONZERO = [[j for j in range(1, i) if _A[i][j] != 0] for i in range(7)]
_TABLEAU_CACHE: dict = {}


def _tableau(dtype):
    key = np.dtype(dtype)
    if key not in _TABLEAU_CACHE:
        cast = lambda f: dtype(f.numerator) / dtype(f.denominator)  # noqa: E731
        _TABLEAU_CACHE[key] = (
            [cast(c) for c in _C],
            [[cast(a) for a in row] for row in _A],
            [cast(e) for e in _E],
        )
    return _TABLEAU_CACHE[key]


def _error_norm(err, y, y_new, cfg):
    scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
    ratio = (err / scale).astype(float)
    if ratio.ndim == 1:
        return float(np.sqrt(np.mean(ratio * ratio)))
    return float(np.sqrt(np.mean(ratio * ratio, axis=-1)).max())


def _initial_step(fun, t0, y0, f0, direction, cfg):
    scale = cfg.abs_tol + np.abs(y0) * cfg.rel_tol
    d0 = float(np.sqrt(np.mean((y0 / scale).astype(float) ** 2)))
    d1 = float(np.sqrt(np.mean((f0 / scale).astype(float) ** 2)))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, cfg.max_step)
    y1 = y0 + direction * h0 * f0
    f1 = fun(t0 + direction * h0, y1)
    d2 = float(np.sqrt(np.mean(((f1 - f0) / scale).astype(float) ** 2))) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1, cfg.max_step)


def solve(
    fun: Callable,
    t0,
    y0,
    t1,
    cfg: IntegratorSettings = DEFAULT_SETTINGS,
    t_eval=None,
    stop: Optional[Callable] = None,
):
    """Integrate ``y' = fun(t, y)`` from ``t0`` to ``t1``.

    ``y0`` may be a single state or a batch ``(n, d)``; one step size is shared
    by the whole batch. Steps are shortened so that every time in ``t_eval``
    (and ``t1``) is hit exactly.

    ``stop(t, y)`` may return a boolean mask (one entry per batch member);
    members flagged are frozen at that step and dropped from the active set.

    Returns ``(times, states, stopped)`` where ``times``/``states`` hold the
    initial point, every ``t_eval`` point and the final point, and ``stopped``
    maps member index to ``(t, y)`` at the step where ``stop`` fired.
    """
    y = np.array(y0, copy=True)
    dtype = y.dtype.type if np.issubdtype(y.dtype, np.floating) else np.float64
    y = y.astype(dtype)
    t = dtype(t0)
    t_end = dtype(t1)
    span = float(t_end - t)
    if abs(span) > cfg.max_time:
        raise IntegrationError(f"time span {abs(span):.6g} exceeds max_time {cfg.max_time:.6g}")

    batch = y.ndim == 2
    active = np.arange(y.shape[0]) if batch else None
    stopped: dict = {}

    targets = [] if t_eval is None else [dtype(v) for v in t_eval]
    direction = 1.0 if span >= 0 else -1.0
    targets = sorted(
        (v for v in targets if direction * float(v - t) > 0 and direction * float(t_end - v) > 0),
        key=lambda v: direction * float(v),
    )
    targets.append(t_end)
    times = [t]
    states = [y.copy()]
    if span == 0:
        return times, states, stopped

    c, a, e = _tableau(dtype)
    k = [None] * 7
    k[0] = fun(t, y)
    h = _initial_step(fun, t, y, k[0], direction, cfg)
    err_old = 1e-4
    beta = 0.04
    expo = 0.2 - 0.75 * beta
    safety = 0.9
    n_steps = 0
    rejected = False
    target_idx = 0

    while True:
        target = targets[target_idx]
        remaining = float(direction * (target - t))
        hit = h >= remaining
        h_step = remaining if hit else h
        if h_step < 1e-14 * max(1.0, abs(float(t))):
            raise IntegrationError(f"step size underflow at t={float(t):.12g}")

        hs = dtype(direction * h_step)
        for i in range(1, 7):
            acc = a[i][0] * k[0]
            for j in _NONZERO[i]:
                acc = acc + a[i][j] * k[j]
            yi = y + hs * acc
            k[i] = fun(t + c[i] * hs, yi)
        y_new = yi  # FSAL: the 7th stage is the fifth-order solution
        err_vec = e[0] * k[0]
        for j in range(2, 7):
            err_vec = err_vec + e[j] * k[j]
        err = _error_norm(hs * err_vec, y, y_new, cfg)

        n_steps += 1
        if n_steps > cfg.max_steps:
            raise IntegrationError(f"exceeded {cfg.max_steps} steps at t={float(t):.12g}")

        if err <= 1.0:
            t = target if hit else t + hs
            y = y_new
            k[0] = k[6]
            fac = (max(err, 1e-10) ** expo) / err_old**beta / safety
            fac = min(max(fac, 0.2), 10.0)
            h_prop = h_step / fac
            if rejected:
                h_prop = min(h_prop, h_step)
            if not hit:
                h = min(h_prop, cfg.max_step)
            else:
                # do not let a shortened landing step shrink the next proposal
                h = min(max(h_prop, h), cfg.max_step)
            err_old = max(err, 1e-4)
            rejected = False

            if stop is not None:
                done = np.atleast_1d(np.asarray(stop(t, y), dtype=bool))
                if batch and done.any():
                    for idx in np.flatnonzero(done):
                        stopped[int(active[idx])] = (t, y[idx].copy())
                    keep = ~done
                    active = active[keep]
                    y = y[keep]
                    k[0] = k[0][keep]
                    if y.shape[0] == 0:
                        times.append(t)
                        states.append(np.full_like(states[0], np.nan))
                        return times, states, stopped
                elif not batch and done.all():
                    stopped[0] = (t, y.copy())
                    return times, states, stopped

            if hit:
                if batch:
                    full = np.full_like(states[0], np.nan)
                    full[active] = y
                    states.append(full)
                else:
                    states.append(y.copy())
                times.append(t)
                target_idx += 1
                if target_idx == len(targets):
                    return times, states, stopped
        else:
            if not np.isfinite(err):
                h = h_step * 0.1
            else:
                h = h_step / min(10.0, max(1.0, err**expo / safety))
            rejected = True


def _solve_compensated(fun, t0, hi, lo, t1, cfg):
    """Single-state Dormand-Prince run with Kahan-compensated state updates.

    The state is carried as an unevaluated pair ``hi + lo`` so that rounding of
    ``y + h * k`` does not accumulate step after step. Stages see ``hi + lo``.
    """
    dtype = np.longdouble
    y = np.asarray(hi, dtype=dtype).copy()
    comp = -np.asarray(lo, dtype=dtype)  # true state is y - comp
    t = dtype(t0)
    t_end = dtype(t1)
    span = float(t_end - t)
    if span == 0:
        return y, -comp
    direction = 1.0 if span > 0 else -1.0
    c, a, e = _tableau(dtype)
    k = [None] * 7
    k[0] = fun(t, y - comp)
    h = _initial_step(fun, t, y, k[0], direction, cfg)
    err_old = 1e-4
    beta = 0.04
    expo = 0.2 - 0.75 * beta
    rejected = False
    n_steps = 0
    while True:
        remaining = float(direction * (t_end - t))
        hit = h >= remaining
        h_step = remaining if hit else h
        if h_step < 1e-14 * max(1.0, abs(float(t))):
            raise IntegrationError(f"step size underflow at t={float(t):.12g}")
        hs = dtype(direction * h_step)
        for i in range(1, 7):
            acc = a[i][0] * k[0]
            for j in _NONZERO[i]:
                acc = acc + a[i][j] * k[j]
            k[i] = fun(t + c[i] * hs, y + (hs * acc - comp))
        err_vec = e[0] * k[0]
        for j in range(2, 7):
            err_vec = err_vec + e[j] * k[j]
        err = _error_norm(hs * err_vec, y, y, cfg)
        n_steps += 1
        if n_steps > cfg.max_steps:
            raise IntegrationError(f"exceeded {cfg.max_steps} steps at t={float(t):.12g}")
        if err <= 1.0:
            acc = a[6][0] * k[0]
            for j in _NONZERO[6]:
                acc = acc + a[6][j] * k[j]
            inc = hs * acc - comp
            y_new = y + inc
            comp = (y_new - y) - inc
            y = y_new
            t = t_end if hit else t + hs
            if hit:
                return y, -comp
            k[0] = fun(t, y - comp)
            fac = min(max((max(err, 1e-10) ** expo) / err_old**beta / 0.9, 0.2), 10.0)
            h = h_step / fac
            if rejected:
                h = min(h, h_step)
            h = min(h, cfg.max_step)
            err_old = max(err, 1e-4)
            rejected = False
        else:
            h = h_step * 0.1 if not np.isfinite(err) else h_step / min(10.0, max(1.0, err**expo / 0.9))
            rejected = True


EXTENDED_SETTINGS = IntegratorSettings(rel_tol=1e-13, abs_tol=1e-13)


def extended_flow(model: Model, hi, lo, t0, t1, cfg: IntegratorSettings = EXTENDED_SETTINGS):
    """Flow a state given as a ``longdouble`` pair ``hi + lo``; returns the image pair.

    Near an orbit whose unstable multiplier is ~1e8, ``float64`` rounding alone
    puts a floor of ~1e-7 on ``|P(x) - x|``. The compensated pair lowers that
    floor to ~1e-12, which is what the fixed-point corrector needs.
    """
    fun = lambda t, y: vector_field(model, y, t)  # noqa: E731
    return _solve_compensated(fun, t0, hi, lo, t1, cfg)


def phase_to_time(model: Model, theta) -> float:
    """Time at which a periodic model reaches phase ``theta`` (``theta = omega t``).

    Autonomous models use ``omega = 1``.
    """
    return theta / getattr(model, "omega", 1.0)


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    model: Model

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "x", "y", "px", "py"])
            for t, s in zip(self.times, self.states):
                writer.writerow([repr(float(t))] + [repr(float(v)) for v in s])


@dataclass
class StmResult:
    final_state: np.ndarray
    stm: np.ndarray

    def to_json(self) -> str:
        return json.dumps(
            {
                "final_state": [float(v) for v in self.final_state],
                "stm": [float(v) for v in np.asarray(self.stm, dtype=float).ravel()],
            }
        )


def flow(model: Model, s0, t0, t1, cfg: IntegratorSettings = DEFAULT_SETTINGS, t_eval=None) -> Trajectory:
    """Propagate one state; returns the initial, requested and final samples."""
    s0 = np.asarray(s0)
    if not np.issubdtype(s0.dtype, np.floating):
        s0 = s0.astype(float)
    if s0.shape != (4,):
        raise ValueError("flow expects a single state of shape (4,)")
    if not np.all(np.isfinite(s0)):
        raise ValueError("initial state must be finite")
    fun = lambda t, y: vector_field(model, y, t)  # noqa: E731
    times, states, _ = solve(fun, t0, s0, t1, cfg, t_eval=t_eval)
    return Trajectory(np.array(times), np.array(states), model)


def flow_batch(model: Model, S0, t0, t1, cfg: IntegratorSettings = DEFAULT_SETTINGS, stop=None):
    """Propagate a batch ``(n, 4)`` with a shared step size.

    Returns ``(final_states, stopped)``; rows of members that stopped early are
    NaN in ``final_states`` and recorded in ``stopped`` instead.
    """
    S0 = np.asarray(S0, dtype=float)
    fun = lambda t, y: vector_field(model, y, t)  # noqa: E731
    times, states, stopped = solve(fun, t0, S0, t1, cfg, stop=stop)
    return states[-1], stopped


def _variational(model):
    def fun(t, z):
        s = z[:4]
        phi = z[4:].reshape(4, 4)
        f, jac = vector_field_and_jacobian(model, s, t)
        return np.concatenate([f, (jac @ phi).ravel()])

    return fun


def flow_with_stm(model: Model, s0, t0, t1, cfg: IntegratorSettings = DEFAULT_SETTINGS) -> StmResult:
    """Propagate a state together with its 4x4 state transition matrix."""
    s0 = np.asarray(s0)
    if not np.issubdtype(s0.dtype, np.floating):
        s0 = s0.astype(float)
    z0 = np.concatenate([s0, np.eye(4, dtype=s0.dtype).ravel()])
    _, states, _ = solve(_variational(model), t0, z0, t1, cfg)
    z = states[-1]
    return StmResult(z[:4], z[4:].reshape(4, 4))


def stroboscopic_map(model: Model, s0, theta0: float, n: int = 1, cfg: IntegratorSettings = DEFAULT_SETTINGS):
    """Apply the period map based at phase ``theta0`` ``n`` times (``n < 0`` flows backward)."""
    if not model.periodic:
        raise ValueError("stroboscopic maps need a time-periodic model")
    s0 = np.asarray(s0)
    if not np.issubdtype(s0.dtype, np.floating):
        s0 = s0.astype(float)
    if n == 0:
        return s0.copy()
    t0 = phase_to_time(model, theta0)
    fun = lambda t, y: vector_field(model, y, t)  # noqa: E731
    T = model.period
    step = 1 if n > 0 else -1
    s = s0
    for i in range(abs(n)):
        ta = t0 + step * i * T
        _, states, _ = solve(fun, ta, s, ta + step * T, cfg)
        s = states[-1]
    return s


def monodromy(orbit, cfg: IntegratorSettings = DEFAULT_SETTINGS, inverse: bool = False) -> np.ndarray:
    """Monodromy matrix of a periodic orbit at its own phase.

    With ``inverse=True`` the variational equations are run backward over one
    period, giving ``M^-1`` without inverting an ill-conditioned matrix.
    """
    model = orbit.model
    t0 = phase_to_time(model, orbit.theta0)
    t1 = t0 - orbit.period if inverse else t0 + orbit.period
    return flow_with_stm(model, np.asarray(orbit.x_bar, dtype=float), t0, t1, cfg).stm


def symplectic_defect(phi, J=None) -> float:
    """``||Phi^T J Phi - J||_F / ||Phi||_F^2``, the scaled symplecticity residual."""
    from .models import J4

    J = J4 if J is None else J
    phi = np.asarray(phi, dtype=float)
    return float(np.linalg.norm(phi.T @ J @ phi - J) / np.linalg.norm(phi) ** 2)
