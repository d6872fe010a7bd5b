"""Lagrange periodic orbits as fixed points of the stroboscopic map.

A Lagrange periodic orbit has the period of the perturbation, so it is a fixed
point ``x_bar = P(x_bar)`` of the period map. Refinement runs in two stages:

1. Multiple shooting over ``segments`` equal sub-intervals of the period.
   With an unstable multiplier of order 1e8, a plain single-shooting Newton
   step from a 15-digit guess already overshoots out of the basin, while each
   segment only amplifies errors by ``sigma**(1/segments)``.
2. A single-shooting polish of ``G(x) = P(x) - x`` with ``DG = M - I`` in
   compensated extended precision. This is the only way to certify
   ``|P(x_bar) - x_bar|`` at the 1e-11 level; ``float64`` stalls near 1e-7.
"""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import replace
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .integrate import (
    DEFAULT_SETTINGS,
    EXTENDED_SETTINGS,
    IntegrationError,
    IntegratorSettings,
    Trajectory,
    extended_flow,
    flow,
    flow_with_stm,
    phase_to_time,
)
from .models import Model, PhaseState, SingularityError, jacobian, vector_field

__all__ = [
    "REFERENCE_GUESSES",
    "ConvergenceError",
    "PeriodicOrbit",
    "ContinuationFamily",
    "refine_fixed_point",
    "continue_family",
    "orbit_path",
    "mean_crossings",
    "orbit_amplitude",
    "instantaneous_zero",
    "zero_path",
]

log = logging.getLogger(__name__)

# 15-digit L1 orbit states at phase 0 for the Earth-Moon models
REFERENCE_GUESSES = {
    "bcp": (0.837595408485656, 0.0, 0.0, 0.827678389393936),
    "er3bp": (0.792718947200736, 0.0, 0.000001145970495, 0.886145419995798),
}


class ConvergenceError(ArithmeticError):
    """The corrector did not reach its tolerance, or ``M - I`` is singular."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


@dataclass
class PeriodicOrbit:
    """Fixed point of the period map based at phase ``theta0``.

    ``x_bar`` is the ``float64`` rounding of the refined point; ``x_bar_ext``
    keeps the extended-precision pair that the residual was certified on.
    """

    model: Model
    theta0: float
    x_bar: np.ndarray
    period: float
    residual: float
    iterations: int = 0
    monodromy: Optional[np.ndarray] = None
    history: list = field(default_factory=list)
    x_bar_ext: Optional[tuple] = None
    nodes: Optional[np.ndarray] = None

    @property
    def t0(self) -> float:
        return phase_to_time(self.model, self.theta0)

    @property
    def state(self) -> PhaseState:
        return PhaseState.from_array(self.x_bar)

    def to_dict(self) -> dict:
        return {
            "x_bar": [float(v) for v in self.x_bar],
            "theta0": float(self.theta0),
            "period": float(self.period),
            "residual": float(self.residual),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass
class ContinuationFamily:
    parameter_name: str
    samples: list  # (eps, PeriodicOrbit), eps increasing
    failure: Optional[dict] = None

    @property
    def complete(self) -> bool:
        return self.failure is None

    def to_jsonl(self) -> str:
        lines = []
        for eps, orbit in self.samples:
            rec = {self.parameter_name: float(eps)}
            rec.update(orbit.to_dict())
            lines.append(json.dumps(rec))
        return "\n".join(lines) + ("\n" if lines else "")


def _max_defect(model, nodes, times, cfg):
    n = len(nodes)
    worst = 0.0
    for k in range(n):
        try:
            end = flow(model, nodes[k], times[k], times[k + 1], cfg).final
        except (SingularityError, IntegrationError):
            return math.inf
        worst = max(worst, float(np.abs(end - nodes[(k + 1) % n]).max()))
    return worst


def _seed_nodes(model, guess, times, cfg, nodes=None):
    # forward from the guess for the first half, backward from the guess
    # (placed at t0 + T) for the second; each arc then spans half a period.
    # Near an equilibrium the half-period arcs amplify the offset, so the
    # constant seed is kept when its defect is smaller.
    n = len(times) - 1
    candidates = [np.tile(np.asarray(guess, dtype=float), (n, 1))]
    if nodes is not None and np.shape(nodes) == (n, 4):
        candidates.append(np.asarray(nodes, dtype=float))
    try:
        candidates.append(_flow_seed(model, guess, times, cfg))
    except (SingularityError, IntegrationError):
        pass
    return min(candidates, key=lambda c: _max_defect(model, c, times, cfg))


def _flow_seed(model, guess, times, cfg):
    n = len(times) - 1
    nodes = np.empty((n, 4))
    nodes[0] = guess
    half = n // 2
    for k in range(1, half + 1):
        nodes[k] = flow(model, nodes[k - 1], times[k - 1], times[k], cfg).final
    back = np.asarray(guess, dtype=float)
    for k in range(n - 1, half, -1):
        back = flow(model, back, times[k + 1], times[k], cfg).final
        nodes[k] = back
    return nodes


def _multiple_shooting(model, guess, t0, cfg, segments, max_iter, defect_tol, seed_nodes=None):
    T = model.period
    times = t0 + T * np.arange(segments + 1) / segments
    nodes = _seed_nodes(model, guess, times, cfg, seed_nodes)
    history = []
    for it in range(max_iter + 1):
        defects = np.empty(4 * segments)
        jac = np.zeros((4 * segments, 4 * segments))
        stms = []
        for k in range(segments):
            res = flow_with_stm(model, nodes[k], times[k], times[k + 1], cfg)
            nxt = (k + 1) % segments
            defects[4 * k : 4 * k + 4] = res.final_state - nodes[nxt]
            jac[4 * k : 4 * k + 4, 4 * k : 4 * k + 4] = res.stm
            jac[4 * k : 4 * k + 4, 4 * nxt : 4 * nxt + 4] -= np.eye(4)
            stms.append(res.stm)
        worst = float(np.abs(defects).max())
        history.append(worst)
        log.debug("multiple shooting iteration %d: max defect %.3e", it, worst)
        if not math.isfinite(worst) or (it > 0 and worst > 1e3 * max(history[0], 1e-6)):
            raise ConvergenceError(f"multiple shooting diverged (defect {worst:.3e})")
        if worst < defect_tol or it == max_iter:
            break
        try:
            step = np.linalg.solve(jac, defects)
        except np.linalg.LinAlgError as exc:
            raise ConvergenceError("singular shooting system: M - I is not invertible") from exc
        nodes = nodes - step.reshape(segments, 4)
    mono = np.eye(4)
    for stm in stms:
        mono = stm @ mono
    return nodes, mono, history, it, worst < defect_tol


def refine_fixed_point(
    model: Model,
    guess,
    theta0: float = 0.0,
    tol: float = 1e-11,
    max_iter: int = 12,
    cfg: IntegratorSettings = DEFAULT_SETTINGS,
    segments: int = 8,
    polish_iter: int = 8,
    seed_nodes=None,
) -> PeriodicOrbit:
    """Refine ``guess`` to a fixed point of the period map at phase ``theta0``.

    Parameters
    ----------
    model : Model
        A time-periodic model (bicircular or elliptic).
    guess : array_like, shape (4,)
        Initial state, inside the Newton basin.
    theta0 : float
        Phase of the section; the map starts at ``t0 = theta0 / omega``.
    tol : float
        Target for ``|P(x_bar) - x_bar|`` (2-norm).
    max_iter : int
        Newton iterations allowed in the multiple-shooting stage.
    segments : int
        Number of shooting arcs per period.
    polish_iter : int
        Extended-precision single-shooting iterations.
    seed_nodes : array_like, shape (segments, 4), optional
        Shooting nodes of a nearby orbit, tried as a seed alongside ``guess``.

    Returns
    -------
    PeriodicOrbit

    Raises
    ------
    ConvergenceError
        On divergence, a singular ``M - I``, or a residual that stays above
        ``tol``. The best iterate found is attached as ``exc.best``.
    """
    if not model.periodic:
        raise ValueError("fixed points of the period map need a time-periodic model")
    guess = np.asarray(guess, dtype=float)
    if guess.shape != (4,) or not np.all(np.isfinite(guess)):
        raise ValueError("guess must be a finite state of shape (4,)")
    if not (tol > 0 and max_iter >= 1 and segments >= 2):
        raise ValueError("tol must be positive, max_iter >= 1, segments >= 2")

    t0 = phase_to_time(model, theta0)
    T = model.period
    nodes, mono, history, n_iter, ok = _multiple_shooting(
        model, guess, t0, cfg, segments, max_iter, defect_tol=1e-13, seed_nodes=seed_nodes
    )
    x0 = nodes[0]
    if len(history) > 1 and history[1] > history[0]:
        warnings.warn(
            f"first Newton step increased the defect ({history[0]:.2e} -> {history[1]:.2e}); "
            "the guess may lie outside the Newton basin",
            RuntimeWarning,
            stacklevel=2,
        )

    shifted = mono - np.eye(4)
    s_min = np.linalg.svd(shifted, compute_uv=False)[-1]
    if s_min < 1e-10:
        raise ConvergenceError(
            f"M - I is numerically singular (smallest singular value {s_min:.2e}); "
            "the guess is near a resonance"
        )
    inv_shifted = np.linalg.inv(shifted)

    # bounded steps: near an equilibrium the error estimate alone lets the
    # step grow past the scale on which small offsets are amplified
    ext_cfg = replace(EXTENDED_SETTINGS, max_step=T / 32)
    hi = x0.astype(np.longdouble)
    lo = np.zeros(4, dtype=np.longdouble)
    best = None
    for k in range(polish_iter):
        img_hi, img_lo = extended_flow(model, hi, lo, t0, t0 + T, ext_cfg)
        r = (img_hi - hi) + (img_lo - lo)
        res = float(np.linalg.norm(r.astype(float)))
        history.append(res)
        log.debug("polish iteration %d: residual %.3e", k, res)
        if best is None or res < best[0]:
            best = (res, hi.copy(), lo.copy())
        if res < tol:
            break
        d = (inv_shifted @ r.astype(float)).astype(np.longdouble)
        # two-sum of hi and -d keeps the bits that hi cannot hold
        s = hi - d
        bb = s - hi
        err = (hi - (s - bb)) + (-d - bb)
        lo = lo + err
        hi = s + lo
        lo = lo - (hi - s)

    res, hi, lo = best
    orbit = PeriodicOrbit(
        model=model,
        theta0=float(theta0),
        x_bar=(hi + lo).astype(float),
        period=T,
        residual=res,
        iterations=n_iter,
        monodromy=mono,
        history=history,
        x_bar_ext=(hi, lo),
        nodes=nodes,
    )
    if not ok or res >= tol:
        raise ConvergenceError(
            f"fixed point not certified: residual {res:.3e} (tol {tol:.1e})", best=orbit
        )
    return orbit


def continue_family(
    model_factory: Callable[[float], Model],
    guess0,
    eps_schedule: Sequence[float],
    tol: float = 1e-11,
    parameter_name: str = "eps",
    max_halvings: int = 6,
    **refine_kw,
) -> ContinuationFamily:
    """Natural-parameter continuation along ``eps_schedule``.

    Each converged orbit (``x_bar`` and its shooting nodes) seeds the next value. A failed step is retried
    from the last success with the increment halved, up to ``max_halvings``
    times; the intermediate orbits only serve as seeds. On final failure the
    partial family is returned with a failure report instead of raising.
    """
    eps_schedule = [float(e) for e in eps_schedule]
    if any(b <= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps_schedule must be strictly increasing")
    samples: list = []
    seed = (np.asarray(guess0, dtype=float), None)
    eps_prev = None
    for eps in eps_schedule:
        target = eps
        cur_eps, cur_seed = eps_prev, seed
        halvings = 0
        while True:
            try_eps = target if cur_eps is None else cur_eps + (target - cur_eps) / 2**halvings
            try:
                orbit = refine_fixed_point(
                    model_factory(try_eps), cur_seed[0], tol=tol, seed_nodes=cur_seed[1], **refine_kw
                )
            except (ConvergenceError, ArithmeticError) as exc:
                halvings += 1
                log.info("continuation step to %g failed (%s); halving", try_eps, exc)
                if cur_eps is None or halvings > max_halvings:
                    return ContinuationFamily(
                        parameter_name,
                        samples,
                        {"eps": target, "attempted": try_eps, "reason": str(exc), "halvings": halvings - 1},
                    )
                continue
            if try_eps == target:
                break
            # intermediate success: advance the base point, retry the target
            cur_eps, cur_seed = try_eps, (orbit.x_bar, orbit.nodes)
            halvings = max(halvings - 1, 0)
        samples.append((eps, orbit))
        seed, eps_prev = (orbit.x_bar, orbit.nodes), eps
    return ContinuationFamily(parameter_name, samples)


def orbit_path(orbit: PeriodicOrbit, n_samples: int = 400, cfg: IntegratorSettings = DEFAULT_SETTINGS) -> Trajectory:
    """One period of the orbit sampled uniformly in time (both end points included)."""
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    t0 = orbit.t0
    t_eval = t0 + orbit.period * np.arange(n_samples) / (n_samples - 1)
    traj = flow(orbit.model, orbit.x_bar, t0, t0 + orbit.period, cfg, t_eval=t_eval[1:-1])
    return traj


def mean_crossings(traj: Trajectory, component: int = 0) -> int:
    """Sign changes of ``component - mean`` around a closed path.

    Two per loop: a doubly-looping path gives 4, a single loop gives 2.
    """
    v = traj.states[:-1, component]
    d = v - v.mean()
    s = np.sign(d)
    s = s[s != 0]
    return int(np.count_nonzero(s != np.roll(s, 1)))


def orbit_amplitude(orbit: PeriodicOrbit, center, n_samples: int = 400) -> float:
    """Largest position-space distance of the orbit from ``center`` over a period."""
    traj = orbit_path(orbit, n_samples)
    cx, cy = center
    return float(np.hypot(traj.states[:, 0] - cx, traj.states[:, 1] - cy).max())


def instantaneous_zero(model: Model, t: float, guess, tol: float = 1e-14, max_iter: int = 50) -> np.ndarray:
    """Zero of the frozen-time vector field ``F(., t)`` by Newton's method.

    For a perturbed model this point is not a trajectory: it moves with ``t``
    while the flow started from it drifts away.
    """
    x = np.asarray(guess, dtype=float).copy()
    for _ in range(max_iter):
        f = vector_field(model, x, t)
        if np.linalg.norm(f) < tol:
            return x
        x = x - np.linalg.solve(jacobian(model, x, t), f)
    if np.linalg.norm(vector_field(model, x, t)) < 1e3 * tol:
        return x
    raise ConvergenceError(f"no instantaneous zero found at t={t:.6g}")


def zero_path(model: Model, guess, n_samples: int = 200, t0: float = 0.0) -> Trajectory:
    """Instantaneous zeros over one period, each seeding the next."""
    period = model.period if model.periodic else 2 * math.pi
    times = t0 + period * np.arange(n_samples) / (n_samples - 1)
    pts = []
    x = np.asarray(guess, dtype=float)
    for t in times:
        x = instantaneous_zero(model, t, x)
        pts.append(x)
    return Trajectory(times, np.array(pts), model)
