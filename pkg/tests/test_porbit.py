import json
import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from lagtransit.integrate import flow, phase_to_time, stroboscopic_map
from lagtransit.lagrange import collinear_points, equilibrium_state
from lagtransit.models import Bcp, Cr3bp, Er3bp, model_from_config, vector_field
from lagtransit.porbit import (
    REFERENCE_GUESSES,
    ConvergenceError,
    continue_family,
    instantaneous_zero,
    mean_crossings,
    orbit_amplitude,
    orbit_path,
    refine_fixed_point,
    zero_path,
)

L1 = equilibrium_state(collinear_points(Bcp().mu).l1)


@pytest.mark.parametrize("name,tol", [("bcp", 1e-6), ("er3bp", 1e-5)])
def test_reference_orbits(reductions, name, tol):
    orbit = reductions[name].orbit
    assert orbit.residual < 1e-11
    assert np.abs(orbit.x_bar - np.array(REFERENCE_GUESSES[name])).max() < tol
    assert orbit.iterations <= 3


@pytest.mark.parametrize("name", ["bcp", "er3bp"])
def test_extended_residual_certifies_fixed_point(reductions, name):
    from lagtransit.integrate import EXTENDED_SETTINGS, extended_flow

    orbit = reductions[name].orbit
    hi, lo = orbit.x_bar_ext
    cfg = replace(EXTENDED_SETTINGS, max_step=orbit.period / 32)
    img_hi, img_lo = extended_flow(orbit.model, hi, lo, orbit.t0, orbit.t0 + orbit.period, cfg)
    r = (img_hi - hi) + (img_lo - lo)
    assert float(np.linalg.norm(r.astype(float))) < 1e-11


@pytest.mark.parametrize("name", ["bcp", "er3bp"])
def test_float_period_map_is_limited_by_sigma(reductions, name):
    # the float64 rounding of x_bar is amplified by sigma over one period
    r = reductions[name]
    d = np.linalg.norm(stroboscopic_map(r.orbit.model, r.orbit.x_bar, 0.0, 1) - r.orbit.x_bar)
    assert d < 1e4 * np.finfo(float).eps * r.nf.sigma


@pytest.mark.parametrize("name", ["bcp", "er3bp"])
def test_newton_is_locally_quadratic(reductions, name):
    orbit = reductions[name].orbit
    shooting = orbit.history[: orbit.iterations + 1]
    for a, b in zip(shooting, shooting[1:]):
        if a > 1e-10 and b > 0:
            assert b / a**2 < 1e6


@pytest.mark.parametrize("name,loops", [("bcp", 4), ("er3bp", 2)])
def test_loop_count(reductions, name, loops):
    orbit = reductions[name].orbit
    path = orbit_path(orbit, 400)
    assert mean_crossings(path) == loops
    assert len(path) == 400
    assert np.allclose(np.diff(path.times), orbit.period / 399, rtol=1e-9)
    # closure is limited by sigma times the float64 rounding of x_bar
    assert np.abs(path.states[-1] - path.states[0]).max() < 1e-4


@pytest.mark.parametrize("name", ["bcp", "er3bp"])
def test_phase_covariance(reductions, name):
    orbit = reductions[name].orbit
    model = orbit.model
    theta = math.pi / 2
    t1 = phase_to_time(model, theta)
    moved = flow(model, orbit.x_bar, orbit.t0, t1).final
    other = refine_fixed_point(model, moved, theta0=theta)
    assert other.residual < 1e-11
    assert np.abs(other.x_bar - moved).max() < 1e-8


def test_circular_limit_returns_equilibrium():
    model = Er3bp(e=0.0)
    orbit = refine_fixed_point(model, L1, tol=1e-12)
    assert orbit.residual < 1e-12
    assert np.abs(orbit.x_bar - L1).max() < 1e-13


def test_refine_errors():
    with pytest.raises(ValueError):
        refine_fixed_point(Cr3bp(), L1)
    with pytest.raises(ValueError):
        refine_fixed_point(Bcp(), [0.8, 0.0, 0.0])
    with pytest.raises(ValueError):
        refine_fixed_point(Bcp(), [np.nan, 0, 0, 0.8])
    with pytest.raises(ValueError):
        refine_fixed_point(Bcp(), L1, tol=0.0)
    off = np.array(REFERENCE_GUESSES["bcp"]) + [2e-3, 0, 0, 0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        with pytest.raises(ConvergenceError) as info:
            refine_fixed_point(Bcp(), off, max_iter=1)
    assert info.value.best is not None


def test_orbit_serialization(bcp):
    rec = json.loads(bcp.orbit.to_json())
    assert rec["theta0"] == 0.0 and len(rec["x_bar"]) == 4
    assert rec["period"] == pytest.approx(2 * math.pi / Bcp().omega_m0)


def test_short_continuation():
    e = Er3bp().e
    fam = continue_family(lambda eps: Er3bp(e=e * eps), L1, [0.0, 0.05, 0.1], parameter_name="eps_e")
    assert fam.complete and [s[0] for s in fam.samples] == [0.0, 0.05, 0.1]
    x1 = collinear_points(Er3bp().mu).l1
    amps = [orbit_amplitude(o, (x1, 0.0), 100) for _, o in fam.samples]
    assert amps[0] < 1e-10
    assert amps[0] < amps[1] < amps[2]
    lines = fam.to_jsonl().splitlines()
    assert len(lines) == 3 and json.loads(lines[1])["eps_e"] == 0.05


def test_continuation_partial_failure():
    e = Er3bp().e

    def factory(eps):
        if eps > 0.05:
            raise ArithmeticError("outside the tested range")
        return Er3bp(e=e * eps)

    fam = continue_family(factory, L1, [0.0, 0.05, 0.1])
    assert not fam.complete
    assert len(fam.samples) == 2
    assert fam.failure["eps"] == 0.1 and fam.failure["halvings"] == 6


def test_continuation_validation():
    with pytest.raises(ValueError):
        continue_family(lambda eps: Er3bp(e=eps), L1, [0.0, 0.1, 0.1])


def test_instantaneous_zero_path():
    m = Bcp()
    path = zero_path(m, L1, 50)
    for t, x in zip(path.times, path.states):
        assert np.abs(vector_field(m, x, t)).max() < 1e-12
    assert np.abs(path.states[-1] - path.states[0]).max() < 1e-12
    # the zero moves, unlike an equilibrium
    assert np.ptp(path.states[:, 0]) > 1e-6
    still = zero_path(model_from_config({"model": "er3bp", "e": 0.0}), L1, 10)
    assert np.abs(still.states - L1).max() < 1e-14
    with pytest.raises(ConvergenceError):
        instantaneous_zero(m, 0.0, [0.3, 0.3, 0.0, 0.0], max_iter=0)
