"""Shared fixtures: the refined Earth-Moon orbits and their reductions are
computed once per session."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from lagtransit.integrate import monodromy
from lagtransit.models import model_from_config
from lagtransit.porbit import REFERENCE_GUESSES, PeriodicOrbit, refine_fixed_point
from lagtransit.symmap import (
    EffectiveHamiltonian,
    MapEigenbasis,
    NormalForm,
    effective_hamiltonian,
    normal_form,
    symplectic_eigenbasis,
)

ACCEPTANCE_LINES: dict = {}


@dataclass
class Reduction:
    orbit: PeriodicOrbit
    mono: np.ndarray
    nf: NormalForm
    basis: MapEigenbasis
    eh: EffectiveHamiltonian


def _reduce(name: str) -> Reduction:
    model = model_from_config({"model": name})
    orbit = refine_fixed_point(model, REFERENCE_GUESSES[name])
    mono = monodromy(orbit)
    nf = normal_form(mono)
    basis = symplectic_eigenbasis(mono, nf, orbit_ref=orbit)
    return Reduction(orbit, mono, nf, basis, effective_hamiltonian(nf, orbit.period))


@pytest.fixture(scope="session")
def bcp() -> Reduction:
    return _reduce("bcp")


@pytest.fixture(scope="session")
def er3bp() -> Reduction:
    return _reduce("er3bp")


@pytest.fixture(scope="session")
def reductions(bcp, er3bp) -> dict:
    return {"bcp": bcp, "er3bp": er3bp}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
