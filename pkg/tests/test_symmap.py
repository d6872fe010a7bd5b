import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagtransit.integrate import symplectic_defect
from lagtransit.models import J4
from lagtransit.symmap import (
    J_LOCAL,
    EffectiveHamiltonian,
    NormalForm,
    SpectrumError,
    effective_hamiltonian,
    lambda_matrix,
    normal_form,
    symplectic_eigenbasis,
    verify_proposition_1,
)

sigmas = st.floats(1.01, 1e9)
angles = st.floats(0.05, math.pi - 0.05)
periods = st.floats(0.5, 20.0)


def _random_symplectic(rng, scale=0.3):
    # exp of a random Hamiltonian matrix J S, S symmetric
    from scipy.linalg import expm

    a = rng.normal(size=(4, 4))
    return expm(J4 @ (scale * (a + a.T)))


def test_lambda_is_its_own_normal_form():
    lam = lambda_matrix(2.0, 1.0)
    nf = normal_form(lam)
    assert nf.sigma == pytest.approx(2.0, rel=1e-14)
    assert nf.psi == pytest.approx(1.0, abs=1e-14)
    assert nf.krein == 1
    basis = symplectic_eigenbasis(lam, nf)
    assert np.allclose(basis.c, np.eye(4), atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(sigma=sigmas, rot=st.floats(0.05, 2 * math.pi - 0.05))
def test_lambda_matrix_structure(sigma, rot):
    lam = lambda_matrix(sigma, rot)
    assert lam.T @ J_LOCAL @ lam == pytest.approx(J_LOCAL, abs=1e-12 * sigma)
    # saddle and center blocks never mix
    assert np.all(lam[:2, 2:] == 0) and np.all(lam[2:, :2] == 0)
    if abs(rot - math.pi) > 1e-3:
        nf = normal_form(lam)
        assert nf.sigma == pytest.approx(sigma, rel=1e-10)
        assert nf.rotation == pytest.approx(rot, abs=1e-8)
        assert 0 < nf.psi < math.pi


def test_negative_krein_orientation():
    # rotation 2 pi - psi: the multiplier with positive imaginary part has Krein sign -1
    lam = lambda_matrix(3.0, 2 * math.pi - 0.7)
    nf = normal_form(lam)
    assert nf.psi == pytest.approx(0.7, abs=1e-14)
    assert nf.krein == -1
    assert nf.rotation == pytest.approx(2 * math.pi - 0.7, abs=1e-14)
    assert np.allclose(nf.lambda_matrix, lam, atol=1e-14)
    basis = symplectic_eigenbasis(lam, nf)
    assert np.allclose(basis.c, np.eye(4), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(sigma=st.floats(1.5, 1e6), psi=angles, seed=st.integers(0, 2**32 - 1))
def test_eigenbasis_of_conjugated_lambda(sigma, psi, seed):
    # M = S Lambda S^-1 with S symplectic (J4): the basis must undo the conjugation
    rng = np.random.default_rng(seed)
    s = _random_symplectic(rng) @ np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1.0]]).T
    # s maps local coordinates to physical ones: s^T J4 s = J_LOCAL
    s = s if np.allclose(s.T @ J4 @ s, J_LOCAL) else _to_local_symplectic(s)
    m = s @ lambda_matrix(sigma, psi) @ np.linalg.inv(s)
    nf = normal_form(m)
    assert nf.sigma == pytest.approx(sigma, rel=1e-6)
    assert nf.psi == pytest.approx(psi, abs=1e-6)
    c = symplectic_eigenbasis(m, nf).c
    assert np.abs(c.T @ J4 @ c - J_LOCAL).max() < 1e-8
    sim = np.linalg.solve(c, m @ c)
    assert np.linalg.norm(sim - nf.lambda_matrix) / np.linalg.norm(nf.lambda_matrix) < 1e-6


def _to_local_symplectic(s):
    # reorder physical (x, y, px, py) pairs to local (q1, p1, q2, p2) pairs
    perm = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1.0]])
    return s @ perm


def test_spectrum_errors():
    with pytest.raises(SpectrumError):
        # fully elliptic
        r = lambda_matrix(1.0, 0.5)
        r[:2, :2] = [[math.cos(0.3), math.sin(0.3)], [-math.sin(0.3), math.cos(0.3)]]
        normal_form(r)
    with pytest.raises(SpectrumError):
        # fully hyperbolic
        normal_form(np.diag([5.0, 0.2, 3.0, 1 / 3.0]))
    with pytest.raises(SpectrumError):
        # center multipliers at +1
        normal_form(lambda_matrix(4.0, 0.0))
    with pytest.raises(ValueError):
        normal_form(np.eye(3))


def test_normal_form_validation():
    with pytest.raises(ValueError):
        NormalForm(sigma=-1.0, psi=1.0)
    with pytest.raises(ValueError):
        NormalForm(sigma=2.0, psi=7.0)
    with pytest.raises(ValueError):
        NormalForm(sigma=2.0, psi=1.0, krein=0)


def test_effective_hamiltonian_closed_form():
    for T in (1.0, 2.5, 6.79):
        eh = effective_hamiltonian(NormalForm(math.exp(T), 1.0), T)
        assert eh.lambda_tilde == pytest.approx(1.0, rel=1e-15)
        assert eh.nu_tilde == pytest.approx(1.0 / T, rel=1e-15)
    with pytest.raises(ValueError):
        effective_hamiltonian(NormalForm(0.5, 1.0), 1.0)
    with pytest.raises(ValueError):
        effective_hamiltonian(NormalForm(2.0, 1.0), 0.0)


def test_effective_rates_from_published_multipliers():
    t_bcp = 2 * math.pi / 0.925195985520347
    bcp = effective_hamiltonian(NormalForm(4.2874e8, 3.0273), t_bcp)
    assert bcp.lambda_tilde == pytest.approx(math.log(4.2874e8) / t_bcp, rel=1e-15)
    assert bcp.lambda_tilde == pytest.approx(2.93, abs=5e-3)
    er = effective_hamiltonian(NormalForm(8.3659e7, 1.9863), 2 * math.pi)
    assert er.lambda_tilde == pytest.approx(2.90, abs=5e-3)


@settings(max_examples=40, deadline=None)
@given(sigma=sigmas, psi=st.floats(0.0, 2 * math.pi - 1e-6), T=periods, krein=st.sampled_from([1, -1]))
def test_effective_flow_matches_normal_form(sigma, psi, T, krein):
    nf = NormalForm(sigma, psi, krein)
    assert verify_proposition_1(effective_hamiltonian(nf, T), nf) < 1e-12


def test_effective_flow_zero_rotation():
    nf = NormalForm(10.0, 0.0)
    assert np.array_equal(nf.lambda_matrix[2:, 2:], np.eye(2))
    assert verify_proposition_1(effective_hamiltonian(nf, 3.0), nf) < 1e-14


@settings(max_examples=40, deadline=None)
@given(
    sigma=st.floats(1.5, 1e8),
    psi=angles,
    z=st.lists(st.floats(-1e-3, 1e-3), min_size=4, max_size=4),
    k=st.integers(-3, 3),
)
def test_h2_invariant_under_lambda(sigma, psi, z, k):
    nf = NormalForm(sigma, psi)
    eh = effective_hamiltonian(nf, 2.0)
    z = np.array(z)
    img = np.linalg.matrix_power(nf.lambda_matrix, k) @ z if k >= 0 else np.linalg.matrix_power(
        np.linalg.inv(nf.lambda_matrix), -k
    ) @ z
    h0 = eh.energy(z)
    scale = eh.lambda_tilde * abs(z[0] * z[1]) + eh.nu_tilde * (z[2] ** 2 + z[3] ** 2) + 1e-300
    assert abs(eh.energy(img) - h0) <= 1e-12 * scale
    # q1 p1 preserved by the saddle block
    assert img[0] * img[1] == pytest.approx(z[0] * z[1], rel=1e-12, abs=1e-300)


def test_energy_batch_shape():
    eh = EffectiveHamiltonian(2.0, 0.5, 1.0)
    z = np.array([[1.0, 2.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]])
    assert np.allclose(eh.energy(z), [4.0, 1.0])
    assert eh.a_matrix.shape == (4, 4)


@pytest.mark.parametrize("name", ["bcp", "er3bp"])
def test_pipeline_reduction(reductions, name):
    r = reductions[name]
    assert symplectic_defect(r.mono) < 1e-9
    c = r.basis.c
    assert np.abs(c.T @ J4 @ c - J_LOCAL).max() < 1e-8
    sim = np.linalg.solve(c, r.mono @ c)
    assert np.linalg.norm(sim - r.nf.lambda_matrix) / np.linalg.norm(r.nf.lambda_matrix) < 1e-6
    # sign conventions
    assert c[0, 0] > 0 and c[3, 2] == 0.0
    assert verify_proposition_1(r.eh, r.nf) < 1e-9
    # the dominant multiplier; the stable one is below the eigensolver's resolution
    vals = np.linalg.eigvals(r.mono)
    assert np.abs(vals).max() == pytest.approx(r.nf.sigma, rel=1e-6)
    m_sym_inv = -J4 @ r.mono.T @ J4
    assert np.abs(np.linalg.eigvals(m_sym_inv)).max() == pytest.approx(r.nf.sigma, rel=1e-6)
    assert abs(np.linalg.det(r.mono) - 1) / r.nf.sigma**2 < 1e-6


@pytest.mark.parametrize("name", ["bcp", "er3bp"])
def test_backward_inverse_option(reductions, name):
    from lagtransit.integrate import monodromy

    r = reductions[name]
    m_inv = monodromy(r.orbit, inverse=True)
    c = symplectic_eigenbasis(r.mono, r.nf, m_inv=m_inv).c
    assert np.abs(c.T @ J4 @ c - J_LOCAL).max() < 1e-8
    # the unstable column does not depend on the inverse
    assert np.allclose(c[:, 0], r.basis.c[:, 0], atol=1e-12)


def test_to_local_round_trip(bcp):
    z = np.array([[1e-4, -2e-4, 3e-4, 0.0], [0.0, 1e-5, -1e-5, 2e-5]])
    dx = bcp.basis.to_displacement(z)
    assert np.allclose(bcp.basis.to_local(dx), z, rtol=0, atol=1e-15)
