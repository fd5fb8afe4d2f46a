import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

import oracles
from qme.bath import SpectralDensity, half_fourier_Gamma, make_bath
from qme.errors import ValidationError
from qme.models import SpinBosonSpec, build_spin_boson
from qme.opcore import bohr_decompose, devectorize, eigh, gibbs_state, pauli, vectorize
from qme.superop import (
    Superoperator,
    assemble,
    build_family,
    build_free,
    build_redfield,
    build_secular,
    build_tle,
    build_ule,
    combine,
    kossakowski_matrix,
    r_tensor_to_superop,
    secular_lamb_hamiltonian,
    tle_parameters,
    tle_R_tensor,
    ule_lamb_operator,
)

sx, sy, sz = pauli()
ALL_PARTS = ("redfield", "secular", "ule", "tle")


def _trace_row(d):
    return vectorize(np.eye(d)).conj()


def _check_preservation(sop, rng, tol=1e-10):
    d = sop.hilbert_dim
    scale = max(1.0, np.max(np.abs(sop.matrix)))
    assert np.max(np.abs(_trace_row(d) @ sop.matrix)) <= tol * scale
    for _ in range(10):
        r = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        lhs = sop.apply(r).conj().T
        rhs = sop.apply(r.conj().T)
        assert np.max(np.abs(lhs - rhs)) <= tol * scale


def _parts(model, family):
    basis, bohr, bm = model
    return build_family(basis, bohr, bm, family)


@pytest.mark.parametrize("family", ALL_PARTS)
def test_preservation_spin_boson(spin_boson, family, rng):
    for p in _parts(spin_boson, family):
        _check_preservation(p, rng)
    _check_preservation(build_free(spin_boson.basis), rng)


@pytest.mark.parametrize("family", ALL_PARTS)
def test_preservation_chain(chain3, family, rng):
    for p in _parts(chain3, family):
        _check_preservation(p, rng)


@settings(max_examples=6, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_preservation_random_two_channel(seed):
    rng = np.random.default_rng(seed)
    h = oracles.random_hermitian(rng, 3)
    ops = [oracles.random_hermitian(rng, 3), oracles.random_hermitian(rng, 3)]
    basis = eigh(h)
    bohr = [bohr_decompose(a, basis) for a in ops]
    sds = [SpectralDensity("ohmic_debye", j0=0.5, omega_d=4.0),
           SpectralDensity("ohmic_gaussian", omega0_scale=3.0, cutoff=5.0)]
    bm = make_bath(0.8, sds, mixing=np.array([[1.0, 0.4], [0.1, 0.7]]))
    for fam in ("redfield", "secular", "ule"):
        for p in build_family(basis, bohr, bm, fam):
            _check_preservation(p, rng)
    for diss in (build_secular(basis, bohr, bm)[1], build_ule(basis, bohr, bm)[1]):
        k = kossakowski_matrix(diss)
        assert np.linalg.eigvalsh(k)[0] >= -1e-10 * np.max(np.abs(k))


def test_free_part(spin_boson, rng):
    basis = spin_boson.basis
    free = build_free(basis)
    for n in range(2):
        e = np.zeros((2, 2))
        e[n, n] = 1
        assert np.allclose(free.apply(e), 0)
    e = np.zeros((2, 2))
    e[1, 0] = 1.0  # |+><-| coherence oscillates at -i w0
    assert free.apply(e)[1, 0] == pytest.approx(-1j * 1.0)
    rho = oracles.random_density(rng, 2)
    out = devectorize(expm(free.matrix * 3.7) @ vectorize(rho))
    assert np.allclose(np.linalg.eigvalsh(out), np.linalg.eigvalsh(rho), atol=1e-12)


def test_redfield_gamma_part_kills_gibbs(spin_boson, chain3):
    for model in (spin_boson, chain3):
        basis, bohr, bm = model
        rs, rg = build_redfield(basis, bohr, bm)
        rho_g = gibbs_state(basis, bm.beta).matrix
        assert np.max(np.abs(rg.apply(rho_g))) <= 1e-9


def test_redfield_lamb_part_moves_gibbs(spin_boson):
    basis, bohr, bm = spin_boson
    rs, _ = build_redfield(basis, bohr, bm)
    assert np.max(np.abs(rs.apply(gibbs_state(basis, bm.beta).matrix))) > 1e-6


def test_redfield_against_time_domain_assembly(spin_boson):
    basis, bohr, bm = spin_boson
    rs, rg = build_redfield(basis, bohr, bm)
    total = rs.matrix + rg.matrix
    spec = SpinBosonSpec(omega0=1.0, beta=1.0)
    pairs = [(blk, oracles.debye_Gamma_time_domain(w, spec.beta, spec.j0, spec.omega_d))
             for w, blk in bohr[0].items()]
    a = bohr[0].operator
    ref = np.zeros_like(total)
    for col in range(4):
        e = devectorize(np.eye(4)[:, col])
        ref[:, col] = vectorize(oracles.redfield_apply_direct(e, a, pairs))
    assert np.max(np.abs(total - ref)) <= 1e-3 * np.max(np.abs(ref))


def test_secular_gibbs_stationary(spin_boson, chain3):
    for model in (spin_boson, chain3):
        basis, bohr, bm = model
        L = assemble(basis, bohr, bm, "secular", 0.3)
        assert np.max(np.abs(L.apply(gibbs_state(basis, bm.beta).matrix))) <= 1e-9


def test_secular_lamb_hamiltonian(chain3):
    basis, bohr, bm = chain3
    h = secular_lamb_hamiltonian(bohr, bm)
    hs = np.diag(basis.energies)
    assert np.max(np.abs(h - h.conj().T)) <= 1e-10
    assert np.max(np.abs(h @ hs - hs @ h)) <= 1e-10


def _pop_block(m, d):
    idx = [n * d + n for n in range(d)]
    return m[np.ix_(idx, idx)]


def test_secular_equals_redfield_population_block(chain3):
    basis, bohr, bm = chain3
    sec = sum(p.matrix for p in build_secular(basis, bohr, bm))
    red = sum(p.matrix for p in build_redfield(basis, bohr, bm))
    d = basis.dim
    assert np.allclose(_pop_block(sec, d), _pop_block(red, d), atol=1e-12)


def test_ule_moves_gibbs_but_keeps_diagonal(spin_boson):
    basis, bohr, bm = spin_boson
    lamb, diss = build_ule(basis, bohr, bm)
    rho_g = gibbs_state(basis, bm.beta).matrix
    out = (lamb.matrix + diss.matrix) @ vectorize(rho_g)
    assert np.max(np.abs(out)) > 1e-6
    dout = diss.apply(rho_g)
    assert np.max(np.abs(np.diag(dout))) <= 1e-9


def test_ule_lamb_operator_hermitian(spin_boson, chain3):
    for model in (spin_boson, chain3):
        lam = ule_lamb_operator(model.bohr, model.bath)
        assert np.max(np.abs(lam - lam.conj().T)) <= 1e-10


def test_ule_without_lamb(spin_boson):
    basis, bohr, bm = spin_boson
    lamb, diss = build_ule(basis, bohr, bm, include_lamb=False)
    assert lamb is None and diss.family == "ule_diss"


def test_kossakowski_psd_lindblad_forms(spin_boson, chain3):
    for model in (spin_boson, chain3):
        basis, bohr, bm = model
        for diss in (build_secular(basis, bohr, bm)[1], build_ule(basis, bohr, bm)[1]):
            k = kossakowski_matrix(diss)
            assert np.linalg.eigvalsh(k)[0] >= -1e-10 * np.max(np.abs(k))


def test_kossakowski_redfield_not_psd(spin_boson):
    basis, bohr, bm = spin_boson
    red = combine(build_free(basis), build_redfield(basis, bohr, bm), 1.0)
    k = kossakowski_matrix(red)
    assert np.linalg.eigvalsh(k)[0] < -1e-6


def test_tle_single_jump_rank_one(spin_boson):
    basis, bohr, bm = spin_boson
    _, diss, _ = build_tle(basis, bohr[0], bm)
    ev = np.linalg.eigvalsh(kossakowski_matrix(diss))
    assert ev[0] >= -1e-10 * ev[-1]
    assert np.sum(ev > 1e-10 * ev[-1]) == 1


def test_tle_r_tensor_matches_operator_form(spin_boson, chain3):
    for model in (spin_boson, chain3):
        basis, bohr, bm = model
        ls, diss, p = build_tle(basis, bohr[0], bm)
        r = tle_R_tensor(p)
        assert np.allclose(r_tensor_to_superop(r), ls.matrix + diss.matrix, atol=1e-12)
        col = np.einsum("nnkk->k", r)
        assert np.max(np.abs(col)) <= 1e-12 * max(1.0, np.max(np.abs(r)))


def test_tle_w_at_zero_phase(spin_boson):
    basis, bohr, bm = spin_boson
    p = tle_parameters(basis, bohr[0], bm)
    lp = p.lam * np.exp(-0.5j * p.phi)
    w = (lp + p.G / lp) / np.sqrt(2 * np.cos(p.phi))
    assert np.allclose(w, p.W)
    # specialization phi = 0
    w0 = (p.lam + p.G / p.lam) / np.sqrt(2)
    lp0 = p.lam
    assert np.allclose((lp0 + p.G / lp0) / np.sqrt(2 * np.cos(0.0)), w0)


def test_tle_parameters_formula(spin_boson):
    basis, bohr, bm = spin_boson
    p = tle_parameters(basis, bohr[0], bm)
    a = p.A
    assert np.sum(np.abs(a) ** 2) == pytest.approx(1.0, rel=1e-14)
    gap = basis.energies[:, None] - basis.energies[None, :]
    G = np.array([[half_fourier_Gamma(bm, -gap[n, m])[0, 0] for m in range(2)] for n in range(2)])
    assert np.allclose(G, p.G, rtol=1e-12)
    wgt = np.abs(a) ** 2
    g2 = np.sum(G.real**2 * wgt)
    h2 = np.sum(G.imag**2 * wgt)
    h1 = np.sum(G.imag * wgt)
    assert p.lam**4 == pytest.approx(np.sqrt(g2 + h2), rel=1e-12)
    assert np.sin(p.phi) == pytest.approx(h1 / np.sqrt(g2 + h2), rel=1e-12)


def test_tle_rejects_multichannel():
    basis = eigh(0.5 * sz)
    bohr = [bohr_decompose(sx, basis), bohr_decompose(sz, basis)]
    bm = make_bath(1.0, [SpectralDensity("ohmic_debye"), SpectralDensity("ohmic_debye")])
    with pytest.raises(ValidationError):
        build_family(basis, bohr, bm, "tle")


def test_tle_warns_on_rescaling(spin_boson):
    basis, bohr, bm = spin_boson
    with pytest.warns(UserWarning, match="rescaled"):
        tle_parameters(basis, bohr[0], bm)


def test_ule_matches_redfield_population_block_large_gap():
    # omega0 = 50 omega_d; beta chosen so the window covers the gap
    spec = SpinBosonSpec(omega0=50.0, beta=0.2, c=(1.0, 0.5, 0.3), omega_d=1.0)
    basis, bohr, bm = build_spin_boson(spec)
    # [Lambda, .] has no population-to-population block, so it is left out
    ule = build_ule(basis, bohr, bm, include_lamb=False)[1].matrix
    red = sum(p.matrix for p in build_redfield(basis, bohr, bm))
    a, b = _pop_block(ule, 2), _pop_block(red, 2)
    assert np.max(np.abs(a - b)) <= 1e-6 * np.max(np.abs(b))


def test_superoperator_validation():
    with pytest.raises(ValidationError):
        Superoperator(np.eye(3), "free")
    with pytest.raises(ValidationError):
        Superoperator(np.eye(4), "bogus")
    with pytest.raises(ValidationError):
        build_family(eigh(sz), [bohr_decompose(sx, eigh(sz))], make_bath(1.0, SpectralDensity("ohmic_debye")), "nope")


def test_channel_count_mismatch(spin_boson):
    basis, bohr, _ = spin_boson
    bm2 = make_bath(1.0, [SpectralDensity("ohmic_debye"), SpectralDensity("ohmic_debye")])
    with pytest.raises(ValidationError):
        build_redfield(basis, bohr, bm2)
