import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_bohr, random_hermitian
from qme.errors import NotPSDError, ValidationError
from qme.models import spin_chain_hamiltonian
from qme.opcore import (
    DensityMatrix,
    HermitianOperator,
    bohr_decompose,
    devectorize,
    eigh,
    gibbs_state,
    pauli,
    psd_sqrt,
    site_operator,
    sprepost,
    vectorize,
)

sx, sy, sz = pauli()
seeds = st.integers(min_value=0, max_value=2**31 - 1)


def test_hermitian_operator_rejects_non_hermitian():
    with pytest.raises(ValidationError):
        HermitianOperator(np.array([[0, 1], [0, 0]]))


def test_eigh_pauli_z():
    assert np.allclose(eigh(sz).energies, [-1, 1])
    assert np.allclose(eigh(0.5 * 2.0 * sz).energies, [-1, 1])


def test_eigh_phase_convention(rng):
    b = eigh(random_hermitian(rng, 5))
    v = b.vectors
    piv = v[np.argmax(np.abs(v), axis=0), np.arange(5)]
    assert np.allclose(piv.imag, 0) and np.all(piv.real > 0)


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(2, 7))
def test_eigh_reconstruction(seed, d):
    h = random_hermitian(np.random.default_rng(seed), d)
    b = eigh(h)
    assert np.all(np.diff(b.energies) >= 0)
    assert np.allclose(b.vectors.conj().T @ b.vectors, np.eye(d), atol=1e-10)
    rec = b.vectors @ np.diag(b.energies) @ b.vectors.conj().T
    assert np.max(np.abs(rec - h)) <= 1e-10 * np.max(np.abs(h))


def test_bohr_two_level_sigma_x():
    b = eigh(0.5 * 1.3 * sz)
    bd = bohr_decompose(sx, b)
    assert np.allclose(bd.freqs, [-1.3, 1.3])
    # index 0 is the lower level |->; A(+w0) lowers: |-><+|
    expect = np.zeros((2, 2))
    expect[0, 1] = 1.0
    assert np.allclose(bd.block(1.3), expect)


def test_bohr_commuting():
    b = eigh(0.5 * sz)
    bd = bohr_decompose(sz, b)
    assert np.allclose(bd.freqs, [0.0])
    assert np.allclose(bd.block(0.0), b.to_eigen(sz))


def test_bohr_matches_brute_force_chain2():
    h = spin_chain_hamiltonian(2, 8.0, 1.0)
    a = site_operator(sx, 0, 2)
    b = eigh(h)
    bd = bohr_decompose(a, b)
    ref = brute_force_bohr(b.to_eigen(a), b.energies, bd.bin_tol)
    assert len(ref) == len(bd.freqs)
    for w, blk in ref.items():
        hit = np.argmin(np.abs(bd.freqs - w))
        assert abs(bd.freqs[hit] - w) <= bd.bin_tol
        assert np.allclose(bd.blocks[hit], blk, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(seeds, st.integers(2, 6))
def test_bohr_invariants(seed, d):
    rng = np.random.default_rng(seed)
    h = random_hermitian(rng, d)
    a = random_hermitian(rng, d)
    b = eigh(h)
    bd = bohr_decompose(a, b)
    assert np.allclose(sum(bd.blocks), bd.operator, atol=1e-12)
    for w, blk in bd.items():
        assert np.allclose(bd.block(-w), blk.conj().T, atol=1e-12)
        for t in (0.1, 1.0):
            u = np.diag(np.exp(1j * b.energies * t))
            lhs = u @ blk @ u.conj().T
            assert np.max(np.abs(lhs - np.exp(-1j * w * t) * blk)) <= 1e-9
        rho_g = gibbs_state(b, 0.7).matrix
        assert np.allclose(rho_g @ blk, np.exp(0.7 * w) * blk @ rho_g, atol=1e-10)


def test_bohr_merges_within_tolerance():
    b = eigh(np.diag([0.0, 1.0, 2.0 + 1e-12]))
    bd = bohr_decompose(np.ones((3, 3)) - np.eye(3), b, bin_tol=1e-9)
    assert np.allclose(bd.freqs, [-2, -1, 1, 2])


def test_bohr_rejects_negative_tol():
    with pytest.raises(ValidationError):
        bohr_decompose(sx, eigh(sz), bin_tol=-1.0)


def test_gibbs_infinite_temperature(rng):
    b = eigh(random_hermitian(rng, 4))
    assert np.allclose(gibbs_state(b, 0.0).matrix, np.eye(4) / 4)


def test_gibbs_two_level():
    w0, beta = 1.7, 0.8
    p = gibbs_state(eigh(0.5 * w0 * sz), beta).populations
    z = np.exp(-beta * w0 / 2) + np.exp(beta * w0 / 2)
    assert np.allclose(p, [np.exp(beta * w0 / 2) / z, np.exp(-beta * w0 / 2) / z], rtol=1e-14)


@settings(max_examples=20, deadline=None)
@given(seeds, st.floats(0.0, 50.0))
def test_gibbs_trace_one(seed, beta):
    b = eigh(random_hermitian(np.random.default_rng(seed), 5, scale=10.0))
    assert abs(np.trace(gibbs_state(b, beta).matrix) - 1) < 1e-12


def test_gibbs_no_overflow():
    b = eigh(np.diag([0.0, 1e4]))
    p = gibbs_state(b, 10.0).populations
    assert np.all(np.isfinite(p)) and p[0] == pytest.approx(1.0)


def test_psd_sqrt_examples():
    assert np.allclose(psd_sqrt(np.eye(3)), np.eye(3))
    assert np.allclose(psd_sqrt(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 4))
def test_psd_sqrt_random(seed, d):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    m = m @ m.conj().T
    r = psd_sqrt(m)
    scale = np.max(np.abs(m))
    assert np.max(np.abs(r @ r - m)) <= 1e-10 * scale
    assert np.max(np.abs(r @ m - m @ r)) <= 1e-10 * scale
    assert np.linalg.eigvalsh(r)[0] >= -1e-12 * scale


def test_psd_sqrt_clamps_and_rejects():
    r = psd_sqrt(np.diag([1.0, -1e-14]))
    assert np.allclose(r, np.diag([1.0, 0.0]))
    with pytest.raises(NotPSDError) as exc:
        psd_sqrt(np.diag([1.0, -0.5]))
    assert exc.value.eigenvalue == pytest.approx(-0.5)


def test_vectorize_convention():
    v = vectorize(np.array([[1, 2], [3, 4]]))
    assert np.allclose(v, [1, 3, 2, 4])


def test_devectorize_rejects_bad_length():
    with pytest.raises(ValidationError):
        devectorize(np.ones(5))


@settings(max_examples=30, deadline=None)
@given(seeds, st.integers(1, 5))
def test_vectorize_roundtrip_and_product(seed, d):
    rng = np.random.default_rng(seed)
    rho, x, y = (rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)) for _ in range(3))
    assert np.array_equal(devectorize(vectorize(rho)), rho)
    assert np.allclose(vectorize(x @ rho @ y), sprepost(x, y) @ vectorize(rho), atol=1e-12)


def test_density_matrix_validation():
    DensityMatrix(np.eye(2) / 2).validate(positivity_tol=1e-12)
    with pytest.raises(ValidationError):
        DensityMatrix(np.eye(2)).validate()
    with pytest.raises(ValidationError):
        DensityMatrix(np.eye(2) / 2, basis="other")


def test_site_operator_order():
    op = site_operator(sz, 0, 2)
    assert np.allclose(op, np.kron(sz, np.eye(2)))
    with pytest.raises(ValidationError):
        site_operator(sz, 2, 2)
