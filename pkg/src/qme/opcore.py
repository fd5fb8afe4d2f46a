"""Dense Hermitian operator algebra in the energy eigenbasis.

Conventions used throughout the package:

* hbar = 1, a single energy unit.
* ``delta[n, m] = E_n - E_m`` for eigenbasis indices.
* The Bohr block ``A(w)`` collects the eigenbasis elements ``A[m, n]`` with
  ``E_n - E_m = w``, so ``A(w)`` lowers the energy by ``w``.
* Vectorization is column stacking: element ``(i, j)`` sits at ``j * d + i``,
  which gives ``vec(X rho Y) = kron(Y.T, X) @ vec(rho)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotPSDError, ValidationError

MAX_DIM = 256
HERMITIAN_RTOL = 1e-12


def _max_abs(m: np.ndarray) -> float:
    return float(np.max(np.abs(m))) if m.size else 0.0


def check_hermitian(m, rtol: float = HERMITIAN_RTOL, name: str = "operator") -> np.ndarray:
    """Return ``m`` as a complex square array, raising if it is not Hermitian."""
    arr = np.asarray(m, dtype=complex)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValidationError(f"{name} must be a square matrix, got shape {arr.shape}")
    if arr.shape[0] > MAX_DIM:
        raise ValidationError(f"{name} dimension {arr.shape[0]} exceeds {MAX_DIM}")
    scale = _max_abs(arr)
    dev = _max_abs(arr - arr.conj().T)
    if dev > rtol * max(scale, np.finfo(float).tiny):
        raise ValidationError(f"{name} is not Hermitian (deviation {dev:.3e})")
    return arr


@dataclass(frozen=True)
class HermitianOperator:
    matrix: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "matrix", check_hermitian(self.matrix))
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]


def _as_matrix(op) -> np.ndarray:
    if isinstance(op, HermitianOperator):
        return op.matrix
    return check_hermitian(op)


@dataclass(frozen=True)
class EigenBasis:
    """Ascending energies and the unitary whose columns are the eigenvectors."""

    energies: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def gaps(self) -> np.ndarray:
        """Raw Bohr gaps ``delta[n, m] = E_n - E_m``."""
        e = self.energies
        return e[:, None] - e[None, :]

    def to_eigen(self, op) -> np.ndarray:
        m = op.matrix if isinstance(op, HermitianOperator) else np.asarray(op, dtype=complex)
        return self.vectors.conj().T @ m @ self.vectors

    def from_eigen(self, m) -> np.ndarray:
        return self.vectors @ np.asarray(m) @ self.vectors.conj().T

    def default_bin_tol(self) -> float:
        spread = float(self.energies[-1] - self.energies[0]) if self.dim > 1 else 0.0
        return 1e-9 * (spread if spread > 0 else 1.0)


def eigh(h) -> EigenBasis:
    """Diagonalize a Hermitian operator with a reproducible phase convention.

    The largest-magnitude component of every eigenvector is made real and
    positive (first occurrence wins on ties).
    """
    m = _as_matrix(h)
    w, v = np.linalg.eigh(m)
    idx = np.argmax(np.abs(v), axis=0)
    pivots = v[idx, np.arange(v.shape[1])]
    v = v * (np.abs(pivots) / pivots)[None, :]
    w.setflags(write=False)
    v.setflags(write=False)
    return EigenBasis(energies=w, vectors=v)


def _cluster_abs_gaps(values: np.ndarray, tol: float) -> list[float]:
    """Chain-merge sorted non-negative values closer than ``tol``; return bin means."""
    vals = np.unique(values)
    bins: list[list[float]] = []
    for v in vals:
        if bins and v - bins[-1][-1] <= tol:
            bins[-1].append(float(v))
        else:
            bins.append([float(v)])
    reps = [float(np.mean(b)) for b in bins]
    # anything merged with zero is zero
    if bins and bins[0][0] <= tol:
        reps[0] = 0.0
    return reps


def binned_gaps(basis: EigenBasis, bin_tol: float | None = None) -> np.ndarray:
    """Bohr gaps ``E_n - E_m`` snapped to their bin representatives.

    Bins depend only on the spectrum, so every coupling operator decomposed
    over the same basis shares identical frequency values.
    """
    tol = basis.default_bin_tol() if bin_tol is None else float(bin_tol)
    raw = basis.gaps
    mag = np.abs(raw)
    reps = np.asarray(_cluster_abs_gaps(mag.ravel(), tol))
    # assign each |gap| to nearest representative (bins are separated by > tol)
    pos = np.abs(mag[..., None] - reps[None, None, :]).argmin(axis=-1)
    out = np.sign(raw) * reps[pos]
    out[reps[pos] == 0.0] = 0.0
    return out


@dataclass(frozen=True)
class BohrDecomposition:
    """Eigenbasis blocks ``A(w)`` of one coupling operator.

    ``blocks[i]`` is the ``d x d`` block at frequency ``freqs[i]``; empty
    blocks are not stored.
    """

    freqs: np.ndarray
    blocks: np.ndarray
    bin_tol: float
    operator: np.ndarray  # eigenbasis representation of A
    omega: np.ndarray = field(repr=False)  # omega[m, n] = binned E_n - E_m

    def block(self, w: float) -> np.ndarray:
        hit = np.nonzero(self.freqs == w)[0]
        if hit.size == 0:
            return np.zeros_like(self.operator)
        return self.blocks[hit[0]]

    def items(self):
        return zip(self.freqs, self.blocks)


def bohr_decompose(a, basis: EigenBasis, bin_tol: float | None = None) -> BohrDecomposition:
    m = _as_matrix(a)
    if bin_tol is not None and bin_tol < 0:
        raise ValidationError("bin_tol must be non-negative")
    tol = basis.default_bin_tol() if bin_tol is None else float(bin_tol)
    ae = basis.to_eigen(m)
    delta = binned_gaps(basis, tol)
    # element (m, n) belongs to w = E_n - E_m = delta[n, m]
    omega = delta.T
    thresh = 1e-14 * max(_max_abs(ae), np.finfo(float).tiny)
    freqs, blocks = [], []
    for w in np.unique(omega):
        mask = omega == w
        blk = np.where(mask, ae, 0.0)
        if _max_abs(blk) > thresh:
            freqs.append(float(w))
            blocks.append(blk)
    blocks_arr = np.array(blocks) if blocks else np.zeros((0,) + ae.shape, dtype=complex)
    return BohrDecomposition(
        freqs=np.asarray(freqs), blocks=blocks_arr, bin_tol=tol, operator=ae, omega=omega
    )


def is_degenerate(basis: EigenBasis, bin_tol: float | None = None) -> bool:
    """True when two distinct levels sit within ``bin_tol`` of each other."""
    tol = basis.default_bin_tol() if bin_tol is None else float(bin_tol)
    return basis.dim > 1 and bool(np.min(np.diff(basis.energies)) <= tol)


@dataclass(frozen=True)
class DensityMatrix:
    matrix: np.ndarray
    basis: str = "energy"

    def __post_init__(self):
        if self.basis not in ("energy", "computational"):
            raise ValidationError(f"unknown basis tag {self.basis!r}")
        m = np.asarray(self.matrix, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValidationError("density matrix must be square")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def populations(self) -> np.ndarray:
        return np.real(np.diag(self.matrix))

    def min_eigenvalue(self) -> float:
        h = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(h)[0])

    def validate(self, tol: float = 1e-12, positivity_tol: float | None = None) -> None:
        m = self.matrix
        if _max_abs(m - m.conj().T) > tol:
            raise ValidationError("density matrix is not Hermitian")
        if abs(np.trace(m) - 1.0) > tol:
            raise ValidationError(f"density matrix trace is {np.trace(m)}")
        if positivity_tol is not None and self.min_eigenvalue() < -positivity_tol:
            raise ValidationError("density matrix has negative eigenvalues")


def gibbs_state(basis: EigenBasis, beta: float) -> DensityMatrix:
    """Thermal state of the system Hamiltonian, diagonal in the energy basis."""
    if beta < 0:
        raise ValidationError("beta must be non-negative")
    # shift so the largest exponent is zero
    x = -beta * (basis.energies - basis.energies[0])
    p = np.exp(x)
    p /= p.sum()
    return DensityMatrix(np.diag(p).astype(complex), basis="energy")


def psd_sqrt(m, clamp_tol: float | None = None) -> np.ndarray:
    """Hermitian PSD square root of a Hermitian PSD matrix.

    Eigenvalues in ``[-clamp_tol, 0)`` are clamped to zero; anything more
    negative raises :class:`NotPSDError`.
    """
    arr = np.asarray(m, dtype=complex)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    scale = _max_abs(arr)
    tol = 1e-12 * scale if clamp_tol is None else float(clamp_tol)
    arr = check_hermitian(arr, rtol=1e-10, name="psd_sqrt input")
    w, v = np.linalg.eigh(arr)
    if w[0] < -tol:
        raise NotPSDError(w[0], tol)
    w = np.clip(w, 0.0, None)
    r = (v * np.sqrt(w)[None, :]) @ v.conj().T
    return 0.5 * (r + r.conj().T)


def vectorize(rho) -> np.ndarray:
    m = rho.matrix if isinstance(rho, DensityMatrix) else np.asarray(rho)
    return np.asarray(m, dtype=complex).reshape(-1, order="F")


def devectorize(vec) -> np.ndarray:
    v = np.asarray(vec, dtype=complex).ravel()
    d = int(round(np.sqrt(v.size)))
    if d * d != v.size:
        raise ValidationError(f"vector length {v.size} is not a perfect square")
    return v.reshape((d, d), order="F")


def spre(x: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> x @ rho``."""
    return np.kron(np.eye(x.shape[0]), x)


def spost(y: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> rho @ y``."""
    return np.kron(y.T, np.eye(y.shape[0]))


def sprepost(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Superoperator of ``rho -> x @ rho @ y``."""
    return np.kron(y.T, x)


def pauli() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    return sx, sy, sz


def site_operator(op: np.ndarray, site: int, n_sites: int) -> np.ndarray:
    """Embed a single-site operator at ``site`` (0-based, first tensor factor = site 0)."""
    if not 0 <= site < n_sites:
        raise ValidationError(f"site {site} out of range for {n_sites} sites")
    out = np.eye(1, dtype=complex)
    for i in range(n_sites):
        out = np.kron(out, op if i == site else np.eye(op.shape[0]))
    return out
