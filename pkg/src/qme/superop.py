"""Second-order generators of the Redfield, secular, ULE and TLE master equations.

All matrices act on column-stacked density matrices in the energy eigenbasis
and exclude the factor epsilon^2; :func:`combine` assembles
``L0 + eps^2 * sum(parts)``.  Kernels are the t -> infinity ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import bath as _bath
from .errors import ValidationError
from .opcore import (
    BohrDecomposition,
    EigenBasis,
    binned_gaps,
    bohr_decompose,
    devectorize,
    spost,
    spre,
    sprepost,
    vectorize,
)

FAMILIES = (
    "free",
    "redfield_S",
    "redfield_gamma",
    "secular_LS",
    "secular_diss",
    "ule_lamb",
    "ule_diss",
    "tle_LS",
    "tle_diss",
    "total",
)


@dataclass(frozen=True)
class Superoperator:
    matrix: np.ndarray
    family: str
    epsilon_convention: str = "matrix excludes eps^2; caller scales"

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValidationError(f"unknown superoperator family {self.family!r}")
        m = np.asarray(self.matrix, dtype=complex)
        d = int(round(np.sqrt(m.shape[0])))
        if m.ndim != 2 or m.shape[0] != m.shape[1] or d * d != m.shape[0]:
            raise ValidationError("superoperator must be d^2 x d^2")
        object.__setattr__(self, "matrix", m)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def hilbert_dim(self) -> int:
        return int(round(np.sqrt(self.dim)))

    def apply(self, rho) -> np.ndarray:
        return devectorize(self.matrix @ vectorize(rho))

    def __add__(self, other: "Superoperator") -> "Superoperator":
        return Superoperator(self.matrix + other.matrix, "total")


def combine(free: Superoperator, parts, epsilon: float) -> Superoperator:
    """``L0 + epsilon^2 * sum(parts)``."""
    m = free.matrix.copy()
    for p in parts:
        if p is not None:
            m = m + epsilon**2 * p.matrix
    return Superoperator(m, "total")


def _commutator(h: np.ndarray) -> np.ndarray:
    """Superoperator of ``-i [h, .]``."""
    return -1j * (spre(h) - spost(h))


def _dissipator(l: np.ndarray) -> np.ndarray:
    """Superoperator of ``l rho l^+ - {l^+ l, rho}/2``."""
    ld = l.conj().T
    ll = ld @ l
    return sprepost(l, ld) - 0.5 * (spre(ll) + spost(ll))


def build_free(basis: EigenBasis) -> Superoperator:
    d = basis.dim
    delta = basis.gaps
    return Superoperator(np.diag(-1j * vectorize(delta)), "free")


def _as_list(bohr) -> list[BohrDecomposition]:
    if isinstance(bohr, BohrDecomposition):
        return [bohr]
    return list(bohr)


def _check_channels(bohr, model) -> None:
    if len(bohr) != model.n_channels:
        raise ValidationError(
            f"{len(bohr)} coupling operators but bath has {model.n_channels} channels"
        )


def _all_freqs(bohr) -> np.ndarray:
    return np.unique(np.concatenate([b.freqs for b in bohr])) if bohr else np.zeros(0)


def _redfield_form(a_ops, x_ops) -> np.ndarray:
    """``-sum_a ([A_a, X_a rho] + h.c.)`` as a matrix."""
    d = a_ops[0].shape[0]
    out = np.zeros((d * d, d * d), dtype=complex)
    for a, x in zip(a_ops, x_ops):
        xd = x.conj().T
        out -= spre(a @ x) - sprepost(x, a) + spost(xd @ a) - sprepost(a, xd)
    return out


def build_redfield(basis: EigenBasis, bohr, model) -> tuple[Superoperator, Superoperator]:
    """Lamb-shift and dissipative parts of the Redfield generator.

    Returns ``(redfield_S, redfield_gamma)``; their sum is
    ``-sum_ab sum_w (Gamma_ab(w) [A_a, A_b(w) rho] + h.c.)`` with
    ``Gamma = gamma/2 + i S``.
    """
    bohr = _as_list(bohr)
    _check_channels(bohr, model)
    freqs = _all_freqs(bohr)
    gam = {w: g for w, g in zip(freqs, model.gamma_raw(freqs))}
    lam = {w: s for w, s in zip(freqs, _bath.lamb_shift_S(model, freqs))} if freqs.size else {}
    n = len(bohr)
    a_ops = [b.operator for b in bohr]
    x_gamma = [np.zeros_like(a_ops[0]) for _ in range(n)]
    x_s = [np.zeros_like(a_ops[0]) for _ in range(n)]
    for beta_idx, b in enumerate(bohr):
        for w, blk in b.items():
            for a_idx in range(n):
                x_gamma[a_idx] += 0.5 * gam[w][a_idx, beta_idx] * blk
                x_s[a_idx] += 1j * lam[w][a_idx, beta_idx] * blk
    return (
        Superoperator(_redfield_form(a_ops, x_s), "redfield_S"),
        Superoperator(_redfield_form(a_ops, x_gamma), "redfield_gamma"),
    )


def secular_lamb_hamiltonian(bohr, model) -> np.ndarray:
    bohr = _as_list(bohr)
    freqs = _all_freqs(bohr)
    lam = {w: s for w, s in zip(freqs, _bath.lamb_shift_S(model, freqs))} if freqs.size else {}
    d = bohr[0].operator.shape[0]
    h = np.zeros((d, d), dtype=complex)
    for ai, ba in enumerate(bohr):
        for bi, bb in enumerate(bohr):
            for w in freqs:
                h += lam[w][ai, bi] * ba.block(w).conj().T @ bb.block(w)
    return h


def build_secular(basis: EigenBasis, bohr, model) -> tuple[Superoperator, Superoperator]:
    """Secular (ω = ω′) restriction: ``-i[H_LS, .]`` plus a Lindblad dissipator."""
    bohr = _as_list(bohr)
    _check_channels(bohr, model)
    freqs = _all_freqs(bohr)
    h_ls = secular_lamb_hamiltonian(bohr, model)
    d = basis.dim
    diss = np.zeros((d * d, d * d), dtype=complex)
    for w, gm in zip(freqs, model.gamma_raw(freqs)):
        for ai, ba in enumerate(bohr):
            for bi, bb in enumerate(bohr):
                c = gm[ai, bi]
                if c == 0:
                    continue
                ab = bb.block(w)
                aa_dag = ba.block(w).conj().T
                prod = aa_dag @ ab
                diss += c * (sprepost(ab, aa_dag) - 0.5 * (spre(prod) + spost(prod)))
    return Superoperator(_commutator(h_ls), "secular_LS"), Superoperator(diss, "secular_diss")


def ule_jump_operators(bohr, model) -> list[np.ndarray]:
    """``L_a = sum_b sum_w g_ab(w) A_b(w)``."""
    bohr = _as_list(bohr)
    freqs = _all_freqs(bohr)
    gk = {w: g for w, g in zip(freqs, model.g_raw(freqs))}
    d = bohr[0].operator.shape[0]
    jumps = []
    for ai in range(model.n_channels):
        l = np.zeros((d, d), dtype=complex)
        for bi, bb in enumerate(bohr):
            for w, blk in bb.items():
                l += gk[w][ai, bi] * blk
        jumps.append(l)
    return jumps


def ule_lamb_operator(bohr, model) -> np.ndarray:
    """``Lambda = sum_ab sum_{w,w'} f_ab(w, w') A_a(w) A_b(w')``."""
    bohr = _as_list(bohr)
    d = bohr[0].operator.shape[0]
    lam = np.zeros((d, d), dtype=complex)
    f_cache: dict = {}
    for ai, ba in enumerate(bohr):
        for bi, bb in enumerate(bohr):
            for w1, b1 in ba.items():
                for w2, b2 in bb.items():
                    prod = b1 @ b2
                    if not np.any(prod):
                        continue
                    key = (w1, w2)
                    if key not in f_cache:
                        f_cache[key] = _bath.f_function(model, w1, w2)
                    lam += f_cache[key][ai, bi] * prod
    return lam


def build_ule(basis: EigenBasis, bohr, model, include_lamb: bool = True):
    """ULE generator parts ``(ule_lamb, ule_diss)``; ``ule_lamb`` is None when omitted."""
    bohr = _as_list(bohr)
    _check_channels(bohr, model)
    d = basis.dim
    diss = np.zeros((d * d, d * d), dtype=complex)
    for l in ule_jump_operators(bohr, model):
        diss += _dissipator(l)
    lamb = Superoperator(_commutator(ule_lamb_operator(bohr, model)), "ule_lamb") if include_lamb else None
    return lamb, Superoperator(diss, "ule_diss")


@dataclass(frozen=True)
class TLEParams:
    lam: float
    phi: float
    mean_g2: float
    mean_h2: float
    mean_h: float
    scale: float  # factor applied to A to enforce sum |A_nm|^2 = 1
    G: np.ndarray = field(repr=False)
    W: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)  # normalized coupling in the eigenbasis


def normalize_tle_coupling(a_eig: np.ndarray) -> tuple[np.ndarray, float]:
    norm2 = float(np.sum(np.abs(a_eig) ** 2))
    if norm2 == 0:
        raise ValidationError("coupling operator is zero")
    scale = 1.0 / np.sqrt(norm2)
    if abs(scale - 1.0) > 1e-12:
        warnings.warn(
            f"TLE coupling rescaled by {scale:.6g} to satisfy sum |A_nm|^2 = 1; "
            "fold the factor into epsilon",
            stacklevel=3,
        )
    return a_eig * scale, scale


def tle_parameters(basis: EigenBasis, a, model, bin_tol: float | None = None) -> TLEParams:
    """Optimized ``lambda, phi`` and the kernels ``G_nm = Gamma(-Delta_nm)``, ``W_nm``."""
    if model.n_channels != 1:
        raise ValidationError("TLE supports a single coupling channel")
    if isinstance(a, BohrDecomposition):
        a_eig = a.operator
    else:
        a_eig = basis.to_eigen(a)
    a_eig, scale = normalize_tle_coupling(a_eig)
    delta = binned_gaps(basis, bin_tol)
    uniq, inv = np.unique(-delta, return_inverse=True)
    gam_half = _bath.half_fourier_Gamma(model, uniq)[:, 0, 0]
    G = gam_half[inv].reshape(delta.shape)
    weight = np.abs(a_eig) ** 2
    g, h = G.real, G.imag
    mean_g2 = float(np.sum(g**2 * weight))
    mean_h2 = float(np.sum(h**2 * weight))
    mean_h = float(np.sum(h * weight))
    root = np.sqrt(mean_g2 + mean_h2)
    lam = root**0.25
    sin_phi = mean_h / root
    phi = float(np.arcsin(np.clip(sin_phi, -1.0, 1.0)))
    if np.cos(phi) <= 1e-12:
        raise ValidationError("TLE optimization degenerate (cos phi <= 0)")
    lam_plus = lam * np.exp(-0.5j * phi)
    W = (lam_plus + G / lam_plus) / np.sqrt(2.0 * np.cos(phi))
    return TLEParams(lam=float(lam), phi=phi, mean_g2=mean_g2, mean_h2=mean_h2,
                     mean_h=mean_h, scale=scale, G=G, W=W, A=a_eig)


def build_tle(basis: EigenBasis, a, model, bin_tol: float | None = None):
    """TLE generator parts ``(tle_LS, tle_diss, params)``.

    ``H_LS = (A AA - AA^+ A)/(2i)`` with ``AA_nm = G_nm A_nm`` and a single
    jump operator ``L_nm = W_nm A_nm``.
    """
    p = tle_parameters(basis, a, model, bin_tol)
    aa = p.G * p.A
    h_ls = (p.A @ aa - aa.conj().T @ p.A) / 2j
    h_ls = 0.5 * (h_ls + h_ls.conj().T)
    jump = p.W * p.A
    return (Superoperator(_commutator(h_ls), "tle_LS"),
            Superoperator(_dissipator(jump), "tle_diss"), p)


def tle_R_tensor(p: TLEParams) -> np.ndarray:
    """Element-wise TLE generator ``R[n, m, k, l]`` (coefficient of rho_kl in d rho_nm/dt)."""
    G, W, A = p.G, p.W, p.A
    d = A.shape[0]
    eye = np.eye(d)
    # first line: delta_lm sum_j [G_jk - G_jn^* + W_jn^* W_jk] A_nj A_jk
    t1 = (np.einsum("jk,nj,jk->nk", G, A, A)
          - np.einsum("jn,nj,jk->nk", G.conj(), A, A)
          + np.einsum("jn,jk,nj,jk->nk", W.conj(), W, A, A))
    # second line: delta_kn sum_j [G_jl^* - G_jm + W_jl^* W_jm] A_lj A_jm
    t2 = (np.einsum("jl,lj,jm->lm", G.conj(), A, A)
          - np.einsum("jm,lj,jm->lm", G, A, A)
          + np.einsum("jl,jm,lj,jm->lm", W.conj(), W, A, A))
    r = -0.5 * np.einsum("nk,lm->nmkl", t1, eye)
    r += -0.5 * np.einsum("lm,kn->nmkl", t2, eye)
    r += np.einsum("nk,ml,nk,lm->nmkl", W, W.conj(), A, A)
    return r


def r_tensor_to_superop(r: np.ndarray) -> np.ndarray:
    d = r.shape[0]
    # row index m*d + n (column stacking of (n, m)), column index l*d + k
    return r.transpose(1, 0, 3, 2).reshape(d * d, d * d)


def kossakowski_matrix(sop) -> np.ndarray:
    """Choi matrix projected off the maximally entangled direction.

    For ``L = -i[H, .] + sum_ij K_ij (F_i . F_j^+ - {F_j^+ F_i, .}/2)`` this is the
    Kossakowski matrix expressed over traceless operators; it is PSD exactly
    when the generated dynamics is completely positive.
    """
    m = sop.matrix if isinstance(sop, Superoperator) else np.asarray(sop)
    d = int(round(np.sqrt(m.shape[0])))
    # choi[(i,a),(j,b)] = L(E_ij)[a, b]
    choi = np.zeros((d * d, d * d), dtype=complex)
    for i in range(d):
        for j in range(d):
            img = devectorize(m[:, j * d + i])
            choi[i * d:(i + 1) * d, j * d:(j + 1) * d] = img
    omega = np.eye(d).reshape(-1) / np.sqrt(d)
    q = np.eye(d * d) - np.outer(omega, omega)
    k = q @ choi @ q
    return 0.5 * (k + k.conj().T)


QME_FAMILIES = ("redfield", "secular", "ule", "tle")


def build_family(basis: EigenBasis, bohr, model, family: str, include_lamb: bool = True):
    """Second-order parts of the named master equation, as a list of Superoperators."""
    bohr = _as_list(bohr)
    if family == "redfield":
        return list(build_redfield(basis, bohr, model))
    if family == "secular":
        return list(build_secular(basis, bohr, model))
    if family == "ule":
        lamb, diss = build_ule(basis, bohr, model, include_lamb=include_lamb)
        return [diss] if lamb is None else [lamb, diss]
    if family == "tle":
        if len(bohr) != 1:
            raise ValidationError("TLE supports a single coupling channel")
        ls, diss, _ = build_tle(basis, bohr[0], model)
        return [ls, diss]
    raise ValidationError(f"unknown master equation {family!r}; expected one of {QME_FAMILIES}")


def assemble(basis: EigenBasis, bohr, model, family: str, epsilon: float,
             include_lamb: bool = True) -> Superoperator:
    """``L0 + eps^2 L2`` for the named family."""
    return combine(build_free(basis), build_family(basis, bohr, model, family, include_lamb), epsilon)
