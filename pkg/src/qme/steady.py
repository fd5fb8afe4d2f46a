"""Steady states: direct null space, perturbative expansions, MFG, comparisons.

Perturbative results are stored as ``rho0 + eps^2 * rho2`` in the energy
eigenbasis.  Populations at second order use the closed analytic-continuation
expressions in terms of S and S' rather than a numerical limit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.sparse.csgraph import connected_components

from . import bath as _bath
from .errors import (
    ConvergenceError,
    DegenerateSpectrumError,
    NonUniqueSteadyStateError,
    ValidationError,
)
from .opcore import (
    BohrDecomposition,
    DensityMatrix,
    EigenBasis,
    binned_gaps,
    devectorize,
    gibbs_state,
    is_degenerate,
    vectorize,
)
from .superop import (
    Superoperator,
    _as_list,
    _check_channels,
    tle_parameters,
    tle_R_tensor,
    ule_jump_operators,
    ule_lamb_operator,
)

PROVENANCES = ("redfield", "mfg", "ule", "secular", "tle")


@dataclass(frozen=True)
class PerturbativeState:
    """``rho = rho0 + eps^2 rho2`` in the energy eigenbasis."""

    rho0: DensityMatrix
    rho2: np.ndarray
    provenance: str
    normalized: bool = True
    populations: bool = True  # False when the diagonal of rho2 was not computed
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        object.__setattr__(self, "rho2", np.asarray(self.rho2, dtype=complex))

    def at(self, epsilon: float) -> DensityMatrix:
        return DensityMatrix(self.rho0.matrix + epsilon**2 * self.rho2)


@dataclass(frozen=True)
class SteadyState(DensityMatrix):
    eigenvalue: complex = 0.0
    residual: float = 0.0


def _norm_max(m) -> float:
    return float(np.max(np.abs(m))) if np.size(m) else 0.0


def null_space_steady(L, refine_tol: float = 1e-9, unique_rtol: float = 1e-10) -> SteadyState:
    """Eigenvector of ``L`` for the eigenvalue closest to zero, as a density matrix."""
    m = L.matrix if isinstance(L, Superoperator) else np.asarray(L, dtype=complex)
    scale = max(_norm_max(m), np.finfo(float).tiny)
    w, v = sla.eig(m)
    mods = np.abs(w)
    order = np.lexsort((np.abs(w.imag), mods))
    i0 = order[0]
    if len(w) > 1 and mods[order[1]] - mods[i0] <= unique_rtol * scale and mods[order[1]] <= 1e-6 * scale:
        raise NonUniqueSteadyStateError(
            f"two eigenvalues near zero: {w[i0]:.3e}, {w[order[1]]:.3e}"
        )
    vec = v[:, i0]

    def finish(x):
        r = devectorize(x)
        tr = np.trace(r)
        if abs(tr) < 1e-300:
            raise ConvergenceError("null vector has zero trace")
        r = r / tr
        return 0.5 * (r + r.conj().T)

    rho = finish(vec)
    res = _norm_max(m @ vectorize(rho))
    if res > refine_tol:
        # shift-invert iterations around the selected eigenvalue
        shift = w[i0] + 1e-12 * scale
        lu = sla.lu_factor(m - shift * np.eye(m.shape[0]))
        x = vectorize(rho)
        for _ in range(5):
            x = sla.lu_solve(lu, x)
            x /= np.linalg.norm(x)
            cand = finish(x)
            cres = _norm_max(m @ vectorize(cand))
            if cres < res:
                rho, res = cand, cres
            if res <= refine_tol:
                break
    return SteadyState(rho, basis="energy", eigenvalue=complex(w[i0]), residual=res)


# perturbative routes


def _require_nondegenerate(basis: EigenBasis, bohr) -> float:
    tol = bohr[0].bin_tol if bohr else basis.default_bin_tol()
    if is_degenerate(basis, tol):
        raise DegenerateSpectrumError(
            "spectrum has (near-)degenerate levels; perturbative formulas divide by Bohr gaps"
        )
    return tol


def _normalized(rho0: np.ndarray, rho2: np.ndarray, bar_pops: np.ndarray) -> np.ndarray:
    p0 = np.real(np.diag(rho0))
    out = rho2.copy()
    np.fill_diagonal(out, bar_pops - p0 * np.sum(bar_pops))
    return out


def _hermitize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.conj().T)


class _KernelTable:
    """S, S' evaluated once per distinct binned Bohr gap."""

    def __init__(self, model, delta: np.ndarray, derivative: bool = False):
        self.values, inv = np.unique(delta, return_inverse=True)
        self.inv = inv.reshape(delta.shape)
        self.S = _bath.lamb_shift_S(model, self.values)
        self.Sp = None
        if derivative:
            nz = self.values != 0.0
            sp = np.zeros_like(self.S)
            if np.any(nz):
                sp[nz] = _bath.lamb_shift_S_prime(model, self.values[nz])
            self.Sp = sp

    def on(self, table: np.ndarray) -> np.ndarray:
        # (d, d, nch, nch) array indexed like delta
        return table[self.inv]


def redfield_perturbative(basis: EigenBasis, bohr, model) -> PerturbativeState:
    """Second-order Redfield steady state with analytically continued populations."""
    bohr = _as_list(bohr)
    _check_channels(bohr, model)
    tol = _require_nondegenerate(basis, bohr)
    d = basis.dim
    delta = binned_gaps(basis, tol)  # delta[n, m] = E_n - E_m
    rho0 = gibbs_state(basis, model.beta)
    p = rho0.populations
    tab = _KernelTable(model, delta, derivative=True)
    S = tab.on(tab.S)  # S[n, j, a, b] = S_ab(delta_nj)
    Sp = tab.on(tab.Sp)
    A = np.array([b.operator for b in bohr])  # A[a, n, m]
    beta = model.beta

    # coherences: sum_{ab,j} [{S_ba(D_jn) - S_ba(D_jm)} p_j + S_ab(D_nj) p_n - S_ab(D_mj) p_m] A_a[n,j] A_b[j,m]
    t1 = np.einsum("jnba,j,anj,bjm->nm", S, p, A, A)
    t2 = np.einsum("jmba,j,anj,bjm->nm", S, p, A, A)
    t3 = np.einsum("njab,n,anj,bjm->nm", S, p, A, A)
    t4 = np.einsum("mjab,m,anj,bjm->nm", S, p, A, A)
    num = t1 - t2 + t3 - t4
    rho2 = np.zeros((d, d), dtype=complex)
    off = ~np.eye(d, dtype=bool)
    rho2[off] = num[off] / delta[off]

    # populations: sum_{am,j} [-S'_ma(D_jn) p_j + S'_am(D_nj) p_n - beta S_am(D_nj) p_n] A_a[n,j] A_m[j,n]
    bar = np.zeros(d)
    for n in range(d):
        acc = 0.0 + 0.0j
        for j in range(d):
            w = np.einsum("a,m->am", A[:, n, j], A[:, j, n])
            acc += np.sum(-beta * S[n, j] * w) * p[n]
            if j == n:
                # derivative terms cancel identically at zero gap
                continue
            acc += np.sum(-Sp[j, n].T * w) * p[j] + np.sum(Sp[n, j] * w) * p[n]
        bar[n] = acc.real
    rho2 = _normalized(rho0.matrix, rho2, bar)
    return PerturbativeState(rho0, _hermitize(rho2), "redfield", meta={"bar_populations": bar})


def secular_perturbative(basis: EigenBasis, bohr, model) -> PerturbativeState:
    """The secular Lindblad equation is stationary at the Gibbs state to all orders."""
    rho0 = gibbs_state(basis, model.beta)
    return PerturbativeState(rho0, np.zeros((basis.dim, basis.dim), dtype=complex), "secular")


def ule_perturbative(basis: EigenBasis, bohr, model, include_lamb: bool = True) -> PerturbativeState:
    bohr = _as_list(bohr)
    _check_channels(bohr, model)
    tol = _require_nondegenerate(basis, bohr)
    d = basis.dim
    delta = binned_gaps(basis, tol)
    rho0 = gibbs_state(basis, model.beta)
    p = rho0.populations
    num = np.zeros((d, d), dtype=complex)
    if include_lamb:
        lam = ule_lamb_operator(bohr, model)
        num += -1j * lam * (p[None, :] - p[:, None])
    for jump in ule_jump_operators(bohr, model):
        # L rho L^+ - (L^+L rho + rho L^+L)/2 at rho = diag(p)
        ll = jump.conj().T @ jump
        num += (jump * p[None, :]) @ jump.conj().T - 0.5 * ll * (p[None, :] + p[:, None])
    rho2 = np.zeros((d, d), dtype=complex)
    off = ~np.eye(d, dtype=bool)
    rho2[off] = num[off] / (1j * delta[off])
    if include_lamb:
        bar = -model.beta * np.real(np.diag(lam)) * p
    else:
        bar = np.zeros(d)
    rho2 = _normalized(rho0.matrix, rho2, bar)
    return PerturbativeState(rho0, _hermitize(rho2), "ule",
                             meta={"include_lamb": include_lamb, "bar_populations": bar})


# mean force Gibbs


def _mfg_finish(basis: EigenBasis, beta: float, D: np.ndarray, route: str) -> PerturbativeState:
    D = _hermitize(D)
    boltz = np.exp(-beta * (basis.energies - basis.energies[0]))
    Z = boltz.sum()
    rho2 = D / Z - np.trace(D).real / Z**2 * np.diag(boltz)
    return PerturbativeState(gibbs_state(basis, beta), _hermitize(rho2), "mfg", meta={"route": route})


def _mfg_contour(basis: EigenBasis, bohr, model, tol: float) -> np.ndarray:
    d = basis.dim
    beta = model.beta
    delta = binned_gaps(basis, tol)
    e = basis.energies - basis.energies[0]
    boltz = np.exp(-beta * e)
    tab = _KernelTable(model, delta, derivative=True)
    S = tab.on(tab.S)  # S[n, k] = S(delta_nk)
    Sp = tab.on(tab.Sp)
    St = np.swapaxes(S, 2, 3)  # S_ga(.)
    Spt = np.swapaxes(Sp, 2, 3)
    A = np.array([b.operator for b in bohr])
    # B[n, k] = e^{-beta E_n} I_ag(delta_nk), I(D) = -S_ag(D) - e^{beta D} S_ga(-D)
    B = -boltz[:, None, None, None] * S - boltz[None, :, None, None] * np.swapaxes(St, 0, 1)
    # K[n, k] = e^{-beta E_n} J_ag(delta_nk), J(D) = S'_ag(D) - beta S_ag(D) - e^{beta D} S'_ga(-D)
    K = (boltz[:, None, None, None] * (Sp - beta * S)
         - boltz[None, :, None, None] * np.swapaxes(Spt, 0, 1))
    D = np.zeros((d, d), dtype=complex)
    for n in range(d):
        for m in range(d):
            if n == m:
                val = np.einsum("ak,gk,kag->", A[:, n, :], A[:, :, n], K[n])
            else:
                val = (np.einsum("ak,gk,kag->", A[:, n, :], A[:, :, m], B[m])
                       - np.einsum("ak,gk,kag->", A[:, n, :], A[:, :, m], B[n])) / delta[n, m]
            D[n, m] = val
    return D


def _gl(n: int, a: float, b: float):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (b + a), 0.5 * (b - a) * w


def _mfg_integral(basis: EigenBasis, bohr, model, nodes: int) -> np.ndarray:
    """2-D imaginary-time quadrature of D in ``x = l1 - l2``, ``y = (l1 + l2)/2``."""
    beta = model.beta
    e = basis.energies - basis.energies[0]
    A = np.array([b.operator for b in bohr])
    # x = beta (3u^2 - 2u^3) clusters nodes at both ends, where C(-ix) is singular
    u, wu = _gl(nodes, 0.0, 1.0)
    x = beta * (3 * u**2 - 2 * u**3)
    wx = wu * beta * 6 * u * (1 - u)
    C = _bath.imag_time_corr(model, x)  # (nx, a, g)
    t, wt = np.polynomial.legendre.leggauss(nodes)
    d = basis.dim
    D = np.zeros((d, d), dtype=complex)
    for xi, wxi, ci in zip(x, wx, C):
        lo, hi = 0.5 * xi, beta - 0.5 * xi
        y = 0.5 * (hi - lo) * t + 0.5 * (hi + lo)
        wy = 0.5 * (hi - lo) * wt
        l1 = y + 0.5 * xi
        l2 = y - 0.5 * xi
        # exponent -beta E_n + l1 (E_n - E_k) + l2 (E_k - E_m)
        ex = (-beta * e[None, :, None, None]
              + l1[:, None, None, None] * (e[None, :, None, None] - e[None, None, :, None])
              + l2[:, None, None, None] * (e[None, None, :, None] - e[None, None, None, :]))
        wgt = np.einsum("y,ynkm->nkm", wy, np.exp(ex))
        D += wxi * np.einsum("nkm,ank,gkm,ag->nm", wgt, A, A, ci)
    return D


def mfg_second_order(basis: EigenBasis, bohr, model, route: str = "contour",
                     nodes: int | None = None) -> PerturbativeState:
    """Second-order expansion of the mean force Gibbs state."""
    bohr = _as_list(bohr)
    _check_channels(bohr, model)
    if route == "contour":
        tol = _require_nondegenerate(basis, bohr)
        D = _mfg_contour(basis, bohr, model, tol)
    elif route == "integral":
        n = model.quad.imag_nodes if nodes is None else int(nodes)
        D = _mfg_integral(basis, bohr, model, n)
    else:
        raise ValidationError(f"unknown MFG route {route!r}")
    return _mfg_finish(basis, model.beta, D, route)


# truncated Lindblad equation


def _tle_populations(rates: np.ndarray) -> np.ndarray:
    """Trace-one kernel of the rate matrix with ``rates[n, k]`` the k -> n rate."""
    d = rates.shape[0]
    m = rates - np.diag(rates.sum(axis=0))
    m = m.copy()
    m[-1, :] = 1.0
    rhs = np.zeros(d)
    rhs[-1] = 1.0
    lu = sla.lu_factor(m)
    return sla.lu_solve(lu, rhs)


def tle_leading_order(W: np.ndarray, A: np.ndarray, rtol: float = 1e-14) -> np.ndarray:
    weight = np.abs(A) ** 2
    adj = weight > rtol * max(float(weight.max()), np.finfo(float).tiny)
    np.fill_diagonal(adj, False)
    ncomp, _ = connected_components(adj.astype(int), directed=False)
    if ncomp > 1:
        raise NonUniqueSteadyStateError(
            f"non-unique leading order: coupling graph has {ncomp} components"
        )
    rates = np.abs(W) ** 2 * weight
    np.fill_diagonal(rates, 0.0)
    return _tle_populations(rates)


def tle_steady(basis: EigenBasis, a, model, bin_tol: float | None = None) -> PerturbativeState:
    """Leading-order TLE populations and second-order coherences.

    The second-order populations are not computed (``populations=False``).
    """
    p = tle_parameters(basis, a, model, bin_tol)
    p0 = tle_leading_order(p.W, p.A)
    d = basis.dim
    tol = basis.default_bin_tol() if bin_tol is None else bin_tol
    if is_degenerate(basis, tol):
        raise DegenerateSpectrumError("TLE coherences need a nondegenerate spectrum")
    delta = binned_gaps(basis, tol)
    r = tle_R_tensor(p)
    num = np.einsum("nmkk,k->nm", r, p0)
    rho2 = np.zeros((d, d), dtype=complex)
    off = ~np.eye(d, dtype=bool)
    rho2[off] = num[off] / (1j * delta[off])
    rho0 = DensityMatrix(np.diag(p0).astype(complex))
    return PerturbativeState(rho0, _hermitize(rho2), "tle", populations=False,
                             meta={"lambda": p.lam, "phi": p.phi, "coupling_scale": p.scale})


# comparisons


@dataclass(frozen=True)
class Comparison:
    trace_distance: float
    max_abs_diff: float
    population_rel_diff: np.ndarray

    def as_dict(self) -> dict:
        return {
            "trace_distance": self.trace_distance,
            "max_abs_diff": self.max_abs_diff,
            "population_rel_diff": [float(x) for x in self.population_rel_diff],
        }


def _as_density(x, epsilon) -> np.ndarray:
    if isinstance(x, PerturbativeState):
        if epsilon is None:
            raise ValidationError("epsilon is required to evaluate a perturbative state")
        return x.at(epsilon).matrix
    if isinstance(x, DensityMatrix):
        return x.matrix
    return np.asarray(x, dtype=complex)


def compare_states(a, b, epsilon: float | None = None) -> Comparison:
    """Trace distance, max element difference and ``(a_nn - b_nn)/b_nn``."""
    ma, mb = _as_density(a, epsilon), _as_density(b, epsilon)
    if ma.shape != mb.shape:
        raise ValidationError(f"dimension mismatch {ma.shape} vs {mb.shape}")
    diff = _hermitize(ma - mb)
    td = 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(diff))))
    pb = np.real(np.diag(mb))
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.real(np.diag(ma - mb)) / pb
    return Comparison(td, _norm_max(ma - mb), rel)


@dataclass(frozen=True)
class HighTemperatureScan:
    betas: np.ndarray
    norms: np.ndarray  # max |rho2| per beta
    coherence: np.ndarray  # max off-diagonal |rho2|
    population: np.ndarray  # max diagonal |rho2|
    exponent: float  # fitted p in norm ~ beta^p over the smallest betas
    vanishes: bool


def _monotone_to_zero(vals: np.ndarray) -> bool:
    tail = np.abs(vals[-3:])
    return bool(np.all(np.diff(tail) < 0))


def high_temperature_scan(solver, model_at, beta_grid, n_fit: int = 3) -> HighTemperatureScan:
    """Track ``||rho2||_max`` along a descending beta grid.

    ``model_at(beta)`` returns ``(basis, bohr, bath)``; ``solver`` maps those
    to a :class:`PerturbativeState`.
    """
    betas = np.asarray(sorted(beta_grid, reverse=True), dtype=float)
    norms, coh, pop = [], [], []
    for b in betas:
        st = solver(*model_at(b))
        r = st.rho2
        off = ~np.eye(r.shape[0], dtype=bool)
        norms.append(_norm_max(r))
        coh.append(_norm_max(r[off]))
        pop.append(_norm_max(np.diag(r)))
    norms = np.array(norms)
    k = min(n_fit, len(betas))
    tail = norms[-k:]
    if k >= 2 and np.all(tail > 0):
        expo = float(np.polyfit(np.log(betas[-k:]), np.log(tail), 1)[0])
    else:
        expo = float("nan")
    vanishes = _monotone_to_zero(np.array(coh)) and _monotone_to_zero(np.array(pop)) and expo > 0
    return HighTemperatureScan(betas, norms, np.array(coh), np.array(pop), expo, bool(vanishes))


def perturbative_state(family: str, basis: EigenBasis, bohr, model,
                       include_lamb: bool = True) -> PerturbativeState:
    """Dispatch to the second-order solver of the named master equation."""
    if family == "redfield":
        return redfield_perturbative(basis, bohr, model)
    if family == "secular":
        return secular_perturbative(basis, bohr, model)
    if family == "ule":
        return ule_perturbative(basis, bohr, model, include_lamb=include_lamb)
    if family == "tle":
        bohr = _as_list(bohr)
        return tle_steady(basis, bohr[0], model, bohr[0].bin_tol)
    if family == "mfg":
        return mfg_second_order(basis, bohr, model)
    raise ValidationError(f"unknown family {family!r}")
