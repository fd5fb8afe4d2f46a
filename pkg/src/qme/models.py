"""Reference systems: the spin-boson two-level model, the Heisenberg spin chain
and a generic builder from explicit matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bath as _bath
from .bath import BathModel, QuadSettings, SpectralDensity, make_bath
from .errors import ValidationError
from .opcore import (
    BohrDecomposition,
    DensityMatrix,
    EigenBasis,
    HermitianOperator,
    bohr_decompose,
    eigh,
    gibbs_state,
    pauli,
    site_operator,
)

MAX_SITES = 8


@dataclass(frozen=True)
class SpinBosonSpec:
    omega0: float
    beta: float
    c: tuple = (1.0, 1.0, 1.0)
    j0: float = 1.0
    omega_d: float | None = None  # defaults to 10 / beta
    kind: str = field(default="spin_boson", init=False)

    def __post_init__(self):
        if len(self.c) != 3:
            raise ValidationError("c must hold (c_x, c_y, c_z)")
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        if all(x == 0 for x in self.c):
            raise ValidationError("spin-boson coupling needs at least one nonzero c_i")
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        if self.omega_d is None:
            object.__setattr__(self, "omega_d", 10.0 / self.beta)


@dataclass(frozen=True)
class SpinChainSpec:
    n_sites: int
    beta: float
    b_z: float = 8.0
    eta: float = 1.0
    cutoff: float = 100.0
    omega0_scale: float = 2.0
    lamb_shift: bool = False
    kind: str = field(default="spin_chain", init=False)

    def __post_init__(self):
        if not 1 <= int(self.n_sites) <= MAX_SITES:
            raise ValidationError(f"n_sites must lie in [1, {MAX_SITES}] (d = 2^N <= 256)")
        if not self.beta > 0:
            raise ValidationError("beta must be positive")


@dataclass(frozen=True)
class GenericSpec:
    hamiltonian: np.ndarray
    couplings: tuple
    densities: tuple
    beta: float
    mixing: np.ndarray | None = None
    kind: str = field(default="generic", init=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        if len(self.couplings) == 0:
            raise ValidationError("at least one coupling operator required")
        if self.mixing is None and len(self.couplings) != len(self.densities):
            raise ValidationError("one spectral density per coupling operator expected")


@dataclass(frozen=True)
class BuiltModel:
    """Model wired to its bath; unpacks as ``basis, bohr, bath``."""

    basis: EigenBasis
    bohr: list
    bath: BathModel
    hamiltonian: np.ndarray
    couplings: list
    metadata: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.basis, self.bohr, self.bath))

    def gibbs(self) -> DensityMatrix:
        return gibbs_state(self.basis, self.bath.beta)

    def to_energy(self, rho) -> np.ndarray:
        return self.basis.to_eigen(rho)

    def from_energy(self, rho) -> np.ndarray:
        return self.basis.from_eigen(rho)


def _decompose(h, ops, bin_tol=None):
    basis = eigh(h)
    return basis, [bohr_decompose(a, basis, bin_tol) for a in ops]


def build_spin_boson(spec: SpinBosonSpec, quad: QuadSettings | None = None) -> BuiltModel:
    sx, sy, sz = pauli()
    cx, cy, cz = spec.c
    h = 0.5 * spec.omega0 * sz
    a = cx * sx + cy * sy + cz * sz
    basis, bohr = _decompose(h, [a])
    sd = SpectralDensity("ohmic_debye", j0=spec.j0, omega_d=spec.omega_d)
    bm = make_bath(spec.beta, [sd], quad=quad)
    meta = {"kind": "spin_boson", "omega0": spec.omega0, "beta": spec.beta, "c": list(spec.c),
            "j0": spec.j0, "omega_d": spec.omega_d}
    return BuiltModel(basis, bohr, bm, h, [a], meta)


def spin_chain_hamiltonian(n: int, b_z: float, eta: float) -> np.ndarray:
    sx, sy, sz = pauli()
    d = 2**n
    h = np.zeros((d, d), dtype=complex)
    for i in range(n):
        h -= b_z * site_operator(sz, i, n)
    for i in range(n - 1):
        for s in (sx, sy, sz):
            h -= eta * site_operator(s, i, n) @ site_operator(s, i + 1, n)
    return h


def all_down_state(n: int) -> DensityMatrix:
    """Computational basis state with every spin anti-aligned to +z."""
    d = 2**n
    rho = np.zeros((d, d), dtype=complex)
    rho[d - 1, d - 1] = 1.0
    return DensityMatrix(rho, basis="computational")


def build_spin_chain(spec: SpinChainSpec, quad: QuadSettings | None = None) -> BuiltModel:
    n = int(spec.n_sites)
    sx, _, _ = pauli()
    h = spin_chain_hamiltonian(n, spec.b_z, spec.eta)
    a = site_operator(sx, 0, n)
    basis, bohr = _decompose(h, [a])
    sd = SpectralDensity("ohmic_gaussian", omega0_scale=spec.omega0_scale, cutoff=spec.cutoff)
    bm = make_bath(spec.beta, [sd], quad=quad)
    meta = {"kind": "spin_chain", "n_sites": n, "b_z": spec.b_z, "eta": spec.eta,
            "cutoff": spec.cutoff, "omega0_scale": spec.omega0_scale, "beta": spec.beta,
            "lamb_shift": spec.lamb_shift, "coupling_normalization": "bare sigma_x"}
    return BuiltModel(basis, bohr, bm, h, [a], meta)


def build_generic(spec: GenericSpec, quad: QuadSettings | None = None) -> BuiltModel:
    h = HermitianOperator(spec.hamiltonian).matrix
    ops = [HermitianOperator(a).matrix for a in spec.couplings]
    for a in ops:
        if a.shape != h.shape:
            raise ValidationError(f"coupling shape {a.shape} does not match H {h.shape}")
    basis, bohr = _decompose(h, ops)
    bm = make_bath(spec.beta, list(spec.densities), mixing=spec.mixing, quad=quad)
    if bm.n_channels != len(ops):
        raise ValidationError(f"{len(ops)} couplings but bath has {bm.n_channels} channels")
    meta = {"kind": "generic", "dim": basis.dim, "n_channels": len(ops), "beta": spec.beta}
    return BuiltModel(basis, bohr, bm, h, ops, meta)


def build_model(spec, quad: QuadSettings | None = None) -> BuiltModel:
    if isinstance(spec, SpinBosonSpec):
        return build_spin_boson(spec, quad)
    if isinstance(spec, SpinChainSpec):
        return build_spin_chain(spec, quad)
    if isinstance(spec, GenericSpec):
        return build_generic(spec, quad)
    raise ValidationError(f"unknown model spec {type(spec).__name__}")


def _matrix_from_json(obj, name):
    if isinstance(obj, dict):
        re = np.asarray(obj.get("re", 0.0), dtype=float)
        im = np.asarray(obj.get("im", np.zeros_like(re)), dtype=float)
        m = re + 1j * im
    else:
        m = np.asarray(obj, dtype=complex)
    if m.ndim != 2:
        raise ValidationError(f"{name} must be a 2-D matrix")
    return m


def _density_from_json(obj) -> SpectralDensity:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise ValidationError("spectral density needs a 'kind'")
    kw = {k: v for k, v in obj.items() if k != "kind"}
    if "samples" in kw:
        kw["samples"] = np.asarray(kw["samples"], dtype=float)
    try:
        return SpectralDensity(obj["kind"], **kw)
    except TypeError as exc:
        raise ValidationError(f"bad spectral density fields: {exc}") from None


_FIELDS = {
    "spin_boson": {"omega0", "beta", "c", "j0", "omega_d"},
    "spin_chain": {"n_sites", "beta", "b_z", "eta", "cutoff", "omega0_scale", "lamb_shift"},
    "generic": {"hamiltonian", "couplings", "densities", "beta", "mixing"},
}


def model_spec_from_dict(d: dict):
    """Build a model spec from its JSON form (``{"kind": ..., fields}``)."""
    if not isinstance(d, dict):
        raise ValidationError("model must be a JSON object")
    kind = d.get("kind")
    if kind not in _FIELDS:
        raise ValidationError(f"model kind must be one of {sorted(_FIELDS)}")
    if "beta" not in d:
        raise ValidationError("beta required")
    extra = set(d) - _FIELDS[kind] - {"kind"}
    if extra:
        raise ValidationError(f"unknown {kind} fields: {sorted(extra)}")
    kw = {k: v for k, v in d.items() if k != "kind"}
    if kind == "spin_boson":
        if "omega0" not in kw:
            raise ValidationError("omega0 required")
        return SpinBosonSpec(**kw)
    if kind == "spin_chain":
        if "n_sites" not in kw:
            raise ValidationError("n_sites required")
        return SpinChainSpec(**kw)
    for key in ("hamiltonian", "couplings", "densities"):
        if key not in kw:
            raise ValidationError(f"{key} required")
    return GenericSpec(
        hamiltonian=_matrix_from_json(kw["hamiltonian"], "hamiltonian"),
        couplings=tuple(_matrix_from_json(a, "coupling") for a in kw["couplings"]),
        densities=tuple(_density_from_json(s) for s in kw["densities"]),
        beta=float(kw["beta"]),
        mixing=None if kw.get("mixing") is None else np.asarray(kw["mixing"], dtype=float),
    )


# closed-form two-level oracle


@dataclass(frozen=True)
class SpinBosonOracle:
    """Closed-form second-order corrections, indexed with 0 = lower, 1 = upper level."""

    redfield: np.ndarray
    ule: np.ndarray
    rho_g: np.ndarray


def spin_boson_oracle(spec: SpinBosonSpec, quad: QuadSettings | None = None) -> SpinBosonOracle:
    """Evaluate the two-level closed forms directly from scalar kernels."""
    cx, cy, cz = spec.c
    w0, beta = spec.omega0, spec.beta
    sd = SpectralDensity("ohmic_debye", j0=spec.j0, omega_d=spec.omega_d)
    bm = make_bath(beta, [sd], quad=quad)

    def S(w):
        return float(np.real(_bath.lamb_shift_S(bm, w)[0, 0]))

    def Sp(w):
        return float(np.real(_bath.lamb_shift_S_prime(bm, w)[0, 0]))

    def g(w):
        return float(np.sqrt(bm.gamma_raw(w)[0, 0].real))

    def f(w1, w2):
        return complex(_bath.f_function(bm, w1, w2)[0, 0])

    z = np.exp(-beta * w0 / 2) + np.exp(beta * w0 / 2)
    pp = np.exp(-beta * w0 / 2) / z  # upper level
    pm = np.exp(beta * w0 / 2) / z
    apm = cx - 1j * cy
    cperp = cx**2 + cy**2

    # Redfield / MFG
    red_pm = 2 * cz * apm / w0 * (S(0.0) - pp * S(w0) - pm * S(-w0))
    bar_pp = cz**2 * (-beta * S(0.0)) * pp + cperp * ((Sp(w0) - beta * S(w0)) * pp - Sp(-w0) * pm)
    bar_mm = cz**2 * (-beta * S(0.0)) * pm + cperp * ((Sp(-w0) - beta * S(-w0)) * pm - Sp(w0) * pp)
    red_pp = bar_pp - pp * (bar_pp + bar_mm)
    red = np.array([[-red_pp, np.conj(red_pm)], [red_pm, red_pp]], dtype=complex)

    # ULE
    ule_pm = cz * apm / w0 * (
        (f(0.0, -w0) - f(-w0, 0.0)) * (pp - pm)
        + 0.5j * g(0.0) * ((g(-w0) - 3 * g(w0)) * pp - (g(w0) - 3 * g(-w0)) * pm)
    )
    ubar_pp = -beta * pp * (cz**2 * S(0.0) + cperp * S(w0))
    ubar_mm = -beta * pm * (cz**2 * S(0.0) + cperp * S(-w0))
    ule_pp = ubar_pp - pp * (ubar_pp + ubar_mm)
    ule = np.array([[-ule_pp, np.conj(ule_pm)], [ule_pm, ule_pp]], dtype=complex)
    return SpinBosonOracle(red, ule, np.diag([pm, pp]).astype(complex))
