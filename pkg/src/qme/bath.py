"""Bath kernels: spectral functions, Lamb-shift transforms and correlators.

A bath is described channel by channel through the Fourier transform of its
correlation function, ``gamma(w) = int dt e^{iwt} C(t)``.  Everything else
(principal-value transforms, square-root kernels, imaginary-time correlators)
is derived from ``gamma`` by quadrature on a fixed hybrid grid:

* a composite Gauss-Legendre linear part on ``[0, u_lin]``
* a composite Gauss-Legendre part in ``log u`` on ``[u_lin, u_lin * tail_decades]``

Principal values use the odd split
``PV int dw F(w)/w = int_0^inf [F(u) - F(-u)] / u du``.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConvergenceError, ValidationError
from .opcore import psd_sqrt


def bose_weight(x):
    """``x / (1 - exp(-x))`` evaluated stably, with value 1 at ``x = 0``."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    pos = x > 0
    neg = x < 0
    xp = x[pos]
    out[pos] = xp / -np.expm1(-xp)
    y = -x[neg]
    out[neg] = y * np.exp(-y) / -np.expm1(-y)
    return out


@dataclass(frozen=True)
class SpectralDensity:
    """One bath channel.

    kinds:
      ``ohmic_debye``     J(w) = j0 * omega_d * w / (w^2 + omega_d^2), thermally
                          dressed: gamma = (pi/2) J (nbar + 1)
      ``ohmic_gaussian``  gamma(w) = (2 pi / omega0_scale) w exp(-w^2/2 cutoff^2)
                          / (1 - exp(-beta w)), used as gamma directly
      ``tabulated``       samples of J(w) for w >= 0 (linear interpolation, zero
                          outside), odd-extended and dressed like ``ohmic_debye``
    """

    kind: str
    j0: float = 1.0
    omega_d: float = 1.0
    omega0_scale: float = 1.0
    cutoff: float = 1.0
    samples: tuple = ()

    def __post_init__(self):
        if self.kind not in ("ohmic_debye", "ohmic_gaussian", "tabulated"):
            raise ValidationError(f"unknown spectral density kind {self.kind!r}")
        if self.kind == "ohmic_debye" and self.omega_d <= 0:
            raise ValidationError("omega_d must be positive")
        if self.kind == "ohmic_gaussian" and (self.cutoff <= 0 or self.omega0_scale <= 0):
            raise ValidationError("cutoff and omega0_scale must be positive")
        if self.kind == "tabulated":
            w, v = self._table
            if w.size < 2 or np.any(np.diff(w) <= 0) or w[0] < 0:
                raise ValidationError("tabulated samples need >= 2 ascending w >= 0")

    @classmethod
    def from_csv(cls, path) -> "SpectralDensity":
        data = np.loadtxt(Path(path), delimiter=",", ndmin=2, comments="#")
        return cls(kind="tabulated", samples=tuple(map(tuple, data[:, :2])))

    @property
    def _table(self):
        arr = np.asarray(self.samples, dtype=float).reshape(-1, 2)
        return arr[:, 0], arr[:, 1]

    @property
    def scale(self) -> float:
        """Characteristic frequency of the kernel, used to size the grid."""
        if self.kind == "ohmic_debye":
            return self.omega_d
        if self.kind == "ohmic_gaussian":
            return self.cutoff
        return float(self._table[0][-1])

    def spectral_j(self, w):
        """Odd zero-temperature spectral density (``bose`` kinds only)."""
        w = np.asarray(w, dtype=float)
        if self.kind == "ohmic_debye":
            return self.j0 * self.omega_d * w / (w**2 + self.omega_d**2)
        if self.kind == "tabulated":
            tw, tv = self._table
            return np.sign(w) * np.interp(np.abs(w), tw, tv, left=0.0, right=0.0)
        raise ValidationError("ohmic_gaussian is ingested as gamma directly")

    def gamma(self, w, beta: float):
        """Spectral function gamma(w) at inverse temperature ``beta``."""
        w = np.asarray(w, dtype=float)
        if self.kind == "ohmic_debye":
            # J(w)/w is regular; combine with w/(1-e^{-beta w}) to stay finite at 0
            j_over_w = self.j0 * self.omega_d / (w**2 + self.omega_d**2)
            return 0.5 * np.pi * j_over_w * bose_weight(beta * w) / beta
        if self.kind == "ohmic_gaussian":
            env = np.exp(-(w**2) / (2.0 * self.cutoff**2))
            return (2.0 * np.pi / self.omega0_scale) * env * bose_weight(beta * w) / beta
        tw, tv = self._table
        aw = np.abs(w)
        j = np.interp(aw, tw, tv, left=0.0, right=0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            j_over_w = np.where(aw > 0, j / np.where(aw > 0, aw, 1.0), 0.0)
        # slope at the origin from the first sample pair
        slope0 = (tv[1] - tv[0]) / (tw[1] - tw[0]) if tw[0] == 0 else 0.0
        j_over_w = np.where(aw > 0, j_over_w, slope0)
        return 0.5 * np.pi * j_over_w * bose_weight(beta * w) / beta


@dataclass(frozen=True)
class QuadSettings:
    n_linear: int = 4096
    n_log: int = 512
    order: int = 64  # Gauss-Legendre nodes per panel
    linear_factor: float = 10.0  # linear segment ends at linear_factor * scale + window
    tail_decades: float = 9.0
    rtol: float = 1e-6  # allowed relative change between grid refinements
    imag_nodes: int = 64
    t_max: float | None = None  # time cutoff for time-domain kernels (None = auto)

    def __post_init__(self):
        if self.n_linear % self.order or self.n_log % self.order:
            raise ValidationError("node counts must be multiples of the panel order")
        if min(self.n_linear, self.n_log) < 2 * self.order:
            raise ValidationError("need at least two panels per grid segment")


def _composite_gl(a: float, b: float, n: int, order: int, log: bool = False):
    x, w = np.polynomial.legendre.leggauss(order)
    panels = n // order
    lo, hi = (np.log(a), np.log(b)) if log else (a, b)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    if log:
        nodes = np.exp(nodes)
        weights = weights * nodes
    return nodes, weights


@dataclass(frozen=True)
class _Grid:
    nodes: np.ndarray
    weights: np.ndarray


class _KernelCache:
    """Insert-if-absent cache safe under concurrent readers and writers."""

    def __init__(self):
        self._data: dict = {}
        self._lock = threading.Lock()

    def get(self, key, factory):
        hit = self._data.get(key)
        if hit is not None:
            return hit
        value = factory()
        with self._lock:
            return self._data.setdefault(key, value)

    def __len__(self):
        return len(self._data)


@dataclass(frozen=True)
class BathModel:
    """Inverse temperature plus per-bath spectral densities.

    ``mixing`` (real, channels x baths) couples system channel ``a`` to
    ``sum_b mixing[a, b] B_b``; the identity (default) means independent baths
    and a diagonal gamma matrix.
    """

    beta: float
    channels: tuple
    mixing: np.ndarray | None = None
    quad: QuadSettings = QuadSettings()
    omega_max: float | None = None
    _cache: _KernelCache = field(default_factory=_KernelCache, compare=False, repr=False)

    def __post_init__(self):
        if not self.beta > 0:
            raise ValidationError("beta must be positive")
        chans = tuple(self.channels)
        if not chans:
            raise ValidationError("bath needs at least one channel")
        object.__setattr__(self, "channels", chans)
        mix = np.eye(len(chans)) if self.mixing is None else np.asarray(self.mixing, dtype=float)
        if mix.ndim != 2 or mix.shape[1] != len(chans):
            raise ValidationError("mixing must have one column per spectral density")
        mix.setflags(write=False)
        object.__setattr__(self, "mixing", mix)

    @property
    def n_channels(self) -> int:
        return self.mixing.shape[0]

    @property
    def scale(self) -> float:
        return max([1.0 / self.beta] + [c.scale for c in self.channels])

    @property
    def window(self) -> float:
        if self.omega_max is not None:
            return float(self.omega_max)
        return max(20.0 / self.beta, 10.0 * max(c.scale for c in self.channels))

    def with_quad(self, **overrides) -> "BathModel":
        return replace(self, quad=replace(self.quad, **overrides), _cache=_KernelCache())

    def scaled(self, factor: float) -> "BathModel":
        """Same bath with every kernel multiplied by ``factor``."""
        return replace(self, mixing=self.mixing * np.sqrt(factor), _cache=_KernelCache())

    def grid(self, refine: int = 1) -> _Grid:
        key = ("grid", refine)
        return self._cache.get(key, lambda: self._make_grid(refine))

    def _linear_end(self) -> float:
        # shifted kernels have structure near u = |shift| <= window
        return self.quad.linear_factor * self.scale + self.window

    def _make_grid(self, refine: int) -> _Grid:
        q = self.quad
        u_lin = self._linear_end()
        u_end = u_lin * 10.0**q.tail_decades
        n1, w1 = _composite_gl(0.0, u_lin, q.n_linear * refine, q.order)
        n2, w2 = _composite_gl(u_lin, u_end, q.n_log * refine, q.order, log=True)
        return _Grid(np.concatenate([n1, n2]), np.concatenate([w1, w2]))

    def coarse_grid(self) -> _Grid:
        """Grid with half the panels, for refinement checks."""
        q = self.quad
        key = ("grid", "coarse")

        def make():
            u_lin = self._linear_end()
            u_end = u_lin * 10.0**q.tail_decades
            n1, w1 = _composite_gl(0.0, u_lin, q.n_linear // 2, q.order)
            n2, w2 = _composite_gl(u_lin, u_end, q.n_log // 2, q.order, log=True)
            return _Grid(np.concatenate([n1, n2]), np.concatenate([w1, w2]))

        return self._cache.get(key, make)

    def gamma_raw(self, w) -> np.ndarray:
        """gamma matrix at arbitrary frequencies, shape ``w.shape + (nch, nch)``."""
        w = np.asarray(w, dtype=float)
        per_bath = np.stack([c.gamma(w, self.beta) for c in self.channels], axis=-1)
        m = self.mixing
        return np.einsum("ab,...b,cb->...ac", m, per_bath, m).astype(complex)

    def g_raw(self, w) -> np.ndarray:
        """PSD square root of gamma, same shape convention as ``gamma_raw``."""
        gm = self.gamma_raw(w)
        if self.n_channels == 1 and self.mixing.shape[1] == 1:
            return np.sqrt(np.clip(gm.real, 0.0, None)).astype(complex)
        flat = gm.reshape(-1, self.n_channels, self.n_channels)
        out = np.empty_like(flat)
        for i, mat in enumerate(flat):
            out[i] = _psd_sqrt_quiet(mat)
        return out.reshape(gm.shape)

    def check_window(self, w) -> None:
        w = np.asarray(w, dtype=float)
        if np.any(np.abs(w) > self.window):
            raise ValidationError(
                f"frequency outside window [-{self.window:g}, {self.window:g}]"
            )


def _psd_sqrt_quiet(mat: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (mat + mat.conj().T))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)[None, :]) @ v.conj().T


def make_bath(beta: float, channels, mixing=None, quad: QuadSettings | None = None, **kw) -> BathModel:
    if isinstance(channels, SpectralDensity):
        channels = (channels,)
    return BathModel(beta=float(beta), channels=tuple(channels), mixing=mixing,
                     quad=quad or QuadSettings(), **kw)


# ---------------------------------------------------------------------------
# public kernels


def gamma(model: BathModel, w) -> np.ndarray:
    """Fourier transform of the bath correlation function, Hermitian PSD over channels."""
    model.check_window(w)
    return model.gamma_raw(w)


def _odd_pv(model: BathModel, shifts, evaluate, grid: _Grid) -> np.ndarray:
    """``-(1/2pi) int_0^inf [F(u) - F(-u)]/u du`` for each shift.

    ``evaluate(shift, u)`` returns ``(F(u), F(-u))`` with trailing channel axes.
    """
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    out = []
    for s in shifts:
        fp, fm = evaluate(s, grid)
        integrand = (fp - fm) / grid.nodes[:, None, None]
        out.append(-np.tensordot(grid.weights, integrand, axes=(0, 0)) / (2.0 * np.pi))
    return np.array(out)


def _check_refinement(fine: np.ndarray, coarse: np.ndarray, rtol: float, what: str) -> None:
    scale = max(float(np.max(np.abs(fine))), 1e-300)
    err = float(np.max(np.abs(fine - coarse))) / scale
    if err > rtol:
        raise ConvergenceError(
            f"{what}: relative change {err:.2e} between grid refinements exceeds {rtol:.1e}"
        )


def _gamma_shifted(model: BathModel):
    def evaluate(s, grid):
        u = grid.nodes
        return model.gamma_raw(s + u), model.gamma_raw(s - u)

    return evaluate


def lamb_shift_S(model: BathModel, w, check: bool = True) -> np.ndarray:
    """Principal-value transform ``S(w) = -PV int dv/(2pi) gamma(v + w)/v``.

    Scalar ``w`` gives a ``(nch, nch)`` matrix; array input stacks along axis 0.
    """
    model.check_window(w)
    scalar = np.ndim(w) == 0
    ev = _gamma_shifted(model)
    val = _odd_pv(model, w, ev, model.grid())
    if check:
        coarse = _odd_pv(model, w, ev, model.coarse_grid())
        _check_refinement(val, coarse, model.quad.rtol, "lamb_shift_S")
    val = 0.5 * (val + np.conj(np.swapaxes(val, -1, -2)))
    return val[0] if scalar else val


def lamb_shift_S_prime(model: BathModel, w, h: float | None = None) -> np.ndarray:
    """dS/dw by central differences with one Richardson step."""
    scalar = np.ndim(w) == 0
    ws = np.atleast_1d(np.asarray(w, dtype=float))
    out = []
    for x in ws:
        step = 1e-4 * max(abs(x), 1.0) if h is None else float(h)
        if step <= 0:
            raise ValidationError("finite-difference step must be positive")
        pts = np.array([x - step, x + step, x - step / 2, x + step / 2])
        s = lamb_shift_S(model, pts, check=False)
        d1 = (s[1] - s[0]) / (2 * step)
        d2 = (s[3] - s[2]) / step
        out.append((4.0 * d2 - d1) / 3.0)
    out = np.array(out)
    return out[0] if scalar else out


def g_kernel(model: BathModel, w) -> np.ndarray:
    """Hermitian PSD square root of gamma(w)."""
    model.check_window(w)
    if np.ndim(w) == 0:
        return psd_sqrt(model.gamma_raw(w))
    return model.g_raw(w)


def _g_on_grid(model: BathModel, shift: float, grid_key, grid: _Grid):
    # key rounded so repeated Bohr-frequency evaluations share an entry
    key = ("g", grid_key, round(float(shift), 12))

    def make():
        u = grid.nodes
        return model.g_raw(shift + u), model.g_raw(shift - u)

    return model._cache.get(key, make)


def _f_single(model: BathModel, w1: float, w2: float, grid_key, grid: _Grid) -> np.ndarray:
    # F(v) = g(v - w1) g(v + w2)
    a_p, a_m = _g_on_grid(model, -w1, grid_key, grid)
    b_p, b_m = _g_on_grid(model, w2, grid_key, grid)
    fp = np.einsum("uam,umb->uab", a_p, b_p)
    fm = np.einsum("uam,umb->uab", a_m, b_m)
    integrand = (fp - fm) / grid.nodes[:, None, None]
    return -np.tensordot(grid.weights, integrand, axes=(0, 0)) / (2.0 * np.pi)


def f_function(model: BathModel, w1: float, w2: float, check: bool = True) -> np.ndarray:
    """``f(w1, w2) = -PV sum_mu int dv/(2pi) g(v - w1) g(v + w2) / v``."""
    model.check_window([w1, w2])
    val = _f_single(model, w1, w2, "fine", model.grid())
    if check:
        coarse = _f_single(model, w1, w2, "coarse", model.coarse_grid())
        _check_refinement(val, coarse, model.quad.rtol, "f_function")
    return val


def half_fourier_Gamma(model: BathModel, w) -> np.ndarray:
    """``Gamma(w) = int_0^inf ds e^{iws} C(s) = gamma(w)/2 + i S(w)``."""
    return 0.5 * gamma(model, w) + 1j * lamb_shift_S(model, w)


def imag_time_corr(model: BathModel, x) -> np.ndarray:
    """Correlator at imaginary time, ``C(-ix) = (1/2pi) int dw gamma(w) e^{-wx}``.

    Valid for ``0 <= x <= beta``.  Kernels with a 1/w tail (ohmic_debye)
    diverge logarithmically at the two end points; there the value is the
    finite truncation at the end of the grid.
    """
    scalar = np.ndim(x) == 0
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    b = model.beta
    if np.any(xs < 0) or np.any(xs > b):
        raise ValidationError("imaginary time must lie in [0, beta]")
    grid = model.grid()
    u, wts = grid.nodes, grid.weights
    gp = model.gamma_raw(u)
    # negative frequencies through KMS, gamma(-u) = e^{-beta u} gamma(u)^T, so that
    # e^{ux} gamma(-u) = e^{-(beta - x) u} gamma(u)^T never overflows
    gt = np.swapaxes(gp, -1, -2)
    e1 = np.exp(-np.outer(xs, u))
    e2 = np.exp(-np.outer(b - xs, u))
    val = (np.einsum("xu,u,uab->xab", e1, wts, gp)
           + np.einsum("xu,u,uab->xab", e2, wts, gt)) / (2.0 * np.pi)
    return val[0] if scalar else val
