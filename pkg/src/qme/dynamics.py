"""Fixed-step time evolution of vectorized density matrices."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .opcore import DensityMatrix, EigenBasis, devectorize, pauli, site_operator, vectorize
from .superop import Superoperator

STEP_GUARD = 0.1


@dataclass(frozen=True)
class Monitor:
    trace_dev: float
    herm_dev: float
    min_eig: float


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: list
    monitors: list
    converged_at: float | None = None
    basis: str = "energy"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) != len(self.states) or len(t) != len(self.monitors):
            raise ValidationError("snapshot and time counts differ")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("times must be strictly ascending")
        object.__setattr__(self, "times", t)

    @property
    def final(self) -> DensityMatrix:
        return self.states[-1]


def _monitor(r: np.ndarray) -> Monitor:
    h = 0.5 * (r + r.conj().T)
    return Monitor(
        trace_dev=float(abs(np.trace(r) - 1.0)),
        herm_dev=float(np.max(np.abs(r - r.conj().T))),
        min_eig=float(np.linalg.eigvalsh(h)[0]),
    )


def max_norm(m) -> float:
    return float(np.max(np.abs(m)))


def rk4_propagator(L: np.ndarray, dt: float) -> np.ndarray:
    """One classical RK4 step for a linear ODE, as a matrix acting on rho."""
    hl = dt * L
    eye = np.eye(L.shape[0], dtype=complex)
    # Horner form of I + hL + (hL)^2/2 + (hL)^3/6 + (hL)^4/24
    p = eye + hl / 4.0
    p = eye + hl @ p / 3.0
    p = eye + hl @ p / 2.0
    return eye + hl @ p


def evolve(L, rho0, t_end: float, dt: float, snap_every: int = 1,
           conv_tol: float = 1e-10) -> Trajectory:
    """Integrate ``d rho/dt = L rho`` with RK4 from ``t = 0`` to ``t_end``.

    The step is shrunk to ``t_end / ceil(t_end / dt)`` so the last step lands on
    ``t_end``.  Snapshots are taken every ``snap_every`` steps and at the final time.
    Convergence is declared when ``||L rho||_max < conv_tol`` at two
    consecutive snapshots.
    """
    m = L.matrix if isinstance(L, Superoperator) else np.asarray(L, dtype=complex)
    if not t_end > 0:
        raise ValidationError("t_end must be positive")
    if not dt > 0:
        raise ValidationError("dt must be positive")
    if snap_every < 1:
        raise ValidationError("snap_every must be >= 1")
    norm = max_norm(m)
    limit = STEP_GUARD / norm if norm > 0 else np.inf
    if dt > limit:
        raise ValidationError(f"dt = {dt:.3e} violates the step guard; use dt <= {limit:.3e}")
    tag = rho0.basis if isinstance(rho0, DensityMatrix) else "energy"
    x = vectorize(rho0)
    if x.size != m.shape[0]:
        raise ValidationError("state dimension does not match the generator")
    n_steps = int(np.ceil(t_end / dt - 1e-9))
    dt = t_end / n_steps  # land exactly on t_end; never larger than requested
    prop = rk4_propagator(m, dt)
    times, states, monitors = [0.0], [], []
    r = devectorize(x)
    states.append(DensityMatrix(r, basis=tag))
    monitors.append(_monitor(r))
    streak = 0
    converged = None

    def resid(v):
        return max_norm(m @ v)

    if resid(x) < conv_tol:
        streak = 1
    for step in range(1, n_steps + 1):
        x = prop @ x
        if step % snap_every == 0 or step == n_steps:
            r = devectorize(x)
            t = step * dt
            times.append(t)
            states.append(DensityMatrix(r, basis=tag))
            monitors.append(_monitor(r))
            if resid(x) < conv_tol:
                streak += 1
                if streak >= 2 and converged is None:
                    converged = t
            else:
                streak = 0
    return Trajectory(np.array(times), states, monitors, converged, tag)


@dataclass(frozen=True)
class PositivityReport:
    violated: bool
    first_time: float | None
    min_eigenvalue: float


def positivity_watch(traj: Trajectory, pos_tol: float = 1e-8) -> PositivityReport:
    eigs = np.array([mo.min_eig for mo in traj.monitors])
    bad = np.nonzero(eigs < -pos_tol)[0]
    first = float(traj.times[bad[0]]) if bad.size else None
    return PositivityReport(bool(bad.size), first, float(eigs.min()))


def magnetization(traj: Trajectory, site: int, n_sites: int | None = None,
                  basis: EigenBasis | None = None) -> np.ndarray:
    """``Tr(sigma_z^site rho(t))``; energy-basis trajectories need ``basis``."""
    d = traj.states[0].dim
    n = int(round(np.log2(d))) if n_sites is None else int(n_sites)
    if 2**n != d:
        raise ValidationError("state dimension is not a power of two")
    _, _, sz = pauli()
    op = site_operator(sz, site, n)
    if traj.basis == "energy":
        if basis is None:
            raise ValidationError("energy-basis trajectory needs the EigenBasis")
        op = basis.to_eigen(op)
    return np.array([float(np.real(np.trace(op @ s.matrix))) for s in traj.states])


def trajectory_to_csv(traj: Trajectory, path, include_states: bool = False) -> None:
    """Columns: t, trace_dev, herm_dev, min_eig, then (optionally) row-major re/im of rho."""
    d = traj.states[0].dim
    header = ["t", "trace_dev", "herm_dev", "min_eig"]
    if include_states:
        for i in range(d):
            for j in range(d):
                header += [f"re_{i}_{j}", f"im_{i}_{j}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for t, s, mo in zip(traj.times, traj.states, traj.monitors):
            row = [t, mo.trace_dev, mo.herm_dev, mo.min_eig]
            if include_states:
                for v in s.matrix.reshape(-1):
                    row += [v.real, v.imag]
            w.writerow([f"{x:.17g}" for x in row])
