"""Real-space time evolution: linear non-Hermitian and Kerr-nonlinear.

Linear runs step with a precomputed one-step propagator ``exp(-i H dt)``.
Eigendecomposition is avoided on purpose: at exceptional points H is
defective.  Nonlinear runs use classic RK4 with step doubling; internal
substeps are adaptive but samples are always recorded on the uniform
``dt`` grid so downstream quadrature sees evenly spaced data.
"""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.linalg
from numba import njit

from .lattice import LatticeSpec, build_h_pt

StopFn = Callable[[float, np.ndarray], bool]


class Kind(str, enum.Enum):
    LINEAR_PT = "linear-pt"
    LINEAR_LOSSY = "linear-lossy"
    NONLINEAR_PT = "nonlinear-pt"


@dataclass(frozen=True)
class StepControl:
    """Sampling step, horizon and guards.  ``dt=None`` picks 0.02/(v_a+v_b+gamma)."""

    dt: Optional[float] = None
    t_max: float = 50.0
    rel_tol: float = 1e-8
    intensity_cap: float = 1e12
    stride: int = 1
    max_steps: int = 10_000_000
    min_step: float = 1e-12

    def __post_init__(self):
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.t_max > 0:
            raise ValueError("t_max must be > 0")
        if not 1e-14 < self.rel_tol < 1e-2:
            raise ValueError("rel_tol must lie in (1e-14, 1e-2)")
        if not self.intensity_cap > 1:
            raise ValueError("intensity_cap must exceed 1")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")

    def resolve(self, spec: Optional[LatticeSpec] = None, h: Optional[np.ndarray] = None) -> "StepControl":
        if self.dt is not None:
            return self
        if spec is not None:
            scale = spec.v_a + spec.v_b + spec.gamma
        else:
            scale = float(np.abs(h).sum(axis=1).max())
        return replace(self, dt=0.02 / scale)


@dataclass(frozen=True)
class NonlinearSpec:
    eta: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.eta) or self.eta < 0:
            raise ValueError(f"eta must be >= 0, got {self.eta}")


@dataclass
class WaveTrajectory:
    times: np.ndarray
    states: np.ndarray
    kind: Kind
    spec: Optional[LatticeSpec] = None
    flag: str = "ok"
    steps: int = 0
    eta: float = 0.0
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    @property
    def n_dimers(self) -> int:
        return self.states.shape[1] // 2


def _max_intensity(psi):
    return float(np.max(psi.real**2 + psi.imag**2))


def evolve_linear(
    h: np.ndarray,
    psi0: np.ndarray,
    ctrl: StepControl = StepControl(),
    *,
    kind: Kind = Kind.LINEAR_PT,
    spec: Optional[LatticeSpec] = None,
    stop_when: Optional[StopFn] = None,
) -> WaveTrajectory:
    """Sample psi(n dt) = U^n psi(0) with U = exp(-i H dt).

    ``stop_when(t, psi)`` is consulted at every recorded sample and ends the run
    early when it returns True.  Exceeding ``intensity_cap`` truncates the run
    with flag ``"diverged"``.
    """
    h = np.asarray(h, dtype=complex)
    psi = np.array(psi0, dtype=complex)
    if h.ndim != 2 or h.shape[0] != h.shape[1] or h.shape[0] != psi.shape[0]:
        raise ValueError(f"shape mismatch: H {h.shape}, psi {psi.shape}")
    ctrl = ctrl.resolve(spec, h)
    u = scipy.linalg.expm(-1j * h * ctrl.dt)

    n_steps = int(round(ctrl.t_max / ctrl.dt))
    times = [0.0]
    states = [psi.copy()]
    flag = "ok"
    step = 0
    while step < n_steps:
        psi = u @ psi
        step += 1
        if _max_intensity(psi) > ctrl.intensity_cap or not np.all(np.isfinite(psi)):
            flag = "diverged"
            break
        if step % ctrl.stride == 0:
            t = step * ctrl.dt
            times.append(t)
            states.append(psi.copy())
            if stop_when is not None and stop_when(t, psi):
                break
    return WaveTrajectory(
        np.array(times), np.array(states), Kind(kind), spec, flag, step, meta={"dt": ctrl.dt * ctrl.stride}
    )


@njit(cache=True)
def _deriv(diag, up, lo, corner, eta, psi, out):
    # H is tridiagonal in the cell-major layout; corner carries the periodic wrap bond
    n = psi.shape[0]
    for i in range(n):
        acc = diag[i] * psi[i]
        if i + 1 < n:
            acc += up[i] * psi[i + 1]
        if i > 0:
            acc += lo[i - 1] * psi[i - 1]
        if eta != 0.0:
            acc += eta * (psi[i].real ** 2 + psi[i].imag ** 2) * psi[i]
        out[i] = -1j * acc
    out[0] += -1j * corner[0] * psi[n - 1]
    out[n - 1] += -1j * corner[1] * psi[0]


@njit(cache=True)
def _rk4(diag, up, lo, corner, eta, psi, dt, work):
    k1, k2, k3, k4, tmp = work[0], work[1], work[2], work[3], work[4]
    _deriv(diag, up, lo, corner, eta, psi, k1)
    for i in range(psi.shape[0]):
        tmp[i] = psi[i] + 0.5 * dt * k1[i]
    _deriv(diag, up, lo, corner, eta, tmp, k2)
    for i in range(psi.shape[0]):
        tmp[i] = psi[i] + 0.5 * dt * k2[i]
    _deriv(diag, up, lo, corner, eta, tmp, k3)
    for i in range(psi.shape[0]):
        tmp[i] = psi[i] + dt * k3[i]
    _deriv(diag, up, lo, corner, eta, tmp, k4)
    res = np.empty_like(psi)
    for i in range(psi.shape[0]):
        res[i] = psi[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return res


@njit(cache=True)
def _advance(bands, eta, psi, span, step, max_step, rel_tol, cap, min_step, budget):
    """Advance psi by exactly ``span`` with step-doubling RK4.

    Status: 0 ok, 1 diverged, 2 stalled, 3 over budget.
    """
    diag, up, lo, corner = bands
    work = np.empty((5, psi.shape[0]), dtype=np.complex128)
    remaining = span
    used = 0
    # substeps are span / 2**j, so anything left below this is summation residue
    while remaining > 1e-9 * span:
        last = step >= remaining * (1.0 - 1e-12)
        hh = remaining if last else step
        full = _rk4(diag, up, lo, corner, eta, psi, hh, work)
        mid = _rk4(diag, up, lo, corner, eta, psi, 0.5 * hh, work)
        half = _rk4(diag, up, lo, corner, eta, mid, 0.5 * hh, work)
        norm = np.sqrt(np.sum(half.real**2 + half.imag**2))
        # local error per unit time keeps global error proportional to rel_tol
        diff = half - full
        err = np.sqrt(np.sum(diff.real**2 + diff.imag**2)) / 15.0 / hh
        if not np.isfinite(err) or err > rel_tol * norm:
            step = 0.5 * hh
            if step < min_step:
                return psi, step, used, 2
            continue
        psi = half
        used += 1
        remaining = 0.0 if last else remaining - hh
        if np.max(psi.real**2 + psi.imag**2) > cap:
            return psi, step, used, 1
        if used >= budget:
            return psi, step, used, 3
        if err < rel_tol * norm / 100.0 and 2.0 * hh <= max_step:
            step = 2.0 * hh
    return psi, step, used, 0


def _bands(h: np.ndarray):
    n = h.shape[0]
    diag = np.ascontiguousarray(np.diag(h))
    up = np.ascontiguousarray(np.diag(h, 1))
    lo = np.ascontiguousarray(np.diag(h, -1))
    corner = np.array([h[0, n - 1], h[n - 1, 0]], dtype=complex)
    rebuilt = np.diag(diag) + np.diag(up, 1) + np.diag(lo, -1)
    rebuilt[0, n - 1] += corner[0]
    rebuilt[n - 1, 0] += corner[1]
    if not np.array_equal(rebuilt, h):
        raise ValueError("Hamiltonian is not tridiagonal plus wrap corners")
    return diag, up, lo, corner


_STATUS = {0: "ok", 1: "diverged", 2: "stalled", 3: "budget"}


def evolve_nonlinear(
    spec: LatticeSpec,
    nl: NonlinearSpec,
    psi0: np.ndarray,
    ctrl: StepControl = StepControl(),
    *,
    stop_when: Optional[StopFn] = None,
) -> WaveTrajectory:
    """Integrate i dpsi/dt = H_PT psi + eta |psi|^2 psi.

    Samples land on multiples of ``ctrl.dt * ctrl.stride``.  Flags: ``"diverged"``
    (intensity above the cap), ``"stalled"`` (step below ``min_step``),
    ``"budget"`` (more than ``max_steps`` accepted substeps).
    """
    ctrl = ctrl.resolve(spec)
    bands = _bands(build_h_pt(spec))
    psi = np.ascontiguousarray(np.array(psi0, dtype=complex))
    if psi.shape != (spec.dim,):
        raise ValueError(f"psi0 has shape {psi.shape}, expected ({spec.dim},)")
    sample = ctrl.dt * ctrl.stride
    n_samples = int(round(ctrl.t_max / sample))
    times = [0.0]
    states = [psi.copy()]
    step = sample
    total = 0
    flag = "ok"
    for n in range(1, n_samples + 1):
        psi, step, used, status = _advance(
            bands, float(nl.eta), psi, sample, step, sample, ctrl.rel_tol,
            ctrl.intensity_cap, ctrl.min_step, ctrl.max_steps - total,
        )
        total += used
        if status != 0:
            flag = _STATUS[status]
            break
        t = n * sample
        times.append(t)
        states.append(psi.copy())
        if stop_when is not None and stop_when(t, psi):
            break
    return WaveTrajectory(
        np.array(times), np.array(states), Kind.NONLINEAR_PT, spec, flag, total, float(nl.eta), {"dt": sample}
    )


def intensity_map(traj: WaveTrajectory) -> list[tuple[float, int, str, float]]:
    """Rows (t, cell, sublattice, |psi|^2), time-major then cell then A/B."""
    if len(traj) == 0:
        raise ValueError("empty trajectory")
    n = traj.n_dimers
    half = n // 2
    inten = np.abs(traj.states) ** 2
    rows = []
    for t, row in zip(traj.times, inten):
        for j in range(n):
            rows.append((float(t), j - half, "A", float(row[2 * j])))
            rows.append((float(t), j - half, "B", float(row[2 * j + 1])))
    return rows


def intensity_csv(traj: WaveTrajectory) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "cell", "sublattice", "intensity"])
    for t, cell, sub, value in intensity_map(traj):
        writer.writerow([repr(t), cell, sub, repr(value)])
    return buf.getvalue()
