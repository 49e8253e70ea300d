"""Mean displacement of the walker and its quasiclassical decomposition.

The mean displacement is never built as an operator; it is evaluated as the
trajectory functional

    -4 gamma * sum_m m * int_0^T w(t) |<m,B|psi(t)>|^2 dt

with ``w = exp(-2 gamma t)`` for PT runs and ``w = 1`` for lossy runs.  In
both cases ``w |psi|^2`` is the lossy-frame intensity, whose total decays as
``-4 gamma sum_m |psi_mB|^2 w`` (the Kerr term is a real potential and does
not change this).  That identity bounds the part of the integral beyond T by
``M * w(T) ||psi(T)||^2``.

Under strong Kerr self-trapping lossy-frame weight can stay parked on gain
sites, so the bound stalls even though the integrand has died out.  The tail
estimate is therefore the smaller of that bound and an exponential envelope
fitted to the window maxima of ``4 gamma w sum_m |m| |psi_mB|^2``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy.integrate import simpson

from .bloch import EffectiveMass, effective_mass_inverse
from .lattice import BlochState, LatticeSpec, build_h_lossy, build_h_pt, localized_state
from .propagate import Kind, NonlinearSpec, StepControl, WaveTrajectory, evolve_linear, evolve_nonlinear
from .results import MeanDispResult

log = logging.getLogger(__name__)

CSV_COLUMNS = ("v_a", "v_b", "gamma", "theta", "phi", "eta", "mean_disp", "tail", "converged")


class FiniteSizeWarning(UserWarning):
    """The ballistic front may have reached the lattice edge within the horizon."""


class NotConvergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class QuasiclassicalModel:
    p0: float
    tau: float
    mu_inverse: float

    @property
    def drift(self) -> float:
        return self.p0 * self.mu_inverse * self.tau

    @classmethod
    def for_state(cls, spec: LatticeSpec, bloch: BlochState) -> "QuasiclassicalModel":
        return cls(bloch.momentum, 1.0 / (4.0 * spec.gamma), effective_mass_inverse(spec).mu_inverse)


def _weight(kind: Kind, gamma: float, t: np.ndarray) -> np.ndarray:
    if Kind(kind) is Kind.LINEAR_LOSSY:
        return np.ones_like(t)
    return np.exp(-2.0 * gamma * t)


def tail_bound(kind: Kind, gamma: float, half_width: int, t: float, psi: np.ndarray) -> float:
    """Rigorous upper bound on |remaining contribution| after time t."""
    w = 1.0 if Kind(kind) is Kind.LINEAR_LOSSY else math.exp(-2.0 * gamma * t)
    return half_width * w * float(np.vdot(psi, psi).real)


def envelope_tail(times: np.ndarray, magnitude: np.ndarray, window: float) -> float:
    """Remainder of int |integrand| dt beyond the last sample from an exponential envelope.

    The decay rate comes from the maxima over the last two windows; a
    non-decaying envelope gives ``inf``.
    """
    t_end = times[-1]
    if t_end < 2 * window:
        return math.inf
    last = magnitude[times >= t_end - window]
    prev = magnitude[(times >= t_end - 2 * window) & (times < t_end - window)]
    if len(last) == 0 or len(prev) == 0:
        return math.inf
    e_last, e_prev = float(last.max()), float(prev.max())
    if e_last == 0.0:
        return 0.0
    if not e_prev > e_last:
        return math.inf
    rate = math.log(e_prev / e_last) / window
    return e_last / rate


class TailMonitor:
    """Stateful ``stop_when`` hook: stop once the tail estimate falls below ``threshold``."""

    def __init__(self, kind: Kind, gamma: float, half_width: int, threshold: float):
        self.kind = Kind(kind)
        self.gamma = gamma
        self.cells = np.abs(np.arange(-half_width, half_width + 1))
        self.half_width = half_width
        self.threshold = threshold
        self.window = 1.0 / gamma
        self._t: list[float] = []
        self._e: list[float] = []

    def __call__(self, t: float, psi: np.ndarray) -> bool:
        bound = tail_bound(self.kind, self.gamma, self.half_width, t, psi)
        w = 1.0 if self.kind is Kind.LINEAR_LOSSY else math.exp(-2.0 * self.gamma * t)
        self._t.append(t)
        self._e.append(4.0 * self.gamma * w * float(np.abs(psi[1::2]) ** 2 @ self.cells))
        if bound < self.threshold:
            return True
        if len(self._t) % 8:
            return False
        return envelope_tail(np.array(self._t), np.array(self._e), self.window) < self.threshold


def mean_displacement(traj: WaveTrajectory, gamma: float, tol: float = 1e-4) -> MeanDispResult:
    """Mean displacement from a sampled trajectory by composite Simpson in time.

    Converged means the run ended normally, the remainder bound is below
    ``tol * max(1, |value|)`` and so is the contribution of the last window of
    length 1/gamma.
    """
    if gamma <= 0:
        raise ValueError("mean displacement requires gamma > 0")
    if len(traj) < 3:
        raise ValueError("trajectory needs at least 3 samples")
    n = traj.n_dimers
    half = n // 2
    cells = np.arange(-half, half + 1)
    t = traj.times
    b2 = np.abs(traj.states[:, 1::2]) ** 2
    w = _weight(traj.kind, gamma, t)
    integrand = (b2 @ cells) * w
    value = -4.0 * gamma * float(simpson(integrand, x=t))

    horizon = float(t[-1])
    scale = tol * max(1.0, abs(value))
    if traj.flag != "ok":
        return MeanDispResult(value, math.inf, horizon, False, traj.flag)

    window = t >= horizon - 1.0 / gamma
    if window.sum() >= 3:
        trailing = 4.0 * gamma * abs(float(simpson(integrand[window], x=t[window])))
    else:
        trailing = math.inf
    magnitude = 4.0 * gamma * (b2 @ np.abs(cells)) * w
    tail = min(
        tail_bound(traj.kind, gamma, half, horizon, traj.final),
        envelope_tail(t, magnitude, 1.0 / gamma),
    )
    converged = tail <= scale and trailing <= scale

    if traj.spec is not None:
        reach = 2.0 * max(traj.spec.v_a, traj.spec.v_b) * horizon
        if reach > half:
            warnings.warn(
                f"ballistic front 2*max(v_a,v_b)*T = {reach:.1f} exceeds M = {half}",
                FiniteSizeWarning,
                stacklevel=2,
            )
    return MeanDispResult(value, tail, horizon, converged, "ok" if converged else "horizon")


LINEAR_INTENSITY_CAP = 1e250


def default_control(spec: LatticeSpec, kind: Kind = Kind.LINEAR_PT) -> StepControl:
    """Horizon 1000/v_t sampled every 4 steps.

    Linear runs have no intensity scale, so their overflow guard sits just
    below the float range; Kerr runs keep the 1e12 guard.
    """
    cap = 1e12 if Kind(kind) is Kind.NONLINEAR_PT else LINEAR_INTENSITY_CAP
    return StepControl(t_max=1000.0 / spec.v_t, stride=4, intensity_cap=cap)


def simulate(
    spec: LatticeSpec,
    bloch: BlochState,
    kind: Kind = Kind.LINEAR_PT,
    eta: float = 0.0,
    ctrl: Optional[StepControl] = None,
    tol: float = 1e-4,
) -> WaveTrajectory:
    """Evolve the localized state until the tail estimate drops below ``tol / 2``."""
    if ctrl is None:
        ctrl = default_control(spec, kind)
    psi0 = localized_state(spec, 0, bloch)
    kind = Kind(kind)
    done = TailMonitor(kind, spec.gamma, spec.half_width, 0.5 * tol)
    if kind is Kind.NONLINEAR_PT:
        return evolve_nonlinear(spec, NonlinearSpec(eta), psi0, ctrl, stop_when=done)
    h = build_h_lossy(spec) if kind is Kind.LINEAR_LOSSY else build_h_pt(spec)
    return evolve_linear(h, psi0, ctrl, kind=kind, spec=spec, stop_when=done)


def realspace_mean_disp(
    spec: LatticeSpec,
    bloch: BlochState,
    kind: Kind = Kind.LINEAR_PT,
    eta: float = 0.0,
    ctrl: Optional[StepControl] = None,
    tol: float = 1e-4,
) -> MeanDispResult:
    """Tight-binding mean displacement for a walker started in the central dimer."""
    if spec.gamma <= 0:
        raise ValueError("mean displacement requires gamma > 0")
    traj = simulate(spec, bloch, kind, eta, ctrl, tol)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FiniteSizeWarning)
        return mean_displacement(traj, spec.gamma, tol)


def quasiclassical_part(
    spec: LatticeSpec,
    bloch: BlochState,
    gamma: float,
    base: MeanDispResult,
    full: MeanDispResult,
) -> float:
    """Non-quantized part: full(theta, phi) minus base(theta, phi=0)."""
    if not (base.converged and full.converged):
        raise NotConvergedError("quasiclassical part needs two converged mean displacements")
    if not math.isclose(gamma, spec.gamma):
        raise ValueError("gamma does not match the lattice spec")
    return full.value - base.value


@dataclass(frozen=True)
class MassFit:
    v_a: float
    v_b: float
    mu_inverse: float
    intercept: float
    residual: float
    n_samples: int

    @property
    def effective_mass(self) -> EffectiveMass:
        return EffectiveMass(self.mu_inverse)


def fit_effective_mass(
    samples: Iterable[tuple[LatticeSpec, BlochState, float, float]],
) -> list[MassFit]:
    """Least-squares slope of quasiclassical value against p0 / (4 gamma), one fit per v_a.

    Each sample is ``(spec, bloch, gamma, quasiclassical_value)``.
    """
    groups: dict[tuple[float, float], list[tuple[float, float]]] = {}
    for spec, bloch, gamma, value in samples:
        if gamma <= 0:
            raise ValueError("gamma must be > 0")
        groups.setdefault((spec.v_a, spec.v_b), []).append((bloch.momentum / (4.0 * gamma), value))

    fits = []
    for (v_a, v_b), pts in sorted(groups.items()):
        x = np.array([p[0] for p in pts])
        y = np.array([p[1] for p in pts])
        if np.count_nonzero(x) < 3:
            raise ValueError(f"need >= 3 samples with nonzero momentum at v_a={v_a}")
        if np.ptp(x) == 0:
            raise ValueError(f"rank-deficient design at v_a={v_a}: all p0/(4 gamma) identical")
        design = np.column_stack([x, np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
        fits.append(MassFit(v_a, v_b, float(coef[0]), float(coef[1]), resid, len(pts)))
    return fits


def result_row(spec: LatticeSpec, bloch: BlochState, result: MeanDispResult, eta: float = 0.0) -> dict:
    return {
        "v_a": spec.v_a,
        "v_b": spec.v_b,
        "gamma": spec.gamma,
        "theta": bloch.theta,
        "phi": bloch.phi,
        "eta": eta,
        "mean_disp": result.value,
        "tail": result.tail_estimate,
        "converged": result.converged,
    }
