"""Parameter-grid drivers for the coupling, gamma-map, nonlinear and mass-fit tables.

Every grid point is an independent pure task.  Tasks run in a process pool
when ``jobs > 1``; ``Executor.map`` hands results back in submission order,
so the table is identical whatever order workers finish in.  A failing
point becomes a flagged row, never a missing one.
"""

from __future__ import annotations

import csv
import enum
import io
import itertools
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .bloch import analytic_mean_disp, effective_mass_inverse
from .lattice import NORTH, BlochState, Boundary, LatticeSpec
from .observables import CSV_COLUMNS, fit_effective_mass, realspace_mean_disp, default_control
from .propagate import Kind, StepControl

BOUNDARY_RTOL = 1e-12
DEFAULT_NONLINEAR_BUDGET = 10_000_000


class Phase(str, enum.Enum):
    PT_SYMMETRIC = "PTSymmetric"
    PT_BROKEN = "PTBroken"
    FULLY_BROKEN = "FullyBroken"


@dataclass(frozen=True)
class PhasePoint:
    v_a: float
    v_b: float
    gamma: float
    phase: Phase
    boundary: bool = False


def classify_phase(spec: LatticeSpec) -> PhasePoint:
    """PT-symmetric below |v_a - v_b|, fully broken above v_a + v_b; equalities count as broken."""
    threshold = abs(spec.v_a - spec.v_b)
    full = spec.v_a + spec.v_b
    eps = BOUNDARY_RTOL * full
    g = spec.gamma
    on_edge = abs(g - threshold) <= eps or abs(g - full) <= eps
    if g < threshold - eps:
        phase = Phase.PT_SYMMETRIC
    elif g > full + eps:
        phase = Phase.FULLY_BROKEN
    else:
        phase = Phase.PT_BROKEN
    return PhasePoint(spec.v_a, spec.v_b, g, phase, on_edge)


@dataclass(frozen=True)
class Axis:
    name: str
    start: float
    stop: float
    count: int

    def __post_init__(self):
        if self.count < 2:
            raise ValueError(f"axis {self.name}: count must be >= 2")
        if not self.start < self.stop:
            raise ValueError(f"axis {self.name}: min must be < max")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.count)


@dataclass(frozen=True)
class SweepGrid:
    axes: tuple[Axis, ...]
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 1 <= len(self.axes) <= 2:
            raise ValueError("a sweep grid has one or two axes")

    @property
    def size(self) -> int:
        return math.prod(a.count for a in self.axes)

    def points(self) -> list[dict]:
        names = [a.name for a in self.axes]
        return [dict(zip(names, map(float, combo))) for combo in itertools.product(*(a.values() for a in self.axes))]


@dataclass
class Table:
    columns: list[str]
    rows: list[dict]
    meta: dict = field(default_factory=dict)

    def failures(self) -> int:
        return sum(1 for r in self.rows if not r["converged"])

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    def to_csv(self, header: Optional[dict] = None) -> str:
        buf = io.StringIO()
        for key, value in (header or {}).items():
            buf.write(f"# {key}: {json.dumps(value, sort_keys=True, default=str)}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.columns)
        for row in self.rows:
            writer.writerow([_fmt(row[c]) for c in self.columns])
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            "rows": len(self.rows),
            "failures": self.failures(),
            **self.meta,
        }


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


BASE_COLUMNS = list(CSV_COLUMNS) + ["phase", "flag"]


def run_tasks(fn: Callable, tasks: Sequence, jobs: int = 1) -> list:
    """Apply ``fn`` to every task, results in task order."""
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _base_row(spec: LatticeSpec, bloch: BlochState, eta: float) -> dict:
    row = {
        "v_a": spec.v_a, "v_b": spec.v_b, "gamma": spec.gamma,
        "theta": bloch.theta, "phi": bloch.phi, "eta": eta,
        "mean_disp": math.nan, "tail": math.inf, "converged": False,
        "phase": classify_phase(spec).phase.value, "flag": "ok",
    }
    return row


def _fill(row: dict, result) -> None:
    row["mean_disp"] = result.value
    row["tail"] = result.tail_estimate
    row["converged"] = result.converged
    row["flag"] = result.flag


def _safe_analytic(spec: LatticeSpec, bloch: BlochState) -> float:
    try:
        return analytic_mean_disp(spec, bloch)
    except ValueError:
        return math.nan


@dataclass(frozen=True)
class _PointTask:
    spec: LatticeSpec
    bloch: BlochState
    tol: float
    ctrl: Optional[StepControl] = None
    eta: float = 0.0


def _coupling_point(task: _PointTask) -> dict:
    row = _base_row(task.spec, task.bloch, 0.0)
    try:
        _fill(row, realspace_mean_disp(task.spec, task.bloch, Kind.LINEAR_PT, ctrl=task.ctrl, tol=task.tol))
    except Exception as exc:  # recorded, the sweep carries on
        row["flag"] = f"error: {exc}"
    row["analytic"] = _safe_analytic(task.spec, task.bloch)
    return row


def _timed(columns, rows, grid_meta, start) -> Table:
    meta = dict(grid_meta)
    meta["wall_time_s"] = round(time.perf_counter() - start, 3)
    return Table(columns, rows, meta)


def sweep_coupling(
    va_axis: Axis,
    gamma: float = 0.5,
    blochs: Iterable[BlochState] = (NORTH,),
    n_dimers: int = 41,
    boundary: Boundary = Boundary.OPEN,
    tol: float = 1e-4,
    ctrl: Optional[StepControl] = None,
    jobs: int = 1,
) -> Table:
    """Mean displacement against v_a/v_t at fixed gamma, one row per (v_a, Bloch state)."""
    if gamma <= 0:
        raise ValueError("gamma must be > 0")
    start = time.perf_counter()
    blochs = list(blochs)
    tasks = [
        _PointTask(LatticeSpec.from_ratios(p[va_axis.name], gamma, n_dimers, boundary), b, tol, ctrl)
        for p in SweepGrid((va_axis,)).points()
        for b in blochs
    ]
    rows = run_tasks(_coupling_point, tasks, jobs)
    meta = {"sweep": "coupling", "axes": [asdict(va_axis)], "gamma": gamma, "n_dimers": n_dimers,
            "blochs": [asdict(b) for b in blochs]}
    return _timed(BASE_COLUMNS + ["analytic"], rows, meta, start)


def _gamma_map_point(task: _PointTask) -> dict:
    spec, bloch = task.spec, task.bloch
    row = _base_row(spec, bloch, 0.0)
    row.update(base=math.nan, quasiclassical=math.nan, model=math.nan)
    try:
        full = realspace_mean_disp(spec, bloch, ctrl=task.ctrl, tol=task.tol)
        base = realspace_mean_disp(spec, BlochState(bloch.theta, 0.0), ctrl=task.ctrl, tol=task.tol)
        _fill(row, full)
        row["base"] = base.value
        row["converged"] = full.converged and base.converged
        row["tail"] = full.tail_estimate + base.tail_estimate
        if not base.converged:
            row["flag"] = f"base {base.flag}"
        row["quasiclassical"] = full.value - base.value
    except Exception as exc:
        row["flag"] = f"error: {exc}"
    if spec.v_a > 0:
        row["model"] = bloch.momentum * effective_mass_inverse(spec).mu_inverse / (4 * spec.gamma)
    return row


def sweep_gamma_map(
    va_axis: Axis,
    gamma_axis: Axis,
    bloch: BlochState,
    n_dimers: int = 41,
    tol: float = 1e-4,
    ctrl: Optional[StepControl] = None,
    jobs: int = 1,
) -> Table:
    """Quasiclassical part full(theta, phi) - base(theta, 0) over the (v_a/v_t, gamma/v_t) plane."""
    if gamma_axis.start < 0.05:
        raise ValueError("gamma axis must stay >= 0.05 v_t")
    start = time.perf_counter()
    tasks = [
        _PointTask(LatticeSpec.from_ratios(p[va_axis.name], p[gamma_axis.name], n_dimers), bloch, tol, ctrl)
        for p in SweepGrid((va_axis, gamma_axis)).points()
    ]
    rows = run_tasks(_gamma_map_point, tasks, jobs)
    meta = {"sweep": "gamma-map", "axes": [asdict(va_axis), asdict(gamma_axis)], "n_dimers": n_dimers,
            "bloch": asdict(bloch)}
    return _timed(BASE_COLUMNS + ["base", "quasiclassical", "model"], rows, meta, start)


def _nonlinear_point(task: _PointTask) -> dict:
    spec = task.spec
    row = _base_row(spec, NORTH, task.eta)
    row.update(baseline=math.nan, delta=math.nan)
    try:
        linear = realspace_mean_disp(spec, NORTH, Kind.LINEAR_PT, tol=task.tol)
        if task.eta == 0.0:
            result = linear
        else:
            result = realspace_mean_disp(spec, NORTH, Kind.NONLINEAR_PT, task.eta, task.ctrl, task.tol)
        _fill(row, result)
        row["baseline"] = linear.value
        row["converged"] = result.converged and linear.converged
        if not linear.converged:
            row["flag"] = f"baseline {linear.flag}"
        row["delta"] = result.value - linear.value
    except Exception as exc:
        row["flag"] = f"error: {exc}"
    return row


def nonlinear_control(spec: LatticeSpec, max_steps: int = DEFAULT_NONLINEAR_BUDGET,
                      rel_tol: float = 1e-8) -> StepControl:
    return replace(default_control(spec, Kind.NONLINEAR_PT), max_steps=max_steps, rel_tol=rel_tol)


def sweep_nonlinear(
    va_axis: Axis,
    gamma_axis: Axis,
    eta: float,
    n_dimers: int = 21,
    tol: float = 1e-4,
    max_steps: int = DEFAULT_NONLINEAR_BUDGET,
    rel_tol: float = 1e-8,
    jobs: int = 1,
) -> Table:
    """Change of the mean displacement caused by Kerr nonlinearity, walker on (0, A)."""
    if eta < 0:
        raise ValueError("eta must be >= 0")
    start = time.perf_counter()
    tasks = []
    for p in SweepGrid((va_axis, gamma_axis)).points():
        spec = LatticeSpec.from_ratios(p[va_axis.name], p[gamma_axis.name], n_dimers)
        tasks.append(_PointTask(spec, NORTH, tol, nonlinear_control(spec, max_steps, rel_tol), eta))
    rows = run_tasks(_nonlinear_point, tasks, jobs)
    meta = {"sweep": "nonlinear", "axes": [asdict(va_axis), asdict(gamma_axis)], "eta": eta,
            "n_dimers": n_dimers, "max_steps": max_steps, "rel_tol": rel_tol}
    return _timed(BASE_COLUMNS + ["baseline", "delta"], rows, meta, start)


def sweep_effective_mass(
    va_values: Sequence[float],
    gammas: Sequence[float] = (0.5, 1.0, 2.0),
    blochs: Sequence[BlochState] = (
        BlochState(np.pi / 2, np.pi / 2),
        BlochState(np.pi / 2, -np.pi / 2),
        BlochState(np.pi / 2, np.pi / 3),
    ),
    n_dimers: int = 41,
    tol: float = 1e-4,
    jobs: int = 1,
) -> Table:
    """Fit the inverse effective mass per v_a/v_t from tight-binding quasiclassical parts."""
    start = time.perf_counter()
    tasks = [
        _PointTask(LatticeSpec.from_ratios(va, g, n_dimers), b, tol)
        for va in va_values for g in gammas for b in blochs
    ]
    points = run_tasks(_gamma_map_point, tasks, jobs)
    samples = [
        (t.spec, t.bloch, t.spec.gamma, r["quasiclassical"])
        for t, r in zip(tasks, points)
        if r["converged"]
    ]
    rows = []
    fits = {(f.v_a, f.v_b): f for f in fit_effective_mass(samples)} if samples else {}
    for va in va_values:
        spec = LatticeSpec.from_ratios(va, 1.0, n_dimers)
        fit = fits.get((spec.v_a, spec.v_b))
        theory = effective_mass_inverse(spec).mu_inverse
        rows.append({
            "v_a": spec.v_a, "v_b": spec.v_b,
            "mu_inverse_fit": fit.mu_inverse if fit else math.nan,
            "mu_inverse_theory": theory,
            "intercept": fit.intercept if fit else math.nan,
            "residual": fit.residual if fit else math.nan,
            "n_samples": fit.n_samples if fit else 0,
            "converged": fit is not None,
        })
    meta = {"sweep": "fit-mass", "v_a": list(va_values), "gammas": list(gammas),
            "blochs": [asdict(b) for b in blochs], "n_dimers": n_dimers}
    columns = ["v_a", "v_b", "mu_inverse_fit", "mu_inverse_theory", "intercept", "residual", "n_samples", "converged"]
    return _timed(columns, rows, meta, start)
