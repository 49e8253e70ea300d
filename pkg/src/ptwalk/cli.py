"""Command-line front end.

Every output starts with ``#`` comment lines holding the fully resolved
configuration, followed by a CSV header row (or a single JSON document with
``--format json``).  Exit codes: 0 success, 2 usage error, 3 non-converged
points under ``--strict``.
"""

from __future__ import annotations

import argparse
import json
import math
import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .bloch import analytic_mean_disp, band_eigenvalues, kspace_mean_disp, pt_threshold
from .lattice import BlochState, Boundary, LatticeSpec, build_h_lossy, build_h_pt, localized_state
from .observables import realspace_mean_disp, result_row
from .propagate import Kind, NonlinearSpec, StepControl, evolve_linear, evolve_nonlinear, intensity_map
from .sweep import (
    BASE_COLUMNS,
    Axis,
    Table,
    classify_phase,
    sweep_coupling,
    sweep_effective_mass,
    sweep_gamma_map,
    sweep_nonlinear,
)

COMMANDS = (
    "spectrum", "evolve", "meandisp", "sweep-coupling", "sweep-gamma-map",
    "sweep-nonlinear", "fit-mass", "phase",
)

EXIT_OK, EXIT_USAGE, EXIT_NONCONVERGED = 0, 2, 3


class UsageError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


_ANGLE = re.compile(r"^([+-]?(?:\d+\.?\d*|\.\d+)?)\*?pi(?:/(\d+\.?\d*))?$")


def parse_angle(text) -> float:
    """Accept plain radians or forms like ``pi``, ``-pi/2``, ``2pi/3``."""
    if isinstance(text, (int, float)):
        return float(text)
    s = str(text).strip().replace(" ", "")
    m = _ANGLE.match(s)
    if m:
        coef = m.group(1)
        value = math.pi * (float(coef) if coef not in ("", "+", "-") else (-1.0 if coef == "-" else 1.0))
        return value / float(m.group(2)) if m.group(2) else value
    return float(s)


def _bloch_list(value) -> list[list[float]]:
    if isinstance(value, str):
        value = [p for p in value.split(";") if p.strip()]
    out = []
    for item in value:
        if isinstance(item, str):
            item = item.split(",")
        theta, phi = (parse_angle(x) for x in item)
        out.append([theta, phi])
    return out


@dataclass
class RunConfig:
    command: str
    va: float = 0.5
    vb: Optional[float] = None
    gamma: float = 0.5
    n: int = 41
    boundary: str = "open"
    theta: float = 0.0
    phi: float = 0.0
    blochs: list = field(default_factory=lambda: [[0.0, 0.0], [math.pi, 0.0]])
    eta: float = 0.0
    model: str = "pt"
    va_min: float = 0.0
    va_max: float = 1.0
    va_count: int = 33
    gamma_min: float = 0.1
    gamma_max: float = 1.0
    gamma_count: int = 10
    gammas: list = field(default_factory=lambda: [0.5, 1.0, 2.0])
    va_values: list = field(default_factory=lambda: [0.1, 0.2, 0.3, 0.4, 0.6, 0.7, 0.8, 0.9])
    n_k: int = 256
    kspace: bool = False
    dt: Optional[float] = None
    t_max: Optional[float] = None
    stride: int = 1
    rel_tol: float = 1e-8
    intensity_cap: float = 1e12
    max_steps: int = 10_000_000
    tol: float = 1e-4
    out: Optional[str] = None
    format: str = "csv"
    jobs: int = 1
    strict: bool = False
    seed: Optional[int] = None

    def lattice(self) -> LatticeSpec:
        vb = 1.0 - self.va if self.vb is None else self.vb
        return LatticeSpec(self.n, self.va, vb, self.gamma, Boundary(self.boundary))

    def bloch(self) -> BlochState:
        return BlochState(self.theta, self.phi)

    def to_dict(self) -> dict:
        return asdict(self)


# per-command defaults layered under the dataclass defaults
COMMAND_DEFAULTS = {
    "evolve": {"t_max": 10.0},
    "sweep-gamma-map": {"va_min": 0.05, "va_max": 0.95, "va_count": 19, "theta": math.pi / 2, "phi": math.pi / 2},
    "sweep-nonlinear": {"n": 21, "va_min": 0.1, "va_max": 0.9, "va_count": 21, "gamma_count": 21, "eta": 0.01},
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value):
    if value is None:
        return None
    try:
        if name in ("theta", "phi"):
            return parse_angle(value)
        if name == "blochs":
            return _bloch_list(value)
        if name in ("gammas", "va_values"):
            if isinstance(value, str):
                value = value.split(",")
            return [float(v) for v in value]
        kind = _FIELD_TYPES[name]
        if "bool" in kind:
            return bool(value)
        if "int" in kind:
            if float(value) != int(float(value)):
                raise ValueError("not an integer")
            return int(float(value))
        if "float" in kind:
            return float(value)
        return str(value)
    except (TypeError, ValueError) as exc:
        raise UsageError(name, f"cannot parse {value!r} ({exc})") from None


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.command not in COMMANDS:
        raise UsageError("command", f"unknown subcommand {cfg.command!r}")
    if not 0.0 <= cfg.theta <= math.pi:
        raise UsageError("theta", f"theta out of [0, pi]: {cfg.theta}")
    if not math.isfinite(cfg.phi):
        raise UsageError("phi", "phi must be finite")
    for name in ("va", "gamma", "eta", "tol"):
        if getattr(cfg, name) < 0:
            raise UsageError(name, "must be >= 0")
    if cfg.vb is not None and cfg.vb < 0:
        raise UsageError("vb", "must be >= 0")
    if cfg.vb is None and cfg.va > 1:
        raise UsageError("va", "without --vb, va is a ratio v_a/v_t and must lie in [0, 1]")
    if cfg.n < 3 or cfg.n % 2 == 0:
        raise UsageError("n", "n must be an odd integer >= 3")
    if cfg.boundary not in ("open", "periodic"):
        raise UsageError("boundary", "must be open or periodic")
    if cfg.format not in ("csv", "json"):
        raise UsageError("format", "must be csv or json")
    if cfg.model not in ("pt", "lossy", "nonlinear"):
        raise UsageError("model", "must be pt, lossy or nonlinear")
    if cfg.jobs < 1:
        raise UsageError("jobs", "must be >= 1")
    for b in cfg.blochs:
        if not 0.0 <= b[0] <= math.pi:
            raise UsageError("blochs", f"theta out of [0, pi]: {b[0]}")
    if cfg.command in ("sweep-coupling", "sweep-gamma-map", "sweep-nonlinear"):
        if cfg.va_count < 2:
            raise UsageError("va_count", "axis count must be >= 2")
        if not cfg.va_min < cfg.va_max:
            raise UsageError("va_min", "axis min must be < max")
        if not (0.0 <= cfg.va_min and cfg.va_max <= 1.0):
            raise UsageError("va_max", "v_a/v_t axis must lie in [0, 1]")
    if cfg.command in ("sweep-gamma-map", "sweep-nonlinear"):
        if cfg.gamma_count < 2:
            raise UsageError("gamma_count", "axis count must be >= 2")
        if not cfg.gamma_min < cfg.gamma_max:
            raise UsageError("gamma_min", "axis min must be < max")
    if cfg.command == "sweep-gamma-map" and cfg.gamma_min < 0.05:
        raise UsageError("gamma_min", "gamma axis must stay >= 0.05 v_t")
    if cfg.command in ("meandisp", "sweep-coupling", "fit-mass") and cfg.gamma <= 0:
        raise UsageError("gamma", "mean displacement needs gamma > 0")
    if cfg.command == "fit-mass" and any(g <= 0 for g in cfg.gammas):
        raise UsageError("gammas", "all gammas must be > 0")
    try:
        cfg.lattice()
        StepControl(cfg.dt, cfg.t_max or 1.0, cfg.rel_tol, cfg.intensity_cap, cfg.stride, cfg.max_steps)
    except ValueError as exc:
        raise UsageError("lattice", str(exc)) from None
    return cfg


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError("args", message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="JSON config file; flags override it")
    common.add_argument("--va", help="intra-dimer coupling (ratio v_a/v_t when --vb is omitted)")
    common.add_argument("--vb", help="inter-dimer coupling")
    common.add_argument("--gamma", help="gain-loss strength")
    common.add_argument("--n", help="number of dimers (odd)")
    common.add_argument("--boundary", help="open or periodic")
    common.add_argument("--theta", help="Bloch polar angle (radians, 'pi/2' accepted)")
    common.add_argument("--phi", help="Bloch azimuth")
    common.add_argument("--blochs", help="list 'theta,phi;theta,phi'")
    common.add_argument("--eta", help="Kerr coefficient")
    common.add_argument("--model", help="pt, lossy or nonlinear (evolve, meandisp)")
    for axis in ("va", "gamma"):
        common.add_argument(f"--{axis}-min", dest=f"{axis}_min")
        common.add_argument(f"--{axis}-max", dest=f"{axis}_max")
        common.add_argument(f"--{axis}-count", dest=f"{axis}_count")
    common.add_argument("--gammas", help="comma list (fit-mass)")
    common.add_argument("--va-values", dest="va_values", help="comma list (fit-mass)")
    common.add_argument("--n-k", dest="n_k")
    common.add_argument("--kspace", action="store_true", help="also run the momentum-space route (meandisp)")
    common.add_argument("--dt")
    common.add_argument("--t-max", dest="t_max")
    common.add_argument("--stride")
    common.add_argument("--rel-tol", dest="rel_tol")
    common.add_argument("--intensity-cap", dest="intensity_cap")
    common.add_argument("--max-steps", dest="max_steps")
    common.add_argument("--tol")
    common.add_argument("--out")
    common.add_argument("--format")
    common.add_argument("--jobs")
    common.add_argument("--strict", action="store_true")
    common.add_argument("--seed", help="reserved; nothing is stochastic")

    parser = _Parser(prog="ptwalk", description="Quantum walks on lossy and PT-symmetric dimer lattices.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def parse_config(argv) -> RunConfig:
    """Resolve dataclass defaults < command defaults < config file < flags."""
    ns = vars(build_parser().parse_args(argv))
    command = ns.pop("command")
    merged: dict = dict(COMMAND_DEFAULTS.get(command, {}))
    path = ns.pop("config", None)
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError("config", f"{path}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config", "config document must be a JSON object")
        doc.pop("command", None)
        merged.update(doc)
    merged.update(ns)
    values = {}
    for key, raw in merged.items():
        key = key.replace("-", "_")
        if key not in _FIELD_TYPES or key == "command":
            raise UsageError(key, "unknown option")
        values[key] = _coerce(key, raw)
    return validate(RunConfig(command=command, **values))


def _ctrl(cfg: RunConfig, default_t_max: float) -> StepControl:
    return StepControl(cfg.dt, cfg.t_max or default_t_max, cfg.rel_tol, cfg.intensity_cap,
                       cfg.stride, cfg.max_steps)


def _run_spectrum(cfg: RunConfig) -> Table:
    spec = cfg.lattice()
    rows = []
    for k in 2 * np.pi * np.arange(cfg.n_k) / cfg.n_k:
        lam = band_eigenvalues(spec, k).lambda_plus
        rows.append({"k": float(k), "re_lambda": lam.real, "im_lambda": lam.imag, "converged": True})
    point = classify_phase(spec)
    meta = {"gamma_pt": pt_threshold(spec), "v_t": spec.v_t, "phase": point.phase.value}
    return Table(["k", "re_lambda", "im_lambda"], rows, meta)


def _run_evolve(cfg: RunConfig) -> Table:
    spec = cfg.lattice()
    psi0 = localized_state(spec, 0, cfg.bloch())
    ctrl = _ctrl(cfg, 10.0)
    if cfg.model == "nonlinear":
        traj = evolve_nonlinear(spec, NonlinearSpec(cfg.eta), psi0, ctrl)
    elif cfg.model == "lossy":
        traj = evolve_linear(build_h_lossy(spec), psi0, ctrl, kind=Kind.LINEAR_LOSSY, spec=spec)
    else:
        traj = evolve_linear(build_h_pt(spec), psi0, ctrl, kind=Kind.LINEAR_PT, spec=spec)
    ok = traj.flag == "ok"
    rows = [{"t": t, "cell": c, "sublattice": s, "intensity": i, "converged": ok}
            for t, c, s, i in intensity_map(traj)]
    return Table(["t", "cell", "sublattice", "intensity"], rows, {"flag": traj.flag, "samples": len(traj)})


def _run_meandisp(cfg: RunConfig) -> Table:
    spec, bloch = cfg.lattice(), cfg.bloch()
    kind = {"pt": Kind.LINEAR_PT, "lossy": Kind.LINEAR_LOSSY, "nonlinear": Kind.NONLINEAR_PT}[cfg.model]
    ctrl = _ctrl(cfg, 1000.0 / spec.v_t) if (cfg.t_max or cfg.dt) else None
    result = realspace_mean_disp(spec, bloch, kind, cfg.eta, ctrl, cfg.tol)
    row = result_row(spec, bloch, result, cfg.eta)
    row.update(phase=classify_phase(spec).phase.value, flag=result.flag)
    try:
        row["analytic"] = analytic_mean_disp(spec, bloch)
    except ValueError:
        row["analytic"] = math.nan
    columns = BASE_COLUMNS + ["analytic"]
    if cfg.kspace:
        row["kspace"] = kspace_mean_disp(spec, bloch).value
        columns.append("kspace")
    return Table(columns, [row])


def _va_axis(cfg: RunConfig) -> Axis:
    return Axis("va", cfg.va_min, cfg.va_max, cfg.va_count)


def _gamma_axis(cfg: RunConfig) -> Axis:
    return Axis("gamma", cfg.gamma_min, cfg.gamma_max, cfg.gamma_count)


def _run_phase(cfg: RunConfig) -> Table:
    spec = cfg.lattice()
    p = classify_phase(spec)
    row = {"v_a": p.v_a, "v_b": p.v_b, "gamma": p.gamma, "gamma_pt": pt_threshold(spec), "v_t": spec.v_t,
           "phase": p.phase.value, "boundary": p.boundary, "converged": True}
    return Table(list(row)[:-1], [row])


def execute(cfg: RunConfig) -> Table:
    ctrl = _ctrl(cfg, 1000.0) if (cfg.t_max or cfg.dt) else None
    blochs = [BlochState(t, p) for t, p in cfg.blochs]
    if cfg.command == "spectrum":
        return _run_spectrum(cfg)
    if cfg.command == "evolve":
        return _run_evolve(cfg)
    if cfg.command == "meandisp":
        return _run_meandisp(cfg)
    if cfg.command == "phase":
        return _run_phase(cfg)
    if cfg.command == "sweep-coupling":
        return sweep_coupling(_va_axis(cfg), cfg.gamma, blochs, cfg.n, Boundary(cfg.boundary), cfg.tol, ctrl, cfg.jobs)
    if cfg.command == "sweep-gamma-map":
        return sweep_gamma_map(_va_axis(cfg), _gamma_axis(cfg), cfg.bloch(), cfg.n, cfg.tol, ctrl, cfg.jobs)
    if cfg.command == "sweep-nonlinear":
        return sweep_nonlinear(_va_axis(cfg), _gamma_axis(cfg), cfg.eta, cfg.n, cfg.tol, cfg.max_steps,
                               cfg.rel_tol, cfg.jobs)
    if cfg.command == "fit-mass":
        return sweep_effective_mass(cfg.va_values, cfg.gammas, _mass_blochs(cfg), cfg.n, cfg.tol, cfg.jobs)
    raise UsageError("command", cfg.command)


def _mass_blochs(cfg: RunConfig):
    # fit-mass needs states with momentum; the generic default list has none
    moving = [BlochState(t, p) for t, p in cfg.blochs if abs(math.sin(t) * math.sin(p)) > 0]
    if moving:
        return moving
    return [BlochState(math.pi / 2, math.pi / 2), BlochState(math.pi / 2, -math.pi / 2),
            BlochState(math.pi / 2, math.pi / 3)]


def render(table: Table, cfg: RunConfig) -> str:
    if cfg.format == "json":
        doc = {"ptwalk": __version__, "config": cfg.to_dict(), "columns": table.columns,
               "rows": table.rows, "summary": table.summary()}
        return json.dumps(doc, indent=1, default=_json_default) + "\n"
    header = {"ptwalk": __version__, **cfg.to_dict()}
    # wall time stays out of the CSV so identical configs give identical files
    header.update({k: v for k, v in table.meta.items() if k != "wall_time_s"})
    return table.to_csv(header)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return str(obj)


def run(cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    table = execute(cfg)
    text = render(table, cfg)
    if cfg.out:
        path = Path(cfg.out)
        try:
            path.write_text(text)
            if cfg.command.startswith("sweep") or cfg.command == "fit-mass":
                summary = {"config": cfg.to_dict(), **table.summary()}
                path.with_name(path.name + ".summary.json").write_text(
                    json.dumps(summary, indent=1, default=_json_default) + "\n"
                )
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc}") from exc
    else:
        stdout.write(text)
    failures = table.failures()
    stderr.write(f"{cfg.command}: {len(table.rows)} rows, {failures} not converged"
                 f"{' -> ' + cfg.out if cfg.out else ''}\n")
    if cfg.strict and failures:
        return EXIT_NONCONVERGED
    return EXIT_OK


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        sys.stderr.write(f"ptwalk: usage error: {exc}\n")
        return EXIT_USAGE
    try:
        return run(cfg)
    except OSError as exc:
        sys.stderr.write(f"ptwalk: {exc}\n")
        return 1
