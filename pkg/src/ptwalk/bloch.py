"""Momentum-space analytics of the PT-symmetric SSH chain.

Everything here works on the 2x2 Bloch Hamiltonian ``h(k) . sigma`` with
``h_x + i h_y = v_a + v_b exp(ik)`` and ``h_z = i gamma``.  The propagator and
the g-functions only depend on ``lambda(k)**2``, so they are evaluated through
the even functions ``cos(lambda t)`` and ``sin(lambda t) / lambda`` written in
terms of ``lambda**2``; no square-root branch is ever chosen for them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .lattice import BlochState, LatticeSpec
from .results import MeanDispResult

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

EP_TAYLOR_CUTOFF = 1e-4
BRANCH_EPS = 1e-9


class BranchPointError(ValueError):
    """Raised at the gap-closing point v_a = v_b, k = pi where the phase is undefined."""


@dataclass(frozen=True)
class BlochHamiltonian:
    k: float
    h_x: float
    h_y: float
    h_z: complex

    @property
    def matrix(self) -> np.ndarray:
        return self.h_x * SIGMA_X + self.h_y * SIGMA_Y + self.h_z * SIGMA_Z


@dataclass(frozen=True)
class PolarFactor:
    u: float
    theta: float


@dataclass(frozen=True)
class BandEigen:
    lambda_plus: complex
    lambda_minus: complex


@dataclass(frozen=True)
class WindingResult:
    winding: int
    well_defined: bool


@dataclass(frozen=True)
class EffectiveMass:
    mu_inverse: float


@dataclass(frozen=True)
class QuadratureControl:
    """Knobs for the momentum-space evaluation of the mean displacement."""

    envelope_tol: float = 1e-10
    panel_width: float = 0.25
    panel_nodes: int = 8
    dk: float = 1e-4
    t_cap: float = 5000.0


def offdiag(spec: LatticeSpec, k):
    """The complex number v_a + v_b exp(ik)."""
    return spec.v_a + spec.v_b * np.exp(1j * np.asarray(k))


def lambda_squared(spec: LatticeSpec, k):
    return spec.v_a**2 + spec.v_b**2 + 2 * spec.v_a * spec.v_b * np.cos(k) - spec.gamma**2


def bloch_hamiltonian(spec: LatticeSpec, k: float) -> BlochHamiltonian:
    z = offdiag(spec, k)
    return BlochHamiltonian(float(k), float(z.real), float(z.imag), 1j * spec.gamma)


def _root(lam2):
    lam2 = np.asarray(lam2, dtype=float)
    return np.where(lam2 >= 0, np.sqrt(np.abs(lam2)) + 0j, 1j * np.sqrt(np.abs(lam2)))


def band_eigenvalues(spec: LatticeSpec, k: float) -> BandEigen:
    lam = complex(_root(lambda_squared(spec, k)))
    return BandEigen(lam, -lam)


def pt_threshold(spec: LatticeSpec) -> float:
    return abs(spec.v_a - spec.v_b)


def full_break_scale(spec: LatticeSpec) -> float:
    """Above this gain-loss strength every eigenvalue is complex."""
    return spec.v_a + spec.v_b


def max_imag_lambda(spec: LatticeSpec) -> float:
    """Largest growth rate Im lambda over the Brillouin zone (attained at k = pi)."""
    return float(np.sqrt(max(0.0, spec.gamma**2 - (spec.v_a - spec.v_b) ** 2)))


def cos_sinc(lam2, t, damping: float = 0.0):
    """Return (cos(lambda t), sin(lambda t)/lambda) as real functions of lambda**2.

    Close to an exceptional point (|lambda| t small) fourth-order Taylor
    series replace the closed forms.  Both outputs are multiplied by
    ``exp(-damping t)``; for imaginary lambda the factor is folded into the
    exponentials so long horizons do not overflow.
    """
    lam2, t = np.broadcast_arrays(np.asarray(lam2, dtype=float), np.asarray(t, dtype=float))
    x = lam2 * t * t
    c = np.empty(x.shape)
    s = np.empty(x.shape)
    small = np.abs(x) < EP_TAYLOR_CUTOFF**2
    pos = (x > 0) & ~small
    neg = (x < 0) & ~small

    xs, ts = x[small], t[small]
    env = np.exp(-damping * ts)
    c[small] = env * (1 - xs / 2 + xs * xs / 24)
    s[small] = env * ts * (1 - xs / 6 + xs * xs / 120)

    w = np.sqrt(lam2[pos])
    tp = t[pos]
    env = np.exp(-damping * tp)
    c[pos] = env * np.cos(w * tp)
    s[pos] = env * np.sin(w * tp) / w

    kappa = np.sqrt(-lam2[neg])
    tn = t[neg]
    grow = np.exp((kappa - damping) * tn)
    shrink = np.exp(-(kappa + damping) * tn)
    c[neg] = (grow + shrink) / 2
    s[neg] = (grow - shrink) / (2 * kappa)
    return c, s


def propagator_k(spec: LatticeSpec, k: float, t: float) -> np.ndarray:
    """exp(-i h(k).sigma t) = cos(lambda t) I - i h.sigma sin(lambda t)/lambda."""
    if t < 0:
        raise ValueError("t must be >= 0")
    c, s = cos_sinc(lambda_squared(spec, k), t)
    h = bloch_hamiltonian(spec, k).matrix
    return float(c) * np.eye(2) - 1j * float(s) * h


def polar_factor(spec: LatticeSpec, k: float) -> PolarFactor:
    z = complex(offdiag(spec, k))
    if abs(z) <= BRANCH_EPS * spec.v_t:
        raise BranchPointError(f"v_a + v_b exp(ik) vanishes at k={k}")
    return PolarFactor(abs(z), float(np.angle(z)))


def g_functions(spec: LatticeSpec, k, t):
    """The real pair (g_A, g_B) = (u sin(lambda t)/lambda, cos(lambda t) - gamma sin(lambda t)/lambda)."""
    if np.any(np.asarray(t) < 0):
        raise ValueError("t must be >= 0")
    c, s = cos_sinc(lambda_squared(spec, k), t)
    u = np.abs(offdiag(spec, k))
    return u * s, c - spec.gamma * s


def _required_grid(spec: LatticeSpec) -> int:
    # A chord between neighbouring grid points must not cross the origin:
    # its sagitta v_b (dk)^2 / 8 has to stay below the distance |v_a - v_b|.
    gap = abs(spec.v_a - spec.v_b)
    if spec.v_b == 0:
        return 0
    return int(np.ceil(4 * np.pi * np.sqrt(spec.v_b / (2 * gap))))


def winding_number(spec: LatticeSpec, n_k: int = 2048) -> WindingResult:
    """Count how often v_a + v_b exp(ik) winds around the origin as k crosses the zone."""
    if n_k < 64:
        raise ValueError("n_k must be >= 64")
    if abs(spec.v_a - spec.v_b) <= BRANCH_EPS * spec.v_t:
        raise BranchPointError("winding number undefined at v_a = v_b")
    n = max(n_k, _required_grid(spec))
    k = np.linspace(0.0, 2 * np.pi, n + 1)
    phase = np.angle(offdiag(spec, k))
    steps = np.diff(phase)
    steps = (steps + np.pi) % (2 * np.pi) - np.pi
    total = steps.sum() / (2 * np.pi)
    winding = int(round(total))
    if abs(total - winding) > 1e-6:
        raise RuntimeError(f"phase accumulation not quantized: {total}")
    return WindingResult(winding, True)


def effective_mass_inverse(spec: LatticeSpec) -> EffectiveMass:
    """Inverse effective mass min(v_a, v_b**2 / v_a)."""
    if spec.v_a <= 0:
        raise ValueError("effective mass undefined for v_a = 0")
    return EffectiveMass(min(spec.v_a, spec.v_b**2 / spec.v_a))


def effective_mass_quadrature(spec: LatticeSpec, n_k: int = 2048, dk: float = 1e-5) -> float:
    """Inverse effective mass as -(1/pi) oint dk (du/dk) sin Theta(k).

    This normalization is the one under which the drift term of the mean
    displacement equals p0 * mu_inverse / (4 gamma).  du/dk is a central
    difference; the k integral is a midpoint rule on the periodic integrand.
    """
    k = 2 * np.pi * (np.arange(n_k) + 0.5) / n_k
    du = (np.abs(offdiag(spec, k + dk)) - np.abs(offdiag(spec, k - dk))) / (2 * dk)
    return float(-2.0 * np.mean(du * np.sin(np.angle(offdiag(spec, k)))))


def analytic_mean_disp(spec: LatticeSpec, bloch: BlochState) -> float:
    """Infinite-lattice mean displacement: topological plateau plus quasiclassical drift."""
    if spec.gamma <= 0:
        raise ValueError("mean displacement requires gamma > 0")
    w = winding_number(spec).winding
    topological = np.cos(bloch.theta / 2) ** 2 * w
    if bloch.momentum == 0.0:
        return float(topological)
    drift = bloch.momentum * effective_mass_inverse(spec).mu_inverse / (4 * spec.gamma)
    return float(topological + drift)


def _g_of_k(spec: LatticeSpec, bloch: BlochState, k, t, damping=0.0):
    c, s = cos_sinc(lambda_squared(spec, k), t, damping)
    amp_a, amp_b = bloch.amplitudes
    return -1j * amp_a * s * offdiag(spec, k) + amp_b * (c - spec.gamma * s)


def kspace_mean_disp(
    spec: LatticeSpec,
    bloch: BlochState,
    n_k: int = 2048,
    quad: QuadratureControl = QuadratureControl(),
) -> MeanDispResult:
    """Mean displacement from the Brillouin-zone integral of g* dg/dk.

    The k integral is a uniform trapezoid (the integrand is periodic); time is
    integrated panel by panel with Gauss-Legendre nodes until the decay
    envelope exp(-2 (gamma - max Im lambda) t) drops below ``envelope_tol``.
    """
    if spec.gamma <= 0:
        raise ValueError("mean displacement requires gamma > 0")
    rate = 2 * (spec.gamma - max_imag_lambda(spec))
    if rate > 0:
        horizon = min(-np.log(quad.envelope_tol) / rate, quad.t_cap)
    else:
        horizon = quad.t_cap
    n_panels = max(1, int(np.ceil(horizon / quad.panel_width)))
    width = horizon / n_panels

    k = 2 * np.pi * np.arange(n_k) / n_k
    nodes, weights = np.polynomial.legendre.leggauss(quad.panel_nodes)
    kk = k[:, None]
    acc = 0j
    last = 0j
    for p in range(n_panels):
        t = p * width + (nodes + 1) * width / 2
        w = weights * width / 2
        # exp(-2 gamma t) is split evenly between g* and dg/dk
        g = _g_of_k(spec, bloch, kk, t, spec.gamma)
        gp = _g_of_k(spec, bloch, kk + quad.dk, t, spec.gamma)
        gm = _g_of_k(spec, bloch, kk - quad.dk, t, spec.gamma)
        dg = (gp - gm) / (2 * quad.dk)
        last = np.mean(np.conj(g) * dg, axis=0) @ w
        acc += last
    value = -4j * spec.gamma * acc
    if rate > 0:
        tail = 4 * spec.gamma * abs(last) / width / rate
    else:
        tail = float("inf")
    converged = bool(horizon < quad.t_cap and tail <= 1e-6 * max(1.0, abs(value)))
    return MeanDispResult(
        value=float(value.real),
        tail_estimate=float(tail),
        horizon=float(horizon),
        converged=converged,
        flag="ok" if converged else "horizon",
        imag_residue=float(abs(value.imag)),
    )
