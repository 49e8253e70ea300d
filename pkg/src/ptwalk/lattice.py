"""Finite SSH dimer lattices: Hamiltonian pieces and localized initial states.

Index layout is cell-major: cells run m = -M..M and within a cell the A site
precedes the B site, so ``site_index(m, "A") == 2 * (m + M)``.

The inter-dimer bond joins ``(m, A)`` to ``(m - 1, B)``.  With this
orientation the Bloch off-diagonal element is ``v_a + v_b exp(ik)`` and a
walker started on ``(0, A)`` with ``v_a < v_b`` has mean displacement +1.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Boundary(str, enum.Enum):
    OPEN = "open"
    PERIODIC = "periodic"


@dataclass(frozen=True)
class LatticeSpec:
    """Physical parameters of a dimer lattice with ``n_dimers = 2M + 1`` cells."""

    n_dimers: int = 41
    v_a: float = 0.5
    v_b: float = 0.5
    gamma: float = 0.5
    boundary: Boundary = Boundary.OPEN

    def __post_init__(self):
        if int(self.n_dimers) != self.n_dimers or self.n_dimers < 3 or self.n_dimers % 2 == 0:
            raise ValueError(f"n_dimers must be an odd integer >= 3, got {self.n_dimers}")
        for name in ("v_a", "v_b", "gamma"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if self.v_a + self.v_b <= 0:
            raise ValueError("v_a + v_b must be positive")
        object.__setattr__(self, "boundary", Boundary(self.boundary))

    @classmethod
    def from_ratios(
        cls,
        va_ratio: float,
        gamma_ratio: float,
        n_dimers: int = 41,
        boundary: Boundary | str = Boundary.OPEN,
    ) -> "LatticeSpec":
        """Build a spec on the ``v_t = v_a + v_b = 1`` scale."""
        if not 0.0 <= va_ratio <= 1.0:
            raise ValueError(f"v_a/v_t must lie in [0, 1], got {va_ratio}")
        return cls(n_dimers, float(va_ratio), 1.0 - float(va_ratio), float(gamma_ratio), Boundary(boundary))

    @property
    def half_width(self) -> int:
        return self.n_dimers // 2

    @property
    def v_t(self) -> float:
        return self.v_a + self.v_b

    @property
    def dim(self) -> int:
        return 2 * self.n_dimers

    def cells(self) -> np.ndarray:
        return np.arange(-self.half_width, self.half_width + 1)


@dataclass(frozen=True)
class BlochState:
    """Point (theta, phi) on the single-dimer Bloch sphere."""

    theta: float = 0.0
    phi: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.theta <= np.pi:
            raise ValueError(f"theta out of [0, pi]: {self.theta}")
        if not np.isfinite(self.phi):
            raise ValueError(f"phi must be finite: {self.phi}")
        object.__setattr__(self, "phi", float(np.mod(self.phi, 2 * np.pi)))

    @property
    def amplitudes(self) -> tuple[complex, complex]:
        return (
            complex(np.cos(self.theta / 2)),
            complex(np.exp(1j * self.phi) * np.sin(self.theta / 2)),
        )

    @property
    def momentum(self) -> float:
        """Dimensionless transverse momentum sin(theta) sin(phi)."""
        return float(np.sin(self.theta) * np.sin(self.phi))


NORTH = BlochState(0.0, 0.0)
SOUTH = BlochState(np.pi, 0.0)


def site_index(spec: LatticeSpec, cell: int, sublattice: str) -> int:
    m = spec.half_width
    if abs(cell) > m:
        raise IndexError(f"cell {cell} outside [-{m}, {m}]")
    if sublattice not in ("A", "B"):
        raise ValueError(f"sublattice must be 'A' or 'B', got {sublattice!r}")
    return 2 * (cell + m) + (sublattice == "B")


def build_h0(spec: LatticeSpec) -> np.ndarray:
    """Hermitian hopping part: intra-dimer v_a bonds and inter-dimer v_b bonds."""
    n = spec.n_dimers
    h = np.zeros((spec.dim, spec.dim), dtype=complex)
    a = np.arange(n) * 2
    h[a, a + 1] = spec.v_a
    # A of cell j couples to B of cell j-1
    h[a[1:], a[:-1] + 1] = spec.v_b
    if spec.boundary is Boundary.PERIODIC:
        h[a[0], a[-1] + 1] = spec.v_b
    return h + h.conj().T


def build_gamma_pt(spec: LatticeSpec) -> np.ndarray:
    """Balanced gain (+i gamma on A) and loss (-i gamma on B)."""
    diag = np.tile([1j * spec.gamma, -1j * spec.gamma], spec.n_dimers)
    return np.diag(diag)


def build_gamma_lossy(spec: LatticeSpec) -> np.ndarray:
    """Passive loss -2i gamma on B sites only."""
    diag = np.tile([0.0, -2j * spec.gamma], spec.n_dimers)
    return np.diag(diag)


def build_h_pt(spec: LatticeSpec) -> np.ndarray:
    return build_h0(spec) + build_gamma_pt(spec)


def build_h_lossy(spec: LatticeSpec) -> np.ndarray:
    return build_h0(spec) + build_gamma_lossy(spec)


def translation_operator(spec: LatticeSpec) -> np.ndarray:
    """Permutation shifting every site by one cell (cyclically)."""
    perm = (np.arange(spec.dim) + 2) % spec.dim
    t = np.zeros((spec.dim, spec.dim))
    t[perm, np.arange(spec.dim)] = 1.0
    return t


def localized_state(spec: LatticeSpec, cell: int = 0, bloch: BlochState = NORTH) -> np.ndarray:
    """cos(theta/2)|cell,A> + exp(i phi) sin(theta/2)|cell,B>."""
    psi = np.zeros(spec.dim, dtype=complex)
    i = site_index(spec, cell, "A")
    psi[i], psi[i + 1] = bloch.amplitudes
    return psi
