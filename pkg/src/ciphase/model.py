"""Linear E⊗e Jahn-Teller electronic model and initial electron-nuclear states.

The electronic Hamiltonian is ``H_el(x) = A(x) σ0 + B(x)·σ`` with a harmonic
scalar part ``A = M(ωx² x² + ωy² y²)/2`` and a linear vibronic coupling
``B = (κx x, κy y, 0)``.  The adiabatic surfaces touch at the origin, the
conical-intersection point.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .constants import AMU_TO_AU, HBAR, OMEGA_1000_WAVENUMBERS
from .grid_spectral import Grid2D, SpinorField

__all__ = [
    "GAUGES",
    "INIT_KINDS",
    "ModelParams",
    "ElectronicHamiltonianSample",
    "electronic_hamiltonian",
    "scalar_potential",
    "coupling_field",
    "adiabatic_surfaces",
    "adiabatic_spinor",
    "berry_connection",
    "packet_center",
    "ground_widths",
    "initial_state",
    "initial_fields",
]

GAUGES = ("correlated-minus", "northern-plus", "southern-plus")
INIT_KINDS = ("correlated", "uncorrelated")


@dataclass
class ModelParams:
    """Model parameters in mixed units: mass in amu, everything else in a.u."""

    mass_amu: float = 1.0
    omega_x: float = OMEGA_1000_WAVENUMBERS
    omega_y: float = OMEGA_1000_WAVENUMBERS
    kappa_x: float = 0.1
    kappa_y: float = 0.1
    gauge: str = "correlated-minus"
    init_kind: str = "correlated"

    def __post_init__(self):
        if self.mass_amu <= 0:
            raise ValueError("mass_amu must be positive")
        if self.omega_x <= 0 or self.omega_y <= 0:
            raise ValueError("omega_x and omega_y must be positive")
        if self.gauge not in GAUGES:
            raise ValueError(f"gauge must be one of {GAUGES}")
        if self.init_kind not in INIT_KINDS:
            raise ValueError(f"init_kind must be one of {INIT_KINDS}")

    @property
    def mass_au(self) -> float:
        return self.mass_amu * AMU_TO_AU

    def with_(self, **kw) -> "ModelParams":
        return replace(self, **kw)


@dataclass
class ElectronicHamiltonianSample:
    """A(x) and the effective field B(x); B_z vanishes identically here."""

    A: float | np.ndarray
    B: np.ndarray  # shape (3, ...) in the order (Bx, By, Bz)

    @property
    def gap(self) -> float | np.ndarray:
        return 2.0 * np.sqrt(self.B[0] ** 2 + self.B[1] ** 2 + self.B[2] ** 2)


def scalar_potential(params: ModelParams, x, y):
    m = params.mass_au
    return 0.5 * m * (params.omega_x**2 * np.asarray(x) ** 2 + params.omega_y**2 * np.asarray(y) ** 2)


def coupling_field(params: ModelParams, x, y):
    return params.kappa_x * np.asarray(x), params.kappa_y * np.asarray(y)


def electronic_hamiltonian(params: ModelParams, x, y) -> ElectronicHamiltonianSample:
    bx, by = coupling_field(params, x, y)
    B = np.stack([bx, by, np.zeros_like(bx)])
    return ElectronicHamiltonianSample(scalar_potential(params, x, y), B)


def adiabatic_surfaces(params: ModelParams, x, y):
    """Returns (E_minus, E_plus) = A ∓/± |B|."""
    a = scalar_potential(params, x, y)
    bx, by = coupling_field(params, x, y)
    bmag = np.sqrt(bx**2 + by**2)
    return a - bmag, a + bmag


def _phase_vs_origin(x, y):
    """Azimuthal angle with the φ(0,0)=0 convention, plus an origin flag."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    at_origin = (x == 0.0) & (y == 0.0)
    return np.arctan2(y, x), at_origin


def adiabatic_spinor(params: ModelParams, x, y, branch: str, gauge: str | None = None):
    """Gauge-fixed eigenvector of b(x)·σ for the requested branch ('-' or '+').

    Returns ``(chi, at_origin)`` where ``chi`` has shape (2, ...) and
    ``at_origin`` flags points where the azimuth is undefined and the φ=0
    limit was used (the supported initial states put negligible density
    there).
    """
    if branch not in ("-", "+"):
        raise ValueError("branch must be '-' or '+'")
    gauge = params.gauge if gauge is None else gauge
    if gauge not in GAUGES:
        raise ValueError(f"gauge must be one of {GAUGES}")
    phi, at_origin = _phase_vs_origin(x, y)
    one = np.ones_like(phi)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    if gauge in ("correlated-minus", "southern-plus"):
        if branch == "-":
            chi = np.stack([-np.exp(-1j * phi), one + 0j]) * inv_sqrt2
        else:
            chi = np.stack([np.exp(-1j * phi), one + 0j]) * inv_sqrt2
    else:  # northern-plus
        if branch == "+":
            chi = np.stack([one + 0j, np.exp(1j * phi)]) * inv_sqrt2
        else:
            chi = np.stack([-(one + 0j), np.exp(1j * phi)]) * inv_sqrt2
    return chi, at_origin


def berry_connection(gauge: str, x, y):
    """Analytic Berry vector potential (A_x, A_y) of the gauge-fixed spinors.

    The correlated-minus / southern-plus family carries A = +e_φ/(2ρ), the
    northern-plus family A = -e_φ/(2ρ).  Undefined on the intersection seam;
    the origin entry is returned as 0.
    """
    if gauge not in GAUGES:
        raise ValueError(f"gauge must be one of {GAUGES}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rho2 = x**2 + y**2
    safe = np.where(rho2 > 0.0, rho2, 1.0)
    sign = -1.0 if gauge == "northern-plus" else 1.0
    ax = sign * (-y) / (2.0 * safe)
    ay = sign * x / (2.0 * safe)
    ax = np.where(rho2 > 0.0, ax, 0.0)
    ay = np.where(rho2 > 0.0, ay, 0.0)
    return ax, ay


def packet_center(params: ModelParams) -> tuple[float, float]:
    """Gaussian center: the minimum of the lower adiabatic surface on the
    negative x axis, x0 = -κx/(M ωx²), y0 = 0.

    Starting the packet in the valley keeps the dynamics adiabatic (tiny
    excited-state population) with radial turning points just inside the
    standard probe circles; a packet released at twice this distance would
    instead fall straight through the intersection point.
    """
    x0 = -params.kappa_x / (params.mass_au * params.omega_x**2)
    return x0, 0.0


def ground_widths(params: ModelParams) -> tuple[float, float]:
    """Harmonic ground-state widths sqrt(ħ/2Mω) along x and y."""
    m = params.mass_au
    return (
        np.sqrt(HBAR / (2.0 * m * params.omega_x)),
        np.sqrt(HBAR / (2.0 * m * params.omega_y)),
    )


def _gaussian_envelope(params: ModelParams, grid: Grid2D) -> np.ndarray:
    x0, y0 = packet_center(params)
    wx, wy = ground_widths(params)
    return np.exp(
        -((grid.X - x0) ** 2) / (4.0 * wx**2) - ((grid.Y - y0) ** 2) / (4.0 * wy**2)
    )


def initial_state(params: ModelParams, grid: Grid2D) -> SpinorField:
    """Ψ_σ(x) = ψ0(x) χ_σ(x), normalized to 1 on the grid.

    ψ0 is the real ground-width Gaussian at the packet center with zero
    nominal momentum; χ is the gauge-fixed lower adiabatic spinor for the
    'correlated' kind or its constant value at the packet center for the
    'uncorrelated' kind.  Raises if the Gaussian tail is not below machine
    epsilon at the box edge.
    """
    psi0 = _gaussian_envelope(params, grid)
    edge = max(
        psi0[0, :].max(), psi0[-1, :].max(), psi0[:, 0].max(), psi0[:, -1].max()
    )
    if edge > np.finfo(float).eps * psi0.max():
        raise ValueError(
            "initial Gaussian tail is not negligible at the box edge; enlarge the box"
        )
    if params.init_kind == "correlated":
        chi, _ = adiabatic_spinor(params, grid.X, grid.Y, "-")
    else:
        x0, y0 = packet_center(params)
        chi0, _ = adiabatic_spinor(params, x0, y0, "-")
        chi = np.broadcast_to(chi0[:, None, None], (2, grid.nx, grid.ny)).copy()
    state = SpinorField(grid, psi0[None, :, :] * chi, 0.0)
    return state.normalize()


def initial_fields(params: ModelParams, grid: Grid2D):
    """Analytic (s, pi, w, chi) of the initial state, valid on the whole grid.

    For the real Gaussian envelope the mechanical momentum is π = -ħ A with
    A the Berry connection of the chosen gauge ('correlated' kind) or zero
    ('uncorrelated' kind), the osmotic momentum is w = -ħ/2 ∇ln n, and chi
    is the normalized spinor Ψ/|Ψ| (the envelope is real positive).
    """
    x0, y0 = packet_center(params)
    wx, wy = ground_widths(params)

    if params.init_kind == "correlated":
        bx, by = coupling_field(params, grid.X, grid.Y)
        bmag = np.sqrt(bx**2 + by**2)
        safe = np.where(bmag > 0.0, bmag, 1.0)
        s = np.stack(
            [
                np.where(bmag > 0.0, -bx / safe, -1.0),
                np.where(bmag > 0.0, -by / safe, 0.0),
                np.zeros_like(bmag),
            ]
        )
        ax, ay = berry_connection(params.gauge, grid.X, grid.Y)
        pi = np.stack([-HBAR * ax, -HBAR * ay])
        chi, _ = adiabatic_spinor(params, grid.X, grid.Y, "-")
    else:
        bx0, by0 = coupling_field(params, x0, y0)
        bmag0 = float(np.hypot(bx0, by0))
        s0 = np.array([-bx0 / bmag0, -by0 / bmag0, 0.0])
        s = np.broadcast_to(s0[:, None, None], (3, grid.nx, grid.ny)).copy()
        pi = np.zeros((2, grid.nx, grid.ny))
        chi0, _ = adiabatic_spinor(params, x0, y0, "-")
        chi = np.broadcast_to(chi0[:, None, None], (2, grid.nx, grid.ny)).copy()

    w = np.stack(
        [
            0.5 * HBAR * (grid.X - x0) / wx**2,
            0.5 * HBAR * (grid.Y - y0) / wy**2,
        ]
    )
    return s, pi, w, chi
