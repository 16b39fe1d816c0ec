"""Gauge-invariant hydrodynamic fields extracted from the spinor state.

All quantities are built from the density n, the Pauli-vector density
Σ = Ψ†σΨ, and the complex momentum Π = Ψ†(-iħ∇)Ψ / n — never from any phase
choice of the electronic wavefunction.  Spatial derivatives are always taken
on the smooth fields (Ψ, Σ, n) and converted to derivatives of the unit
Bloch vector s = Σ/n by the quotient rule, so frozen low-density values are
never differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import HBAR
from .grid_spectral import (
    Grid2D,
    SpinorField,
    bilinear_sample,
    bilinear_valid,
    spectral_derivative,
)
from .model import ModelParams, coupling_field

__all__ = [
    "DEFAULT_EPSILON_TH",
    "PolarizationField",
    "MomentumFields",
    "GeometricTensorField",
    "sigma_and_density",
    "complex_momentum",
    "polarization_gradients",
    "geometric_tensor",
    "adiabatic_populations",
    "FieldState",
    "synthetic_polarization",
]

# Double-precision masking threshold on the nuclear density.
DEFAULT_EPSILON_TH = 1e-20


def sigma_and_density(state: SpinorField) -> tuple[np.ndarray, np.ndarray]:
    """Density n = |Ψ1|²+|Ψ2|² and Σ = Ψ†σΨ (shape (3, nx, ny)).

    |Σ| = n holds identically for a two-component pure state.
    """
    p1, p2 = state.psi[0], state.psi[1]
    cross = np.conj(p1) * p2
    n = (np.abs(p1) ** 2 + np.abs(p2) ** 2).real
    sigma = np.stack(
        [2.0 * cross.real, 2.0 * cross.imag, (np.abs(p1) ** 2 - np.abs(p2) ** 2).real]
    )
    return n, sigma


def _finite_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    """num/den with non-finite results (den ~ 0 or denormal) zeroed out."""
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        out = num / den
    return np.where(np.isfinite(out), out, 0.0)


def complex_momentum(state: SpinorField) -> tuple[np.ndarray, np.ndarray]:
    """Raw (π, w): real and osmotic parts of Ψ†(-iħ∇)Ψ / n.

    Points with (near) zero density are returned as zero; masking and
    freezing are the caller's policy (see FieldState).
    """
    grid = state.grid
    n = state.density()
    pi = np.empty((2, grid.nx, grid.ny))
    w = np.empty((2, grid.nx, grid.ny))
    for axis, k in (("x", 0), ("y", 1)):
        dpsi = spectral_derivative(grid, state.psi, axis, 1)
        num = -1j * HBAR * (np.conj(state.psi[0]) * dpsi[0] + np.conj(state.psi[1]) * dpsi[1])
        pi[k] = _finite_divide(num.real, n)
        w[k] = _finite_divide(num.imag, n)
    return pi, w


@dataclass
class PolarizationField:
    """Unit Bloch vector per grid point with a density-threshold validity mask.

    ``valid`` marks points whose current density exceeds ``epsilon_th``;
    values at invalid points are frozen copies of the last valid update.
    """

    grid: Grid2D
    s: np.ndarray  # (3, nx, ny)
    valid: np.ndarray  # bool (nx, ny)
    epsilon_th: float
    time: float = 0.0

    def sample(self, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bilinear samples re-normalized to unit length, plus a validity flag."""
        s_pts = bilinear_sample(self.grid, self.s, pts).real
        norm = np.sqrt(np.sum(s_pts**2, axis=0))
        s_pts = s_pts / np.where(norm > 0.0, norm, 1.0)
        return s_pts, bilinear_valid(self.grid, self.valid, pts)


@dataclass
class MomentumFields:
    """Mechanical (π) and osmotic (w) momentum per grid point, plus v = π/M."""

    grid: Grid2D
    pi: np.ndarray  # (2, nx, ny)
    w: np.ndarray  # (2, nx, ny)
    valid: np.ndarray
    epsilon_th: float
    mass: float
    time: float = 0.0

    @property
    def velocity(self) -> np.ndarray:
        return self.pi / self.mass

    def sample_pi(self, pts):
        return bilinear_sample(self.grid, self.pi, pts).real, bilinear_valid(
            self.grid, self.valid, pts
        )

    def sample_velocity(self, pts):
        v, ok = self.sample_pi(pts)
        return v / self.mass, ok


@dataclass
class GeometricTensorField:
    """Quantum geometric tensor q_kj per grid point (k, j over x, y).

    ``g = Re q`` is the Fubini-Study metric and ``curvature = -2ħ Im q_xy``
    the only independent Berry-curvature component in 2D.
    """

    grid: Grid2D
    q: np.ndarray  # complex, shape (2, 2, nx, ny)
    valid: np.ndarray

    @property
    def g(self) -> np.ndarray:
        return self.q.real

    @property
    def curvature(self) -> np.ndarray:
        return -2.0 * HBAR * self.q[0, 1].imag


def polarization_gradients(
    grid: Grid2D, n: np.ndarray, sigma: np.ndarray, s: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """∂s/∂x and ∂s/∂y via the quotient rule s_j = (∂_jΣ - s ∂_j n)/n."""
    out = []
    for axis in ("x", "y"):
        dsig = spectral_derivative(grid, sigma, axis, 1).real
        dn = spectral_derivative(grid, n, axis, 1).real
        out.append(_finite_divide(dsig - s * dn, n))
    return out[0], out[1]


def geometric_tensor_from_gradients(
    grid: Grid2D, s: np.ndarray, sx: np.ndarray, sy: np.ndarray,
    valid: np.ndarray | None = None,
) -> GeometricTensorField:
    """q_kj = (s_k·s_j + i s·(s_k × s_j)) / 4 from supplied gradients."""
    grads = (sx, sy)
    q = np.empty((2, 2, grid.nx, grid.ny), dtype=np.complex128)
    for k in range(2):
        for j in range(2):
            dot = np.sum(grads[k] * grads[j], axis=0)
            triple = np.sum(s * np.cross(grads[k], grads[j], axis=0), axis=0)
            q[k, j] = 0.25 * (dot + 1j * triple)
    if valid is None:
        valid = np.ones((grid.nx, grid.ny), dtype=bool)
    return GeometricTensorField(grid, q, valid)


def geometric_tensor(
    grid: Grid2D,
    n: np.ndarray,
    sigma: np.ndarray,
    s: np.ndarray,
    valid: np.ndarray | None = None,
) -> GeometricTensorField:
    """Quantum geometric tensor with quotient-rule spectral gradients."""
    sx, sy = polarization_gradients(grid, n, sigma, s)
    return geometric_tensor_from_gradients(grid, s, sx, sy, valid)


def adiabatic_populations(state: SpinorField, params: ModelParams) -> tuple[float, float]:
    """P_± = ∫ n (1 ± b·s)/2 computed as ∫ (n ± b·Σ)/2; exact on the seam.

    On the seam |B| = 0 the field direction is undefined and the integrand
    contributes n/2 to both branches, which is what b·Σ → 0 produces.
    """
    grid = state.grid
    n, sigma = sigma_and_density(state)
    bx, by = coupling_field(params, grid.X, grid.Y)
    bmag = np.sqrt(bx**2 + by**2)
    safe = np.where(bmag > 0.0, bmag, 1.0)
    b_dot_sigma = np.where(bmag > 0.0, (bx * sigma[0] + by * sigma[1]) / safe, 0.0)
    da = grid.cell_area
    p_plus = float(np.sum(0.5 * (n + b_dot_sigma)) * da)
    p_minus = float(np.sum(0.5 * (n - b_dot_sigma)) * da)
    return p_minus, p_plus


class FieldState:
    """Masked, frozen-update holder of the extracted fields.

    ``update`` recomputes n, Σ, s, π, w from a state and overwrites only the
    points whose density exceeds ``epsilon_th``; the rest keep their last
    valid value.  Construct either from analytic initial fields (preferred;
    valid everywhere at t = 0) or directly from a state.
    """

    def __init__(
        self,
        grid: Grid2D,
        mass: float,
        epsilon_th: float = DEFAULT_EPSILON_TH,
        state: SpinorField | None = None,
        init_fields: tuple | None = None,
    ):
        if epsilon_th < 0:
            raise ValueError("epsilon_th must be non-negative")
        self.grid = grid
        self.mass = float(mass)
        self.epsilon_th = float(epsilon_th)
        self.time = 0.0
        self.n = np.zeros(grid.shape)
        self.sigma = np.zeros((3, grid.nx, grid.ny))
        self.valid = np.zeros(grid.shape, dtype=bool)
        if init_fields is not None:
            s, pi, w, chi = init_fields
            self.s = np.array(s, dtype=float)
            self.pi = np.array(pi, dtype=float)
            self.w = np.array(w, dtype=float)
            self.chi = np.array(chi, dtype=np.complex128)
            if state is not None:
                n, sigma = sigma_and_density(state)
                self.n, self.sigma = n, sigma
                self.valid = n > self.epsilon_th
                self.time = state.time
        elif state is not None:
            self.s = np.zeros((3, grid.nx, grid.ny))
            self.s[0] = 1.0
            self.pi = np.zeros((2, grid.nx, grid.ny))
            self.w = np.zeros((2, grid.nx, grid.ny))
            self.chi = np.zeros((2, grid.nx, grid.ny), dtype=np.complex128)
            self.chi[0] = 1.0
            self.update(state)
        else:
            raise ValueError("provide a state, analytic init fields, or both")

    def update(self, state: SpinorField) -> "FieldState":
        if not self.grid.same_geometry(state.grid):
            raise ValueError("state grid does not match")
        n, sigma = sigma_and_density(state)
        ok = n > self.epsilon_th
        safe = np.where(ok, n, 1.0)
        for c in range(3):
            self.s[c] = np.where(ok, sigma[c] / safe, self.s[c])
        amp = np.sqrt(safe)
        for c in range(2):
            self.chi[c] = np.where(ok, state.psi[c] / amp, self.chi[c])
        pi, w = complex_momentum(state)
        for c in range(2):
            self.pi[c] = np.where(ok, pi[c], self.pi[c])
            self.w[c] = np.where(ok, w[c], self.w[c])
        self.n = n
        self.sigma = sigma
        self.valid = ok
        self.time = state.time
        return self

    @property
    def polarization(self) -> PolarizationField:
        return PolarizationField(self.grid, self.s, self.valid, self.epsilon_th, self.time)

    @property
    def momenta(self) -> MomentumFields:
        return MomentumFields(
            self.grid, self.pi, self.w, self.valid, self.epsilon_th, self.mass, self.time
        )

    def density_at(self, pts: np.ndarray) -> np.ndarray:
        return bilinear_sample(self.grid, self.n, pts).real


def synthetic_polarization(grid: Grid2D, s: np.ndarray, epsilon_th: float = 0.0) -> PolarizationField:
    """Wrap a prescribed unit-vector field as an everywhere-valid PolarizationField."""
    s = np.asarray(s, dtype=float)
    norm = np.sqrt(np.sum(s**2, axis=0))
    if not np.allclose(norm, 1.0, atol=1e-9):
        raise ValueError("synthetic polarization must be unit length everywhere")
    return PolarizationField(grid, s, np.ones(grid.shape, dtype=bool), epsilon_th)
