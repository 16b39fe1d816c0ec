"""Electromotive-force fields, their loop circulations, and the polarization
equation-of-motion residual.

The rate of change of the closed-loop phase splits into three gauge-invariant
circulations: a non-Born-Oppenheimer part driven by the electronic
Hamiltonian, a pseudo-electric part carrying the metric/torque physics, and a
pseudo-magnetic drift part present only for current-carrying states.  Each is
the circulation of a 1-form f·ds along the Bloch image of the loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .constants import HBAR
from .fields import FieldState, _finite_divide, polarization_gradients
from .geometry import GeometryError, LoopPath, midpoint_deltas
from .grid_spectral import Grid2D, SpinorField, bilinear_sample, bilinear_valid, spectral_derivative
from .model import ModelParams, coupling_field

__all__ = [
    "EmfFields",
    "EmfBreakdown",
    "emf_fields",
    "emf_circulations",
    "sphere_form_circulations",
    "realspace_circulations",
    "polarization_eom_residual",
    "EomResidual",
]


@dataclass
class EmfFields:
    """The three force fields over the grid, masked where the density is
    below threshold (masked points are zeroed; circulations report coverage)."""

    grid: Grid2D
    f_nbo: np.ndarray  # (3, nx, ny)
    f_el: np.ndarray
    f_mag: np.ndarray
    valid: np.ndarray
    time: float = 0.0


@dataclass
class EmfBreakdown:
    """Loop circulations at one time; e_total ≈ -dΓ/dt when coverage is 1."""

    time: float
    path_id: str
    e_nbo: float
    e_el: float
    e_mag: float
    coverage: float
    fd_rate: float = float("nan")

    @property
    def e_total(self) -> float:
        return self.e_nbo + self.e_el + self.e_mag

    @property
    def reliable(self) -> bool:
        return self.coverage >= 1.0


def emf_fields(params: ModelParams, fstate: FieldState) -> EmfFields:
    """Assemble f_nbo = B/ħ, f_el and f_mag from Σ-derivatives and the
    masked momentum fields.

    f_el = -(w_j ∂_jΣ + ħ/2 ∂_j²Σ) / 2Mn,  f_mag = -(s × π_j ∂_jΣ) / 2Mn
    (sums over j implied); both are zeroed where the mask is invalid.
    """
    grid = fstate.grid
    n, sigma = fstate.n, fstate.sigma
    ok = fstate.valid
    safe_n = np.where(ok, n, 1.0)
    mass = fstate.mass

    bx, by = coupling_field(params, grid.X, grid.Y)
    f_nbo = np.stack([bx, by, np.zeros_like(bx)]) / HBAR

    acc_el = np.zeros((3, grid.nx, grid.ny))
    acc_mag = np.zeros((3, grid.nx, grid.ny))
    for axis, j in (("x", 0), ("y", 1)):
        dsig = spectral_derivative(grid, sigma, axis, 1).real
        d2sig = spectral_derivative(grid, sigma, axis, 2).real
        acc_el += fstate.w[j] * dsig + 0.5 * HBAR * d2sig
        acc_mag += fstate.pi[j] * dsig
    f_el = -acc_el / (2.0 * mass * safe_n)
    f_mag = -np.cross(fstate.s, acc_mag, axis=0) / (2.0 * mass * safe_n)
    f_el[:, ~ok] = 0.0
    f_mag[:, ~ok] = 0.0
    return EmfFields(grid, f_nbo, f_el, f_mag, ok, fstate.time)


def _image_deltas(fstate: FieldState, path: LoopPath):
    s_pts, ok = fstate.polarization.sample(path.points)
    return s_pts, midpoint_deltas(s_pts), ok


def emf_circulations(emf: EmfFields, fstate: FieldState, path: LoopPath) -> EmfBreakdown:
    """Circulations 𝔈_X = Σ_i f_X(x_i)·Δs_i with the same midpoint Δs as the
    phase formula.  Coverage below 1 flags the breakdown as unreliable."""
    if not path.closed:
        raise GeometryError("EMF circulations are defined for closed loops")
    path.check_resolution(emf.grid)
    s_pts, ds, ok = _image_deltas(fstate, path)
    ok = ok & bilinear_valid(emf.grid, emf.valid, path.points)
    coverage = float(np.count_nonzero(ok) / ok.size)
    parts = []
    for f in (emf.f_nbo, emf.f_el, emf.f_mag):
        f_pts = bilinear_sample(emf.grid, f, path.points).real
        parts.append(float(np.sum(f_pts * ds)))
    return EmfBreakdown(emf.time, path.label, parts[0], parts[1], parts[2], coverage)


def sphere_form_circulations(
    params: ModelParams, fstate: FieldState, path: LoopPath
) -> EmfBreakdown:
    """Debug route: the same circulations from the Bloch-sphere 1-forms.

    Uses Φ_nbo = B·ds/ħ, Φ_el = τ·ds/2 - ħ/(4M) Σ_j ∂_j s_j · ds and
    Φ_mag = (ν×s)·ds/2 with τ = Σ_j w_j s_j / M, ν = Σ_j π_j s_j / M.  Should
    match ``emf_circulations`` to discretization accuracy wherever the mask
    is fully valid.
    """
    grid = fstate.grid
    n, sigma = fstate.n, fstate.sigma
    ok = fstate.valid
    mass = fstate.mass
    sx, sy = polarization_gradients(grid, n, sigma, fstate.s)

    tau = (fstate.w[0] * sx + fstate.w[1] * sy) / mass
    nu = (fstate.pi[0] * sx + fstate.pi[1] * sy) / mass

    # Σ_j ∂_j s_j by the quotient rule on Σ and n.
    div_s = np.zeros((3, grid.nx, grid.ny))
    for axis, s_j in (("x", sx), ("y", sy)):
        d2sig = spectral_derivative(grid, sigma, axis, 2).real
        dn = spectral_derivative(grid, n, axis, 1).real
        d2n = spectral_derivative(grid, n, axis, 2).real
        div_s += _finite_divide(d2sig - 2.0 * dn * s_j - d2n * fstate.s, n)

    bx, by = coupling_field(params, grid.X, grid.Y)
    f_nbo = np.stack([bx, by, np.zeros_like(bx)]) / HBAR
    f_el = 0.5 * tau - HBAR / (4.0 * mass) * div_s
    f_mag = 0.5 * np.cross(nu, fstate.s, axis=0)
    for f in (f_el, f_mag):
        f[:, ~ok] = 0.0

    s_pts, ds, ok_pts = _image_deltas(fstate, path)
    ok_pts = ok_pts & bilinear_valid(grid, ok, path.points)
    coverage = float(np.count_nonzero(ok_pts) / ok_pts.size)
    parts = []
    for f in (f_nbo, f_el, f_mag):
        f_pts = bilinear_sample(grid, f, path.points).real
        parts.append(float(np.sum(f_pts * ds)))
    return EmfBreakdown(fstate.time, path.label, parts[0], parts[1], parts[2], coverage)


def realspace_circulations(
    params: ModelParams, fstate: FieldState, path: LoopPath
) -> EmfBreakdown:
    """The three circulations as real-space line integrals.

    Integrates the Ehrenfest-force, metric-force and curvature-drift vector
    fields along the loop with the trapezoid rule in x.  The metric and
    curvature enter through the smooth combinations n g_kj and n B_xy, which
    vanish with the density, so they can be assembled, masked below the
    density threshold and differentiated without amplifying dead points.
    Statistically much better conditioned than the Bloch-image sums when the
    image is rough; identical in the continuum limit.
    """
    if not path.closed:
        raise GeometryError("EMF circulations are defined for closed loops")
    grid = fstate.grid
    n, sigma = fstate.n, fstate.sigma
    ok = fstate.valid
    mass = fstate.mass
    s = fstate.s

    # n g_kj = (d_k Sigma - s d_k n)·(d_j Sigma - s d_j n) / 4n  and the
    # corresponding curvature density; both ~ n where the state is alive.
    dn = [spectral_derivative(grid, n, ax, 1).real for ax in ("x", "y")]
    dsig = [spectral_derivative(grid, sigma, ax, 1).real for ax in ("x", "y")]
    t_vec = [dsig[j] - s * dn[j] for j in range(2)]  # n * (d_j s)
    ng = np.empty((2, 2, grid.nx, grid.ny))
    for k in range(2):
        for j in range(2):
            ng[k, j] = _finite_divide(np.sum(t_vec[k] * t_vec[j], axis=0), 4.0 * n)
            ng[k, j][~ok] = 0.0
    ncurv = -0.5 * HBAR * _finite_divide(
        np.sum(s * np.cross(t_vec[0], t_vec[1], axis=0), axis=0), n
    )
    ncurv[~ok] = 0.0

    # Pseudo-electric force field: -hbar/M * (1/n) Σ_j d_j (n g_kj).
    f_el = np.empty((2, grid.nx, grid.ny))
    for k in range(2):
        div = (
            spectral_derivative(grid, ng[k, 0], "x", 1).real
            + spectral_derivative(grid, ng[k, 1], "y", 1).real
        )
        f_el[k] = -HBAR / mass * _finite_divide(div, n)
    f_el[:, ~ok] = 0.0

    # Curvature drift: -(1/ħ) Σ_j v^j B_kj with B_xy = -B_yx = curvature.
    curv = _finite_divide(ncurv, n)
    v = fstate.pi / mass
    f_mag = np.stack([v[1] * curv, -v[0] * curv]) / (-HBAR)
    f_mag[:, ~ok] = 0.0

    # Ehrenfest force circulation: -(1/ħ)(∂_k A + s·∂_k B); the conservative
    # ∂_k A part integrates to zero around the loop and is kept for fidelity.
    m = params.mass_au
    ax_grid = m * params.omega_x**2 * grid.X
    ay_grid = m * params.omega_y**2 * grid.Y
    f_nbo = np.stack(
        [ax_grid + params.kappa_x * s[0], ay_grid + params.kappa_y * s[1]]
    ) / (-HBAR)

    pts = path.points
    seg = path.segments()
    parts = []
    for f in (f_nbo, f_el, f_mag):
        f_pts = bilinear_sample(grid, f, pts).real
        v_avg = 0.5 * (f_pts + np.roll(f_pts, -1, axis=-1))
        parts.append(float(np.sum(v_avg[0] * seg[:, 0] + v_avg[1] * seg[:, 1])))
    ok_pts = bilinear_valid(grid, ok, pts)
    coverage = float(np.count_nonzero(ok_pts) / ok_pts.size)
    return EmfBreakdown(fstate.time, path.label, parts[0], parts[1], parts[2], coverage)


@dataclass
class EomResidual:
    """Pointwise residual of the polarization equation of motion."""

    grid: Grid2D
    residual: np.ndarray  # (3, nx, ny)
    s_dot: np.ndarray  # material derivative estimate, (3, nx, ny)
    r_dot_s: np.ndarray  # (nx, ny)
    omega: np.ndarray  # precession frequency 2|B|/ħ, (nx, ny)
    valid: np.ndarray

    def relative(self) -> np.ndarray:
        """‖r‖ / (‖ṡ‖ + Ω) over the grid."""
        r = np.sqrt(np.sum(self.residual**2, axis=0))
        sd = np.sqrt(np.sum(self.s_dot**2, axis=0))
        denom = sd + self.omega
        return np.where(denom > 0.0, r / np.where(denom > 0.0, denom, 1.0), 0.0)

    def median_relative(self) -> float:
        return float(np.median(self.relative()[self.valid]))

    def median_orthogonality(self) -> float:
        return float(np.median(np.abs(self.r_dot_s[self.valid])))


def polarization_eom_residual(
    state_minus: SpinorField,
    state_center: SpinorField,
    state_plus: SpinorField,
    params: ModelParams,
    epsilon_th: float,
) -> EomResidual:
    """Residual of ṡ = (Ωb + τ)×s - ħ/(2M) Σ_j ∂_j(s_j × s).

    The material derivative ṡ = ∂_t s + v·∇s uses a central difference
    between the bracketing snapshots and spectral spatial derivatives; all
    s-derivatives go through Σ and n so that only smooth fields are
    differentiated.  Valid where all three snapshots exceed the density
    threshold.
    """
    from .fields import complex_momentum, sigma_and_density

    grid = state_center.grid
    dt_bracket = state_plus.time - state_minus.time
    if dt_bracket <= 0:
        raise ValueError("state_plus must be later than state_minus")
    mass = params.mass_au

    def unit_s(state):
        n, sigma = sigma_and_density(state)
        return n, sigma, _finite_divide(sigma, n)

    n_m, _, s_m = unit_s(state_minus)
    n_c, sigma_c, s_c = unit_s(state_center)
    n_p, _, s_p = unit_s(state_plus)
    valid = (n_m > epsilon_th) & (n_c > epsilon_th) & (n_p > epsilon_th)

    dt_s = (s_p - s_m) / dt_bracket

    pi, w = complex_momentum(state_center)
    v = pi / mass
    sx, sy = polarization_gradients(grid, n_c, sigma_c, s_c)
    s_dot = dt_s + v[0] * sx + v[1] * sy

    bx, by = coupling_field(params, grid.X, grid.Y)
    omega = 2.0 * np.sqrt(bx**2 + by**2) / HBAR
    # Ω b has no seam singularity: Ω b = 2 B / ħ.
    torque = np.stack(
        [
            2.0 * bx / HBAR + (w[0] * sx[0] + w[1] * sy[0]) / mass,
            2.0 * by / HBAR + (w[0] * sx[1] + w[1] * sy[1]) / mass,
            (w[0] * sx[2] + w[1] * sy[2]) / mass,
        ]
    )
    rhs = np.cross(torque, s_c, axis=0)

    for axis, s_j in (("x", sx), ("y", sy)):
        d2sig = spectral_derivative(grid, sigma_c, axis, 2).real
        dn = spectral_derivative(grid, n_c, axis, 1).real
        d2n = spectral_derivative(grid, n_c, axis, 2).real
        dj_sj = _finite_divide(d2sig - 2.0 * dn * s_j - d2n * s_c, n_c)
        rhs -= 0.5 * HBAR / mass * np.cross(dj_sj, s_c, axis=0)

    residual = s_dot - rhs
    r_dot_s = np.sum(residual * s_c, axis=0)
    return EomResidual(grid, residual, s_dot, r_dot_s, omega, valid)
