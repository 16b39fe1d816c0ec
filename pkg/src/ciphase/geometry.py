"""Probe paths and phase functionals.

Two routes to the instantaneous phase are provided: the Bloch-sphere route
(circulation of the northern-gauge spin connection along the image of the
path under s) and the momentum route (line integral of -π·dl/ħ).  For closed
paths they agree mod 2π; the momentum route also applies to open paths,
where it splits into a Pancharatnam endpoint term and an electronic
parallel-transport term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import HBAR
from .grid_spectral import Grid2D, SpinorField, bilinear_sample
from .fields import MomentumFields, PolarizationField, complex_momentum

__all__ = [
    "GeometryError",
    "LoopPath",
    "PhaseRecord",
    "OpenPathPhases",
    "make_circle",
    "make_arc",
    "wrap_angle",
    "unwrap_towards",
    "midpoint_deltas",
    "northern_connection",
    "rotation_taking_to_pole",
    "loop_phase_from_s",
    "path_phase_from_momentum",
    "loop_phase_from_overlaps",
    "open_path_decomposition",
    "quantization_integer",
    "advect_path",
]

SAMPLINGS = ("bilinear", "grid-snapped")

# Pole-avoidance margin on s_z for the northern-gauge formula.
POLE_MARGIN = 0.05


class GeometryError(RuntimeError):
    pass


@dataclass
class LoopPath:
    """Ordered 2D points; for closed paths the first-last adjacency is implicit."""

    points: np.ndarray  # (P, 2)
    closed: bool = True
    sampling: str = "bilinear"
    label: str = ""

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=float))
        if self.points.shape[1] != 2:
            raise ValueError("path points must have shape (P, 2)")
        if self.sampling not in SAMPLINGS:
            raise ValueError(f"sampling must be one of {SAMPLINGS}")

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def segments(self) -> np.ndarray:
        """Displacement vectors between consecutive points (wraps if closed)."""
        if self.closed:
            return np.roll(self.points, -1, axis=0) - self.points
        return self.points[1:] - self.points[:-1]

    def max_spacing(self) -> float:
        seg = self.segments()
        return float(np.max(np.hypot(seg[:, 0], seg[:, 1]))) if len(seg) else 0.0

    def check_resolution(self, grid: Grid2D) -> None:
        limit = 2.0 * max(grid.dx, grid.dy)
        if self.max_spacing() > limit + 1e-12:
            raise GeometryError(
                f"path spacing {self.max_spacing():.4f} exceeds the 2*max(dx,dy)={limit:.4f} guard"
            )

    def reversed(self) -> "LoopPath":
        return LoopPath(self.points[::-1].copy(), self.closed, self.sampling, self.label)


@dataclass
class PhaseRecord:
    time: float
    gamma: float
    method: str  # "s-formula" | "momentum"
    path_id: str
    coverage: float

    @property
    def flagged(self) -> bool:
        return self.coverage < 1.0


@dataclass
class OpenPathPhases:
    gamma: float
    theta_ba: float
    gamma_el: float
    coverage: float = 1.0

    @property
    def identity_gap(self) -> float:
        """wrap(gamma - (-theta_ba + gamma_el)); zero in exact arithmetic."""
        return wrap_angle(self.gamma + self.theta_ba - self.gamma_el)


def wrap_angle(a):
    """Map angles to (-π, π]."""
    return -((-np.asarray(a) + np.pi) % (2.0 * np.pi) - np.pi)


def unwrap_towards(value: float, reference: float) -> float:
    """Shift ``value`` by the 2π multiple that brings it closest to ``reference``."""
    return value + 2.0 * np.pi * np.round((reference - value) / (2.0 * np.pi))


def make_circle(
    grid: Grid2D,
    radius: float,
    n_points: int,
    sampling: str = "bilinear",
    center: tuple[float, float] = (0.0, 0.0),
    label: str | None = None,
) -> LoopPath:
    """Closed circle centered on ``center``, uniform in angle.

    grid-snapped sampling maps every point to its nearest grid node and drops
    consecutive duplicates.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    if radius + max(abs(center[0]), abs(center[1])) >= min(grid.length_x, grid.length_y) / 2:
        raise ValueError("circle does not fit in the box")
    if n_points < 8:
        raise ValueError("need at least 8 points on a circle")
    ang = 2.0 * np.pi * np.arange(n_points) / n_points
    pts = np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])
    if label is None:
        label = f"R{radius:g}"
    if sampling == "grid-snapped":
        from .grid_spectral import nearest_node

        ix, iy = nearest_node(grid, pts)
        pts = np.column_stack([grid.x[ix], grid.y[iy]])
        keep = np.ones(len(pts), dtype=bool)
        keep[1:] = np.any(pts[1:] != pts[:-1], axis=1)
        if np.all(pts[-1] == pts[0]) and len(pts) > 1:
            keep[-1] = False
        pts = pts[keep]
    path = LoopPath(pts, closed=True, sampling=sampling, label=label)
    path.check_resolution(grid)
    return path


def make_arc(
    grid: Grid2D,
    radius: float,
    angle_start: float,
    angle_stop: float,
    n_points: int,
    center: tuple[float, float] = (0.0, 0.0),
    label: str = "arc",
) -> LoopPath:
    """Open circular arc from angle_start to angle_stop."""
    ang = np.linspace(angle_start, angle_stop, n_points)
    pts = np.column_stack([center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)])
    path = LoopPath(pts, closed=False, sampling="bilinear", label=label)
    path.check_resolution(grid)
    return path


def midpoint_deltas(values: np.ndarray) -> np.ndarray:
    """Δv_i = (v_{i+1} - v_{i-1})/2 with wraparound (closed paths only)."""
    return 0.5 * (np.roll(values, -1, axis=-1) - np.roll(values, 1, axis=-1))


def northern_connection(s_pts: np.ndarray) -> np.ndarray:
    """Spin-1/2 Berry connection of the northern gauge on the Bloch sphere.

    A(s) = -(e3 × s) / (2 (1 + s_z)), the nonsingular rewriting of
    -sqrt((1-s_z)/(1+s_z)) ê_φ / 2; singular only at the south pole.
    """
    sz = s_pts[2]
    denom = 2.0 * (1.0 + sz)
    return np.stack([s_pts[1] / denom, -s_pts[0] / denom, np.zeros_like(sz)])


def rotation_taking_to_pole(v: np.ndarray) -> np.ndarray:
    """Rotation matrix mapping the unit vector v onto +e3 (Rodrigues)."""
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    e3 = np.array([0.0, 0.0, 1.0])
    c = float(np.dot(v, e3))
    if c > 1.0 - 1e-12:
        return np.eye(3)
    if c < -1.0 + 1e-12:
        # 180° about x swaps the poles.
        return np.diag([1.0, -1.0, -1.0])
    axis = np.cross(v, e3)
    s = np.linalg.norm(axis)
    axis = axis / s
    K = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + s * K + (1.0 - c) * (K @ K)


def _pole_safe_frame(s_pts: np.ndarray, margin: float) -> np.ndarray:
    """Rotate the Bloch frame so the path image clears the south pole.

    The preferred new north pole is the image centroid (its antipode is then
    farthest from the curve); falls back to coordinate axes if the centroid
    is degenerate.  Raises if no candidate clears the margin.
    """
    if s_pts[2].min() >= -1.0 + margin:
        return s_pts
    candidates = []
    centroid = s_pts.mean(axis=1)
    if np.linalg.norm(centroid) > 1e-12:
        candidates.append(centroid / np.linalg.norm(centroid))
    for axis in np.vstack([np.eye(3), -np.eye(3)]):
        candidates.append(axis)
    best, best_min = None, -np.inf
    for cand in candidates:
        rot = rotation_taking_to_pole(cand) @ s_pts
        m = rot[2].min()
        if m > best_min:
            best, best_min = rot, m
    if best_min < -1.0 + margin:
        raise GeometryError(
            "path image covers the sphere; no pole-free rotation found"
        )
    return best


def loop_phase_from_s(
    pol: PolarizationField,
    path: LoopPath,
    pole_margin: float = POLE_MARGIN,
    strict: bool = False,
) -> PhaseRecord:
    """Closed-path phase from the Bloch image: sum of A(s_i)·Δs_i.

    Invalid samples carry frozen field values; the record's coverage reports
    the currently-valid fraction, and ``strict=True`` turns partial coverage
    into an error.
    """
    if not path.closed:
        raise GeometryError("the s-formula phase is defined for closed paths")
    path.check_resolution(pol.grid)
    s_pts, ok = pol.sample(path.points)
    coverage = float(np.count_nonzero(ok) / ok.size)
    if strict and coverage < 1.0:
        raise GeometryError(f"path has invalid samples (coverage {coverage:.3f})")
    s_use = _pole_safe_frame(s_pts, pole_margin)
    ds = midpoint_deltas(s_use)
    gamma = float(np.sum(northern_connection(s_use) * ds))
    return PhaseRecord(pol.time, gamma, "s-formula", path.label, coverage)


def _line_integral(vec_pts: np.ndarray, path: LoopPath) -> float:
    """Trapezoidal ∮/∫ v·dl for a sampled 2-vector field along the path."""
    if path.closed:
        v_avg = 0.5 * (vec_pts + np.roll(vec_pts, -1, axis=-1))
        seg = path.segments()
    else:
        v_avg = 0.5 * (vec_pts[:, 1:] + vec_pts[:, :-1])
        seg = path.segments()
    return float(np.sum(v_avg[0] * seg[:, 0] + v_avg[1] * seg[:, 1]))


def path_phase_from_momentum(mom: MomentumFields, path: LoopPath) -> PhaseRecord:
    """Γ[γ] = -(1/ħ) ∫_γ π·dl by the trapezoid rule (open or closed paths)."""
    path.check_resolution(mom.grid)
    pi_pts, ok = mom.sample_pi(path.points)
    coverage = float(np.count_nonzero(ok) / ok.size)
    gamma = -_line_integral(pi_pts, path) / HBAR
    return PhaseRecord(mom.time, gamma, "momentum", path.label, coverage)


def loop_phase_from_momentum_overlaps(fstate, path: LoopPath) -> PhaseRecord:
    """Masked momentum-circulation phase as a closed Wilson-loop product.

    Snaps the loop to grid nodes and accumulates -Σ arg⟨χ(x_i)|χ(x_{i+1})⟩
    over the stored (frozen-where-invalid) normalized spinors.  Per-node
    phases cancel around the closed product, every increment is bounded, and
    the continuum limit is the same -(1/ħ)∮π·dl as the trapezoid rule, which
    this evaluator replaces wherever near-nodal momentum spikes would wreck
    pointwise quadrature.
    """
    from .grid_spectral import nearest_node

    if not path.closed:
        raise GeometryError("the overlap circulation is defined for closed paths")
    ix, iy = nearest_node(fstate.grid, path.points)
    keep = np.ones(ix.size, dtype=bool)
    keep[1:] = (ix[1:] != ix[:-1]) | (iy[1:] != iy[:-1])
    if ix[-1] == ix[0] and iy[-1] == iy[0] and ix.size > 1:
        keep[-1] = False
    ix, iy = ix[keep], iy[keep]
    chi = fstate.chi[:, ix, iy]
    overlaps = np.sum(np.conj(chi) * np.roll(chi, -1, axis=1), axis=0)
    if np.any(np.abs(overlaps) < 1e-9):
        raise GeometryError("orthogonal neighboring spinors on the loop")
    gamma = -float(np.sum(np.angle(overlaps)))
    ok = fstate.valid[ix, iy]
    coverage = float(np.count_nonzero(ok) / ok.size)
    return PhaseRecord(fstate.time, gamma, "momentum", path.label, coverage)


def loop_phase_from_overlaps(
    state: SpinorField, path: LoopPath, epsilon_th: float = 0.0
) -> PhaseRecord:
    """The same momentum-circulation phase via telescoped state overlaps.

    -(1/ħ)∮π·dl is the continuum limit of -Σ_i arg⟨Ψ(x_i)|Ψ(x_{i+1})⟩; each
    increment is bounded by construction, so the sum stays well behaved when the
    trapezoid rule would be wrecked by a near-node momentum spike.  Useful
    as the finite-difference phase source for the EMF balance.
    """
    pts = path.points
    psi_pts = bilinear_sample(state.grid, state.psi, pts)
    if path.closed:
        nxt = np.roll(psi_pts, -1, axis=1)
    else:
        nxt = psi_pts[:, 1:]
        psi_pts = psi_pts[:, :-1]
    overlaps = np.sum(np.conj(psi_pts) * nxt, axis=0)
    gamma = -float(np.sum(np.angle(overlaps)))
    n_pts = bilinear_sample(state.grid, state.density(), pts).real
    coverage = float(np.count_nonzero(n_pts > epsilon_th) / n_pts.size)
    return PhaseRecord(state.time, gamma, "overlap", path.label, coverage)


def open_path_decomposition(
    state: SpinorField, path: LoopPath, epsilon_th: float | None = None
) -> OpenPathPhases:
    """Split the open-path phase into endpoint and parallel-transport parts.

    theta_ba is the Pancharatnam phase of the total state between the
    endpoints; gamma_el is the discrete parallel-transport phase of the
    normalized spinor along the path (invariant under per-point phases);
    gamma is the momentum line integral.  They satisfy
    gamma = -theta_ba + gamma_el (mod 2π) up to discretization.  All three
    are meaningless where the density is numerically dead; ``coverage``
    reports the fraction of samples above the threshold.
    """
    from .fields import DEFAULT_EPSILON_TH

    if epsilon_th is None:
        epsilon_th = DEFAULT_EPSILON_TH
    if path.closed:
        raise GeometryError("open_path_decomposition expects an open path")
    if path.n_points < 2:
        return OpenPathPhases(0.0, 0.0, 0.0)
    n_pts = bilinear_sample(state.grid, state.density(), path.points).real
    coverage = float(np.count_nonzero(n_pts > epsilon_th) / n_pts.size)
    psi_pts = bilinear_sample(state.grid, state.psi, path.points)
    overlaps = np.sum(np.conj(psi_pts[:, :-1]) * psi_pts[:, 1:], axis=0)
    scale = np.sqrt(
        np.sum(np.abs(psi_pts[:, :-1]) ** 2, axis=0)
        * np.sum(np.abs(psi_pts[:, 1:]) ** 2, axis=0)
    )
    if np.any(np.abs(overlaps) < 1e-6 * scale):
        raise GeometryError(
            "nearly orthogonal neighboring states along the path; refine the sampling"
        )
    end_overlap = np.sum(np.conj(psi_pts[:, 0]) * psi_pts[:, -1])
    theta_ba = float(np.angle(end_overlap))
    gamma_el = float(theta_ba - np.sum(np.angle(overlaps)))

    pi, _w = complex_momentum(state)
    pi_pts = bilinear_sample(state.grid, pi, path.points).real
    gamma = -_line_integral(pi_pts, path) / HBAR
    return OpenPathPhases(gamma, theta_ba, gamma_el, coverage)


def quantization_integer(
    mom: MomentumFields, connection, path: LoopPath, flag_above: float = 0.05
) -> tuple[int, float, bool]:
    """Round ∮(π + ħA)·dl / 2πħ to the nearest integer.

    ``connection`` maps point arrays (P, 2) to analytic (A_x, A_y) samples;
    only meaningful at the initial time, for a gauge with known A.  Returns
    (n, residual, flagged); a residual above ``flag_above`` signals a
    discretization or masking problem.
    """
    if not path.closed:
        raise GeometryError("the quantization condition applies to closed paths")
    pi_pts, _ = mom.sample_pi(path.points)
    ax, ay = connection(path.points[:, 0], path.points[:, 1])
    total = np.stack([pi_pts[0] + HBAR * ax, pi_pts[1] + HBAR * ay])
    circ = _line_integral(total, path) / (2.0 * np.pi * HBAR)
    n = int(np.rint(circ))
    residual = float(circ - n)
    return n, residual, abs(residual) > flag_above


def advect_path(path: LoopPath, mom: MomentumFields, dt: float) -> tuple[LoopPath, int]:
    """Advect every path point with the velocity field (midpoint rule).

    Points whose stencil leaves the valid mask are frozen in place and
    counted; a closed path stays closed.
    """
    v1, ok1 = mom.sample_velocity(path.points)
    mid = path.points + 0.5 * dt * v1.T
    v2, ok2 = mom.sample_velocity(mid)
    new_pts = path.points + dt * v2.T
    ok = ok1 & ok2
    frozen = int(np.count_nonzero(~ok))
    if frozen:
        new_pts[~ok] = path.points[~ok]
    return LoopPath(new_pts, path.closed, path.sampling, path.label), frozen
