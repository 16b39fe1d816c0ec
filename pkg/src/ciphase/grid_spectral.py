"""Uniform periodic 2D grid, FFT-based spectral calculus and snapshot I/O.

Grid convention: arrays are indexed ``[i, j]`` with ``i`` along x and ``j``
along y (``meshgrid(..., indexing='ij')``).  Coordinates span ``[-L/2, L/2)``
so the conical-intersection point sits on the grid node at the box center.
The Fourier convention is numpy's (forward unnormalized, inverse carries
``1/(nx*ny)``), i.e. unitary per round trip.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as _fft

__all__ = [
    "Grid2D",
    "SpinorField",
    "spectral_derivative",
    "gradient",
    "laplacian",
    "bilinear_sample",
    "bilinear_valid",
    "nearest_node",
    "fft_roundtrip_error",
    "spearman_rank",
    "write_snapshot",
    "read_snapshot",
    "write_field_block",
    "read_field_block",
    "spinor_to_csv",
]


def _is_power_of_two(n: int) -> bool:
    return n >= 2 and (n & (n - 1)) == 0


@dataclass
class Grid2D:
    """Uniform periodic grid centered on the origin."""

    nx: int
    ny: int
    length_x: float
    length_y: float

    dx: float = field(init=False, repr=False)
    dy: float = field(init=False, repr=False)
    x: np.ndarray = field(init=False, repr=False)
    y: np.ndarray = field(init=False, repr=False)
    X: np.ndarray = field(init=False, repr=False)
    Y: np.ndarray = field(init=False, repr=False)
    kx: np.ndarray = field(init=False, repr=False)
    ky: np.ndarray = field(init=False, repr=False)
    k2: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if not (_is_power_of_two(self.nx) and _is_power_of_two(self.ny)):
            raise ValueError("grid sizes must be powers of two")
        if self.length_x <= 0 or self.length_y <= 0:
            raise ValueError("box lengths must be positive")
        self.dx = self.length_x / self.nx
        self.dy = self.length_y / self.ny
        self.x = (np.arange(self.nx) - self.nx // 2) * self.dx
        self.y = (np.arange(self.ny) - self.ny // 2) * self.dy
        self.X, self.Y = np.meshgrid(self.x, self.y, indexing="ij")
        self.kx = 2.0 * np.pi * np.fft.fftfreq(self.nx, d=self.dx)
        self.ky = 2.0 * np.pi * np.fft.fftfreq(self.ny, d=self.dy)
        self.k2 = self.kx[:, None] ** 2 + self.ky[None, :] ** 2

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    def same_geometry(self, other: "Grid2D") -> bool:
        return self.shape == other.shape and np.isclose(
            self.length_x, other.length_x
        ) and np.isclose(self.length_y, other.length_y)

    def fft2(self, f: np.ndarray) -> np.ndarray:
        return _fft.fft2(f, axes=(-2, -1))

    def ifft2(self, f: np.ndarray) -> np.ndarray:
        return _fft.ifft2(f, axes=(-2, -1))


@dataclass
class SpinorField:
    """Two-component complex wavefunction on a Grid2D.

    ``psi`` has shape (2, nx, ny); component 0/1 are the amplitudes on the
    two diabatic electronic states.
    """

    grid: Grid2D
    psi: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.psi = np.ascontiguousarray(self.psi, dtype=np.complex128)
        if self.psi.shape != (2, self.grid.nx, self.grid.ny):
            raise ValueError(
                f"spinor shape {self.psi.shape} does not match grid {self.grid.shape}"
            )

    def density(self) -> np.ndarray:
        return (np.abs(self.psi[0]) ** 2 + np.abs(self.psi[1]) ** 2).real

    def norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.psi) ** 2) * self.grid.cell_area))

    def normalize(self) -> "SpinorField":
        self.psi /= self.norm()
        return self

    def copy(self) -> "SpinorField":
        return SpinorField(self.grid, self.psi.copy(), self.time)


_AXES = {"x": -2, "y": -1}


def upsample_state(state: "SpinorField", factor: int) -> "SpinorField":
    """Band-limited Fourier interpolation of the state onto a finer grid.

    Exact for states whose spectrum fits the original grid (the solver keeps
    a wide margin), so this refines diagnostic evaluation without touching
    the dynamics.
    """
    if factor < 1 or factor & (factor - 1):
        raise ValueError("upsampling factor must be a power of two >= 1")
    if factor == 1:
        return state
    g = state.grid
    fine = Grid2D(g.nx * factor, g.ny * factor, g.length_x, g.length_y)
    psi = np.zeros((2, fine.nx, fine.ny), dtype=np.complex128)
    lo_x = (fine.nx - g.nx) // 2
    lo_y = (fine.ny - g.ny) // 2
    for c in range(2):
        fk = np.fft.fftshift(_fft.fft2(state.psi[c]))
        pad = np.zeros((fine.nx, fine.ny), dtype=np.complex128)
        pad[lo_x : lo_x + g.nx, lo_y : lo_y + g.ny] = fk
        psi[c] = _fft.ifft2(np.fft.ifftshift(pad)) * factor**2
    return SpinorField(fine, psi, state.time)


def spectral_derivative(grid: Grid2D, f: np.ndarray, axis: str, order: int = 1) -> np.ndarray:
    """Differentiate along one axis by multiplying with (ik)^order in k-space.

    ``f`` may carry leading component axes; the last two axes must match the
    grid shape.
    """
    if axis not in _AXES:
        raise ValueError("axis must be 'x' or 'y'")
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    ax = _AXES[axis]
    k = grid.kx if axis == "x" else grid.ky
    shape = [1] * f.ndim
    shape[ax] = k.size
    mult = (1j * k) ** order
    return _fft.ifft(mult.reshape(shape) * _fft.fft(f, axis=ax), axis=ax)


def gradient(grid: Grid2D, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Spectral (d/dx f, d/dy f)."""
    return (
        spectral_derivative(grid, f, "x", 1),
        spectral_derivative(grid, f, "y", 1),
    )


def laplacian(grid: Grid2D, f: np.ndarray) -> np.ndarray:
    fk = grid.fft2(f)
    return grid.ifft2(-grid.k2 * fk)


# ---------------------------------------------------------------------------
# Off-grid sampling


def _corner_indices(grid: Grid2D, pts: np.ndarray):
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    gx = (pts[:, 0] + 0.5 * grid.length_x) / grid.dx
    gy = (pts[:, 1] + 0.5 * grid.length_y) / grid.dy
    ix0 = np.floor(gx).astype(int)
    iy0 = np.floor(gy).astype(int)
    tx = gx - ix0
    ty = gy - iy0
    ix0 %= grid.nx
    iy0 %= grid.ny
    ix1 = (ix0 + 1) % grid.nx
    iy1 = (iy0 + 1) % grid.ny
    return ix0, ix1, iy0, iy1, tx, ty


def bilinear_sample(grid: Grid2D, f: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of ``f`` (..., nx, ny) at points (P, 2).

    Periodic wraparound, consistent with the FFT boundary conditions.
    Returns an array of shape (..., P).
    """
    ix0, ix1, iy0, iy1, tx, ty = _corner_indices(grid, pts)
    return (
        f[..., ix0, iy0] * (1 - tx) * (1 - ty)
        + f[..., ix1, iy0] * tx * (1 - ty)
        + f[..., ix0, iy1] * (1 - tx) * ty
        + f[..., ix1, iy1] * tx * ty
    )


def bilinear_valid(grid: Grid2D, mask: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """A sample point is valid only if all four surrounding nodes are valid."""
    ix0, ix1, iy0, iy1, _, _ = _corner_indices(grid, pts)
    return mask[ix0, iy0] & mask[ix1, iy0] & mask[ix0, iy1] & mask[ix1, iy1]


def nearest_node(grid: Grid2D, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the grid node closest to each point (periodic)."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    ix = np.rint((pts[:, 0] + 0.5 * grid.length_x) / grid.dx).astype(int) % grid.nx
    iy = np.rint((pts[:, 1] + 0.5 * grid.length_y) / grid.dy).astype(int) % grid.ny
    return ix, iy


# ---------------------------------------------------------------------------
# FFT round-trip precision diagnostic


def fft_roundtrip_error(
    state: SpinorField, epsilon_th: float = 0.0, trips: int = 1
) -> tuple[np.ndarray, np.ndarray, int]:
    """Polarization error induced by forward+inverse FFT pairs.

    Runs ``trips`` fake propagation steps of zero duration (nothing but FFT
    round trips) on a copy of the state and compares the Bloch vector before
    and after.  Returns ``(density, squared_error, n_excluded)`` where the
    first two are flat arrays over the grid points with density above
    ``epsilon_th`` and ``squared_error`` is ``|s' - s|^2`` at those points.
    """
    from . import fields as _fields  # local import to avoid a cycle

    n0, sigma0 = _fields.sigma_and_density(state)
    psi = state.psi.copy()
    for _ in range(int(trips)):
        psi = state.grid.ifft2(state.grid.fft2(psi))
    after = SpinorField(state.grid, psi, state.time)
    n1, sigma1 = _fields.sigma_and_density(after)

    keep = n0 > epsilon_th
    n_excluded = int(keep.size - np.count_nonzero(keep))
    s0 = sigma0[:, keep] / n0[keep]
    s1 = sigma1[:, keep] / np.where(n1[keep] > 0.0, n1[keep], 1.0)
    err2 = np.sum((s1 - s0) ** 2, axis=0).real
    return n0[keep], err2, n_excluded


def spearman_rank(a: np.ndarray, b: np.ndarray) -> float:
    """Spearman rank correlation (Pearson correlation of the ranks)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size or a.size < 2:
        raise ValueError("need two equal-length arrays with at least 2 samples")
    ra = np.empty(a.size)
    rb = np.empty(b.size)
    ra[np.argsort(a, kind="stable")] = np.arange(a.size)
    rb[np.argsort(b, kind="stable")] = np.arange(b.size)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt(np.sum(ra**2) * np.sum(rb**2))
    return float(np.sum(ra * rb) / denom)


# ---------------------------------------------------------------------------
# Snapshot I/O: flat little-endian float64 binary plus a text sidecar header.


def _write_header(path: Path, meta: dict) -> None:
    lines = [f"{k} = {v}" for k, v in meta.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _read_header(path: Path) -> dict:
    meta = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    return meta


def write_field_block(
    base: str | Path, grid: Grid2D, components: dict[str, np.ndarray], time: float, **extra
) -> Path:
    """Write named real arrays as one flat binary block with a sidecar header.

    Arrays are stored row-major (C order), little-endian float64, in the
    order listed under the ``components`` header key.
    """
    base = Path(base)
    names = list(components)
    flat = np.concatenate(
        [np.ascontiguousarray(components[name], dtype="<f8").ravel() for name in names]
    )
    base.with_suffix(".bin").write_bytes(flat.tobytes())
    meta = {
        "format": "ciphase-field-block-v1",
        "nx": grid.nx,
        "ny": grid.ny,
        "length_x": repr(grid.length_x),
        "length_y": repr(grid.length_y),
        "time_au": repr(float(time)),
        "components": " ".join(names),
        "dtype": "float64-le",
        "order": "row-major",
    }
    meta.update(extra)
    _write_header(base.with_suffix(".hdr"), meta)
    return base.with_suffix(".bin")


def read_field_block(base: str | Path) -> tuple[Grid2D, dict[str, np.ndarray], dict]:
    base = Path(base)
    meta = _read_header(base.with_suffix(".hdr"))
    nx, ny = int(meta["nx"]), int(meta["ny"])
    grid = Grid2D(nx, ny, float(meta["length_x"]), float(meta["length_y"]))
    names = meta["components"].split()
    raw = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f8")
    if raw.size != len(names) * nx * ny:
        raise ValueError(f"snapshot size mismatch in {base}")
    comps = {}
    for i, name in enumerate(names):
        comps[name] = raw[i * nx * ny : (i + 1) * nx * ny].reshape(nx, ny).copy()
    return grid, comps, meta


def write_snapshot(state: SpinorField, base: str | Path, **extra) -> Path:
    return write_field_block(
        base,
        state.grid,
        {
            "psi1_re": state.psi[0].real,
            "psi1_im": state.psi[0].imag,
            "psi2_re": state.psi[1].real,
            "psi2_im": state.psi[1].imag,
        },
        state.time,
        kind="spinor",
        **extra,
    )


def read_snapshot(base: str | Path) -> SpinorField:
    grid, comps, meta = read_field_block(base)
    psi = np.empty((2, grid.nx, grid.ny), dtype=np.complex128)
    psi[0] = comps["psi1_re"] + 1j * comps["psi1_im"]
    psi[1] = comps["psi2_re"] + 1j * comps["psi2_im"]
    return SpinorField(grid, psi, float(meta["time_au"]))


def spinor_to_csv(state: SpinorField, path: str | Path) -> None:
    """Plain-text export, intended for small grids only."""
    grid = state.grid
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("x_a0,y_a0,psi1_re,psi1_im,psi2_re,psi2_im\n")
        for i in range(grid.nx):
            for j in range(grid.ny):
                fh.write(
                    f"{grid.x[i]!r},{grid.y[j]!r},"
                    f"{state.psi[0, i, j].real!r},{state.psi[0, i, j].imag!r},"
                    f"{state.psi[1, i, j].real!r},{state.psi[1, i, j].imag!r}\n"
                )
