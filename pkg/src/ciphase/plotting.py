"""SVG figure generation from a completed run directory.

Figures: phase-vs-time per probe radius (units of π), the EMF breakdown
panel (components, total, and finite-difference dots), density heatmaps at
the snapshot times, and the round-trip precision scatter when present.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
# Deterministic SVG output: fixed hash salt, no embedded creation date.
matplotlib.rcParams["svg.hashsalt"] = "ciphase"
import matplotlib.pyplot as plt
import numpy as np

from .config import ConfigError
from .constants import AU_TIME_TO_FS
from .grid_spectral import read_snapshot

__all__ = ["plot_run", "plot_roundtrip"]

REFERENCE_TIMES_FS = (0.0, 75.0, 240.0)
_SAVEKW = {"metadata": {"Date": None}}


def _load_csv(path: Path) -> tuple[list[str], np.ndarray, list[list[str]]]:
    lines = [l for l in path.read_text(encoding="utf-8").splitlines() if l and not l.startswith("#")]
    header = lines[0].split(",")
    raw = [line.split(",") for line in lines[1:]]
    return header, raw


def _column(raw, header, name, conv=float):
    idx = header.index(name)
    return np.array([conv(row[idx]) for row in raw])


def plot_run(run_dir: str | Path, outdir: str | Path | None = None) -> list[Path]:
    run_dir = Path(run_dir)
    if not (run_dir / "manifest.json").exists():
        raise ConfigError(f"{run_dir} is not a run directory (no manifest.json)")
    outdir = Path(outdir) if outdir else run_dir / "plots"
    outdir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    phases = run_dir / "phases.csv"
    if phases.exists() and phases.stat().st_size > 0:
        header, raw = _load_csv(phases)
        t_fs = _column(raw, header, "time_fs")
        labels = [row[header.index("path_id")] for row in raw]
        gam_s = _column(raw, header, "gamma_over_pi_sformula")
        gam_m = _column(raw, header, "gamma_over_pi_momentum")
        fig, ax = plt.subplots(figsize=(7, 4.2))
        for label in sorted(set(labels)):
            sel = np.array([l == label for l in labels])
            ax.plot(t_fs[sel], np.abs(gam_s[sel]), lw=1.2, label=f"{label} (s-formula)")
            ax.plot(t_fs[sel], np.abs(gam_m[sel]), lw=0.7, ls="--", alpha=0.6,
                    label=f"{label} (momentum)")
        for t_ref in REFERENCE_TIMES_FS:
            ax.axvline(t_ref, color="red", lw=0.8, alpha=0.7)
        ax.set_xlim(t_fs.min(), t_fs.max())
        ax.set_ylim(0, 2)
        ax.set_xlabel("t (fs)")
        ax.set_ylabel(r"$|\Gamma_O|/\pi$")
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        out = outdir / "phase_vs_time.svg"
        fig.savefig(out, **_SAVEKW)
        plt.close(fig)
        written.append(out)

    emf = run_dir / "emf.csv"
    if emf.exists() and emf.stat().st_size > 0:
        header, raw = _load_csv(emf)
        if raw:
            t_fs = _column(raw, header, "time_au") * AU_TIME_TO_FS
            fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(7, 5.4), sharex=True)
            for name, color in (("e_nbo", "green"), ("e_el", "blue"), ("e_mag", "orange")):
                ax0.plot(t_fs, _column(raw, header, name), lw=1.0, color=color, label=name)
            ax0.plot(t_fs, _column(raw, header, "e_total"), lw=1.2, color="red", label="e_total")
            ax0.set_ylabel("EMF (rad / a.u. time)")
            ax0.legend(fontsize=8, ncol=2)
            ax1.plot(t_fs, _column(raw, header, "e_total"), lw=1.2, color="red", label="e_total")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                fd = _column(raw, header, "fd_rate")
            ax1.plot(t_fs, fd, ".", ms=3, color="black", label=r"$-\Delta\Gamma/\Delta t$")
            ax1.set_xlabel("t (fs)")
            ax1.set_ylabel("rate (rad / a.u. time)")
            ax1.legend(fontsize=8)
            fig.tight_layout()
            out = outdir / "emf_breakdown.svg"
            fig.savefig(out, **_SAVEKW)
            plt.close(fig)
            written.append(out)

    for hdr in sorted((run_dir / "snapshots").glob("snap_*.hdr")):
        state = read_snapshot(hdr.with_suffix(""))
        n = state.density()
        grid = state.grid
        t_fs = state.time * AU_TIME_TO_FS
        fig, ax = plt.subplots(figsize=(5, 4.2))
        im = ax.imshow(
            n.T,
            origin="lower",
            extent=[-grid.length_x / 2, grid.length_x / 2, -grid.length_y / 2, grid.length_y / 2],
            cmap="viridis",
        )
        ax.set_xlabel("x (a0)")
        ax.set_ylabel("y (a0)")
        ax.set_title(f"density, t = {t_fs:.1f} fs")
        fig.colorbar(im, ax=ax, shrink=0.85)
        fig.tight_layout()
        out = outdir / f"density_t{t_fs:07.1f}fs.svg"
        fig.savefig(out, **_SAVEKW)
        plt.close(fig)
        written.append(out)

    roundtrip = run_dir / "roundtrip.csv"
    if roundtrip.exists():
        written.append(plot_roundtrip(roundtrip, outdir / "roundtrip_error.svg"))

    if not written:
        raise ConfigError(f"nothing to plot in {run_dir}")
    return written


def plot_roundtrip(csv_path: str | Path, out: str | Path) -> Path:
    csv_path = Path(csv_path)
    eps_th = None
    rows = []
    for line in csv_path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# epsilon_th"):
            eps_th = float(line.split("=")[1])
            continue
        if line.startswith("#") or line.startswith("density") or not line:
            continue
        d, e = line.split(",")
        rows.append((float(d), float(e)))
    data = np.array(rows)
    pos = data[(data[:, 0] > 0) & (data[:, 1] > 0)]
    fig, ax = plt.subplots(figsize=(6, 4.2))
    ax.loglog(pos[:, 0], pos[:, 1], ".", ms=1.5, alpha=0.4)
    if eps_th:
        ax.axvline(eps_th, color="red", lw=1.0, label=rf"$\epsilon_{{th}}$ = {eps_th:g}")
        ax.legend(fontsize=8)
    ax.set_xlabel("nuclear density n(x)")
    ax.set_ylabel(r"$\|s' - s\|^2$ per FFT round trip")
    fig.tight_layout()
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, **_SAVEKW)
    plt.close(fig)
    return out
