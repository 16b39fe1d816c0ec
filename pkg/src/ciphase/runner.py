"""Run orchestration: deterministic, resumable propagation with CSV series,
snapshots and a manifest.

The pipeline is RNG-free; rerunning a config reproduces byte-identical CSVs.
fd_rate in the EMF series is the backward difference of the momentum-route
phase over ``fd_steps`` propagation steps (the momentum route has no
south-pole restriction, so it stays evaluable when the loop image wanders).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig
from .constants import AMU_TO_AU, AU_TIME_TO_FS, HBAR
from .emf import realspace_circulations
from .fields import FieldState, adiabatic_populations
from .geometry import (
    GeometryError,
    LoopPath,
    PhaseRecord,
    loop_phase_from_momentum_overlaps,
    loop_phase_from_s,
    make_circle,
    unwrap_towards,
    wrap_angle,
)
from .grid_spectral import (
    Grid2D,
    SpinorField,
    fft_roundtrip_error,
    read_field_block,
    read_snapshot,
    upsample_state,
    write_field_block,
    write_snapshot,
)
from .model import initial_fields, initial_state
from .propagator import NumericalAbort, SplitOperator

__all__ = ["run", "diagnose_precision", "recompute_phases", "RunAborted"]

PHASES_CSV = "phases.csv"
EMF_CSV = "emf.csv"
OBSERVABLES_CSV = "observables.csv"
ROUNDTRIP_CSV = "roundtrip.csv"
MANIFEST = "manifest.json"
CONFIG_ECHO = "config.echo.ini"

PHASE_HEADER = (
    "time_au,time_fs,path_id,R,gamma_over_pi_sformula,gamma_over_pi_momentum,coverage"
)
EMF_HEADER = "time_au,path_id,e_nbo,e_el,e_mag,e_total,fd_rate,coverage"
OBS_HEADER = "time_au,time_fs,norm,energy_au,kinetic_au,potential_au,p_minus,p_plus,edge_density"


class RunAborted(NumericalAbort):
    pass


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _write_csv(path: Path, header: str, rows: list[tuple]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _read_csv_rows(path: Path) -> list[list[str]]:
    lines = path.read_text(encoding="utf-8").splitlines()
    return [line.split(",") for line in lines[1:] if line]


@dataclass
class _Series:
    phases: list[tuple]
    emf: list[tuple]
    observables: list[tuple]


def _probe_paths(config: RunConfig, grid: Grid2D) -> tuple[list[LoopPath], LoopPath]:
    paths = [
        make_circle(grid, r, config.path_points, config.sampling) for r in config.radii
    ]
    emf_path = make_circle(
        grid, config.emf_radius, config.emf_path_points, config.sampling
    )
    return paths, emf_path


class _EmfEvaluator:
    """EMF diagnostics on an optionally upsampled evaluation grid.

    The solver grid resolves the dynamics, but the circulation integrands
    near low-density interference structure benefit from a band-limited
    refinement before sampling; the refined FieldState keeps its own
    frozen-value history from the analytic initial fields.
    """

    def __init__(self, config: RunConfig, grid: Grid2D):
        self.factor = config.emf_upsample
        self.config = config
        if self.factor > 1:
            self.grid = Grid2D(
                grid.nx * self.factor, grid.ny * self.factor, grid.length_x, grid.length_y
            )
        else:
            self.grid = grid
        self.fstate = FieldState(
            self.grid,
            config.model.mass_au,
            config.epsilon_th,
            init_fields=initial_fields(config.model, self.grid),
        )
        self.path = make_circle(
            self.grid, config.emf_radius, config.emf_path_points, config.sampling
        )
        self._step_seen = -1

    def refresh(self, state: SpinorField, step: int) -> None:
        if step == self._step_seen:
            return
        self.fstate.update(upsample_state(state, self.factor))
        self._step_seen = step

    def momentum_phase(self) -> float:
        return loop_phase_from_momentum_overlaps(self.fstate, self.path).gamma

    def breakdown(self):
        return realspace_circulations(self.config.model, self.fstate, self.path)


def _safe_loop_phase(fstate: FieldState, path: LoopPath) -> PhaseRecord:
    try:
        return loop_phase_from_s(fstate.polarization, path)
    except GeometryError:
        _, ok = fstate.polarization.sample(path.points)
        coverage = float(np.count_nonzero(ok) / ok.size)
        return PhaseRecord(fstate.time, float("nan"), "s-formula", path.label, coverage)


def _edge_density(state: SpinorField) -> float:
    n = state.density()
    return float(max(n[0, :].max(), n[-1, :].max(), n[:, 0].max(), n[:, -1].max()))


def _manifest_payload(config: RunConfig, status: str, checkpoint_step: int) -> dict:
    return {
        "format": "ciphase-run-v1",
        "package_version": __version__,
        "config_sha256": config.sha256(),
        "status": status,
        "checkpoint_step": checkpoint_step,
        "n_steps": config.n_steps,
        "dt_au": config.dt,
        "grid": {"nx": config.n, "ny": config.n, "length": config.length},
        "epsilon_th": config.epsilon_th,
        "constants": {"hbar": HBAR, "amu_to_au": AMU_TO_AU, "au_time_to_fs": AU_TIME_TO_FS},
    }


def _write_manifest(outdir: Path, payload: dict) -> None:
    (outdir / MANIFEST).write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _snapshot_base(outdir: Path, step: int) -> Path:
    return outdir / "snapshots" / f"snap_{step:08d}"


def _write_checkpoint(outdir: Path, step: int, state: SpinorField, fstate: FieldState) -> None:
    base = _snapshot_base(outdir, step)
    base.parent.mkdir(exist_ok=True)
    write_snapshot(state, base, step=step)
    write_field_block(
        base.parent / f"fields_{step:08d}",
        state.grid,
        {
            "s_x": fstate.s[0],
            "s_y": fstate.s[1],
            "s_z": fstate.s[2],
            "pi_x": fstate.pi[0],
            "pi_y": fstate.pi[1],
            "w_x": fstate.w[0],
            "w_y": fstate.w[1],
            "chi1_re": fstate.chi[0].real,
            "chi1_im": fstate.chi[0].imag,
            "chi2_re": fstate.chi[1].real,
            "chi2_im": fstate.chi[1].imag,
            "valid": fstate.valid.astype(float),
        },
        state.time,
        step=step,
        kind="fields",
    )


def _load_checkpoint(outdir: Path, step: int, config: RunConfig) -> tuple[SpinorField, FieldState]:
    state = read_snapshot(_snapshot_base(outdir, step))
    grid, comps, _meta = read_field_block(outdir / "snapshots" / f"fields_{step:08d}")
    chi = np.stack(
        [
            comps["chi1_re"] + 1j * comps["chi1_im"],
            comps["chi2_re"] + 1j * comps["chi2_im"],
        ]
    )
    fstate = FieldState(
        state.grid,
        config.model.mass_au,
        config.epsilon_th,
        init_fields=(
            np.stack([comps["s_x"], comps["s_y"], comps["s_z"]]),
            np.stack([comps["pi_x"], comps["pi_y"]]),
            np.stack([comps["w_x"], comps["w_y"]]),
            chi,
        ),
    )
    fstate.update(state)
    return state, fstate


def run(config: RunConfig, outdir: str | Path, resume: bool = False) -> Path:
    """Execute the configured run into ``outdir``; returns the directory.

    With ``resume=True`` and a matching manifest present, continues from the
    last checkpoint; series rows beyond the checkpoint are recomputed so the
    result is identical to an uninterrupted run.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    grid = Grid2D(config.n, config.n, config.length, config.length)
    prop = SplitOperator(grid, config.model)
    paths, emf_path = _probe_paths(config, grid)
    all_paths = paths + [emf_path]
    emf_eval = _EmfEvaluator(config, grid)

    series = _Series([], [], [])
    start_step = 0
    manifest_path = outdir / MANIFEST
    if resume and manifest_path.exists():
        payload = json.loads(manifest_path.read_text(encoding="utf-8"))
        if payload.get("config_sha256") != config.sha256():
            raise ConfigError("cannot resume: config does not match the run directory")
        start_step = int(payload.get("checkpoint_step", 0))
        state, fstate = _load_checkpoint(outdir, start_step, config)
        t_keep = start_step * config.dt + 1e-9
        for fname, target in (
            (PHASES_CSV, series.phases),
            (EMF_CSV, series.emf),
            (OBSERVABLES_CSV, series.observables),
        ):
            fpath = outdir / fname
            if fpath.exists():
                for row in _read_csv_rows(fpath):
                    if float(row[0]) <= t_keep:
                        target.append(tuple(row))
        resumed_rows = series.phases
    else:
        state = initial_state(config.model, grid)
        fstate = FieldState(
            grid,
            config.model.mass_au,
            config.epsilon_th,
            state=state,
            init_fields=initial_fields(config.model, grid),
        )
        echo = config.source_text if config.source_text else config.canonical_text()
        (outdir / CONFIG_ECHO).write_text(echo, encoding="utf-8")

    _write_manifest(outdir, _manifest_payload(config, "running", start_step))

    # Continuity bookkeeping for the s-formula series (nearest-2π unwrapping);
    # re-seeded from the kept rows on resume so the branch choice carries over.
    last_s_gamma: dict[str, float] = {}
    if start_step > 0:
        for row in resumed_rows:
            g = float(row[4])
            if np.isfinite(g):
                last_s_gamma[str(row[2])] = g * np.pi
    # Momentum-route phase cache on the EMF loop for the fd bracket.
    fd_cache: dict[int, float] = {}

    def record_everything(step: int) -> None:
        t_au = step * config.dt
        t_fs = t_au * AU_TIME_TO_FS
        is_phase = step % config.phase_every_steps == 0 or step == config.n_steps
        is_emf = step % config.emf_every_steps == 0 or step == config.n_steps
        is_obs = step % config.observables_every_steps == 0 or step == config.n_steps
        is_fd_partner = (step + config.fd_steps) % config.emf_every_steps == 0 or (
            step + config.fd_steps
        ) == config.n_steps

        if is_fd_partner or is_emf:
            emf_eval.refresh(state, step)
            fd_cache[step] = emf_eval.momentum_phase()

        if is_phase:
            for path in all_paths:
                rec_s = _safe_loop_phase(fstate, path)
                gamma_s = rec_s.gamma
                if np.isfinite(gamma_s):
                    if path.label in last_s_gamma:
                        gamma_s = unwrap_towards(gamma_s, last_s_gamma[path.label])
                    last_s_gamma[path.label] = gamma_s
                rec_m = loop_phase_from_momentum_overlaps(fstate, path)
                radius = float(path.label[1:]) if path.label.startswith("R") else float("nan")
                series.phases.append(
                    (
                        t_au,
                        t_fs,
                        path.label,
                        radius,
                        gamma_s / np.pi,
                        rec_m.gamma / np.pi,
                        rec_s.coverage,
                    )
                )

        if is_emf:
            emf_eval.refresh(state, step)
            breakdown = emf_eval.breakdown()
            fd_rate = float("nan")
            partner = step - config.fd_steps
            if partner in fd_cache and step in fd_cache:
                dgamma = wrap_angle(fd_cache[step] - fd_cache[partner])
                fd_rate = -dgamma / (config.fd_steps * config.dt)
            series.emf.append(
                (
                    t_au,
                    breakdown.path_id,
                    breakdown.e_nbo,
                    breakdown.e_el,
                    breakdown.e_mag,
                    breakdown.e_total,
                    fd_rate,
                    breakdown.coverage,
                )
            )
            for s in list(fd_cache):
                if s < step:
                    del fd_cache[s]

        if is_obs:
            obs = prop.observables(state)
            p_minus, p_plus = adiabatic_populations(state, config.model)
            edge = _edge_density(state)
            if not np.isfinite(obs["norm"]):
                raise RunAborted(f"non-finite norm at t={t_au} a.u.")
            if edge > config.edge_abort_density:
                raise RunAborted(
                    f"edge density {edge:.3e} above {config.edge_abort_density:.1e} "
                    f"at t={t_au} a.u.; the box is too small for this run"
                )
            series.observables.append(
                (
                    t_au,
                    t_fs,
                    obs["norm"],
                    obs["energy"],
                    obs["kinetic"],
                    obs["potential"],
                    p_minus,
                    p_plus,
                    edge,
                )
            )

    def flush(step: int, status: str) -> None:
        _write_csv(outdir / PHASES_CSV, PHASE_HEADER, series.phases)
        _write_csv(outdir / EMF_CSV, EMF_HEADER, series.emf)
        _write_csv(outdir / OBSERVABLES_CSV, OBS_HEADER, series.observables)
        _write_manifest(outdir, _manifest_payload(config, status, step))

    cadences = [
        config.phase_every_steps,
        config.emf_every_steps,
        config.observables_every_steps,
        config.snapshot_every_steps,
    ]
    event_steps = sorted(
        {
            s
            for c in cadences
            for s in range(0, config.n_steps + 1, c)
        }
        | {config.n_steps}
        | {
            s - config.fd_steps
            for c in [config.emf_every_steps]
            for s in range(0, config.n_steps + 1, c)
            if s - config.fd_steps >= 0
        }
        | ({config.n_steps - config.fd_steps} if config.n_steps >= config.fd_steps else set())
    )

    current = start_step
    try:
        if start_step == 0:
            record_everything(0)
            _write_checkpoint(outdir, 0, state, fstate)
        for target in event_steps:
            if target <= current:
                continue
            prop.propagate(state, target - current, config.dt)
            current = target
            fstate.update(state)
            record_everything(current)
            if current % config.snapshot_every_steps == 0 or current == config.n_steps:
                _write_checkpoint(outdir, current, state, fstate)
                flush(current, "running")
    except NumericalAbort as exc:
        flush(current, "aborted")
        raise RunAborted(str(exc)) from exc

    flush(config.n_steps, "complete")
    return outdir


def diagnose_precision(config: RunConfig, out_csv: str | Path, trips: int = 1) -> Path:
    """Round-trip polarization error vs density for the configured initial state."""
    grid = Grid2D(config.n, config.n, config.length, config.length)
    state = initial_state(config.model, grid)
    density, err2, n_excluded = fft_roundtrip_error(state, epsilon_th=0.0, trips=trips)
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    with open(out_csv, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# epsilon_th = {config.epsilon_th!r}\n")
        fh.write(f"# excluded_zero_density_points = {n_excluded}\n")
        fh.write("density,squared_error\n")
        for d, e in zip(density, err2):
            fh.write(f"{d!r},{e!r}\n")
    return out_csv


def recompute_phases(
    run_dir: str | Path,
    radii: tuple[float, ...] | None = None,
    n_points: int | None = None,
    sampling: str | None = None,
) -> Path:
    """Rebuild the phase series from stored snapshots.

    Walks the snapshots in time order, reapplying the frozen-update masking
    policy from the analytic initial fields, so the recomputed series matches
    what an in-run evaluation at snapshot times would have produced.
    """
    from .config import load_config

    run_dir = Path(run_dir)
    config = load_config(run_dir / CONFIG_ECHO)
    grid = Grid2D(config.n, config.n, config.length, config.length)
    radii = tuple(radii) if radii else config.radii
    n_points = n_points or config.path_points
    sampling = sampling or config.sampling
    paths = [make_circle(grid, r, n_points, sampling) for r in radii]

    snaps = sorted((run_dir / "snapshots").glob("snap_*.hdr"))
    if not snaps:
        raise ConfigError(f"no snapshots in {run_dir}")
    fstate = FieldState(
        grid,
        config.model.mass_au,
        config.epsilon_th,
        init_fields=initial_fields(config.model, grid),
    )
    rows = []
    for snap in snaps:
        state = read_snapshot(snap.with_suffix(""))
        fstate.update(state)
        for path in paths:
            rec_s = _safe_loop_phase(fstate, path)
            rec_m = loop_phase_from_momentum_overlaps(fstate, path)
            rows.append(
                (
                    state.time,
                    state.time * AU_TIME_TO_FS,
                    path.label,
                    float(path.label[1:]),
                    rec_s.gamma / np.pi,
                    rec_m.gamma / np.pi,
                    rec_s.coverage,
                )
            )
    out = run_dir / "phases_recomputed.csv"
    _write_csv(out, PHASE_HEADER, rows)
    return out
