"""Run configuration: flat key=value sections, parsed with configparser.

All cadences are stored in propagation steps so they are integer multiples
of dt by construction; times in the config file carry explicit unit
suffixes (_fs or _au).
"""

from __future__ import annotations

import configparser
import hashlib
import io

import numpy as np
from dataclasses import dataclass, field

from .constants import fs_to_au
from .fields import DEFAULT_EPSILON_TH
from .model import ModelParams

__all__ = ["ConfigError", "RunConfig", "load_config", "parse_config", "default_config_text"]


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: ModelParams = field(default_factory=ModelParams)
    n: int = 256
    length: float = 20.0
    dt: float = 0.25
    t_final_fs: float = 120.0
    radii: tuple[float, ...] = (2.0, 2.5, 3.0)
    path_points: int = 512
    sampling: str = "bilinear"
    emf_radius: float = 1.0
    emf_path_points: int = 512
    epsilon_th: float = DEFAULT_EPSILON_TH
    phase_every_steps: int = 165
    emf_every_steps: int = 165
    observables_every_steps: int = 165
    snapshot_every_steps: int = 4950
    fd_steps: int = 4
    emf_upsample: int = 1
    edge_abort_density: float = 1e-14
    source_text: str = ""

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("dt must be positive")
        if self.t_final_fs <= 0:
            raise ConfigError("t_final_fs must be positive")
        if self.n < 8:
            raise ConfigError("grid size too small")
        if self.sampling not in ("bilinear", "grid-snapped"):
            raise ConfigError("sampling must be 'bilinear' or 'grid-snapped'")
        if self.epsilon_th < 0:
            raise ConfigError("epsilon_th must be non-negative")
        for name in (
            "phase_every_steps",
            "emf_every_steps",
            "observables_every_steps",
            "snapshot_every_steps",
            "fd_steps",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.emf_upsample < 1 or (self.emf_upsample & (self.emf_upsample - 1)):
            raise ConfigError("emf_upsample must be a power of two >= 1")
        if self.emf_every_steps < self.fd_steps:
            raise ConfigError("emf_every_steps must be >= fd_steps")
        if self.snapshot_every_steps % self.emf_every_steps != 0:
            raise ConfigError(
                "snapshot_every_steps must be a multiple of emf_every_steps (resume alignment)"
            )
        if any(r <= 0 for r in self.radii):
            raise ConfigError("all probe radii must be positive")
        # Resolve the fastest precession on the box: dt max|B|/hbar < pi/4.
        b_corner = 0.5 * self.length * float(
            np.hypot(self.model.kappa_x, self.model.kappa_y)
        )
        if self.dt * b_corner >= np.pi / 4:
            raise ConfigError(
                f"dt={self.dt} does not resolve the precession at the box corner "
                f"(dt*max|B| = {self.dt * b_corner:.3f} >= pi/4)"
            )

    @property
    def n_steps(self) -> int:
        return int(round(fs_to_au(self.t_final_fs) / self.dt))

    @property
    def fd_dt(self) -> float:
        return self.fd_steps * self.dt

    def sha256(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()

    def canonical_text(self) -> str:
        m = self.model
        lines = [
            f"mass_amu={m.mass_amu!r}",
            f"omega_x={m.omega_x!r}",
            f"omega_y={m.omega_y!r}",
            f"kappa_x={m.kappa_x!r}",
            f"kappa_y={m.kappa_y!r}",
            f"gauge={m.gauge}",
            f"init_kind={m.init_kind}",
            f"n={self.n}",
            f"length={self.length!r}",
            f"dt={self.dt!r}",
            f"t_final_fs={self.t_final_fs!r}",
            f"radii={','.join(repr(r) for r in self.radii)}",
            f"path_points={self.path_points}",
            f"sampling={self.sampling}",
            f"emf_radius={self.emf_radius!r}",
            f"emf_path_points={self.emf_path_points}",
            f"epsilon_th={self.epsilon_th!r}",
            f"phase_every_steps={self.phase_every_steps}",
            f"emf_every_steps={self.emf_every_steps}",
            f"observables_every_steps={self.observables_every_steps}",
            f"snapshot_every_steps={self.snapshot_every_steps}",
            f"fd_steps={self.fd_steps}",
            f"emf_upsample={self.emf_upsample}",
            f"edge_abort_density={self.edge_abort_density!r}",
        ]
        return "\n".join(lines) + "\n"


_SCHEMA = {
    "model": {
        "mass_amu": float,
        "omega_x": float,
        "omega_y": float,
        "kappa_x": float,
        "kappa_y": float,
        "gauge": str,
        "init_kind": str,
    },
    "grid": {"n": int, "length": float},
    "propagation": {"dt": float, "t_final_fs": float},
    "paths": {
        "radii": str,
        "path_points": int,
        "sampling": str,
        "emf_radius": float,
        "emf_path_points": int,
    },
    "fields": {"epsilon_th": float},
    "output": {
        "phase_every_steps": int,
        "emf_every_steps": int,
        "observables_every_steps": int,
        "snapshot_every_steps": int,
        "fd_steps": int,
        "emf_upsample": int,
        "edge_abort_density": float,
    },
}


def parse_config(text: str) -> RunConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc

    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in parser[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")

    def get(section, key, conv, default):
        if parser.has_option(section, key):
            raw = parser.get(section, key)
            try:
                return conv(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc
        return default

    try:
        model = ModelParams(
            mass_amu=get("model", "mass_amu", float, 1.0),
            omega_x=get("model", "omega_x", float, ModelParams().omega_x),
            omega_y=get("model", "omega_y", float, ModelParams().omega_y),
            kappa_x=get("model", "kappa_x", float, 0.1),
            kappa_y=get("model", "kappa_y", float, 0.1),
            gauge=get("model", "gauge", str, "correlated-minus"),
            init_kind=get("model", "init_kind", str, "correlated"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    radii_raw = get("paths", "radii", str, "2.0, 2.5, 3.0")
    try:
        radii = tuple(float(tok) for tok in radii_raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"bad radii list: {radii_raw!r}") from exc

    defaults = RunConfig()
    try:
        return RunConfig(
            model=model,
            n=get("grid", "n", int, defaults.n),
            length=get("grid", "length", float, defaults.length),
            dt=get("propagation", "dt", float, defaults.dt),
            t_final_fs=get("propagation", "t_final_fs", float, defaults.t_final_fs),
            radii=radii,
            path_points=get("paths", "path_points", int, defaults.path_points),
            sampling=get("paths", "sampling", str, defaults.sampling),
            emf_radius=get("paths", "emf_radius", float, defaults.emf_radius),
            emf_path_points=get("paths", "emf_path_points", int, defaults.emf_path_points),
            epsilon_th=get("fields", "epsilon_th", float, defaults.epsilon_th),
            phase_every_steps=get("output", "phase_every_steps", int, defaults.phase_every_steps),
            emf_every_steps=get("output", "emf_every_steps", int, defaults.emf_every_steps),
            observables_every_steps=get(
                "output", "observables_every_steps", int, defaults.observables_every_steps
            ),
            snapshot_every_steps=get(
                "output", "snapshot_every_steps", int, defaults.snapshot_every_steps
            ),
            fd_steps=get("output", "fd_steps", int, defaults.fd_steps),
            emf_upsample=get("output", "emf_upsample", int, defaults.emf_upsample),
            edge_abort_density=get(
                "output", "edge_abort_density", float, defaults.edge_abort_density
            ),
            source_text=text,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def default_config_text(preset: str = "desk") -> str:
    """Config text for the two documented presets.

    'desk' finishes in minutes on a laptop-class machine; 'paper' replicates
    the full-scale run geometry (1024 grid, dt=0.1 a.u., 250 fs) and is long.
    """
    if preset == "desk":
        values = dict(
            n=256, dt=0.25, t_final_fs=120.0, eps=1e-12,
            phase=165, emf=165, obs=165, snap=4950, fd=4, ppoints=512, upsample=4,
        )
    elif preset == "paper":
        values = dict(
            n=1024, dt=0.1, t_final_fs=250.0, eps=1e-20,
            phase=414, emf=414, obs=414, snap=12420, fd=10, ppoints=2048, upsample=1,
        )
    else:
        raise ConfigError(f"unknown preset {preset!r}")
    buf = io.StringIO()
    buf.write(
        f"""# ciphase run configuration ({preset} preset)
# Units: a.u. unless the key name says otherwise; cadences in propagation steps.

[model]
mass_amu = 1.0
omega_x = 4.5563359e-3      # 1000 cm^-1
omega_y = 4.5563359e-3
kappa_x = 0.1
kappa_y = 0.1
gauge = correlated-minus    # correlated-minus | northern-plus | southern-plus
init_kind = correlated      # correlated | uncorrelated

[grid]
n = {values['n']}
length = 20.0

[propagation]
dt = {values['dt']}
t_final_fs = {values['t_final_fs']}

[paths]
radii = 2.0, 2.5, 3.0
path_points = {values['ppoints']}
sampling = bilinear         # bilinear | grid-snapped
emf_radius = 1.0
emf_path_points = {values['ppoints']}

[fields]
epsilon_th = {values['eps']}

[output]
phase_every_steps = {values['phase']}
emf_every_steps = {values['emf']}
observables_every_steps = {values['obs']}
snapshot_every_steps = {values['snap']}
fd_steps = {values['fd']}
emf_upsample = {values['upsample']}   # band-limited refinement for EMF evaluation
edge_abort_density = 1e-14
"""
    )
    return buf.getvalue()
