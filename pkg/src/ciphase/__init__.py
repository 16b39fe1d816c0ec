"""Exact two-state vibronic dynamics near a conical intersection, with
gauge-invariant geometric-phase and electromotive-force diagnostics."""

from .constants import AMU_TO_AU, AU_TIME_TO_FS, HBAR, au_to_fs, fs_to_au
from .grid_spectral import (
    Grid2D,
    SpinorField,
    bilinear_sample,
    fft_roundtrip_error,
    read_snapshot,
    spearman_rank,
    upsample_state,
    spectral_derivative,
    write_snapshot,
)
from .model import (
    ElectronicHamiltonianSample,
    ModelParams,
    adiabatic_spinor,
    adiabatic_surfaces,
    berry_connection,
    electronic_hamiltonian,
    ground_widths,
    initial_fields,
    initial_state,
    packet_center,
)
from .propagator import NumericalAbort, PropagatorConfig, SplitOperator
from .fields import (
    DEFAULT_EPSILON_TH,
    FieldState,
    GeometricTensorField,
    MomentumFields,
    PolarizationField,
    adiabatic_populations,
    complex_momentum,
    geometric_tensor,
    sigma_and_density,
    synthetic_polarization,
)
from .geometry import (
    GeometryError,
    LoopPath,
    OpenPathPhases,
    PhaseRecord,
    advect_path,
    loop_phase_from_momentum_overlaps,
    loop_phase_from_overlaps,
    loop_phase_from_s,
    make_arc,
    make_circle,
    open_path_decomposition,
    path_phase_from_momentum,
    quantization_integer,
    wrap_angle,
)
from .emf import (
    EmfBreakdown,
    EmfFields,
    EomResidual,
    emf_circulations,
    emf_fields,
    polarization_eom_residual,
    realspace_circulations,
    sphere_form_circulations,
)

__version__ = "0.1.0"
