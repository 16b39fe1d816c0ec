"""Physical constants and unit conversions.

All dynamics is carried out in Hartree atomic units (hbar = 1, m_e = 1,
E_h = 1).  The only conversions needed are nuclear mass (amu -> a.u.) and
time (a.u. -> fs) for human-readable output.
"""

HBAR = 1.0

# CODATA electron-mass ratio for 1 unified atomic mass unit.
AMU_TO_AU = 1822.888486

# 1 a.u. of time in femtoseconds.
AU_TIME_TO_FS = 0.02418884
FS_TO_AU_TIME = 1.0 / AU_TIME_TO_FS

# 1000 cm^-1 expressed as an angular frequency in a.u.
OMEGA_1000_WAVENUMBERS = 4.5563359e-3


def au_to_fs(t_au: float) -> float:
    return t_au * AU_TIME_TO_FS


def fs_to_au(t_fs: float) -> float:
    return t_fs * FS_TO_AU_TIME
