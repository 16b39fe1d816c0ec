import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ciphase import (
    FieldState,
    Grid2D,
    ModelParams,
    SpinorField,
    adiabatic_populations,
    complex_momentum,
    geometric_tensor,
    initial_fields,
    initial_state,
    sigma_and_density,
    synthetic_polarization,
)
from ciphase.constants import HBAR


@pytest.fixture(scope="module")
def grid():
    return Grid2D(128, 128, 20.0, 20.0)


def _envelope(grid, width=0.6, center=(0.0, 0.0)):
    return np.exp(-((grid.X - center[0]) ** 2 + (grid.Y - center[1]) ** 2) / (4 * width**2))


def _state(grid, spinor, envelope=None):
    env = _envelope(grid) if envelope is None else envelope
    psi = np.stack([spinor[0] * env, spinor[1] * env]).astype(complex)
    return SpinorField(grid, psi).normalize()


@pytest.mark.parametrize(
    "spinor,expected",
    [
        ((1.0, 0.0), (0.0, 0.0, 1.0)),
        ((1.0, 1.0), (1.0, 0.0, 0.0)),
        ((1.0, 1.0j), (0.0, 1.0, 0.0)),
    ],
)
def test_bloch_vector_of_reference_spinors(grid, spinor, expected):
    state = _state(grid, spinor)
    n, sigma = sigma_and_density(state)
    dense = n > 1e-8 * n.max()
    s = sigma[:, dense] / n[dense]
    for c in range(3):
        np.testing.assert_allclose(s[c], expected[c], atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(
    a_re=st.floats(-2, 2), a_im=st.floats(-2, 2),
    b_re=st.floats(-2, 2), b_im=st.floats(-2, 2),
)
def test_pure_state_identity_sigma_norm_equals_density(a_re, a_im, b_re, b_im):
    # |Sigma| = n holds identically for any two-component spinor.
    grid = Grid2D(16, 16, 8.0, 8.0)
    spinor = (a_re + 1j * a_im, b_re + 1j * b_im)
    if abs(spinor[0]) + abs(spinor[1]) < 1e-3:
        return
    state = _state(grid, spinor)
    n, sigma = sigma_and_density(state)
    lhs = sigma[0] ** 2 + sigma[1] ** 2 + sigma[2] ** 2
    np.testing.assert_allclose(lhs, n**2, rtol=1e-12, atol=1e-300)


def test_plane_wave_momentum(grid):
    # pi = hbar k exactly in the continuum; the spectral division noise
    # scales like 1/n, so the tolerance is graded with the density floor.
    k0 = grid.kx[4]
    env = _envelope(grid, width=0.8)  # edge tail below machine epsilon
    psi = np.stack([env * np.exp(1j * k0 * grid.X), np.zeros(grid.shape, complex)])
    state = SpinorField(grid, psi).normalize()
    pi, w = complex_momentum(state)
    n = state.density()
    core = n > 0.1 * n.max()
    np.testing.assert_allclose(pi[0][core], HBAR * k0, atol=1e-10)
    np.testing.assert_allclose(pi[1][core], 0.0, atol=1e-10)
    tail = n > 1e-6 * n.max()
    np.testing.assert_allclose(pi[0][tail], HBAR * k0, atol=1e-5)


def test_real_envelope_has_osmotic_momentum_only(grid):
    width = 0.6
    state = _state(grid, (1.0, 0.0), _envelope(grid, width=width))
    pi, w = complex_momentum(state)
    n = state.density()
    dense = n > 1e-6 * n.max()
    assert np.max(np.abs(pi[:, dense])) <= 1e-10
    # w = -(hbar/2) d ln n / dx with ln n = const - (x^2+y^2)/(2 width^2)
    expected = 0.5 * HBAR * grid.X / width**2
    assert np.max(np.abs(w[0][dense] - expected[dense])) <= 1e-8


def test_field_state_freezes_invalid_points(grid):
    params = ModelParams()
    state = initial_state(params, grid)
    fs = FieldState(grid, params.mass_au, 1e-12, state=state,
                    init_fields=initial_fields(params, grid))
    s_before = fs.s.copy()
    invalid = ~fs.valid
    assert invalid.any()
    # Drive one update from a different state: invalid points must not move.
    other = initial_state(params.with_(init_kind="uncorrelated"), grid)
    other.time = 1.0
    fs.update(other)
    np.testing.assert_array_equal(fs.s[:, ~fs.valid], s_before[:, ~fs.valid])
    assert fs.time == 1.0


def test_mask_monotonicity(grid):
    params = ModelParams()
    state = initial_state(params, grid)
    valid_sets = []
    for eps in (1e-30, 1e-20, 1e-12, 1e-6):
        fs = FieldState(grid, params.mass_au, eps, state=state,
                        init_fields=initial_fields(params, grid))
        valid_sets.append(fs.valid.copy())
    for tighter, looser in zip(valid_sets[1:], valid_sets[:-1]):
        assert np.all(looser[tighter])  # tighter valid set is a subset


def test_geometric_tensor_vanishes_for_constant_polarization(grid):
    state = _state(grid, (1.0, 1.0))
    n, sigma = sigma_and_density(state)
    s = sigma / np.where(n > 0, n, 1.0)
    q = geometric_tensor(grid, n, sigma, s)
    dense = n > 1e-6 * n.max()
    assert np.max(np.abs(q.q[..., dense])) <= 1e-10


def test_geometric_tensor_of_equatorial_winding_with_exact_gradients(grid):
    # s = (cos phi, sin phi, 0): planar gradients, so the curvature triple
    # product vanishes while the metric has rank 1.  Hand-computed gradients
    # feed the tensor assembly (the winding field is not box-periodic, so
    # spectral gradients would carry seam artifacts unrelated to the algebra).
    from ciphase.fields import geometric_tensor_from_gradients

    phi = np.arctan2(grid.Y, grid.X)
    rho = np.hypot(grid.X, grid.Y)
    safe = np.where(rho > 0, rho, 1.0)
    s = np.stack([np.cos(phi), np.sin(phi), np.zeros(grid.shape)])
    # d phi / dx = -y/rho^2, d phi / dy = x/rho^2
    phix = -grid.Y / safe**2
    phiy = grid.X / safe**2
    tangent = np.stack([-np.sin(phi), np.cos(phi), np.zeros(grid.shape)])
    q = geometric_tensor_from_gradients(grid, s, tangent * phix, tangent * phiy)
    ring = (rho > 2.0) & (rho < 4.0)
    assert np.max(np.abs(q.curvature[ring])) <= 1e-12
    g = q.g
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    tr = g[0, 0] + g[1, 1]
    assert np.max(np.abs(det[ring])) <= 1e-14
    # trace = (|s_x|^2+|s_y|^2)/4 = 1/(4 rho^2) for this field
    np.testing.assert_allclose(tr[ring], 1.0 / (4 * rho[ring] ** 2), rtol=1e-12)


def test_geometric_tensor_pipeline_on_periodic_tilt_field(grid):
    # Smooth box-periodic Bloch texture with analytic tensor: theta and
    # alpha vary sinusoidally, so the spectral pipeline must reproduce
    # g = (dtheta dtheta + sin^2 theta dalpha dalpha)/4 and
    # B_xy = -hbar sin(theta) (theta_x alpha_y - theta_y alpha_x)/2.
    kx = 2 * np.pi / grid.length_x
    ky = 2 * np.pi / grid.length_y
    theta = 1.1 + 0.4 * np.sin(kx * grid.X) * np.cos(ky * grid.Y)
    alpha = 0.7 * np.cos(kx * grid.X) + 0.3 * np.sin(ky * grid.Y)
    s = np.stack(
        [np.sin(theta) * np.cos(alpha), np.sin(theta) * np.sin(alpha), np.cos(theta)]
    )
    n = np.ones(grid.shape)
    q = geometric_tensor(grid, n, s * n, s)

    tx = 0.4 * kx * np.cos(kx * grid.X) * np.cos(ky * grid.Y)
    ty = -0.4 * ky * np.sin(kx * grid.X) * np.sin(ky * grid.Y)
    ax = -0.7 * kx * np.sin(kx * grid.X)
    ay = 0.3 * ky * np.cos(ky * grid.Y)
    g_xx = (tx * tx + np.sin(theta) ** 2 * ax * ax) / 4
    g_xy = (tx * ty + np.sin(theta) ** 2 * ax * ay) / 4
    curv = -HBAR * np.sin(theta) * (tx * ay - ty * ax) / 2
    np.testing.assert_allclose(q.g[0, 0], g_xx, atol=1e-10)
    np.testing.assert_allclose(q.g[0, 1], g_xy, atol=1e-10)
    np.testing.assert_allclose(q.curvature, curv, atol=1e-10)


def test_geometric_tensor_structure(grid):
    params = ModelParams()
    state = initial_state(params, grid)
    n, sigma = sigma_and_density(state)
    s = sigma / np.where(n > 0, n, 1.0)
    q = geometric_tensor(grid, n, sigma, s)
    dense = n > 1e-6 * n.max()
    # Hermitian in (k, j); metric symmetric PSD; curvature antisymmetric.
    np.testing.assert_allclose(
        q.q[0, 1][dense], np.conj(q.q[1, 0][dense]), atol=1e-12
    )
    g = q.g
    tr = g[0, 0] + g[1, 1]
    det = g[0, 0] * g[1, 1] - g[0, 1] ** 2
    assert np.min(tr[dense]) >= -1e-12
    assert np.min(det[dense]) >= -1e-10


def test_population_sum_is_one(grid):
    params = ModelParams()
    for kind in ("correlated", "uncorrelated"):
        state = initial_state(params.with_(init_kind=kind), grid)
        pm, pp = adiabatic_populations(state, params)
        assert pm + pp == pytest.approx(1.0, abs=1e-12)


def test_unit_norm_constraint_along_gradients(grid):
    # s . d_k s = 0 wherever the field is well resolved.
    params = ModelParams()
    state = initial_state(params, grid)
    n, sigma = sigma_and_density(state)
    s = sigma / np.where(n > 0, n, 1.0)
    from ciphase.fields import polarization_gradients

    sx, sy = polarization_gradients(grid, n, sigma, s)
    core = n > 1e-2 * n.max()
    assert np.max(np.abs(np.sum(s * sx, axis=0)[core])) <= 1e-4
    assert np.max(np.abs(np.sum(s * sy, axis=0)[core])) <= 1e-4
    dense = n > 1e-6 * n.max()
    assert np.median(np.abs(np.sum(s * sx, axis=0)[dense])) <= 1e-5


def test_synthetic_polarization_rejects_non_unit_fields(grid):
    s = np.zeros((3, grid.nx, grid.ny))
    s[0] = 0.5
    with pytest.raises(ValueError):
        synthetic_polarization(grid, s)
