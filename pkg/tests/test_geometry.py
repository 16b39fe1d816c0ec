import numpy as np
import pytest

from ciphase import (
    FieldState,
    Grid2D,
    GeometryError,
    LoopPath,
    ModelParams,
    advect_path,
    initial_fields,
    initial_state,
    loop_phase_from_s,
    make_arc,
    make_circle,
    open_path_decomposition,
    path_phase_from_momentum,
    quantization_integer,
    synthetic_polarization,
    wrap_angle,
)
from ciphase.fields import MomentumFields
from ciphase.geometry import (
    midpoint_deltas,
    northern_connection,
    rotation_taking_to_pole,
    unwrap_towards,
)
from ciphase.model import berry_connection


@pytest.fixture(scope="module")
def grid():
    return Grid2D(256, 256, 20.0, 20.0)


@pytest.fixture(scope="module")
def params():
    return ModelParams()


@pytest.fixture(scope="module")
def t0_fields(grid, params):
    state = initial_state(params, grid)
    fs = FieldState(
        grid, params.mass_au, 1e-12, state=state, init_fields=initial_fields(params, grid)
    )
    return state, fs


def _latitude_field(grid, theta):
    phi = np.arctan2(grid.Y, grid.X)
    s = np.stack(
        [
            np.sin(theta) * np.cos(phi),
            np.sin(theta) * np.sin(phi),
            np.full(grid.shape, np.cos(theta)),
        ]
    )
    return synthetic_polarization(grid, s)


# --- path construction -------------------------------------------------------


def test_circle_geometry(grid):
    path = make_circle(grid, 2.0, 512)
    assert path.n_points == 512
    assert path.closed
    assert path.max_spacing() == pytest.approx(2 * np.pi * 2.0 / 512, rel=1e-3)
    radii = np.hypot(path.points[:, 0], path.points[:, 1])
    np.testing.assert_allclose(radii, 2.0, rtol=1e-12)


def test_circle_rejects_bad_inputs(grid):
    with pytest.raises(ValueError):
        make_circle(grid, 12.0, 512)  # leaves the box
    with pytest.raises(ValueError):
        make_circle(grid, -1.0, 512)
    with pytest.raises(GeometryError):
        make_circle(grid, 3.0, 16)  # spacing guard


def test_grid_snapped_circle_has_unique_nodes(grid):
    path = make_circle(grid, 2.0, 512, sampling="grid-snapped")
    pts = path.points
    assert len(pts) < 512  # duplicates removed
    assert np.all(np.any(pts != np.roll(pts, 1, axis=0), axis=1))
    # every point is a grid node
    ix = (pts[:, 0] + 10.0) / grid.dx
    np.testing.assert_allclose(ix, np.round(ix), atol=1e-9)


def test_wrap_angle_range():
    angles = np.array([0.0, np.pi, -np.pi, 3 * np.pi, -2.5 * np.pi, 6.8])
    wrapped = wrap_angle(angles)
    assert np.all(wrapped > -np.pi - 1e-12)
    assert np.all(wrapped <= np.pi + 1e-12)
    np.testing.assert_allclose(np.mod(wrapped - angles, 2 * np.pi), 0.0, atol=1e-12)


def test_unwrap_towards():
    assert unwrap_towards(0.1, 6.2) == pytest.approx(0.1 + 2 * np.pi)
    assert unwrap_towards(3.0, 3.1) == pytest.approx(3.0)


# --- the northern-gauge connection ------------------------------------------


def test_connection_matches_quoted_form():
    rng = np.random.default_rng(2)
    v = rng.standard_normal((3, 50))
    v /= np.linalg.norm(v, axis=0)
    v = v[:, v[2] > -0.9]
    a = northern_connection(v)
    tan_half = np.sqrt((1 - v[2]) / (1 + v[2]))
    e_phi = np.stack([-v[1], v[0], np.zeros_like(v[0])]) / np.hypot(v[0], v[1])
    ref = -0.5 * tan_half * e_phi
    np.testing.assert_allclose(a, ref, atol=1e-13)


def test_rotation_taking_to_pole():
    rng = np.random.default_rng(3)
    for _ in range(10):
        v = rng.standard_normal(3)
        v /= np.linalg.norm(v)
        r = rotation_taking_to_pole(v)
        np.testing.assert_allclose(r @ v, [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)


# --- loop phase from the polarization image ----------------------------------


def test_constant_polarization_gives_zero_phase(grid):
    s = np.zeros((3, grid.nx, grid.ny))
    s[0] = 0.6
    s[1] = 0.8
    pol = synthetic_polarization(grid, s)
    rec = loop_phase_from_s(pol, make_circle(grid, 2.0, 512))
    assert rec.gamma == pytest.approx(0.0, abs=1e-12)
    assert rec.coverage == 1.0


def test_equatorial_winding_gives_minus_pi(grid):
    pol = _latitude_field(grid, np.pi / 2)
    rec = loop_phase_from_s(pol, make_circle(grid, 2.0, 512))
    assert rec.gamma == pytest.approx(-np.pi, abs=1e-3)


@pytest.mark.parametrize("theta", [np.pi / 6, np.pi / 3, np.pi / 2, 2 * np.pi / 3])
def test_constant_latitude_phase_matches_analytic(grid, theta):
    pol = _latitude_field(grid, theta)
    rec = loop_phase_from_s(pol, make_circle(grid, 2.0, 512))
    assert rec.gamma == pytest.approx(-2 * np.pi * np.sin(theta / 2) ** 2, abs=1e-3)


def test_deep_latitude_triggers_pole_rotation(grid):
    # The image circles the sphere just above the south pole; the rotated
    # frame must still produce the analytic value modulo 2pi.
    theta = 2.9
    pol = _latitude_field(grid, theta)
    rec = loop_phase_from_s(pol, make_circle(grid, 2.0, 512))
    expected = -2 * np.pi * np.sin(theta / 2) ** 2
    assert wrap_angle(rec.gamma - expected) == pytest.approx(0.0, abs=1e-3)


def test_loop_phase_invariant_under_global_rotation(grid):
    theta = np.pi / 3
    pol = _latitude_field(grid, theta)
    path = make_circle(grid, 2.0, 512)
    base = loop_phase_from_s(pol, path).gamma
    rng = np.random.default_rng(5)
    for _ in range(4):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0, 0.5)
        K = np.array(
            [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
        )
        R = np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * (K @ K)
        rotated = synthetic_polarization(grid, np.einsum("ab,bxy->axy", R, pol.s))
        got = loop_phase_from_s(rotated, path).gamma
        assert got == pytest.approx(base, abs=1e-6)


def test_loop_phase_requires_closed_path(grid):
    pol = _latitude_field(grid, np.pi / 2)
    arc = make_arc(grid, 2.0, 0.0, np.pi, 256)
    with pytest.raises(GeometryError):
        loop_phase_from_s(pol, arc)


def test_strict_mode_rejects_partial_coverage(grid, params):
    state, fs = initial_state(params, grid), None
    fs = FieldState(grid, params.mass_au, 1e-6, state=state,
                    init_fields=initial_fields(params, grid))
    path = make_circle(grid, 2.0, 512)
    with pytest.raises(GeometryError, match="coverage"):
        loop_phase_from_s(fs.polarization, path, strict=True)


def test_refinement_stability(grid):
    pol = _latitude_field(grid, np.pi / 3)
    g1 = loop_phase_from_s(pol, make_circle(grid, 2.0, 512)).gamma
    g2 = loop_phase_from_s(pol, make_circle(grid, 2.0, 1024)).gamma
    assert abs(g2 - g1) < 1e-3


# --- momentum-route phases ----------------------------------------------------


def test_zero_momentum_gives_zero_phase(grid):
    mom = MomentumFields(
        grid,
        np.zeros((2, grid.nx, grid.ny)),
        np.zeros((2, grid.nx, grid.ny)),
        np.ones(grid.shape, bool),
        0.0,
        1.0,
    )
    rec = path_phase_from_momentum(mom, make_circle(grid, 2.0, 512))
    assert rec.gamma == 0.0
    assert rec.coverage == 1.0


def test_initial_state_ring_current_phase(t0_fields):
    _, fs = t0_fields
    rec = path_phase_from_momentum(fs.momenta, make_circle(fs.grid, 2.0, 512))
    assert rec.gamma == pytest.approx(np.pi, rel=0.02)


def test_methods_agree_mod_two_pi_at_t0(t0_fields):
    _, fs = t0_fields
    for radius in (2.0, 2.5, 3.0):
        path = make_circle(fs.grid, radius, 512)
        g_s = loop_phase_from_s(fs.polarization, path).gamma
        g_m = path_phase_from_momentum(fs.momenta, path).gamma
        assert abs(wrap_angle(g_m - g_s)) <= 0.02 * np.pi


def test_orientation_reversal_negates_phases(grid, t0_fields):
    _, fs = t0_fields
    path = make_circle(grid, 2.5, 512)
    rev = path.reversed()
    assert loop_phase_from_s(fs.polarization, rev).gamma == pytest.approx(
        -loop_phase_from_s(fs.polarization, path).gamma, abs=1e-9
    )
    assert path_phase_from_momentum(fs.momenta, rev).gamma == pytest.approx(
        -path_phase_from_momentum(fs.momenta, path).gamma, abs=1e-9
    )


def test_open_path_concatenation(t0_fields):
    state, fs = t0_fields
    grid = fs.grid
    a = make_arc(grid, 2.5, 0.2, 0.9, 200)
    b = make_arc(grid, 2.5, 0.9, 1.7, 200)
    full = make_arc(grid, 2.5, 0.2, 1.7, 400)
    g = lambda p: path_phase_from_momentum(fs.momenta, p).gamma
    assert g(a) + g(b) == pytest.approx(g(full), abs=1e-6)


# --- open-path decomposition --------------------------------------------------


def test_zero_length_open_path(t0_fields):
    state, _ = t0_fields
    path = LoopPath(np.array([[2.0, 0.0]]), closed=False)
    res = open_path_decomposition(state, path)
    assert res.gamma == res.theta_ba == res.gamma_el == 0.0


def _packet_center_of(state):
    import ciphase

    return ciphase.packet_center(ciphase.ModelParams())


def test_half_circle_identity(t0_fields):
    # Half circle around the packet center, inside the dense core.
    state, _ = t0_fields
    x0, y0 = _packet_center_of(state)
    arc = make_arc(state.grid, 0.45, 0.1, 0.1 + np.pi, 600, center=(x0, y0))
    res = open_path_decomposition(state, arc)
    assert res.coverage == 1.0
    assert abs(res.identity_gap) <= 0.01


def test_closure_limit_recovers_loop(t0_fields):
    # A full circle traversed as an open path, inside the dense core: the
    # endpoint term vanishes and gamma matches gamma_el mod 2 pi.
    state, fs = t0_fields
    x0, y0 = _packet_center_of(state)
    n_pts = 721
    ang = np.linspace(0.0, 2 * np.pi, n_pts)  # endpoint returns to start
    pts = np.column_stack([x0 + 0.45 * np.cos(ang), y0 + 0.45 * np.sin(ang)])
    res = open_path_decomposition(state, LoopPath(pts, closed=False))
    assert res.coverage == 1.0
    assert res.theta_ba == pytest.approx(0.0, abs=1e-6)
    assert abs(wrap_angle(res.gamma - res.gamma_el)) <= 1e-5
    loop = LoopPath(pts[:-1], closed=True)
    loop_gamma = path_phase_from_momentum(fs.momenta, loop).gamma
    assert abs(wrap_angle(res.gamma - loop_gamma)) <= 5e-3


def test_random_arcs_identity(t0_fields):
    # Arcs constrained to the dense neighborhood of the initial packet.
    state, _ = t0_fields
    rng = np.random.default_rng(8)
    for _ in range(10):
        radius = rng.uniform(2.3, 3.0)
        start = np.pi + rng.uniform(-0.2, 0.05)
        span = rng.uniform(0.05, 0.15)
        arc = make_arc(state.grid, radius, start, start + span, 200)
        res = open_path_decomposition(state, arc)
        assert res.coverage == 1.0
        assert abs(res.identity_gap) <= 0.01


# --- quantization ---------------------------------------------------------------


def test_quantization_on_loops_around_origin(t0_fields, params):
    _, fs = t0_fields
    conn = lambda x, y: berry_connection(params.gauge, x, y)
    for radius in (0.8, 1.4, 2.0, 2.7, 3.3):
        n_int, residual, flagged = quantization_integer(
            fs.momenta, conn, make_circle(fs.grid, radius, 512)
        )
        assert n_int == 0
        assert abs(residual) < 0.02
        assert not flagged


def test_quantization_on_non_encircling_loop(t0_fields, params):
    _, fs = t0_fields
    conn = lambda x, y: berry_connection(params.gauge, x, y)
    path = make_circle(fs.grid, 1.0, 512, center=(3.0, 0.0), label="offset")
    n_int, residual, flagged = quantization_integer(fs.momenta, conn, path)
    assert n_int == 0 and not flagged
    # both line integrals individually small on a simply connected patch
    rec = path_phase_from_momentum(fs.momenta, path)
    assert abs(rec.gamma) < 0.05


# --- advection -------------------------------------------------------------------


def _uniform_mom(grid, vfield, mass=1.0):
    return MomentumFields(
        grid, vfield * mass, np.zeros_like(vfield), np.ones(grid.shape, bool), 0.0, mass
    )


def test_advection_with_zero_velocity(grid):
    mom = _uniform_mom(grid, np.zeros((2, grid.nx, grid.ny)))
    path = make_circle(grid, 2.0, 256)
    moved, frozen = advect_path(path, mom, 5.0)
    assert frozen == 0
    np.testing.assert_array_equal(moved.points, path.points)
    assert moved.closed


def test_advection_rigid_rotation(grid):
    omega = 2e-3
    v = np.stack([-omega * grid.Y, omega * grid.X])
    mom = _uniform_mom(grid, v)
    path = make_circle(grid, 2.0, 256)
    dt = 5.0
    moved, frozen = advect_path(path, mom, dt)
    assert frozen == 0
    radii = np.hypot(moved.points[:, 0], moved.points[:, 1])
    np.testing.assert_allclose(radii, 2.0, atol=1e-6)
    dphi = np.arctan2(moved.points[:, 1], moved.points[:, 0]) - np.arctan2(
        path.points[:, 1], path.points[:, 0]
    )
    np.testing.assert_allclose(wrap_angle(dphi), omega * dt, atol=(omega * dt) ** 3)


def test_advection_freezes_masked_points(grid):
    v = np.ones((2, grid.nx, grid.ny)) * 1e-3
    mom = MomentumFields(grid, v, np.zeros_like(v), np.zeros(grid.shape, bool), 0.0, 1.0)
    path = make_circle(grid, 2.0, 256)
    moved, frozen = advect_path(path, mom, 1.0)
    assert frozen == 256
    np.testing.assert_array_equal(moved.points, path.points)
