import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridpic.kernels import (DET_EPSILON, MapStats, ModeBasis, bspline, configuration_map, map_matrices,
                               mode_exponents, orthogonalized_quadratic, scalar_mode, weight, weight_gradient)
from hybridpic.state import MacGrid, Particles, face_position, nearest_face

unit = st.floats(-1.0, 1.0, allow_nan=False)


def test_bspline_values():
    assert bspline(0.0) == 0.75
    assert bspline(1.0) == pytest.approx(0.125)
    assert bspline(-1.0) == pytest.approx(0.125)
    assert bspline(1.5) == 0.0
    assert bspline(0.5) == pytest.approx(0.5)


@given(st.floats(0.0, 1.0), st.floats(1e-3, 10.0))
def test_partition_of_unity_1d(frac, dx):
    nodes = np.arange(-3, 4) * dx
    x = frac * dx
    assert abs(weight((x - nodes)[:, None], dx).sum() - 1.0) < 1e-12


@given(st.tuples(unit, unit, unit), st.floats(1e-2, 1.0))
def test_gradient_matches_finite_difference(off, dx):
    off = np.asarray(off) * 1.4 * dx
    h = 1e-6 * dx
    g = weight_gradient(off, dx)
    for b in range(3):
        e = np.eye(3)[b] * h
        fd = (weight(off + e, dx) - weight(off - e, dx)) / (2 * h)
        assert abs(fd - g[b]) * dx < 1e-6


def test_face_position_is_staggered():
    g = MacGrid((4, 4), 0.5)
    np.testing.assert_allclose(face_position((2, 1), 0, g), [1.0, 0.75])
    np.testing.assert_allclose(face_position((2, 1), 1, g), [1.25, 0.5])
    np.testing.assert_allclose(g.face_positions(0)[2, 1], [1.0, 0.75])
    assert nearest_face((1.01, 0.76), 0, g) == (2, 1)


def test_mode_order_2d():
    e = mode_exponents(2)
    assert len(e) == 9
    assert [tuple(x) for x in e[:4]] == [(0, 0), (1, 0), (0, 1), (1, 1)]
    assert all(max(x) == 2 for x in e[4:])
    assert [tuple(x) for x in e[4:6]] == [(2, 0), (0, 2)]


def test_mode_order_3d_multilinear_first():
    e = mode_exponents(3)
    assert len(e) == 27
    assert [tuple(x) for x in e[:8]] == [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1),
                                         (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)]


def test_basis_size_limits():
    assert ModeBasis(2, 9).n_modes == 9
    with pytest.raises(ValueError):
        ModeBasis(2, 10)
    with pytest.raises(ValueError):
        ModeBasis(3, 0)
    assert ModeBasis(2, 4).names() == ["1", "x", "y", "xy"]


def test_orthogonalized_quadratic_formula():
    dx, z = 0.1, 0.03
    w = float(weight(np.array([z, 0.0]), dx))
    expect = w**2 - w * z * (dx**2 - 4 * z**2) / dx**2 - dx**2 / 4
    assert orthogonalized_quadratic(z, w, dx) == pytest.approx(expect, rel=1e-15)
    b = ModeBasis(2, 5, orthogonalize=True)
    assert scalar_mode(b, 4, np.array([z, 0.2]), w, dx) == pytest.approx(expect, rel=1e-15)
    plain = ModeBasis(2, 5, orthogonalize=False)
    assert scalar_mode(plain, 4, np.array([z, 0.2]), w, dx) == pytest.approx(z * z)


def test_scalar_mode_rejects_bad_index():
    with pytest.raises(IndexError):
        scalar_mode(ModeBasis(2, 4), 4, np.zeros(2))


def _particle(pos, prev, C):
    p = Particles.from_arrays(np.array([pos]))
    p.prev_pos[0] = prev
    p.affine[0] = C
    return p[0]


def test_configuration_map_identity_without_derivatives():
    part = _particle([0.3, 0.4], [0.29, 0.41], np.zeros((2, 2)))
    x = np.array([0.35, 0.45])
    np.testing.assert_allclose(configuration_map(x, part, 0.01), part.prev_position + (x - part.position))


@given(st.tuples(unit, unit, unit, unit), st.floats(0.0, 0.05))
def test_configuration_map_inverts_affine_motion(c, dt):
    C = np.array(c).reshape(2, 2) * 5.0
    part = _particle([0.3, 0.4], [0.28, 0.41], C)
    x_prev = np.array([0.31, 0.37])
    # a point carried by the affine flow from the previous configuration
    x_now = part.position + (np.eye(2) + dt * C) @ (x_prev - part.prev_position)
    np.testing.assert_allclose(configuration_map(x_now, part, dt), x_prev, atol=1e-12)


def test_configuration_map_singular_fallback():
    C = -np.eye(2) / 0.01
    stats = MapStats()
    part = _particle([0.3, 0.4], [0.3, 0.4], C)
    x = np.array([0.31, 0.42])
    np.testing.assert_allclose(configuration_map(x, part, 0.01, stats), x)
    assert stats.fallbacks == 1
    B = map_matrices(np.stack([C, np.zeros((2, 2))]), 0.01, stats)
    np.testing.assert_allclose(B[0], np.eye(2))
    assert stats.fallbacks == 2
    assert DET_EPSILON > 0
