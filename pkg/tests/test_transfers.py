import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridpic import transfers as T
from hybridpic import oracles
from hybridpic.kernels import ModeBasis
from hybridpic.state import FLUID, SOLID, MacGrid, Particles
from hybridpic.verification import random_particles, rel_err

seeds = st.integers(0, 2**32 - 1)


def _state(seed, n_modes=4, phases="mixed", dims=(9, 8), dt=0.01):
    rng = np.random.default_rng(seed)
    dx = float(10 ** rng.uniform(-2, 0))
    return random_particles(rng, dims, dx, int(rng.integers(1, 60)), n_modes, phases, dt), dims, dx


def _fill(grid, fn):
    for a in range(grid.dim):
        x = grid.face_positions(a)
        grid.face_velocity_intermediate[a] = fn(x)[..., a]


@pytest.mark.parametrize("kind", ["pic", "apic", "polypic"])
@given(seed=seeds)
def test_p2g_conserves_mass_and_momentum(kind, seed):
    p, dims, dx = _state(seed)
    basis = ModeBasis(2, 4) if kind == "polypic" else None
    g = T.p2g_scheme(kind, p, MacGrid(dims, dx), basis, 0.01)
    m, mv = T.grid_totals(g)
    np.testing.assert_allclose(m, p.mass.sum(), rtol=1e-12)
    expect = T.expected_momentum(p, kind, g, basis, 0.01)
    scale = np.sum(p.mass[:, None] * (np.abs(p.vel) + np.abs(p.coeffs[:, 0])))
    assert np.max(np.abs(mv - expect)) <= 1e-11 * scale


@given(seed=seeds)
def test_pic_momentum_is_particle_momentum(seed):
    p, dims, dx = _state(seed)
    _, mv = T.grid_totals(T.p2g_pic(p, MacGrid(dims, dx)))
    np.testing.assert_allclose(mv, (p.mass[:, None] * p.vel).sum(0), rtol=1e-12, atol=1e-14)


@given(seed=seeds)
def test_mixture_split_adds_up(seed):
    p, dims, dx = _state(seed)
    gf = T.p2g_mixture_fluid(p, MacGrid(dims, dx), None, 0.0, "apic")
    gs = T.p2g_mixture_solid(p, MacGrid(dims, dx), None, 0.0, "apic")
    total = float(gf.face_mass[0].sum() + gs.face_mass[0].sum())
    assert total == pytest.approx(p.mass.sum() + p.absorbed[p.phase == SOLID].sum(), rel=1e-12)
    assert np.all(p.absorbed[p.phase == FLUID] == 0)


@given(seed=seeds)
def test_apic_with_zero_derivatives_is_pic(seed):
    p, dims, dx = _state(seed)
    p.affine[:] = 0
    a = T.p2g_apic(p, MacGrid(dims, dx))
    b = T.p2g_pic(p, MacGrid(dims, dx))
    assert rel_err(a.face_momentum, b.face_momentum) <= 1e-14


def test_apic_gather_reproduces_linear_field():
    g = MacGrid((10, 10), 0.1)
    G = np.array([[0.3, -1.2], [0.7, 0.4]])
    u0 = np.array([0.5, -0.25])
    _fill(g, lambda x: u0 + x @ G.T)
    pos = np.random.default_rng(0).uniform(0.2, 0.8, (20, 2))
    p = T.g2p("apic", g, Particles.from_arrays(pos))
    np.testing.assert_allclose(p.vel, u0 + pos @ G.T, atol=1e-13)
    np.testing.assert_allclose(p.affine, np.broadcast_to(G, (20, 2, 2)), atol=1e-12)


def test_polypic_gather_recovers_bilinear_coefficients():
    g = MacGrid((10, 10), 0.1)
    a, b, c, d = 0.2, -1.0, 0.5, 3.0
    f = lambda x: a + b * x[..., 0] + c * x[..., 1] + d * x[..., 0] * x[..., 1]
    _fill(g, lambda x: np.stack([f(x), 2 * f(x)], -1))
    pos = np.random.default_rng(1).uniform(0.2, 0.8, (10, 2))
    p = T.g2p("polypic", g, Particles.from_arrays(pos, n_modes=4), ModeBasis(2, 4))
    x, y = pos[:, 0], pos[:, 1]
    expect = np.stack([a + b * x + c * y + d * x * y, b + d * y, c + d * x, np.full(10, d)], -1)
    np.testing.assert_allclose(p.coeffs[:, :, 0], expect, atol=1e-10)
    np.testing.assert_allclose(p.coeffs[:, :, 1], 2 * expect, atol=1e-10)


def test_apic_round_trip_of_linear_field_is_exact():
    G = np.array([[0.0, -2.0], [2.0, 0.0]])
    rng = np.random.default_rng(2)
    pos = (np.repeat(np.argwhere(np.ones((8, 8))) + 1, 4, 0) + rng.uniform(0, 1, (256, 2))) * 0.1
    p = Particles.from_arrays(pos, pos @ G.T, 1.0)
    p.affine[:] = G
    g = T.p2g_apic(p, MacGrid((10, 10), 0.1))
    for ax in range(2):
        live = g.face_mass[ax] > 0
        x = g.face_positions(ax)
        np.testing.assert_allclose(g.face_velocity[ax][live], (x @ G.T)[..., ax][live], atol=1e-12)


def test_apic_preserves_angular_momentum_of_rotation():
    p, dims, dx = _state(7, phases="fluid")
    g = T.p2g_apic(p, MacGrid(dims, dx))
    assert T.grid_angular_momentum(g) == pytest.approx(T.apic_angular_momentum(p, dx), rel=1e-11)


def test_affine_sign_mutation_is_visible(monkeypatch):
    p, dims, dx = _state(3, phases="fluid")
    monkeypatch.setattr(T, "_AFFINE_SIGN", -1.0)
    g = T.p2g_apic(p, MacGrid(dims, dx))
    assert T.grid_angular_momentum(g) != pytest.approx(T.apic_angular_momentum(p, dx), rel=1e-6)


@pytest.mark.parametrize("kind", ["pic", "apic", "polypic"])
def test_fast_transfers_match_oracle(kind):
    rng = np.random.default_rng(99)
    dims, dx = (4, 5), 0.2
    p = random_particles(rng, dims, dx, 4, 9, "mixed", 0.02)
    basis = ModeBasis(2, 9)
    g = T.p2g_scheme(kind, p, MacGrid(dims, dx), basis, 0.02)
    M, P = oracles.p2g(p, dims, dx, kind, basis.exponents, True, 0.02)
    assert rel_err(g.face_mass, M) <= 1e-12
    assert rel_err(g.face_momentum, P) <= 1e-12


def test_gather_matches_oracle_velocity_and_gradient():
    rng = np.random.default_rng(5)
    dims, dx = (5, 4, 3), 0.3
    g = MacGrid(dims, dx)
    fv = [rng.normal(size=g.face_shape(a)) for a in range(3)]
    g.face_velocity_intermediate = fv
    pos = rng.uniform(dx, np.array(dims) * dx - dx, (3, 3))
    p = T.g2p("apic", g, Particles.from_arrays(pos))
    v, grad, _ = oracles.g2p(fv, dims, dx, pos)
    assert rel_err(p.vel, v) <= 1e-12
    assert rel_err(p.affine, grad) <= 1e-12


def test_worker_count_changes_only_summation_order():
    p, dims, dx = _state(11, dims=(20, 20))
    a = T.p2g_apic(p, MacGrid(dims, dx), workers=1)
    b = T.p2g_apic(p, MacGrid(dims, dx), workers=3)
    c = T.p2g_apic(p, MacGrid(dims, dx), workers=3)
    assert rel_err(a.face_momentum, b.face_momentum) <= 1e-14
    for x, y in zip(b.face_momentum, c.face_momentum):
        assert np.array_equal(x, y)


def test_dense_fallback_is_counted():
    rng = np.random.default_rng(8)
    g = MacGrid((8, 8), 0.1)
    g.face_velocity_intermediate = [rng.normal(size=g.face_shape(a)) for a in range(2)]
    p = Particles.from_arrays(rng.uniform(0.2, 0.6, (10, 2)), n_modes=9)
    stats = T.TransferStats()
    T.g2p("polypic", g, p, ModeBasis(2, 9), 0.0, stats=stats)
    assert stats.dense_solves > 0
    multi = T.TransferStats()
    T.g2p("polypic", g, p, ModeBasis(2, 4), 0.0, stats=multi)
    assert multi.dense_solves == 0
