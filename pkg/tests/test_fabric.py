import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridpic.fabric import FabricMesh, absorb, build_sheet, compute_spring_forces
from hybridpic.state import FLUID, SOLID, FabricSheet, Particles


def _pair(length, rest=1.0, k=10.0, c=0.0, vel=None):
    p = Particles.from_arrays([[0.0, 0.0], [length, 0.0]], vel, 1.0, SOLID)
    mesh = FabricMesh(2, edges=np.array([[0, 1]]), rest_length=np.array([rest]), stiffness=np.array([k]),
                      damping=np.array([c]))
    return mesh, p


def test_spring_at_rest_length_exerts_nothing():
    mesh, p = _pair(1.0)
    assert np.all(compute_spring_forces(mesh, p) == 0)


def test_stretched_spring_pulls_together():
    mesh, p = _pair(1.2, k=10.0)
    f = compute_spring_forces(mesh, p)
    np.testing.assert_allclose(f, [[2.0, 0.0], [-2.0, 0.0]])


def test_dashpot_resists_separation():
    mesh, p = _pair(1.0, c=3.0, vel=[[0.0, 0.0], [0.5, 0.0]])
    np.testing.assert_allclose(compute_spring_forces(mesh, p)[0], [1.5, 0.0])


@given(st.integers(0, 10_000))
def test_spring_forces_sum_to_zero(seed):
    sheet = FabricSheet(origin=(0.2, 0.3), counts=(6, 3), spacing=0.05, axes=(0, 1), kind="cloth")
    p, mesh = build_sheet(sheet, 2, 0.05)
    rng = np.random.default_rng(seed)
    p.pos += rng.normal(scale=0.01, size=p.pos.shape)
    p.vel = rng.normal(size=p.pos.shape)
    np.testing.assert_allclose(compute_spring_forces(mesh, p).sum(0), 0.0, atol=1e-12)


def test_cloth_and_yarn_topology():
    cloth = FabricSheet(origin=(0.2, 0.3), counts=(4, 3), spacing=0.1, axes=(0, 1), kind="cloth", pinned=("ends",))
    p, mesh = build_sheet(cloth, 2, 0.1, pid0=100)
    assert len(p) == 12 and mesh.n_elements == 2 * 3 * 2
    assert p.pid[0] == 100 and np.all(p.phase == SOLID)
    assert p.pinned.sum() == 6
    assert len(np.unique(np.sort(mesh.edges, axis=1), axis=0)) == len(mesh.edges)
    yarn = FabricSheet(origin=(0.2, 0.3), counts=(5,), spacing=0.1, axes=(0,), kind="yarn")
    p, mesh = build_sheet(yarn, 2, 0.1)
    assert mesh.n_elements == 4 and np.all(mesh.elements[:, 2] == -1)
    np.testing.assert_allclose(mesh.rest_length, 0.1)


def test_absorb_caps_at_capacity_and_conserves_mass():
    pos = [[0.5, 0.5], [0.52, 0.5], [0.5, 0.53], [0.9, 0.9]]
    p = Particles.from_arrays(pos, None, [2.0, 1.0, 1.0, 1.0], [SOLID, FLUID, FLUID, FLUID])
    p.capacity[0] = 0.5
    p.absorb_rate[0] = 100.0
    total = p.mass.sum() + p.absorbed.sum()
    res = absorb(p, 0.05, 0.01)
    assert p.absorbed[0] == pytest.approx(0.5)
    assert res.transferred == pytest.approx(0.5)
    assert p.mass.sum() + p.absorbed.sum() == pytest.approx(total, rel=1e-15)
    assert p.mass[3] == 1.0


def test_absorb_deletes_drained_fluid():
    p = Particles.from_arrays([[0.5, 0.5], [0.52, 0.5]], None, [1.0, 0.01], [SOLID, FLUID])
    p.capacity[0] = 1.0
    p.absorb_rate[0] = 10.0
    res = absorb(p, 0.05, 0.01)
    assert len(p) == 1 and list(res.deleted_pids) == [1]
    assert p.absorbed[0] == pytest.approx(0.01)


def test_absorb_without_solids_is_noop():
    p = Particles.from_arrays([[0.5, 0.5]], None, 1.0, FLUID)
    assert absorb(p, 0.05, 0.01).transferred == 0.0
