"""Mass-spring fabric stand-in and fluid absorption bookkeeping.

This is deliberately minimal: particle-sampled sheets joined by linear
springs, plus a capped absorption reservoir per solid particle. It exists so
the mixture transfers see solids with nonzero absorbed mass; it is not a model
of cloth or yarn mechanics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .state import FLUID, SOLID, FabricSheet, Particles


@dataclass
class FabricMesh:
    """Elements (triangles or rod segments) and the springs derived from them.

    Endpoints are stored as particle ids (``Particles.pid``) so the mesh survives
    deletions. ``elements`` rows hold 3 ids, the third being -1 for segments.
    """

    dim: int
    elements: np.ndarray = field(default_factory=lambda: np.zeros((0, 3), np.int64))
    rest_measure: np.ndarray = field(default_factory=lambda: np.zeros(0))
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))
    rest_length: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stiffness: np.ndarray = field(default_factory=lambda: np.zeros(0))
    damping: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_elements(self) -> int:
        return len(self.elements)

    @staticmethod
    def merge(meshes, dim: int) -> "FabricMesh":
        if not meshes:
            return FabricMesh(dim)
        cat = lambda name: np.concatenate([getattr(m, name) for m in meshes])
        return FabricMesh(dim, cat("elements"), cat("rest_measure"), cat("edges"), cat("rest_length"),
                          cat("stiffness"), cat("damping"))

    def drop_missing(self, pids: np.ndarray) -> None:
        """Remove elements and springs touching particles no longer present."""
        alive = lambda ids: np.isin(ids, pids) | (ids < 0)
        keep_e = np.all(alive(self.elements), axis=1)
        self.elements, self.rest_measure = self.elements[keep_e], self.rest_measure[keep_e]
        keep_s = np.all(alive(self.edges), axis=1)
        for name in ("edges", "rest_length", "stiffness", "damping"):
            setattr(self, name, getattr(self, name)[keep_s])


def _pinned_mask(sheet: FabricSheet, lattice: np.ndarray) -> np.ndarray:
    mask = np.zeros(len(lattice), bool)
    pins = sheet.pinned
    if isinstance(pins, str):
        pins = (pins,)
    for pin in pins:
        if pin == "ends":
            mask |= (lattice[:, 0] == 0) | (lattice[:, 0] == sheet.counts[0] - 1)
        elif pin == "corners":
            c = np.ones(len(lattice), bool)
            for k, n in enumerate(sheet.counts):
                c &= (lattice[:, k] == 0) | (lattice[:, k] == n - 1)
            mask |= c
        else:
            mask |= np.all(lattice == np.asarray(pin, np.int64).reshape(1, -1), axis=1)
    return mask


def build_sheet(sheet: FabricSheet, dim: int, dx: float, pid0: int = 0, n_modes: int = 1):
    """Sample a sheet into Solid particles and its element/spring mesh."""
    pos, lattice = sheet.vertex_lattice(dim)
    n = len(pos)
    vel = np.zeros(dim) if sheet.velocity is None else np.asarray(sheet.velocity, float)
    mass = sheet.density * sheet.spacing**dim
    p = Particles.from_arrays(pos, np.tile(vel, (n, 1)), mass, SOLID, n_modes)
    p.pid = np.arange(pid0, pid0 + n, dtype=np.int64)
    p.pinned = _pinned_mask(sheet, lattice)
    p.capacity[:] = sheet.capacity_ratio * mass
    p.absorb_rate[:] = p.capacity / sheet.absorption_time if sheet.absorption_time > 0 else 0.0

    index = -np.ones(sheet.counts, np.int64)
    index[tuple(lattice.T)] = np.arange(n)
    elements = []
    if sheet.kind == "yarn":
        for k in range(len(sheet.counts)):
            a = lattice[lattice[:, k] < sheet.counts[k] - 1]
            b = a.copy()
            b[:, k] += 1
            for ia, ib in zip(index[tuple(a.T)], index[tuple(b.T)]):
                elements.append((ia, ib, -1))
    else:
        base = lattice[np.all(lattice[:, :2] < np.asarray(sheet.counts[:2]) - 1, axis=1)]
        for q in base:
            i00 = index[tuple(q)]
            q10, q01, q11 = q.copy(), q.copy(), q.copy()
            q10[0] += 1
            q01[1] += 1
            q11[:2] += 1
            i10, i01, i11 = index[tuple(q10)], index[tuple(q01)], index[tuple(q11)]
            elements.append((i00, i10, i11))
            elements.append((i00, i11, i01))
    elements = np.array(elements, np.int64).reshape(-1, 3)

    if sheet.kind == "yarn":
        edges = elements[:, :2]
        rest_measure = np.linalg.norm(pos[edges[:, 1]] - pos[edges[:, 0]], axis=1)
    else:
        e = np.concatenate([elements[:, [0, 1]], elements[:, [1, 2]], elements[:, [2, 0]]])
        edges = np.unique(np.sort(e, axis=1), axis=0)
        u = pos[elements[:, 1]] - pos[elements[:, 0]]
        v = pos[elements[:, 2]] - pos[elements[:, 0]]
        if dim == 2:
            rest_measure = 0.5 * np.abs(u[:, 0] * v[:, 1] - u[:, 1] * v[:, 0])
        else:
            rest_measure = 0.5 * np.linalg.norm(np.cross(u, v), axis=1)
    rest_length = np.linalg.norm(pos[edges[:, 1]] - pos[edges[:, 0]], axis=1)
    m = len(edges)
    mesh = FabricMesh(
        dim,
        elements=np.where(elements >= 0, elements + pid0, -1),
        rest_measure=rest_measure,
        edges=edges + pid0,
        rest_length=rest_length,
        stiffness=np.full(m, sheet.stiffness),
        damping=np.full(m, sheet.damping),
    )
    return p, mesh


def compute_spring_forces(mesh: FabricMesh, particles: Particles) -> np.ndarray:
    """Linear spring plus dashpot along every edge; returns (N, d) forces."""
    forces = np.zeros_like(particles.pos)
    if len(mesh.edges) == 0:
        return forces
    ia = np.searchsorted(particles.pid, mesh.edges[:, 0])
    ib = np.searchsorted(particles.pid, mesh.edges[:, 1])
    ia = np.clip(ia, 0, len(particles) - 1)
    ib = np.clip(ib, 0, len(particles) - 1)
    ok = (particles.pid[ia] == mesh.edges[:, 0]) & (particles.pid[ib] == mesh.edges[:, 1])
    ia, ib = ia[ok], ib[ok]
    delta = particles.pos[ib] - particles.pos[ia]
    length = np.linalg.norm(delta, axis=1)
    unit = np.divide(delta, length[:, None], out=np.zeros_like(delta), where=length[:, None] > 0)
    rel_v = np.sum((particles.vel[ib] - particles.vel[ia]) * unit, axis=1)
    mag = mesh.stiffness[ok] * (length - mesh.rest_length[ok]) + mesh.damping[ok] * rel_v
    f = mag[:, None] * unit
    np.add.at(forces, ia, f)
    np.add.at(forces, ib, -f)
    return forces


@dataclass
class AbsorptionResult:
    transferred: float = 0.0
    deleted_pids: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def absorb(particles: Particles, dx: float, dt: float, radius: float | None = None) -> AbsorptionResult:
    """Move fluid mass into nearby unsaturated solids.

    Each fluid particle within ``radius`` (default one cell) of an unsaturated
    solid gives min(rate*dt, its mass, remaining capacity) to the lowest-index
    such solid. Fluid particles left with no mass are removed; the total of
    fluid mass plus absorbed mass is unchanged.
    """
    radius = dx if radius is None else radius
    result = AbsorptionResult()
    solid = np.flatnonzero((particles.phase == SOLID) & (particles.absorbed < particles.capacity))
    fluid = np.flatnonzero(particles.phase == FLUID)
    if len(solid) == 0 or len(fluid) == 0:
        return result
    tree = cKDTree(particles.pos[solid])
    dist, _ = tree.query(particles.pos[fluid], distance_upper_bound=radius)
    near = fluid[np.isfinite(dist)]
    if len(near) == 0:
        return result
    candidates = tree.query_ball_point(particles.pos[near], r=radius)
    remaining = particles.capacity - particles.absorbed
    total = 0.0
    for f, cand in zip(near, candidates):
        open_ = [solid[c] for c in cand if remaining[solid[c]] > 0.0]
        if not open_:
            continue
        s = min(open_)
        amount = min(particles.absorb_rate[s] * dt, particles.mass[f], remaining[s])
        if amount <= 0.0:
            continue
        particles.mass[f] -= amount
        particles.absorbed[s] += amount
        remaining[s] -= amount
        total += amount
    result.transferred = total
    gone = (particles.phase == FLUID) & (particles.mass <= 0.0)
    if np.any(gone):
        result.deleted_pids = particles.pid[gone].copy()
        particles.keep(~gone)
    return result
