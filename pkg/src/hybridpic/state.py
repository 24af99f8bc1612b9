"""Particle set, staggered MAC grid and scene configuration."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

MASS_EPSILON = 1e-12

FLUID = 0
SOLID = 1


class Phase(enum.IntEnum):
    Fluid = FLUID
    Solid = SOLID


class CellType(enum.IntEnum):
    Air = 0
    Fluid = 1
    SolidWall = 2


class ConfigError(ValueError):
    """Invalid scene configuration. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        super().__init__(message)
        self.message = message
        self.line = line
        self.path = path

    def __str__(self) -> str:
        if self.path is not None:
            return f"{self.path}:" + (f"{self.line}: " if self.line is not None else " ") + self.message
        if self.line is not None:
            return f"line {self.line}: {self.message}"
        return self.message


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

SCHEMES = ("pic", "apic", "polypic")


@dataclass(frozen=True)
class TransferScheme:
    kind: str = "apic"
    fluid_modes: int = 1
    solid_modes: int = 1

    def __post_init__(self):
        if self.kind not in SCHEMES:
            raise ConfigError(f"unknown transfer scheme {self.kind!r}; expected one of {SCHEMES}")

    @property
    def is_polypic(self) -> bool:
        return self.kind == "polypic"

    def validate(self, dim: int, allow_unstable_modes: bool = False) -> None:
        if not self.is_polypic:
            return
        if self.fluid_modes < 1:
            raise ConfigError("fluid_modes must be >= 1")
        if self.solid_modes < 1:
            raise ConfigError("solid_modes must be >= 1")
        full = 3**dim
        if self.fluid_modes > full or self.solid_modes > full:
            raise ConfigError(
                f"at most {full} scalar modes exist for the quadratic kernel in {dim}D"
            )
        if self.fluid_modes > 2**dim and not allow_unstable_modes:
            raise ConfigError(
                f"fluid_modes={self.fluid_modes} exceeds the multilinear cap 2^{dim}={2**dim}; "
                "multi-quadratic fluid modes are unstable (set allow_unstable_modes to override)"
            )

    def label(self) -> str:
        if self.is_polypic:
            return f"polypic(f{self.fluid_modes},s{self.solid_modes})"
        return self.kind


@dataclass
class FluidBox:
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    density: float = 1000.0
    particles_per_cell: int | None = None
    velocity: tuple[float, ...] | None = None

    def bounds(self):
        return np.asarray(self.lo, float), np.asarray(self.hi, float)

    def contains(self, x: np.ndarray) -> np.ndarray:
        lo, hi = self.bounds()
        return np.all((x >= lo) & (x <= hi), axis=-1)


@dataclass
class FluidBall:
    center: tuple[float, ...]
    radius: float
    density: float = 1000.0
    particles_per_cell: int | None = None
    velocity: tuple[float, ...] | None = None

    def bounds(self):
        c = np.asarray(self.center, float)
        return c - self.radius, c + self.radius

    def contains(self, x: np.ndarray) -> np.ndarray:
        c = np.asarray(self.center, float)
        return np.sum((x - c) ** 2, axis=-1) <= self.radius**2


@dataclass
class FabricSheet:
    """Lattice of solid particles joined by springs.

    ``axes`` lists the domain axes spanned by the lattice; ``counts`` the number
    of vertices along each. ``kind`` is ``cloth`` (triangulated, edge springs)
    or ``yarn`` (rod segments along lattice lines only).
    """

    origin: tuple[float, ...]
    counts: tuple[int, ...]
    spacing: float
    axes: tuple[int, ...] = (0,)
    kind: str = "cloth"
    density: float = 300.0
    stiffness: float = 200.0
    damping: float = 0.5
    pinned: tuple = ()
    capacity_ratio: float = 0.3
    absorption_time: float = 0.1
    velocity: tuple[float, ...] | None = None

    def vertex_lattice(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        """Return (positions, lattice indices) in C order over ``counts``."""
        grids = np.meshgrid(*[np.arange(c) for c in self.counts], indexing="ij")
        lattice = np.stack([g.ravel() for g in grids], axis=-1)
        pos = np.tile(np.asarray(self.origin, float), (lattice.shape[0], 1))
        for k, ax in enumerate(self.axes):
            pos[:, ax] += lattice[:, k] * self.spacing
        return pos, lattice

    def bounds(self):
        lo = np.asarray(self.origin, float)
        hi = lo.copy()
        for k, ax in enumerate(self.axes):
            hi[ax] += (self.counts[k] - 1) * self.spacing
        return lo, hi


Emitter = FluidBox | FluidBall | FabricSheet


@dataclass
class OutputConfig:
    directory: str = "out"
    frame_interval: float = 0.0
    diagnostics: bool = True
    frame_csv: bool = False


@dataclass
class PressureConfig:
    tolerance: float = 1e-6
    max_iterations: int = 500


@dataclass
class SceneConfig:
    domain_size: tuple[float, ...]
    grid_dims: tuple[int, ...]
    dt: float
    duration: float
    gravity: tuple[float, ...]
    scheme: TransferScheme = field(default_factory=TransferScheme)
    emitters: list = field(default_factory=list)
    output: OutputConfig = field(default_factory=OutputConfig)
    seed: int = 0
    name: str = "scene"
    # (lo, hi) per axis; False marks an open side where particles leave the domain.
    walls: tuple[tuple[bool, bool], ...] | None = None
    particles_per_cell: int | None = None
    jitter: float = 0.5
    allow_unstable_modes: bool = False
    orthogonalize: bool = True
    map_reference: str = "previous"
    coupling_strength: float = 1.0
    pressure: PressureConfig = field(default_factory=PressureConfig)
    workers: int = 1
    audit: bool = True

    @property
    def dim(self) -> int:
        return len(self.grid_dims)

    @property
    def dx(self) -> float:
        return float(self.domain_size[0]) / self.grid_dims[0]

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def ppc(self) -> int:
        return self.particles_per_cell or 2**self.dim

    def wall_flags(self) -> tuple[tuple[bool, bool], ...]:
        return self.walls if self.walls is not None else tuple((True, True) for _ in range(self.dim))

    def interior_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Region particles may occupy: the domain minus its one-cell boundary layer."""
        size = np.asarray(self.domain_size, float)
        return np.full(self.dim, self.dx), size - self.dx

    def with_overrides(self, **kw) -> "SceneConfig":
        return replace(self, **{k: v for k, v in kw.items() if v is not None})

    def validate(self) -> "SceneConfig":
        d = self.dim
        if d not in (2, 3):
            raise ConfigError(f"only 2D and 3D scenes are supported, got {d} grid axes")
        if len(self.domain_size) != d or len(self.gravity) != d:
            raise ConfigError("domain_size, grid_dims and gravity must have the same length")
        if any(n < 3 for n in self.grid_dims):
            raise ConfigError("grid_dims must all be >= 3")
        cell = [s / n for s, n in zip(self.domain_size, self.grid_dims)]
        if not np.allclose(cell, cell[0], rtol=1e-12, atol=0):
            raise ConfigError(f"cells must be square: domain_size/grid_dims gives {cell}")
        if not self.dt > 0:
            raise ConfigError("dt must be > 0")
        if self.duration < self.dt * (1 - 1e-9):
            raise ConfigError("duration must be >= dt")
        if self.map_reference not in ("previous", "current"):
            raise ConfigError("map_reference must be 'previous' or 'current'")
        if not 0.0 <= self.coupling_strength <= 1.0:
            raise ConfigError("coupling_strength must lie in [0, 1]")
        if not 0.0 <= self.jitter < 1.0:
            raise ConfigError("jitter must lie in [0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.walls is not None and len(self.walls) != d:
            raise ConfigError("walls needs one [lo, hi] pair per axis")
        self.scheme.validate(d, self.allow_unstable_modes)
        lo, hi = self.interior_bounds()
        for k, em in enumerate(self.emitters):
            elo, ehi = em.bounds()
            if len(elo) != d:
                raise ConfigError(f"emitter {k}: expected {d} coordinates")
            if np.any(elo < lo - 1e-12) or np.any(ehi > hi + 1e-12):
                raise ConfigError(
                    f"emitter {k} ({type(em).__name__}) lies outside the domain interior "
                    f"[{lo.tolist()}, {hi.tolist()}]"
                )
            if isinstance(em, FabricSheet):
                if len(em.counts) != len(em.axes) or min(em.counts) < 1:
                    raise ConfigError(f"emitter {k}: counts and axes must match")
                if em.kind not in ("cloth", "yarn"):
                    raise ConfigError(f"emitter {k}: fabric kind must be cloth or yarn")
                if em.kind == "cloth" and len(em.axes) < 2:
                    raise ConfigError(f"emitter {k}: cloth needs a 2-axis lattice")
        return self


# ---------------------------------------------------------------------------
# Particles
# ---------------------------------------------------------------------------


@dataclass
class Particle:
    """Single-particle view (copies) used by scalar APIs and tests."""

    position: np.ndarray
    velocity: np.ndarray
    mass: float
    phase: Phase
    affine_derivs: np.ndarray
    poly_coeffs: np.ndarray
    absorbed_fluid_mass: float
    prev_position: np.ndarray


@dataclass
class Particles:
    """Structure-of-arrays particle set.

    ``affine[p, a, :]`` is the per-axis derivative vector c_{pa}; stacked it is
    the matrix C_p with ``C[a, b] = d v_a / d x_b``. ``coeffs[p, r, a]`` holds the
    coefficient of scalar mode r for velocity component a.
    """

    pos: np.ndarray
    vel: np.ndarray
    mass: np.ndarray
    phase: np.ndarray
    affine: np.ndarray
    coeffs: np.ndarray
    absorbed: np.ndarray
    prev_pos: np.ndarray
    pid: np.ndarray
    pinned: np.ndarray
    capacity: np.ndarray
    absorb_rate: np.ndarray

    _FIELDS = ("pos", "vel", "mass", "phase", "affine", "coeffs", "absorbed",
               "prev_pos", "pid", "pinned", "capacity", "absorb_rate")

    @classmethod
    def empty(cls, dim: int, n_modes: int = 1, n: int = 0) -> "Particles":
        return cls(
            pos=np.zeros((n, dim)),
            vel=np.zeros((n, dim)),
            mass=np.ones(n),
            phase=np.zeros(n, np.uint8),
            affine=np.zeros((n, dim, dim)),
            coeffs=np.zeros((n, max(n_modes, 1), dim)),
            absorbed=np.zeros(n),
            prev_pos=np.zeros((n, dim)),
            pid=np.arange(n, dtype=np.int64),
            pinned=np.zeros(n, bool),
            capacity=np.zeros(n),
            absorb_rate=np.zeros(n),
        )

    @classmethod
    def from_arrays(cls, pos, vel=None, mass=None, phase=None, n_modes: int = 1, **extra) -> "Particles":
        pos = np.array(pos, float, ndmin=2)
        n, dim = pos.shape
        p = cls.empty(dim, n_modes, n)
        p.pos = pos
        p.prev_pos = pos.copy()
        if vel is not None:
            p.vel = np.array(vel, float).reshape(n, dim)
        if mass is not None:
            p.mass = np.broadcast_to(np.asarray(mass, float), (n,)).copy()
        if phase is not None:
            p.phase = np.broadcast_to(np.asarray(phase, np.uint8), (n,)).copy()
        p.coeffs[:, 0, :] = p.vel
        for k, v in extra.items():
            setattr(p, k, np.array(v, dtype=getattr(p, k).dtype).reshape(getattr(p, k).shape))
        return p

    def __len__(self) -> int:
        return self.pos.shape[0]

    @property
    def dim(self) -> int:
        return self.pos.shape[1]

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[1]

    @property
    def fluid(self) -> np.ndarray:
        return self.phase == FLUID

    @property
    def solid(self) -> np.ndarray:
        return self.phase == SOLID

    def effective_mass(self) -> np.ndarray:
        """Mass carried to the grid: solids include their absorbed fluid."""
        return self.mass + np.where(self.phase == SOLID, self.absorbed, 0.0)

    def __getitem__(self, i: int) -> Particle:
        return Particle(
            position=self.pos[i].copy(),
            velocity=self.vel[i].copy(),
            mass=float(self.mass[i]),
            phase=Phase(int(self.phase[i])),
            affine_derivs=self.affine[i].copy(),
            poly_coeffs=self.coeffs[i].copy(),
            absorbed_fluid_mass=float(self.absorbed[i]),
            prev_position=self.prev_pos[i].copy(),
        )

    def subset(self, idx) -> "Particles":
        return Particles(**{f: getattr(self, f)[idx].copy() for f in self._FIELDS})

    def keep(self, mask: np.ndarray) -> None:
        for f in self._FIELDS:
            setattr(self, f, getattr(self, f)[mask])

    def copy(self) -> "Particles":
        return self.subset(slice(None))

    def resize_modes(self, n_modes: int) -> None:
        n_modes = max(n_modes, 1)
        if n_modes == self.n_modes:
            return
        c = np.zeros((len(self), n_modes, self.dim))
        k = min(n_modes, self.n_modes)
        c[:, :k] = self.coeffs[:, :k]
        self.coeffs = c

    @staticmethod
    def concat(parts: Sequence["Particles"], dim: int, n_modes: int = 1) -> "Particles":
        parts = [p for p in parts if len(p)]
        if not parts:
            return Particles.empty(dim, n_modes)
        for p in parts:
            p.resize_modes(n_modes)
        return Particles(**{f: np.concatenate([getattr(p, f) for p in parts]) for f in Particles._FIELDS})

    def check_invariants(self) -> None:
        if np.any(self.mass <= 0):
            raise AssertionError("particle with non-positive mass")
        if np.any(self.absorbed[self.phase == FLUID] != 0):
            raise AssertionError("fluid particle carries absorbed mass")
        if np.any(self.absorbed < 0):
            raise AssertionError("negative absorbed mass")


# ---------------------------------------------------------------------------
# Grid
# ---------------------------------------------------------------------------


class MacGrid:
    """Staggered grid: axis-a velocities live on faces normal to a.

    The face array of axis a has ``dims[a] + 1`` entries along a and ``dims[b]``
    along every other axis b. Cell (i, j) spans ``[i*dx, (i+1)*dx] x [j*dx, (j+1)*dx]``.
    """

    def __init__(self, dims: Sequence[int], dx: float, walls=None):
        self.dims = tuple(int(n) for n in dims)
        self.dx = float(dx)
        self.walls = tuple(tuple(w) for w in walls) if walls is not None else tuple(
            (True, True) for _ in self.dims
        )
        shapes = [self.face_shape(a) for a in range(self.dim)]
        self.face_mass = [np.zeros(s) for s in shapes]
        self.face_momentum = [np.zeros(s) for s in shapes]
        self.face_velocity = [np.zeros(s) for s in shapes]
        self.face_velocity_intermediate = [np.zeros(s) for s in shapes]
        self.cell_marker = np.zeros(self.dims, np.int8)
        self.mark_walls()

    @property
    def dim(self) -> int:
        return len(self.dims)

    def face_shape(self, axis: int) -> tuple[int, ...]:
        return tuple(n + (1 if b == axis else 0) for b, n in enumerate(self.dims))

    def clear(self) -> None:
        for arrs in (self.face_mass, self.face_momentum, self.face_velocity, self.face_velocity_intermediate):
            for a in arrs:
                a.fill(0.0)

    def mark_walls(self) -> None:
        """Reset markers to Air with SolidWall boundary layers on walled sides."""
        self.cell_marker.fill(CellType.Air)
        for a, (lo, hi) in enumerate(self.walls):
            sl = [slice(None)] * self.dim
            if lo:
                sl[a] = 0
                self.cell_marker[tuple(sl)] = CellType.SolidWall
            if hi:
                sl[a] = self.dims[a] - 1
                self.cell_marker[tuple(sl)] = CellType.SolidWall

    def face_positions(self, axis: int) -> np.ndarray:
        """Positions of all faces of ``axis``, shape ``face_shape(axis) + (d,)``."""
        coords = []
        for b, n in enumerate(self.face_shape(axis)):
            off = 0.0 if b == axis else 0.5
            coords.append((np.arange(n) + off) * self.dx)
        mesh = np.meshgrid(*coords, indexing="ij")
        return np.stack(mesh, axis=-1)

    def kinetic_energy(self, velocity=None, mass=None) -> float:
        velocity = self.face_velocity if velocity is None else velocity
        mass = self.face_mass if mass is None else mass
        return 0.5 * float(sum(np.sum(m * v * v) for m, v in zip(mass, velocity)))

    def copy(self) -> "MacGrid":
        g = MacGrid(self.dims, self.dx, self.walls)
        for name in ("face_mass", "face_momentum", "face_velocity", "face_velocity_intermediate"):
            setattr(g, name, [a.copy() for a in getattr(self, name)])
        g.cell_marker = self.cell_marker.copy()
        return g


def face_position(i: Sequence[int], axis: int, grid: MacGrid | float) -> np.ndarray:
    """Position of face ``axis`` of cell ``i``: the cell min-corner shifted by dx/2
    along every axis except ``axis``."""
    dx = grid.dx if isinstance(grid, MacGrid) else float(grid)
    i = np.asarray(i, float)
    x = i * dx
    shift = np.full(i.shape, 0.5 * dx)
    shift[axis] = 0.0
    return x + shift


def nearest_face(x: Sequence[float], axis: int, grid: MacGrid | float) -> tuple[int, ...]:
    dx = grid.dx if isinstance(grid, MacGrid) else float(grid)
    g = np.asarray(x, float) / dx
    g = np.where(np.arange(g.size) == axis, g, g - 0.5)
    return tuple(int(v) for v in np.rint(g))


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def _cell_samples(ppc: int, dim: int, rng: np.random.Generator, jitter: float) -> np.ndarray:
    """Sample offsets in [0, 1)^d for one cell: stratified when ppc is a perfect power."""
    k = int(round(ppc ** (1.0 / dim)))
    if k**dim == ppc:
        sub = np.stack(np.meshgrid(*[np.arange(k)] * dim, indexing="ij"), -1).reshape(-1, dim)
        return (sub + 0.5 + jitter * rng.uniform(-0.5, 0.5, sub.shape)) / k
    return rng.uniform(0.0, 1.0, (ppc, dim))


def _seed_volume(em, config: SceneConfig, rng) -> tuple[np.ndarray, float]:
    dx = config.dx
    d = config.dim
    ppc = em.particles_per_cell or config.ppc
    lo, hi = em.bounds()
    c_lo = np.floor(lo / dx + 1e-9).astype(int)
    c_hi = np.ceil(hi / dx - 1e-9).astype(int)
    cells = np.stack(
        np.meshgrid(*[np.arange(a, b) for a, b in zip(c_lo, c_hi)], indexing="ij"), -1
    ).reshape(-1, d)
    chunks = []
    for c in cells:
        x = (c + _cell_samples(ppc, d, rng, config.jitter)) * dx
        chunks.append(x[em.contains(x)])
    pos = np.concatenate(chunks) if chunks else np.zeros((0, d))
    return pos, em.density * dx**d / ppc


def seed_particles(config: SceneConfig, n_modes: int | None = None):
    """Fill every emitter with particles.

    Returns ``(particles, fabric_elements)``; the elements list is empty when the
    scene has no fabric. Fluid mass per particle is density * cell volume / ppc.
    """
    from .fabric import build_sheet, FabricMesh

    d = config.dim
    if n_modes is None:
        sch = config.scheme
        n_modes = max(sch.fluid_modes, sch.solid_modes) if sch.is_polypic else 1
    rng = np.random.default_rng(config.seed)
    parts, meshes = [], []
    next_pid = 0
    for k, em in enumerate(config.emitters):
        lo, hi = config.interior_bounds()
        elo, ehi = em.bounds()
        if np.any(elo < lo - 1e-12) or np.any(ehi > hi + 1e-12):
            raise ConfigError(f"emitter {k} lies outside the domain interior")
        vel = np.zeros(d) if em.velocity is None else np.asarray(em.velocity, float)
        if isinstance(em, FabricSheet):
            p, mesh = build_sheet(em, d, config.dx, next_pid, n_modes)
            meshes.append(mesh)
        else:
            pos, m = _seed_volume(em, config, rng)
            p = Particles.from_arrays(pos, np.tile(vel, (len(pos), 1)), m, FLUID, n_modes)
            p.pid = np.arange(next_pid, next_pid + len(p), dtype=np.int64)
        if len(p):
            p.vel[:] = vel
            p.coeffs[:] = 0.0
            p.coeffs[:, 0, :] = vel
        next_pid += len(p)
        parts.append(p)
    particles = Particles.concat(parts, d, n_modes)
    return particles, FabricMesh.merge(meshes, d)
