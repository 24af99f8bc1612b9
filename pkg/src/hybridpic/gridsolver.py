"""Grid stage: forces, incompressibility projection and boundary conditions.

Produces the intermediate face velocities (``face_velocity_intermediate``) that
the gather reads. The pressure solve is a matrix-free conjugate gradient with a
modified incomplete Cholesky (MIC(0)) preconditioner over Fluid cells; Air cells
hold zero pressure (free surface), SolidWall cells are Neumann.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .state import MASS_EPSILON, CellType, MacGrid, Particles, FLUID
from .transfers import scatter_to_faces

MIC_TAU = 0.97
MIC_SIGMA = 0.25


class PressureSolveError(RuntimeError):
    def __init__(self, message: str, iterations: int, residual: float):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual


@dataclass
class PressureSolve:
    tolerance: float = 1e-6
    max_iterations: int = 500
    iterations: int = 0
    residual: float = 0.0
    rhs_norm: float = 0.0
    pressure: np.ndarray = field(default_factory=lambda: np.zeros(0))


# ---------------------------------------------------------------------------
# Markers and forces
# ---------------------------------------------------------------------------


def mark_cells(grid: MacGrid, particles: Particles, phase: int | None = FLUID) -> np.ndarray:
    """Fluid where a cell holds at least one particle of ``phase``; walls kept."""
    grid.mark_walls()
    pos = particles.pos if phase is None else particles.pos[particles.phase == phase]
    if len(pos):
        cells = np.floor(pos / grid.dx).astype(np.int64)
        cells = np.clip(cells, 0, np.asarray(grid.dims) - 1)
        flat = np.ravel_multi_index(tuple(cells.T), grid.dims)
        m = grid.cell_marker.reshape(-1)
        hit = np.zeros(m.size, bool)
        hit[flat] = True
        m[hit & (m != CellType.SolidWall)] = CellType.Fluid
    return grid.cell_marker


def apply_gravity(grid: MacGrid, gravity, dt: float) -> MacGrid:
    """Start ṽ from v and add dt*g on faces carrying mass."""
    for a in range(grid.dim):
        v = grid.face_velocity[a].copy()
        if gravity[a] != 0.0:
            live = grid.face_mass[a] > MASS_EPSILON
            v[live] += dt * gravity[a]
        grid.face_velocity_intermediate[a] = v
    return grid


def apply_fabric_forces(grid_solid: MacGrid, forces: np.ndarray, particles: Particles, dt: float,
                        select=None, workers: int = 1) -> MacGrid:
    """Scatter per-particle forces with the mass weights and add dt*f/m to ṽ."""
    idx = np.arange(len(particles)) if select is None else np.asarray(select)
    if len(idx) == 0:
        return grid_solid
    f_faces = scatter_to_faces(particles.pos[idx], forces, grid_solid, workers)
    for a in range(grid_solid.dim):
        m = grid_solid.face_mass[a]
        live = m > MASS_EPSILON
        grid_solid.face_velocity_intermediate[a][live] += dt * f_faces[a][live] / m[live]
    return grid_solid


def blend_phases(grid_fluid: MacGrid, grid_solid: MacGrid, strength: float) -> None:
    """Drag-free stand-in for mixture momentum exchange.

    On faces where both phases carry mass, each phase velocity relaxes toward the
    mass-weighted mean by ``strength``; the summed face momentum is unchanged.
    """
    if strength <= 0.0:
        return
    for a in range(grid_fluid.dim):
        mf, ms = grid_fluid.face_mass[a], grid_solid.face_mass[a]
        vf, vs = grid_fluid.face_velocity_intermediate[a], grid_solid.face_velocity_intermediate[a]
        both = (mf > MASS_EPSILON) & (ms > MASS_EPSILON)
        if not np.any(both):
            continue
        vbar = (mf[both] * vf[both] + ms[both] * vs[both]) / (mf[both] + ms[both])
        vf[both] += strength * (vbar - vf[both])
        vs[both] += strength * (vbar - vs[both])


# ---------------------------------------------------------------------------
# Boundaries
# ---------------------------------------------------------------------------


def _padded_markers(grid: MacGrid) -> np.ndarray:
    """Cell markers with one ghost layer: SolidWall beyond walled sides, Air beyond open ones."""
    ext = np.pad(grid.cell_marker, 1, constant_values=CellType.Air)
    for a, (lo, hi) in enumerate(grid.walls):
        sl = [slice(None)] * grid.dim
        if lo:
            sl[a] = 0
            ext[tuple(sl)] = CellType.SolidWall
        if hi:
            sl[a] = -1
            ext[tuple(sl)] = CellType.SolidWall
    return ext


def _face_neighbours(ext: np.ndarray, axis: int):
    """Markers of the two cells sharing each face of ``axis`` (lower, upper)."""
    d = ext.ndim
    lo = [slice(1, -1)] * d
    hi = [slice(1, -1)] * d
    lo[axis] = slice(0, -1)
    hi[axis] = slice(1, None)
    return ext[tuple(lo)], ext[tuple(hi)]


def enforce_boundaries(grid: MacGrid, velocity=None) -> MacGrid:
    """Zero the normal component on faces touching a SolidWall cell (free slip)."""
    velocity = grid.face_velocity_intermediate if velocity is None else velocity
    ext = _padded_markers(grid)
    for a in range(grid.dim):
        lo, hi = _face_neighbours(ext, a)
        velocity[a][(lo == CellType.SolidWall) | (hi == CellType.SolidWall)] = 0.0
    return grid


def divergence(grid: MacGrid, velocity=None) -> np.ndarray:
    velocity = grid.face_velocity_intermediate if velocity is None else velocity
    return sum(np.diff(velocity[a], axis=a) for a in range(grid.dim)) / grid.dx


# ---------------------------------------------------------------------------
# Pressure projection
# ---------------------------------------------------------------------------


@njit(cache=True)
def _apply_A(diag, aoff, strides, x, out):
    n = x.shape[0]
    d = aoff.shape[0]
    for c in range(n):
        s = diag[c] * x[c]
        for a in range(d):
            st = strides[a]
            if c + st < n:
                s += aoff[a, c] * x[c + st]
            if c - st >= 0:
                s += aoff[a, c - st] * x[c - st]
        out[c] = s


@njit(cache=True)
def _mic0(diag, aoff, strides):
    n = diag.shape[0]
    d = aoff.shape[0]
    precon = np.zeros(n)
    for c in range(n):
        if diag[c] == 0.0:
            continue
        e = diag[c]
        for a in range(d):
            st = strides[a]
            if c - st < 0:
                continue
            q = c - st
            t = aoff[a, q] * precon[q]
            e -= t * t
            other = 0.0
            for b in range(d):
                if b != a:
                    other += aoff[b, q]
            e -= MIC_TAU * aoff[a, q] * other * precon[q] * precon[q]
        if e < MIC_SIGMA * diag[c]:
            e = diag[c]
        precon[c] = 1.0 / np.sqrt(e)
    return precon


@njit(cache=True)
def _apply_precon(precon, aoff, strides, r, z):
    n = r.shape[0]
    d = aoff.shape[0]
    q = np.zeros(n)
    for c in range(n):
        if precon[c] == 0.0:
            continue
        t = r[c]
        for a in range(d):
            st = strides[a]
            if c - st >= 0:
                p = c - st
                t -= aoff[a, p] * precon[p] * q[p]
        q[c] = t * precon[c]
    for c in range(n - 1, -1, -1):
        if precon[c] == 0.0:
            z[c] = 0.0
            continue
        t = q[c]
        for a in range(d):
            st = strides[a]
            if c + st < n:
                t -= aoff[a, c] * precon[c] * z[c + st]
        z[c] = t * precon[c]


@njit(cache=True)
def _pcg(diag, aoff, strides, b, tol, max_iter):
    n = b.shape[0]
    x = np.zeros(n)
    r = b.copy()
    bnorm = np.sqrt(np.dot(b, b))
    if bnorm == 0.0:
        return x, 0, 0.0, bnorm, True
    precon = _mic0(diag, aoff, strides)
    z = np.zeros(n)
    _apply_precon(precon, aoff, strides, r, z)
    s = z.copy()
    sigma = np.dot(z, r)
    Ap = np.zeros(n)
    rnorm = bnorm
    for it in range(1, max_iter + 1):
        _apply_A(diag, aoff, strides, s, Ap)
        denom = np.dot(s, Ap)
        if denom == 0.0:
            return x, it, rnorm, bnorm, rnorm <= tol * bnorm
        alpha = sigma / denom
        x += alpha * s
        r -= alpha * Ap
        rnorm = np.sqrt(np.dot(r, r))
        if rnorm <= tol * bnorm:
            return x, it, rnorm, bnorm, True
        _apply_precon(precon, aoff, strides, r, z)
        sigma_new = np.dot(z, r)
        beta = sigma_new / sigma
        sigma = sigma_new
        s = z + beta * s
    return x, max_iter, rnorm, bnorm, False


def _poisson_system(grid: MacGrid):
    """Diagonal and +axis off-diagonal of the negative Laplacian (times dx^2)."""
    ext = _padded_markers(grid)
    core = tuple([slice(1, -1)] * grid.dim)
    fluid = ext[core] == CellType.Fluid
    diag = np.zeros(grid.dims)
    aoff = np.zeros((grid.dim,) + grid.dims)
    for a in range(grid.dim):
        for step in (-1, 1):
            sl = [slice(1, -1)] * grid.dim
            sl[a] = slice(1 + step, ext.shape[a] - 1 + step)
            nb = ext[tuple(sl)]
            diag += fluid & (nb != CellType.SolidWall)
            if step == 1:
                aoff[a] = -1.0 * (fluid & (nb == CellType.Fluid))
    return fluid, diag, aoff


def pressure_project(grid: MacGrid, dt: float, solve: PressureSolve | None = None) -> PressureSolve:
    """Make ṽ divergence-free over Fluid cells.

    Solves ``A phi = -div(ṽ) dx^2`` with phi = dt p / rho and subtracts
    ``grad(phi)`` on every face between two non-wall cells of which at least
    one is Fluid. Raises :class:`PressureSolveError` on non-convergence.
    """
    solve = PressureSolve() if solve is None else solve
    enforce_boundaries(grid)
    fluid, diag, aoff = _poisson_system(grid)
    div = divergence(grid)
    rhs = np.where(fluid, -div * grid.dx * grid.dx, 0.0).ravel()
    strides = np.array([int(np.prod(grid.dims[a + 1:])) for a in range(grid.dim)], dtype=np.int64)
    phi, it, res, bnorm, ok = _pcg(diag.ravel(), aoff.reshape(grid.dim, -1), strides, rhs,
                                   float(solve.tolerance), int(solve.max_iterations))
    solve.iterations, solve.residual, solve.rhs_norm = int(it), float(res), float(bnorm)
    if not ok or not np.all(np.isfinite(phi)):
        raise PressureSolveError(
            f"pressure solve did not converge: residual {res:.3e} vs target {solve.tolerance * bnorm:.3e} "
            f"after {it} iterations", it, res)
    phi = phi.reshape(grid.dims)
    solve.pressure = phi / dt
    ext = _padded_markers(grid)
    phi_ext = np.pad(phi, 1)
    for a in range(grid.dim):
        lo, hi = _face_neighbours(ext, a)
        plo, phi_hi = _face_neighbours(phi_ext, a)
        upd = ((lo == CellType.Fluid) | (hi == CellType.Fluid)) & (lo != CellType.SolidWall) & (hi != CellType.SolidWall)
        grid.face_velocity_intermediate[a][upd] -= (phi_hi[upd] - plo[upd]) / grid.dx
    enforce_boundaries(grid)
    return solve


def extrapolate_velocity(grid: MacGrid, layers: int = 3) -> MacGrid:
    """Fill faces not adjacent to any Fluid cell with the mean of known lattice
    neighbours, ``layers`` rings deep. Wall faces stay at zero and are never
    used as sources, so they do not drag extrapolated air velocities to rest."""
    ext = _padded_markers(grid)
    for a in range(grid.dim):
        lo, hi = _face_neighbours(ext, a)
        wall = (lo == CellType.SolidWall) | (hi == CellType.SolidWall)
        valid = ((lo == CellType.Fluid) | (hi == CellType.Fluid)) & ~wall
        v = grid.face_velocity_intermediate[a]
        for _ in range(layers):
            if (valid | wall).all():
                break
            vp = np.pad(np.where(valid, v, 0.0), 1)
            cp = np.pad(valid.astype(float), 1)
            total = np.zeros_like(v)
            count = np.zeros_like(v)
            for b in range(grid.dim):
                for step in (-1, 1):
                    sl = [slice(1, -1)] * grid.dim
                    sl[b] = slice(1 + step, vp.shape[b] - 1 + step)
                    total += vp[tuple(sl)]
                    count += cp[tuple(sl)]
            grow = ~valid & ~wall & (count > 0)
            v[grow] = total[grow] / count[grow]
            valid = valid | grow
    enforce_boundaries(grid)
    return grid
