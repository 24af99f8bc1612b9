"""Time stepping: P2G, grid update, G2P, advection and bookkeeping."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np

from . import diagnostics as diag
from .fabric import FabricMesh, absorb, compute_spring_forces
from .gridsolver import (PressureSolve, PressureSolveError, apply_fabric_forces, apply_gravity, blend_phases,
                         enforce_boundaries, extrapolate_velocity, mark_cells, pressure_project)
from .kernels import ModeBasis
from .state import FLUID, SOLID, MacGrid, Particles, SceneConfig, seed_particles
from .transfers import (TransferStats, expected_momentum, g2p, grid_totals, p2g_mixture_fluid,
                        p2g_mixture_solid, p2g_scheme)

log = logging.getLogger(__name__)

EXIT_OK, EXIT_AUDIT, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2, 3

FRAME_DTYPE_FIELDS = ("phase", "pos", "vel", "mass", "absorbed")


class NumericalAbort(RuntimeError):
    def __init__(self, step: int, reason: str, dump: str | None = None):
        msg = f"step {step}: {reason}"
        if dump:
            msg += f" (state written to {dump})"
        super().__init__(msg)
        self.step = step
        self.reason = reason
        self.dump = dump


@dataclass
class DeletionEvent:
    step: int
    pid: int
    phase: int
    mass: float
    reason: str


@dataclass
class DeletionLedger:
    events: list[DeletionEvent] = field(default_factory=list)

    def record(self, step: int, particles: Particles, mask: np.ndarray, reason: str) -> None:
        for k in np.flatnonzero(mask):
            self.events.append(DeletionEvent(step, int(particles.pid[k]), int(particles.phase[k]),
                                             float(particles.mass[k] + particles.absorbed[k]), reason))

    def mass(self, reason: str | None = None) -> float:
        return float(sum(e.mass for e in self.events if reason is None or e.reason == reason))

    def __len__(self) -> int:
        return len(self.events)


@dataclass
class StepPhaseTrace:
    """What happened during one step, in execution order."""

    step: int
    phases: list[str] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    pcg_iterations: int = 0
    pcg_residual: float = 0.0
    transfer: TransferStats = field(default_factory=TransferStats)
    absorbed_mass: float = 0.0
    deleted: int = 0
    cfl: float = 0.0
    audits: list = field(default_factory=list)

    @property
    def wall_s(self) -> float:
        return float(sum(self.timings.values()))


class _Phase:
    def __init__(self, trace: StepPhaseTrace, name: str):
        self.trace, self.name = trace, name

    def __enter__(self):
        self.t0 = time.perf_counter()
        self.trace.phases.append(self.name)

    def __exit__(self, *exc):
        self.trace.timings[self.name] = self.trace.timings.get(self.name, 0.0) + time.perf_counter() - self.t0
        return False


class Simulation:
    """One scene in memory. ``step()`` advances by dt and returns a trace."""

    def __init__(self, config: SceneConfig, particles: Particles | None = None, mesh: FabricMesh | None = None):
        self.config = config.validate()
        if particles is None:
            particles, seeded_mesh = seed_particles(config)
            mesh = seeded_mesh if mesh is None else mesh
        self.particles = particles
        self.mesh = mesh if mesh is not None else FabricMesh(config.dim)
        d = config.dim
        walls = config.wall_flags()
        self.grid = MacGrid(config.grid_dims, config.dx, walls)
        self.mixture = bool(np.any(particles.phase == SOLID))
        self.grid_solid = MacGrid(config.grid_dims, config.dx, walls) if self.mixture else None
        sch = config.scheme
        if sch.is_polypic:
            self.basis_fluid = ModeBasis(d, sch.fluid_modes, config.orthogonalize)
            self.basis_solid = ModeBasis(d, sch.solid_modes, config.orthogonalize)
            need = max(sch.fluid_modes, sch.solid_modes)
            if particles.n_modes < need:
                particles.resize_modes(need)
        else:
            self.basis_fluid = self.basis_solid = None
        self.pressure = PressureSolve(config.pressure.tolerance, config.pressure.max_iterations)
        self.ledger = DeletionLedger()
        self.step_index = 0
        self.time = 0.0
        self.records: list[diag.DiagnosticsRecord] = []
        self.audit_failures: list[diag.AuditResult] = []
        self.cfl_warnings = 0
        self.dump_dir: Path | None = None
        threads = min(config.workers, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(max(1, threads))

    # -- helpers -----------------------------------------------------------

    def _p2g_kwargs(self):
        return dict(workers=self.config.workers, map_reference=self.config.map_reference)

    def _audit(self, trace, before, after, phase):
        res = diag.conservation_audit(before, after, phase)
        trace.audits.append(res)
        if not res.passed:
            self.audit_failures.append(res)
            log.error("step %d audit %s", trace.step, res.describe())

    def _audit_p2g(self, trace, grid, phase, basis, include_absorbed):
        p = self.particles
        idx = np.arange(len(p)) if phase is None else np.flatnonzero(p.phase == phase)
        emass = p.mass[idx] + (p.absorbed[idx] if include_absorbed else 0.0)
        expected = expected_momentum(p, self.config.scheme, grid, basis, self.config.dt, phase,
                                     include_absorbed, self.config.map_reference)
        scale = float(np.sum(emass[:, None] * np.abs(p.vel[idx]))) if len(idx) else 0.0
        m, mv = grid_totals(grid)
        for a in range(grid.dim):
            before = diag.Totals(float(emass.sum()), np.array([expected[a]]), scale)
            after = diag.Totals(float(m[a]), np.array([mv[a]]))
            self._audit(trace, before, after, "p2g")

    def _abort(self, reason: str):
        dump = None
        if self.dump_dir is not None:
            self.dump_dir.mkdir(parents=True, exist_ok=True)
            path = self.dump_dir / f"abort_step{self.step_index + 1:06d}.npz"
            np.savez(path, **{f: getattr(self.particles, f) for f in Particles._FIELDS})
            dump = str(path)
        raise NumericalAbort(self.step_index + 1, reason, dump)

    # -- the step ----------------------------------------------------------

    def step(self) -> StepPhaseTrace:
        cfg = self.config
        dt = cfg.dt
        p = self.particles
        audit = cfg.audit
        trace = StepPhaseTrace(self.step_index + 1)
        stats = trace.transfer
        grids = [self.grid] + ([self.grid_solid] if self.mixture else [])

        with _Phase(trace, "p2g"):
            for g in grids:
                g.clear()
            if self.mixture:
                p2g_mixture_fluid(p, self.grid, self.basis_fluid, dt, cfg.scheme, stats=stats, **self._p2g_kwargs())
                p2g_mixture_solid(p, self.grid_solid, self.basis_solid, dt, cfg.scheme, stats=stats,
                                  **self._p2g_kwargs())
            else:
                p2g_scheme(cfg.scheme, p, self.grid, self.basis_fluid, dt, stats=stats, **self._p2g_kwargs())
        if audit:
            if self.mixture:
                self._audit_p2g(trace, self.grid, FLUID, self.basis_fluid, False)
                self._audit_p2g(trace, self.grid_solid, SOLID, self.basis_solid, True)
            else:
                self._audit_p2g(trace, self.grid, None, self.basis_fluid, False)

        with _Phase(trace, "forces"):
            for g in grids:
                apply_gravity(g, cfg.gravity, dt)
            if self.mixture and len(self.mesh.edges):
                sidx = np.flatnonzero(p.phase == SOLID)
                forces = compute_spring_forces(self.mesh, p)
                apply_fabric_forces(self.grid_solid, forces[sidx], p, dt, sidx, cfg.workers)
            if self.mixture:
                blend_phases(self.grid, self.grid_solid, cfg.coupling_strength)

        with _Phase(trace, "projection"):
            mark_cells(self.grid, p, FLUID)
            try:
                pressure_project(self.grid, dt, self.pressure)
            except PressureSolveError as exc:
                self._abort(str(exc))
            trace.pcg_iterations = self.pressure.iterations
            trace.pcg_residual = self.pressure.residual

        with _Phase(trace, "boundaries"):
            for g in grids:
                enforce_boundaries(g)
            extrapolate_velocity(self.grid)
            for g in grids:
                if not all(np.all(np.isfinite(v)) for v in g.face_velocity_intermediate):
                    self._abort("non-finite grid velocity after the grid update")

        with _Phase(trace, "g2p"):
            if self.mixture:
                fidx = np.flatnonzero(p.phase == FLUID)
                sidx = np.flatnonzero(p.phase == SOLID)
                g2p(cfg.scheme, self.grid, p, self.basis_fluid, dt, fidx, stats)
                g2p(cfg.scheme, self.grid_solid, p, self.basis_solid, dt, sidx, stats)
            else:
                g2p(cfg.scheme, self.grid, p, self.basis_fluid, dt, None, stats)
            if np.any(p.pinned):
                p.vel[p.pinned] = 0.0
                p.affine[p.pinned] = 0.0
                p.coeffs[p.pinned] = 0.0
            if not (np.all(np.isfinite(p.vel)) and np.all(np.isfinite(p.affine)) and np.all(np.isfinite(p.coeffs))):
                self._abort("non-finite particle state after the gather")

        with _Phase(trace, "advection"):
            p.prev_pos = p.pos.copy()
            move = ~p.pinned
            p.pos[move] += dt * p.vel[move]
            vmax = float(np.max(np.abs(p.vel))) if len(p) else 0.0
            trace.cfl = vmax * dt / cfg.dx
            if trace.cfl > 1.0:
                self.cfl_warnings += 1
                log.warning("step %d: CFL number %.2f exceeds 1", trace.step, trace.cfl)
            lo, hi = cfg.interior_bounds()
            leave = np.zeros(len(p), bool)
            for a, (wlo, whi) in enumerate(cfg.wall_flags()):
                x = p.pos[:, a]
                if wlo:
                    np.maximum(x, lo[a], out=x)
                else:
                    leave |= x < lo[a]
                if whi:
                    np.minimum(x, hi[a], out=x)
                else:
                    leave |= x > hi[a]

        with _Phase(trace, "deletion"):
            if np.any(leave):
                before = diag.totals_of(p)
                removed = float(np.sum(p.effective_mass()[leave]))
                self.ledger.record(trace.step, p, leave, "left_domain")
                had_solid = bool(np.any(p.phase[leave] == SOLID))
                p.keep(~leave)
                trace.deleted += int(leave.sum())
                if had_solid:
                    self.mesh.drop_missing(p.pid)
                if audit:
                    after = diag.totals_of(p)
                    after.mass += removed
                    self._audit(trace, before, after, "deletion")

        with _Phase(trace, "absorption"):
            if self.mixture:
                before = diag.totals_of(p)
                res = absorb(p, cfg.dx, dt)
                trace.absorbed_mass = res.transferred
                for pid in res.deleted_pids:
                    self.ledger.events.append(DeletionEvent(trace.step, int(pid), FLUID, 0.0, "absorbed"))
                trace.deleted += len(res.deleted_pids)
                if audit:
                    self._audit(trace, before, diag.totals_of(p), "absorption")

        self.step_index += 1
        self.time = self.step_index * dt
        if cfg.output.diagnostics:
            self.records.append(diag.record_for(p, self.step_index, self.time, cfg.gravity, cfg.domain_size,
                                                trace.pcg_iterations, trace.wall_s))
        return trace

    def run(self, n_steps: int | None = None, callback=None) -> list[StepPhaseTrace]:
        n = self.config.n_steps if n_steps is None else n_steps
        traces = []
        for _ in range(n):
            tr = self.step()
            traces.append(tr)
            if callback is not None:
                callback(self, tr)
        return traces


# ---------------------------------------------------------------------------
# Frames and whole runs
# ---------------------------------------------------------------------------


def frame_dtype(dim: int) -> np.dtype:
    return np.dtype([("phase", "u1"), ("pos", "<f8", (dim,)), ("vel", "<f8", (dim,)),
                     ("mass", "<f8"), ("absorbed", "<f8")])


def write_frame(directory: Path, index: int, sim: Simulation, csv_too: bool = False) -> Path:
    """Binary particle dump plus a small JSON header describing the layout."""
    p = sim.particles
    dt = frame_dtype(p.dim)
    rec = np.zeros(len(p), dt)
    rec["phase"], rec["pos"], rec["vel"], rec["mass"], rec["absorbed"] = p.phase, p.pos, p.vel, p.mass, p.absorbed
    path = directory / f"frame_{index:05d}.bin"
    rec.tofile(path)
    header = {"frame": index, "step": sim.step_index, "time": sim.time, "count": len(p), "dim": p.dim,
              "fields": [[n, str(dt[n].base), list(dt[n].shape)] for n in dt.names], "byteorder": "little"}
    path.with_suffix(".json").write_text(json.dumps(header))
    if csv_too:
        cols = ["phase"] + [f"x{k}" for k in range(p.dim)] + [f"v{k}" for k in range(p.dim)] + ["mass", "absorbed"]
        data = np.column_stack([p.phase, p.pos, p.vel, p.mass, p.absorbed])
        np.savetxt(path.with_suffix(".csv"), data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    return path


def read_frame(path) -> np.ndarray:
    path = Path(path)
    header = json.loads(path.with_suffix(".json").read_text())
    return np.fromfile(path, frame_dtype(header["dim"]))


@dataclass
class RunResult:
    status: int
    records: list
    ledger: DeletionLedger
    audit_failures: list
    out_dir: Path | None
    message: str = ""
    steps: int = 0
    meta: dict = field(default_factory=dict)


def run_metadata(config: SceneConfig, workers: int) -> dict:
    return {
        "scene": config.name,
        "seed": config.seed,
        "dt": config.dt,
        "n_steps": config.n_steps,
        "grid_dims": list(config.grid_dims),
        "workers": workers,
        "scheme": config.scheme.label(),
        "dim": config.dim,
    }


def run(config: SceneConfig, out_dir=None, write_frames: bool = True, n_steps: int | None = None,
        progress=None) -> RunResult:
    """Simulate a scene end to end, writing outputs under ``out_dir`` when given.

    Status codes: 0 success, 1 a conservation audit failed, 3 numerical abort.
    """
    sim = Simulation(config)
    out = Path(out_dir) if out_dir is not None else None
    frame_dir = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        sim.dump_dir = out
        if write_frames and config.output.frame_interval > 0:
            frame_dir = out / "frames"
            frame_dir.mkdir(exist_ok=True)
    every = max(1, int(round(config.output.frame_interval / config.dt))) if frame_dir else 0
    n = config.n_steps if n_steps is None else n_steps
    meta = run_metadata(config, config.workers)
    meta["n_steps"] = n
    status, message = EXIT_OK, ""
    frame_no = 0
    if frame_dir is not None:
        write_frame(frame_dir, frame_no, sim, config.output.frame_csv)
        frame_no += 1
    try:
        for _ in range(n):
            tr = sim.step()
            if progress is not None:
                progress(sim, tr)
            if frame_dir is not None and sim.step_index % every == 0:
                write_frame(frame_dir, frame_no, sim, config.output.frame_csv)
                frame_no += 1
    except NumericalAbort as exc:
        status, message = EXIT_NUMERICAL, str(exc)
        log.error("%s", exc)
    if status == EXIT_OK and sim.audit_failures:
        status = EXIT_AUDIT
        message = f"{len(sim.audit_failures)} conservation audit failure(s); first: " + \
            sim.audit_failures[0].describe()
    if out is not None:
        if config.output.diagnostics:
            diag.write_diagnostics(out / "diagnostics.csv", sim.records, config.dim)
            diag.write_timing(out / "timing.csv", sim.records)
        meta.update(status=status, steps_completed=sim.step_index, deleted=len(sim.ledger),
                    deleted_mass=sim.ledger.mass("left_domain"), audit_failures=len(sim.audit_failures),
                    cfl_warnings=sim.cfl_warnings, frames=frame_no)
        (out / "run.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return RunResult(status, sim.records, sim.ledger, sim.audit_failures, out, message, sim.step_index, meta)
