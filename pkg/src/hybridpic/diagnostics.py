"""Per-step scalar diagnostics, conservation audits and run cost comparison."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .state import FLUID, SOLID, Particles


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return "%.17g" % float(x)


@dataclass
class DiagnosticsRecord:
    step: int
    time: float
    mass: float
    momentum: np.ndarray
    angular_momentum: np.ndarray
    mean_energy: float
    n_fluid: int
    n_solid: int
    pcg_iters: int = 0
    wall_s: float = 0.0

    def row(self) -> list[str]:
        L = np.atleast_1d(self.angular_momentum)
        vals = [self.step, self.time, self.mass, *self.momentum, *L, self.mean_energy, self.n_fluid,
                self.n_solid, self.pcg_iters]
        return [_fmt(v) for v in vals]


def diagnostics_header(dim: int) -> list[str]:
    mom = ["px", "py", "pz"][:dim]
    ang = ["L"] if dim == 2 else ["Lx", "Ly", "Lz"]
    return ["step", "time", "mass", *mom, *ang, "mean_energy", "n_fluid", "n_solid", "pcg_iters"]


# ---------------------------------------------------------------------------
# Particle totals
# ---------------------------------------------------------------------------


def total_mass(particles: Particles) -> float:
    """Fluid mass plus solid mass plus fluid held inside solids."""
    return float(particles.mass.sum() + particles.absorbed.sum())


def linear_momentum(particles: Particles) -> np.ndarray:
    return (particles.effective_mass()[:, None] * particles.vel).sum(axis=0)


def angular_momentum(particles: Particles):
    """Sum of m x cross v about the origin (scalar in 2D)."""
    m = particles.effective_mass()
    x, v = particles.pos, particles.vel
    if particles.dim == 2:
        return float(np.sum(m * (x[:, 0] * v[:, 1] - x[:, 1] * v[:, 0])))
    return (m[:, None] * np.cross(x, v)).sum(axis=0)


def _floor_height(x: np.ndarray, gravity, domain_size=None) -> np.ndarray:
    g = np.asarray(gravity, float)
    gn = np.linalg.norm(g)
    if gn == 0.0:
        return np.zeros(len(x))
    down = g / gn
    if domain_size is None:
        floor = 0.0
    else:
        size = np.asarray(domain_size, float)
        floor = float(np.sum(np.where(down > 0, size, 0.0) * down))
    return floor - x @ down


def mean_particle_energy(particles: Particles, gravity, domain_size=None) -> float:
    """(1/P) sum over particles of kinetic plus gravitational potential energy.

    Height is measured up from the domain floor (the lowest domain corner along
    gravity); with no ``domain_size`` the origin lies on the floor. Solid
    particles count their absorbed fluid. Returns 0.0 for an empty set.
    """
    n = len(particles)
    if n == 0:
        return 0.0
    m = particles.effective_mass()
    ke = 0.5 * m * np.sum(particles.vel**2, axis=1)
    pe = m * np.linalg.norm(gravity) * _floor_height(particles.pos, gravity, domain_size)
    return float(np.sum(ke + pe) / n)


def record_for(particles: Particles, step: int, time: float, gravity, domain_size=None,
               pcg_iters: int = 0, wall_s: float = 0.0) -> DiagnosticsRecord:
    return DiagnosticsRecord(
        step=step,
        time=time,
        mass=total_mass(particles),
        momentum=linear_momentum(particles),
        angular_momentum=np.atleast_1d(angular_momentum(particles)),
        mean_energy=mean_particle_energy(particles, gravity, domain_size),
        n_fluid=int(np.count_nonzero(particles.phase == FLUID)),
        n_solid=int(np.count_nonzero(particles.phase == SOLID)),
        pcg_iters=pcg_iters,
        wall_s=wall_s,
    )


# ---------------------------------------------------------------------------
# Conservation audit
# ---------------------------------------------------------------------------


@dataclass
class Totals:
    """Mass and momentum on one side of a transfer phase. ``scale`` normalizes
    momentum errors (sum of |m v|), so nearly cancelling totals are not judged
    against a near-zero denominator."""

    mass: float
    momentum: np.ndarray
    scale: float = 0.0


# Relative tolerances (mass, momentum) per phase.
PHASE_CONTRACTS = {
    "p2g": (1e-12, 1e-11),
    "absorption": (1e-12, None),
    "deletion": (1e-12, None),
    "advection": (0.0, None),
}


@dataclass
class AuditResult:
    phase: str
    passed: bool
    mass_error: float
    momentum_error: float
    tolerances: tuple = ()

    def describe(self) -> str:
        state = "ok" if self.passed else "FAILED"
        return (f"{self.phase}: {state} (mass rel err {self.mass_error:.3e}, "
                f"momentum rel err {self.momentum_error:.3e})")


def totals_of(particles: Particles, momentum=None) -> Totals:
    m = particles.effective_mass()
    p = linear_momentum(particles) if momentum is None else np.asarray(momentum, float)
    return Totals(float(m.sum()), p, float(np.sum(m[:, None] * np.abs(particles.vel))))


def conservation_audit(before: Totals, after: Totals, phase: str = "p2g", tolerances=None) -> AuditResult:
    """Compare totals across a phase against that phase's conservation contract."""
    tm, tp = PHASE_CONTRACTS.get(phase, (1e-12, 1e-11)) if tolerances is None else tolerances
    mass_err = abs(after.mass - before.mass) / max(abs(before.mass), 1e-300)
    dp = np.asarray(after.momentum, float) - np.asarray(before.momentum, float)
    scale = max(before.scale, float(np.linalg.norm(before.momentum)), 1e-300)
    mom_err = float(np.max(np.abs(dp))) / scale if dp.size else 0.0
    ok = mass_err <= tm and (tp is None or mom_err <= tp)
    if not (np.isfinite(mass_err) and np.isfinite(mom_err)):
        ok = False
    return AuditResult(phase, bool(ok), float(mass_err), float(mom_err), (tm, tp))


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------


def write_diagnostics(path, records: list[DiagnosticsRecord], dim: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(diagnostics_header(dim))
        for r in records:
            w.writerow(r.row())


def write_timing(path, records: list[DiagnosticsRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "wall_s"])
        for r in records:
            w.writerow([r.step, "%.9f" % r.wall_s])


def read_diagnostics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    data = np.array(body, dtype=float).reshape(len(body), len(header))
    return {h: data[:, k] for k, h in enumerate(header)}


def read_timing(path) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return np.array([float(r[1]) for r in rows])


# ---------------------------------------------------------------------------
# Cost comparison
# ---------------------------------------------------------------------------


class RunMismatchError(ValueError):
    pass


_MATCH_KEYS = ("scene", "seed", "dt", "n_steps", "grid_dims", "workers")


@dataclass
class CostReport:
    label_a: str
    label_b: str
    steps: int
    mean_step_a: float
    mean_step_b: float
    total_a: float
    total_b: float
    ratio: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    def summary(self) -> str:
        return (f"{self.label_b} vs {self.label_a}: {self.mean_step_b * 1e3:.3f} ms/step vs "
                f"{self.mean_step_a * 1e3:.3f} ms/step over {self.steps} steps, ratio {self.ratio:.3f}")


def step_cost_report(times_a, times_b, meta_a: dict | None = None, meta_b: dict | None = None) -> CostReport:
    """Mean per-step wall time of two runs and their ratio (b over a).

    Runs must describe the same scene: the same scene name, seed, dt, step count,
    grid and worker count when that metadata is supplied.
    """
    meta_a, meta_b = meta_a or {}, meta_b or {}
    for k in _MATCH_KEYS:
        if k in meta_a and k in meta_b and meta_a[k] != meta_b[k]:
            raise RunMismatchError(f"runs differ in {k}: {meta_a[k]!r} vs {meta_b[k]!r}")
    ta, tb = np.asarray(times_a, float), np.asarray(times_b, float)
    if len(ta) != len(tb):
        raise RunMismatchError(f"runs have different step counts: {len(ta)} vs {len(tb)}")
    if len(ta) == 0:
        raise RunMismatchError("runs contain no steps")
    ma, mb = float(ta.mean()), float(tb.mean())
    return CostReport(
        label_a=str(meta_a.get("scheme", "a")),
        label_b=str(meta_b.get("scheme", "b")),
        steps=len(ta),
        mean_step_a=ma,
        mean_step_b=mb,
        total_a=float(ta.sum()),
        total_b=float(tb.sum()),
        ratio=mb / ma if ma > 0 else float("inf"),
    )


def load_run(directory) -> tuple[dict, dict[str, np.ndarray], np.ndarray]:
    """(metadata, diagnostics columns, per-step wall times) of a run directory."""
    d = Path(directory)
    meta = json.loads((d / "run.json").read_text())
    return meta, read_diagnostics(d / "diagnostics.csv"), read_timing(d / "timing.csv")
