"""Randomized property suites behind ``hybridpic verify``.

Each suite returns a :class:`SuiteResult`; ``passed`` is None for report-only
measurements. Tolerances live next to the checks that use them.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import oracles
from . import transfers as T
from .diagnostics import Totals, conservation_audit
from .kernels import ModeBasis, bspline, weight, weight_gradient
from .state import FLUID, SOLID, MacGrid, Particles


@dataclass
class SuiteResult:
    name: str
    passed: bool | None
    trials: int
    metrics: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    elapsed: float = 0.0

    def summary(self) -> dict:
        return {"suite": self.name, "passed": self.passed, "trials": self.trials,
                "elapsed_s": round(self.elapsed, 3), "metrics": self.metrics, "failures": self.failures[:10]}


def rel_err(a, b) -> float:
    """max |a - b| over max |b| (arrays or lists of arrays)."""
    if isinstance(a, (list, tuple)):
        num = max((float(np.max(np.abs(x - y))) if np.size(x) else 0.0) for x, y in zip(a, b))
        den = max((float(np.max(np.abs(y))) if np.size(y) else 0.0) for y in b)
    else:
        num = float(np.max(np.abs(np.asarray(a) - np.asarray(b)))) if np.size(a) else 0.0
        den = float(np.max(np.abs(b))) if np.size(b) else 0.0
    if num == 0.0:
        return 0.0
    return num / den if den > 0 else float("inf")


# ---------------------------------------------------------------------------
# Random states
# ---------------------------------------------------------------------------


def random_particles(rng, dims, dx, n, n_modes=1, phases="fluid", dt=0.01, affine_scale=None) -> Particles:
    """Particles strictly inside the one-cell boundary layer with random state.

    Coefficients of degree-k modes are scaled by dx^-k so every mode moves
    the velocity by a comparable amount; the affine scale keeps dt*C moderate.
    """
    d = len(dims)
    L = np.asarray(dims) * dx
    pos = rng.uniform(dx, L - dx, (n, d))
    if phases == "fluid":
        ph = np.zeros(n, np.uint8)
    elif phases == "solid":
        ph = np.ones(n, np.uint8)
    else:
        ph = rng.integers(0, 2, n).astype(np.uint8)
    p = Particles.from_arrays(pos, rng.normal(size=(n, d)), rng.uniform(0.1, 2.0, n), ph, n_modes)
    s = rng.uniform(0.0, 3.0) / max(dt, 1e-3) * 0.1 if affine_scale is None else affine_scale
    p.affine[:] = rng.normal(size=(n, d, d)) * s
    deg = np.zeros(n_modes)
    for r, e in enumerate(oracles_exponents(d, n_modes)):
        deg[r] = e.sum()
    p.coeffs[:] = rng.normal(size=(n, n_modes, d)) * dx ** -deg[None, :, None]
    p.prev_pos[:] = pos - dt * p.vel * rng.uniform(0.5, 1.5, (n, 1))
    solid = ph == SOLID
    p.absorbed[solid] = rng.uniform(0.0, 1.0, solid.sum()) * p.mass[solid]
    return p


def oracles_exponents(d, n_modes):
    return ModeBasis(d, min(n_modes, 3**d)).exponents


def _grid(dims, dx):
    return MacGrid(dims, dx)


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

MASS_TOL = 1e-12
MOMENTUM_TOL = 1e-11


def _p2g_variant(variant, p, g, basis, dt):
    if variant.startswith("mixture_fluid"):
        kind = variant.split(":")[1]
        T.p2g_mixture_fluid(p, g, basis, dt, kind)
        return FLUID, False, kind
    if variant.startswith("mixture_solid"):
        kind = variant.split(":")[1]
        T.p2g_mixture_solid(p, g, basis, dt, kind)
        return SOLID, True, kind
    T.p2g_scheme(variant, p, g, basis, dt)
    return None, False, variant


def suite_conservation(rng, trials=100, dim=2):
    """P2G mass and momentum conservation on random states, every scheme and mixture variant."""
    variants = [("pic", 1), ("apic", 1), ("polypic", 1), ("polypic", 2), ("polypic", 2**dim),
                ("mixture_fluid:apic", 1), ("mixture_fluid:polypic", 2**dim),
                ("mixture_solid:apic", 1), ("mixture_solid:polypic", 2**dim)]
    worst = {f"{v}/{m}": [0.0, 0.0] for v, m in variants}
    failures = []
    for t in range(trials):
        dims = tuple(int(x) for x in rng.integers(6, 14, dim))
        dx = float(10 ** rng.uniform(-2, 0))
        dt = float(rng.uniform(0.0, 0.02))
        n = int(rng.integers(5, 200))
        p = random_particles(rng, dims, dx, n, 2**dim, "mixed", dt)
        for variant, nm in variants:
            g = _grid(dims, dx)
            basis = ModeBasis(dim, nm) if "polypic" in variant else None
            phase, absorbed, kind = _p2g_variant(variant, p, g, basis, dt)
            idx = np.arange(n) if phase is None else np.flatnonzero(p.phase == phase)
            emass = p.mass[idx] + (p.absorbed[idx] if absorbed else 0.0)
            expected = T.expected_momentum(p, kind, g, basis, dt, phase, absorbed)
            scale = float(np.sum(emass[:, None] * np.abs(p.vel[idx]))) if len(idx) else 0.0
            if kind == "polypic":
                # momentum carried by the polynomial field, not by v
                scale = max(scale, float(np.sum(emass[:, None] * np.abs(p.coeffs[idx, 0, :]))))
            m, mv = T.grid_totals(g)
            key = f"{variant}/{nm}"
            for a in range(dim):
                if not len(idx):
                    continue
                res = conservation_audit(Totals(float(emass.sum()), np.array([expected[a]]), scale),
                                         Totals(float(m[a]), np.array([mv[a]])), "p2g", (MASS_TOL, MOMENTUM_TOL))
                worst[key][0] = max(worst[key][0], res.mass_error)
                worst[key][1] = max(worst[key][1], res.momentum_error)
                if not res.passed:
                    failures.append(f"trial {t} {key} axis {a}: {res.describe()}")
    metrics = {k: {"mass_rel": v[0], "momentum_rel": v[1]} for k, v in worst.items()}
    return SuiteResult("conservation", not failures, trials, metrics, failures)


DEGENERACY_TOL = 1e-14


def suite_degeneracy(rng, trials=100, dim=2):
    """APIC(C=0) = PIC, PolyPIC(N_r=1) = PIC, dry mixture-solid = plain solid transfer."""
    worst = {"apic_zero_derivs": 0.0, "polypic1_p2g": 0.0, "polypic1_g2p": 0.0, "dry_mixture_solid": 0.0}
    failures = []
    for t in range(trials):
        dims = tuple(int(x) for x in rng.integers(5, 12, dim))
        dx = float(10 ** rng.uniform(-2, 0))
        dt = float(rng.uniform(0.0, 0.02))
        p = random_particles(rng, dims, dx, int(rng.integers(1, 100)), 2**dim, "mixed", dt)
        ref = T.p2g_pic(p, _grid(dims, dx))
        q = p.copy()
        q.affine[:] = 0.0
        a = T.p2g_apic(q, _grid(dims, dx))
        q = p.copy()
        q.coeffs[:] = 0.0
        q.coeffs[:, 0, :] = q.vel
        b = T.p2g_polypic(q, _grid(dims, dx), ModeBasis(dim, 1), dt)
        errs = {"apic_zero_derivs": max(rel_err(a.face_momentum, ref.face_momentum), rel_err(a.face_mass, ref.face_mass)),
                "polypic1_p2g": max(rel_err(b.face_momentum, ref.face_momentum), rel_err(b.face_mass, ref.face_mass))}
        g = _grid(dims, dx)
        g.face_velocity_intermediate = [rng.normal(size=g.face_shape(k)) for k in range(dim)]
        u = T.g2p("pic", g, p.copy())
        w = T.g2p("polypic", g, p.copy(), ModeBasis(dim, 1))
        errs["polypic1_g2p"] = max(rel_err(w.vel, u.vel), rel_err(w.coeffs[:, 0], u.vel))
        dry = p.copy()
        dry.absorbed[:] = 0.0
        for kind, basis in (("apic", None), ("polypic", ModeBasis(dim, 2**dim))):
            m1 = T.p2g_mixture_solid(dry, _grid(dims, dx), basis, dt, kind)
            m2 = T.p2g_scheme(kind, dry, _grid(dims, dx), basis, dt, phase=SOLID)
            e = max(rel_err(m1.face_momentum, m2.face_momentum), rel_err(m1.face_mass, m2.face_mass),
                    rel_err(m1.face_velocity, m2.face_velocity))
            errs["dry_mixture_solid"] = max(errs.get("dry_mixture_solid", 0.0), e)
        for k, e in errs.items():
            worst[k] = max(worst[k], e)
            if not e <= DEGENERACY_TOL:
                failures.append(f"trial {t} {k}: rel err {e:.3e}")
    return SuiteResult("degeneracy", not failures, trials, worst, failures)


ORACLE_TOL = 1e-10


def fit_error(face_v, dims, dx, pos, axis, exps, orth, c_fast, c_ref) -> float:
    """Difference of two coefficient vectors measured on the fitted face values,
    relative to the weighted size of the data being fitted."""
    num = den = 0.0
    for f in oracles.faces(dims, axis)[0]:
        xf = oracles.face_location(f, axis, dx)
        w = oracles.kernel(pos, xf, dx)
        if w <= 0.0:
            continue
        z = xf - pos
        diff = sum(oracles.mode(e, z, w, dx, orth) * (c_fast[r] - c_ref[r]) for r, e in enumerate(exps))
        num += w * diff * diff
        den += w * face_v[axis][f] ** 2
    if num == 0.0:
        return 0.0
    return float(np.sqrt(num / den)) if den > 0 else float("inf")


def _oracle_trial(rng, t, worst, failures, only_orth_quadratic=False):
    d = int(rng.choice([2, 3]))
    dims = tuple(int(x) for x in rng.integers(3, 6 if d == 2 else 5, d))
    dx = float(10 ** rng.uniform(-1.5, 0.3))
    dt = float(rng.uniform(0.0, 0.05))
    n = int(rng.integers(1, 5))
    full = 3**d
    if only_orth_quadratic:
        nm, orth = int(rng.integers(2**d + 1, full + 1)), True
    else:
        nm, orth = int(rng.integers(1, full + 1)), bool(rng.integers(2))
    basis = ModeBasis(d, nm, orth)
    ref_kind = str(rng.choice(["previous", "current"]))
    p = random_particles(rng, dims, dx, n, full, "mixed", dt)
    checks = {}
    if not only_orth_quadratic:
        for kind in ("pic", "apic"):
            g = T.p2g_scheme(kind, p, _grid(dims, dx))
            M, P = oracles.p2g(p, dims, dx, kind)
            checks[f"p2g_{kind}"] = max(rel_err(g.face_mass, M), rel_err(g.face_momentum, P))
        g = T.p2g_polypic(p, _grid(dims, dx), basis, dt, map_reference=ref_kind)
        M, P = oracles.p2g(p, dims, dx, "polypic", basis.exponents, orth, dt, reference=ref_kind)
        checks["p2g_polypic"] = max(rel_err(g.face_mass, M), rel_err(g.face_momentum, P))
        kind = str(rng.choice(["apic", "polypic"]))
        b = basis if kind == "polypic" else None
        g = T.p2g_mixture_fluid(p, _grid(dims, dx), b, dt, kind)
        M, P = oracles.p2g(p, dims, dx, kind, basis.exponents, orth, dt, phase=FLUID)
        checks["p2g_mixture_fluid"] = max(rel_err(g.face_mass, M), rel_err(g.face_momentum, P))
        g = T.p2g_mixture_solid(p, _grid(dims, dx), b, dt, kind)
        M, P = oracles.p2g(p, dims, dx, kind, basis.exponents, orth, dt, phase=SOLID, include_absorbed=True)
        checks["p2g_mixture_solid"] = max(rel_err(g.face_mass, M), rel_err(g.face_momentum, P))
    g = _grid(dims, dx)
    fv = [rng.normal(size=g.face_shape(k)) for k in range(d)]
    g.face_velocity_intermediate = fv
    q = T.g2p("polypic", g, p.copy(), basis)
    v, grad, coef = oracles.g2p(fv, dims, dx, p.pos, basis.exponents, orth)
    if not only_orth_quadratic:
        checks["g2p_velocity"] = rel_err(q.vel, v)
        checks["g2p_affine"] = rel_err(q.affine, grad)
    ce = 0.0
    for i in range(n):
        for a in range(d):
            ce = max(ce, fit_error(fv, dims, dx, p.pos[i], a, basis.exponents, orth, q.coeffs[i, :nm, a],
                                   coef[i, :nm, a]))
    checks["coefficients"] = ce
    for k, e in checks.items():
        worst[k] = max(worst.get(k, 0.0), e)
        if not e <= ORACLE_TOL:
            failures.append(f"trial {t} {k}: rel err {e:.3e} (d={d}, dims={dims}, nm={nm}, orth={orth})")


def suite_oracle(rng, trials=500):
    """Fast P2G/G2P/coefficient outputs against naive loop and dense least-squares oracles."""
    worst, failures = {}, []
    for t in range(trials):
        _oracle_trial(rng, t, worst, failures)
    return SuiteResult("oracle", not failures, trials, worst, failures)


GRAM_TOL = 1e-10


def gram_matrix(pos, axis, dx, basis) -> np.ndarray:
    """Mode Gram matrix of one particle under its own stencil weights (identity map)."""
    d = len(pos)
    g = pos / dx - np.where(np.arange(d) == axis, 0.0, 0.5)
    base = np.floor(g - 0.5).astype(int)
    G = np.zeros((basis.n_modes, basis.n_modes))
    for off in np.ndindex(*(3,) * d):
        node = base + np.array(off)
        xf = (node + np.where(np.arange(d) == axis, 0.0, 0.5)) * dx
        w = float(weight(pos - xf, dx))
        if w == 0.0:
            continue
        z = xf - pos
        from .kernels import scalar_mode
        s = np.array([scalar_mode(basis, r, z, w, dx) for r in range(basis.n_modes)])
        G += w * np.outer(s, s)
    return G


def _offdiag_ratio(G, rows=None):
    n = len(G)
    rows = range(n) if rows is None else rows
    worst = 0.0
    for r in rows:
        for s in range(n):
            if s != r:
                worst = max(worst, abs(G[r, s]) / np.sqrt(G[r, r] * G[s, s]))
    return worst


def suite_gram(rng, trials=1000, dim=2):
    """Multilinear Gram diagonality (asserted); Eq. 14 quadratic modes (measured, reported)."""
    multi = ModeBasis(dim, 2**dim)
    orth = ModeBasis(dim, 3**dim, True)
    plain = ModeBasis(dim, 3**dim, False)
    worst_ml = 0.0
    q_orth, q_plain = [], []
    failures = []
    quad_rows = [r for r in range(3**dim) if orth.is_quadratic(r)]
    for t in range(trials):
        dx = float(10 ** rng.uniform(-2, 0))
        pos = rng.uniform(2 * dx, 6 * dx, dim)
        axis = int(rng.integers(dim))
        G = gram_matrix(pos, axis, dx, multi)
        off = np.abs(G - np.diag(np.diag(G))).max() / np.diag(G).max()
        worst_ml = max(worst_ml, off)
        if not off <= GRAM_TOL:
            failures.append(f"position {t}: multilinear off-diagonal ratio {off:.3e}")
        q_orth.append(_offdiag_ratio(gram_matrix(pos, axis, dx, orth), quad_rows))
        q_plain.append(_offdiag_ratio(gram_matrix(pos, axis, dx, plain), quad_rows))
    sub_worst, sub_fail = {}, []
    sub_trials = max(20, trials // 10)
    for t in range(sub_trials):
        _oracle_trial(rng, t, sub_worst, sub_fail, only_orth_quadratic=True)
    failures += sub_fail
    metrics = {
        "multilinear_offdiag_over_maxdiag": worst_ml,
        "orthogonalized_quadratic_normalized_offdiag": {"max": float(np.max(q_orth)), "median": float(np.median(q_orth))},
        "plain_quadratic_normalized_offdiag": {"max": float(np.max(q_plain)), "median": float(np.median(q_plain))},
        "dense_fallback_vs_oracle": sub_worst.get("coefficients", 0.0),
        "dense_fallback_trials": sub_trials,
    }
    return SuiteResult("gram", not failures, trials, metrics, failures)


MONO_TOL = 1e-10


def round_trip_energies(rng, dim=2, mode_counts=(1, 2, 4)):
    """Source grid kinetic energy and the energy left after G2P -> P2G per mode count."""
    dims = tuple(int(x) for x in rng.integers(8, 14, dim))
    dx = float(10 ** rng.uniform(-2, 0))
    cells = np.stack(np.meshgrid(*[np.arange(1, n - 1) for n in dims], indexing="ij"), -1).reshape(-1, dim)
    ppc = 2**dim
    pos = (np.repeat(cells, ppc, axis=0) + rng.uniform(0, 1, (len(cells) * ppc, dim))) * dx
    p = Particles.from_arrays(pos, np.zeros_like(pos), rng.uniform(0.5, 1.5, len(pos)), FLUID, max(mode_counts))
    g = T.p2g_pic(p, _grid(dims, dx))
    mass = [m.copy() for m in g.face_mass]
    src = [np.where(m > 0, rng.normal(size=m.shape), 0.0) for m in mass]
    e_src = 0.5 * sum(float(np.sum(m * v * v)) for m, v in zip(mass, src))
    out = []
    for nm in mode_counts:
        basis = ModeBasis(dim, nm)
        g.face_velocity_intermediate = [v.copy() for v in src]
        q = T.g2p("polypic", g, p.copy(), basis, 0.0)
        q.prev_pos = q.pos.copy()
        h = T.p2g_polypic(q, _grid(dims, dx), basis, 0.0)
        out.append(h.kinetic_energy())
    return e_src, out


def suite_monotonicity(rng, trials=50, dim=2):
    """Round-trip kinetic energy non-decreasing over nested PolyPIC bases, bounded by the source."""
    counts = tuple([1, 2, 4] if dim == 2 else [1, 2, 4, 8])
    worst_dec, worst_over, failures, ratios = 0.0, 0.0, [], []
    for t in range(trials):
        e_src, es = round_trip_energies(rng, dim, counts)
        ratios.append([e / e_src for e in es])
        for k in range(1, len(es)):
            dec = (es[k - 1] - es[k]) / e_src
            worst_dec = max(worst_dec, dec)
            if dec > MONO_TOL:
                failures.append(f"state {t}: retention drops from N_r={counts[k - 1]} to {counts[k]} by {dec:.3e}")
        over = (max(es) - e_src) / e_src
        worst_over = max(worst_over, over)
        if over > MONO_TOL:
            failures.append(f"state {t}: retention exceeds source energy by {over:.3e}")
    mean = np.mean(ratios, axis=0)
    metrics = {"max_decrease_rel": worst_dec, "max_excess_rel": worst_over,
               "mean_retention": {str(c): float(r) for c, r in zip(counts, mean)}}
    return SuiteResult("monotonicity", not failures, trials, metrics, failures)


def suite_kernels(rng, trials=1000):
    """Partition of unity, zero gradient sum and finite-difference gradients of the weights."""
    worst = {"partition_of_unity": 0.0, "gradient_sum": 0.0, "finite_difference": 0.0}
    failures = []
    for t in range(trials):
        d = int(rng.choice([2, 3]))
        dx = float(10 ** rng.uniform(-2, 0))
        x = rng.uniform(3 * dx, 7 * dx, d)
        axis = int(rng.integers(d))
        shift = np.where(np.arange(d) == axis, 0.0, 0.5)
        base = np.floor(x / dx - shift - 0.5).astype(int)
        offs = np.array([(base + np.array(o) + shift) * dx for o in np.ndindex(*(3,) * d)])
        w = weight(x - offs, dx)
        gw = weight_gradient(x - offs, dx)
        e1 = abs(w.sum() - 1.0)
        e2 = float(np.abs(gw.sum(axis=0)).max()) * dx
        off = rng.uniform(-1.6, 1.6, d) * dx
        h = 1e-6 * dx
        fd = np.array([(weight(off + h * np.eye(d)[b], dx) - weight(off - h * np.eye(d)[b], dx)) / (2 * h)
                       for b in range(d)])
        e3 = float(np.abs(fd - weight_gradient(off, dx)).max()) * dx
        for k, e, tol in (("partition_of_unity", e1, 1e-12), ("gradient_sum", e2, 1e-10),
                          ("finite_difference", e3, 1e-6)):
            worst[k] = max(worst[k], e)
            if not e <= tol:
                failures.append(f"point {t} {k}: {e:.3e}")
    worst["bspline_center"] = float(bspline(0.0))
    return SuiteResult("kernels", not failures, trials, worst, failures)


def suite_momentum(rng, trials=100, dim=2):
    """PIC/APIC angular and linear momentum carried to the grid match the particle analytics."""
    worst = {"pic_angular": 0.0, "apic_angular": 0.0, "apic_linear": 0.0}
    failures = []
    for t in range(trials):
        dims = tuple(int(x) for x in rng.integers(6, 14, dim))
        dx = float(10 ** rng.uniform(-2, 0))
        p = random_particles(rng, dims, dx, int(rng.integers(1, 100)), 1, "fluid", affine_scale=1.0 / dx)
        L_scale = float(np.sum(p.mass * np.linalg.norm(p.pos, axis=1) * np.linalg.norm(p.vel, axis=1)))
        q = p.copy()
        q.affine[:] = 0.0
        g = T.p2g_pic(q, _grid(dims, dx))
        errs = {"pic_angular": np.max(np.abs(np.asarray(T.grid_angular_momentum(g)) -
                                             T.apic_angular_momentum(q, dx))) / L_scale}
        g = T.p2g_apic(p, _grid(dims, dx))
        errs["apic_angular"] = np.max(np.abs(np.asarray(T.grid_angular_momentum(g)) -
                                             T.apic_angular_momentum(p, dx))) / L_scale
        _, mv = T.grid_totals(g)
        errs["apic_linear"] = float(np.abs(mv - (p.mass[:, None] * p.vel).sum(0)).max()) / \
            float(np.sum(p.mass[:, None] * np.abs(p.vel)))
        for k, e in errs.items():
            worst[k] = max(worst[k], float(e))
            if not e <= MOMENTUM_TOL:
                failures.append(f"trial {t} {k}: rel err {float(e):.3e}")
    return SuiteResult("momentum", not failures, trials, worst, failures)


SUITES = {
    "conservation": (suite_conservation, 100),
    "degeneracy": (suite_degeneracy, 100),
    "oracle": (suite_oracle, 500),
    "gram": (suite_gram, 1000),
    "monotonicity": (suite_monotonicity, 50),
    "kernels": (suite_kernels, 1000),
    "momentum": (suite_momentum, 100),
}


def run_suite(name: str, seed: int = 12345, trials: int | None = None) -> SuiteResult:
    fn, default = SUITES[name]
    rng = np.random.default_rng([seed, sorted(SUITES).index(name)])
    t0 = time.perf_counter()
    res = fn(rng, trials or default)
    res.elapsed = time.perf_counter() - t0
    return res


def run_suites(names=None, seed: int = 12345, trials: int | None = None) -> list[SuiteResult]:
    return [run_suite(n, seed, trials) for n in (names or list(SUITES))]
