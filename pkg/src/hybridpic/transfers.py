"""Particle <-> grid transfers for PIC, APIC and PolyPIC on a MAC grid.

Every P2G variant funnels into :func:`_p2g_axis`, a numba kernel that scatters
one velocity component at a time; every G2P variant funnels into
:func:`_g2p_axis`, which gathers the velocity, the APIC derivative vector and
(optionally) the PolyPIC coefficients in a single pass over the stencil.

P2G determinism: particles are split into ``workers`` contiguous chunks, each
chunk accumulates into a private buffer and the buffers are reduced in chunk
order, so results are bitwise reproducible for a fixed worker count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .kernels import MapStats, ModeBasis, _bspline, _bspline_deriv, _mode_value, map_matrices
from .state import FLUID, MASS_EPSILON, SOLID, MacGrid, Particles, TransferScheme

PIC, APIC, POLYPIC = 0, 1, 2
_SCHEME_CODE = {"pic": PIC, "apic": APIC, "polypic": POLYPIC}

# Sign of the affine term in the APIC scatter. Only the mutation checks touch it.
_AFFINE_SIGN = 1.0

DIAGONAL_TOL = 1e-8
PIVOT_TOL = 1e-10

FLAG_DENSE = 1
FLAG_TRUNCATED = 2


@dataclass
class TransferStats:
    """Per-step counters reported in the step trace."""

    map_fallbacks: int = 0
    dense_solves: int = 0
    truncated_solves: int = 0

    def merge(self, other: "TransferStats") -> None:
        self.map_fallbacks += other.map_fallbacks
        self.dense_solves += other.dense_solves
        self.truncated_solves += other.truncated_solves


# ---------------------------------------------------------------------------
# numba kernels
# ---------------------------------------------------------------------------


@njit(cache=True)
def _stencil(xp, alpha, dx, w1, dw1, off, base):
    d = xp.shape[0]
    for b in range(d):
        g = xp[b] / dx
        if b != alpha:
            g -= 0.5
        bi = int(np.floor(g - 0.5))
        fx = g - bi
        base[b] = bi
        for j in range(3):
            u = fx - j
            w1[b, j] = _bspline(u)
            dw1[b, j] = _bspline_deriv(u) / dx
            off[b, j] = -u * dx


@njit(cache=True)
def _strides(fdims):
    d = fdims.shape[0]
    s = np.empty(d, np.int64)
    p3 = np.empty(d, np.int64)
    acc = 1
    acc3 = 1
    for b in range(d - 1, -1, -1):
        s[b] = acc
        p3[b] = acc3
        acc *= fdims[b]
        acc3 *= 3
    return s, p3


@njit(parallel=True, cache=True)
def _p2g_axis(pos, emass, vel_a, aff_a, coef_a, binv, shift, exps, orth, scheme, sign,
              alpha, dx, fdims, bounds, out_m, out_mv):
    d = pos.shape[1]
    nk = 3**d
    nmodes = coef_a.shape[1]
    strides, p3 = _strides(fdims)
    for c in prange(bounds.shape[0] - 1):
        w1 = np.empty((d, 3))
        dw1 = np.empty((d, 3))
        off = np.empty((d, 3))
        base = np.empty(d, np.int64)
        dvec = np.empty(d)
        z = np.empty(d)
        for p in range(bounds[c], bounds[c + 1]):
            _stencil(pos[p], alpha, dx, w1, dw1, off, base)
            for k in range(nk):
                w = 1.0
                flat = 0
                inside = True
                for b in range(d):
                    j = (k // p3[b]) % 3
                    idx = base[b] + j
                    if idx < 0 or idx >= fdims[b]:
                        inside = False
                        break
                    flat += idx * strides[b]
                    w *= w1[b, j]
                    dvec[b] = off[b, j]
                if not inside or w == 0.0:
                    continue
                mw = emass[p] * w
                if scheme == 0:
                    s = vel_a[p]
                elif scheme == 1:
                    corr = 0.0
                    for b in range(d):
                        corr += aff_a[p, b] * dvec[b]
                    s = vel_a[p] + sign * corr
                else:
                    for b in range(d):
                        acc = shift[p, b]
                        for q in range(d):
                            acc += binv[p, b, q] * dvec[q]
                        z[b] = acc
                    s = 0.0
                    for r in range(nmodes):
                        s += _mode_value(exps, r, z, w, dx, orth) * coef_a[p, r]
                out_m[c, flat] += mw
                out_mv[c, flat] += mw * s


@njit(cache=True)
def _solve_ls(A, rhs, m, nm, out):
    """Least squares for the leading well-posed column block of A (m x nm).

    Householder QR of the weighted design matrix; R equals the Cholesky factor
    of the normal matrix, so a column is dropped (with all later ones) exactly
    when its normal-equation pivot falls below PIVOT_TOL times its diagonal.
    A and rhs are overwritten. Returns the number of modes kept.
    """
    for r in range(nm):
        out[r] = 0.0
    colsq = np.zeros(nm)
    for j in range(nm):
        t = 0.0
        for i in range(m):
            t += A[i, j] * A[i, j]
        colsq[j] = t
    k_ok = nm
    for j in range(nm):
        t = 0.0
        for i in range(j, m):
            t += A[i, j] * A[i, j]
        if j >= m or not (colsq[j] > 0.0) or t <= PIVOT_TOL * colsq[j]:
            k_ok = j
            break
        alpha = np.sqrt(t)
        if A[j, j] > 0.0:
            alpha = -alpha
        # v = x - alpha e1, stored in A[j:, j]
        A[j, j] -= alpha
        vnorm2 = t - 2.0 * alpha * (A[j, j] + alpha) + alpha * alpha
        if vnorm2 > 0.0:
            for q in range(j + 1, nm):
                dot = 0.0
                for i in range(j, m):
                    dot += A[i, j] * A[i, q]
                f = 2.0 * dot / vnorm2
                for i in range(j, m):
                    A[i, q] -= f * A[i, j]
            dot = 0.0
            for i in range(j, m):
                dot += A[i, j] * rhs[i]
            f = 2.0 * dot / vnorm2
            for i in range(j, m):
                rhs[i] -= f * A[i, j]
        A[j, j] = alpha
    for i in range(k_ok - 1, -1, -1):
        t = rhs[i]
        for q in range(i + 1, k_ok):
            t -= A[i, q] * out[q]
        out[i] = t / A[i, i]
    return k_ok


@njit(parallel=True, cache=True)
def _g2p_axis(pos, sel, face_v, alpha, dx, fdims, exps, orth, nmodes, out_v, out_grad, out_coef, flags):
    d = pos.shape[1]
    nk = 3**d
    strides, p3 = _strides(fdims)
    for q in prange(sel.shape[0]):
        p = sel[q]
        w1 = np.empty((d, 3))
        dw1 = np.empty((d, 3))
        off = np.empty((d, 3))
        base = np.empty(d, np.int64)
        ws = np.empty(nk)
        vs = np.empty(nk)
        zs = np.empty((nk, d))
        _stencil(pos[p], alpha, dx, w1, dw1, off, base)
        v = 0.0
        grad = np.zeros(d)
        m = 0
        for k in range(nk):
            w = 1.0
            flat = 0
            inside = True
            for b in range(d):
                j = (k // p3[b]) % 3
                idx = base[b] + j
                if idx < 0 or idx >= fdims[b]:
                    inside = False
                    break
                flat += idx * strides[b]
                w *= w1[b, j]
                zs[m, b] = off[b, j]
            if not inside:
                continue
            fv = face_v[flat]
            v += w * fv
            for b in range(d):
                g = 1.0
                for e in range(d):
                    j = (k // p3[e]) % 3
                    g *= dw1[e, j] if e == b else w1[e, j]
                grad[b] += g * fv
            if w != 0.0:
                ws[m] = w
                vs[m] = fv
                m += 1
        out_v[q] = v
        for b in range(d):
            out_grad[q, b] = grad[b]
        if nmodes == 0:
            continue
        S = np.empty((m, nmodes))
        for i in range(m):
            for r in range(nmodes):
                S[i, r] = _mode_value(exps, r, zs[i], ws[i], dx, orth)
        G = np.zeros((nmodes, nmodes))
        rhs = np.zeros(nmodes)
        for i in range(m):
            for r in range(nmodes):
                wr = ws[i] * S[i, r]
                rhs[r] += wr * vs[i]
                for s in range(r, nmodes):
                    G[r, s] += wr * S[i, s]
        for r in range(nmodes):
            for s in range(r + 1, nmodes):
                G[s, r] = G[r, s]
        diagonal = True
        for r in range(nmodes):
            if not (G[r, r] > 0.0):
                diagonal = False
        if diagonal:
            for r in range(nmodes):
                for s in range(r + 1, nmodes):
                    if abs(G[r, s]) > DIAGONAL_TOL * np.sqrt(G[r, r] * G[s, s]):
                        diagonal = False
        if diagonal:
            for r in range(nmodes):
                out_coef[q, r] = rhs[r] / G[r, r]
        else:
            A = np.empty((m, nmodes))
            bw = np.empty(m)
            for i in range(m):
                sw = np.sqrt(ws[i])
                bw[i] = sw * vs[i]
                for r in range(nmodes):
                    A[i, r] = sw * S[i, r]
            c = np.empty(nmodes)
            k_ok = _solve_ls(A, bw, m, nmodes, c)
            for r in range(nmodes):
                out_coef[q, r] = c[r]
            flags[q] |= FLAG_DENSE
            if k_ok < nmodes:
                flags[q] |= FLAG_TRUNCATED


# ---------------------------------------------------------------------------
# P2G
# ---------------------------------------------------------------------------


def _chunks(n: int, workers: int) -> np.ndarray:
    workers = max(1, min(int(workers), max(n, 1)))
    return np.array([n * k // workers for k in range(workers + 1)], dtype=np.int64)


def _select(particles: Particles, phase: int | None) -> np.ndarray:
    if phase is None:
        return np.arange(len(particles))
    return np.flatnonzero(particles.phase == phase)


def _map_inputs(particles: Particles, idx, dt, map_reference, stats):
    """Per-particle inverse map and the shift that selects the reference point."""
    d = particles.dim
    if len(idx) == 0:
        return np.zeros((0, d, d)), np.zeros((0, d))
    ms = MapStats()
    binv = map_matrices(particles.affine[idx], dt, ms)
    if stats is not None:
        stats.map_fallbacks += ms.fallbacks
    if map_reference == "previous":
        shift = np.zeros((len(idx), d))
    elif map_reference == "current":
        shift = particles.prev_pos[idx] - particles.pos[idx]
    else:
        raise ValueError(f"unknown map_reference {map_reference!r}")
    return binv, shift


def _p2g(particles: Particles, grid: MacGrid, scheme: int, idx, emass, basis: ModeBasis | None = None,
         dt: float = 0.0, workers: int = 1, map_reference: str = "previous", stats=None) -> MacGrid:
    d = grid.dim
    n = len(idx)
    pos = np.ascontiguousarray(particles.pos[idx])
    emass = np.ascontiguousarray(emass)
    bounds = _chunks(n, workers)
    nch = bounds.shape[0] - 1
    if scheme == POLYPIC:
        if basis is None:
            raise ValueError("PolyPIC transfer needs a ModeBasis")
        nm = basis.n_modes
        exps = basis.exponents
        orth = bool(basis.orthogonalize)
        binv, shift = _map_inputs(particles, idx, dt, map_reference, stats)
        coefs = particles.coeffs[idx][:, :nm, :]
    else:
        exps = np.zeros((1, d), np.int64)
        orth = False
        binv = np.zeros((n, d, d))
        shift = np.zeros((n, d))
        coefs = np.zeros((n, 1, d))
    binv = np.ascontiguousarray(binv)
    shift = np.ascontiguousarray(shift)
    for a in range(d):
        shape = grid.face_shape(a)
        nf = int(np.prod(shape))
        out_m = np.zeros((nch, nf))
        out_mv = np.zeros((nch, nf))
        _p2g_axis(pos, emass, np.ascontiguousarray(particles.vel[idx, a]),
                  np.ascontiguousarray(particles.affine[idx, a, :]),
                  np.ascontiguousarray(coefs[:, :, a]), binv, shift, exps, orth, scheme,
                  _AFFINE_SIGN, a, grid.dx, np.asarray(shape, np.int64), bounds, out_m, out_mv)
        m = out_m.sum(axis=0).reshape(shape) if nch > 1 else out_m[0].reshape(shape)
        mv = out_mv.sum(axis=0).reshape(shape) if nch > 1 else out_mv[0].reshape(shape)
        grid.face_mass[a] = m
        grid.face_momentum[a] = mv
        grid.face_velocity[a] = face_velocity(m, mv)
    return grid


def scatter_to_faces(positions: np.ndarray, values: np.ndarray, grid: MacGrid, workers: int = 1) -> list:
    """Per-axis face sums of ``w_ipa * values[p, a]`` (e.g. forces)."""
    pos = np.ascontiguousarray(positions, dtype=float)
    n, d = pos.shape
    bounds = _chunks(n, workers)
    nch = bounds.shape[0] - 1
    out = []
    dummy_c = np.zeros((n, 1))
    dummy_b = np.zeros((n, d, d))
    dummy_s = np.zeros((n, d))
    for a in range(d):
        shape = grid.face_shape(a)
        nf = int(np.prod(shape))
        out_m = np.zeros((nch, nf))
        out_f = np.zeros((nch, nf))
        _p2g_axis(pos, np.ones(n), np.ascontiguousarray(values[:, a], dtype=float), dummy_s, dummy_c,
                  dummy_b, dummy_s, np.zeros((1, d), np.int64), False, PIC, 1.0, a, grid.dx,
                  np.asarray(shape, np.int64), bounds, out_m, out_f)
        out.append(out_f.sum(axis=0).reshape(shape))
    return out


def face_velocity(mass: np.ndarray, momentum: np.ndarray) -> np.ndarray:
    live = mass > MASS_EPSILON
    return np.divide(momentum, mass, out=np.zeros_like(momentum), where=live)


def p2g_pic(particles: Particles, grid: MacGrid, workers: int = 1) -> MacGrid:
    idx = _select(particles, None)
    return _p2g(particles, grid, PIC, idx, particles.mass[idx], workers=workers)


def p2g_apic(particles: Particles, grid: MacGrid, workers: int = 1) -> MacGrid:
    idx = _select(particles, None)
    return _p2g(particles, grid, APIC, idx, particles.mass[idx], workers=workers)


def p2g_polypic(particles: Particles, grid: MacGrid, basis: ModeBasis, dt: float, workers: int = 1,
                map_reference: str = "previous", stats: TransferStats | None = None) -> MacGrid:
    idx = _select(particles, None)
    return _p2g(particles, grid, POLYPIC, idx, particles.mass[idx], basis, dt, workers, map_reference, stats)


def p2g_scheme(scheme: TransferScheme | str, particles: Particles, grid: MacGrid, basis=None, dt=0.0,
               phase: int | None = None, include_absorbed: bool = False, **kw) -> MacGrid:
    """Dispatch P2G by scheme on the particles of ``phase`` (all when None)."""
    kind = scheme.kind if isinstance(scheme, TransferScheme) else scheme
    idx = _select(particles, phase)
    emass = particles.mass[idx]
    if include_absorbed:
        emass = emass + particles.absorbed[idx]
    return _p2g(particles, grid, _SCHEME_CODE[kind], idx, emass, basis, dt, **kw)


def p2g_mixture_fluid(particles: Particles, grid_fluid: MacGrid, basis: ModeBasis | None, dt: float,
                      scheme: TransferScheme | str = "polypic", **kw) -> MacGrid:
    """Scatter only Fluid-phase particles into the fluid grid."""
    return p2g_scheme(scheme, particles, grid_fluid, basis, dt, phase=FLUID, **kw)


def p2g_mixture_solid(particles: Particles, grid_solid: MacGrid, basis: ModeBasis | None, dt: float,
                      scheme: TransferScheme | str = "polypic", **kw) -> MacGrid:
    """Scatter Solid-phase particles with their absorbed fluid mass added; face
    velocity is momentum over the face-summed combined mass."""
    return p2g_scheme(scheme, particles, grid_solid, basis, dt, phase=SOLID, include_absorbed=True, **kw)


# ---------------------------------------------------------------------------
# G2P
# ---------------------------------------------------------------------------


def _gather(grid: MacGrid, particles: Particles, idx, basis: ModeBasis | None, velocity=None):
    """Gather (v, grad, coeffs, flags) for the selected particles from ṽ."""
    d = grid.dim
    n = len(idx)
    velocity = grid.face_velocity_intermediate if velocity is None else velocity
    nm = 0 if basis is None else basis.n_modes
    exps = basis.exponents if basis is not None else np.zeros((1, d), np.int64)
    orth = bool(basis.orthogonalize) if basis is not None else False
    v = np.zeros((n, d))
    grad = np.zeros((n, d, d))
    coef = np.zeros((n, max(nm, 1), d))
    flags = np.zeros(n, np.int64)
    pos = np.ascontiguousarray(particles.pos)
    sel = np.ascontiguousarray(idx, dtype=np.int64)
    for a in range(d):
        shape = grid.face_shape(a)
        out_v = np.zeros(n)
        out_g = np.zeros((n, d))
        out_c = np.zeros((n, max(nm, 1)))
        _g2p_axis(pos, sel, np.ascontiguousarray(velocity[a]).ravel(), a, grid.dx,
                  np.asarray(shape, np.int64), exps, orth, nm, out_v, out_g, out_c, flags)
        v[:, a] = out_v
        grad[:, a, :] = out_g
        coef[:, :, a] = out_c
    return v, grad, coef, flags


def _index(particles, select):
    if select is None:
        return np.arange(len(particles))
    return np.asarray(select, dtype=np.int64)


def g2p_pic(grid: MacGrid, particles: Particles, select=None) -> Particles:
    idx = _index(particles, select)
    v, _, _, _ = _gather(grid, particles, idx, None)
    particles.vel[idx] = v
    return particles


def update_affine_derivs(grid: MacGrid, particles: Particles, select=None) -> Particles:
    idx = _index(particles, select)
    _, grad, _, _ = _gather(grid, particles, idx, None)
    particles.affine[idx] = grad
    return particles


def compute_polypic_coefficients(grid: MacGrid, particles: Particles, basis: ModeBasis, dt: float = 0.0,
                                 select=None, stats: TransferStats | None = None) -> Particles:
    """Weighted least-squares fit of the scalar-mode coefficients, one axis at a time.

    The fit is taken in the particle's local frame at the time of the gather, so
    the configuration map is the identity here; ``dt`` only enters at the next
    scatter through the map.
    """
    idx = _index(particles, select)
    _, _, coef, flags = _gather(grid, particles, idx, basis)
    _store_coeffs(particles, idx, coef, basis)
    _count(flags, stats)
    return particles


def _store_coeffs(particles, idx, coef, basis):
    if particles.n_modes < basis.n_modes:
        particles.resize_modes(basis.n_modes)
    particles.coeffs[idx] = 0.0
    particles.coeffs[idx, : basis.n_modes, :] = coef[:, : basis.n_modes, :]


def _count(flags, stats):
    if stats is not None:
        stats.dense_solves += int(np.count_nonzero(flags & FLAG_DENSE))
        stats.truncated_solves += int(np.count_nonzero(flags & FLAG_TRUNCATED))


def g2p(scheme: TransferScheme | str, grid: MacGrid, particles: Particles, basis: ModeBasis | None = None,
        dt: float = 0.0, select=None, stats: TransferStats | None = None) -> Particles:
    """Velocity gather plus the scheme's extra state (derivatives, coefficients)."""
    kind = scheme.kind if isinstance(scheme, TransferScheme) else scheme
    idx = _index(particles, select)
    if kind == "pic":
        v, _, _, _ = _gather(grid, particles, idx, None)
        particles.vel[idx] = v
        particles.affine[idx] = 0.0
        particles.coeffs[idx] = 0.0
        particles.coeffs[idx, 0, :] = v
        return particles
    if kind == "apic":
        v, grad, _, _ = _gather(grid, particles, idx, None)
        particles.vel[idx] = v
        particles.affine[idx] = grad
        return particles
    if basis is None:
        raise ValueError("PolyPIC gather needs a ModeBasis")
    v, grad, coef, flags = _gather(grid, particles, idx, basis)
    particles.vel[idx] = v
    particles.affine[idx] = grad
    _store_coeffs(particles, idx, coef, basis)
    _count(flags, stats)
    return particles


# ---------------------------------------------------------------------------
# Analytic totals used by audits
# ---------------------------------------------------------------------------


@njit(cache=True)
def _poly_momentum_expected(pos, emass, coef_a, binv, shift, exps, alpha, dx):
    """Sum over particles of m_p * E_w[sum_r c_r s_r(z)] using per-axis B-spline
    moments; valid for unsubstituted monomials and full interior stencils."""
    n, d = pos.shape
    nm = coef_a.shape[1]
    total = 0.0
    w1 = np.empty((d, 3))
    dw1 = np.empty((d, 3))
    off = np.empty((d, 3))
    base = np.empty(d, np.int64)
    mom = np.empty((d, 7))
    factors = np.empty(6, np.int64)
    counts = np.empty(d, np.int64)
    for p in range(n):
        _stencil(pos[p], alpha, dx, w1, dw1, off, base)
        for b in range(d):
            for k in range(7):
                s = 0.0
                for j in range(3):
                    s += w1[b, j] * off[b, j] ** k
                mom[b, k] = s
        acc = 0.0
        for r in range(nm):
            nf = 0
            for b in range(d):
                for _ in range(exps[r, b]):
                    factors[nf] = b
                    nf += 1
            # expand prod_f (shift_b + sum_j B[b, j] d_j) term by term
            nterms = (d + 1) ** nf
            e = 0.0
            for t in range(nterms):
                coef = 1.0
                for b in range(d):
                    counts[b] = 0
                rem = t
                for f in range(nf):
                    pick = rem % (d + 1)
                    rem //= d + 1
                    b = factors[f]
                    if pick == 0:
                        coef *= shift[p, b]
                    else:
                        coef *= binv[p, b, pick - 1]
                        counts[pick - 1] += 1
                term = coef
                for b in range(d):
                    term *= mom[b, counts[b]]
                e += term
            acc += e * coef_a[p, r]
        total += emass[p] * acc
    return total


@njit(cache=True)
def _poly_momentum_direct(pos, emass, coef_a, binv, shift, exps, orth, alpha, dx):
    """Particle-side stencil sum of m_p w_ip v_p(z_ip); used when the modes are
    not separable (orthogonalized quadratics depend on the full weight)."""
    n, d = pos.shape
    nk = 3**d
    nm = coef_a.shape[1]
    w1 = np.empty((d, 3))
    dw1 = np.empty((d, 3))
    off = np.empty((d, 3))
    base = np.empty(d, np.int64)
    dvec = np.empty(d)
    z = np.empty(d)
    total = 0.0
    for p in range(n):
        _stencil(pos[p], alpha, dx, w1, dw1, off, base)
        acc = 0.0
        for k in range(nk):
            w = 1.0
            rem = k
            for b in range(d - 1, -1, -1):
                j = rem % 3
                rem //= 3
                w *= w1[b, j]
                dvec[b] = off[b, j]
            if w == 0.0:
                continue
            for b in range(d):
                t = shift[p, b]
                for q in range(d):
                    t += binv[p, b, q] * dvec[q]
                z[b] = t
            s = 0.0
            for r in range(nm):
                s += _mode_value(exps, r, z, w, dx, orth) * coef_a[p, r]
            acc += w * s
        total += emass[p] * acc
    return total


def expected_momentum(particles: Particles, scheme: TransferScheme | str, grid: MacGrid,
                      basis: ModeBasis | None = None, dt: float = 0.0, phase: int | None = None,
                      include_absorbed: bool = False, map_reference: str = "previous") -> np.ndarray:
    """Total grid momentum a P2G must produce, computed without touching the grid.

    PIC/APIC: sum m_p v_p. PolyPIC: sum m_p E_w[v_p(z)], where the expectation
    under the particle's stencil weights is evaluated from one-dimensional
    B-spline moments. With the identity map that reduces to sum m_p c_p0.
    Orthogonalized quadratic modes are not separable; for those the expectation
    is a direct particle-side stencil sum instead.
    """
    kind = scheme.kind if isinstance(scheme, TransferScheme) else scheme
    idx = _select(particles, phase)
    emass = particles.mass[idx] + (particles.absorbed[idx] if include_absorbed else 0.0)
    d = particles.dim
    if kind != "polypic":
        return (emass[:, None] * particles.vel[idx]).sum(axis=0)
    nm = basis.n_modes
    direct = basis.orthogonalize and any(basis.is_quadratic(r) for r in range(nm))
    binv, shift = _map_inputs(particles, idx, dt, map_reference, None)
    pos = np.ascontiguousarray(particles.pos[idx])
    out = np.zeros(d)
    args = np.ascontiguousarray(binv), np.ascontiguousarray(shift), basis.exponents
    for a in range(d):
        coef = np.ascontiguousarray(particles.coeffs[idx, :nm, a])
        if direct:
            out[a] = _poly_momentum_direct(pos, np.ascontiguousarray(emass), coef, *args, True, a, grid.dx)
        else:
            out[a] = _poly_momentum_expected(pos, np.ascontiguousarray(emass), coef, *args, a, grid.dx)
    return out


def grid_totals(grid: MacGrid) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis face mass and momentum sums."""
    m = np.array([a.sum() for a in grid.face_mass])
    mv = np.array([a.sum() for a in grid.face_momentum])
    return m, mv


def grid_angular_momentum(grid: MacGrid, momentum=None):
    """Angular momentum of the face momenta about the origin (scalar in 2D)."""
    momentum = grid.face_momentum if momentum is None else momentum
    d = grid.dim
    pos = [grid.face_positions(a) for a in range(d)]
    if d == 2:
        return float(np.sum(pos[1][..., 0] * momentum[1]) - np.sum(pos[0][..., 1] * momentum[0]))
    L = np.zeros(3)
    for a in range(3):
        for b in range(3):
            if a == b:
                continue
            c = 3 - a - b
            sign = 1.0 if (a, b, c) in ((0, 1, 2), (1, 2, 0), (2, 0, 1)) else -1.0
            # L_c += sign * x_a p_b
            L[c] += sign * np.sum(pos[b][..., a] * momentum[b])
    return L


def apic_angular_momentum(particles: Particles, dx: float):
    """Angular momentum an APIC scatter carries to the grid about the origin:
    sum m (x cross v) + m (dx^2/4) * (antisymmetric part of C)."""
    m = particles.effective_mass()
    x, v, C = particles.pos, particles.vel, particles.affine
    D = 0.25 * dx * dx
    if particles.dim == 2:
        return float(np.sum(m * (x[:, 0] * v[:, 1] - x[:, 1] * v[:, 0] + D * (C[:, 1, 0] - C[:, 0, 1]))))
    Lx = x[:, 1] * v[:, 2] - x[:, 2] * v[:, 1] + D * (C[:, 2, 1] - C[:, 1, 2])
    Ly = x[:, 2] * v[:, 0] - x[:, 0] * v[:, 2] + D * (C[:, 0, 2] - C[:, 2, 0])
    Lz = x[:, 0] * v[:, 1] - x[:, 1] * v[:, 0] + D * (C[:, 1, 0] - C[:, 0, 1])
    return (m[:, None] * np.stack([Lx, Ly, Lz], -1)).sum(axis=0)
