"""Slow reference implementations used to check the fast transfer kernels.

Everything here loops over every face of every axis for every particle and
shares no code with :mod:`hybridpic.transfers` beyond the mode ordering. Only
suitable for tiny instances (a handful of particles, ~100 faces).
"""

from __future__ import annotations

import itertools

import numpy as np

from .state import SOLID


def spline(u: float) -> float:
    a = abs(u)
    if a < 0.5:
        return 0.75 - a * a
    if a < 1.5:
        return 0.5 * (1.5 - a) ** 2
    return 0.0


def spline_slope(u: float) -> float:
    a = abs(u)
    if a < 0.5:
        return -2.0 * u
    if a < 1.5:
        return (a - 1.5) * np.sign(u)
    return 0.0


def face_location(index, axis: int, dx: float) -> np.ndarray:
    return np.array([(k + (0.0 if b == axis else 0.5)) * dx for b, k in enumerate(index)])


def faces(dims, axis: int):
    shape = [n + (1 if b == axis else 0) for b, n in enumerate(dims)]
    return list(itertools.product(*[range(n) for n in shape])), tuple(shape)


def kernel(xp, xf, dx: float) -> float:
    w = 1.0
    for b in range(len(xp)):
        w *= spline((xp[b] - xf[b]) / dx)
    return w


def kernel_grad(xp, xf, dx: float) -> np.ndarray:
    d = len(xp)
    u = [(xp[b] - xf[b]) / dx for b in range(d)]
    g = np.ones(d)
    for b in range(d):
        for e in range(d):
            g[b] *= spline_slope(u[e]) / dx if e == b else spline(u[e])
    return g


def mode(exps, z, w: float, dx: float, orth: bool) -> float:
    val = 1.0
    for b, e in enumerate(exps):
        if e == 1:
            val *= z[b]
        elif e == 2:
            if orth:
                val *= w**2 - w * z[b] * (dx**2 - 4 * z[b] ** 2) / dx**2 - dx**2 / 4
            else:
                val *= z[b] ** 2
    return val


def local_offset(particle_pos, prev_pos, C, dt, xf, reference: str) -> np.ndarray:
    """xi(x_f) minus the reference point, with xi(x) = x_prev + (I + dt C)^-1 (x - x_p)."""
    d = len(particle_pos)
    A = np.eye(d) + dt * C
    if abs(np.linalg.det(A)) < 1e-10:
        A = np.eye(d)
    xi = prev_pos + np.linalg.solve(A, xf - particle_pos)
    return xi - (prev_pos if reference == "previous" else particle_pos)


def p2g(particles, dims, dx, kind: str, exponents=None, orth=True, dt=0.0, phase=None,
        include_absorbed=False, reference="previous", affine_sign=1.0):
    """Return (mass, momentum) per axis, each shaped like that axis' face array."""
    d = len(dims)
    sel = [p for p in range(len(particles)) if phase is None or particles.phase[p] == phase]
    masses, moms = [], []
    for a in range(d):
        idx, shape = faces(dims, a)
        M = np.zeros(shape)
        P = np.zeros(shape)
        for f in idx:
            xf = face_location(f, a, dx)
            for p in sel:
                xp = particles.pos[p]
                w = kernel(xp, xf, dx)
                if w == 0.0:
                    continue
                m = particles.mass[p]
                if include_absorbed and particles.phase[p] == SOLID:
                    m = m + particles.absorbed[p]
                if kind == "pic":
                    u = particles.vel[p, a]
                elif kind == "apic":
                    u = particles.vel[p, a] + affine_sign * float(np.dot(particles.affine[p, a], xf - xp))
                else:
                    z = local_offset(xp, particles.prev_pos[p], particles.affine[p], dt, xf, reference)
                    u = sum(mode(exponents[r], z, w, dx, orth) * particles.coeffs[p, r, a]
                            for r in range(len(exponents)))
                M[f] += m * w
                P[f] += m * w * u
        masses.append(M)
        moms.append(P)
    return masses, moms


def well_posed_block(A: np.ndarray, pivot_tol: float = 1e-10) -> int:
    """Largest k such that every column j < k keeps more than ``pivot_tol`` of its
    squared norm after projecting out the columns before it."""
    for j in range(A.shape[1]):
        col = A[:, j]
        total = float(col @ col)
        if total <= 0.0:
            return j
        if j:
            B = A[:, :j] / np.linalg.norm(A[:, :j], axis=0)
            coef, *_ = np.linalg.lstsq(B, col, rcond=0.0)
            res = col - B @ coef
        else:
            res = col
        if float(res @ res) <= pivot_tol * total:
            return j
    return A.shape[1]


def g2p(face_velocity, dims, dx, positions, exponents=None, orth=True, pivot_tol=1e-10):
    """Return (v, grad, coeffs) gathered from per-axis face velocities.

    ``grad[p, a]`` is the gradient of the gathered component a with respect to
    the particle position; ``coeffs[p, r, a]`` is the weighted least-squares fit
    of mode r computed by a dense solver, restricted to the leading block of
    modes that is numerically independent (later modes get zero).
    """
    positions = np.asarray(positions, float)
    n, d = positions.shape
    nm = 0 if exponents is None else len(exponents)
    v = np.zeros((n, d))
    grad = np.zeros((n, d, d))
    coef = np.zeros((n, max(nm, 1), d))
    for a in range(d):
        idx, _ = faces(dims, a)
        for p in range(n):
            xp = positions[p]
            rows, rhs = [], []
            for f in idx:
                xf = face_location(f, a, dx)
                w = kernel(xp, xf, dx)
                val = face_velocity[a][f]
                v[p, a] += w * val
                grad[p, a] += kernel_grad(xp, xf, dx) * val
                if nm and w > 0.0:
                    z = xf - xp
                    rows.append([np.sqrt(w) * mode(exponents[r], z, w, dx, orth) for r in range(nm)])
                    rhs.append(np.sqrt(w) * val)
            if nm:
                A = np.array(rows)
                k = well_posed_block(A, pivot_tol)
                scale = np.linalg.norm(A[:, :k], axis=0)
                sol, *_ = np.linalg.lstsq(A[:, :k] / scale, np.array(rhs), rcond=0.0)
                coef[p, :k, a] = sol / scale
    return v, grad, coef


def weighted_mode_norms(dims, dx, position, axis, exponents, orth=True) -> np.ndarray:
    """sqrt of the Gram diagonal: the size of each mode under the particle's weights."""
    idx, _ = faces(dims, axis)
    out = np.zeros(len(exponents))
    for f in idx:
        xf = face_location(f, axis, dx)
        w = kernel(position, xf, dx)
        if w > 0.0:
            z = xf - position
            for r, e in enumerate(exponents):
                out[r] += w * mode(e, z, w, dx, orth) ** 2
    return np.sqrt(out)


def mean_energy(masses, velocities, heights, g: float) -> float:
    n = len(masses)
    if n == 0:
        return 0.0
    total = 0.0
    for m, v, h in zip(masses, velocities, heights):
        total += 0.5 * m * sum(c * c for c in v) + m * g * h
    return total / n
