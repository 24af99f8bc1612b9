"""Interpolation weights, PolyPIC scalar modes and the configuration map.

The scalar helpers prefixed with an underscore are numba-compiled and shared by
the transfer kernels; the public functions are numpy-level and safe to call with
arbitrary array shapes.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from numba import njit

DET_EPSILON = 1e-10


# ---------------------------------------------------------------------------
# Quadratic B-spline
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bspline(u):
    a = abs(u)
    if a <= 0.5:
        return 0.75 - a * a
    if a <= 1.5:
        t = 1.5 - a
        return 0.5 * t * t
    return 0.0


@njit(cache=True)
def _bspline_deriv(u):
    a = abs(u)
    if a <= 0.5:
        return -2.0 * u
    if a <= 1.5:
        return -(1.5 - a) if u > 0.0 else (1.5 - a)
    return 0.0


def bspline(u):
    u = np.abs(np.asarray(u, float))
    return np.where(u <= 0.5, 0.75 - u * u, np.where(u <= 1.5, 0.5 * (1.5 - u) ** 2, 0.0))


def bspline_deriv(u):
    u = np.asarray(u, float)
    a = np.abs(u)
    return np.where(a <= 0.5, -2.0 * u, np.where(a <= 1.5, -np.sign(u) * (1.5 - a), 0.0))


def weight(offset, dx: float):
    """Tensor-product quadratic B-spline weight of ``offset = x_p - x_face``."""
    u = np.asarray(offset, float) / dx
    return np.prod(bspline(u), axis=-1)


def weight_gradient(offset, dx: float):
    """Gradient of :func:`weight` with respect to the offset (i.e. the particle position)."""
    u = np.asarray(offset, float) / dx
    n = bspline(u)
    dn = bspline_deriv(u) / dx
    d = u.shape[-1]
    out = np.empty_like(u)
    for b in range(d):
        others = np.prod(np.delete(n, b, axis=-1), axis=-1) if d > 1 else 1.0
        out[..., b] = dn[..., b] * others
    return out


# ---------------------------------------------------------------------------
# Scalar modes
# ---------------------------------------------------------------------------


def mode_exponents(d: int) -> np.ndarray:
    """All exponent tuples in {0,1,2}^d in basis order.

    The 2^d multilinear monomials come first, then the remaining tuples; within
    each group tuples are graded (total degree ascending) and, at equal degree,
    lexicographically descending, so x precedes y precedes z.
    """
    tuples = list(itertools.product(range(3), repeat=d))

    def key(t):
        return (max(t) > 1, sum(t), tuple(-e for e in t))

    return np.array(sorted(tuples, key=key), dtype=np.int64)


@dataclass(frozen=True)
class ModeBasis:
    d: int
    n_modes: int
    orthogonalize: bool = True
    exponents: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError("ModeBasis supports 1 <= d <= 3")
        full = 3**self.d
        if not 1 <= self.n_modes <= full:
            raise ValueError(f"n_modes must lie in [1, {full}] for d={self.d}")
        object.__setattr__(self, "exponents", mode_exponents(self.d)[: self.n_modes].copy())

    @property
    def n_multilinear(self) -> int:
        return 2**self.d

    def mode_index(self, exps) -> int:
        hits = np.flatnonzero(np.all(self.exponents == np.asarray(exps), axis=1))
        if not hits.size:
            raise KeyError(f"mode {tuple(exps)} not in basis")
        return int(hits[0])

    def is_quadratic(self, r: int) -> bool:
        return bool(np.any(self.exponents[r] == 2))

    def names(self) -> list[str]:
        axes = "xyz"
        out = []
        for e in self.exponents:
            s = "".join(axes[b] + ("^2" if k == 2 else "") for b, k in enumerate(e) if k)
            out.append(s or "1")
        return out


def orthogonalized_quadratic(z, w, dx: float):
    """Quadratic substitute g(z) = w^2 - w z (dx^2 - 4 z^2) / dx^2 - dx^2 / 4."""
    z = np.asarray(z, float)
    return w * w - w * z * (dx * dx - 4.0 * z * z) / (dx * dx) - 0.25 * dx * dx


def scalar_mode(basis: ModeBasis, r: int, z, w: float = 0.0, dx: float = 1.0) -> float:
    """Evaluate mode r at local offset ``z`` (meters). ``w`` is the particle-face weight
    used by the orthogonalized quadratic factor."""
    if not 0 <= r < basis.n_modes:
        raise IndexError(f"mode {r} outside basis of {basis.n_modes}")
    z = np.asarray(z, float)
    out = 1.0
    for b, e in enumerate(basis.exponents[r]):
        if e == 1:
            out *= z[b]
        elif e == 2:
            out *= orthogonalized_quadratic(z[b], w, dx) if basis.orthogonalize else z[b] * z[b]
    return float(out)


@njit(cache=True)
def _mode_value(exps, r, z, w, dx, orth):
    out = 1.0
    for b in range(exps.shape[1]):
        e = exps[r, b]
        if e == 1:
            out *= z[b]
        elif e == 2:
            zb = z[b]
            if orth:
                out *= w * w - w * zb * (dx * dx - 4.0 * zb * zb) / (dx * dx) - 0.25 * dx * dx
            else:
                out *= zb * zb
    return out


# ---------------------------------------------------------------------------
# Configuration map
# ---------------------------------------------------------------------------


@dataclass
class MapStats:
    """Counts particles whose affine map fell back to the translation map."""

    fallbacks: int = 0


def map_matrices(affine: np.ndarray, dt: float, stats: MapStats | None = None) -> np.ndarray:
    """Batched ``(I + dt C_p)^-1``; singular systems fall back to the identity."""
    n, d, _ = affine.shape
    eye = np.eye(d)
    if n == 0:
        return np.zeros((0, d, d))
    a = eye + dt * affine
    det = np.linalg.det(a)
    bad = ~(np.abs(det) >= DET_EPSILON)
    if np.any(bad):
        a[bad] = eye
        if stats is not None:
            stats.fallbacks += int(bad.sum())
    return np.linalg.inv(a)


def configuration_map(x, particle, dt: float, stats: MapStats | None = None) -> np.ndarray:
    """Map a point of the new configuration back to the previous one:
    ``x_prev + (I + dt C)^-1 (x - x_now)``."""
    x = np.asarray(x, float)
    c = np.asarray(particle.affine_derivs, float)
    a = np.eye(len(x)) + dt * c
    if not abs(np.linalg.det(a)) >= DET_EPSILON:
        if stats is not None:
            stats.fallbacks += 1
        return particle.prev_position + (x - particle.position)
    return particle.prev_position + np.linalg.solve(a, x - particle.position)
