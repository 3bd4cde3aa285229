"""Benchmark problem generators: RPY kernel and 2-D layer-potential BIEs.

Each generator returns an entry oracle: a callable object with attributes
``n`` and ``dtype`` that evaluates matrix entries ``A[i, j]`` for integer
index arrays (broadcasting like numpy fancy indexing), plus the geometry it
was built from.  Oracles are pure and cheap per entry, so blocks can be
sampled during compression and streamed during residual checks without ever
materializing the full matrix.

Point and parameter randomness comes from a small in-repo xorshift64*
generator so that a seed pins every generated problem byte-for-byte across
platforms and numpy versions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .special import hankel1_0, hankel1_1

_MASK64 = (1 << 64) - 1


class XorShift64Star:
    """xorshift64* PRNG; deterministic doubles in [0, 1) from the top 53 bits."""

    def __init__(self, seed: int):
        # splitmix64 scramble so small seeds do not start in weak states
        z = (seed + 0x9E3779B97F4A7C15) & _MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        self.state = (z ^ (z >> 31)) or 0x9E3779B97F4A7C15

    def next_u64(self) -> int:
        x = self.state
        x ^= (x >> 12)
        x = (x ^ (x << 25)) & _MASK64
        x ^= (x >> 27)
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & _MASK64

    def uniform(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            out[i] = (self.next_u64() >> 11) * 2.0**-53
        return out


# ---------------------------------------------------------------------------
# RPY kernel on a 1-d point set
# ---------------------------------------------------------------------------


@dataclass
class PointSet1D:
    """Sorted points on [-1, 1] with the regularization radius ``a``.

    Sorting makes index intervals coincide with spatial intervals, which is
    what gives the cluster tree its low-rank off-diagonal blocks.
    """

    points: np.ndarray
    a: float

    @classmethod
    def random(cls, n: int, seed: int = 0, a: float | None = None) -> "PointSet1D":
        pts = np.sort(2.0 * XorShift64Star(seed).uniform(n) - 1.0)
        if a is None:
            gaps = np.diff(pts)
            a = float(gaps[gaps > 0].min()) / 2.0 if n > 1 else 1e-3
        return cls(points=pts, a=a)


class RpyOracle:
    """Regularized hydrodynamic kernel between points on a line.

    In 1-d the tensor structure collapses to scalars:
    ``kT/(8 pi eta |r|) * (2 - 4 a^2 / (3 r^2))`` in the far field
    (``|r| >= 2a``) and ``kT/(6 pi eta a) * (1 - 3|r| / (16 a))`` inside.
    The two branches agree at ``|r| = 2a`` and the kernel is symmetric.
    """

    def __init__(self, ps: PointSet1D, k: float = 1.0, T: float = 1.0, eta: float = 1.0):
        if ps.a <= 0:
            raise ValueError("regularization radius must be positive")
        self.ps = ps
        self.k, self.T, self.eta = k, T, eta
        self.n = len(ps.points)
        self.dtype = np.dtype(np.float64)
        self._far = k * T / (8.0 * np.pi * eta)
        self._near = k * T / (6.0 * np.pi * eta * ps.a)

    def __call__(self, i, j):
        pts, a = self.ps.points, self.ps.a
        r = np.abs(pts[i] - pts[j])
        near = self._near * (1.0 - 3.0 * r / (16.0 * a))
        rsafe = np.where(r == 0.0, 1.0, r)
        far = (self._far / rsafe) * (2.0 - 4.0 * a * a / (3.0 * rsafe * rsafe))
        return np.where(r < 2.0 * a, near, far)


def rpy_oracle(ps: PointSet1D, k: float = 1.0, T: float = 1.0, eta: float = 1.0) -> RpyOracle:
    return RpyOracle(ps, k=k, T=T, eta=eta)


# ---------------------------------------------------------------------------
# Contour geometry for the boundary integral problems
# ---------------------------------------------------------------------------


@dataclass
class Contour:
    """Closed smooth plane curve sampled at equispaced parameter values.

    ``normals`` point into the exterior domain where the PDEs live (away
    from the region the curve encloses); ``weights`` are trapezoidal
    arclength weights ``|gamma'(t_j)| * 2 pi / n``.
    """

    t: np.ndarray
    xy: np.ndarray        # (n, 2) node positions
    normals: np.ndarray   # (n, 2) unit, exterior-pointing
    curvature: np.ndarray
    weights: np.ndarray

    @property
    def n(self) -> int:
        return len(self.t)


def contour_default(n: int, amplitude: float = 0.3, lobes: int = 5) -> Contour:
    """Star-shaped test contour ``r(t) = 1 + amplitude * cos(lobes * t)``.

    ``amplitude = 0`` degenerates to the unit circle.  Normals, curvature,
    and weights come from the analytic derivatives of the polar form.
    """
    if n < 16:
        raise ValueError("need at least 16 contour nodes")
    t = 2.0 * np.pi * np.arange(n) / n
    r = 1.0 + amplitude * np.cos(lobes * t)
    dr = -amplitude * lobes * np.sin(lobes * t)
    ddr = -amplitude * lobes * lobes * np.cos(lobes * t)
    ct, st = np.cos(t), np.sin(t)
    x, y = r * ct, r * st
    dx, dy = dr * ct - r * st, dr * st + r * ct
    speed = np.hypot(dx, dy)
    normals = np.stack([dy / speed, -dx / speed], axis=1)
    curvature = (r * r + 2.0 * dr * dr - r * ddr) / speed**3
    weights = speed * (2.0 * np.pi / n)
    return Contour(
        t=t, xy=np.stack([x, y], axis=1), normals=normals,
        curvature=curvature, weights=weights,
    )


class LaplaceDoubleLayerOracle:
    """Exterior Dirichlet Laplace BIE, double-layer with log completion.

    ``A[i, j] = delta_ij / 2 + (d(x_i, y_j) - log|x_i - z| / (2 pi)) w_j``
    where ``d(x, y) = n(y).(x - y) / (2 pi |x - y|^2)`` and ``z`` is a fixed
    interior point.  The diagonal uses the smooth-curve kernel limit
    ``d(x, x) = -curvature(x) / (4 pi)``.
    """

    def __init__(self, contour: Contour, z=(0.0, 0.0)):
        self.contour = contour
        self.z = np.asarray(z, dtype=np.float64)
        self.n = contour.n
        self.dtype = np.dtype(np.float64)
        dz = contour.xy - self.z
        rz = np.hypot(dz[:, 0], dz[:, 1])
        if np.any(rz == 0.0):
            raise ValueError("completion point z must not lie on the contour")
        self._logterm = -np.log(rz) / (2.0 * np.pi)
        self._diag = -contour.curvature / (4.0 * np.pi)

    def kernel(self, x, targets_outside=False):
        """Double-layer kernel d(x, y_j) for arbitrary target points ``x``.

        ``x``: (..., 2) targets; returns shape (..., n).  Used for exterior
        field evaluation; on-surface entries go through ``__call__``.
        """
        x = np.asarray(x, dtype=np.float64)
        d = x[..., None, :] - self.contour.xy  # (..., n, 2)
        r2 = np.sum(d * d, axis=-1)
        num = np.sum(self.contour.normals * d, axis=-1)
        return num / (2.0 * np.pi * r2)

    def potential(self, x, sigma):
        """Evaluate the represented exterior field at points ``x``."""
        dens = sigma * self.contour.weights
        x = np.asarray(x, dtype=np.float64)
        dz = x - self.z
        logx = -np.log(np.hypot(dz[..., 0], dz[..., 1])) / (2.0 * np.pi)
        return self.kernel(x) @ dens + logx * dens.sum()

    def __call__(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        same = i == j
        xy, nrm = self.contour.xy, self.contour.normals
        d = xy[i] - xy[j]
        r2 = np.sum(d * d, axis=-1)
        if np.any((r2 == 0.0) & ~same):
            raise ValueError("coincident contour nodes")
        num = np.sum(nrm[j] * d, axis=-1)
        r2safe = np.where(same, 1.0, r2)
        dker = np.where(same, self._diag[np.broadcast_to(i, r2.shape)],
                        num / (2.0 * np.pi * r2safe))
        a = (dker + self._logterm[i]) * self.contour.weights[j]
        return a + 0.5 * same


def laplace_dl_oracle(contour: Contour, z=(0.0, 0.0)) -> LaplaceDoubleLayerOracle:
    return LaplaceDoubleLayerOracle(contour, z)


class HelmholtzCombinedFieldOracle:
    """Exterior Helmholtz BIE, combined-field double + i eta single layer.

    Off-diagonal entries are ``(d_k(x_i, y_j) + i eta s_k(x_i, y_j)) w_j``
    with the radiating fundamental solution ``(i/4) H0^(1)(kappa |x|)``;
    the diagonal keeps only the ``1/2`` jump term (punctured trapezoid:
    the logarithmically singular self-term is omitted, which caps the
    quadrature order but leaves the second-kind structure intact).
    """

    def __init__(self, contour: Contour, kappa: float, eta: float | None = None):
        if kappa <= 0:
            raise ValueError("wavenumber must be positive")
        self.contour = contour
        self.kappa = float(kappa)
        self.eta = self.kappa if eta is None else float(eta)
        self.n = contour.n
        self.dtype = np.dtype(np.complex128)

    def _kernels(self, d, nrm_j):
        """(single, double) layer kernels given offsets d = x - y."""
        r = np.sqrt(np.sum(d * d, axis=-1))
        kr = self.kappa * r
        s = 0.25j * hankel1_0(kr)
        cosfac = np.sum(nrm_j * d, axis=-1) / r
        dl = 0.25j * self.kappa * hankel1_1(kr) * cosfac
        return s, dl

    def potential(self, x, sigma):
        """Evaluate the represented exterior field at off-surface points."""
        x = np.asarray(x, dtype=np.float64)
        d = x[..., None, :] - self.contour.xy
        s, dl = self._kernels(d, self.contour.normals)
        return (dl + 1j * self.eta * s) @ (sigma * self.contour.weights)

    def __call__(self, i, j):
        i = np.asarray(i)
        j = np.asarray(j)
        same = i == j
        xy, nrm = self.contour.xy, self.contour.normals
        d = xy[i] - xy[j]
        if np.any((np.sum(d * d, axis=-1) == 0.0) & ~same):
            raise ValueError("coincident contour nodes")
        d = np.where(np.broadcast_to(same[..., None], d.shape), 1.0, d)
        s, dl = self._kernels(d, nrm[j])
        a = (dl + 1j * self.eta * s) * self.contour.weights[j]
        return np.where(same, 0.5 + 0j, a)


def helmholtz_cf_oracle(
    contour: Contour, kappa: float, eta: float | None = None
) -> HelmholtzCombinedFieldOracle:
    return HelmholtzCombinedFieldOracle(contour, kappa, eta)


def point_source_field(z0, kappa=None):
    """Field of a point source at ``z0``: harmonic (Laplace) or radiating.

    Returns a callable on (..., 2) points.  Used as manufactured boundary
    data whose exact exterior values the BIE solutions must reproduce.
    """
    z0 = np.asarray(z0, dtype=np.float64)
    if kappa is None:

        def fld(x):
            d = np.asarray(x, dtype=np.float64) - z0
            return -np.log(np.hypot(d[..., 0], d[..., 1])) / (2.0 * np.pi)

    else:

        def fld(x):
            d = np.asarray(x, dtype=np.float64) - z0
            return 0.25j * hankel1_0(kappa * np.hypot(d[..., 0], d[..., 1]))

    return fld
