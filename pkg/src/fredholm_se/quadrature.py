"""Integration domains, seeded Monte Carlo node sets and the MC integral."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputShapeError, NumericError
from .rng import Rng, derive_seed


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower_k, upper_k]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not lo:
            raise ConfigurationError("lower and upper bounds must have the same non-zero length", key="domain")
        for a, b in zip(lo, hi):
            if not (np.isfinite(a) and np.isfinite(b) and a < b):
                raise ConfigurationError(f"need finite lower < upper, got [{a}, {b}]", key="domain")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Domain":
        return cls((lo,), (hi,))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64).reshape(-1, self.dim)
        return np.all((p >= self.lower) & (p <= self.upper), axis=1)

    def sample(self, rng: Rng, n: int) -> np.ndarray:
        u = rng.uniform(n * self.dim).reshape(n, self.dim)
        lo = np.asarray(self.lower)
        return lo + (np.asarray(self.upper) - lo) * u


@dataclass(frozen=True, eq=False)
class QuadratureGrid:
    """Outer nodes ``t_l`` (J1 x dim_t), inner nodes ``s_j`` (J2 x dim_s).

    The outer measure is the uniform probability measure on ``t_domain``,
    so every outer node carries weight ``1/J1``.  Inner sums use
    ``inner_weights``, which default to the Monte Carlo ``inner_volume/J2``;
    deterministic rules (Gauss-Legendre) supply their own.
    """

    t_domain: Domain
    s_domain: Domain
    outer_points: np.ndarray
    inner_points: np.ndarray
    inner_weights: np.ndarray | None = None

    def __post_init__(self):
        for name, dom in (("outer_points", self.t_domain), ("inner_points", self.s_domain)):
            pts = np.array(getattr(self, name), dtype=np.float64).reshape(-1, dom.dim)
            if pts.shape[0] < 1:
                raise ConfigurationError("need at least one node", key=name)
            if not dom.contains(pts).all():
                raise ConfigurationError("node outside its domain", key=name)
            pts.flags.writeable = False
            object.__setattr__(self, name, pts)
        if self.inner_weights is None:
            wts = np.full(self.inner_points.shape[0], self.s_domain.volume / self.inner_points.shape[0])
        else:
            wts = np.array(self.inner_weights, dtype=np.float64).reshape(-1)
            if wts.shape[0] != self.inner_points.shape[0]:
                raise ConfigurationError("one weight per inner node is required", key="inner_weights")
        wts.flags.writeable = False
        object.__setattr__(self, "inner_weights", wts)

    @property
    def j1(self) -> int:
        return self.outer_points.shape[0]

    @property
    def j2(self) -> int:
        return self.inner_points.shape[0]

    @property
    def inner_volume(self) -> float:
        return self.s_domain.volume


    def to_csv(self) -> str:
        """Debug dump: one row per node, columns ``set,k,coord_1..``."""
        lines = ["set,index," + ",".join(f"coord_{k + 1}" for k in range(max(self.t_domain.dim, self.s_domain.dim)))]
        for tag, pts in (("t", self.outer_points), ("s", self.inner_points)):
            for k, row in enumerate(pts):
                lines.append(f"{tag},{k}," + ",".join(repr(float(v)) for v in row))
        return "\n".join(lines) + "\n"


def sample_grid(t_domain: Domain, s_domain: Domain, j1: int, j2: int, seed: int) -> QuadratureGrid:
    """I.i.d. uniform outer and inner nodes from two derived sub-streams of ``seed``."""
    if j1 < 1 or j2 < 1:
        raise ConfigurationError(f"j1 and j2 must be >= 1, got {j1}, {j2}", key="j1/j2")
    outer = t_domain.sample(Rng(derive_seed(seed, "grid/outer")), j1)
    inner = s_domain.sample(Rng(derive_seed(seed, "grid/inner")), j2)
    return QuadratureGrid(t_domain, s_domain, outer, inner)


def midpoint_grid(t_domain: Domain, s_domain: Domain, j1: int, j2: int) -> QuadratureGrid:
    """Deterministic equal-weight midpoint nodes (one-dimensional domains only).

    Handy as a high-accuracy stand-in for the random grid in validation code:
    the ``volume/J`` weighting of the MC sum then becomes the midpoint rule.
    """
    def mid(dom, n):
        if dom.dim != 1:
            raise ConfigurationError("midpoint grids are one-dimensional", key="domain")
        lo, hi = dom.lower[0], dom.upper[0]
        return (lo + (np.arange(n) + 0.5) * (hi - lo) / n)[:, None]

    return QuadratureGrid(t_domain, s_domain, mid(t_domain, j1), mid(s_domain, j2))


def gauss_legendre_grid(t_domain: Domain, s_domain: Domain, j1: int, j2: int) -> QuadratureGrid:
    """Midpoint outer nodes and a ``j2``-point Gauss-Legendre inner rule (1-D).

    Validation-only: the inner rule integrates polynomials of degree
    ``2 j2 - 1`` exactly, so discretized analytic problems keep their
    closed-form solutions.
    """
    if t_domain.dim != 1 or s_domain.dim != 1:
        raise ConfigurationError("Gauss-Legendre grids are one-dimensional", key="domain")
    x, w = np.polynomial.legendre.leggauss(j2)
    lo, hi = s_domain.lower[0], s_domain.upper[0]
    inner = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    t_lo, t_hi = t_domain.lower[0], t_domain.upper[0]
    outer = t_lo + (np.arange(j1) + 0.5) * (t_hi - t_lo) / j1
    return QuadratureGrid(t_domain, s_domain, outer[:, None], inner[:, None], 0.5 * (hi - lo) * w)


def mc_integral(f, points, volume: float) -> float:
    """``volume * mean(f(points))``; ``f`` is applied to the whole node array."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] == 0:
        raise InputShapeError("mc_integral needs at least one point")
    vals = np.asarray(f(pts), dtype=np.float64).reshape(pts.shape[0], -1)
    bad = np.flatnonzero(~np.all(np.isfinite(vals), axis=1))
    if bad.size:
        raise NumericError(f"integrand is not finite at point {pts[bad[0]].tolist()}")
    out = volume * vals.mean(axis=0)
    return float(out[0]) if out.size == 1 else out
