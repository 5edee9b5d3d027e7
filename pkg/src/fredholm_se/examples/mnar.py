"""Outcome missing not at random, identified through a shadow covariate.

Model: ``X ~ N(0.5, 0.5^2)``, ``Y | X ~ N(beta_1 + beta_2 X, 1)``,
``A | Y ~ Bern(expit(1 + Y))``; ``Y`` is seen only when ``A = 1``.  The
estimator posits a working missingness model ``eta2(y) = P(A = 1 | y)``
(deliberately wrong by default) and corrects for it with the function
``b(y)`` solving a second-kind equation.

Form of the equation
--------------------
``b`` takes the outcome value only, and the equation is imposed on the
sample average over observations::

    mean_i [ int K_i(s, t) b(s) ds - C_i(t) + p_i(t) b(t) ] = 0

with ``p_i(t) = p(t | X_i; beta)``,
``K_i(s, t) = p_i(s) p_i(t) eta2(s) / D_i``,
``C_i(t) = dp_i(t) + p_i(t) E_i / D_i``,
``D_i = int p_i (1 - eta2)`` and ``E_i = int dp_i eta2``
(``dp`` is the beta-gradient of the density).  This is the form under which
the estimating function is orthogonal to the missingness nuisance; letting b
also depend on ``x`` and imposing the equation per observation makes the
estimating function vanish identically.  The ``+ p b`` term is therefore
written as a b-term weight of ``-p`` under the unified residual.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from ..errors import InputShapeError, NumericError
from ..fredholm import FredholmProblem, SecondKind, SeparableKernel
from ..quadrature import Domain, QuadratureGrid
from ..rng import Rng

BETA_STAR = (0.25, -0.5)
Y_DOMAIN = Domain.interval(-5.0, 5.0)
_SQRT_2PI = np.sqrt(2.0 * np.pi)


def working_eta2(y):
    """Working P(A = 1 | y): expit(1 - y), the mirror image of the truth."""
    return expit(1.0 - np.asarray(y, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class MnarData:
    """Columns of a simulated sample; ``y`` is NaN where ``a == 0``.

    ``y_full`` is the simulation ground truth and is absent from
    :meth:`estimator_view`.
    """

    x: np.ndarray
    a: np.ndarray
    y: np.ndarray
    y_full: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.x)
        for name in ("a", "y") + (("y_full",) if self.y_full is not None else ()):
            if len(getattr(self, name)) != n:
                raise InputShapeError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        if not np.all((self.a == 0) | (self.a == 1)):
            raise InputShapeError("a must be 0 or 1")
        if self.y_full is not None and not np.array_equal(self.y[self.a == 1], self.y_full[self.a == 1]):
            raise InputShapeError("observed y must equal y_full where a = 1")

    def __len__(self):
        return len(self.x)

    def take(self, idx) -> "MnarData":
        return MnarData(self.x[idx], self.a[idx], self.y[idx], None if self.y_full is None else self.y_full[idx])

    def estimator_view(self) -> "MnarData":
        return MnarData(self.x, self.a, self.y)

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        truth = self.y_full is not None
        out.writerow(["x", "a", "y"] + (["_truth_y_full"] if truth else []))
        for i in range(len(self)):
            row = [repr(float(self.x[i])), int(self.a[i]), "NA" if self.a[i] == 0 else repr(float(self.y[i]))]
            if truth:
                row.append(repr(float(self.y_full[i])))
            out.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_rows(cls, rows: list[dict], *, keep_truth: bool = False) -> "MnarData":
        x = np.array([float(r["x"]) for r in rows])
        a = np.array([int(r["a"]) for r in rows], dtype=np.int64)
        y = np.array([np.nan if r["y"] == "NA" else float(r["y"]) for r in rows])
        y_full = None
        if keep_truth and rows and "_truth_y_full" in rows[0]:
            y_full = np.array([float(r["_truth_y_full"]) for r in rows])
        return cls(x, a, y, y_full)


def gen_mnar(n: int, seed: int, beta_star=BETA_STAR, *, noise_sd: float = 1.0) -> MnarData:
    """Draw ``n`` observations; ``noise_sd`` other than 1 is for tests only."""
    if n < 1:
        raise InputShapeError(f"n must be >= 1, got {n}")
    rng = Rng(seed)
    x = rng.normal(n, 0.5, 0.5)
    y_full = beta_star[0] + beta_star[1] * x + noise_sd * rng.normal(n)
    a = rng.bernoulli(expit(1.0 + y_full))
    y = np.where(a == 1, y_full, np.nan)
    return MnarData(x, a, y, y_full)


# ---------------------------------------------------------------- densities


def _density(y, mu):
    """Standard normal density of ``y - mu`` (broadcast), computed in place."""
    z = np.subtract(y, mu)
    np.multiply(z, z, out=z)
    z *= -0.5
    np.exp(z, out=z)
    z *= 1.0 / _SQRT_2PI
    return z


def _mean(x, beta):
    return beta[0] + beta[1] * x


@dataclass(frozen=True, eq=False)
class MnarIntegrals:
    """Per-observation integrals over the inner grid at one beta.

    ``p_t`` holds the densities at the outer nodes when requested, so the
    forcing, weight and kernel factors of one discretization share them.
    """

    mu: np.ndarray  # (N,)
    s_nodes: np.ndarray  # (J2, 1)
    p_s: np.ndarray  # (N, J2) density at inner nodes
    eta2_s: np.ndarray  # (J2,)
    weights: np.ndarray  # (J2,) inner quadrature weights
    denom: np.ndarray  # (N,) D_i
    e_grad: np.ndarray  # (N, 2) E_i
    t_nodes: np.ndarray | None = None
    p_t: np.ndarray | None = None  # (N, J1)

    def density_at(self, t, data):
        if t is self.t_nodes:
            return self.p_t
        if t is self.s_nodes:
            return self.p_s
        return _density(np.asarray(t, dtype=np.float64)[:, 0][None, :], self.mu[:, None])


def mnar_integrals(
    data: MnarData, beta, grid: QuadratureGrid, eta2: Callable = working_eta2, *, outer: bool = False
) -> MnarIntegrals:
    s = grid.inner_points[:, 0]
    mu = _mean(data.x, beta)
    p_s = _density(s[None, :], mu[:, None])
    e2 = eta2(s)
    wts = grid.inner_weights
    denom = p_s @ (wts * (1.0 - e2))
    bad = np.flatnonzero(denom <= 1e-12)
    if bad.size:
        raise NumericError(
            f"working model leaves no missing-outcome mass for x = {data.x[bad[0]]:.6g} "
            f"(int p (1 - eta2) = {denom[bad[0]]:.3g})"
        )
    # int (s - mu) p eta2 = int s p eta2 - mu int p eta2
    we = wts * e2
    e1 = p_s @ (we * s) - mu * (p_s @ we)
    e_grad = np.column_stack([e1, e1 * data.x])
    t_nodes = p_t = None
    if outer:
        t_nodes = grid.outer_points
        p_t = _density(t_nodes[:, 0][None, :], mu[:, None])
    return MnarIntegrals(mu, grid.inner_points, p_s, e2, wts, denom, e_grad, t_nodes, p_t)


def _score_pieces(t, data, ig):
    """Density ``(N, J)`` and its beta-gradient ``(N, J, 2)`` at nodes ``t``."""
    p = ig.density_at(t, data)
    dp1 = p * (np.asarray(t, dtype=np.float64)[:, 0][None, :] - ig.mu[:, None])
    return p, np.stack([dp1, dp1 * data.x[:, None]], axis=-1)


def mnar_problem(eta2: Callable = working_eta2) -> FredholmProblem:
    def context(data, beta, grid):
        return mnar_integrals(data, beta, grid, eta2, outer=True)

    def forcing(t, data, beta, ig):
        p, dp = _score_pieces(t, data, ig)
        return dp + (ig.e_grad / ig.denom[:, None])[:, None, :] * p[..., None]

    def weight(t, data, beta, ig):
        return -ig.density_at(t, data)

    def t_factor(t, data, beta, ig):
        return (ig.density_at(t, data) / ig.denom[:, None])[..., None]

    def s_factor(s, data, beta, ig):
        e2 = ig.eta2_s if s is ig.s_nodes else eta2(s[:, 0])
        return (ig.density_at(s, data) * e2)[..., None]

    return FredholmProblem(
        "mnar", Y_DOMAIN, Y_DOMAIN, 2, SecondKind(),
        forcing=forcing, kernel=SeparableKernel(t_factor, s_factor), weight=weight,
        pooled=True, beta_dependent=True, context=context,
    )


class MnarEquation:
    """Efficient-score-type estimating function.

    ``psi_i = A_i (score_i(Y_i) - b(Y_i))
    + (1 - A_i) (int p_i b eta2 - E_i) / D_i``,
    where ``score_i(y) = (y - mu_i) (1, X_i)``.
    """

    q = 2

    def __init__(self, eta2: Callable = working_eta2):
        self.eta2 = eta2

    def b_inputs(self, data: MnarData, grid):
        obs = data.a == 1
        return {"y": data.y[obs][:, None], "s": grid.inner_points}

    def __call__(self, data: MnarData, beta, bvals, grid):
        if grid is None:
            raise InputShapeError("the MNAR estimating function integrates over the inner grid")
        obs = data.a == 1
        mis = ~obs
        out = np.empty((len(data), 2))
        r = data.y[obs] - _mean(data.x[obs], beta)
        out[obs, 0] = r - bvals["y"][:, 0]
        out[obs, 1] = r * data.x[obs] - bvals["y"][:, 1]
        if mis.any():
            # only the rows with a missing outcome need integrals
            ig = mnar_integrals(data.take(mis), beta, grid, self.eta2)
            pb = ig.p_s @ ((ig.weights * ig.eta2_s)[:, None] * bvals["s"])
            out[mis] = (pb - ig.e_grad) / ig.denom[:, None]
        return out


# ---------------------------------------------------------------- comparators


def _ols(x, y) -> np.ndarray:
    design = np.column_stack([np.ones_like(x), x])
    if len(x) < 2 or np.ptp(x) == 0.0:
        raise NumericError("singular design: x is constant")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def mnar_oracle(data: MnarData) -> np.ndarray:
    """Least squares of the full (simulation-only) outcome on (1, x)."""
    if data.y_full is None:
        raise InputShapeError("the oracle needs the simulation ground truth y_full")
    return _ols(data.x, data.y_full)


def mnar_biased(data: MnarData) -> np.ndarray:
    """Complete-case least squares on the rows with an observed outcome."""
    obs = data.a == 1
    return _ols(data.x[obs], data.y[obs])
