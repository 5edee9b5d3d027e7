"""Sensitivity analysis for a treatment effect under unmeasured confounding.

Model: ``X ~ U(0, 1)^p``, ``U = X_1 - X_2^2 + N(0, 0.1)``,
``A ~ Bern(expit(3 L + 2 U))``, ``Y ~ Bern(expit(4 L + beta A + 2 U))`` with
``L = sum_j (-1)^(j+1) X_j``.  ``U`` is never observed; the analyst posits a
working density ``eta(u, x)`` for it (uniform on [-0.5, 0.5] by default).

Because ``Y`` and ``A`` are binary, every integral over ``(y, a)`` is a sum
over the four cells ``k = y + 2 a``.  With ``P_k(u) = p(y, a | x, u)`` and
the working posterior weights ``P_k(u) eta(u) / g_k``, the kernel is the
rank-4 product ``K(u', u) = sum_k P_k(u') eta(u') P_k(u) / g_k`` and the
forcing is ``C(u) = sum_k m_k P_k(u)``, where ``m_k`` is the working
posterior mean of the score in cell ``k``.  The equation is first-kind and is
regularized: ``int K b - C + lam b = 0``.

For each ``x`` the equation reduces to a 4x4 linear system, which gives the
exact solution of the discretized problem (``sens_exact_solution``).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit

from ..errors import InputShapeError, NumericError
from ..fredholm import ClosedForm, FredholmProblem, SeparableKernel, Tikhonov
from ..quadrature import Domain, QuadratureGrid
from ..rng import Rng

BETA_STAR = 2.0
N_COVARIATES = 10
LAMBDA = 1e-3
U_DOMAIN = Domain.interval(-0.5, 0.5)
X_BOUNDS = [(0.0, 1.0)] * N_COVARIATES
# cell order k = y + 2 a
CELLS = ((0, 0), (1, 0), (0, 1), (1, 1))


def working_eta(u, x=None):
    """Working density of U given X: uniform on [-0.5, 0.5]."""
    u = np.asarray(u, dtype=np.float64)
    return ((u >= -0.5) & (u <= 0.5)).astype(np.float64)


@dataclass(frozen=True, eq=False)
class SensData:
    x: np.ndarray  # (N, p)
    a: np.ndarray
    y: np.ndarray
    u_true: np.ndarray | None = None

    def __post_init__(self):
        n = self.x.shape[0]
        if self.x.ndim != 2 or len(self.a) != n or len(self.y) != n:
            raise InputShapeError("x must be (N, p) with matching a and y columns")
        for name in ("a", "y"):
            v = getattr(self, name)
            if not np.all((v == 0) | (v == 1)):
                raise InputShapeError(f"{name} must be 0 or 1")

    def __len__(self):
        return self.x.shape[0]

    @property
    def cell(self) -> np.ndarray:
        return (self.y + 2 * self.a).astype(np.int64)

    def take(self, idx) -> "SensData":
        return SensData(self.x[idx], self.a[idx], self.y[idx], None if self.u_true is None else self.u_true[idx])

    def estimator_view(self) -> "SensData":
        return SensData(self.x, self.a, self.y)

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        p = self.x.shape[1]
        truth = self.u_true is not None
        out.writerow([f"x_{j + 1}" for j in range(p)] + ["a", "y"] + (["_truth_u"] if truth else []))
        for i in range(len(self)):
            row = [repr(float(v)) for v in self.x[i]] + [int(self.a[i]), int(self.y[i])]
            if truth:
                row.append(repr(float(self.u_true[i])))
            out.writerow(row)
        return buf.getvalue()

    @classmethod
    def from_rows(cls, rows: list[dict], *, keep_truth: bool = False) -> "SensData":
        xcols = sorted((k for k in rows[0] if k.startswith("x_")), key=lambda k: int(k[2:]))
        x = np.array([[float(r[k]) for k in xcols] for r in rows])
        a = np.array([int(r["a"]) for r in rows], dtype=np.int64)
        y = np.array([int(r["y"]) for r in rows], dtype=np.int64)
        u = None
        if keep_truth and "_truth_u" in rows[0]:
            u = np.array([float(r["_truth_u"]) for r in rows])
        return cls(x, a, y, u)


def alternating_sum(x) -> np.ndarray:
    """``sum_j (-1)^(j+1) x_j`` row-wise."""
    x = np.asarray(x, dtype=np.float64)
    signs = np.where(np.arange(x.shape[1]) % 2 == 0, 1.0, -1.0)
    return x @ signs


def gen_sens(n: int, seed: int, p: int = N_COVARIATES, beta_star: float = BETA_STAR) -> SensData:
    if n < 1:
        raise InputShapeError(f"n must be >= 1, got {n}")
    rng = Rng(seed)
    x = rng.uniform(n * p).reshape(n, p)
    u = x[:, 0] - x[:, 1] ** 2 + np.sqrt(0.1) * rng.normal(n)
    lin = alternating_sum(x)
    a = rng.bernoulli(expit(3.0 * lin + 2.0 * u))
    y = rng.bernoulli(expit(4.0 * lin + beta_star * a + 2.0 * u))
    return SensData(x, a, y, u)


# ---------------------------------------------------------------- model pieces


def cell_probs(u, lin, beta, *, pointwise: bool = False) -> np.ndarray:
    """``p(y, a | x, u; beta)`` for the four cells.

    By default ``u`` is ``(J,)`` (shared nodes), ``lin`` the ``(N,)``
    alternating sums, and the result ``(N, J, 4)``.  With ``pointwise`` the
    two arrays are paired elementwise and the result is ``(M, 4)``.
    """
    u = np.asarray(u, dtype=np.float64)
    lin = np.asarray(lin, dtype=np.float64)
    if not pointwise:
        u, lin = u[None, :], lin[:, None]
    base = 2.0 * u
    pa = expit(3.0 * lin + base)
    py0 = expit(4.0 * lin + base)
    py1 = expit(4.0 * lin + float(beta) + base)
    out = np.empty(pa.shape + (4,))
    out[..., 0] = (1.0 - py0) * (1.0 - pa)
    out[..., 1] = py0 * (1.0 - pa)
    out[..., 2] = (1.0 - py1) * pa
    out[..., 3] = py1 * pa
    return out


def working_score(u, lin, beta) -> np.ndarray:
    """beta-score of the working joint law per cell: ``a (y - expit(4 L + beta a + 2 u))``."""
    py1 = expit(4.0 * lin[:, None] + float(beta) + 2.0 * np.asarray(u, dtype=np.float64)[None, :])
    out = np.zeros(py1.shape + (4,))
    out[..., 2] = -py1
    out[..., 3] = 1.0 - py1
    return out


def working_loglik(y, a, u, lin, beta) -> np.ndarray:
    """Log of ``p(y, a | x, u; beta)`` (the beta-dependent part of the working joint law)."""
    pa = expit(3.0 * lin + 2.0 * u)
    py = expit(4.0 * lin + beta * a + 2.0 * u)
    return y * np.log(py) + (1 - y) * np.log1p(-py) + a * np.log(pa) + (1 - a) * np.log1p(-pa)


@dataclass(frozen=True, eq=False)
class SensIntegrals:
    """Working-posterior quantities on the inner grid at one beta."""

    lin: np.ndarray  # (N,)
    s_nodes: np.ndarray
    p_s: np.ndarray  # (N, J2, 4)
    eta_s: np.ndarray  # (J2,)
    weights: np.ndarray  # (J2,)
    g: np.ndarray  # (N, 4)
    m: np.ndarray  # (N, 4) posterior mean of the working score per cell
    t_nodes: np.ndarray | None = None
    p_t: np.ndarray | None = None

    def probs_at(self, t, beta):
        if t is self.t_nodes:
            return self.p_t
        if t is self.s_nodes:
            return self.p_s
        return cell_probs(np.asarray(t)[:, 0], self.lin, beta)

    def gram(self) -> np.ndarray:
        """``G[i, l, k] = int P_l P_k eta / g_l``."""
        we = self.weights * self.eta_s
        return np.einsum("njl,njk,j->nlk", self.p_s, self.p_s, we) / self.g[:, :, None]


def sens_integrals(data: SensData, beta, grid: QuadratureGrid, eta: Callable = working_eta, *, outer=False):
    beta = float(np.atleast_1d(beta)[0])
    s = grid.inner_points[:, 0]
    lin = alternating_sum(data.x)
    p_s = cell_probs(s, lin, beta)
    eta_s = eta(s)
    we = grid.inner_weights * eta_s
    g = np.einsum("njk,j->nk", p_s, we)
    bad = np.argwhere(g <= 1e-300)
    if bad.size:
        i, k = bad[0]
        raise NumericError(f"working mixture vanishes for observation {i}, cell (y, a) = {CELLS[k]}")
    m = np.einsum("njk,njk,j->nk", working_score(s, lin, beta), p_s, we) / g
    t_nodes = p_t = None
    if outer:
        t_nodes = grid.outer_points
        p_t = cell_probs(t_nodes[:, 0], lin, beta)
    return SensIntegrals(lin, grid.inner_points, p_s, eta_s, grid.inner_weights, g, m, t_nodes, p_t)


def sens_problem(lam: float = LAMBDA, eta: Callable = working_eta) -> FredholmProblem:
    def context(data, beta, grid):
        return sens_integrals(data, beta, grid, eta, outer=True)

    def forcing(t, data, beta, ig):
        return np.einsum("njk,nk->nj", ig.probs_at(t, beta[0]), ig.m)[..., None]

    def t_factor(t, data, beta, ig):
        return ig.probs_at(t, beta[0]) / ig.g[:, None, :]

    def s_factor(s, data, beta, ig):
        e = ig.eta_s if s is ig.s_nodes else eta(s[:, 0])
        return ig.probs_at(s, beta[0]) * e[None, :, None]

    return FredholmProblem(
        "sensitivity", U_DOMAIN, U_DOMAIN, 1, Tikhonov(lam),
        forcing=forcing, kernel=SeparableKernel(t_factor, s_factor),
        covariates=lambda data: data.x, n_covariates=N_COVARIATES,
        context=context,
    )


def _pairs(nodes, x):
    n, j = x.shape[0], nodes.shape[0]
    out = np.empty((n, j, 1 + x.shape[1]))
    out[:, :, 0] = nodes[None, :, 0]
    out[:, :, 1:] = x[:, None, :]
    return out.reshape(n * j, -1)


class SensEquation:
    """``psi_i = E_eta[s~ - b(U, X_i) | Y_i, A_i, X_i]`` under the working posterior."""

    q = 1

    def __init__(self, eta: Callable = working_eta):
        self.eta = eta

    def b_inputs(self, data: SensData, grid):
        return {"s": _pairs(grid.inner_points, data.x)}

    def __call__(self, data: SensData, beta, bvals, grid):
        if grid is None:
            raise InputShapeError("the sensitivity estimating function integrates over the inner grid")
        ig = sens_integrals(data, beta, grid, self.eta)
        n, j2 = len(data), grid.j2
        bs = bvals["s"].reshape(n, j2)
        rows = np.arange(n)
        k = data.cell
        post = ig.p_s[rows, :, k] * (ig.weights * ig.eta_s)[None, :] / ig.g[rows, k][:, None]
        return (ig.m[rows, k] - np.sum(post * bs, axis=1))[:, None]


def sens_exact_coefficients(data: SensData, beta, grid: QuadratureGrid, lam: float = LAMBDA, eta=working_eta):
    """Per-observation weights ``c = (G + lam I)^-1 m`` with ``b(u, x_i) = sum_k c_ik P_k(u)``."""
    ig = sens_integrals(data, beta, grid, eta)
    return np.linalg.solve(ig.gram() + lam * np.eye(4), ig.m[..., None])[..., 0]


def sens_exact_solution(data: SensData, beta, grid: QuadratureGrid, lam: float = LAMBDA, eta=working_eta):
    """Exact solution of the discretized equation, as an evaluable b.

    Inputs must pair each node with the covariates of one of the
    observations in ``data`` (the equation is solved per observation).
    """
    beta = float(np.atleast_1d(beta)[0])
    c = sens_exact_coefficients(data, beta, grid, lam, eta)
    keys = {row.tobytes(): i for i, row in enumerate(np.ascontiguousarray(data.x))}

    def fn(inputs):
        xs = np.ascontiguousarray(inputs[:, 1:])
        idx = np.array([keys[row.tobytes()] for row in xs])
        lin = alternating_sum(xs)
        probs = cell_probs(inputs[:, 0], lin, beta, pointwise=True)
        return np.sum(probs * c[idx], axis=1)[:, None]

    return ClosedForm(fn, 1 + data.x.shape[1], 1)


def sens_exact_estimate(data: SensData, grid: QuadratureGrid, lam: float = LAMBDA, eta=working_eta,
                        bracket=(-3.0, 8.0)) -> float:
    """Root in beta of the mean estimating function with b solved exactly at each beta.

    With the exact solution ``psi_i = lam c_{i, k_i}``, so only the 4x4
    systems are needed.  The bracket is widened until the mean changes sign.
    """
    import scipy.optimize

    rows = np.arange(len(data))
    k = data.cell

    def mean_psi(beta):
        c = sens_exact_coefficients(data, beta, grid, lam, eta)
        return lam * float(np.mean(c[rows, k]))

    lo, hi = bracket
    f_lo, f_hi = mean_psi(lo), mean_psi(hi)
    widenings = 0
    while f_lo * f_hi > 0:
        if widenings == 6:
            raise NumericError(f"no sign change of the mean estimating function on [{lo:g}, {hi:g}]")
        lo, hi = lo - (hi - lo), hi + (hi - lo)
        f_lo, f_hi = mean_psi(lo), mean_psi(hi)
        widenings += 1
    return float(scipy.optimize.brentq(mean_psi, lo, hi, xtol=1e-10))
