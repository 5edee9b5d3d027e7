"""Average target-population loss under covariate shift with posterior drift.

Model: ``X ~ U(1, 3)``, ``A ~ Bern(expit(x))`` (``A = 0`` marks the target
population), ``Y ~ Bern(expit(r_A(x)))`` with ``r_0(x) = x`` and
``r_1(x) = r_0(x) + 1``.  The prediction rule is ``f(x) = expit(sqrt(x))``
and the target is ``beta* = E[(Y - f(X))^2 | A = 0]``.

All nuisances are taken at their true values.  With
``v(x; a) = var(Y | x, a) P(A = a | x)`` and ``mu = v(.; 0) + v(.; 1)`` the
correction function ``zeta`` solves the pointwise equation

    (v(x; 1) / mu(x)) zeta(x) + kappa(x) - zeta(x) = 0,
    kappa(x) = v(x; 0) (l(x, 1) - l(x, 0)) / P(A = 0),

because ``r_0`` is injective, so conditioning on ``r_0(X) = r_0(x)`` is
evaluation at ``x``.  In that case the source-sample correction term of the
estimator vanishes and

    beta_hat = mean[(1 - A) cond_loss(X) / P(A = 0)
                    + (1 - A) (Y - expit(X)) zeta(X) / mu(X)].
"""

from __future__ import annotations

import csv
import functools
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..errors import InputShapeError, NumericError
from ..fredholm import ClosedForm, FredholmProblem, PointwiseKernel, SecondKind, SolutionFn
from ..quadrature import Domain
from ..rng import Rng

X_DOMAIN = Domain.interval(1.0, 3.0)


def prediction(x):
    return expit(np.sqrt(x))


def drift(r):
    """Map from the target logit to the source logit."""
    return r + 1.0


def drift_slope(r):
    return np.ones_like(r)


def logit_target(x):
    return np.asarray(x, dtype=np.float64)


def logit_source(x):
    return drift(logit_target(x))


def p_source(x):
    """P(A = 1 | x)."""
    return expit(np.asarray(x, dtype=np.float64))


def p_target_marginal() -> float:
    """P(A = 0) for X ~ U(1, 3): the mean of expit(-x), in closed form."""
    return 0.5 * (np.log1p(np.exp(-1.0)) - np.log1p(np.exp(-3.0)))


def loss_value(x, y):
    return (y - prediction(x)) ** 2


def cond_loss(x):
    """E[l(X, Y) | X = x, A = 0]."""
    p = expit(logit_target(x))
    f = prediction(x)
    return p * (1.0 - f) ** 2 + (1.0 - p) * f**2


def v(x, a: int):
    """``var(Y | x, a) P(A = a | x)``."""
    r = logit_source(x) if a == 1 else logit_target(x)
    pr = expit(r)
    pa = p_source(x) if a == 1 else 1.0 - p_source(x)
    return pr * (1.0 - pr) * pa


def mu(x):
    """Normalizer under the injective reduction (the drift has slope 1)."""
    slope = drift_slope(logit_target(x))
    with np.errstate(divide="ignore", invalid="ignore"):  # caught by the guard below
        m = v(x, 1) * (1.0 + v(x, 0) / (v(x, 1) * slope**2))
    x = np.asarray(x, dtype=np.float64)
    bad = np.flatnonzero(~(np.atleast_1d(m) > 1e-12))
    if bad.size:
        raise NumericError(f"mu(x) vanishes at x = {np.atleast_1d(x)[bad[0]]:.6g}")
    return m


def kappa(x):
    """Forcing before the sign fold, written out in full."""
    slope = drift_slope(logit_target(x))
    l1_minus_l0 = (1.0 - prediction(x)) ** 2 - prediction(x) ** 2
    return v(x, 0) * v(x, 1) / (v(x, 1) * slope**2) * l1_minus_l0 / p_target_marginal()


def kappa_simplified(x):
    return v(x, 0) * (1.0 - 2.0 * prediction(x)) / p_target_marginal()


def zeta_star(x):
    """Exact solution ``kappa / (1 - v(.; 1) / mu)``."""
    return kappa(x) / (1.0 - v(x, 1) / mu(x))


@dataclass(frozen=True, eq=False)
class ShiftData:
    x: np.ndarray
    a: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        n = len(self.x)
        if len(self.a) != n or len(self.y) != n:
            raise InputShapeError("x, a and y must have the same length")
        if np.any((self.x < 1.0) | (self.x > 3.0)):
            raise InputShapeError("x must lie in [1, 3]")

    def __len__(self):
        return len(self.x)

    def take(self, idx) -> "ShiftData":
        return ShiftData(self.x[idx], self.a[idx], self.y[idx])

    def estimator_view(self) -> "ShiftData":
        return self

    def to_csv(self) -> str:
        buf = io.StringIO()
        out = csv.writer(buf, lineterminator="\n")
        out.writerow(["x", "a", "y"])
        for i in range(len(self)):
            out.writerow([repr(float(self.x[i])), int(self.a[i]), int(self.y[i])])
        return buf.getvalue()

    @classmethod
    def from_rows(cls, rows: list[dict], *, keep_truth: bool = False) -> "ShiftData":
        return cls(
            np.array([float(r["x"]) for r in rows]),
            np.array([int(r["a"]) for r in rows], dtype=np.int64),
            np.array([int(r["y"]) for r in rows], dtype=np.int64),
        )


def gen_shift(n: int, seed: int) -> ShiftData:
    if n < 1:
        raise InputShapeError(f"n must be >= 1, got {n}")
    rng = Rng(seed)
    x = rng.uniform(n, 1.0, 3.0)
    a = rng.bernoulli(p_source(x))
    r = np.where(a == 1, logit_source(x), logit_target(x))
    y = rng.bernoulli(expit(r))
    return ShiftData(x, a, y)


def shift_problem() -> FredholmProblem:
    """Pointwise second-kind problem for zeta; it does not involve the data or beta.

    The forcing is folded to ``-kappa`` so the unified residual
    ``k zeta - C - zeta`` equals ``k zeta + kappa - zeta``.
    """

    def forcing(t, data, beta):
        return np.broadcast_to(-kappa(t[:, 0])[None, :, None], (len(data), t.shape[0], 1))

    def kernel(t, data, beta):
        x = t[:, 0]
        return np.broadcast_to((v(x, 1) / mu(x))[None, :], (len(data), t.shape[0]))

    return FredholmProblem(
        "shift", X_DOMAIN, X_DOMAIN, 1, SecondKind(),
        forcing=forcing, kernel=PointwiseKernel(kernel), pooled=True, beta_dependent=False,
    )


def beta_hat_terms(data: ShiftData, zeta: SolutionFn | np.ndarray) -> np.ndarray:
    """Per-observation terms whose mean is the estimator."""
    z = zeta(data.x[:, None])[:, 0] if callable(zeta) else np.asarray(zeta, dtype=np.float64)
    target = 1.0 - data.a
    rho = p_target_marginal()
    return target * cond_loss(data.x) / rho + target * (data.y - expit(logit_target(data.x))) * z / mu(data.x)


def beta_hat_from_zeta(data: ShiftData, zeta) -> float:
    return float(np.mean(beta_hat_terms(data, zeta)))


class ShiftEquation:
    """``psi_i = term_i(zeta) - beta``; its root is the closed-form estimator."""

    q = 1

    def b_inputs(self, data: ShiftData, grid):
        return {"x": data.x[:, None]}

    def __call__(self, data: ShiftData, beta, bvals, grid):
        return (beta_hat_terms(data, bvals["x"][:, 0]) - beta[0])[:, None]


def zeta_exact() -> ClosedForm:
    return ClosedForm(lambda x: zeta_star(x[:, 0])[:, None], 1, 1)


@functools.lru_cache(maxsize=None)
def beta_star_shift(nodes: int = 20001) -> float:
    """``E[l(X, Y) | A = 0]`` by composite Simpson quadrature on [1, 3].

    The target density of ``X`` is proportional to ``1 - expit(x)``.
    """
    if nodes < 3 or nodes % 2 == 0:
        raise InputShapeError("Simpson's rule needs an odd number of at least 3 nodes")
    from scipy.integrate import simpson

    x = np.linspace(1.0, 3.0, nodes)
    w = 1.0 - p_source(x)
    return float(simpson(cond_loss(x) * w, x=x) / simpson(w, x=x))
