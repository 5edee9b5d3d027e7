"""Closed-form validation problems for both solvers and the bi-level loop."""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from ..fredholm import UNOBSERVED, DenseKernel, FredholmProblem, SecondKind, Tikhonov
from ..quadrature import Domain

UNIT = Domain.interval(0.0, 1.0)


# Training recipe that meets the loss/sup-error targets on every fixture
# within 5000 full-batch steps (checked over several seeds).
NEURAL_RECIPE = {"width": 5, "depth": 2, "lr": 3e-3, "steps": 5000}


class AnalyticProblem(NamedTuple):
    name: str
    problem: FredholmProblem
    solution: Callable  # (n, 1) points -> (n, q)


def _degenerate_kernel(s, t, data, beta):
    return 0.5 * t[:, 0][None, :, None] * s[:, 0][None, None, :]


def _quadratic(t):
    x = t[:, 0]
    return x * x - 0.5 * x


def degenerate() -> AnalyticProblem:
    """K = st/2, C = -5t/6 on [0, 1]; b*(t) = t."""
    p = FredholmProblem(
        "degenerate",
        UNIT,
        UNIT,
        1,
        SecondKind(),
        forcing=lambda t, data, beta: (-5.0 / 6.0 * t[:, 0])[None, :, None],
        kernel=DenseKernel(_degenerate_kernel),
        beta_dependent=False,
    )
    return AnalyticProblem("degenerate", p, lambda x: x[:, :1])


def zero_kernel() -> AnalyticProblem:
    """K = 0 with a quadratic forcing; b* = -C."""
    p = FredholmProblem(
        "zero_kernel", UNIT, UNIT, 1, SecondKind(),
        forcing=lambda t, data, beta: _quadratic(t)[None, :, None], beta_dependent=False,
    )
    return AnalyticProblem("zero_kernel", p, lambda x: -_quadratic(x)[:, None])


def tikhonov(lam: float = 0.5) -> AnalyticProblem:
    """K = 0 under Tikhonov(lam) with the quadratic forcing; b* = C / lam."""
    p = FredholmProblem(
        "tikhonov", UNIT, UNIT, 1, Tikhonov(lam),
        forcing=lambda t, data, beta: _quadratic(t)[None, :, None], beta_dependent=False,
    )
    return AnalyticProblem("tikhonov", p, lambda x: _quadratic(x)[:, None] / lam)


def analytic_problems() -> list[AnalyticProblem]:
    return [degenerate(), zero_kernel(), tikhonov()]


ANALYTIC = {"degenerate": degenerate, "zero_kernel": zero_kernel, "tikhonov": tikhonov}


# ---------------------------------------------------------------- toy fixed point

TOY_PROBE = 0.5


def toy_problem() -> FredholmProblem:
    """K = 0, C = -1: b* = 1 everywhere."""
    return FredholmProblem(
        "toy", UNIT, UNIT, 1, SecondKind(),
        forcing=lambda t, data, beta: -np.ones((len(data), t.shape[0], 1)),
    )


class ToyEquation:
    """psi(O, beta, b) = beta - b(t0); its root is b*(t0) = 1."""

    q = 1

    def b_inputs(self, data, grid):
        return {"probe": np.array([[TOY_PROBE]])}

    def __call__(self, data, beta, bvals, grid):
        return np.broadcast_to(beta[0] - bvals["probe"][0, 0], (len(data), 1)).copy()


TOY_DATA = UNOBSERVED
