"""Registry of the worked examples as ready-to-run bundles.

Each :class:`ExampleBundle` ties a data generator to its integral equation,
estimating function, default network and optimizer settings, the true
parameter, and the reference estimators it is compared against.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..bilevel import BiLevelConfig
from ..errors import ConfigurationError
from ..fredholm import FredholmProblem
from ..nn import NetworkArch
from . import analytic, mnar, sensitivity, shift


@dataclass(frozen=True)
class ExampleBundle:
    """Everything the harness needs to simulate one example.

    ``comparators`` maps a label to ``fn(full_data, grid) -> beta``; the
    data passed in still carries the simulation truth so that the oracle can
    use it, and every other comparator strips it first.  ``start`` gives the
    initial beta from the estimator-facing data (``None``: use
    ``config.beta_init``).
    """

    name: str
    generate: Callable  # (n, seed) -> data
    problem: FredholmProblem
    psi: object
    arch: NetworkArch
    config: BiLevelConfig
    beta_star: tuple
    default_n: int
    data_type: type | None = None
    comparators: dict = field(default_factory=dict)
    start: Callable | None = None
    covariate_bounds: list | None = None
    poly_degrees: tuple = ()

    @property
    def q(self) -> int:
        return self.problem.q

    def __post_init__(self):
        if getattr(self.psi, "q", self.problem.q) != self.problem.q:
            raise ConfigurationError(f"psi has q = {self.psi.q}, problem has {self.problem.q}", key=self.name)
        if self.arch.input_dim != self.problem.b_input_dim or self.arch.output_dim != self.problem.q:
            raise ConfigurationError("default network does not match the problem", key=self.name)
        if len(self.beta_star) != self.problem.q:
            raise ConfigurationError("beta_star has the wrong length", key=self.name)


def mnar_bundle(working_eta2: Callable = mnar.working_eta2) -> ExampleBundle:
    return ExampleBundle(
        name="mnar",
        generate=mnar.gen_mnar,
        problem=mnar.mnar_problem(working_eta2),
        psi=mnar.MnarEquation(working_eta2),
        arch=NetworkArch(1, 2, 5, 3),
        config=BiLevelConfig(beta_init=(0.0, 0.0)),
        beta_star=mnar.BETA_STAR,
        default_n=500,
        data_type=mnar.MnarData,
        comparators={
            "oracle": lambda data, grid: mnar.mnar_oracle(data),
            "biased": lambda data, grid: mnar.mnar_biased(data.estimator_view()),
        },
        # the complete-case fit is a cheap, consistent-in-sign starting point
        start=mnar.mnar_biased,
        poly_degrees=(2, 3, 5),
    )


def sens_bundle(working_eta: Callable = sensitivity.working_eta, lam: float = sensitivity.LAMBDA) -> ExampleBundle:
    if lam < 0:
        raise ConfigurationError(f"must be >= 0, got {lam}", key="lambda")
    return ExampleBundle(
        name="sensitivity",
        generate=sensitivity.gen_sens,
        problem=sensitivity.sens_problem(lam, working_eta),
        psi=sensitivity.SensEquation(working_eta),
        arch=NetworkArch(1 + sensitivity.N_COVARIATES, 1, 33, 23),
        config=BiLevelConfig(beta_init=(0.0,), max_iter=20000),
        beta_star=(sensitivity.BETA_STAR,),
        default_n=1000,
        data_type=sensitivity.SensData,
        comparators={
            "exact": lambda data, grid: np.array(
                [sensitivity.sens_exact_estimate(data.estimator_view(), grid, lam, working_eta)]
            ),
        },
        covariate_bounds=sensitivity.X_BOUNDS,
        poly_degrees=(2,),
    )


def shift_bundle() -> ExampleBundle:
    return ExampleBundle(
        name="shift",
        generate=shift.gen_shift,
        problem=shift.shift_problem(),
        psi=shift.ShiftEquation(),
        arch=NetworkArch(1, 1, 5, 3),
        config=BiLevelConfig(beta_init=(0.0,)),
        beta_star=(shift.beta_star_shift(),),
        default_n=10000,
        data_type=shift.ShiftData,
        comparators={
            "exact": lambda data, grid: np.array([shift.beta_hat_from_zeta(data, shift.zeta_exact())]),
        },
        poly_degrees=(3, 5),
    )


def _toy_generate(n: int, seed: int):
    return analytic.TOY_DATA


def toy_bundle() -> ExampleBundle:
    """K = 0, C = -1 and ``psi = beta - b(1/2)``: the bi-level loop must find beta = 1."""
    return ExampleBundle(
        name="toy",
        generate=_toy_generate,
        problem=analytic.toy_problem(),
        psi=analytic.ToyEquation(),
        arch=NetworkArch(1, 1, 5, 2),
        config=BiLevelConfig(beta_init=(0.0,), lr_omega=3e-3, j1=200, j2=200),
        beta_star=(1.0,),
        default_n=1,
        poly_degrees=(0, 1),
    )


BUNDLES: dict[str, Callable[[], ExampleBundle]] = {
    "mnar": mnar_bundle,
    "sensitivity": sens_bundle,
    "shift": shift_bundle,
    "toy": toy_bundle,
}


def get_bundle(name: str, **options) -> ExampleBundle:
    try:
        factory = BUNDLES[name]
    except KeyError:
        raise ConfigurationError(f"unknown example {name!r}; choose from {sorted(BUNDLES)}", key="example") from None
    return factory(**options)


def get_analytic(name: str) -> analytic.AnalyticProblem:
    try:
        return analytic.ANALYTIC[name]()
    except KeyError:
        raise ConfigurationError(
            f"unknown analytic problem {name!r}; choose from {sorted(analytic.ANALYTIC)}", key="problem"
        ) from None


__all__ = [
    "BUNDLES",
    "ExampleBundle",
    "get_analytic",
    "get_bundle",
    "mnar_bundle",
    "sens_bundle",
    "shift_bundle",
    "toy_bundle",
]
