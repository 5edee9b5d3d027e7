"""Alternating bi-level optimizer: one Adam step on the outer estimating-equation
loss in beta, then ``gamma`` Adam steps on the inner Fredholm loss in the
network weights, until both updates are small.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.optimize

from .errors import ConfigurationError, DivergenceError, NumericError
from .fredholm import (
    Discretization,
    FredholmProblem,
    NeuralSolution,
    NeuralTrainer,
    SolutionFn,
    default_batch,
)
from .nn import AdamState, NetworkArch, NetworkWeights, adam_update, init_weights
from .quadrature import QuadratureGrid, sample_grid
from .rng import Rng, derive_seed


# ---------------------------------------------------------------- estimating equations


class EstimatingEquation:
    """psi(O, beta, b) for every observation at once.

    Subclasses declare the points where b must be evaluated
    (``b_inputs``, independent of beta) and compute ``(N, q)`` values from
    those cached evaluations, so the finite-difference probes in beta never
    re-run the network.
    """

    q: int

    def b_inputs(self, data, grid: QuadratureGrid | None) -> dict[str, np.ndarray]:
        return {}

    def __call__(self, data, beta: np.ndarray, bvals: dict, grid: QuadratureGrid | None) -> np.ndarray:
        raise NotImplementedError



class SimpleEquation(EstimatingEquation):
    """Adapter for psi functions that do not involve b: ``fn(data, beta) -> (N, q)``."""

    def __init__(self, fn: Callable, q: int):
        self.fn, self.q = fn, q

    def __call__(self, data, beta, bvals, grid):
        return self.fn(data, beta)


def evaluate_b(psi, b: SolutionFn | None, data, grid) -> dict[str, np.ndarray]:
    """Evaluate b once at every point ``psi`` asks for."""
    inputs = psi.b_inputs(data, grid) if hasattr(psi, "b_inputs") else {}
    return {key: b(x) for key, x in inputs.items()}


def _psi_matrix(psi: EstimatingEquation, data, beta, bvals, grid) -> np.ndarray:
    vals = np.asarray(psi(data, np.atleast_1d(np.asarray(beta, dtype=np.float64)), bvals, grid), dtype=np.float64)
    vals = vals.reshape(len(data), -1)
    bad = np.flatnonzero(~np.all(np.isfinite(vals), axis=1))
    if bad.size:
        raise NumericError(f"estimating function is not finite for observation {bad[0]}")
    return vals


def mean_psi(psi, beta, data, bvals, grid=None) -> np.ndarray:
    return _psi_matrix(psi, data, beta, bvals, grid).mean(axis=0)


def loss_psi(psi: EstimatingEquation, beta, b: SolutionFn | None, data, grid=None, *, bvals=None) -> float:
    """Squared Euclidean norm of the sample mean of psi."""
    if len(data) == 0:
        raise ConfigurationError("loss_psi needs at least one observation", key="data")
    if bvals is None:
        bvals = evaluate_b(psi, b, data, grid)
    m = mean_psi(psi, beta, data, bvals, grid)
    return float(m @ m)


def grad_beta(psi, beta, b, data, fd_step: float, grid=None, *, bvals=None) -> np.ndarray:
    """Central finite differences of ``loss_psi`` in each coordinate of beta."""
    if not fd_step > 0:
        raise ConfigurationError(f"fd_step must be > 0, got {fd_step}", key="fd_step")
    beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
    if bvals is None:
        bvals = evaluate_b(psi, b, data, grid)
    g = np.empty_like(beta)
    for k in range(beta.size):
        e = np.zeros_like(beta)
        e[k] = fd_step
        hi = loss_psi(psi, beta + e, None, data, grid, bvals=bvals)
        lo = loss_psi(psi, beta - e, None, data, grid, bvals=bvals)
        if not (np.isfinite(hi) and np.isfinite(lo)):
            raise NumericError(f"outer loss is not finite near beta = {beta.tolist()}")
        g[k] = (hi - lo) / (2.0 * fd_step)
    return g


# ---------------------------------------------------------------- configuration and report


@dataclass(frozen=True)
class BiLevelConfig:
    gamma: int = 10
    max_iter: int = 2000
    tol: float = 1e-5
    tol_beta: float | None = None
    tol_omega: float | None = None
    j1: int = 1000
    j2: int = 1000
    lr_beta: float = 1e-2
    lr_omega: float = 1e-4
    fd_step: float = 1e-5
    batch: int | None = None
    seed: int = 0
    beta_init: tuple = (0.0,)
    shortcut: bool = True
    divergence_limit: float = 1e12
    warmup: int = 0

    def __post_init__(self):
        if not isinstance(self.gamma, (int, np.integer)) or self.gamma < 1:
            raise ConfigurationError(f"must be an integer >= 1, got {self.gamma!r}", key="gamma")
        if self.warmup < 0:
            raise ConfigurationError(f"must be >= 0, got {self.warmup}", key="warmup")
        for key in ("max_iter", "j1", "j2"):
            if getattr(self, key) < 1:
                raise ConfigurationError(f"must be >= 1, got {getattr(self, key)}", key=key)
        for key in ("tol", "lr_beta", "lr_omega", "fd_step"):
            if not getattr(self, key) > 0:
                raise ConfigurationError(f"must be > 0, got {getattr(self, key)}", key=key)
        for key in ("tol_beta", "tol_omega"):
            v = getattr(self, key)
            if v is not None and not v > 0:
                raise ConfigurationError(f"must be > 0, got {v}", key=key)
        if self.batch is not None and self.batch < 0:
            raise ConfigurationError(f"must be >= 0, got {self.batch}", key="batch")
        object.__setattr__(self, "beta_init", tuple(float(v) for v in np.atleast_1d(self.beta_init)))

    @property
    def beta_tol(self) -> float:
        return self.tol if self.tol_beta is None else self.tol_beta

    @property
    def omega_tol(self) -> float:
        return self.tol if self.tol_omega is None else self.tol_omega

    def with_(self, **changes) -> "BiLevelConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class TraceRow:
    """State entering iteration ``iter``, plus the sizes of the steps it took."""

    iter: int
    beta: tuple
    loss_psi: float
    loss_K: float
    beta_step: float
    omega_step: float


@dataclass
class EstimateReport:
    beta_hat: np.ndarray
    converged: bool
    iterations: int
    final_loss_psi: float
    final_loss_K: float
    trace: list[TraceRow]
    wall_seconds: float
    weights: NetworkWeights | None = field(default=None, repr=False)
    grid: QuadratureGrid | None = field(default=None, repr=False)

    def to_dict(self) -> dict:
        return {
            "beta_hat": [float(v) for v in self.beta_hat],
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "final_loss_psi": float(self.final_loss_psi),
            "final_loss_K": float(self.final_loss_K),
            "wall_seconds": float(self.wall_seconds),
        }


def trace_csv(trace: list[TraceRow], q: int) -> str:
    head = ["iter"] + [f"beta_{k + 1}" for k in range(q)] + ["loss_psi", "loss_K"]
    lines = [",".join(head)]
    for row in trace:
        vals = [str(row.iter)] + [repr(float(b)) for b in row.beta] + [repr(float(row.loss_psi)), repr(float(row.loss_K))]
        lines.append(",".join(vals))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- the loop


def _check(value: float, what: str, limit: float, trace):
    if not np.isfinite(value) or value > limit:
        raise DivergenceError(f"{what} = {value!r} exceeded the divergence limit {limit:g}", trace=list(trace))


def dna_se(
    p: FredholmProblem,
    psi: EstimatingEquation,
    data,
    arch: NetworkArch,
    cfg: BiLevelConfig,
    *,
    grid: QuadratureGrid | None = None,
    weights: NetworkWeights | None = None,
) -> EstimateReport:
    """Estimate beta by the alternating scheme.

    Iteration ``m`` takes one Adam step on ``loss_psi`` in beta (network
    frozen, gradient by central differences), then ``cfg.gamma`` Adam steps
    on ``loss_K`` in the weights (beta frozen).  It stops once
    ``|beta_m - beta_{m-1}| < tol_beta`` and ``|w_m - w_{m-1}| < tol_omega``,
    or after ``max_iter`` iterations.  When the problem does not depend on
    beta (and ``cfg.shortcut``), the network is trained first and beta is
    solved once afterwards.
    """
    if psi.q != p.q:
        raise ConfigurationError(f"psi has {psi.q} components, problem has q = {p.q}", key="q")
    if len(cfg.beta_init) != p.q:
        raise ConfigurationError(f"beta_init has {len(cfg.beta_init)} entries, need {p.q}", key="beta_init")
    if arch.input_dim != p.b_input_dim or arch.output_dim != p.q:
        raise ConfigurationError(
            f"network maps {arch.input_dim}->{arch.output_dim}, problem needs {p.b_input_dim}->{p.q}", key="arch"
        )
    start = time.perf_counter()
    if grid is None:
        grid = sample_grid(p.t_domain, p.s_domain, cfg.j1, cfg.j2, derive_seed(cfg.seed, "grid"))
    w = weights if weights is not None else init_weights(arch, derive_seed(cfg.seed, "init"))
    batch = default_batch(len(data)) if cfg.batch is None else cfg.batch
    rng = Rng(derive_seed(cfg.seed, "batch"))
    beta = np.array(cfg.beta_init, dtype=np.float64)

    if not p.beta_dependent and cfg.shortcut:
        return _decoupled(p, psi, data, cfg, grid, w, beta, batch, rng, start)

    st_w = AdamState.for_weights(w)
    st_b = AdamState.zeros(beta.size)
    disc = Discretization(p, data, beta, grid)
    if cfg.warmup:
        # fit b at the starting beta before the first outer step
        w, st_w, loss_k = NeuralTrainer(disc).run(w, st_w, cfg.warmup, cfg.lr_omega, batch, rng)
    else:
        loss_k = disc.loss(NeuralSolution(w))
    trace: list[TraceRow] = []
    converged = False
    for m in range(1, cfg.max_iter + 1):
        bvals = evaluate_b(psi, NeuralSolution(w), data, grid)
        loss_p = loss_psi(psi, beta, None, data, grid, bvals=bvals)
        _check(loss_p, "outer loss", cfg.divergence_limit, trace)
        _check(loss_k, "inner loss", cfg.divergence_limit, trace)

        # outer step: network frozen
        frozen = w.flat
        g = grad_beta(psi, beta, None, data, cfg.fd_step, grid, bvals=bvals)
        beta_new, st_b = adam_update(beta, g, st_b, cfg.lr_beta)
        assert w.flat is frozen

        # inner steps: beta frozen
        if p.beta_dependent:
            disc = Discretization(p, data, beta_new, grid)
        beta_frozen = beta_new.copy()
        w_new, st_w, loss_k_new = NeuralTrainer(disc).run(w, st_w, cfg.gamma, cfg.lr_omega, batch, rng)
        assert np.array_equal(beta_new, beta_frozen)

        d_beta = float(np.linalg.norm(beta_new - beta))
        d_omega = float(np.linalg.norm(w_new.flat - w.flat))
        trace.append(TraceRow(m, tuple(beta.tolist()), loss_p, loss_k, d_beta, d_omega))
        beta, w, loss_k = beta_new, w_new, loss_k_new
        if d_beta < cfg.beta_tol and d_omega < cfg.omega_tol:
            converged = True
            break

    _check(loss_k, "inner loss", cfg.divergence_limit, trace)
    final_psi = loss_psi(psi, beta, NeuralSolution(w), data, grid)
    return EstimateReport(
        beta, converged, len(trace), final_psi, loss_k, trace, time.perf_counter() - start, w, grid
    )


def solve_beta(psi: EstimatingEquation, data, bvals, grid, beta0, tol: float) -> np.ndarray:
    """Root of the mean estimating function with b fixed (trust-region least squares)."""
    res = scipy.optimize.least_squares(
        lambda beta: mean_psi(psi, beta, data, bvals, grid), np.asarray(beta0, dtype=np.float64),
        xtol=min(tol, 1e-10), ftol=1e-14, gtol=1e-14, method="trf",
    )
    if not np.all(np.isfinite(res.x)):
        raise NumericError("outer solve returned a non-finite beta")
    return res.x


def _decoupled(p, psi, data, cfg, grid, w, beta, batch, rng, start) -> EstimateReport:
    """Train the network to the omega tolerance, then solve for beta once."""
    st_w = AdamState.for_weights(w)
    trainer = NeuralTrainer(Discretization(p, data, beta, grid))
    loss_k = trainer.full_loss(w)
    trace: list[TraceRow] = []
    converged = False
    for m in range(1, cfg.max_iter + 1):
        _check(loss_k, "inner loss", cfg.divergence_limit, trace)
        w_new, st_w, loss_k_new = trainer.run(w, st_w, cfg.gamma, cfg.lr_omega, batch, rng)
        d_omega = float(np.linalg.norm(w_new.flat - w.flat))
        trace.append(TraceRow(m, tuple(beta.tolist()), float("nan"), loss_k, 0.0, d_omega))
        w, loss_k = w_new, loss_k_new
        if d_omega < cfg.omega_tol:
            converged = True
            break
    bvals = evaluate_b(psi, NeuralSolution(w), data, grid)
    beta_hat = solve_beta(psi, data, bvals, grid, beta, cfg.beta_tol)
    final_psi = loss_psi(psi, beta_hat, None, data, grid, bvals=bvals)
    # the loss column of the trace is evaluated at the final beta: it is the
    # only beta at which the outer loss is meaningful on this path
    trace = [replace(r, loss_psi=final_psi) for r in trace]
    return EstimateReport(
        beta_hat, converged, len(trace), final_psi, loss_k, trace, time.perf_counter() - start, w, grid
    )


# ---------------------------------------------------------------- polynomial estimator


def polynomial_estimate(
    p: FredholmProblem,
    psi: EstimatingEquation,
    data,
    basis,
    grid: QuadratureGrid,
    beta0,
    tol: float = 1e-10,
) -> EstimateReport:
    """Root of the mean estimating function with b re-solved by collocation at each beta."""
    from .fredholm import PolynomialSolution, solve_polynomial

    start = time.perf_counter()
    cache = {}

    def solution(beta):
        key = np.asarray(beta, dtype=np.float64).tobytes()
        if key not in cache:
            coeffs = solve_polynomial(p, data, beta, grid, basis=basis)
            cache.clear()
            cache[key] = PolynomialSolution(coeffs)
        return cache[key]

    def residual(beta):
        return mean_psi(psi, beta, data, evaluate_b(psi, solution(beta), data, grid), grid)

    res = scipy.optimize.least_squares(
        residual, np.asarray(beta0, dtype=np.float64), xtol=tol, ftol=1e-14, gtol=1e-14, method="trf"
    )
    beta = res.x
    b = solution(beta)
    loss_k = Discretization(p, data, beta, grid).loss(b)
    final_psi = float(res.fun @ res.fun)
    return EstimateReport(
        beta, bool(res.success), int(res.nfev), final_psi, loss_k,
        [TraceRow(int(res.nfev), tuple(beta.tolist()), final_psi, loss_k, 0.0, 0.0)],
        time.perf_counter() - start,
    )


__all__ = [
    "BiLevelConfig",
    "EstimateReport",
    "EstimatingEquation",
    "SimpleEquation",
    "TraceRow",
    "dna_se",
    "evaluate_b",
    "grad_beta",
    "loss_psi",
    "mean_psi",
    "polynomial_estimate",
    "solve_beta",
    "trace_csv",
]
