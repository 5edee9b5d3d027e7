"""Parameterized Fredholm problems, their Monte Carlo residual and loss, and
two solvers for the unknown function b: Adam on a tanh network, and
least-squares collocation over a monomial basis.

All problem callables are vectorized.  With ``N = len(data)``, ``J1`` outer
nodes ``t`` and ``J2`` inner nodes ``s``:

* ``forcing(t, data, beta)``      -> ``(N, J1, q)``
* ``weight(t, data, beta)``       -> ``(N, J1)``, multiplier on the b-term
* ``covariates(data)``            -> ``(N, c)``, extra arguments of b
* ``context(data, beta, grid)``   -> any object; when given, it is computed
  once per discretization and passed as a trailing argument to forcing,
  weight and kernel callables (for integrals over the inner grid that
  several of them share)
* kernels, see :class:`DenseKernel`, :class:`SeparableKernel`,
  :class:`PointwiseKernel`.

The residual at ``(t_l, O_i)`` is::

    r = vol_s/J2 * sum_j K(s_j, t_l, O_i) b(s_j, O_i) - C(t_l, O_i) - alpha * w(t_l, O_i) * b(t_l, O_i)

with ``alpha = 1`` for second-kind problems and ``alpha = -lambda`` under
Tikhonov regularization.  ``loss_K`` averages ``|r|^2`` over observations
and outer nodes.  A *pooled* problem instead averages the residual over
observations before squaring; this is the form taken when b has no
observation-specific argument and the governing equation holds only on
average over the sample.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np
import scipy.linalg

from .errors import ConfigurationError, InputShapeError, NumericError, RankDeficiencyWarning
from .nn import AdamState, NetworkWeights, adam_update, backward_flat, forward_cached
from .quadrature import Domain, QuadratureGrid
from .rng import Rng

MAX_POLY_COEFFS = 10_000


# ---------------------------------------------------------------- problem type


@dataclass(frozen=True)
class ResidualMode:
    kind: str
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in ("second_kind", "tikhonov"):
            raise ConfigurationError(f"unknown residual mode {self.kind!r}", key="mode")
        if self.kind == "tikhonov" and not self.lam >= 0:
            raise ConfigurationError(f"lambda must be >= 0, got {self.lam}", key="lambda")

    @property
    def alpha(self) -> float:
        return 1.0 if self.kind == "second_kind" else -float(self.lam)


def SecondKind() -> ResidualMode:
    return ResidualMode("second_kind")


def Tikhonov(lam: float) -> ResidualMode:
    return ResidualMode("tikhonov", float(lam))


@dataclass(frozen=True)
class DenseKernel:
    """``fn(s, t, data, beta) -> (N, J1, J2)`` with entry ``K(s_j, t_l, O_i)``."""

    fn: Callable


@dataclass(frozen=True)
class SeparableKernel:
    """``K(s, t, O) = sum_r T_r(t, O) S_r(s, O)``.

    ``t_factor(t, data, beta) -> (N, J1, R)`` and
    ``s_factor(s, data, beta) -> (N, J2, R)``.  Evaluating the integral costs
    ``O(N (J1 + J2) R)`` instead of ``O(N J1 J2)``.
    """

    t_factor: Callable
    s_factor: Callable

    def dense(self, s, t, data, beta):
        return np.einsum("nlr,njr->nlj", self.t_factor(t, data, beta), self.s_factor(s, data, beta))


@dataclass(frozen=True)
class PointwiseKernel:
    """Multiplication operator ``(K b)(t) = k(t, O) b(t, O)``; ``fn -> (N, J1)``.

    Covers integral operators that collapse onto a point set (a conditional
    expectation given an injective statistic).  Requires ``s_domain == t_domain``.
    """

    fn: Callable


class Unobserved:
    """Stand-in data set with a single empty observation."""

    def __len__(self):
        return 1

    def take(self, idx):
        return self


UNOBSERVED = Unobserved()


@dataclass(frozen=True)
class FredholmProblem:
    name: str
    t_domain: Domain
    s_domain: Domain
    q: int
    mode: ResidualMode
    forcing: Callable
    kernel: DenseKernel | SeparableKernel | PointwiseKernel | None = None
    weight: Callable | None = None
    covariates: Callable | None = None
    n_covariates: int = 0
    pooled: bool = False
    beta_dependent: bool = True
    context: Callable | None = None

    def __post_init__(self):
        if self.q < 1:
            raise ConfigurationError("q must be >= 1", key="q")
        if self.pooled and self.covariates is not None:
            raise ConfigurationError("a pooled problem needs b without observation covariates", key="pooled")
        if isinstance(self.kernel, PointwiseKernel) and self.s_domain != self.t_domain:
            raise ConfigurationError("pointwise kernels need identical s and t domains", key="kernel")

    @property
    def b_input_dim(self) -> int:
        return self.t_domain.dim + self.n_covariates

    @property
    def uses_inner_grid(self) -> bool:
        return isinstance(self.kernel, (DenseKernel, SeparableKernel))


# ---------------------------------------------------------------- solutions


class SolutionFn:
    """Evaluable b: maps an ``(n, input_dim)`` array to ``(n, q)``."""

    input_dim: int
    q: int

    def __call__(self, inputs) -> np.ndarray:
        raise NotImplementedError


class NeuralSolution(SolutionFn):
    def __init__(self, weights: NetworkWeights):
        self.weights = weights
        self.input_dim = weights.arch.input_dim
        self.q = weights.arch.output_dim

    # rows per forward pass; bounds the activation memory on large inputs
    chunk = 65536

    def __call__(self, inputs):
        x = np.ascontiguousarray(np.asarray(inputs, dtype=np.float64).reshape(-1, self.input_dim))
        if x.shape[0] <= self.chunk:
            return forward_cached(self.weights, x)[-1]
        out = np.empty((x.shape[0], self.q))
        for lo in range(0, x.shape[0], self.chunk):
            out[lo : lo + self.chunk] = forward_cached(self.weights, x[lo : lo + self.chunk])[-1]
        return out


class ClosedForm(SolutionFn):
    """Wrap a plain vectorized function as a solution."""

    def __init__(self, fn: Callable, input_dim: int, q: int):
        self.fn, self.input_dim, self.q = fn, input_dim, q

    def __call__(self, inputs):
        x = np.asarray(inputs, dtype=np.float64).reshape(-1, self.input_dim)
        return np.asarray(self.fn(x), dtype=np.float64).reshape(x.shape[0], self.q)


@dataclass(frozen=True)
class MonomialBasis:
    """Monomials ``prod_k z_k^e_k`` in coordinates rescaled to ``[-1, 1]``.

    ``z = (x - center) / scale`` keeps high powers well conditioned.
    """

    exponents: tuple[tuple[int, ...], ...]
    center: tuple[float, ...]
    scale: tuple[float, ...]

    @property
    def input_dim(self) -> int:
        return len(self.center)

    @property
    def size(self) -> int:
        return len(self.exponents)

    @property
    def degree(self) -> int:
        return max(sum(e) for e in self.exponents)

    def evaluate(self, inputs) -> np.ndarray:
        z = (np.asarray(inputs, dtype=np.float64).reshape(-1, self.input_dim) - self.center) / np.asarray(self.scale)
        max_pow = max(max(e) for e in self.exponents)
        powers = [np.ones_like(z)]
        for _ in range(max_pow):
            powers.append(powers[-1] * z)
        out = np.empty((z.shape[0], self.size))
        for col, exps in enumerate(self.exponents):
            term = np.ones(z.shape[0])
            for k, e in enumerate(exps):
                if e:
                    term = term * powers[e][:, k]
            out[:, col] = term
        return out


def total_degree_exponents(dim: int, degree: int) -> tuple[tuple[int, ...], ...]:
    """All exponent vectors with total degree <= ``degree``, sorted by degree."""
    out = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(dim), d):
            e = [0] * dim
            for k in combo:
                e[k] += 1
            out.append(tuple(e))
    return tuple(out)


def n_total_degree(dim: int, degree: int) -> int:
    return math.comb(dim + degree, degree)


def total_degree_basis(bounds: list[tuple[float, float]], degree: int) -> MonomialBasis:
    if degree < 0:
        raise ConfigurationError(f"degree must be >= 0, got {degree}", key="degree")
    if n_total_degree(len(bounds), degree) > MAX_POLY_COEFFS:
        raise ConfigurationError(
            f"degree {degree} in {len(bounds)} variables needs {n_total_degree(len(bounds), degree)} "
            f"coefficients (limit {MAX_POLY_COEFFS})",
            key="degree",
        )
    center = tuple(0.5 * (lo + hi) for lo, hi in bounds)
    scale = tuple(0.5 * (hi - lo) for lo, hi in bounds)
    return MonomialBasis(total_degree_exponents(len(bounds), degree), center, scale)


def separable_linear_basis(bounds: list[tuple[float, float]], degree: int, n_point: int = 1) -> MonomialBasis:
    """Degree ``degree`` in the first ``n_point`` coordinates, times ``1`` or a
    single remaining coordinate (coefficients linear in the covariates)."""
    head = total_degree_exponents(n_point, degree)
    n_cov = len(bounds) - n_point
    exps = []
    for tail in [(0,) * n_cov] + [tuple(int(k == m) for k in range(n_cov)) for m in range(n_cov)]:
        exps += [h + tail for h in head]
    if len(exps) > MAX_POLY_COEFFS:
        raise ConfigurationError(f"{len(exps)} coefficients exceed {MAX_POLY_COEFFS}", key="degree")
    center = tuple(0.5 * (lo + hi) for lo, hi in bounds)
    scale = tuple(0.5 * (hi - lo) for lo, hi in bounds)
    return MonomialBasis(tuple(exps), center, scale)


@dataclass(frozen=True, eq=False)
class PolynomialCoefficients:
    """``coeffs[k, m]`` multiplies basis function ``k`` in output component ``m``."""

    basis: MonomialBasis
    coeffs: np.ndarray
    rank: int | None = None

    @property
    def degree(self) -> int:
        return self.basis.degree

    def to_json(self) -> str:
        return json.dumps(
            {
                "degree": self.degree,
                "coeffs": self.coeffs.T.tolist(),
                "exponents": [list(e) for e in self.basis.exponents],
                "center": list(self.basis.center),
                "scale": list(self.basis.scale),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "PolynomialCoefficients":
        d = json.loads(text)
        basis = MonomialBasis(
            tuple(tuple(e) for e in d["exponents"]), tuple(d["center"]), tuple(d["scale"])
        )
        return cls(basis, np.asarray(d["coeffs"], dtype=np.float64).T)


class PolynomialSolution(SolutionFn):
    def __init__(self, coeffs: PolynomialCoefficients):
        self.coefficients = coeffs
        self.input_dim = coeffs.basis.input_dim
        self.q = coeffs.coeffs.shape[1]

    def __call__(self, inputs):
        return self.coefficients.basis.evaluate(inputs) @ self.coefficients.coeffs


# ---------------------------------------------------------------- discretization


def _check_finite(arr, what, nodes):
    if np.isfinite(arr).all():
        return
    bad = np.argwhere(~np.isfinite(arr))
    if bad.size:
        i, l = int(bad[0][0]), int(bad[0][1])
        raise NumericError(f"{what} is not finite at node {nodes[l].tolist()}, observation {i}")


class Discretization:
    """A problem frozen at ``(data, beta, grid)``.

    Holds every beta-dependent array, so repeated residual evaluations for
    new b values cost only the kernel application.
    """

    def __init__(self, problem: FredholmProblem, data, beta, grid: QuadratureGrid):
        self.problem = problem
        self.grid = grid
        self.beta = np.atleast_1d(np.asarray(beta, dtype=np.float64))
        t, s = grid.outer_points, grid.inner_points
        n = len(data)
        self.n_obs, self.j1, self.j2, self.q = n, t.shape[0], s.shape[0], problem.q
        self.alpha = problem.mode.alpha

        ctx = () if problem.context is None else (problem.context(data, self.beta, grid),)
        c = np.asarray(problem.forcing(t, data, self.beta, *ctx), dtype=np.float64).reshape(n, self.j1, self.q)
        _check_finite(c, "forcing", t)
        if problem.weight is None:
            w = np.ones((n, self.j1))
        else:
            w = np.asarray(problem.weight(t, data, self.beta, *ctx), dtype=np.float64).reshape(n, self.j1)
            _check_finite(w, "b-term weight", t)

        kern = problem.kernel
        self.kind = {DenseKernel: "dense", SeparableKernel: "separable", PointwiseKernel: "pointwise"}.get(
            type(kern), "zero"
        )
        vol = grid.inner_weights
        if self.kind == "dense":
            k = np.asarray(kern.fn(s, t, data, self.beta, *ctx), dtype=np.float64).reshape(n, self.j1, self.j2)
            _check_finite(k, "kernel", t)
            self._k = k * vol
        elif self.kind == "separable":
            tf = np.asarray(kern.t_factor(t, data, self.beta, *ctx), dtype=np.float64).reshape(n, self.j1, -1)
            sf = np.asarray(kern.s_factor(s, data, self.beta, *ctx), dtype=np.float64).reshape(n, self.j2, -1)
            _check_finite(tf, "kernel", t)
            _check_finite(sf, "kernel", s)
            self._tf, self._sf = tf, sf * vol[:, None]
        elif self.kind == "pointwise":
            k = np.asarray(kern.fn(t, data, self.beta, *ctx), dtype=np.float64).reshape(n, self.j1)
            _check_finite(k, "kernel", t)
            self._kp = k

        self.pooled = problem.pooled
        self.shared = problem.covariates is None
        if self.pooled:
            # collapse the observation axis once; the loss only sees averages
            self.c = c.mean(axis=0)[None]
            self.w = w.mean(axis=0)[None]
            if self.kind == "dense":
                self._k = self._k.mean(axis=0)[None]
            elif self.kind == "separable":
                r = self._tf.shape[2]
                self._tflat = self._tf.transpose(1, 0, 2).reshape(self.j1, n * r) / n
                self._sflat = self._sf.transpose(1, 0, 2).reshape(self.j2, n * r)
            elif self.kind == "pointwise":
                self._kp = self._kp.mean(axis=0)[None]
        else:
            self.c, self.w = c, w

        # network inputs for b at the inner and outer nodes
        if self.shared:
            self.cov = None
            self.inputs_s = s if problem.uses_inner_grid else None
            self.inputs_t = t
        else:
            cov = np.asarray(problem.covariates(data), dtype=np.float64).reshape(n, -1)
            self.cov = cov
            self.inputs_s = self._pair_inputs(s, cov) if problem.uses_inner_grid else None
            self.inputs_t = self._pair_inputs(t, cov)

    @staticmethod
    def _pair_inputs(nodes, cov):
        n, j = cov.shape[0], nodes.shape[0]
        out = np.empty((n, j, nodes.shape[1] + cov.shape[1]))
        out[:, :, : nodes.shape[1]] = nodes[None]
        out[:, :, nodes.shape[1]:] = cov[:, None, :]
        return out.reshape(n * j, -1)

    # -- operator pieces; ``bs``/``bt`` are (M, J2, k)/(M, J1, k) with M = 1 or N

    def integral(self, bs, bt, obs=None):
        if self.kind == "zero":
            return 0.0
        if self.kind == "pointwise":
            return self._sel(self._kp, obs)[..., None] * bt
        if self.pooled and self.kind == "separable":
            return (self._tflat @ (self._sflat.T @ bs[0]))[None]
        if self.kind == "dense":
            return self._sel(self._k, obs) @ bs
        tf, sf = self._sel(self._tf, obs), self._sel(self._sf, obs)
        return tf @ (np.swapaxes(sf, 1, 2) @ bs)

    def integral_adjoint(self, g, obs=None):
        """Return ``(d/dbs, d/dbt)`` of ``sum(g * integral(bs, bt))``."""
        if self.kind == "zero":
            return None, 0.0
        if self.kind == "pointwise":
            return None, self._sel(self._kp, obs)[..., None] * g
        if self.pooled and self.kind == "separable":
            return (self._sflat @ (self._tflat.T @ g[0]))[None], 0.0
        if self.kind == "dense":
            return np.swapaxes(self._sel(self._k, obs), 1, 2) @ g, 0.0
        tf, sf = self._sel(self._tf, obs), self._sel(self._sf, obs)
        return sf @ (np.swapaxes(tf, 1, 2) @ g), 0.0

    def _sel(self, arr, obs):
        return arr if obs is None or self.pooled else arr[obs]

    def residual(self, bs, bt, obs=None):
        """Residual array ``(M, J1, q)``; pooled problems return the sample mean (M = 1)."""
        c = self._sel(self.c, obs)
        w = self._sel(self.w, obs)
        return self.integral(bs, bt, obs) - c - self.alpha * w[..., None] * bt

    def residual_adjoint(self, g, obs=None):
        gs, gt_int = self.integral_adjoint(g, obs)
        gt = gt_int - self.alpha * self._sel(self.w, obs)[..., None] * g
        return gs, gt

    # -- evaluating b on the node sets

    def b_values(self, b: SolutionFn, obs=None):
        """``(bs, bt)`` arrays shaped ``(M, J, q)`` for solution ``b``."""
        if self.shared:
            bs = b(self.inputs_s)[None] if self.inputs_s is not None else None
            bt = b(self.inputs_t)[None]
            return bs, bt
        ns = self.n_obs if obs is None else len(obs)
        bs = bt = None
        if self.inputs_s is not None:
            bs = b(self._rows(self.inputs_s, self.j2, obs)).reshape(ns, self.j2, -1)
        bt = b(self._rows(self.inputs_t, self.j1, obs)).reshape(ns, self.j1, -1)
        return bs, bt

    def _rows(self, inputs, j, obs):
        if obs is None:
            return inputs
        return inputs.reshape(self.n_obs, j, -1)[obs].reshape(len(obs) * j, -1)

    def loss(self, b: SolutionFn) -> float:
        bs, bt = self.b_values(b)
        r = self.residual(bs, bt)
        return float(np.sum(r * r) / (r.shape[0] * self.j1))


def discretize(p: FredholmProblem, data, beta, grid: QuadratureGrid) -> Discretization:
    return Discretization(p, data, beta, grid)


# ---------------------------------------------------------------- residual and loss


def residual(p: FredholmProblem, b: SolutionFn, t, data, beta, grid: QuadratureGrid) -> np.ndarray:
    """Residual at outer point(s) ``t`` for every observation in ``data``.

    Returns ``(len(data), n_t, q)``; a single point ``t`` and a one-row data
    set give a length-``q`` vector.
    """
    t_arr = np.asarray(t, dtype=np.float64)
    single = t_arr.ndim <= 1 and t_arr.size == p.t_domain.dim
    t_arr = t_arr.reshape(-1, p.t_domain.dim)
    if not p.t_domain.contains(t_arr).all():
        raise InputShapeError(f"t outside the t-domain {p.t_domain}")
    local = QuadratureGrid(p.t_domain, p.s_domain, t_arr, grid.inner_points, grid.inner_weights)
    unpooled = p if not p.pooled else _unpooled(p)
    disc = Discretization(unpooled, data, beta, local)
    bs, bt = disc.b_values(b)
    r = disc.residual(bs, bt)
    if single and r.shape[0] == 1:
        return r[0, 0]
    return r


def _unpooled(p: FredholmProblem) -> FredholmProblem:
    from dataclasses import replace

    return replace(p, pooled=False)


def loss_K(p: FredholmProblem, b: SolutionFn, data, beta, grid: QuadratureGrid) -> float:
    """Mean squared residual over observations and outer nodes."""
    if len(data) == 0:
        raise InputShapeError("loss_K needs at least one observation")
    return Discretization(p, data, beta, grid).loss(b)


# ---------------------------------------------------------------- polynomial solver


def default_basis(p: FredholmProblem, degree: int, covariate_bounds=None) -> MonomialBasis:
    bounds = list(zip(p.t_domain.lower, p.t_domain.upper))
    if p.n_covariates:
        if covariate_bounds is None:
            raise ConfigurationError("covariate bounds are needed for the polynomial basis", key="solver")
        bounds += list(covariate_bounds)
    return total_degree_basis(bounds, degree)


def solve_polynomial(
    p: FredholmProblem,
    data,
    beta,
    grid: QuadratureGrid,
    degree: int | None = None,
    *,
    basis: MonomialBasis | None = None,
    system: Discretization | None = None,
) -> PolynomialCoefficients:
    """Least-squares collocation: minimize ``loss_K`` over basis coefficients.

    Uses LAPACK ``gelsy`` (complete orthogonal factorization with column
    pivoting), which returns the minimum-norm minimizer when the design is
    rank deficient; a :class:`RankDeficiencyWarning` is issued in that case.
    """
    if basis is None:
        if degree is None:
            raise ConfigurationError("give a degree or a basis", key="degree")
        basis = default_basis(p, degree)
    if basis.input_dim != p.b_input_dim:
        raise InputShapeError(f"basis has {basis.input_dim} inputs, b takes {p.b_input_dim}")
    disc = system if system is not None else Discretization(p, data, beta, grid)
    phi = ClosedForm(basis.evaluate, basis.input_dim, basis.size)
    ps, pt = disc.b_values(phi)
    # residual is linear: r = A c - C, so A = residual(phi) + C column by column
    a = disc.integral(ps, pt) - disc.alpha * disc.w[..., None] * pt
    a = np.broadcast_to(a, (disc.c.shape[0], disc.j1, basis.size)).reshape(-1, basis.size)
    rhs = disc.c.reshape(-1, disc.q)
    if a.shape[0] < basis.size:
        raise ConfigurationError(
            f"{a.shape[0]} collocation rows cannot determine {basis.size} coefficients", key="degree"
        )
    coeffs, _, rank, _ = scipy.linalg.lstsq(a, rhs, lapack_driver="gelsy", check_finite=False)
    if rank < basis.size:
        warnings.warn(
            f"collocation design has rank {rank} < {basis.size}; using the minimum-norm solution",
            RankDeficiencyWarning,
            stacklevel=2,
        )
    return PolynomialCoefficients(basis, np.asarray(coeffs).reshape(basis.size, disc.q), int(rank))


# ---------------------------------------------------------------- neural solver


def default_batch(n_obs: int) -> int:
    """Full batch up to 1000 observations, else 256 (observation, node) pairs."""
    return 0 if n_obs <= 1000 else 256


class NeuralTrainer:
    """Adam on ``loss_K`` for one frozen discretization."""

    def __init__(self, disc: Discretization):
        self.disc = disc
        d = disc
        if d.shared:
            parts = [x for x in (d.inputs_s, d.inputs_t) if x is not None]
            self._full_inputs = np.ascontiguousarray(np.concatenate(parts))
        else:
            self._full_inputs = None

    def _inputs(self, obs):
        d = self.disc
        if d.shared:
            return self._full_inputs
        parts = []
        if d.inputs_s is not None:
            parts.append(d._rows(d.inputs_s, d.j2, obs))
        parts.append(d._rows(d.inputs_t, d.j1, obs))
        return np.ascontiguousarray(np.concatenate(parts))

    def _split(self, y, m):
        d = self.disc
        ns = d.j2 * m if d.inputs_s is not None else 0
        bs = y[:ns].reshape(m, d.j2, -1) if ns else None
        bt = y[ns:].reshape(m, d.j1, -1)
        return bs, bt

    def value_and_grad(self, w: NetworkWeights, obs=None, mask=None):
        """Batch loss and its flat gradient.

        ``obs`` restricts to a subset of observations, ``mask`` (len(obs), J1)
        to selected (observation, node) pairs within it.
        """
        d = self.disc
        m = 1 if d.shared else (d.n_obs if obs is None else len(obs))
        x = self._inputs(obs)
        acts = forward_cached(w, x)
        bs, bt = self._split(acts[-1], m)
        r = d.residual(bs, bt, obs)
        if mask is not None:
            r = r * mask[..., None]
            count = mask.sum()
        else:
            count = r.shape[0] * d.j1
        loss = float(np.sum(r * r) / count)
        g = (2.0 / count) * r
        gs, gt = d.residual_adjoint(g, obs)
        if d.shared:
            up = [gt.sum(axis=0)]
            if d.inputs_s is not None:
                up.insert(0, gs.sum(axis=0))
        else:
            up = [np.broadcast_to(gt, (m, d.j1, d.q)).reshape(-1, d.q)]
            if d.inputs_s is not None:
                up.insert(0, gs.reshape(-1, d.q))
        upstream = np.ascontiguousarray(np.concatenate(up))
        return loss, backward_flat(w, acts, upstream)

    def full_loss(self, w: NetworkWeights) -> float:
        return self.disc.loss(NeuralSolution(w))

    def sample_batch(self, rng: Rng, batch: int):
        d = self.disc
        if d.pooled or d.n_obs == 1:
            rows = np.unique(rng.integers(batch, d.j1))
            mask = np.zeros((1, d.j1))
            mask[0, rows] = 1.0
            return None, mask
        pair = rng.integers(batch, d.n_obs * d.j1)
        obs, pos = np.unique(pair // d.j1, return_inverse=True)
        mask = np.zeros((len(obs), d.j1))
        mask[pos, pair % d.j1] = 1.0
        return obs, mask

    def run(self, w, st, steps, lr, batch=0, rng: Rng | None = None):
        if steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {steps}", key="steps")
        if batch and rng is None:
            rng = Rng(0)
        flat = w.flat
        for step in range(steps):
            if batch:
                obs, mask = self.sample_batch(rng, batch)
                loss, g = self.value_and_grad(w, obs, mask)
            else:
                loss, g = self.value_and_grad(w)
            if not (np.isfinite(loss) and np.all(np.isfinite(g))):
                raise NumericError(f"non-finite inner loss at step {step}")
            flat, st = adam_update(flat, g, st, lr)
            w = NetworkWeights(w.arch, flat)
        return w, st, self.full_loss(w)


def solve_neural_steps(
    p: FredholmProblem,
    data,
    beta,
    grid: QuadratureGrid,
    w: NetworkWeights,
    st: AdamState,
    steps: int,
    lr: float,
    batch: int = 0,
    *,
    rng: Rng | None = None,
    system: Discretization | None = None,
):
    """``steps`` Adam updates of the network on ``loss_K`` with beta and grid fixed.

    ``batch = 0`` uses every (observation, node) pair; otherwise each step
    draws ``batch`` pairs with replacement from ``rng``.  Returns the new
    weights, optimizer state and the full-batch loss after the last step.
    """
    if w.arch.input_dim != p.b_input_dim or w.arch.output_dim != p.q:
        raise InputShapeError(
            f"network maps {w.arch.input_dim}->{w.arch.output_dim}, problem needs {p.b_input_dim}->{p.q}"
        )
    if lr < 0:
        raise ConfigurationError(f"lr must be >= 0, got {lr}", key="lr")
    disc = system if system is not None else Discretization(p, data, beta, grid)
    return NeuralTrainer(disc).run(w, st, steps, lr, batch, rng)
