import math

import numpy as np
import pytest
from scipy.special import expit

from fredholm_se.bilevel import dna_se, evaluate_b, mean_psi
from fredholm_se.errors import ConfigurationError, InputShapeError, NumericError
from fredholm_se.examples import ExampleBundle, get_analytic, get_bundle, mnar_bundle, sens_bundle, shift_bundle
from fredholm_se.examples import mnar, sensitivity as sens, shift
from fredholm_se.examples.analytic import NEURAL_RECIPE, TOY_DATA, analytic_problems
from fredholm_se.fredholm import (
    ClosedForm,
    Discretization,
    NeuralSolution,
    PolynomialSolution,
    loss_K,
    solve_neural_steps,
    solve_polynomial,
)
from fredholm_se.nn import AdamState, NetworkArch, init_weights
from fredholm_se.quadrature import gauss_legendre_grid, midpoint_grid, sample_grid

# Independent oracles (scipy quadrature, numpy Generator Monte Carlo, mpmath),
# computed once and frozen here.
MNAR_MISSING_RATE = 0.30488734508922044  # 1 - E expit(1 + Y), Y ~ N(0, 1.0625), scipy.integrate.quad
MNAR_C_AT_ZERO = (-0.2340808993609956, -0.1170404496804978)  # trapezoid, 200001 nodes on [-5, 5]
SENS_P_A1 = 0.536507  # 1e6 draws of the sensitivity design
SHIFT_BETA_MC = 0.1369759560081475  # 1e6 draws, A = 0 rows, standard error 5.6e-4
V_2_0 = 0.0125155421736767274125313567987  # mpmath

ZERO_B = lambda q: ClosedForm(lambda x: np.zeros((x.shape[0], q)), 1, q)


# ---------------------------------------------------------------- MNAR


def test_gen_mnar_rates_and_determinism():
    d = mnar.gen_mnar(100_000, 3)
    assert abs((1 - d.a.mean()) - MNAR_MISSING_RATE) <= 0.01
    assert abs(d.x.mean() - 0.5) <= 0.01
    assert abs(d.x.var() - 0.25) <= 0.01
    again = mnar.gen_mnar(100_000, 3)
    assert np.array_equal(d.y_full, again.y_full) and np.array_equal(d.a, again.a)
    assert np.all(np.isnan(d.y[d.a == 0])) and np.array_equal(d.y[d.a == 1], d.y_full[d.a == 1])
    with pytest.raises(InputShapeError):
        mnar.gen_mnar(0, 1)


def test_mnar_working_model_in_unit_interval():
    e = mnar.working_eta2(np.linspace(-5, 5, 1001))
    assert np.all((e > 0) & (e < 1))


def test_mnar_kernel_positive(rng):
    p = mnar.mnar_problem()
    data = mnar.gen_mnar(50, 1)
    grid = sample_grid(p.t_domain, p.s_domain, 30, 40, seed=2)
    beta = np.array(mnar.BETA_STAR) + rng.uniform(-2, 2, size=2)
    ig = p.context(data, beta, grid)
    k = np.einsum("nlr,njr->nlj", p.kernel.t_factor(grid.outer_points, data, beta, ig),
                  p.kernel.s_factor(grid.inner_points, data, beta, ig))
    assert np.all(k > 0)


def test_mnar_forcing_matches_trapezoid_oracle():
    p = mnar.mnar_problem()
    data = mnar.MnarData(np.array([0.5]), np.array([1]), np.array([0.0]))
    grid = midpoint_grid(p.t_domain, p.s_domain, 1, 20_000)
    grid = type(grid)(p.t_domain, p.s_domain, np.array([[0.0]]), grid.inner_points)
    beta = np.array(mnar.BETA_STAR)
    c = p.forcing(grid.outer_points, data, beta, p.context(data, beta, grid))
    assert np.allclose(c[0, 0], MNAR_C_AT_ZERO, atol=1e-4, rtol=0)


@pytest.mark.invariant
def test_mnar_complete_data_score_identity():
    d = mnar.gen_mnar(100_000, 11)
    full = mnar.MnarData(d.x, np.ones_like(d.a), d.y_full)
    psi = mnar.MnarEquation()
    grid = sample_grid(mnar.Y_DOMAIN, mnar.Y_DOMAIN, 10, 10, seed=0)
    vals = psi(full, np.array(mnar.BETA_STAR), {"y": np.zeros((len(full), 2)), "s": np.zeros((10, 2))}, grid)
    mean = vals.mean(axis=0)
    se = vals.std(axis=0) / math.sqrt(len(full))
    assert np.all(np.abs(mean) <= 0.02)
    assert np.all(np.abs(mean) <= 3 * se)


def test_mnar_comparators():
    noiseless = mnar.gen_mnar(200, 5, noise_sd=0.0)
    assert np.allclose(mnar.mnar_oracle(noiseless), mnar.BETA_STAR, atol=1e-10, rtol=0)
    big = mnar.gen_mnar(100_000, 7)
    assert np.all(np.abs(mnar.mnar_oracle(big) - mnar.BETA_STAR) <= 0.02)
    # population complete-case intercept is about 0.472 (4e6-draw oracle)
    assert abs(mnar.mnar_biased(big)[0] - 0.25) > 0.1
    with pytest.raises(NumericError):
        mnar.mnar_oracle(mnar.MnarData(np.ones(5), np.ones(5, dtype=int), np.arange(5.0), np.arange(5.0)))
    with pytest.raises(InputShapeError):
        mnar.mnar_oracle(big.estimator_view())


def test_mnar_denominator_guard():
    p = mnar.mnar_problem(lambda y: np.ones_like(np.asarray(y, dtype=float)))
    data = mnar.gen_mnar(5, 1)
    grid = sample_grid(p.t_domain, p.s_domain, 5, 5, seed=0)
    with pytest.raises(NumericError):
        Discretization(p, data, np.array(mnar.BETA_STAR), grid)


def test_mnar_csv_roundtrip_strips_truth():
    d = mnar.gen_mnar(20, 2)
    import csv
    import io

    text = d.to_csv()
    assert text.splitlines()[0] == "x,a,y,_truth_y_full"
    rows = list(csv.DictReader(io.StringIO(text)))
    view = mnar.MnarData.from_rows(rows)
    assert view.y_full is None
    assert np.array_equal(view.x, d.x) and np.array_equal(view.a, d.a)
    kept = mnar.MnarData.from_rows(rows, keep_truth=True)
    assert np.array_equal(kept.y_full, d.y_full)


@pytest.mark.invariant
def test_hidden_variable_hygiene():
    """Estimators give the same answer when the hidden columns are scrambled."""
    d = mnar.gen_mnar(300, 4)
    poisoned = mnar.MnarData(d.x, d.a, d.y, np.where(d.a == 1, d.y_full, 1e6))
    b = mnar_bundle()
    grid = sample_grid(mnar.Y_DOMAIN, mnar.Y_DOMAIN, 50, 50, seed=1)
    assert d.estimator_view().y_full is None
    assert np.array_equal(b.comparators["biased"](d, grid), b.comparators["biased"](poisoned, grid))
    beta = np.array([0.3, -0.4])
    bv = evaluate_b(b.psi, ZERO_B(2), d, grid)
    assert np.array_equal(mean_psi(b.psi, beta, d, bv, grid), mean_psi(b.psi, beta, poisoned.estimator_view(), bv, grid))

    s = sens.gen_sens(200, 4)
    assert s.estimator_view().u_true is None
    s2 = sens.SensData(s.x, s.a, s.y, s.u_true + 100.0)
    sg = sample_grid(sens.U_DOMAIN, sens.U_DOMAIN, 20, 50, seed=1)
    assert sens_bundle().comparators["exact"](s, sg) == sens_bundle().comparators["exact"](s2, sg)


# ---------------------------------------------------------------- sensitivity


def test_gen_sens_design():
    d = sens.gen_sens(100_000, 3)
    assert d.x.shape == (100_000, 10)
    assert np.all((d.x > 0) & (d.x < 1))
    assert abs(d.a.mean() - SENS_P_A1) <= 0.01
    assert np.array_equal(d.y, sens.gen_sens(100_000, 3).y)


def test_cell_probabilities_match_brute_force(rng):
    u = rng.uniform(-0.5, 0.5, 7)
    lin = rng.normal(size=5)
    beta = 1.3
    probs = sens.cell_probs(u, lin, beta)
    for i in range(5):
        for j in range(7):
            for k, (y, a) in enumerate(sens.CELLS):
                pa = expit(3 * lin[i] + 2 * u[j])
                py = expit(4 * lin[i] + beta * a + 2 * u[j])
                want = (py if y else 1 - py) * (pa if a else 1 - pa)
                assert probs[i, j, k] == pytest.approx(want, rel=1e-14)
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-15)


def test_forcing_four_term_sum_matches_enumeration(rng):
    data = sens.gen_sens(6, 2)
    grid = sample_grid(sens.U_DOMAIN, sens.U_DOMAIN, 8, 30, seed=3)
    p = sens.sens_problem()
    beta = np.array([1.7])
    ig = p.context(data, beta, grid)
    c = p.forcing(grid.outer_points, data, beta, ig)[..., 0]
    lin = sens.alternating_sum(data.x)
    for i in range(6):
        for l, t in enumerate(grid.outer_points[:, 0]):
            total = 0.0
            for y in (0, 1):
                for a in (0, 1):
                    k = y + 2 * a
                    pa = expit(3 * lin[i] + 2 * t)
                    py = expit(4 * lin[i] + beta[0] * a + 2 * t)
                    total += (py if y else 1 - py) * (pa if a else 1 - pa) * ig.m[i, k]
            assert c[i, l] == pytest.approx(total, rel=1e-12)


def test_working_score_matches_finite_differences(rng):
    h = 1e-6
    for _ in range(50):
        u = rng.uniform(-0.5, 0.5, 1)
        lin = rng.normal(size=1)
        beta = rng.uniform(0, 4)
        score = sens.working_score(u, lin, beta)[0, 0]
        for k, (y, a) in enumerate(sens.CELLS):
            fd = (sens.working_loglik(y, a, u, lin, beta + h) - sens.working_loglik(y, a, u, lin, beta - h))[0] / (2 * h)
            assert abs(score[k] - fd) <= 1e-6 * max(abs(fd), 1e-3)


def test_sens_kernel_nonnegative_and_guards(rng):
    p = sens.sens_problem()
    data = sens.gen_sens(20, 1)
    grid = sample_grid(p.t_domain, p.s_domain, 15, 25, seed=0)
    beta = np.array([2.0 + rng.uniform(-2, 2)])
    ig = p.context(data, beta, grid)
    k = np.einsum("nlr,njr->nlj", p.kernel.t_factor(grid.outer_points, data, beta, ig),
                  p.kernel.s_factor(grid.inner_points, data, beta, ig))
    assert np.all(k >= 0)
    with pytest.raises(ConfigurationError):
        sens_bundle(lam=-1.0)
    zero_eta = lambda u, x=None: np.zeros_like(np.asarray(u, dtype=float))
    with pytest.raises(NumericError):
        sens.sens_integrals(data, 2.0, grid, zero_eta)


def test_sens_exact_solution_solves_discretized_equation():
    data = sens.gen_sens(10, 5).estimator_view()
    p = sens.sens_problem()
    grid = sample_grid(p.t_domain, p.s_domain, 200, 200, seed=4)
    # the exact solution lives in the span of the cell probabilities, so
    # collocating on the inner nodes makes the residual vanish there
    grid = type(grid)(p.t_domain, p.s_domain, grid.inner_points, grid.inner_points)
    b = sens.sens_exact_solution(data, 2.0, grid)
    assert loss_K(p, b, data, np.array([2.0]), grid) <= 1e-20


@pytest.mark.invariant
def test_sens_working_score_identity():
    """Mean working score under the working joint law, simulated directly, is ~0."""
    g = np.random.default_rng(31)
    n = 100_000
    x = g.random((n, 10))
    u = g.uniform(-0.5, 0.5, n)
    lin = sens.alternating_sum(x)
    a = (g.random(n) < expit(3 * lin + 2 * u)).astype(int)
    y = (g.random(n) < expit(4 * lin + sens.BETA_STAR * a + 2 * u)).astype(int)
    # score of each draw, looked up from the package's per-cell table
    vals = np.empty(n)
    for lo in range(0, n, 1000):
        sl = slice(lo, lo + 1000)
        table = sens.working_score(u[sl], lin[sl], sens.BETA_STAR)  # (m, m, 4): pairs on the diagonal
        m = table.shape[0]
        vals[sl] = table[np.arange(m), np.arange(m), (y + 2 * a)[sl]]
    assert abs(vals.mean()) <= 3 * vals.std() / math.sqrt(n)


@pytest.mark.invariant
def test_binary_sum_exactness_against_sampling():
    """4-term sums over (y, a) agree with 1e6-draw sampling of the cells within 3 sigma."""
    g = np.random.default_rng(17)
    u, lin, beta = np.array([0.2]), np.array([0.4]), 2.0
    probs = sens.cell_probs(u, lin, beta)[0, 0]
    score = sens.working_score(u, lin, beta)[0, 0]
    exact = float(probs @ score)
    draws = g.choice(4, size=1_000_000, p=probs)
    sample = score[draws]
    assert abs(sample.mean() - exact) <= 3 * sample.std() / 1000.0
    f = np.array([0.3, -1.0, 2.0, 0.5])
    assert abs(f[draws].mean() - probs @ f) <= 3 * f[draws].std() / 1000.0


# ---------------------------------------------------------------- shift


def test_gen_shift_support_and_determinism():
    d = shift.gen_shift(10_000, 2)
    assert np.all((d.x >= 1) & (d.x <= 3))
    assert set(np.unique(d.a)) <= {0, 1} and set(np.unique(d.y)) <= {0, 1}
    assert np.array_equal(d.y, shift.gen_shift(10_000, 2).y)


def test_v_formula():
    e = 1.0 / (1.0 + math.exp(-2.0))
    assert shift.v(2.0, 0) == pytest.approx(V_2_0, abs=1e-12)
    assert shift.v(2.0, 0) == pytest.approx(e * (1 - e) * (1 - e), abs=1e-15)


def test_kappa_paths_agree():
    x = np.linspace(1, 3, 401)
    assert np.allclose(shift.kappa(x), shift.kappa_simplified(x), atol=1e-12, rtol=0)


def test_zeta_star_solves_pointwise_equation():
    p = shift.shift_problem()
    grid = sample_grid(p.t_domain, p.s_domain, 1000, 1, seed=0)
    assert loss_K(p, shift.zeta_exact(), TOY_DATA, np.zeros(1), grid) <= 1e-28


def test_neural_zeta_close_to_closed_form():
    b = shift_bundle()
    data = b.generate(2000, 1)
    rep = dna_se(b.problem, b.psi, data, b.arch, b.config.with_(j1=200, j2=200, lr_omega=1e-3, max_iter=3000))
    x = np.linspace(1, 3, 1001)[:, None]
    assert np.max(np.abs(NeuralSolution(rep.weights)(x) - shift.zeta_exact()(x))) <= 5e-2


def test_beta_star_shift():
    value = shift.beta_star_shift()
    assert 0.0 < value < 1.0
    assert abs(shift.beta_star_shift(40001) - value) <= 1e-8
    assert abs(SHIFT_BETA_MC - value) <= 0.003
    d = shift.gen_shift(1_000_000, 8)
    target = d.a == 0
    assert abs(shift.loss_value(d.x[target], d.y[target]).mean() - value) <= 0.003
    with pytest.raises(InputShapeError):
        shift.beta_star_shift(4)


def test_shift_equation_root_is_plug_in():
    d = shift.gen_shift(500, 3)
    z = shift.zeta_exact()
    beta = shift.beta_hat_from_zeta(d, z)
    psi = shift.ShiftEquation()
    assert abs(mean_psi(psi, [beta], d, evaluate_b(psi, z, d, None))[0]) <= 1e-15


def test_mu_guard():
    with pytest.raises(NumericError):
        shift.mu(np.array([2.0, 40.0]))


# ---------------------------------------------------------------- analytic fixtures and registry


def test_analytic_solutions_have_tiny_residual():
    for fx in analytic_problems():
        grid = gauss_legendre_grid(fx.problem.t_domain, fx.problem.s_domain, 2000, 50)
        assert loss_K(fx.problem, ClosedForm(fx.solution, 1, 1), TOY_DATA, np.zeros(1), grid) <= 1e-24


def test_analytic_solvers_meet_targets():
    probe = np.linspace(0, 1, 1001)[:, None]
    for fx in analytic_problems():
        grid = gauss_legendre_grid(fx.problem.t_domain, fx.problem.s_domain, 200, 200)
        poly = PolynomialSolution(solve_polynomial(fx.problem, TOY_DATA, np.zeros(1), grid, 3))
        assert np.max(np.abs(poly(probe) - fx.solution(probe))) <= 1e-8
        arch = NetworkArch(1, 1, NEURAL_RECIPE["width"], NEURAL_RECIPE["depth"])
        w = init_weights(arch, 0)
        w, _, loss = solve_neural_steps(fx.problem, TOY_DATA, np.zeros(1), grid, w, AdamState.for_weights(w),
                                        NEURAL_RECIPE["steps"], NEURAL_RECIPE["lr"])
        assert loss <= 1e-4


@pytest.mark.invariant
@pytest.mark.parametrize("name", ["mnar", "sensitivity", "shift"])
def test_bundle_callables_finite_on_probe(name, rng):
    b = get_bundle(name)
    p = b.problem
    n, j = (100, 100) if name != "sensitivity" else (10, 1000)
    data = b.generate(n, 3)
    view = data.estimator_view()
    grid = sample_grid(p.t_domain, p.s_domain, j, j, seed=5)
    for _ in range(3):
        beta = np.array(b.beta_star) + rng.uniform(-2, 2, size=b.q)
        disc = Discretization(p, view, beta, grid)
        vals = [disc.c, disc.w]
        if p.kernel is not None and hasattr(p.kernel, "t_factor"):
            vals += [disc._tf, disc._sf]
        for v in vals:
            assert np.all(np.isfinite(v))
        bv = evaluate_b(b.psi, ClosedForm(lambda x: np.ones((x.shape[0], b.q)), p.b_input_dim, b.q), view, grid)
        assert np.all(np.isfinite(b.psi(view, beta, bv, grid)))


def test_registry():
    assert get_bundle("toy").beta_star == (1.0,)
    with pytest.raises(ConfigurationError):
        get_bundle("nope")
    with pytest.raises(ConfigurationError):
        get_analytic("nope")
    b = mnar_bundle()
    with pytest.raises(ConfigurationError):
        ExampleBundle(**{**b.__dict__, "beta_star": (0.0,)})
    with pytest.raises(ConfigurationError):
        ExampleBundle(**{**b.__dict__, "arch": NetworkArch(2, 2, 5, 3)})
