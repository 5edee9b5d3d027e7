"""One test per acceptance criterion; each prints a PASS/FAIL line.

The lines are repeated in an "acceptance criteria" section at the end of the
pytest run.  Criteria that are known not to be met at desk scale record FAIL
and are marked xfail with the diagnosis, so the rest of the suite stays green.
"""

import dataclasses
import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from fredholm_se import harness
from fredholm_se.bilevel import dna_se
from fredholm_se.cli import main
from fredholm_se.examples import mnar_bundle, sens_bundle, shift
from fredholm_se.fredholm import NeuralSolution, SecondKind, Tikhonov, residual
from fredholm_se.harness import config_from_dict, simulate, summarize
from fredholm_se.nn import NetworkArch, NetworkWeights, backprop, forward
from fredholm_se.quadrature import sample_grid

TESTS = Path(__file__).resolve().parent

MNAR_SADDLE = (
    "MNAR neural estimate does not settle at the root: with b fitted to the current beta, "
    "the root is a saddle of the alternating gradient steps (the inner fit's response to beta "
    "flips the sign of one outer direction), so beta drifts along the unstable direction for the "
    "full 2000 iterations and the bias stays around 0.1-0.2 in beta_2; see the decisions ledger"
)


def _fmt(v):
    return "(" + ", ".join(f"{x:+.4f}" for x in np.atleast_1d(v)) + ")"


# ---------------------------------------------------------------- 1. gradient oracle


def test_c1_gradient_oracle(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    ok = True
    for case in range(20):
        rng = np.random.default_rng(7000 + case)
        arch = NetworkArch(int(rng.integers(1, 4)), int(rng.integers(1, 3)),
                           int(rng.integers(2, 17)), int(rng.integers(1, 5)))
        w = NetworkWeights(arch, rng.normal(scale=0.7, size=arch.n_params))
        x = rng.normal(size=(4, arch.input_dim))
        g = rng.normal(size=(4, arch.output_dim))
        exact = backprop(w, x, g).flat
        h = 1e-6
        fd = np.empty(arch.n_params)
        for k in range(arch.n_params):
            e = np.zeros(arch.n_params)
            e[k] = h
            fd[k] = np.sum(g * (forward(NetworkWeights(arch, w.flat + e), x)
                                - forward(NetworkWeights(arch, w.flat - e), x))) / (2 * h)
        # relative error per coordinate, with an absolute floor for coordinates whose gradient is ~0
        rel = np.abs(exact - fd) / np.maximum(np.abs(fd), 1e-3)
        worst = max(worst, float(rel.max()))
        ok &= bool(np.all(np.abs(exact - fd) <= 1e-5 * np.abs(fd) + 1e-8))
    elapsed = time.perf_counter() - t0
    verdict(1, ok and elapsed < 10, f"20 networks, worst rel err {worst:.2e}, {elapsed:.1f} s")


# ---------------------------------------------------------------- 2. analytic suite


def test_c2_analytic_suite(verdict):
    t0 = time.perf_counter()
    parts, ok = [], True
    for degree in (1, 2, 3, 5):
        r = harness.solve_analytic("analytic:degenerate", f"poly:{degree}")
        ok &= r["loss_K"] <= 1e-12 and r["sup_error"] <= 1e-8
        parts.append(f"poly:{degree} {r['loss_K']:.1e}/{r['sup_error']:.1e}")
    for name in ("degenerate", "zero_kernel", "tikhonov"):
        r = harness.solve_analytic(f"analytic:{name}", "neural")
        ok &= r["loss_K"] <= 1e-4 and r["sup_error"] <= 1e-2 and r["steps"] <= 5000
        parts.append(f"neural/{name} {r['loss_K']:.1e}/{r['sup_error']:.1e}")
    elapsed = time.perf_counter() - t0
    verdict(2, ok and elapsed < 60, f"loss_K/sup: {'; '.join(parts)}; {elapsed:.1f} s")


# ---------------------------------------------------------------- 3. unified residual


def _alpha_one_tikhonov():
    mode = Tikhonov(1.0)
    # alpha = -lambda, so alpha = 1 needs lambda = -1, which the public constructor rejects
    object.__setattr__(mode, "lam", -1.0)
    return mode


def test_c3_unified_residual(verdict):
    mode = _alpha_one_tikhonov()
    assert mode.alpha == SecondKind().alpha == 1.0
    evaluations, same = 0, True
    rng = np.random.default_rng(33)
    for bundle in (mnar_bundle(), sens_bundle()):
        p = bundle.problem
        first = dataclasses.replace(p, mode=SecondKind())
        tik = dataclasses.replace(p, mode=mode)
        for trial in range(5):
            full = bundle.generate(20, 100 + trial)
            data = full.estimator_view()
            grid = sample_grid(p.t_domain, p.s_domain, 100, 200, seed=trial)
            beta = np.array(bundle.beta_star) + rng.uniform(-0.5, 0.5, bundle.q)
            arch = NetworkArch(p.b_input_dim, p.q, 5, 2)
            b = NeuralSolution(NetworkWeights(arch, rng.normal(size=arch.n_params)))
            r1 = residual(first, b, grid.outer_points, data, beta, grid)
            r2 = residual(tik, b, grid.outer_points, data, beta, grid)
            same &= r1.shape == r2.shape and bool(np.array_equal(r1, r2))
            evaluations += r1.size
    verdict(3, same and evaluations >= 10_000,
            f"{evaluations} residual entries, second-kind vs alpha = 1 Tikhonov bit-identical: {same}")


# ---------------------------------------------------------------- 4, 7, 8. MNAR desk scale


@pytest.fixture(scope="module")
def mnar_sweep(tmp_path_factory):
    cfg = config_from_dict({"example": "mnar", "n": 500, "reps": 20, "base_seed": 1})
    out = tmp_path_factory.mktemp("mnar") / "rows.csv"
    t0 = time.perf_counter()
    rows = simulate(cfg, str(out))
    elapsed = time.perf_counter() - t0
    summary = {s.solver: s for s in summarize(out.read_text())}
    return cfg, rows, summary, elapsed


@pytest.mark.slow
def test_c4_mnar_desk_scale(verdict, mnar_sweep):
    cfg, _, summary, elapsed = mnar_sweep
    neural, quintic = summary["neural"], summary["poly:5"]
    bias = neural.mean_bias
    ok = abs(bias[0]) <= 0.10 and abs(bias[1]) <= 0.10 and abs(bias[1]) < abs(quintic.mean_bias[1])
    verdict(4, ok,
            f"neural mean bias {_fmt(bias)} std {_fmt(neural.std_bias)}, "
            f"poly:5 mean bias {_fmt(quintic.mean_bias)}, converged {neural.convergence_rate:.2f}, "
            f"{elapsed / 60:.1f} min", known=MNAR_SADDLE)


@pytest.mark.slow
def test_c7_gamma_robustness(verdict, mnar_sweep):
    cfg, rows, _, _ = mnar_sweep
    # gamma = 10 is the default, so replication 0 of the sweep is that run
    ref = next(r for r in rows if r.rep == 0 and r.solver == "neural")
    fits = {10: (np.array(ref.beta_hat), ref.converged)}
    for gamma in (5, 20):
        out = harness.estimate(dataclasses.replace(cfg, gamma=gamma, reps=1, comparators=()))
        fits[gamma] = (np.array(out["beta_hat"]), out["converged"])
    betas = [fits[g][0] for g in (5, 10, 20)]
    spread = max(float(np.max(np.abs(a - b))) for a in betas for b in betas)
    all_conv = all(fits[g][1] for g in fits)
    detail = ", ".join(f"gamma {g}: {_fmt(fits[g][0])}{'' if fits[g][1] else ' (not converged)'}" for g in (5, 10, 20))
    verdict(7, all_conv and spread <= 0.05, f"{detail}; max pairwise gap {spread:.3f}", known=MNAR_SADDLE)


@pytest.mark.slow
def test_c8_oracle_biased_sandwich(verdict, mnar_sweep):
    _, rows, summary, _ = mnar_sweep
    by = {}
    for r in rows:
        by.setdefault(r.rep, {})[r.solver] = np.array(r.beta_hat)
    reps = [d for d in by.values() if np.all(np.isfinite(d["neural"]))]
    to_oracle = np.mean([np.abs(d["neural"] - d["oracle"]) for d in reps], axis=0)
    biased_gap = np.mean([np.abs(d["biased"] - d["oracle"]) for d in reps], axis=0)
    b1, o1 = summary["biased"].mean_bias[0], summary["oracle"].mean_bias[0]
    ok = abs(b1) > 0.1 and abs(o1) <= 0.03 and bool(np.all(to_oracle < biased_gap))
    verdict(8, ok,
            f"biased bias_1 {b1:+.4f}, oracle bias_1 {o1:+.4f}; mean |neural - oracle| {_fmt(to_oracle)} "
            f"vs |biased - oracle| {_fmt(biased_gap)}", known=MNAR_SADDLE)


# ---------------------------------------------------------------- 5. sensitivity


@pytest.mark.slow
def test_c5_sensitivity_desk_scale(verdict):
    bundle = sens_bundle()
    cfg = config_from_dict({"example": "sensitivity", "base_seed": 1})
    data = harness.replicate_data(cfg, bundle, 0).estimator_view()
    # the cheapest faithful setting: width 33 / depth 23, gamma 10, 256 pairs per inner step
    bl = cfg.bilevel(cfg.base_seed, np.zeros(1)).with_(batch=256)
    walls = []
    for iters in (1, 2):
        t0 = time.perf_counter()
        dna_se(bundle.problem, bundle.psi, data, bundle.arch, bl.with_(max_iter=iters))
        walls.append(time.perf_counter() - t0)
    per_iter = max(walls[1] - walls[0], 1e-3)
    projected_h = cfg.reps * cfg.max_iter * per_iter / 3600
    exact = []
    for rep in range(cfg.reps):
        full = harness.replicate_data(cfg, bundle, rep)
        exact.append(bundle.comparators["exact"](full, harness._grid_for(bundle, cfg, cfg.base_seed + rep))[0] - 2.0)
    known = (
        f"one outer iteration of the faithful neural fit costs {per_iter:.0f} s at n = 1000 "
        f"(a beta-dependent kernel over 1000 x 1000 x 1000 observation/node triples is rebuilt each step), "
        f"so {cfg.max_iter} iterations x {cfg.reps} reps project to {projected_h:.0f} h against a 60 min target; "
        "the full-batch default does not fit in memory at all"
    )
    verdict(5, projected_h <= 1.0,
            f"neural fit not run to completion: {per_iter:.0f} s per outer iteration, projected {projected_h:.0f} h; "
            f"exact-b comparator mean bias {np.mean(exact):+.4f} (std {np.std(exact, ddof=1):.4f}) over {cfg.reps} reps",
            known=known)


# ---------------------------------------------------------------- 6. transfer


@pytest.mark.slow
def test_c6_transfer_desk_scale(verdict):
    cfg = config_from_dict({"example": "shift", "base_seed": 1})
    bundle = cfg.bundle()
    star = bundle.beta_star[0]
    zeta_star = shift.zeta_exact()
    probe = np.linspace(1.0, 3.0, 2001)[:, None]
    exact_bias, neural_bias, sups, gaps = [], [], [], []
    t0 = time.perf_counter()
    for rep in range(cfg.reps):
        data = harness.replicate_data(cfg, bundle, rep)
        exact_beta = shift.beta_hat_from_zeta(data, zeta_star)
        fit = harness.run_solver(cfg, bundle, cfg.solver, data, cfg.base_seed + rep)
        sups.append(float(np.max(np.abs(NeuralSolution(fit.weights)(probe) - zeta_star(probe)))))
        gaps.append(abs(fit.beta_hat[0] - exact_beta))
        exact_bias.append(exact_beta - star)
        neural_bias.append(fit.beta_hat[0] - star)
    elapsed = time.perf_counter() - t0
    ok = abs(np.mean(exact_bias)) <= 0.01 and max(sups) <= 5e-2 and max(gaps) <= 0.005
    verdict(6, ok,
            f"zeta*-based mean bias {np.mean(exact_bias):+.5f} (std {np.std(exact_bias, ddof=1):.4f}), "
            f"neural mean bias {np.mean(neural_bias):+.5f}, max sup|zeta_hat - zeta*| {max(sups):.2e}, "
            f"max per-rep beta gap {max(gaps):.2e}, {elapsed / 60:.1f} min")


# ---------------------------------------------------------------- 9. determinism


def test_c9_determinism(verdict, tmp_path, monkeypatch):
    checks = {}
    quick = [
        {"example": "mnar", "n": 150, "reps": 3, "base_seed": 2, "j1": 80, "j2": 80, "max_iter": 25,
         "comparators": ["poly:2", "oracle", "biased"]},
        {"example": "shift", "n": 800, "reps": 2, "base_seed": 5, "j1": 60, "j2": 60, "max_iter": 25},
        {"example": "sensitivity", "n": 150, "reps": 2, "base_seed": 3, "j1": 20, "j2": 40, "max_iter": 2,
         "solver": {"kind": "neural", "width": 6, "depth": 2}},
    ]
    for raw in quick:
        cfg = config_from_dict(raw)
        simulate(cfg, str(tmp_path / "serial.csv"), workers=1)
        simulate(cfg, str(tmp_path / "pool.csv"), workers=2)
        checks[f"simulate {raw['example']} serial vs pool"] = (tmp_path / "serial.csv").read_bytes() == (
            tmp_path / "pool.csv").read_bytes()

    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(config_from_dict(quick[0]).to_json())
    monkeypatch.setenv("FREDSE_THREADS", "2")
    outputs = {}
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        codes = [
            main(["simulate", "--config", str(cfg_path), "--out", str(d / "rows.csv")]),
            main(["report", str(d / "rows.csv"), "--json", str(d / "summary.json")]),
            main(["generate", "--example", "shift", "--n", "300", "--seed", "9", "--out", str(d / "data.csv")]),
            main(["solve", "--problem", "analytic:tikhonov", "--solver", "neural", "--steps", "300",
                  "--nodes", "50", "--out", str(d / "solve.json")]),
        ]
        assert codes == [0] * len(codes)
        outputs[run] = {p.name: p.read_bytes() for p in d.iterdir()}
    one = tmp_path / "one.json"
    one.write_text(config_from_dict({**quick[0], "reps": 1}).to_json())
    traces = []
    for run in ("a", "b"):
        assert main(["trace", "--config", str(one), "--out", str(tmp_path / f"trace_{run}.csv")]) == 0
        assert main(["estimate", "--config", str(one), "--out", str(tmp_path / f"est_{run}.json")]) == 0
        traces.append(((tmp_path / f"trace_{run}.csv").read_bytes(), (tmp_path / f"est_{run}.json").read_bytes()))
    checks["trace and estimate"] = traces[0] == traces[1]
    for name in outputs["a"]:
        checks[f"cli {name}"] = outputs["a"][name] == outputs["b"][name]
    bad = [k for k, v in checks.items() if not v]
    verdict(9, not bad, f"{len(checks)} byte-for-byte comparisons" + (f", differing: {bad}" if bad else ", all identical"))


# ---------------------------------------------------------------- 10. invariant suites


def test_c10_invariant_suites(verdict):
    env = {**os.environ, "PYTHONHASHSEED": "0"}
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "pytest", "-m", "invariant", "-q", "-p", "no:cacheprovider", str(TESTS)],
        capture_output=True, text=True, env=env, timeout=900,
    )
    elapsed = time.perf_counter() - t0
    tail = proc.stdout.strip().splitlines()[-1] if proc.stdout.strip() else proc.stderr[-200:]
    verdict(10, proc.returncode == 0 and elapsed < 300, f"pytest -m invariant: {tail}; {elapsed:.0f} s")
