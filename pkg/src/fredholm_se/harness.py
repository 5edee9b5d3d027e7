"""Run configuration, the replication driver, CSV persistence and summaries.

Replication ``r`` of a sweep uses seed ``base_seed + r`` for its data, its
quadrature nodes, its network initialization and its minibatches; the seed
is written on every row so that any single replication can be replayed.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .bilevel import BiLevelConfig, EstimateReport, dna_se, polynomial_estimate, trace_csv
from .errors import (
    ConfigurationError,
    DivergenceError,
    FredholmSEError,
    NumericError,
    ParseError,
)
from .examples import ExampleBundle, get_analytic, get_bundle
from .fredholm import (
    Discretization,
    NeuralSolution,
    PolynomialSolution,
    default_basis,
    solve_neural_steps,
    solve_polynomial,
)
from .nn import AdamState, NetworkArch, init_weights
from .quadrature import gauss_legendre_grid, sample_grid
from .rng import derive_seed

EXAMPLES = ("mnar", "sensitivity", "shift", "toy")
DEFAULT_REPS = {"mnar": 20, "sensitivity": 10, "shift": 20, "toy": 1}
DEFAULT_COMPARATORS = {
    "mnar": ["poly:5", "oracle", "biased"],
    "sensitivity": ["exact"],
    "shift": ["exact"],
    "toy": [],
}
_OPTIMIZER_KEYS = ("gamma", "max_iter", "tol", "tol_beta", "tol_omega", "j1", "j2",
                   "lr_beta", "lr_omega", "fd_step", "batch", "warmup")


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class SolverSpec:
    kind: str  # "neural" or "polynomial"
    width: int | None = None
    depth: int | None = None
    degree: int | None = None

    @property
    def label(self) -> str:
        return "neural" if self.kind == "neural" else f"poly:{self.degree}"

    def to_dict(self) -> dict:
        if self.kind == "neural":
            return {"kind": "neural", "width": self.width, "depth": self.depth}
        return {"kind": "polynomial", "degree": self.degree}


@dataclass(frozen=True)
class RunConfig:
    """A fully defaulted, validated run description.

    Optimizer fields mirror :class:`BiLevelConfig`; ``lam`` is the Tikhonov
    weight (JSON key ``"lambda"``) and applies to the sensitivity example
    only.  ``record_timing`` writes wall-clock milliseconds into the rows;
    it is off by default because timings would make reruns differ.
    """

    example: str
    n: int
    reps: int
    base_seed: int
    solver: SolverSpec
    gamma: int
    max_iter: int
    tol: float
    tol_beta: float | None
    tol_omega: float | None
    j1: int
    j2: int
    lr_beta: float
    lr_omega: float
    fd_step: float
    batch: int | None
    warmup: int
    lam: float | None
    beta_init: tuple | None
    comparators: tuple
    output: str | None
    data: str | None
    record_timing: bool

    def bundle(self) -> ExampleBundle:
        if self.example == "sensitivity" and self.lam is not None:
            return get_bundle("sensitivity", lam=self.lam)
        return get_bundle(self.example)

    def bilevel(self, seed: int, beta_init) -> BiLevelConfig:
        opts = {k: getattr(self, k) for k in _OPTIMIZER_KEYS}
        return BiLevelConfig(seed=seed, beta_init=tuple(beta_init), **opts)

    def to_dict(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self)}
        out["solver"] = self.solver.to_dict()
        out["lambda"] = out.pop("lam")
        out["comparators"] = list(self.comparators)
        out["beta_init"] = None if self.beta_init is None else list(self.beta_init)
        return out

    def to_json(self) -> str:
        """Canonical form: every field present, keys sorted."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


_TOP_KEYS = {f.name for f in fields(RunConfig)} - {"lam"} | {"lambda"}
_SOLVER_KEYS = {"neural": {"kind", "width", "depth"}, "polynomial": {"kind", "degree"}}


def _int(value, key, minimum=1):
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ConfigurationError(f"must be an integer >= {minimum}, got {value!r}", key=key)
    return value


def _pos(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value > 0 or not math.isfinite(value):
        raise ConfigurationError(f"must be a positive number, got {value!r}", key=key)
    return float(value)


def _parse_solver(raw, bundle: ExampleBundle | None) -> SolverSpec:
    if isinstance(raw, str):
        raw = parse_solver_label(raw).to_dict()
    if not isinstance(raw, dict):
        raise ConfigurationError("must be an object with a 'kind'", key="solver")
    kind = raw.get("kind")
    if kind not in _SOLVER_KEYS:
        raise ConfigurationError(f"kind must be 'neural' or 'polynomial', got {kind!r}", key="solver.kind")
    for key in raw:
        if key not in _SOLVER_KEYS[kind]:
            raise ConfigurationError(f"unknown key for a {kind} solver", key=f"solver.{key}")
    if kind == "neural":
        width = _int(raw.get("width", bundle.arch.width if bundle else 5), "solver.width")
        depth = _int(raw.get("depth", bundle.arch.depth if bundle else 3), "solver.depth")
        return SolverSpec("neural", width=width, depth=depth)
    if "degree" not in raw:
        raise ConfigurationError("a polynomial solver needs a degree", key="solver.degree")
    return SolverSpec("polynomial", degree=_int(raw["degree"], "solver.degree", minimum=0))


def parse_solver_label(label: str) -> SolverSpec:
    """``"neural"`` or ``"poly:<degree>"``."""
    if label == "neural":
        return SolverSpec("neural")
    if label.startswith("poly:"):
        try:
            degree = int(label[5:])
        except ValueError:
            raise ConfigurationError(f"bad polynomial degree in {label!r}", key="solver") from None
        return SolverSpec("polynomial", degree=_int(degree, "solver", minimum=0))
    raise ConfigurationError(f"unknown solver {label!r}; use 'neural' or 'poly:<degree>'", key="solver")


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigurationError("the configuration must be a JSON object", key="(root)")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigurationError("unknown key", key=key)
    example = raw.get("example")
    if example not in EXAMPLES:
        raise ConfigurationError(f"must be one of {list(EXAMPLES)}, got {example!r}", key="example")
    if "lambda" in raw and raw["lambda"] is not None and example != "sensitivity":
        raise ConfigurationError("applies to the sensitivity example only", key="lambda")
    lam = raw.get("lambda")
    if lam is not None and (isinstance(lam, bool) or not isinstance(lam, (int, float)) or lam < 0):
        raise ConfigurationError(f"must be a number >= 0, got {lam!r}", key="lambda")
    bundle = get_bundle(example) if lam is None else get_bundle(example, lam=float(lam))
    base = bundle.config

    def pick(key):
        return raw[key] if raw.get(key) is not None else getattr(base, key)

    solver = _parse_solver(raw.get("solver", {"kind": "neural"}), bundle)
    tol_beta, tol_omega = raw.get("tol_beta", base.tol_beta), raw.get("tol_omega", base.tol_omega)
    batch = raw.get("batch", base.batch)
    beta_init = raw.get("beta_init")
    if beta_init is not None:
        if not isinstance(beta_init, list) or len(beta_init) != bundle.q:
            raise ConfigurationError(f"must be a list of {bundle.q} numbers", key="beta_init")
        beta_init = tuple(float(v) for v in beta_init)
    comparators = raw.get("comparators", DEFAULT_COMPARATORS[example])
    if not isinstance(comparators, list):
        raise ConfigurationError("must be a list of labels", key="comparators")
    for i, label in enumerate(comparators):
        if not isinstance(label, str):
            raise ConfigurationError("labels are strings", key=f"comparators[{i}]")
        if label.startswith("poly:"):
            parse_solver_label(label)
        elif label not in bundle.comparators:
            raise ConfigurationError(
                f"unknown comparator {label!r} for {example}; available: poly:<d>, {sorted(bundle.comparators)}",
                key=f"comparators[{i}]",
            )
    if len(set(comparators)) != len(comparators) or solver.label in comparators:
        raise ConfigurationError("solver labels must be distinct", key="comparators")
    for key in ("output", "data"):
        if raw.get(key) is not None and not isinstance(raw[key], str):
            raise ConfigurationError("must be a path string", key=key)
    record_timing = raw.get("record_timing", False)
    if not isinstance(record_timing, bool):
        raise ConfigurationError("must be true or false", key="record_timing")
    cfg = RunConfig(
        example=example,
        n=_int(raw.get("n", bundle.default_n), "n"),
        reps=_int(raw.get("reps", DEFAULT_REPS[example]), "reps"),
        base_seed=_int(raw.get("base_seed", 0), "base_seed", minimum=0),
        solver=solver,
        gamma=_int(pick("gamma"), "gamma"),
        max_iter=_int(pick("max_iter"), "max_iter"),
        tol=_pos(pick("tol"), "tol"),
        tol_beta=None if tol_beta is None else _pos(tol_beta, "tol_beta"),
        tol_omega=None if tol_omega is None else _pos(tol_omega, "tol_omega"),
        j1=_int(pick("j1"), "j1"),
        j2=_int(pick("j2"), "j2"),
        lr_beta=_pos(pick("lr_beta"), "lr_beta"),
        lr_omega=_pos(pick("lr_omega"), "lr_omega"),
        fd_step=_pos(pick("fd_step"), "fd_step"),
        batch=None if batch is None else _int(batch, "batch", minimum=0),
        warmup=_int(pick("warmup"), "warmup", minimum=0),
        lam=None if lam is None else float(lam),
        beta_init=beta_init,
        comparators=tuple(comparators),
        output=raw.get("output"),
        data=raw.get("data"),
        record_timing=record_timing,
    )
    if cfg.data is not None and cfg.reps != 1:
        raise ConfigurationError("a fixed dataset allows a single replication", key="reps")
    return cfg


def load_config(source: str) -> RunConfig:
    """Parse a JSON configuration given inline (starting with ``{``) or as a file path."""
    text = source
    if not source.lstrip().startswith("{"):
        with open(source, encoding="utf-8") as fh:
            text = fh.read()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", key="(root)") from None
    return config_from_dict(raw)


# ---------------------------------------------------------------- rows and CSV


@dataclass(frozen=True)
class SimulationRow:
    example: str
    rep: int
    seed: int
    solver: str
    beta_hat: tuple
    bias: tuple
    iterations: int
    converged: bool
    loss_psi: float
    loss_K: float
    wall_ms: float


def row_header(q: int) -> list[str]:
    return (["example", "rep", "seed", "solver"]
            + [f"beta_{k + 1}" for k in range(q)] + [f"bias_{k + 1}" for k in range(q)]
            + ["iterations", "converged", "loss_psi", "loss_K", "wall_ms"])


def _fmt(value: float) -> str:
    value = float(value)
    return "NA" if not math.isfinite(value) else repr(value)


def rows_csv(rows: list[SimulationRow], q: int) -> str:
    buf = io.StringIO()
    out = csv.writer(buf, lineterminator="\n")
    out.writerow(row_header(q))
    for r in rows:
        out.writerow(
            [r.example, r.rep, r.seed, r.solver]
            + [_fmt(v) for v in r.beta_hat] + [_fmt(v) for v in r.bias]
            + [r.iterations, "true" if r.converged else "false", _fmt(r.loss_psi), _fmt(r.loss_K), _fmt(r.wall_ms)]
        )
    return buf.getvalue()


def write_atomic(path: str, text: str) -> None:
    """Write through a temporary file in the target directory, then rename over the target."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        # mkstemp creates the file owner-only; give it the usual umask-based mode
        umask = os.umask(0)
        os.umask(umask)
        os.chmod(tmp, 0o666 & ~umask)
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------- running


def _grid_for(bundle: ExampleBundle, cfg: RunConfig, seed: int):
    p = bundle.problem
    return sample_grid(p.t_domain, p.s_domain, cfg.j1, cfg.j2, derive_seed(seed, "grid"))


def replicate_data(cfg: RunConfig, bundle: ExampleBundle, rep: int):
    """Simulation data for replication ``rep`` (or the configured dataset)."""
    if cfg.data is not None:
        return load_dataset(cfg.data, bundle)
    return bundle.generate(cfg.n, cfg.base_seed + rep)


def load_dataset(path: str, bundle: ExampleBundle):
    if bundle.data_type is None:
        raise ConfigurationError(f"the {bundle.name} example takes no dataset", key="data")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ParseError("dataset has no rows", column=None)
    try:
        return bundle.data_type.from_rows(rows, keep_truth=False)
    except KeyError as exc:
        raise ParseError("missing from the dataset header", column=str(exc.args[0])) from None
    except ValueError as exc:
        raise ParseError(f"unreadable value: {exc}") from None


def _estimator_view(data):
    return data.estimator_view() if hasattr(data, "estimator_view") else data


def start_beta(cfg: RunConfig, bundle: ExampleBundle, view) -> np.ndarray:
    if cfg.beta_init is not None:
        return np.array(cfg.beta_init)
    if bundle.start is not None:
        try:
            return np.asarray(bundle.start(view), dtype=np.float64)
        except NumericError:
            pass
    return np.array(bundle.config.beta_init)


def run_solver(cfg: RunConfig, bundle: ExampleBundle, spec: SolverSpec, data, seed: int) -> EstimateReport:
    """Fit one estimator (neural or polynomial b) to estimator-facing ``data``."""
    beta0 = start_beta(cfg, bundle, data)
    if spec.kind == "neural":
        arch = NetworkArch(bundle.problem.b_input_dim, bundle.q, spec.width, spec.depth)
        return dna_se(bundle.problem, bundle.psi, data, arch, cfg.bilevel(seed, beta0))
    basis = default_basis(bundle.problem, spec.degree, bundle.covariate_bounds)
    return polynomial_estimate(bundle.problem, bundle.psi, data, basis, _grid_for(bundle, cfg, seed), beta0)


def _na_row(cfg, rep, seed, label, q, wall_ms, iterations=0, loss_psi=math.nan, loss_k=math.nan):
    nan = (math.nan,) * q
    return SimulationRow(cfg.example, rep, seed, label, nan, nan, iterations, False, loss_psi, loss_k, wall_ms)


def _row(cfg, bundle, rep, seed, label, beta, converged, iterations, loss_psi, loss_k, wall_ms):
    beta = tuple(float(v) for v in np.atleast_1d(beta))
    bias = tuple(b - s for b, s in zip(beta, bundle.beta_star))
    if not all(math.isfinite(v) for v in beta):
        return _na_row(cfg, rep, seed, label, bundle.q, wall_ms, iterations, loss_psi, loss_k)
    return SimulationRow(cfg.example, rep, seed, label, beta, bias, iterations, converged, loss_psi, loss_k, wall_ms)


def run_replication(cfg: RunConfig, rep: int) -> list[SimulationRow]:
    """Rows for one replication: the configured solver, then each comparator in order."""
    bundle = cfg.bundle()
    seed = cfg.base_seed + rep
    full = replicate_data(cfg, bundle, rep)
    view = _estimator_view(full)
    rows = []
    labels = [cfg.solver.label] + list(cfg.comparators)
    for label in labels:
        t0 = time.perf_counter()
        try:
            if label == cfg.solver.label or label.startswith("poly:"):
                spec = cfg.solver if label == cfg.solver.label else parse_solver_label(label)
                rep_out = run_solver(cfg, bundle, spec, view, seed)
                ms = 1e3 * (time.perf_counter() - t0)
                rows.append(_row(cfg, bundle, rep, seed, label, rep_out.beta_hat, rep_out.converged,
                                 rep_out.iterations, rep_out.final_loss_psi, rep_out.final_loss_K, ms))
            else:
                beta = bundle.comparators[label](full, _grid_for(bundle, cfg, seed))
                ms = 1e3 * (time.perf_counter() - t0)
                rows.append(_row(cfg, bundle, rep, seed, label, beta, True, 0, math.nan, math.nan, ms))
        except (NumericError, np.linalg.LinAlgError) as exc:
            # a failed fit is recorded, never fatal for the sweep
            ms = 1e3 * (time.perf_counter() - t0)
            trace = getattr(exc, "trace", None) or []
            rows.append(_na_row(cfg, rep, seed, label, bundle.q, ms, len(trace)))
    if not cfg.record_timing:
        rows = [replace(r, wall_ms=math.nan) for r in rows]
    return rows


def pool_size() -> int:
    env = os.environ.get("FREDSE_THREADS")
    if env is not None:
        try:
            size = int(env)
        except ValueError:
            raise ConfigurationError(f"must be a positive integer, got {env!r}", key="FREDSE_THREADS") from None
        if size < 1:
            raise ConfigurationError(f"must be a positive integer, got {env!r}", key="FREDSE_THREADS")
        return size
    return os.cpu_count() or 1


def _replication_task(args):
    cfg, rep = args
    return run_replication(cfg, rep)


def simulate(cfg: RunConfig, out: str | None = None, *, workers: int | None = None) -> list[SimulationRow]:
    """Run every replication and, if a path is given, write the rows CSV atomically.

    Replications may run in a process pool; rows are always ordered by
    replication, then by solver in configuration order.
    """
    workers = pool_size() if workers is None else workers
    tasks = [(cfg, rep) for rep in range(cfg.reps)]
    if workers > 1 and cfg.reps > 1:
        with ProcessPoolExecutor(max_workers=min(workers, cfg.reps)) as pool:
            per_rep = list(pool.map(_replication_task, tasks))
    else:
        per_rep = [_replication_task(t) for t in tasks]
    rows = [r for block in per_rep for r in block]
    path = out if out is not None else cfg.output
    if path is not None:
        write_atomic(path, rows_csv(rows, cfg.bundle().q))
    return rows


# ---------------------------------------------------------------- single runs


def estimate(cfg: RunConfig) -> dict:
    """Fit the configured solver to replication 0 (or the configured dataset).

    Numeric failures propagate, unlike in :func:`simulate`.
    """
    bundle = cfg.bundle()
    seed = cfg.base_seed
    view = _estimator_view(replicate_data(cfg, bundle, 0))
    report = run_solver(cfg, bundle, cfg.solver, view, seed)
    out = {"example": cfg.example, "solver": cfg.solver.label, "seed": seed, "n": len(view)}
    out.update(report.to_dict())
    if not cfg.record_timing:
        out.pop("wall_seconds")
    if cfg.data is None:
        out["bias"] = [float(b - s) for b, s in zip(report.beta_hat, bundle.beta_star)]
    return out


def trace(cfg: RunConfig, out: str | None = None) -> tuple[str, EstimateReport]:
    """Per-iteration trace CSV of the neural solver on replication 0."""
    if cfg.reps != 1:
        raise ConfigurationError(f"trace runs one replication, got reps = {cfg.reps}", key="reps")
    if cfg.solver.kind != "neural":
        raise ConfigurationError("traces exist for the neural solver only", key="solver")
    bundle = cfg.bundle()
    view = _estimator_view(replicate_data(cfg, bundle, 0))
    report = run_solver(cfg, bundle, cfg.solver, view, cfg.base_seed)
    text = trace_csv(report.trace, bundle.q)
    if out is not None:
        write_atomic(out, text)
    return text, report


def solve_analytic(problem: str, solver: str, *, nodes: int = 200, seed: int = 0, steps: int | None = None) -> dict:
    """Solve a closed-form validation problem and compare with its solution."""
    from .examples.analytic import NEURAL_RECIPE, TOY_DATA

    if not problem.startswith("analytic:"):
        raise ConfigurationError(f"expected analytic:<id>, got {problem!r}", key="problem")
    fixture = get_analytic(problem[len("analytic:"):])
    p = fixture.problem
    spec = parse_solver_label(solver)
    grid = gauss_legendre_grid(p.t_domain, p.s_domain, nodes, nodes)
    beta = np.zeros(p.q)
    if spec.kind == "polynomial":
        coeffs = solve_polynomial(p, TOY_DATA, beta, grid, spec.degree)
        b = PolynomialSolution(coeffs)
        extra = {"coefficients": coeffs.coeffs[:, 0].tolist()}
    else:
        arch = NetworkArch(p.b_input_dim, p.q, NEURAL_RECIPE["width"], NEURAL_RECIPE["depth"])
        w = init_weights(arch, derive_seed(seed, "init"))
        n_steps = NEURAL_RECIPE["steps"] if steps is None else steps
        w, _, _ = solve_neural_steps(p, TOY_DATA, beta, grid, w, AdamState.for_weights(w), n_steps, NEURAL_RECIPE["lr"])
        b = NeuralSolution(w)
        extra = {"steps": n_steps}
    probe = np.linspace(p.t_domain.lower[0], p.t_domain.upper[0], 1001)[:, None]
    sup = float(np.max(np.abs(b(probe) - fixture.solution(probe))))
    loss = Discretization(p, TOY_DATA, beta, grid).loss(b)
    return {"problem": problem, "solver": spec.label, "loss_K": loss, "sup_error": sup, **extra}


# ---------------------------------------------------------------- reporting


@dataclass
class SolverSummary:
    solver: str
    rows: int
    finite_rows: int
    mean_bias: list
    std_bias: list
    convergence_rate: float
    mean_iterations: float
    mean_wall_ms: float

    def to_dict(self) -> dict:
        def clean(v):
            return None if isinstance(v, float) and not math.isfinite(v) else v

        d = asdict(self)
        d["mean_bias"] = [clean(v) for v in self.mean_bias]
        d["std_bias"] = [clean(v) for v in self.std_bias]
        for key in ("convergence_rate", "mean_iterations", "mean_wall_ms"):
            d[key] = clean(d[key])
        return d


def _float(text: str, column: str) -> float:
    if text == "NA":
        return math.nan
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", column=column) from None


def _moments(values: list[float]) -> tuple[float, float]:
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return math.nan, math.nan
    mean = math.fsum(vals) / len(vals)
    if len(vals) < 2:
        return mean, math.nan
    var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
    return mean, math.sqrt(var)


def summarize(text: str) -> list[SolverSummary]:
    """Per-solver moments of a rows CSV.

    NA rows are left out of the bias moments but count towards the
    convergence rate.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty file") from None
    bias_cols = [c for c in header if c.startswith("bias_")]
    q = len(bias_cols)
    if q == 0:
        raise ParseError("no bias columns in the header", column="bias_1")
    expected = row_header(q)
    for i, col in enumerate(expected):
        if i >= len(header) or header[i] != col:
            raise ParseError(f"expected at position {i + 1}", column=col)
    if len(header) != len(expected):
        raise ParseError("unexpected extra column", column=header[len(expected)])
    idx = {c: i for i, c in enumerate(header)}
    groups: dict[str, list[list[str]]] = {}
    for lineno, rec in enumerate(reader, start=2):
        if len(rec) != len(header):
            raise ParseError(f"line {lineno} has {len(rec)} fields, expected {len(header)}")
        groups.setdefault(rec[idx["solver"]], []).append(rec)
    out = []
    for label, recs in groups.items():
        biases = [[_float(r[idx[c]], c) for r in recs] for c in bias_cols]
        finite = [all(math.isfinite(b[i]) for b in biases) for i in range(len(recs))]
        mom = [_moments([b[i] for i in range(len(recs)) if finite[i]]) for b in biases]
        conv = []
        for r in recs:
            flag = r[idx["converged"]]
            if flag not in ("true", "false"):
                raise ParseError(f"expected true/false, got {flag!r}", column="converged")
            conv.append(flag == "true")
        iters = [_float(r[idx["iterations"]], "iterations") for r in recs]
        walls = [_float(r[idx["wall_ms"]], "wall_ms") for r in recs]
        out.append(SolverSummary(
            solver=label,
            rows=len(recs),
            finite_rows=sum(finite),
            mean_bias=[m for m, _ in mom],
            std_bias=[s for _, s in mom],
            convergence_rate=sum(conv) / len(recs),
            mean_iterations=_moments(iters)[0],
            mean_wall_ms=_moments(walls)[0],
        ))
    return out


def report(path: str) -> tuple[str, list[dict]]:
    """Summary table (text) and its JSON-ready form for a rows CSV on disk."""
    with open(path, newline="", encoding="utf-8") as fh:
        summaries = summarize(fh.read())
    return format_summary(summaries), [s.to_dict() for s in summaries]


def format_summary(summaries: list[SolverSummary]) -> str:
    def num(v, spec=".4f"):
        return "NA" if not math.isfinite(v) else format(v, spec)

    head = f"{'solver':<10} {'rows':>5} {'mean bias':>24} {'std':>24} {'conv':>6} {'iters':>8} {'wall ms':>10}"
    lines = [head, "-" * len(head)]
    for s in summaries:
        bias = ", ".join(num(v) for v in s.mean_bias)
        std = ", ".join(num(v) for v in s.std_bias)
        lines.append(
            f"{s.solver:<10} {s.rows:>5} {bias:>24} {std:>24} {s.convergence_rate:>6.2f} "
            f"{num(s.mean_iterations, '.1f'):>8} {num(s.mean_wall_ms, '.0f'):>10}"
        )
    return "\n".join(lines) + "\n"


__all__ = [
    "RunConfig",
    "SimulationRow",
    "SolverSpec",
    "SolverSummary",
    "estimate",
    "format_summary",
    "load_config",
    "parse_solver_label",
    "report",
    "rows_csv",
    "run_replication",
    "simulate",
    "solve_analytic",
    "summarize",
    "trace",
    "write_atomic",
]
