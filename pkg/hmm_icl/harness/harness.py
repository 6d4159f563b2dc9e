"""
End-to-end experiments: error decomposition, assumption checks and sweeps.

Every measurement draws from four independent streams spawned from the
experiment seed (model, demonstrations, test prefixes, population sample),
so cells of a sweep that share a seed see common random numbers.
"""
import math
import json
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from hmm_icl import __version__
from hmm_icl.context.icl_context import ContextLayout, build_context, read_out, window_features
from hmm_icl.models.hmm_core import (
    LowRankHmm,
    MixtureConfig,
    estimate_gamma,
    hmm_from_json,
    new_low_rank_hmm,
    new_mixture,
    sample_symbols,
    stationary_distribution,
)
from hmm_icl.models.memory_model import memory_conditionals
from hmm_icl.oracles.regression import RegressionProblem, gd_reference, solve_least_squares
from hmm_icl.transformer.construct import ConstructionConfig, assemble_stack
from hmm_icl.transformer.tf_kernel import TransformerStack, forward
from hmm_icl.utils.config import GlobalConfig
from hmm_icl.utils.errors import HmmIclError, InvalidDimensionError
from hmm_icl.utils.schema import ExperimentConfig, SweepGrid, parse_experiment
from hmm_icl.utils.utils import GENERATOR_NAME, derive_seed, import_from_json, make_rng, spawn_rngs, write_table_csv

SCHEMA_VERSION = 2
STREAMS = ("model", "demos", "tests", "population")
GAMMA_PAIRS = 256


def experiment_streams(seed: int) -> Dict[str, np.random.Generator]:
    """The four named random streams of one experiment."""
    return dict(zip(STREAMS, spawn_rngs(seed, len(STREAMS))))


def resolve_hmm(config: ExperimentConfig, model_rng: np.random.Generator) -> Tuple[LowRankHmm, Optional[int]]:
    """
    The HMM a measurement runs on, plus the mixture task index when applicable.

    A mixture contributes one task per prompt, drawn from its task prior.
    """
    if config.mixture is not None:
        section = config.mixture
        mix_seed = section.seed if section.seed is not None else derive_seed(config.seed, 1)
        prior = tuple(section.task_prior) if section.task_prior is not None else None
        mixture = new_mixture(MixtureConfig(num_tasks=section.num_tasks, hidden_per_task=section.hidden_per_task,
                                            vocab=section.vocab, rank=section.rank, task_prior=prior,
                                            seed=mix_seed, concentration=section.concentration))
        task = int(mixture.sample_tasks(1, model_rng)[0])
        return mixture.task(task), task
    section = config.hmm
    if section.path:
        return hmm_from_json(import_from_json(section.path)), None
    hmm_seed = section.seed if section.seed is not None else derive_seed(config.seed, 0)
    return new_low_rank_hmm(section.num_hidden, section.num_obs, section.rank, section.concentration, hmm_seed), None


def make_layout(config: ExperimentConfig, p: int) -> ContextLayout:
    lay = config.layout
    return ContextLayout(n=lay.n, L=lay.L, k=lay.k, p=p, m=lay.m, D=lay.D)


def make_construction(config: ExperimentConfig, layout: ContextLayout) -> ConstructionConfig:
    section = config.construction
    return ConstructionConfig(layout=layout, beta1=section.beta1, beta2=section.beta2, T=section.T, lr=section.lr)


def memory_prior(config: ExperimentConfig, hmm: LowRankHmm) -> np.ndarray:
    if config.prior == "initial":
        return np.asarray(hmm.initial)
    if config.prior == "stationary":
        return stationary_distribution(hmm)
    return np.full(hmm.num_hidden, 1.0 / hmm.num_hidden)


@dataclass
class Prompt:
    """One sampled prompt: demonstrations, a test prefix and the matching input matrix."""
    hmm: LowRankHmm
    layout: ContextLayout
    demos: np.ndarray
    prefix: np.ndarray
    M0: np.ndarray

    def z_test(self) -> np.ndarray:
        return window_features(self.prefix[len(self.prefix) - self.layout.history_len:], self.layout.p)


def draw_prompt(config: ExperimentConfig, demos: Optional[np.ndarray] = None) -> Prompt:
    """Sample the demonstrations and the first test prefix of an experiment."""
    streams = experiment_streams(config.seed)
    hmm, _ = resolve_hmm(config, streams["model"])
    layout = make_layout(config, hmm.num_obs)
    if demos is None:
        _, demos = sample_symbols(hmm, layout.n, layout.L, streams["demos"])
    _, prefixes = sample_symbols(hmm, 1, layout.k - 1, streams["tests"])
    context = build_context(demos, prefixes[0], layout)
    return Prompt(hmm, layout, demos, prefixes[0], context.data)


def stack_prediction(stack: TransformerStack, prompt: Prompt) -> np.ndarray:
    return read_out(forward(prompt.M0, stack), prompt.layout)


# --- Assumption check ---
@dataclass
class AssumptionReport:
    lambda_min: float
    lambda_max: float
    alpha_floor: float
    passed: bool


def check_assumption(Z: np.ndarray, alpha_floor: float = 0.0) -> AssumptionReport:
    """
    Extreme eigenvalues of the sample covariance ``Z Z^T / n``.

    Passes when the smallest one exceeds both ``alpha_floor`` and the
    numerical zero ``1e-10``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    values = np.linalg.eigvalsh(Z @ Z.T / Z.shape[1])
    lo, hi = float(values[0]), float(values[-1])
    return AssumptionReport(lambda_min=lo, lambda_max=hi, alpha_floor=alpha_floor,
                            passed=lo > max(alpha_floor, 1e-10))


# --- Error decomposition ---
def _mean_se(samples: np.ndarray) -> Tuple[float, float]:
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size < 2:
        return float(samples.mean()), 0.0
    return float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size))


@dataclass
class ErrorReport:
    """
    One measured configuration.

    ``eps2`` compares against the population linear fit, ``eps2_direct``
    against the memory model itself; ``total`` uses the constructed stack on
    the first ``stack_samples`` prefixes and ``W_T z`` on the rest.
    """
    eps1: float
    eps1_se: float
    eps2: float
    eps2_se: float
    eps2_direct: float
    eps2_direct_se: float
    eps3: float
    eps3_se: float
    total: float
    total_se: float
    lambda_min: float
    lambda_max: float
    assumption_ok: bool
    ridge_used: float
    ridge_fallback: bool
    layer_count: int
    stack_samples: int
    stack_gap: float
    gamma: float
    triangle_ok: bool
    n: int
    L: int
    k: int
    m: int
    p: int
    T: int
    lr: float
    num_mc: int
    seed: int
    task: Optional[int] = None
    generator_name: str = GENERATOR_NAME
    schema_version: int = SCHEMA_VERSION
    config: Dict[str, Any] = field(default_factory=dict, repr=False)

    def to_row(self) -> Dict[str, Any]:
        row = asdict(self)
        row["config"] = json.dumps(self.config, sort_keys=True)
        row["error"] = ""
        return row


ROW_COLUMNS = [f.name for f in fields(ErrorReport)] + ["error"]


def measure_errors(config: ExperimentConfig) -> ErrorReport:
    """
    Monte-Carlo estimates of the three error terms and the total error.

    Per test prefix: the exact conditional, the fixed-memory conditional
    ``P_L``, the closed-form prediction ``W_hat z``, the population fit
    ``W* z`` and the ``T``-step gradient-descent prediction ``W_T z``.
    """
    streams = experiment_streams(config.seed)
    hmm, task = resolve_hmm(config, streams["model"])
    layout = make_layout(config, hmm.num_obs)
    construction = make_construction(config, layout)
    p, m, R = layout.p, layout.m, layout.history_len

    # the test stream is consumed first so eps1 matches model_approx_error on the same seed
    _, histories = sample_symbols(hmm, config.num_mc, layout.k - 1, streams["tests"])
    exact, approx = memory_conditionals(hmm, memory_prior(config, hmm), histories, R, m)
    z = window_features(histories[:, histories.shape[1] - R:], p)

    _, demos = sample_symbols(hmm, layout.n, layout.L, streams["demos"])
    problem = RegressionProblem.from_demonstrations(demos, p, m)
    fit = solve_least_squares(problem)
    assumption = check_assumption(problem.Z, config.alpha_floor)
    gd = gd_reference(problem, construction.T, construction.lr)

    _, population = sample_symbols(hmm, config.population_samples, layout.L, streams["population"])
    reference = solve_least_squares(RegressionProblem.from_demonstrations(population, p, m))

    closed = z @ fit.weights.T
    linear_best = z @ reference.weights.T
    iterate = z @ gd.weights.T
    predictions = iterate.copy()

    stack_gap = 0.0
    stack_rows = 0
    stack, _ = assemble_stack(construction)
    layer_count = stack.attention_layers
    # with T = 0 the stack reads out W_0 = 0
    if construction.T > 0:
        stack_rows = min(config.stack_samples, config.num_mc)
        for i in range(stack_rows):
            M0 = build_context(demos, histories[i], layout).data
            predictions[i] = read_out(forward(M0, stack), layout)
        if stack_rows:
            stack_gap = float(np.max(np.abs(predictions[:stack_rows] - iterate[:stack_rows])))

    eps1 = _mean_se(np.abs(exact - approx).sum(axis=1))
    eps2 = _mean_se(np.abs(linear_best - closed).sum(axis=1))
    eps2_direct = _mean_se(np.abs(approx - closed).sum(axis=1))
    eps3 = _mean_se(np.abs(closed - iterate).sum(axis=1))
    total = _mean_se(np.abs(exact - predictions).sum(axis=1))

    noise = 3.0 * math.sqrt(eps1[1] ** 2 + eps2_direct[1] ** 2 + eps3[1] ** 2 + total[1] ** 2)
    triangle_ok = total[0] <= eps1[0] + eps2_direct[0] + eps3[0] + noise + stack_gap + 1e-12
    if not triangle_ok:
        logging.warning(f"Triangle check failed: total {total[0]:.6g} exceeds the decomposition")

    gamma = estimate_gamma(hmm, GAMMA_PAIRS, make_rng(derive_seed(config.seed, 2)))
    report = ErrorReport(
        eps1=eps1[0], eps1_se=eps1[1], eps2=eps2[0], eps2_se=eps2[1],
        eps2_direct=eps2_direct[0], eps2_direct_se=eps2_direct[1],
        eps3=eps3[0], eps3_se=eps3[1], total=total[0], total_se=total[1],
        lambda_min=assumption.lambda_min, lambda_max=assumption.lambda_max,
        assumption_ok=assumption.passed, ridge_used=fit.ridge_used, ridge_fallback=fit.fallback,
        layer_count=layer_count, stack_samples=stack_rows, stack_gap=stack_gap, gamma=gamma,
        triangle_ok=triangle_ok, n=layout.n, L=layout.L, k=layout.k, m=m, p=p, T=construction.T,
        lr=construction.lr, num_mc=config.num_mc, seed=config.seed, task=task,
        config=config.model_dump(mode="json"),
    )
    logging.info(f"eps1={report.eps1:.4g} eps2={report.eps2:.4g} eps3={report.eps3:.4g} "
                 f"total={report.total:.4g} (n={layout.n}, L={layout.L}, T={construction.T})")
    return report


# --- Sweeps ---
def _cell_config(base: ExperimentConfig, cell: Dict[str, int]) -> ExperimentConfig:
    raw = base.model_dump(mode="json")
    for key, value in cell.items():
        section = "construction" if key == "T" else "layout"
        raw[section][key] = value
    return parse_experiment(raw)


def grid_cells(grid: SweepGrid, base: ExperimentConfig) -> List[Dict[str, int]]:
    axes = {
        "n": grid.n or [base.layout.n],
        "L": grid.L or [base.layout.L],
        "T": grid.T or [base.construction.T],
        "k": grid.k or [base.layout.k],
    }
    return [dict(zip(axes, values)) for values in itertools.product(*axes.values())]


def _run_cell(base: ExperimentConfig, cell: Dict[str, int]) -> Dict[str, Any]:
    try:
        return measure_errors(_cell_config(base, cell)).to_row()
    except HmmIclError as err:
        logging.error(f"Sweep cell {cell} failed: {err}")
        return {**{col: None for col in ROW_COLUMNS}, **cell, "seed": base.seed, "error": str(err)}


def sweep(grid: SweepGrid, base: ExperimentConfig, quiet: Optional[bool] = None,
          workers: Optional[int] = None) -> pd.DataFrame:
    """
    One :class:`ErrorReport` row per grid point.

    Cells run on a pool of ``workers`` threads; each derives its streams from
    the base seed alone, so the table does not depend on the worker count.
    A cell that raises a library error keeps its grid coordinates and the
    message in the ``error`` column; the sweep continues.
    """
    quiet = GlobalConfig.fetch("quiet", False) if quiet is None else quiet
    workers = GlobalConfig.fetch("workers", 1) if workers is None else workers
    if workers < 1:
        raise InvalidDimensionError(f"workers must be positive, got {workers}")
    cells = grid_cells(grid, base)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map keeps grid order
        rows = list(tqdm(pool.map(partial(_run_cell, base), cells), total=len(cells),
                         desc="Sweep", unit="cell", disable=quiet))
    return pd.DataFrame(rows, columns=ROW_COLUMNS)


def sweep_header(seed: int) -> Dict[str, Any]:
    return {"schema_version": SCHEMA_VERSION, "seed": seed, "generator": GENERATOR_NAME, "version": __version__}


def write_sweep_csv(table: pd.DataFrame, path: str, seed: int) -> None:
    write_table_csv(table, path, sweep_header(seed))


# --- Fits ---
@dataclass
class LineFit:
    slope: float
    intercept: float
    r2: float


def _line_fit(x: np.ndarray, y: np.ndarray) -> LineFit:
    slope, intercept = np.polyfit(x, y, 1)
    fitted = slope * x + intercept
    total = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - fitted) ** 2)) / total if total > 0 else 1.0
    return LineFit(float(slope), float(intercept), r2)


def fit_loglog_slope(x: Sequence[float], y: Sequence[float]) -> LineFit:
    """Least-squares line through ``(log x, log y)``."""
    return _line_fit(np.log(np.asarray(x, dtype=np.float64)), np.log(np.asarray(y, dtype=np.float64)))


def fit_geometric_decay(steps: Sequence[float], values: Sequence[float]) -> LineFit:
    """Least-squares line through ``(t, log value)``; a negative slope is geometric decay."""
    return _line_fit(np.asarray(steps, dtype=np.float64), np.log(np.asarray(values, dtype=np.float64)))


# --- Diagnostics ---
@dataclass
class ShuffleReport:
    max_difference: float
    permutations: int

    @property
    def invariant(self) -> bool:
        return self.max_difference == 0.0


def check_shuffle_invariance(config: ExperimentConfig, permutations: int = 10,
                             rng: Optional[np.random.Generator] = None) -> ShuffleReport:
    """Largest change of the read-out when the demonstrations are reordered."""
    prompt = draw_prompt(config)
    stack, _ = assemble_stack(make_construction(config, prompt.layout))
    baseline = stack_prediction(stack, prompt)
    rng = rng or make_rng(derive_seed(config.seed, 3))
    worst = 0.0
    for _ in range(permutations):
        order = rng.permutation(prompt.layout.n)
        M0 = build_context(prompt.demos[order], prompt.prefix, prompt.layout).data
        shuffled = read_out(forward(M0, stack), prompt.layout)
        worst = max(worst, float(np.max(np.abs(shuffled - baseline))))
    return ShuffleReport(worst, permutations)


def beta_convergence(config: ExperimentConfig, betas: Sequence[float] = (1e2, 1e3, 1e4)) -> pd.DataFrame:
    """Max-abs read-out gap between softmax copy layers at each ``beta1`` and the hardmax stack."""
    prompt = draw_prompt(config)
    hard = make_construction(config, prompt.layout)
    reference = stack_prediction(assemble_stack(ConstructionConfig(
        prompt.layout, math.inf, hard.beta2, hard.T, hard.lr))[0], prompt)
    rows = []
    for beta in betas:
        soft, _ = assemble_stack(ConstructionConfig(prompt.layout, beta, hard.beta2, hard.T, hard.lr))
        gap = float(np.max(np.abs(stack_prediction(soft, prompt) - reference)))
        rows.append({"beta1": beta, "gap": gap})
    return pd.DataFrame(rows)
