"""
Oracle-equivalence suite behind ``hmm-icl verify``.

Each check compares a stage of the constructed Transformer (or of the
filtering code) against an independent reference and records the worst
deviation together with its tolerance.
"""
import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from tqdm import tqdm

from hmm_icl.context.icl_context import ContextLayout, build_context, read_out, window_features
from hmm_icl.harness.harness import beta_convergence
from hmm_icl.models.hmm_core import conditional_next, new_low_rank_hmm, predictive_belief, sample_symbols
from hmm_icl.models.memory_model import MemoryModel, m_step_conditional
from hmm_icl.oracles.enumeration import path_enumeration_conditional
from hmm_icl.oracles.regression import RegressionProblem, gd_reference, rate_check
from hmm_icl.transformer.construct import (
    ConstructionConfig,
    FeatureMap,
    assemble_stack,
    decoupled_blocks_reference,
    extract_w,
)
from hmm_icl.transformer.tf_kernel import forward
from hmm_icl.utils.config import GlobalConfig
from hmm_icl.utils.schema import ExperimentConfig
from hmm_icl.utils.utils import spawn_rngs


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float
    passed: bool
    detail: str = ""


@dataclass
class VerifyReport:
    checks: List[CheckResult] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def add(self, name: str, value: float, threshold: float, detail: str = "", strict: bool = True) -> CheckResult:
        """Record ``value`` against ``threshold``; ``strict`` requires ``value < threshold``, else ``<=``."""
        passed = value < threshold if strict else value <= threshold
        check = CheckResult(name, float(value), float(threshold), bool(passed), detail)
        self.checks.append(check)
        log = logging.info if passed else logging.error
        log(f"[{'PASS' if passed else 'FAIL'}] {name}: {value:.3e} (threshold {threshold:.1e}) {detail}")
        return check

    def to_dict(self) -> Dict[str, Any]:
        return {"all_passed": self.all_passed, "checks": [asdict(c) for c in self.checks]}


@dataclass
class RandomInstance:
    layout: ContextLayout
    config: ConstructionConfig
    demos: np.ndarray
    prefix: np.ndarray

    def describe(self) -> str:
        lay = self.layout
        return f"p={lay.p} L={lay.L} n={lay.n} k={lay.k} m={lay.m} T={self.config.T}"


def random_instance(rng: np.random.Generator, m: int = 1, p: Optional[int] = None) -> RandomInstance:
    """A hardmax instance with ``p in {2, 3}``, ``L in {3, 4, 5}``, ``n in 20..60``, ``k in L+1..L+4``, ``T in 1..30``."""
    p = p or int(rng.integers(2, 4))
    L = int(rng.integers(3, 6))
    n = int(rng.integers(20, 61))
    k = int(rng.integers(L + 1, L + 5))
    T = int(rng.integers(1, 31))
    hmm = new_low_rank_hmm(int(rng.integers(2, 5)), p, 2 if p > 1 else 1, seed=int(rng.integers(0, 2 ** 63)))
    layout = ContextLayout(n=n, L=L, k=k, p=p, m=m)
    _, demos = sample_symbols(hmm, n, L, rng)
    _, prefix = sample_symbols(hmm, 1, k - 1, rng)
    return RandomInstance(layout, ConstructionConfig(layout, T=T), demos, prefix[0])


def _history_columns(fmap: FeatureMap) -> List[int]:
    cols: List[int] = []
    for start, width in fmap.history + fmap.future:
        cols.extend(range(start, start + width))
    return cols


def check_instance(instance: RandomInstance, permutations: int, rng: np.random.Generator) -> Dict[str, float]:
    """
    Worst deviations of one instance: copied blocks, per-layer ``W`` iterates,
    read-out and read-out under demonstration shuffles.
    """
    layout, config = instance.layout, instance.config
    stack, fmap = assemble_stack(config)
    M0 = build_context(instance.demos, instance.prefix, layout).data
    H, states = forward(M0, stack, trace=True)

    copy_count = stack.metadata["history_layers"] + stack.metadata["future_layers"]
    cols = _history_columns(fmap)
    reference = decoupled_blocks_reference(M0, fmap)
    block_gap = float(np.max(np.abs(states[copy_count][:, cols] - reference[:, cols])))

    problem = RegressionProblem.from_demonstrations(instance.demos, layout.p, layout.m)
    gd = gd_reference(problem, config.T, config.lr)
    first_gd = copy_count + stack.metadata["encoder_layers"]
    iterate_gap = max(float(np.max(np.abs(extract_w(states[first_gd + t], fmap) - gd.iterates[t])))
                      for t in range(config.T + 1))

    z_test = window_features(instance.prefix[len(instance.prefix) - layout.history_len:], layout.p)
    prediction = read_out(H, layout)
    readout_gap = float(np.max(np.abs(prediction - gd.weights @ z_test)))

    shuffle_gap = 0.0
    for _ in range(permutations):
        order = rng.permutation(layout.n)
        shuffled = build_context(instance.demos[order], instance.prefix, layout).data
        shuffle_gap = max(shuffle_gap, float(np.max(np.abs(read_out(forward(shuffled, stack), layout) - prediction))))
    return {"blocks": block_gap, "iterates": iterate_gap, "readout": readout_gap, "shuffle": shuffle_gap}


def check_forward_oracle(rng: np.random.Generator, trials: int = 40) -> Dict[str, float]:
    """``conditional_next`` against path enumeration for ``K <= 4``, ``p <= 4``, ``k <= 6``."""
    worst_l1, worst_sum = 0.0, 0.0
    for _ in range(trials):
        K = int(rng.integers(2, 5))
        p = int(rng.integers(2, 5))
        hmm = new_low_rank_hmm(K, p, int(rng.integers(1, K + 1)), seed=int(rng.integers(0, 2 ** 63)))
        k = int(rng.integers(1, 7))
        _, history = sample_symbols(hmm, 1, k, rng)
        history = history[0, :k - 1]
        exact = conditional_next(hmm, history)
        worst_l1 = max(worst_l1, float(np.abs(exact - path_enumeration_conditional(hmm, history)).sum()))
        worst_sum = max(worst_sum, abs(float(exact.sum()) - 1.0))
    return {"l1": worst_l1, "sum": worst_sum}


def check_marginal_consistency(rng: np.random.Generator, trials: int = 20) -> float:
    """Summing the two-step memory prediction over its second symbol gives the one-step prediction."""
    worst = 0.0
    for _ in range(trials):
        hmm = new_low_rank_hmm(3, 2, 2, seed=int(rng.integers(0, 2 ** 63)))
        model = MemoryModel(hmm, memory_len=3, steps_ahead=2)
        _, window = sample_symbols(hmm, 1, model.window_len, rng)
        joint = m_step_conditional(model, window[0]).reshape(hmm.num_obs, hmm.num_obs)
        single = hmm.emission @ predictive_belief(hmm, model.prior.probs, window[0])
        worst = max(worst, float(np.max(np.abs(joint.sum(axis=1) - single))))
    return worst


def check_rate(rng: np.random.Generator, problems: int = 50, T: int = 200) -> int:
    """Total rate-bound violations across random Gaussian regression problems."""
    violations = 0
    for _ in range(problems):
        features = int(rng.integers(2, 7))
        n = int(rng.integers(features, 4 * features + 1))
        problem = RegressionProblem(rng.normal(size=(int(rng.integers(1, 4)), n)), rng.normal(size=(features, n)))
        violations += len(rate_check(problem, T=T).violations)
    return violations


def run_verification(config: ExperimentConfig, num_configs: int = 20, permutations: int = 10,
                     quiet: Optional[bool] = None) -> VerifyReport:
    """
    Run every equivalence check. Random instances are drawn from ``config.seed``;
    the softmax sweep uses ``config`` itself.
    """
    quiet = GlobalConfig.fetch("quiet", False) if quiet is None else quiet
    report = VerifyReport()
    instances_rng, oracle_rng, extended_rng, rate_rng = spawn_rngs(config.seed, 4)

    worst = {"blocks": 0.0, "iterates": 0.0, "readout": 0.0, "shuffle": 0.0}
    for _ in tqdm(range(num_configs), desc="Instances", unit="config", disable=quiet):
        instance = random_instance(instances_rng)
        gaps = check_instance(instance, permutations, instances_rng)
        logging.info(f"{instance.describe()}: {gaps}")
        worst = {key: max(worst[key], gaps[key]) for key in worst}
    report.add("copied blocks match shifted copies", worst["blocks"], 0.0, strict=False)
    report.add("per-layer W matches gradient descent", worst["iterates"], 1e-9)
    report.add("read-out matches W_T z", worst["readout"], 1e-8)
    report.add("read-out invariant under demonstration shuffles", worst["shuffle"], 0.0, strict=False)

    extended = [check_instance(random_instance(extended_rng, m=2, p=2), permutations, extended_rng)
                for _ in range(max(1, num_configs // 4))]
    report.add("extended read-out matches W_T z", max(g["readout"] for g in extended), 1e-8)
    report.add("two-step marginal consistency", check_marginal_consistency(extended_rng), 1e-9)

    forward_gaps = check_forward_oracle(oracle_rng)
    report.add("conditional_next matches path enumeration", forward_gaps["l1"], 1e-9)
    report.add("conditionals sum to one", forward_gaps["sum"], 1e-10)

    report.add("rate-bound violations", check_rate(rate_rng), 0.0, strict=False)

    gaps = beta_convergence(config)["gap"].to_numpy()
    steps = np.diff(gaps)
    report.add("softmax gap decreases with beta1", float(np.max(steps)) if steps.size else -math.inf, 0.0,
               detail=f"gaps={gaps.tolist()}")

    logging.info(f"Verification {'passed' if report.all_passed else 'failed'}: "
                 f"{sum(c.passed for c in report.checks)}/{len(report.checks)} checks")
    return report
