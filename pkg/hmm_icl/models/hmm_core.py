"""
Low-rank hidden Markov models: generation, sampling, exact filtering and
observability estimation.

Conventions used throughout the package:

* ``emission[o, h] = T(o | h)``; columns are distributions over symbols.
* ``transition[h, h'] = P(h' | h) = psi[h] . w[h']``; rows are distributions.
* ``initial`` is the distribution of the first hidden state.
* Multi-step tuples are indexed big-endian, ``index = sum_j o_j * p**(m-1-j)``.
"""
import math
import logging
import itertools
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from hmm_icl.utils.errors import (
    DegenerateLikelihoodError,
    InvalidDimensionError,
    InvalidDistributionError,
    NonOneHotError,
)
from hmm_icl.utils.utils import GENERATOR_NAME, check_seed, derive_seed, make_rng, matrix_to_rows, rows_to_matrix

LIKELIHOOD_FLOOR = 1e-300
RAY_BUDGET = 20_000


def _check_stochastic(matrix: np.ndarray, axis: int, tol: float, name: str) -> None:
    if np.any(matrix < 0):
        raise InvalidDistributionError(f"{name} has negative entries")
    sums = matrix.sum(axis=axis)
    worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if worst > tol:
        raise InvalidDistributionError(f"{name} sums deviate from 1 by {worst:.3e} (tolerance {tol:.0e})")


def _frozen(array: np.ndarray) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


class LowRankHmm:
    """
    Hidden Markov model whose transition factors through a rank-``d`` mixture.

    Attributes:
        psi (np.ndarray): ``K x d``; row ``h`` is the mixing weight of state ``h``.
        w (np.ndarray): ``K x d``; column ``z`` is the ``z``-th next-state distribution.
        emission (np.ndarray): ``p x K`` emission matrix.
        initial (np.ndarray): distribution of the first hidden state.
        seed (int | None): seed that generated the model, echoed in every dump.
    """

    def __init__(self, psi: np.ndarray, w: np.ndarray, emission: np.ndarray, initial: np.ndarray,
                 seed: Optional[int] = None, generator_name: str = GENERATOR_NAME):
        psi, w, emission, initial = (np.asarray(x, dtype=np.float64) for x in (psi, w, emission, initial))
        if psi.ndim != 2 or w.ndim != 2 or emission.ndim != 2 or initial.ndim != 1:
            raise InvalidDimensionError("psi, w and emission must be matrices and initial a vector")
        num_hidden, rank = psi.shape
        if num_hidden == 0 or rank == 0 or emission.shape[0] == 0:
            raise InvalidDimensionError("sizes must be positive")
        if w.shape != (num_hidden, rank):
            raise InvalidDimensionError(f"w must be {num_hidden}x{rank}, got {w.shape}")
        if rank > num_hidden:
            raise InvalidDimensionError(f"rank {rank} exceeds num_hidden {num_hidden}")
        if emission.shape[1] != num_hidden or initial.shape[0] != num_hidden:
            raise InvalidDimensionError("emission columns and initial must match num_hidden")

        _check_stochastic(psi, 1, 1e-12, "psi rows")
        _check_stochastic(w, 0, 1e-12, "w columns")
        _check_stochastic(emission, 0, 1e-12, "emission columns")
        _check_stochastic(initial, 0, 1e-12, "initial")
        transition = psi @ w.T
        _check_stochastic(transition, 1, 1e-10, "transition rows")

        self._psi = _frozen(psi)
        self._w = _frozen(w)
        self._emission = _frozen(emission)
        self._initial = _frozen(initial)
        self._transition = _frozen(transition)
        self.seed = None if seed is None else check_seed(seed)
        self.generator_name = generator_name

    @classmethod
    def from_transition(cls, transition: np.ndarray, emission: np.ndarray,
                        initial: Optional[np.ndarray] = None) -> 'LowRankHmm':
        """Wrap a full transition matrix as the trivial factorisation ``psi = P``, ``w = I``."""
        transition = np.asarray(transition, dtype=np.float64)
        num_hidden = transition.shape[0]
        if initial is None:
            initial = np.full(num_hidden, 1.0 / num_hidden)
        return cls(transition, np.eye(num_hidden), emission, initial)

    @property
    def num_hidden(self) -> int:
        return self._psi.shape[0]

    @property
    def num_obs(self) -> int:
        return self._emission.shape[0]

    @property
    def rank(self) -> int:
        return self._psi.shape[1]

    @property
    def psi(self) -> np.ndarray:
        return self._psi

    @property
    def w(self) -> np.ndarray:
        return self._w

    @property
    def emission(self) -> np.ndarray:
        return self._emission

    @property
    def initial(self) -> np.ndarray:
        return self._initial

    @property
    def transition(self) -> np.ndarray:
        return self._transition

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, LowRankHmm):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in (
            (self.psi, other.psi), (self.w, other.w),
            (self.emission, other.emission), (self.initial, other.initial)))

    def __repr__(self) -> str:
        return (f"LowRankHmm(num_hidden={self.num_hidden}, num_obs={self.num_obs}, "
                f"rank={self.rank}, seed={self.seed})")


@dataclass(frozen=True)
class BeliefState:
    """Posterior distribution over hidden states."""
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise InvalidDimensionError("belief must be a non-empty vector")
        _check_stochastic(probs, 0, 1e-10, "belief")
        object.__setattr__(self, "probs", _frozen(probs))

    @classmethod
    def uniform(cls, num_hidden: int) -> 'BeliefState':
        return cls(np.full(num_hidden, 1.0 / num_hidden))


# --- Symbols ---
def one_hot(symbols: np.ndarray, num_obs: int) -> np.ndarray:
    """One-hot encode integer symbols along a new trailing axis."""
    symbols = np.asarray(symbols, dtype=np.int64)
    return np.eye(num_obs, dtype=np.float64)[symbols]


def to_symbols(observations: Any, num_obs: int) -> np.ndarray:
    """
    Integer symbols of a sequence given either as one-hot rows or as integers.

    Raises:
        NonOneHotError: if a row is not a basis vector of length ``num_obs``.
    """
    obs = np.asarray(observations)
    if obs.size == 0:
        return np.zeros(0, dtype=np.int64)
    if obs.ndim == 1 and np.issubdtype(obs.dtype, np.integer):
        if np.any(obs < 0) or np.any(obs >= num_obs):
            raise NonOneHotError(f"symbols must lie in [0, {num_obs})")
        return obs.astype(np.int64)
    obs = np.atleast_2d(obs)
    if obs.shape[-1] != num_obs:
        raise NonOneHotError(f"one-hot rows must have length {num_obs}, got {obs.shape[-1]}")
    ones = obs == 1
    if not (np.all(ones | (obs == 0)) and np.all(ones.sum(axis=-1) == 1)):
        raise NonOneHotError("observation rows must be one-hot")
    return np.argmax(obs, axis=-1).astype(np.int64)


# --- Generation ---
def _dirichlet(rng: np.random.Generator, concentration: float, dim: int, size: int) -> np.ndarray:
    if dim == 1:
        return np.ones((size, 1))
    draws = rng.dirichlet(np.full(dim, concentration), size=size)
    return draws / draws.sum(axis=1, keepdims=True)


def new_low_rank_hmm(num_hidden: int, num_obs: int, rank: int, concentration: float = 1.0,
                     seed: int = 0) -> LowRankHmm:
    """
    Draw a random rank-``rank`` HMM.

    The transition is the mixture ``P(h'|h) = sum_z psi[h, z] w[h', z]`` with
    Dirichlet(concentration) mixing rows and next-state columns, so the
    factorisation is exact by construction. The initial distribution is uniform.

    Args:
        num_hidden (int): Number of hidden states ``K``.
        num_obs (int): Vocabulary size ``p``.
        rank (int): Factor dimension ``d <= K``.
        concentration (float): Dirichlet parameter shared by all draws.
        seed (int): 64-bit seed; equal seeds give bit-identical models.

    Returns:
        LowRankHmm: the generated model.
    """
    if min(num_hidden, num_obs, rank) < 1:
        raise InvalidDimensionError("num_hidden, num_obs and rank must be positive")
    if rank > num_hidden:
        raise InvalidDimensionError(f"rank {rank} exceeds num_hidden {num_hidden}")
    if not concentration > 0:
        raise InvalidDimensionError("concentration must be positive")

    rng = make_rng(seed)
    psi = _dirichlet(rng, concentration, rank, num_hidden)
    w = _dirichlet(rng, concentration, num_hidden, rank).T
    emission = _dirichlet(rng, concentration, num_obs, num_hidden).T
    initial = np.full(num_hidden, 1.0 / num_hidden)
    return LowRankHmm(psi, w, emission, initial, seed=seed)


def transition_matrix(hmm: LowRankHmm) -> np.ndarray:
    """``K x K`` matrix with ``[h, h'] = P(h' | h)``."""
    return hmm.transition


def stationary_distribution(hmm: LowRankHmm) -> np.ndarray:
    """Left Perron vector of the transition, normalised to a distribution."""
    values, vectors = np.linalg.eig(hmm.transition.T)
    lead = vectors[:, int(np.argmin(np.abs(values - 1.0)))].real
    lead = np.abs(lead)
    return lead / lead.sum()


# --- Sampling ---
def _cumulative(probs: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=-1)
    cum /= cum[..., -1:]
    cum[..., -1] = 1.0
    return cum


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    states = np.sum(cum <= u[..., None], axis=-1)
    return np.minimum(states, cum.shape[-1] - 1)


def sample_symbols(hmm: LowRankHmm, num: int, length: int,
                   rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Batch sampler returning ``(hidden, symbols)``, both ``num x length`` integer arrays."""
    if length < 1 or num < 1:
        raise InvalidDimensionError(f"num and length must be positive, got {num}, {length}")
    cum_initial = _cumulative(hmm.initial)
    cum_transition = _cumulative(hmm.transition)
    cum_emission = _cumulative(hmm.emission.T)

    hidden = np.empty((num, length), dtype=np.int64)
    hidden[:, 0] = _draw(np.broadcast_to(cum_initial, (num, hmm.num_hidden)), rng.random(num))
    for step in range(1, length):
        hidden[:, step] = _draw(cum_transition[hidden[:, step - 1]], rng.random(num))
    symbols = _draw(cum_emission[hidden], rng.random((num, length)))
    return hidden, symbols


def sample_sequences(hmm: LowRankHmm, num: int, length: int,
                     rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Batch form of :func:`sample_sequence`: ``(hidden num x length, obs num x length x p)``."""
    hidden, symbols = sample_symbols(hmm, num, length, rng)
    return hidden, one_hot(symbols, hmm.num_obs)


def sample_sequence(hmm: LowRankHmm, length: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    hidden, obs = sample_sequences(hmm, 1, length, rng)
    return hidden[0], obs[0]


# --- Filtering ---
def _condition(hmm: LowRankHmm, predictive: np.ndarray, symbol: int, step: Optional[int]) -> np.ndarray:
    unnormalized = hmm.emission[symbol] * predictive
    normalizer = float(unnormalized.sum())
    if normalizer < LIKELIHOOD_FLOOR:
        logging.warning(f"Degenerate likelihood {normalizer:.3e} at step {step}")
        raise DegenerateLikelihoodError(normalizer, step)
    return unnormalized / normalizer


def belief_update(hmm: LowRankHmm, belief: BeliefState, obs: Any) -> BeliefState:
    """
    One Bayes filter step: propagate through the transition, then condition on ``obs``.

    Raises:
        DegenerateLikelihoodError: if ``obs`` has likelihood below 1e-300.
    """
    symbol = int(to_symbols(np.atleast_2d(obs) if np.ndim(obs) else np.array([obs]), hmm.num_obs)[0])
    predictive = hmm.transition.T @ belief.probs
    return BeliefState(_condition(hmm, predictive, symbol, None))


def filter_belief(hmm: LowRankHmm, prior: np.ndarray, history: Any) -> BeliefState:
    """
    Posterior over the hidden state of the last history step.

    ``prior`` is the predictive belief over the hidden state of the first
    history step, so the first observation conditions it directly and later
    observations go through :func:`belief_update`.
    """
    symbols = to_symbols(history, hmm.num_obs)
    belief = np.asarray(prior, dtype=np.float64)
    if symbols.size == 0:
        return BeliefState(belief)
    belief = _condition(hmm, belief, int(symbols[0]), 0)
    for step, symbol in enumerate(symbols[1:], start=1):
        belief = _condition(hmm, hmm.transition.T @ belief, int(symbol), step)
    return BeliefState(belief)


def predictive_belief(hmm: LowRankHmm, prior: np.ndarray, history: Any) -> np.ndarray:
    """Distribution of the hidden state following ``history``; ``prior`` itself if empty."""
    symbols = to_symbols(history, hmm.num_obs)
    if symbols.size == 0:
        return np.asarray(prior, dtype=np.float64)
    return hmm.transition.T @ filter_belief(hmm, prior, symbols).probs


def rollout(hmm: LowRankHmm, predictive: np.ndarray, steps_ahead: int) -> np.ndarray:
    """
    Probability of every ``steps_ahead``-tuple of symbols given the hidden-state
    distribution of the first tuple element, indexed big-endian.
    """
    if steps_ahead < 1:
        raise InvalidDimensionError("steps_ahead must be at least 1")
    joint = hmm.emission * predictive[None, :]
    for _ in range(steps_ahead - 1):
        joint = ((joint @ hmm.transition)[:, None, :] * hmm.emission[None, :, :]).reshape(-1, hmm.num_hidden)
    return joint.sum(axis=1)


def conditional_block(hmm: LowRankHmm, history: Any, steps_ahead: int = 1) -> np.ndarray:
    """Exact ``P(o_{k:k+m-1} | o_{1:k-1})`` over ``p**m`` tuples."""
    return rollout(hmm, predictive_belief(hmm, hmm.initial, history), steps_ahead)


def conditional_next(hmm: LowRankHmm, history: Any) -> np.ndarray:
    """
    Exact next-symbol distribution given the full history.

    An empty history returns the marginal of the first symbol, ``emission @ initial``.
    """
    return hmm.emission @ predictive_belief(hmm, hmm.initial, history)


def filter_batch(hmm: LowRankHmm, prior: np.ndarray, symbols: np.ndarray) -> np.ndarray:
    """
    Vectorised :func:`predictive_belief` over the rows of ``symbols`` (``num x t``).

    Returns the ``num x K`` predictive beliefs for the step after each row.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    num, length = symbols.shape
    belief = np.broadcast_to(np.asarray(prior, dtype=np.float64), (num, hmm.num_hidden)).copy()
    if length == 0:
        return belief
    for step in range(length):
        if step > 0:
            belief = belief @ hmm.transition
        belief = belief * hmm.emission[symbols[:, step]]
        normalizer = belief.sum(axis=1, keepdims=True)
        worst = float(normalizer.min())
        if worst < LIKELIHOOD_FLOOR:
            logging.warning(f"Degenerate likelihood {worst:.3e} at step {step}")
            raise DegenerateLikelihoodError(worst, step)
        belief = belief / normalizer
    return belief @ hmm.transition


# --- Observability ---
@dataclass
class GammaEstimate:
    """
    Observability candidates reported side by side.

    ``ray_min`` is the exact constant when the arrangement enumeration fit the
    budget and None otherwise; ``value`` is the minimum over all candidates.
    """
    vertex_min: float
    sampled_min: float
    ray_min: Optional[float]
    value: float
    num_pairs: int


def _ratio(operator: np.ndarray, directions: np.ndarray) -> np.ndarray:
    num = np.abs(directions @ operator.T).sum(axis=1)
    den = np.abs(directions).sum(axis=1)
    return num / den


def _vertex_min(operator: np.ndarray) -> float:
    cols = operator.shape[1]
    if cols < 2:
        return 1.0
    pairs = np.array(list(itertools.combinations(range(cols), 2)))
    diffs = operator[:, pairs[:, 0]] - operator[:, pairs[:, 1]]
    return float(np.abs(diffs).sum(axis=0).min() / 2.0)


def _ray_min(operator: np.ndarray, budget: int = RAY_BUDGET) -> Optional[float]:
    """
    Exact minimum of ``|Ax|_1 / |x|_1`` over non-zero sum-zero ``x``.

    Both norms are linear on each cell of the arrangement cut out by
    ``x_i = 0`` and ``(Ax)_j = 0`` inside the sum-zero subspace, so the
    minimum sits on an extreme ray of some cell. Each ray is the null space of
    ``K - 2`` independent constraints together with the sum-zero row.
    """
    rows, cols = operator.shape
    if cols < 2:
        return 1.0
    need = cols - 2
    constraints = np.vstack([np.eye(cols), operator])
    if math.comb(len(constraints), need) > budget:
        return None
    best = math.inf
    ones = np.ones((1, cols))
    for subset in itertools.combinations(range(len(constraints)), need):
        system = np.vstack([ones, constraints[list(subset)]])
        _, sing, vt = np.linalg.svd(system)
        scale = max(float(sing[0]), 1.0)
        rank = int(np.sum(sing > 1e-12 * scale))
        if rank != cols - 1:
            continue
        ray = vt[-1]
        best = min(best, float(_ratio(operator, ray[None, :])[0]))
    return best


def _sampled_min(operator: np.ndarray, num_pairs: int, rng: np.random.Generator) -> float:
    cols = operator.shape[1]
    if cols < 2:
        return 1.0
    alpha = np.ones(cols)
    best = math.inf
    for _ in range(num_pairs):
        first = rng.dirichlet(alpha)
        second = rng.dirichlet(alpha)
        diff = first - second
        if np.abs(diff).sum() == 0:
            continue
        best = min(best, float(_ratio(operator, diff[None, :])[0]))
    return best


def gamma_breakdown(hmm: LowRankHmm, num_pairs: int, rng: np.random.Generator,
                    operator: Optional[np.ndarray] = None) -> GammaEstimate:
    """Vertex, sampled and arrangement-ray minima of the L1 contraction ratio."""
    if num_pairs < 1:
        raise InvalidDimensionError("num_pairs must be at least 1")
    operator = hmm.emission if operator is None else operator
    vertex = _vertex_min(operator)
    sampled = _sampled_min(operator, num_pairs, rng)
    rays = _ray_min(operator)
    candidates = [vertex, sampled] + ([rays] if rays is not None else [])
    return GammaEstimate(vertex_min=vertex, sampled_min=sampled, ray_min=rays,
                         value=float(min(1.0, min(candidates))), num_pairs=num_pairs)


def estimate_gamma(hmm: LowRankHmm, num_pairs: int, rng: np.random.Generator) -> float:
    """
    Observability constant of the emission operator.

    An upper bound on the true constant that never increases with
    ``num_pairs``; exact whenever the ray enumeration fits its budget.
    """
    return gamma_breakdown(hmm, num_pairs, rng).value


def exact_gamma(hmm: LowRankHmm) -> float:
    value = _ray_min(hmm.emission)
    if value is None:
        raise InvalidDimensionError(f"ray enumeration for K={hmm.num_hidden} exceeds the budget of {RAY_BUDGET}")
    return min(1.0, value)


def multistep_operator(hmm: LowRankHmm, steps_ahead: int) -> np.ndarray:
    """``p**m x K`` matrix ``M[tuple, h] = P(o_{t:t+m-1} = tuple | h_t = h)``."""
    if steps_ahead < 1:
        raise InvalidDimensionError("steps_ahead must be at least 1")
    block = hmm.emission
    for _ in range(steps_ahead - 1):
        ahead = block @ hmm.transition.T
        block = (hmm.emission[:, None, :] * ahead[None, :, :]).reshape(-1, hmm.num_hidden)
    return block


def estimate_gamma_multistep(hmm: LowRankHmm, steps_ahead: int, num_pairs: int,
                             rng: np.random.Generator) -> float:
    """Observability of the ``steps_ahead``-tuple operator; ``steps_ahead = 1`` equals :func:`estimate_gamma`."""
    return gamma_breakdown(hmm, num_pairs, rng, operator=multistep_operator(hmm, steps_ahead)).value


# --- Mixtures ---
@dataclass(frozen=True)
class MixtureConfig:
    num_tasks: int = 8
    hidden_per_task: int = 8
    vocab: int = 4
    rank: int = 2
    task_prior: Optional[Tuple[float, ...]] = None
    seed: int = 0
    concentration: float = 1.0
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if min(self.num_tasks, self.hidden_per_task, self.vocab, self.rank) < 1:
            raise InvalidDimensionError("mixture sizes must be positive")
        if self.rank > self.hidden_per_task:
            raise InvalidDimensionError(f"rank {self.rank} exceeds hidden_per_task {self.hidden_per_task}")
        check_seed(self.seed)
        prior = (np.full(self.num_tasks, 1.0 / self.num_tasks) if self.task_prior is None
                 else np.asarray(self.task_prior, dtype=np.float64))
        if prior.shape != (self.num_tasks,):
            raise InvalidDimensionError("task_prior length must equal num_tasks")
        _check_stochastic(prior, 0, 1e-12, "task_prior")
        object.__setattr__(self, "task_prior", tuple(float(x) for x in prior))

    @classmethod
    def full_scale(cls, seed: int = 0, rank: int = 8) -> 'MixtureConfig':
        """8192 tasks of 128 hidden states over a shared 16-symbol vocabulary."""
        return cls(num_tasks=8192, hidden_per_task=128, vocab=16, rank=rank, seed=seed,
                   metadata={"scale": "full", "num_samples": 131072, "batch_size": 32})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_tasks": self.num_tasks,
            "hidden_per_task": self.hidden_per_task,
            "vocab": self.vocab,
            "rank": self.rank,
            "concentration": self.concentration,
            "task_prior": list(self.task_prior),
            "seed": self.seed,
            "generator_name": GENERATOR_NAME,
            "metadata": dict(self.metadata),
        }


class HmmMixture:
    """
    A set of tasks sharing one vocabulary plus a sampler over them.

    Task ``i`` is generated on first access from ``derive_seed(seed, i)``, so
    large configurations cost nothing until sampled.
    """

    def __init__(self, config: MixtureConfig):
        self.config = config
        self._tasks: Dict[int, LowRankHmm] = {}
        self._cum_prior = _cumulative(np.asarray(config.task_prior))

    def __len__(self) -> int:
        return self.config.num_tasks

    def task_seed(self, index: int) -> int:
        return derive_seed(self.config.seed, index)

    def task(self, index: int) -> LowRankHmm:
        if not 0 <= index < self.config.num_tasks:
            raise IndexError(f"task {index} out of range for {self.config.num_tasks} tasks")
        if index not in self._tasks:
            cfg = self.config
            self._tasks[index] = new_low_rank_hmm(cfg.hidden_per_task, cfg.vocab, cfg.rank,
                                                  cfg.concentration, self.task_seed(index))
        return self._tasks[index]

    @property
    def tasks(self) -> List[LowRankHmm]:
        return [self.task(i) for i in range(self.config.num_tasks)]

    def sample_tasks(self, num: int, rng: np.random.Generator) -> np.ndarray:
        return _draw(np.broadcast_to(self._cum_prior, (num, len(self._cum_prior))), rng.random(num))

    def sample_sequence(self, length: int, rng: np.random.Generator) -> Tuple[int, np.ndarray, np.ndarray]:
        """Draw a task from the prior, then one sequence from it."""
        task = int(self.sample_tasks(1, rng)[0])
        hidden, obs = sample_sequence(self.task(task), length, rng)
        return task, hidden, obs

    def sample_task_sequences(self, num: int, length: int,
                              rng: np.random.Generator) -> Tuple[int, np.ndarray, np.ndarray]:
        """One task for a whole prompt: ``num`` sequences all drawn from the same task."""
        task = int(self.sample_tasks(1, rng)[0])
        hidden, obs = sample_sequences(self.task(task), num, length, rng)
        return task, hidden, obs


def new_mixture(config: MixtureConfig) -> HmmMixture:
    logging.info(f"Mixture of {config.num_tasks} tasks, {config.hidden_per_task} hidden states, "
                 f"vocab {config.vocab}, seed {config.seed}")
    return HmmMixture(config)


# --- Serialization ---
def hmm_to_json(hmm: LowRankHmm) -> Dict[str, Any]:
    return {
        "num_hidden": hmm.num_hidden,
        "num_obs": hmm.num_obs,
        "rank": hmm.rank,
        "psi": matrix_to_rows(hmm.psi),
        "w": matrix_to_rows(hmm.w),
        "emission": matrix_to_rows(hmm.emission),
        "initial": [float(x) for x in hmm.initial],
        "seed": hmm.seed,
        "generator_name": hmm.generator_name,
    }


def hmm_from_json(data: Dict[str, Any]) -> LowRankHmm:
    hmm = LowRankHmm(
        rows_to_matrix(data["psi"]),
        rows_to_matrix(data["w"]),
        rows_to_matrix(data["emission"]),
        np.asarray(data["initial"], dtype=np.float64),
        seed=data.get("seed"),
        generator_name=data.get("generator_name", GENERATOR_NAME),
    )
    if (hmm.num_hidden, hmm.num_obs, hmm.rank) != (data["num_hidden"], data["num_obs"], data["rank"]):
        raise InvalidDimensionError("declared sizes disagree with the stored matrices")
    return hmm


def mixture_to_json(mixture: HmmMixture, include_tasks: bool = False) -> Dict[str, Any]:
    """Mixture config plus per-task seeds; full matrices only when ``include_tasks``."""
    out = mixture.config.to_dict()
    if include_tasks:
        out["tasks"] = [hmm_to_json(task) for task in mixture.tasks]
    else:
        out["task_seeds"] = [mixture.task_seed(i) for i in range(len(mixture))]
    return out
