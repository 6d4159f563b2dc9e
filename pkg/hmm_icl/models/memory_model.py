import logging
from dataclasses import dataclass, field
from typing import Any, Optional, Tuple

import numpy as np

from hmm_icl.models.hmm_core import (
    BeliefState,
    LowRankHmm,
    filter_batch,
    predictive_belief,
    rollout,
    sample_symbols,
    to_symbols,
)
from hmm_icl.utils.errors import InvalidDimensionError, ShapeError


@dataclass(frozen=True)
class MemoryModel:
    """
    Fixed-memory approximation of an HMM's predictive distribution.

    The model forgets everything older than its window and starts filtering
    from a history-independent ``prior``, which is the predictive belief over
    the hidden state of the window's first observation.

    Attributes:
        hmm (LowRankHmm): The underlying model.
        memory_len (int): ``L - 1``, the number of past symbols kept.
        prior (BeliefState): Starting belief; uniform when not given.
        steps_ahead (int): ``m``; 1 predicts the next symbol, larger values a tuple.
    """
    hmm: LowRankHmm
    memory_len: int
    prior: Optional[BeliefState] = None
    steps_ahead: int = 1

    def __post_init__(self):
        if self.memory_len < 1 or self.steps_ahead < 1:
            raise InvalidDimensionError("memory_len and steps_ahead must be at least 1")
        if self.memory_len < self.steps_ahead:
            raise InvalidDimensionError(
                f"memory_len {self.memory_len} is shorter than steps_ahead {self.steps_ahead}")
        if self.prior is None:
            object.__setattr__(self, "prior", BeliefState.uniform(self.hmm.num_hidden))
        elif self.prior.probs.shape != (self.hmm.num_hidden,):
            raise InvalidDimensionError("prior must cover every hidden state")

    @property
    def window_len(self) -> int:
        """Symbols consumed per prediction: ``L - 1`` for one step, ``L - m`` for ``m`` steps."""
        return self.memory_len - (self.steps_ahead - 1)


def _window(model: MemoryModel, window: Any, expected: int) -> np.ndarray:
    symbols = to_symbols(window, model.hmm.num_obs)
    if symbols.shape != (expected,):
        raise ShapeError(f"window must hold {expected} observations, got {symbols.shape[0]}")
    return symbols


def l_memory_conditional(model: MemoryModel, window: Any) -> np.ndarray:
    """``P_L(. | window)`` over the ``p`` symbols; window length must equal ``memory_len``."""
    symbols = _window(model, window, model.memory_len)
    hmm = model.hmm
    return hmm.emission @ predictive_belief(hmm, model.prior.probs, symbols)


def m_step_conditional(model: MemoryModel, window: Any) -> np.ndarray:
    """
    Probability of the next ``steps_ahead`` symbols as a ``p**m`` vector (big-endian tuples).

    The window holds ``memory_len - (steps_ahead - 1)`` symbols.
    """
    symbols = _window(model, window, model.window_len)
    hmm = model.hmm
    return rollout(hmm, predictive_belief(hmm, model.prior.probs, symbols), model.steps_ahead)


def memory_conditionals(hmm: LowRankHmm, prior: np.ndarray, histories: np.ndarray,
                        window_len: int, steps_ahead: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    """
    Exact and fixed-memory predictions for a batch of symbol histories.

    Args:
        hmm (LowRankHmm): The model.
        prior (np.ndarray): Memory-model starting belief.
        histories (np.ndarray): ``num x (k - 1)`` symbols.
        window_len (int): Trailing symbols the memory model keeps.
        steps_ahead (int): Tuple length of the prediction.

    Returns:
        tuple: ``(exact, approx)``, each ``num x p**steps_ahead``.
    """
    histories = np.asarray(histories, dtype=np.int64)
    if window_len > histories.shape[1]:
        raise InvalidDimensionError(f"window of {window_len} exceeds history length {histories.shape[1]}")
    exact_pred = filter_batch(hmm, hmm.initial, histories)
    approx_pred = filter_batch(hmm, prior, histories[:, histories.shape[1] - window_len:])
    return _rollout_batch(hmm, exact_pred, steps_ahead), _rollout_batch(hmm, approx_pred, steps_ahead)


def _rollout_batch(hmm: LowRankHmm, predictive: np.ndarray, steps_ahead: int) -> np.ndarray:
    if steps_ahead == 1:
        return predictive @ hmm.emission.T
    return np.stack([rollout(hmm, row, steps_ahead) for row in predictive])


@dataclass
class ApproxError:
    """Monte-Carlo estimate of the fixed-memory approximation error."""
    mean: float
    se: float
    num_samples: int
    per_sample: np.ndarray = field(repr=False)


def approx_error_from_histories(hmm: LowRankHmm, histories: np.ndarray, L: int, m: int = 1,
                                prior: Optional[np.ndarray] = None) -> ApproxError:
    """
    Mean L1 distance between exact and memory-model predictions over given histories.

    The window is the last ``L - m`` symbols (``L - 1`` when ``m = 1``); when
    ``L`` reaches the history length the whole history is used.
    """
    prior = np.full(hmm.num_hidden, 1.0 / hmm.num_hidden) if prior is None else np.asarray(prior)
    window_len = min(L - m, histories.shape[1])
    exact, approx = memory_conditionals(hmm, prior, histories, window_len, m)
    distances = np.abs(exact - approx).sum(axis=1)
    count = distances.shape[0]
    se = float(distances.std(ddof=1) / np.sqrt(count)) if count > 1 else 0.0
    return ApproxError(mean=float(distances.mean()), se=se, num_samples=count, per_sample=distances)


def model_approx_error(hmm: LowRankHmm, L: int, k: int, m: int, num_samples: int,
                       rng: np.random.Generator, prior: Optional[np.ndarray] = None) -> ApproxError:
    """
    Monte-Carlo estimate of ``E || P(. | o_{1:k-1}) - P_L(. | window) ||_1``.

    Histories of length ``k - 1`` are drawn from the HMM. ``k = L`` is allowed
    and is the full-memory case.

    Args:
        hmm (LowRankHmm): The model.
        L (int): Demonstration length; the window keeps ``L - m`` symbols.
        k (int): Test position; histories hold ``k - 1`` symbols.
        m (int): Steps ahead.
        num_samples (int): Number of sampled histories.
        rng (np.random.Generator): Sampling stream.
        prior (np.ndarray | None): Memory-model prior, uniform when None.

    Returns:
        ApproxError: mean and standard error.
    """
    if not (k >= L >= m + 1):
        raise InvalidDimensionError(f"need k >= L >= m + 1, got k={k}, L={L}, m={m}")
    if num_samples < 1:
        raise InvalidDimensionError("num_samples must be positive")
    _, histories = sample_symbols(hmm, num_samples, k - 1, rng)
    result = approx_error_from_histories(hmm, histories, L, m, prior)
    logging.info(f"eps1(L={L}, k={k}, m={m}) = {result.mean:.6g} +- {result.se:.2g} over {num_samples} samples")
    return result
