import math
import logging
import warnings
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from hmm_icl.context.icl_context import vec_index, window_features
from hmm_icl.models.hmm_core import one_hot
from hmm_icl.utils.errors import DivergenceWarning, ShapeError, SingularGramError

DIVERGENCE_NORM = 1e6
SINGULAR_TOL = 1e-10
FALLBACK_RIDGE = 1e-8


@dataclass
class RegressionProblem:
    """
    Least-squares problem ``min_W |O - W Z|_F^2 + ridge |W|_F^2``.

    Attributes:
        O (np.ndarray): ``out_dim x n`` targets, one column per demonstration.
        Z (np.ndarray): ``features x n`` inputs.
        ridge (float): Non-negative regulariser.
    """
    O: np.ndarray
    Z: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        self.O = np.atleast_2d(np.asarray(self.O, dtype=np.float64))
        self.Z = np.atleast_2d(np.asarray(self.Z, dtype=np.float64))
        if self.O.shape[1] != self.Z.shape[1]:
            raise ShapeError(f"O has {self.O.shape[1]} columns but Z has {self.Z.shape[1]}")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")

    @property
    def num_samples(self) -> int:
        return self.Z.shape[1]

    @property
    def gram(self) -> np.ndarray:
        return self.Z @ self.Z.T

    @classmethod
    def from_windows(cls, O: np.ndarray, Z: np.ndarray, window_len: int, ridge: float = 0.0) -> 'RegressionProblem':
        """Validated constructor for stacked one-hot windows: binary ``Z`` with ``window_len`` ones per column."""
        problem = cls(O, Z, ridge)
        if not np.all((problem.Z == 0) | (problem.Z == 1)):
            raise ShapeError("window matrix must be binary")
        counts = problem.Z.sum(axis=0)
        if not np.all(counts == window_len):
            raise ShapeError(f"every window column must hold {window_len} ones")
        return problem

    @classmethod
    def from_demonstrations(cls, demos: np.ndarray, p: int, m: int = 1, ridge: float = 0.0) -> 'RegressionProblem':
        """
        Targets and windows of ``n x L`` demonstration symbols.

        The target is the last symbol (``m = 1``) or the Vec code of the last
        ``m`` symbols; the window is everything before it, most recent first.
        """
        demos = np.asarray(demos, dtype=np.int64)
        length = demos.shape[1]
        window_len = length - m
        Z = window_features(demos[:, :window_len], p).T
        O = target_codes(demos[:, window_len:], p).T
        return cls.from_windows(O, Z, window_len, ridge)


def target_codes(tails: np.ndarray, p: int) -> np.ndarray:
    """One-hot Vec codes (``num x p**m``) of ``num x m`` symbol tuples."""
    tails = np.atleast_2d(np.asarray(tails, dtype=np.int64))
    indices = np.array([vec_index(row, p) for row in tails], dtype=np.int64)
    return one_hot(indices, p ** tails.shape[1])


@dataclass
class LeastSquaresFit:
    weights: np.ndarray
    ridge_used: float
    fallback: bool
    min_eigenvalue: float
    max_eigenvalue: float

    @property
    def condition(self) -> float:
        if self.min_eigenvalue + self.ridge_used <= 0:
            return math.inf
        return (self.max_eigenvalue + self.ridge_used) / (self.min_eigenvalue + self.ridge_used)


def _solve(problem: RegressionProblem, ridge: float):
    values, vectors = np.linalg.eigh(problem.gram)
    weights = ((problem.O @ problem.Z.T) @ vectors / (values + ridge)) @ vectors.T
    return weights, float(values[0]), float(values[-1])


def solve_least_squares(problem: RegressionProblem, fallback: bool = True) -> LeastSquaresFit:
    """
    Closed-form ``O Z^T (Z Z^T + ridge I)^{-1}`` through the eigendecomposition of the Gram matrix.

    With ``ridge = 0`` and a singular Gram matrix this either raises
    :class:`SingularGramError` or, when ``fallback`` is set, retries with
    ``1e-8 trace(Z Z^T) / rows`` and marks the fit.
    """
    values = np.linalg.eigvalsh(problem.gram)
    threshold = SINGULAR_TOL * problem.num_samples
    ridge = problem.ridge
    used_fallback = False
    if ridge == 0 and values[0] <= threshold:
        if not fallback:
            raise SingularGramError(float(values[0]), threshold)
        ridge = FALLBACK_RIDGE * float(np.trace(problem.gram)) / problem.gram.shape[0]
        used_fallback = True
        logging.warning(f"Singular Gram matrix (min eigenvalue {values[0]:.3e}); using ridge {ridge:.3e}")
    weights, lo, hi = _solve(problem, ridge)
    fit = LeastSquaresFit(weights, ridge, used_fallback, lo, hi)
    logging.info(f"Least squares: condition number {fit.condition:.3e}, ridge {ridge:.3e}")
    return fit


def least_squares(problem: RegressionProblem) -> np.ndarray:
    """
    ``W_hat = O Z^T (Z Z^T + ridge I)^{-1}``.

    Raises:
        SingularGramError: if ``ridge = 0`` and the smallest Gram eigenvalue is at most ``1e-10 n``.
    """
    return solve_least_squares(problem, fallback=False).weights


def objective(problem: RegressionProblem, weights: np.ndarray) -> float:
    residual = weights @ problem.Z - problem.O
    return float(np.sum(residual ** 2) + problem.ridge * np.sum(weights ** 2))


@dataclass
class GdTrace:
    weights: np.ndarray
    iterates: List[np.ndarray] = field(repr=False)
    diverged: bool = False


def gd_reference(problem: RegressionProblem, T: int, lr: float,
                 initial: Optional[np.ndarray] = None) -> GdTrace:
    """
    Explicit gradient descent on ``|O - W Z|_F^2``.

    ``W_{t+1} = W_t - lr * 2 (W_t Z - O) Z^T`` starting from zero (or
    ``initial``); the ridge term of the problem is not used. Returns the final
    weights together with all ``T + 1`` iterates.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    if lr < 0:
        raise ValueError("lr must be non-negative")
    W = np.zeros((problem.O.shape[0], problem.Z.shape[0])) if initial is None \
        else np.array(initial, dtype=np.float64, copy=True)
    iterates = [W]
    diverged = False
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(T):
            W = W - lr * 2.0 * (W @ problem.Z - problem.O) @ problem.Z.T
            iterates.append(W)
            if not diverged and not np.linalg.norm(W) <= DIVERGENCE_NORM:
                diverged = True
                logging.warning(f"Gradient descent diverged at step {step + 1} with lr={lr}")
                warnings.warn(f"iterate norm exceeded {DIVERGENCE_NORM:.0e} at step {step + 1}",
                              DivergenceWarning, stacklevel=2)
    return GdTrace(weights=W, iterates=iterates, diverged=diverged)


@dataclass
class RateReport:
    """Measured distances to the minimiser against the ``exp(-t / kappa)`` envelope."""
    alpha: float
    beta: float
    kappa: float
    lr: float
    distances: np.ndarray = field(repr=False)
    bounds: np.ndarray = field(repr=False)
    violations: List[int] = field(default_factory=list)
    worst_slack: float = math.inf

    @property
    def passed(self) -> bool:
        return not self.violations


def rate_check(problem: RegressionProblem, lr: Optional[float] = None, T: int = 200,
               initial: Optional[np.ndarray] = None, tol: float = 1e-9) -> RateReport:
    """
    Check ``|W_t - W*|^2 <= exp(-t / kappa) |W_0 - W*|^2`` for ``t <= T``.

    ``alpha`` and ``beta`` are the extreme Gram eigenvalues and the default
    step is ``1 / (2 beta)``. When the Gram matrix is singular ``W*`` is the
    minimum-norm minimiser and ``kappa`` is infinite.
    """
    values, vectors = np.linalg.eigh(problem.gram)
    alpha, beta = float(values[0]), float(values[-1])
    lr = 1.0 / (2.0 * beta) if lr is None else lr
    keep = values > SINGULAR_TOL * max(problem.num_samples, 1)
    inverse = np.where(keep, 1.0 / np.where(keep, values, 1.0), 0.0)
    optimum = ((problem.O @ problem.Z.T) @ vectors * inverse) @ vectors.T
    kappa = beta / alpha if alpha > SINGULAR_TOL * max(problem.num_samples, 1) else math.inf

    trace = gd_reference(problem, T, lr, initial)
    distances = np.array([np.sum((W - optimum) ** 2) for W in trace.iterates])
    steps = np.arange(T + 1)
    bounds = np.exp(-steps / kappa) * distances[0]
    slack = bounds - distances
    allowance = tol * max(1.0, float(distances[0]))
    violations = [int(t) for t in steps[slack < -allowance]]
    if violations:
        logging.warning(f"Rate bound violated at {len(violations)} steps (kappa={kappa:.3g})")
    return RateReport(alpha=alpha, beta=beta, kappa=kappa, lr=lr, distances=distances, bounds=bounds,
                      violations=violations, worst_slack=float(slack.min()))
