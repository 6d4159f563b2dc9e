"""
The in-context input matrix.

Row layout, for ``n`` demonstrations of length ``L`` and a test prefix of
``k - 1`` symbols::

    demo_1 (L rows), delimiter, ..., demo_n (L rows), delimiter,
    test prefix (k - 1 rows), query row

Column layout (0-based): tokens in ``0..p-1``, delimiter flag at ``p``,
``[sin, cos]`` of the 1-based position at ``p+1, p+2``, a constant one at
``D-2`` and the test indicator at ``D-1``. Everything else starts at zero and
is scratch space for the constructed layers.
"""
from dataclasses import dataclass
from typing import Any, Literal, Optional, Sequence, Tuple

import numpy as np

from hmm_icl.models.hmm_core import one_hot, to_symbols
from hmm_icl.utils.errors import CapacityError, DimensionMismatchError, InvalidDimensionError, NonOneHotError, ShapeError
from hmm_icl.utils.utils import write_matrix_csv

ReadoutMode = Literal["standard", "extended"]


@dataclass(frozen=True)
class ContextLayout:
    """
    Sizes of one prompt and the column geometry derived from them.

    Attributes:
        n (int): Number of demonstrations.
        L (int): Demonstration length.
        k (int): Test position; the prefix holds ``k - 1`` symbols.
        p (int): Vocabulary size.
        m (int): Steps predicted at once; 1 is the standard case.
        D (int): Embedding width; a default wide enough for the construction is chosen when None.
    """
    n: int
    L: int
    k: int
    p: int
    m: int = 1
    D: Optional[int] = None

    def __post_init__(self):
        if min(self.n, self.p, self.m) < 1 or self.L < 2:
            raise InvalidDimensionError(f"invalid layout sizes n={self.n}, L={self.L}, p={self.p}, m={self.m}")
        if self.m >= self.L:
            raise InvalidDimensionError(f"steps ahead m={self.m} must be below L={self.L}")
        if self.k < max(self.L - self.m + 1, self.m + 1):
            raise InvalidDimensionError(
                f"k={self.k} leaves no room for a window of {self.L - self.m} symbols")
        if self.D is None:
            object.__setattr__(self, "D", self.default_width())
        if self.D < self.min_width:
            raise CapacityError(self.min_width, self.D, "context matrix")

    def default_width(self) -> int:
        p, m, L = self.p, self.m, self.L
        width = (L + 1) * (p + 3) + p * max(p, p ** m) * (L - 1) + p ** m + 2
        return max(width, 2 * p ** m * L)

    @property
    def min_width(self) -> int:
        return max(2 * self.p ** self.m * self.L, self.block_width + 2)

    @property
    def rows(self) -> int:
        return self.n * (self.L + 1) + self.k

    @property
    def block_width(self) -> int:
        """Width of the token/delimiter/position block copied by the history layers."""
        return self.p + 3

    @property
    def theta(self) -> float:
        return 1.0 / (1000 * self.n * self.k)

    @property
    def delimiter_col(self) -> int:
        return self.p

    @property
    def sin_col(self) -> int:
        return self.p + 1

    @property
    def cos_col(self) -> int:
        return self.p + 2

    @property
    def ones_col(self) -> int:
        return self.D - 2

    @property
    def test_col(self) -> int:
        return self.D - 1

    @property
    def history_len(self) -> int:
        """Window symbols used for regression: ``L - 1`` standard, ``L - m`` extended."""
        return self.L - self.m

    @property
    def out_dim(self) -> int:
        return self.p ** self.m

    @property
    def demo_end(self) -> int:
        """Number of rows before the test prefix, ``n(L+1)``."""
        return self.n * (self.L + 1)

    @property
    def mode(self) -> ReadoutMode:
        return "extended" if self.m > 1 else "standard"

    def vec_offset(self) -> int:
        return (self.L + 1) * self.block_width

    def positions(self) -> np.ndarray:
        return np.arange(1, self.rows + 1, dtype=np.float64)

    def with_n(self, n: int) -> 'ContextLayout':
        return ContextLayout(n=n, L=self.L, k=self.k, p=self.p, m=self.m, D=None)


@dataclass(frozen=True)
class ContextMatrix:
    data: np.ndarray
    layout: ContextLayout

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


def positional_embedding(layout: ContextLayout) -> np.ndarray:
    """``rows x 2`` matrix of ``[sin(pos theta), cos(pos theta)]`` for 1-based positions."""
    angles = layout.positions() * layout.theta
    return np.stack([np.sin(angles), np.cos(angles)], axis=1)


def _demo_symbols(demos: Any, layout: ContextLayout) -> np.ndarray:
    if len(demos) != layout.n:
        raise DimensionMismatchError(f"expected {layout.n} demonstrations, got {len(demos)}")
    out = np.empty((layout.n, layout.L), dtype=np.int64)
    for index, demo in enumerate(demos):
        try:
            symbols = to_symbols(demo, layout.p)
        except NonOneHotError as err:
            raise DimensionMismatchError(f"demonstration {index}: {err}", index=index) from err
        if symbols.shape != (layout.L,):
            raise DimensionMismatchError(
                f"demonstration {index} has {symbols.shape[0]} observations, expected {layout.L}", index=index)
        out[index] = symbols
    return out


def build_context(demos: Any, test_prefix: Any, layout: ContextLayout) -> ContextMatrix:
    """
    Assemble the ``n(L+1)+k`` by ``D`` input matrix.

    Args:
        demos: ``n`` sequences of ``L`` observations (one-hot rows or integer symbols).
        test_prefix: ``k - 1`` observations.
        layout (ContextLayout): Sizes and width.

    Returns:
        ContextMatrix: the input together with its layout.

    Raises:
        DimensionMismatchError: naming the first demonstration with the wrong length.
    """
    demo_symbols = _demo_symbols(demos, layout)
    try:
        prefix = to_symbols(test_prefix, layout.p)
    except NonOneHotError as err:
        raise DimensionMismatchError(f"test prefix: {err}") from err
    if prefix.shape != (layout.k - 1,):
        raise DimensionMismatchError(
            f"test prefix has {prefix.shape[0]} observations, expected {layout.k - 1}")

    data = np.zeros((layout.rows, layout.D), dtype=np.float64)
    token_col = np.full(layout.rows, -1, dtype=np.int64)
    stride = layout.L + 1
    for i in range(layout.n):
        token_col[i * stride:i * stride + layout.L] = demo_symbols[i]
        token_col[i * stride + layout.L] = layout.delimiter_col
    token_col[layout.demo_end:layout.demo_end + layout.k - 1] = prefix
    rows = np.nonzero(token_col >= 0)[0]
    data[rows, token_col[rows]] = 1.0

    data[:, layout.sin_col:layout.cos_col + 1] = positional_embedding(layout)
    data[:, layout.ones_col] = 1.0
    data[layout.demo_end:, layout.test_col] = 1.0
    return ContextMatrix(data=data, layout=layout)


def split_context(context: ContextMatrix) -> Tuple[np.ndarray, np.ndarray]:
    """Recover ``(demos n x L x p, test_prefix (k-1) x p)`` from an input matrix."""
    layout = context.layout
    tokens = context.data[:, :layout.p]
    stride = layout.L + 1
    demos = np.stack([tokens[i * stride:i * stride + layout.L] for i in range(layout.n)])
    prefix = tokens[layout.demo_end:layout.demo_end + layout.k - 1]
    return demos.copy(), prefix.copy()


def vec_index(symbols: Sequence[int], p: int) -> int:
    """Big-endian index of a symbol tuple: ``sum_j s_j * p**(m-1-j)``."""
    index = 0
    for symbol in symbols:
        index = index * p + int(symbol)
    return index


def vec_encode(components: Any) -> np.ndarray:
    """
    One-hot encode a tuple of one-hot vectors over ``p`` into a basis vector of ``R^{p^m}``.

    Raises:
        NonOneHotError: if a component is not one-hot.
    """
    components = np.atleast_2d(np.asarray(components, dtype=np.float64))
    p = components.shape[1]
    symbols = to_symbols(components, p)
    out = np.zeros(p ** len(symbols))
    out[vec_index(symbols, p)] = 1.0
    return out


def window_features(window: Any, p: int) -> np.ndarray:
    """
    Stacked one-hot features of a window, most recent symbol first.

    Accepts one window (``W`` symbols) or a batch (``num x W``) of integer
    symbols; returns ``p W`` or ``num x p W``. Block ``r`` (0-based) holds the
    symbol ``r + 1`` steps before the predicted position.
    """
    symbols = np.asarray(window)
    if symbols.ndim == 2 and not np.issubdtype(symbols.dtype, np.integer):
        symbols = to_symbols(symbols, p)
    symbols = np.asarray(symbols, dtype=np.int64)
    reversed_window = symbols[..., ::-1]
    encoded = one_hot(reversed_window, p)
    return encoded.reshape(*symbols.shape[:-1], symbols.shape[-1] * p)


def read_out(output: np.ndarray, layout: ContextLayout, mode: Optional[ReadoutMode] = None) -> np.ndarray:
    """
    The prediction slice of the final row.

    ``standard`` returns the ``p`` token columns; ``extended`` returns the
    ``p**m`` Vec block that starts right after the copied feature blocks.
    """
    output = np.asarray(output)
    if output.shape != (layout.rows, layout.D):
        raise ShapeError(f"output has shape {output.shape}, expected {(layout.rows, layout.D)}")
    mode = mode or layout.mode
    if mode == "standard":
        return output[-1, :layout.p].copy()
    if mode == "extended":
        start = layout.vec_offset()
        return output[-1, start:start + layout.out_dim].copy()
    raise ValueError(f"unknown read-out mode {mode!r}")


def context_to_csv(context: ContextMatrix | np.ndarray, path: str) -> None:
    data = context.data if isinstance(context, ContextMatrix) else context
    write_matrix_csv(data, path)
