"""
Explicit weights for the in-context regression Transformer.

The stack runs in four stages over the residual stream laid out by
:class:`FeatureMap`:

1. copy layers fill the history blocks ``Z_1..Z_R`` (row ``t`` receives the
   original block of row ``t - r``, clamped to the first row) and the future
   blocks ``F_1..F_m`` (row ``t + f``, clamped to the last row), doubling the
   copied range every layer;
2. in extended mode a Vec encoder writes the one-hot code of the next ``m``
   symbols into the Vec block;
3. ``T`` gradient-descent layers update the regression weights ``W`` held in
   every row, using the demonstration anchors as training examples;
4. one prediction layer writes ``W z_test`` into the output block of the
   query row.
"""
import math
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from hmm_icl.context.icl_context import ContextLayout
from hmm_icl.transformer.tf_kernel import AttentionLayer, EncoderLayer, HeadWeights, Layer, TransformerStack
from hmm_icl.utils.errors import CapacityError, ConfigValidationError

Block = Tuple[int, int]


@dataclass(frozen=True)
class ConstructionConfig:
    """
    Attributes:
        layout (ContextLayout): Prompt geometry; ``layout.m > 1`` selects extended mode.
        beta1 (float): Copy-layer sharpness; ``inf`` is the exact hardmax limit.
        beta2 (float | None): Gate constant, default ``2000 n k``; must exceed ``1000 n k``.
        T (int): Number of gradient-descent layers.
        lr (float | None): Step size on ``sum_i |o_i - W z_i|^2``; default ``1 / (2 n R)``.
    """
    layout: ContextLayout
    beta1: float = math.inf
    beta2: Optional[float] = None
    T: int = 20
    lr: Optional[float] = None

    def __post_init__(self):
        lay = self.layout
        if self.beta2 is None:
            object.__setattr__(self, "beta2", 2000.0 * lay.n * lay.k)
        if not self.beta2 > 1000 * lay.n * lay.k:
            raise ConfigValidationError(f"beta2={self.beta2} must exceed 1000 n k = {1000 * lay.n * lay.k}")
        if not self.beta1 > lay.theta:
            raise ConfigValidationError(f"beta1={self.beta1} must exceed theta={lay.theta:.3e}")
        if self.T < 0:
            raise ConfigValidationError("T must be non-negative")
        if self.lr is None:
            object.__setattr__(self, "lr", 1.0 / (2 * lay.n * lay.history_len))
        if self.lr < 0:
            raise ConfigValidationError("lr must be non-negative")

    @property
    def hardmax(self) -> bool:
        return math.isinf(self.beta1)

    @property
    def mode(self) -> str:
        return self.layout.mode


@dataclass(frozen=True)
class FeatureMap:
    """
    Column blocks of the residual stream, as ``(start, width)`` pairs.

    ``W`` row ``j`` occupies ``w[0] + j * P .. w[0] + (j+1) * P`` with
    ``P = p R``; coordinate ``u = (r-1) p + a`` pairs with token ``a`` of
    history block ``Z_r``, matching :func:`window_features`.
    """
    layout: ContextLayout
    original: Block
    history: Tuple[Block, ...]
    future: Tuple[Block, ...]
    vec: Optional[Block]
    w: Block
    target: Block
    output: Block
    ones: int
    test: int

    @property
    def num_features(self) -> int:
        return self.layout.p * len(self.history)

    def z_token_col(self, u: int) -> int:
        r, a = divmod(u, self.layout.p)
        return self.history[r][0] + a

    def w_col(self, j: int, u: int) -> int:
        return self.w[0] + j * self.num_features + u

    def ranges(self) -> Dict[str, Block]:
        out = {"original": self.original}
        out.update({f"Z{r + 1}": block for r, block in enumerate(self.history)})
        out.update({f"F{f + 1}": block for f, block in enumerate(self.future)})
        if self.vec is not None:
            out["vec"] = self.vec
        out["W"] = self.w
        out["ones"] = (self.ones, 1)
        out["test"] = (self.test, 1)
        return out

    def to_dict(self) -> Dict[str, Any]:
        return {name: list(block) for name, block in self.ranges().items()}


def build_feature_map(layout: ContextLayout) -> FeatureMap:
    """
    Lay out every block of the construction.

    Raises:
        CapacityError: if the blocks do not fit in front of the two fixed columns.
    """
    width = layout.block_width
    R, m = layout.history_len, layout.m
    history = tuple((r * width, width) for r in range(1, R + 1))
    future = tuple(((R + f) * width, width) for f in range(1, m + 1))
    cursor = (R + m + 1) * width
    vec = None
    if layout.mode == "extended":
        vec = (cursor, layout.out_dim)
        cursor += layout.out_dim
    w = (cursor, layout.out_dim * layout.p * R)
    needed = w[0] + w[1] + 2
    if needed > layout.D:
        raise CapacityError(needed, layout.D)
    target = vec if vec is not None else (0, layout.p)
    fmap = FeatureMap(layout=layout, original=(0, width), history=history, future=future, vec=vec,
                      w=w, target=target, output=target, ones=layout.ones_col, test=layout.test_col)
    _check_disjoint(fmap)
    return fmap


def _check_disjoint(fmap: FeatureMap) -> None:
    spans = sorted((start, start + size, name) for name, (start, size) in fmap.ranges().items())
    for (s0, e0, n0), (s1, e1, n1) in zip(spans, spans[1:]):
        if s1 < e0:
            raise CapacityError(e0, s1, f"blocks {n0} and {n1} overlap;")
    if spans[-1][1] > fmap.layout.D:
        raise CapacityError(spans[-1][1], fmap.layout.D)


# --- Positional rotations ---
def rotation_matrix(layout: ContextLayout, beta: float, offset: int) -> np.ndarray:
    """
    ``beta * [[cos o t, sin o t], [-sin o t, cos o t]]`` with ``t = theta``.

    For positional embeddings ``s_a, s_b`` it gives
    ``s_a^T R s_b = beta cos((a - b - offset) theta)``, peaking at ``b = a - offset``.
    """
    angle = offset * layout.theta
    return beta * np.array([[math.cos(angle), math.sin(angle)],
                            [-math.sin(angle), math.cos(angle)]])


def rotation_matrices(layout: ContextLayout, beta1: float) -> Tuple[np.ndarray, np.ndarray]:
    """``(A, B)``: attend to the previous and the next position."""
    return rotation_matrix(layout, beta1, 1), rotation_matrix(layout, beta1, -1)


def copy_scale(layout: ContextLayout, beta1: float) -> float:
    """
    Logit scale of the copy heads.

    Hardmax uses 1. For softmax the target row outweighs each nearest
    neighbour by the odds ``beta1 / theta``, i.e. a logit gap of
    ``ln(beta1 / theta)``, so the leaked mass scales like ``theta / beta1``.
    """
    if math.isinf(beta1):
        return 1.0
    return math.log(beta1 / layout.theta) / (2.0 * math.sin(layout.theta / 2.0) ** 2)


def _copy_head(config: ConstructionConfig, offset: int, moves: List[Tuple[int, int]], width: int) -> HeadWeights:
    layout = config.layout
    D = layout.D
    q = np.zeros((D, 2))
    k = np.zeros((D, 2))
    rot = rotation_matrix(layout, 1.0, offset)
    q[layout.sin_col] = rot[0]
    q[layout.cos_col] = rot[1]
    k[layout.sin_col, 0] = 1.0
    k[layout.cos_col, 1] = 1.0
    v = np.zeros((D, D))
    for src, dst in moves:
        v[np.arange(src, src + width), np.arange(dst, dst + width)] = 1.0
    if config.hardmax:
        return HeadWeights(q, k, v, "hardmax", 1.0)
    return HeadWeights(q, k, v, "softmax", copy_scale(layout, config.beta1))


def _doubling_layers(config: ConstructionConfig, blocks: Tuple[Block, ...], original: Block,
                     direction: int, label: str) -> List[AttentionLayer]:
    """
    Fill ``blocks`` (distance 1, 2, ...) by repeated doubling.

    Layer 1 copies the original block at distance 1. Layer ``j >= 2`` attends
    at distance ``o = 2^(j-2)`` and copies the blocks already known there,
    covering distances ``o+1 .. min(2o, len(blocks))``.
    """
    width = original[1]
    count = len(blocks)
    layers = [AttentionLayer((_copy_head(config, direction, [(original[0], blocks[0][0])], width),),
                             f"{label}1")]
    offset = 1
    while offset < count:
        span = min(offset, count - offset)
        moves = [(blocks[r][0], blocks[offset + r][0]) for r in range(span)]
        layers.append(AttentionLayer((_copy_head(config, direction * offset, moves, width),),
                                     f"{label}{offset + 1}-{offset + span}"))
        offset *= 2
    return layers


def build_copy_layers(config: ConstructionConfig,
                      fmap: Optional[FeatureMap] = None) -> Tuple[List[AttentionLayer], FeatureMap]:
    """History layers (``1 + ceil(log2 R)``) followed by future layers (``1 + ceil(log2 m)``)."""
    fmap = fmap or build_feature_map(config.layout)
    history = _doubling_layers(config, fmap.history, fmap.original, +1, "Z")
    future = _doubling_layers(config, fmap.future, fmap.original, -1, "F")
    return history + future, fmap


def build_vec_encoder(fmap: FeatureMap) -> EncoderLayer:
    """Row-wise Kronecker product of the token blocks of the current row and ``F_1..F_{m-1}``."""
    p = fmap.layout.p
    sources = ((0, p),) + tuple((start, p) for start, _ in fmap.future[:-1])
    return EncoderLayer("vec", sources, fmap.vec, "vec")


def _gd_head(config: ConstructionConfig, fmap: FeatureMap, j: int, sign: float) -> HeadWeights:
    layout = config.layout
    D, p, P = layout.D, layout.p, fmap.num_features
    rank = P + 2 + p
    q = np.zeros((D, rank))
    k = np.zeros((D, rank))
    v = np.zeros((D, D))
    for u in range(P):
        q[fmap.w_col(j, u), u] = sign
        k[fmap.z_token_col(u), u] = 1.0
        v[fmap.z_token_col(u), fmap.w_col(j, u)] = -2.0 * config.lr * sign
    # residual: sign * (W_j z - o_j)
    q[fmap.ones, P] = -sign
    k[fmap.target[0] + j, P] = 1.0
    # only rows whose m-th successor is a delimiter and that precede the test prefix
    gate_block = fmap.future[-1][0]
    for a in range(p):
        q[fmap.ones, P + 1 + a] = -config.beta2
        k[gate_block + a, P + 1 + a] = 1.0
    q[fmap.ones, P + 1 + p] = -config.beta2
    k[fmap.test, P + 1 + p] = 1.0
    return HeadWeights(q, k, v, "relu", 1.0)


def build_gd_layers(config: ConstructionConfig, fmap: FeatureMap) -> List[AttentionLayer]:
    """
    ``T`` layers, each one full-batch gradient step on ``sum_i |o_i - W z_i|^2``.

    Output row ``j`` uses a pair of ReLU heads, ``x = relu(x) - relu(-x)``.
    """
    heads = tuple(_gd_head(config, fmap, j, sign)
                  for j in range(config.layout.out_dim) for sign in (1.0, -1.0))
    return [AttentionLayer(heads, f"GD{t + 1}") for t in range(config.T)]


def _prediction_head(config: ConstructionConfig, fmap: FeatureMap, j: int, sign: float) -> HeadWeights:
    layout = config.layout
    D, P = layout.D, fmap.num_features
    q = np.zeros((D, P + 1))
    k = np.zeros((D, P + 1))
    for u in range(P):
        q[fmap.z_token_col(u), u] = sign
        k[fmap.w_col(j, u), u] = 1.0
    # zero unless the query row is the token-free test row
    q[:layout.p + 1, P] = -config.beta2
    q[fmap.ones, P] = -config.beta2
    q[fmap.test, P] = config.beta2
    k[fmap.ones, P] = 1.0
    v = np.zeros((D, D))
    v[fmap.ones, fmap.output[0] + j] = sign / layout.rows
    return HeadWeights(q, k, v, "relu", 1.0)


def build_prediction_layer(config: ConstructionConfig, fmap: FeatureMap) -> AttentionLayer:
    """
    Write ``W z_test`` into the output block of the query row.

    Every row carries the same ``W``, so each of the ``N`` keys contributes
    ``relu(+-W_j z_test) / N`` and the pair of heads sums to the inner product.
    """
    heads = tuple(_prediction_head(config, fmap, j, sign)
                  for j in range(config.layout.out_dim) for sign in (1.0, -1.0))
    return AttentionLayer(heads, "predict")


def assemble_stack(config: ConstructionConfig) -> Tuple[TransformerStack, FeatureMap]:
    """
    Copy layers, the Vec encoder in extended mode, ``T`` GD layers and the prediction layer.

    The stage sizes are recorded in ``stack.metadata``.
    """
    layout = config.layout
    copy_layers, fmap = build_copy_layers(config)
    history_layers = 1 + math.ceil(math.log2(layout.history_len))
    future_layers = len(copy_layers) - history_layers
    layers: List[Layer] = list(copy_layers)
    if layout.mode == "extended":
        layers.append(build_vec_encoder(fmap))
    layers.extend(build_gd_layers(config, fmap))
    layers.append(build_prediction_layer(config, fmap))

    metadata = {
        "mode": layout.mode,
        "layout": {"n": layout.n, "L": layout.L, "k": layout.k, "p": layout.p, "m": layout.m, "D": layout.D},
        "history_layers": history_layers,
        "future_layers": future_layers,
        "encoder_layers": 1 if layout.mode == "extended" else 0,
        "gd_layers": config.T,
        "prediction_layers": 1,
        "attention_layers": len(copy_layers) + config.T + 1,
        "lr": config.lr,
        "lr_convention": "W <- W - lr * 2 (W Z - O) Z^T",
        "beta1": "hardmax" if config.hardmax else config.beta1,
        "copy_scale": copy_scale(layout, config.beta1),
        "beta2": config.beta2,
        "theta": layout.theta,
        "feature_map": fmap.to_dict(),
    }
    stack = TransformerStack(layers, layout.D, metadata)
    logging.info(f"Assembled {metadata['attention_layers']} attention layers "
                 f"({history_layers} history, {future_layers} future, {config.T} GD, 1 prediction) "
                 f"for n={layout.n}, L={layout.L}, k={layout.k}, p={layout.p}, m={layout.m}, D={layout.D}")
    return stack, fmap


# --- Inspection ---
def decoupled_blocks_reference(M0: np.ndarray, fmap: FeatureMap) -> np.ndarray:
    """``M0`` with every ``Z_r`` and ``F_f`` filled by direct shifted copies of the original block."""
    ref = np.array(M0, dtype=np.float64, copy=True)
    rows = ref.shape[0]
    start, width = fmap.original
    index = np.arange(rows)
    for r, (dst, _) in enumerate(fmap.history, start=1):
        ref[:, dst:dst + width] = M0[np.maximum(index - r, 0), start:start + width]
    for f, (dst, _) in enumerate(fmap.future, start=1):
        ref[:, dst:dst + width] = M0[np.minimum(index + f, rows - 1), start:start + width]
    return ref


def extract_w(H: np.ndarray, fmap: FeatureMap, row: int = -1) -> np.ndarray:
    """The ``out_dim x p R`` regression weights stored in one row of the residual stream."""
    start, size = fmap.w
    return np.asarray(H)[row, start:start + size].reshape(fmap.layout.out_dim, fmap.num_features).copy()
