"""
Forward evaluation of attention-only Transformers.

A head maps the residual stream ``M`` to ``sigma(scale * (M q)(M k)^T) (M v)``
with ``sigma`` one of softmax, ReLU (unnormalised) or hardmax. ``q`` and ``k``
are ``D x r`` factors of the query-key product, ``v`` is ``D x D``. Layers
add the sum of their heads to the stream; encoder layers overwrite one column
block row by row.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np

from hmm_icl.utils.errors import EncoderContractError, ShapeError

Activation = Literal["softmax", "relu", "hardmax"]
ACTIVATIONS = ("softmax", "relu", "hardmax")

# products materialised by the order-independent ReLU sum before falling back to matmul
CANONICAL_LIMIT = 4_000_000


@dataclass(frozen=True)
class HeadWeights:
    """
    One attention head.

    Attributes:
        q (np.ndarray): ``D x r`` query factor.
        k (np.ndarray): ``D x r`` key factor.
        v (np.ndarray): ``D x D`` value matrix.
        activation (str): ``softmax``, ``relu`` or ``hardmax``.
        scale (float): Multiplies the logits (inverse temperature).
    """
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    activation: Activation = "softmax"
    scale: float = 1.0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.q.ndim != 2 or self.q.shape != self.k.shape:
            raise ShapeError(f"q {self.q.shape} and k {self.k.shape} must be equal D x r factors")
        if self.v.shape != (self.q.shape[0], self.q.shape[0]):
            raise ShapeError(f"v must be {self.q.shape[0]}x{self.q.shape[0]}, got {self.v.shape}")

    @property
    def width(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True)
class AttentionLayer:
    heads: Tuple[HeadWeights, ...]
    label: str = ""


def _kron_rows(blocks: Sequence[np.ndarray]) -> np.ndarray:
    out = blocks[0]
    for block in blocks[1:]:
        out = (out[:, :, None] * block[:, None, :]).reshape(out.shape[0], -1)
    return out


ENCODERS: Dict[str, Callable[[Sequence[np.ndarray]], np.ndarray]] = {
    "vec": _kron_rows,
}


@dataclass(frozen=True)
class EncoderLayer:
    """
    Deterministic row-wise map written over one column block.

    ``name`` selects the function in ``ENCODERS``; it receives the listed
    ``sources`` column blocks and must return exactly ``target[1]`` columns.
    """
    name: str
    sources: Tuple[Tuple[int, int], ...]
    target: Tuple[int, int]
    label: str = ""

    def apply(self, H: np.ndarray) -> np.ndarray:
        if self.name not in ENCODERS:
            raise EncoderContractError(f"no encoder named {self.name!r}")
        blocks = [H[:, start:start + width] for start, width in self.sources]
        result = np.asarray(ENCODERS[self.name](blocks))
        start, width = self.target
        if result.shape != (H.shape[0], width) or start + width > H.shape[1]:
            raise EncoderContractError(
                f"encoder {self.name!r} produced {result.shape}, target block is {(H.shape[0], width)}")
        out = H.copy()
        out[:, start:start + width] = result
        return out


Layer = Union[AttentionLayer, EncoderLayer]


@dataclass
class TransformerStack:
    layers: List[Layer]
    width: int
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.layers:
            raise ShapeError("a stack needs at least one layer")
        for layer in self.layers:
            if isinstance(layer, AttentionLayer):
                for head in layer.heads:
                    if head.width != self.width:
                        raise ShapeError(f"head width {head.width} differs from stack width {self.width}")

    @property
    def attention_layers(self) -> int:
        return sum(isinstance(layer, AttentionLayer) for layer in self.layers)

    @property
    def encoder_layers(self) -> int:
        return sum(isinstance(layer, EncoderLayer) for layer in self.layers)


def _logits(M: np.ndarray, head: HeadWeights) -> np.ndarray:
    if M.ndim != 2 or M.shape[1] != head.width:
        raise ShapeError(f"input width {M.shape[-1]} differs from head width {head.width}")
    return head.scale * ((M @ head.q) @ (M @ head.k).T)


def attention_weights(M: np.ndarray, head: HeadWeights) -> np.ndarray:
    """The activated ``N x N`` weight matrix of a head."""
    logits = _logits(M, head)
    if head.activation == "softmax":
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)
    if head.activation == "relu":
        return np.maximum(logits, 0.0)
    weights = np.zeros_like(logits)
    weights[np.arange(len(logits)), np.argmax(logits, axis=1)] = 1.0
    return weights


def _relu_attention(M: np.ndarray, head: HeadWeights, values: np.ndarray) -> np.ndarray:
    """
    ReLU head output computed independently of row order.

    Candidate pairs (logit above -1) get their logits recomputed with a fixed
    reduction order and their contributions summed over keys in sorted order,
    so the result depends only on the multiset of contributions: permuting
    rows with equal content leaves it bit-identical. Large problems fall back
    to plain matrix products.
    """
    logits = _logits(M, head)
    out = np.zeros((M.shape[0], values.shape[1]))
    candidate = logits > -1.0
    rows = np.nonzero(candidate.any(axis=1))[0]
    keys = np.nonzero(candidate.any(axis=0))[0]
    if rows.size == 0 or keys.size == 0:
        return out
    cols = np.nonzero(values[keys].any(axis=0))[0]
    if cols.size == 0:
        return out
    active_v = values[np.ix_(keys, cols)]
    rank = head.q.shape[1]
    if rows.size * keys.size * max(rank, cols.size) > CANONICAL_LIMIT:
        out[np.ix_(rows, cols)] = np.maximum(logits[np.ix_(rows, keys)], 0.0) @ active_v
        return out
    query = (M[rows] @ head.q)[:, None, :]
    key = (M[keys] @ head.k)[None, :, :]
    active_w = np.maximum(head.scale * (query * key).sum(axis=2), 0.0)
    products = active_w[:, :, None] * active_v[None, :, :]
    out[np.ix_(rows, cols)] = np.sort(products, axis=1).sum(axis=1)
    return out


def attention(M: np.ndarray, head: HeadWeights) -> np.ndarray:
    """
    Output of one head.

    softmax normalises each row after subtracting its max, relu applies
    ``max(., 0)`` without normalisation, hardmax puts weight one on the first
    arg-max key of every row.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[1] != head.width:
        raise ShapeError(f"input width {M.shape[-1]} differs from head width {head.width}")
    values = M @ head.v
    if head.activation == "hardmax":
        return values[np.argmax(_logits(M, head), axis=1)]
    if head.activation == "relu":
        return _relu_attention(M, head, values)
    return attention_weights(M, head) @ values


def apply_layer(H: np.ndarray, layer: Layer) -> np.ndarray:
    if isinstance(layer, EncoderLayer):
        return layer.apply(H)
    out = H
    for head in layer.heads:
        out = out + attention(H, head)
    return out


def forward(M0: np.ndarray, stack: TransformerStack, trace: bool = False):
    """
    Run ``M0`` through every layer of ``stack``.

    Returns:
        np.ndarray: the final residual stream, or with ``trace=True`` a tuple
        ``(final, [H0, H1, ...])`` holding the state after every layer.
    """
    H = np.asarray(M0, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != stack.width:
        raise ShapeError(f"input shape {H.shape} does not match stack width {stack.width}")
    states = [H] if trace else None
    for layer in stack.layers:
        H = apply_layer(H, layer)
        if trace:
            states.append(H)
    return (H, states) if trace else H


# --- Serialization ---
def _sparse(matrix: np.ndarray) -> Dict[str, Any]:
    rows, cols = np.nonzero(matrix)
    return {
        "shape": list(matrix.shape),
        "entries": [[int(i), int(j), float(matrix[i, j])] for i, j in zip(rows, cols)],
    }


def _dense(data: Dict[str, Any]) -> np.ndarray:
    out = np.zeros(tuple(data["shape"]))
    for i, j, value in data["entries"]:
        out[i, j] = value
    return out


def stack_to_json(stack: TransformerStack) -> Dict[str, Any]:
    """Layer list with sparse ``[row, col, value]`` head matrices and activation tags."""
    layers = []
    for layer in stack.layers:
        if isinstance(layer, EncoderLayer):
            layers.append({"type": "encoder", "name": layer.name, "label": layer.label,
                           "sources": [list(s) for s in layer.sources], "target": list(layer.target)})
        else:
            layers.append({"type": "attention", "label": layer.label, "heads": [
                {"activation": h.activation, "scale": float(h.scale),
                 "q": _sparse(h.q), "k": _sparse(h.k), "v": _sparse(h.v)} for h in layer.heads]})
    return {"width": stack.width, "metadata": stack.metadata, "layers": layers}


def stack_from_json(data: Dict[str, Any]) -> TransformerStack:
    layers: List[Layer] = []
    for entry in data["layers"]:
        if entry["type"] == "encoder":
            layers.append(EncoderLayer(entry["name"], tuple(tuple(s) for s in entry["sources"]),
                                       tuple(entry["target"]), entry.get("label", "")))
        elif entry["type"] == "attention":
            heads = tuple(HeadWeights(_dense(h["q"]), _dense(h["k"]), _dense(h["v"]),
                                      h["activation"], float(h["scale"])) for h in entry["heads"])
            layers.append(AttentionLayer(heads, entry.get("label", "")))
        else:
            logging.error(f"Unknown layer type {entry['type']!r}")
            raise ShapeError(f"unknown layer type {entry['type']!r}")
    return TransformerStack(layers, int(data["width"]), dict(data.get("metadata", {})))
