import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hmm_icl.transformer.tf_kernel import (
    AttentionLayer,
    EncoderLayer,
    HeadWeights,
    TransformerStack,
    attention,
    attention_weights,
    forward,
    stack_from_json,
    stack_to_json,
)
from hmm_icl.utils.errors import EncoderContractError, ShapeError


def _random_head(rng, D, r, activation, scale=1.0):
    return HeadWeights(rng.normal(size=(D, r)), rng.normal(size=(D, r)), rng.normal(size=(D, D)), activation, scale)


class TestAttention:
    """
    Single-head outputs for the three activations.
    """

    def setup_method(self, test_func):
        """
        A random 6 x 4 residual stream.
        """
        self.rng = np.random.default_rng(0)
        self.M = self.rng.normal(size=(6, 4))

    def test_softmax_matches_direct_formula(self):
        """
        Softmax attention equals the normalised exponential weights applied to ``M v``.
        """
        head = _random_head(self.rng, 4, 2, "softmax", 0.5)
        logits = 0.5 * (self.M @ head.q) @ (self.M @ head.k).T
        weights = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
        assert np.allclose(attention(self.M, head), weights @ (self.M @ head.v))

    def test_relu_is_unnormalised(self):
        """
        ReLU attention applies ``max(., 0)`` without dividing by the row sum.
        """
        head = _random_head(self.rng, 4, 3, "relu")
        logits = (self.M @ head.q) @ (self.M @ head.k).T
        assert np.allclose(attention(self.M, head), np.maximum(logits, 0) @ (self.M @ head.v), atol=1e-12)

    def test_hardmax_picks_the_argmax_key(self):
        """
        Hardmax copies the value of the highest-scoring key of every row.
        """
        head = _random_head(self.rng, 4, 2, "hardmax")
        logits = (self.M @ head.q) @ (self.M @ head.k).T
        expected = (self.M @ head.v)[np.argmax(logits, axis=1)]
        assert np.array_equal(attention(self.M, head), expected)

    def test_softmax_is_stable_for_huge_logits(self):
        """
        Logits far beyond the float range of ``exp`` still give finite, normalised weights.
        """
        head = _random_head(self.rng, 4, 2, "softmax", 1e6)
        weights = attention_weights(self.M, head)
        assert np.all(np.isfinite(weights))
        assert np.allclose(weights.sum(axis=1), 1.0)

    def test_width_mismatch_is_a_shape_error(self):
        """
        A head cannot be applied to a stream of another width, whatever its activation.
        """
        for activation in ("softmax", "relu", "hardmax"):
            head = _random_head(self.rng, 5, 2, activation)
            with pytest.raises(ShapeError):
                attention(self.M, head)

    def test_zero_query_softmax_averages_values(self):
        """
        With ``q = 0`` every softmax row is uniform, so each output row is the column mean of ``M v``.
        """
        head = HeadWeights(np.zeros((4, 2)), self.rng.normal(size=(4, 2)), self.rng.normal(size=(4, 4)), "softmax")
        mean = (self.M @ head.v).mean(axis=0)
        assert np.allclose(attention(self.M, head), np.tile(mean, (6, 1)))

    def test_zero_query_relu_is_silent(self):
        """
        With ``q = 0`` every ReLU weight is zero and so is the output.
        """
        head = HeadWeights(np.zeros((4, 2)), self.rng.normal(size=(4, 2)), self.rng.normal(size=(4, 4)), "relu")
        assert np.array_equal(attention(self.M, head), np.zeros((6, 4)))

    @settings(max_examples=30, deadline=None)
    @given(M=arrays(np.float64, (5, 3), elements=st.floats(min_value=-3, max_value=3)))
    def test_softmax_rows_are_distributions(self, M):
        """
        Every softmax weight row is non-negative and sums to one.
        """
        rng = np.random.default_rng(1)
        head = _random_head(rng, 3, 2, "softmax", 2.0)
        weights = attention_weights(M, head)
        assert np.all(weights >= 0)
        assert np.allclose(weights.sum(axis=1), 1.0)

    def test_relu_output_is_independent_of_row_order(self):
        """
        Permuting rows permutes the ReLU output bit-exactly.
        """
        M = self.rng.integers(-2, 3, size=(6, 4)).astype(np.float64)
        head = HeadWeights(*(self.rng.integers(-2, 3, size=shape).astype(np.float64)
                             for shape in ((4, 3), (4, 3), (4, 4))), "relu", 0.25)
        order = self.rng.permutation(6)
        assert np.array_equal(attention(M, head)[order], attention(M[order], head))


class TestStack:
    """
    Layer composition, encoders and serialization.
    """

    def setup_method(self, test_func):
        """
        A two-layer stack over a width-4 stream.
        """
        rng = np.random.default_rng(3)
        self.layers = [
            AttentionLayer((_random_head(rng, 4, 2, "softmax"), _random_head(rng, 4, 2, "relu")), "first"),
            AttentionLayer((_random_head(rng, 4, 2, "hardmax"),), "second"),
        ]
        self.stack = TransformerStack(self.layers, 4, {"name": "toy"})
        self.M = rng.normal(size=(5, 4))

    def test_layers_add_heads_to_the_residual(self):
        """
        Each layer adds the sum of its heads' outputs to its input.
        """
        H1 = self.M + attention(self.M, self.layers[0].heads[0]) + attention(self.M, self.layers[0].heads[1])
        H2 = H1 + attention(H1, self.layers[1].heads[0])
        assert np.allclose(forward(self.M, self.stack), H2)

    def test_trace_returns_every_state(self):
        """
        Tracing yields the input followed by the state after each layer.
        """
        final, states = forward(self.M, self.stack, trace=True)
        assert len(states) == 3
        assert np.array_equal(states[0], self.M)
        assert np.array_equal(states[-1], final)

    def test_input_width_is_checked(self):
        """
        The stack refuses inputs of another width.
        """
        with pytest.raises(ShapeError):
            forward(np.zeros((5, 3)), self.stack)

    def test_json_round_trip(self):
        """
        The sparse dump restores a stack with identical outputs.
        """
        restored = stack_from_json(stack_to_json(self.stack))
        assert restored.metadata == {"name": "toy"}
        assert np.array_equal(forward(self.M, restored), forward(self.M, self.stack))

    def test_encoder_writes_kronecker_block(self):
        """
        The Vec encoder replaces its target block with the row-wise Kronecker product.
        """
        encoder = EncoderLayer("vec", ((0, 2), (2, 2)), (4, 4))
        H = np.zeros((2, 8))
        H[0, [0, 3]] = 1
        H[1, [1, 2]] = 1
        out = encoder.apply(H)
        assert np.array_equal(out[0, 4:], [0, 1, 0, 0])
        assert np.array_equal(out[1, 4:], [0, 0, 1, 0])
        assert np.array_equal(out[:, :4], H[:, :4])

    def test_encoder_contract_violation(self):
        """
        An encoder whose output does not fit its target block is rejected.
        """
        encoder = EncoderLayer("vec", ((0, 2), (2, 2)), (4, 3))
        with pytest.raises(EncoderContractError):
            encoder.apply(np.zeros((2, 8)))

    def test_unknown_encoder(self):
        """
        Only registered encoders can be applied.
        """
        with pytest.raises(EncoderContractError):
            EncoderLayer("missing", ((0, 2),), (2, 2)).apply(np.zeros((1, 4)))


if __name__ == "__main__":
    pytest.main()
