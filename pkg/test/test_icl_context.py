import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hmm_icl.context.icl_context import (
    ContextLayout,
    build_context,
    context_to_csv,
    positional_embedding,
    read_out,
    split_context,
    vec_encode,
    vec_index,
    window_features,
)
from hmm_icl.models.hmm_core import one_hot
from hmm_icl.utils.errors import CapacityError, DimensionMismatchError, InvalidDimensionError, NonOneHotError, ShapeError


class TestContextLayout:
    """
    Column geometry derived from the prompt sizes.
    """

    def setup_method(self, test_func):
        """
        Two demonstrations of length 3 over a binary vocabulary, test position 4.
        """
        self.layout = ContextLayout(n=2, L=3, k=4, p=2)

    def test_rows_and_fixed_columns(self):
        """
        ``n(L+1)+k`` rows; ones and test indicator are the last two columns.
        """
        lay = self.layout
        assert lay.rows == 2 * 4 + 4
        assert (lay.delimiter_col, lay.sin_col, lay.cos_col) == (2, 3, 4)
        assert (lay.ones_col, lay.test_col) == (lay.D - 2, lay.D - 1)
        assert lay.theta == pytest.approx(1 / (1000 * 2 * 4))

    def test_default_width_fits_the_construction(self):
        """
        The default width is at least the history blocks plus the weight block.
        """
        lay = self.layout
        assert lay.D == max((lay.L + 1) * (lay.p + 3) + lay.p * lay.p * (lay.L - 1) + lay.p + 2, 2 * lay.p * lay.L)

    def test_width_below_minimum_is_a_capacity_error(self):
        """
        A width that cannot hold the fixed blocks is refused.
        """
        with pytest.raises(CapacityError):
            ContextLayout(n=2, L=3, k=4, p=2, D=6)

    def test_k_too_small_for_the_window(self):
        """
        The test prefix must be at least as long as the regression window.
        """
        with pytest.raises(InvalidDimensionError):
            ContextLayout(n=2, L=4, k=2, p=2)


class TestBuildContext:
    """
    Assembly of the input matrix.
    """

    def setup_method(self, test_func):
        """
        Fixed demonstrations and test prefix over a binary vocabulary.
        """
        self.layout = ContextLayout(n=2, L=3, k=4, p=2)
        self.demos = np.array([[0, 1, 1], [1, 0, 0]])
        self.prefix = np.array([1, 1, 0])
        self.context = build_context(self.demos, self.prefix, self.layout)

    def test_tokens_delimiters_and_indicators(self):
        """
        Token rows are one-hot, delimiters follow each demonstration, and only
        the test rows carry the indicator.
        """
        M = self.context.data
        lay = self.layout
        assert M.shape == (12, lay.D)
        assert np.array_equal(M[:3, :2], one_hot(self.demos[0], 2))
        assert M[3, lay.delimiter_col] == 1 and M[3, :2].sum() == 0
        assert M[7, lay.delimiter_col] == 1
        assert np.array_equal(M[8:11, :2], one_hot(self.prefix, 2))
        assert M[11, :lay.p + 1].sum() == 0
        assert np.all(M[:, lay.ones_col] == 1)
        assert np.array_equal(M[:, lay.test_col], np.r_[np.zeros(8), np.ones(4)])

    def test_positions_are_one_based(self):
        """
        Row ``i`` carries ``[sin(i theta), cos(i theta)]`` with ``i`` starting at one.
        """
        M = self.context.data
        theta = self.layout.theta
        assert M[0, self.layout.sin_col] == pytest.approx(np.sin(theta))
        assert M[11, self.layout.cos_col] == pytest.approx(np.cos(12 * theta))
        assert np.allclose(positional_embedding(self.layout), M[:, 3:5])

    def test_split_recovers_demonstrations(self):
        """
        Splitting the matrix returns the one-hot demonstrations and prefix.
        """
        demos, prefix = split_context(self.context)
        assert np.array_equal(demos, one_hot(self.demos, 2))
        assert np.array_equal(prefix, one_hot(self.prefix, 2))

    def test_wrong_demo_length_names_the_index(self):
        """
        The error identifies the first demonstration with a bad length.
        """
        demos = [np.array([0, 1, 1]), np.array([1, 0])]
        with pytest.raises(DimensionMismatchError) as info:
            build_context(demos, self.prefix, self.layout)
        assert info.value.index == 1

    def test_non_one_hot_demo_is_reported(self):
        """
        A non one-hot demonstration row is a dimension mismatch carrying its index.
        """
        bad = np.array([[[1, 0], [0, 1], [1, 0]], [[1, 0], [0.5, 0.5], [1, 0]]])
        with pytest.raises(DimensionMismatchError) as info:
            build_context(bad, self.prefix, self.layout)
        assert info.value.index == 1

    def test_csv_dump_has_full_precision(self, tmp_path):
        """
        The CSV dump reloads to the identical matrix.
        """
        path = tmp_path / "context.csv"
        context_to_csv(self.context, str(path))
        reloaded = np.loadtxt(path, delimiter=",")
        assert np.array_equal(reloaded, self.context.data)


class TestEncodings:
    """
    Window features, Vec codes and read-out slices.
    """

    def test_window_features_most_recent_first(self):
        """
        Block 0 holds the last symbol of the window.
        """
        features = window_features(np.array([0, 2, 1]), 3)
        assert np.array_equal(features, np.r_[[0, 1, 0], [0, 0, 1], [1, 0, 0]])

    def test_window_features_batch(self):
        """
        A batch of windows gives one feature row per window.
        """
        batch = window_features(np.array([[0, 1], [1, 1]]), 2)
        assert batch.shape == (2, 4)
        assert np.array_equal(batch[0], [0, 1, 1, 0])

    def test_vec_index_is_big_endian(self):
        """
        The first symbol is the most significant digit.
        """
        assert vec_index([1, 0], 2) == 2
        assert vec_index([2, 1, 0], 3) == 21

    def test_vec_encode_rejects_non_one_hot(self):
        """
        Components must be basis vectors.
        """
        with pytest.raises(NonOneHotError):
            vec_encode(np.array([[0.5, 0.5], [1, 0]]))

    @settings(max_examples=50, deadline=None)
    @given(symbols=arrays(np.int64, st.integers(min_value=1, max_value=4),
                          elements=st.integers(min_value=0, max_value=2)))
    def test_vec_encode_is_injective(self, symbols):
        """
        The code is a basis vector whose index decodes back to the tuple.
        """
        code = vec_encode(one_hot(symbols, 3))
        assert code.sum() == 1
        index = int(np.argmax(code))
        decoded = [(index // 3 ** (len(symbols) - 1 - j)) % 3 for j in range(len(symbols))]
        assert decoded == list(symbols)

    def test_read_out_modes(self):
        """
        Standard mode returns the token columns of the last row, extended mode the Vec block.
        """
        layout = ContextLayout(n=2, L=3, k=4, p=2, m=2)
        output = np.zeros((layout.rows, layout.D))
        output[-1, :2] = [0.3, 0.7]
        start = layout.vec_offset()
        output[-1, start:start + 4] = [0.1, 0.2, 0.3, 0.4]
        assert np.allclose(read_out(output, layout, "standard"), [0.3, 0.7])
        assert np.allclose(read_out(output, layout), [0.1, 0.2, 0.3, 0.4])

    def test_read_out_checks_shape(self):
        """
        An output of the wrong shape is rejected.
        """
        layout = ContextLayout(n=2, L=3, k=4, p=2)
        with pytest.raises(ShapeError):
            read_out(np.zeros((3, 3)), layout)


if __name__ == "__main__":
    pytest.main()
