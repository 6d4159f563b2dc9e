import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hmm_icl.models.hmm_core import (
    BeliefState,
    LowRankHmm,
    MixtureConfig,
    belief_update,
    conditional_block,
    conditional_next,
    estimate_gamma,
    estimate_gamma_multistep,
    exact_gamma,
    filter_batch,
    filter_belief,
    gamma_breakdown,
    hmm_from_json,
    hmm_to_json,
    mixture_to_json,
    new_low_rank_hmm,
    new_mixture,
    one_hot,
    predictive_belief,
    sample_sequence,
    sample_sequences,
    sample_symbols,
    stationary_distribution,
    to_symbols,
    transition_matrix,
)
from hmm_icl.oracles.enumeration import path_enumeration_conditional
from hmm_icl.utils.errors import (
    DegenerateLikelihoodError,
    InvalidDimensionError,
    InvalidDistributionError,
    NonOneHotError,
)
from hmm_icl.utils.utils import make_rng


class TestLowRankHmm:
    """
    Generation, validation and serialization of low-rank HMMs.
    """

    def setup_method(self, test_func):
        """
        Builds a 4-state, 3-symbol, rank-2 model shared by the tests.
        """
        self.hmm = new_low_rank_hmm(4, 3, 2, seed=7)

    def test_generated_model_is_stochastic_and_low_rank(self):
        """
        Rows of the transition and columns of the emission are distributions,
        and the transition has rank at most 2.
        """
        transition = transition_matrix(self.hmm)
        assert np.allclose(transition.sum(axis=1), 1.0, atol=1e-12)
        assert np.allclose(self.hmm.emission.sum(axis=0), 1.0, atol=1e-12)
        assert np.linalg.matrix_rank(transition) <= 2
        assert np.allclose(transition, self.hmm.psi @ self.hmm.w.T)

    def test_same_seed_gives_identical_model(self):
        """
        Equal seeds reproduce the model bit for bit; another seed does not.
        """
        again = new_low_rank_hmm(4, 3, 2, seed=7)
        assert again == self.hmm
        assert np.array_equal(again.transition, self.hmm.transition)
        assert new_low_rank_hmm(4, 3, 2, seed=8) != self.hmm

    def test_rank_above_hidden_states_is_rejected(self):
        """
        A rank larger than the number of hidden states is an invalid dimension.
        """
        with pytest.raises(InvalidDimensionError):
            new_low_rank_hmm(2, 3, 3, seed=0)

    def test_non_stochastic_emission_is_rejected(self):
        """
        Emission columns that do not sum to one are refused.
        """
        with pytest.raises(InvalidDistributionError):
            LowRankHmm.from_transition(np.eye(2), np.array([[0.6, 0.5], [0.5, 0.5]]))

    def test_json_round_trip_preserves_every_matrix(self):
        """
        The dump stores full-precision floats, so reloading gives an equal model.
        """
        restored = hmm_from_json(hmm_to_json(self.hmm))
        assert restored == self.hmm
        assert restored.seed == 7

    def test_stationary_distribution_is_invariant(self):
        """
        The stationary distribution is a fixed point of the transition.
        """
        pi = stationary_distribution(self.hmm)
        assert np.isclose(pi.sum(), 1.0)
        assert np.allclose(pi @ self.hmm.transition, pi, atol=1e-10)


class TestSampling:
    """
    Reproducibility and shapes of the samplers.
    """

    def setup_method(self, test_func):
        """
        Uses a small generated model.
        """
        self.hmm = new_low_rank_hmm(3, 2, 2, seed=11)

    def test_same_stream_gives_same_draws(self):
        """
        Two generators with the same seed produce identical hidden and observed sequences.
        """
        first = sample_symbols(self.hmm, 5, 8, make_rng(3))
        second = sample_symbols(self.hmm, 5, 8, make_rng(3))
        assert np.array_equal(first[0], second[0])
        assert np.array_equal(first[1], second[1])

    def test_one_hot_batch_matches_symbols(self):
        """
        The one-hot batch sampler encodes the same symbols as the integer sampler.
        """
        hidden, obs = sample_sequences(self.hmm, 4, 6, make_rng(5))
        _, symbols = sample_symbols(self.hmm, 4, 6, make_rng(5))
        assert obs.shape == (4, 6, 2)
        assert hidden.shape == (4, 6)
        assert np.array_equal(to_symbols(obs.reshape(-1, 2), 2), symbols.reshape(-1))

    def test_single_sequence_shapes(self):
        """
        A single sequence has one hidden state and one one-hot row per step.
        """
        hidden, obs = sample_sequence(self.hmm, 9, make_rng(0))
        assert hidden.shape == (9,)
        assert obs.shape == (9, 2)
        assert np.all(obs.sum(axis=1) == 1)

    def test_identity_emission_reveals_hidden_states(self):
        """
        With an identity emission every observation is the one-hot of its hidden state.
        """
        hmm = LowRankHmm.from_transition(np.array([[0.2, 0.5, 0.3], [0.4, 0.4, 0.2], [0.1, 0.1, 0.8]]), np.eye(3))
        hidden, obs = sample_sequence(hmm, 30, make_rng(6))
        assert np.array_equal(obs, one_hot(hidden, 3))

    def test_deterministic_cycle(self):
        """
        A cyclic permutation started in state 0 emits 0, 1, 2, 0, ...
        """
        cycle = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
        hmm = LowRankHmm.from_transition(cycle, np.eye(3), initial=np.array([1.0, 0.0, 0.0]))
        _, symbols = sample_symbols(hmm, 2, 7, make_rng(0))
        assert np.array_equal(symbols, [[0, 1, 2, 0, 1, 2, 0]] * 2)

    def test_non_positive_length_is_rejected(self):
        """
        A zero-length request is an invalid dimension.
        """
        with pytest.raises(InvalidDimensionError):
            sample_symbols(self.hmm, 3, 0, make_rng(0))

    def test_empirical_first_symbol_matches_marginal(self):
        """
        The first symbol's frequency approaches ``emission @ initial``.
        """
        _, symbols = sample_symbols(self.hmm, 40000, 1, make_rng(1))
        freq = np.bincount(symbols[:, 0], minlength=2) / 40000
        assert np.allclose(freq, conditional_next(self.hmm, []), atol=0.015)


class TestFiltering:
    """
    Exact conditionals against brute-force path enumeration.
    """

    def setup_method(self, test_func):
        """
        A 3-state, 3-symbol model small enough to enumerate.
        """
        self.hmm = new_low_rank_hmm(3, 3, 2, seed=21)

    def test_empty_history_is_first_symbol_marginal(self):
        """
        With no observations the prediction is the emission applied to the initial distribution.
        """
        assert np.allclose(conditional_next(self.hmm, []), self.hmm.emission @ self.hmm.initial)

    def test_matches_path_enumeration(self):
        """
        For several histories up to length 5, the filtered prediction equals the
        ratio of joint sums over all hidden paths.
        """
        for history in ([0], [2, 1], [1, 1, 0], [0, 2, 2, 1], [2, 0, 1, 1, 0]):
            exact = conditional_next(self.hmm, np.array(history))
            oracle = path_enumeration_conditional(self.hmm, np.array(history))
            assert np.abs(exact - oracle).sum() < 1e-10

    def test_two_step_block_matches_enumeration(self):
        """
        The big-endian two-step block equals the enumerated joint of the next two symbols.
        """
        hmm = new_low_rank_hmm(3, 2, 2, seed=4)
        history = np.array([1, 0, 1])
        block = conditional_block(hmm, history, 2)
        assert block.shape == (4,)
        assert np.abs(block - path_enumeration_conditional(hmm, history, 2)).sum() < 1e-10

    def test_one_step_block_equals_conditional_next(self):
        """
        ``steps_ahead = 1`` reduces to the next-symbol distribution.
        """
        history = np.array([0, 1, 2])
        assert np.allclose(conditional_block(self.hmm, history, 1), conditional_next(self.hmm, history))

    def test_belief_update_agrees_with_filter(self):
        """
        Conditioning step by step gives the same posterior as filtering the whole history.
        """
        history = np.array([1, 2, 0])
        belief = filter_belief(self.hmm, self.hmm.initial, history[:1])
        for symbol in history[1:]:
            belief = belief_update(self.hmm, belief, one_hot(symbol, 3))
        assert np.allclose(belief.probs, filter_belief(self.hmm, self.hmm.initial, history).probs)

    def test_identity_emission_gives_one_hot_belief(self):
        """
        A fully revealing emission collapses the belief onto the observed state.
        """
        hmm = LowRankHmm.from_transition(np.full((3, 3), 1 / 3), np.eye(3))
        belief = belief_update(hmm, BeliefState.uniform(3), 2)
        assert np.array_equal(belief.probs, [0.0, 0.0, 1.0])
        belief = belief_update(hmm, belief, one_hot(0, 3))
        assert np.array_equal(belief.probs, [1.0, 0.0, 0.0])

    def test_batch_filter_matches_single_filter(self):
        """
        The vectorised filter equals the per-row predictive belief.
        """
        _, symbols = sample_symbols(self.hmm, 6, 4, make_rng(9))
        batch = filter_batch(self.hmm, self.hmm.initial, symbols)
        for row, expected in zip(symbols, batch):
            assert np.allclose(predictive_belief(self.hmm, self.hmm.initial, row), expected, atol=1e-14)

    def test_impossible_observation_raises(self):
        """
        A symbol with zero likelihood under the current belief is a degenerate event.
        """
        hmm = LowRankHmm.from_transition(np.eye(2), np.eye(2))
        with pytest.raises(DegenerateLikelihoodError):
            conditional_next(hmm, np.array([0, 1]))

    def test_non_one_hot_rows_are_rejected(self):
        """
        Rows that are not basis vectors cannot be read as observations.
        """
        with pytest.raises(NonOneHotError):
            to_symbols(np.array([[0.5, 0.5, 0.0]]), 3)

    @settings(max_examples=40, deadline=None)
    @given(history=st.lists(st.integers(min_value=0, max_value=2), max_size=8),
           seed=st.integers(min_value=0, max_value=10_000))
    def test_conditionals_are_distributions(self, history, seed):
        """
        Every conditional is non-negative and sums to one within 1e-10.
        """
        hmm = new_low_rank_hmm(4, 3, 2, seed=seed)
        probs = conditional_next(hmm, np.array(history, dtype=np.int64))
        assert np.all(probs >= 0)
        assert abs(probs.sum() - 1.0) < 1e-10

    def test_uniform_belief(self):
        """
        The uniform belief spreads mass evenly.
        """
        assert np.allclose(BeliefState.uniform(4).probs, 0.25)


class TestObservability:
    """
    Vertex, sampled and exact observability constants.
    """

    def setup_method(self, test_func):
        """
        A random 3-state, 3-symbol model.
        """
        self.hmm = new_low_rank_hmm(3, 3, 2, seed=2)

    def test_identity_emission_is_fully_observable(self):
        """
        Distinct one-hot emissions keep every L1 distance: gamma equals one.
        """
        hmm = LowRankHmm.from_transition(np.full((3, 3), 1 / 3), np.eye(3))
        assert estimate_gamma(hmm, 64, make_rng(0)) == pytest.approx(1.0)
        assert exact_gamma(hmm) == pytest.approx(1.0)

    def test_identical_emission_columns_are_unobservable(self):
        """
        States that emit alike cannot be told apart: gamma is zero.
        """
        emission = np.array([[0.3, 0.3, 0.3], [0.7, 0.7, 0.7]])
        hmm = LowRankHmm.from_transition(np.full((3, 3), 1 / 3), emission)
        assert estimate_gamma(hmm, 64, make_rng(0)) == pytest.approx(0.0, abs=1e-12)

    def test_estimate_never_increases_with_more_pairs(self):
        """
        Sampling more direction pairs from the same stream can only lower the estimate.
        """
        hmm = new_low_rank_hmm(12, 12, 2, seed=1)
        values = [estimate_gamma(hmm, pairs, make_rng(4)) for pairs in (4, 32, 256)]
        assert values[0] >= values[1] >= values[2]
        assert gamma_breakdown(hmm, 4, make_rng(4)).ray_min is None

    def test_exact_value_lower_bounds_random_directions(self):
        """
        No sum-zero direction contracts more than the exact constant.
        """
        gamma = exact_gamma(self.hmm)
        rng = make_rng(5)
        directions = rng.normal(size=(2000, 3))
        directions -= directions.mean(axis=1, keepdims=True)
        ratios = np.abs(directions @ self.hmm.emission.T).sum(axis=1) / np.abs(directions).sum(axis=1)
        assert ratios.min() >= gamma - 1e-12

    def test_breakdown_reports_all_candidates(self):
        """
        The reported value is the smallest candidate and never exceeds the vertex bound.
        """
        parts = gamma_breakdown(self.hmm, 128, make_rng(1))
        assert parts.ray_min is not None
        assert parts.value == pytest.approx(min(parts.vertex_min, parts.sampled_min, parts.ray_min, 1.0))
        assert parts.value <= parts.vertex_min

    def test_one_step_multistep_equals_single_step(self):
        """
        The multistep operator with one step is the emission itself.
        """
        single = estimate_gamma(self.hmm, 32, make_rng(3))
        assert estimate_gamma_multistep(self.hmm, 1, 32, make_rng(3)) == pytest.approx(single)


class TestMixture:
    """
    Lazily generated task mixtures.
    """

    def setup_method(self, test_func):
        """
        Four small tasks over a shared vocabulary.
        """
        self.mixture = new_mixture(MixtureConfig(num_tasks=4, hidden_per_task=3, vocab=2, rank=2, seed=5))

    def test_tasks_are_reproducible(self):
        """
        A task regenerated from the same mixture seed is identical.
        """
        other = new_mixture(MixtureConfig(num_tasks=4, hidden_per_task=3, vocab=2, rank=2, seed=5))
        assert other.task(2) == self.mixture.task(2)
        assert self.mixture.task(0) != self.mixture.task(1)

    def test_prompt_sequences_share_one_task(self):
        """
        A prompt draws a task index and all its sequences from that task.
        """
        task, hidden, obs = self.mixture.sample_task_sequences(5, 4, make_rng(0))
        assert 0 <= task < 4
        assert obs.shape == (5, 4, 2)
        assert hidden.max() < 3

    def test_full_scale_metadata(self):
        """
        The full-scale configuration records its sizes without building any task.
        """
        config = MixtureConfig.full_scale(seed=1)
        assert (config.num_tasks, config.hidden_per_task, config.vocab) == (8192, 128, 16)
        dump = mixture_to_json(new_mixture(config))
        assert len(dump["task_seeds"]) == 8192
        assert "tasks" not in dump

    def test_single_task_is_always_drawn(self):
        """
        A one-task mixture always returns task 0.
        """
        mixture = new_mixture(MixtureConfig(num_tasks=1, hidden_per_task=3, vocab=2, rank=2, seed=5))
        assert np.array_equal(mixture.sample_tasks(200, make_rng(0)), np.zeros(200))
        assert mixture.sample_sequence(4, make_rng(1))[0] == 0

    def test_task_frequencies_follow_the_prior(self):
        """
        An even two-task prior gives frequencies within 0.01 of one half.
        """
        mixture = new_mixture(MixtureConfig(num_tasks=2, hidden_per_task=3, vocab=2, rank=2,
                                            task_prior=(0.5, 0.5), seed=5))
        freq = np.bincount(mixture.sample_tasks(100000, make_rng(2)), minlength=2) / 100000
        assert np.allclose(freq, 0.5, atol=0.01)

    def test_prior_length_is_checked(self):
        """
        A task prior of the wrong length is refused.
        """
        with pytest.raises(InvalidDimensionError):
            MixtureConfig(num_tasks=3, task_prior=(0.5, 0.5))


if __name__ == "__main__":
    pytest.main()
