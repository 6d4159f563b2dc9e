__version__ = "0.1.0"

from hmm_icl.models.hmm_core import LowRankHmm, HmmMixture, MixtureConfig, new_low_rank_hmm, new_mixture
from hmm_icl.models.memory_model import MemoryModel, model_approx_error
from hmm_icl.context.icl_context import ContextLayout, build_context, read_out
from hmm_icl.transformer.construct import ConstructionConfig, assemble_stack
from hmm_icl.transformer.tf_kernel import TransformerStack, forward
from hmm_icl.oracles.regression import RegressionProblem, gd_reference, least_squares, rate_check
from hmm_icl.harness.harness import ErrorReport, measure_errors, sweep
from hmm_icl.utils.schema import ExperimentConfig
