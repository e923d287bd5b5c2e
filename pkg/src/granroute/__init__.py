"""Adaptive visual granularity routing at desk scale.

A numpy autodiff core, a pooling pyramid, an instruction-conditioned router,
a toy decoder LMM, ranking-feedback router training and a benchmark harness.
"""

from .errors import (
    CorruptManifest,
    EmptyList,
    GranrouteError,
    MissingCheckpoint,
    NonFiniteGradient,
    NumericOverflow,
    OddAxis,
    SchemaError,
    ShapeMismatch,
    VocabOverflow,
    ZeroNormToken,
)
from .instruction_filter import FilteredInstructions, InstructionTokens, filter_top_k, relevance_scores, select_instructions
from .lmm import AnswerLogProb, LMMConfig, ToyLMM, answer_logprob, init_lmm, lmm_forward, stage1_train_step
from .rglf import FeedbackRecord, RGLFConfig, ce_target_loss, gumbel_select, rank_by_feedback, ranking_loss, rglf_step
from .router import RouterOutput, RouterParams, aggregate_images, init_router_params, router_forward
from .scaler import GranularityPyramid, TokenGrid, avg_pool_step, build_pyramid
from .scenes import Corpus, SceneSample, generate_sample, make_corpus, read_corpus, write_corpus
from .tensor import OpKind, Tensor, backward_vjp, check_gradient, forward_op

__version__ = "0.1.0"
