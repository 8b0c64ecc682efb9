"""lenctl: a desk-scale laboratory for length-controlled text generation.

A from-scratch encoder-decoder transformer (with its own reverse-mode
autodiff) whose decoder position indices are pluggable: ascending, or a
remaining-token countdown that gives the model an explicit length budget.
Textual control schemes (sentence enumeration, count prefixes, length
buckets), a joint length-prediction head, a synthetic corpus generator,
greedy/beam decoding, and a Rouge/length-metrics harness round out the
pipeline.
"""

from .checkpoint import load_tensors, save_tensors
from .control import (ControlScheme, annotate, annotate_sentenum,
                      annotate_sentprefix, bucket_index, compute_bucket_edges,
                      gold_length, strip_control, strip_sentenum)
from .decoding import GenConfig, GenOutput, beam_search, generate, generate_many
from .errors import ConfigError, DataError, LenctlError, NumericError
from .evaluation import (EvalReport, LengthMetrics, RougeScore, evaluate,
                         fixed_length_sweep, length_metrics, predict_lengths,
                         rouge_n, rouge_tokens)
from .model import (EncoderOutput, ModelConfig, ModelParams, decode_step,
                    decoder_forward, encode, init_params, load_model,
                    predict_length, round_length, save_model)
from .optim import AdamState, adam_step
from .positions import PositionPlan, position_indices, sample_noise
from .synth import SynthSpec, generate_synthetic_corpus
from .tensor import Tape, Tensor
from .text import (ControlledExample, Document, Vocabulary, build_vocab,
                   corpus_stats, detokenize, read_corpus, read_documents,
                   split_sentences, tokenize, word_split, write_corpus)
from .training import Batch, TrainConfig, TrainResult, fit_scheme, joint_loss, \
    prepare_batch, train

__version__ = "0.1.0"

__all__ = [
    "AdamState", "Batch", "ConfigError", "ControlScheme",
    "ControlledExample", "DataError", "Document", "EncoderOutput",
    "EvalReport", "GenConfig", "GenOutput", "LenctlError", "LengthMetrics",
    "ModelConfig", "ModelParams", "NumericError", "PositionPlan",
    "RougeScore", "SynthSpec", "Tape", "Tensor", "TrainConfig",
    "TrainResult", "Vocabulary", "adam_step", "annotate",
    "annotate_sentenum", "annotate_sentprefix", "beam_search",
    "bucket_index", "build_vocab", "compute_bucket_edges", "corpus_stats",
    "decode_step", "decoder_forward", "detokenize", "encode", "evaluate",
    "fit_scheme", "fixed_length_sweep", "generate", "generate_many",
    "generate_synthetic_corpus", "gold_length", "init_params",
    "joint_loss", "length_metrics", "load_model", "load_tensors",
    "position_indices", "predict_length", "predict_lengths",
    "prepare_batch", "read_corpus", "read_documents", "rouge_n",
    "rouge_tokens", "round_length", "sample_noise", "save_model",
    "save_tensors", "split_sentences", "strip_control", "strip_sentenum",
    "tokenize", "train", "word_split", "write_corpus",
]
