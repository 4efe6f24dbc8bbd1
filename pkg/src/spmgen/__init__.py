"""Attention encoder-decoder with a source-side prediction module, in numpy."""

from .autodiff import Tensor, no_grad
from .beam import BeamConfig, beam_search, greedy_decode
from .model import ModelConfig, ModelParams, decode_step, encode, init_decoder
from .rouge import corpus_rouge, rouge_l, rouge_n
from .trainer import TrainConfig, Trainer, train
from .vocab import Vocabulary, learn_bpe

__all__ = [
    "BeamConfig",
    "ModelConfig",
    "ModelParams",
    "Tensor",
    "TrainConfig",
    "Trainer",
    "Vocabulary",
    "beam_search",
    "corpus_rouge",
    "decode_step",
    "encode",
    "greedy_decode",
    "init_decoder",
    "learn_bpe",
    "no_grad",
    "rouge_l",
    "rouge_n",
    "train",
]

__version__ = "0.1.0"
