"""From-scratch encoder-decoder transformer with reverse-mode gradients."""
from .autograd import GraphError, Tensor, backward
from .model import (
    ModelConfig,
    ModelError,
    Tokenizer,
    TransformerModel,
    attention,
    decode,
    decode_step,
    encode,
    greedy_decode,
    load_checkpoint,
    positional_encoding,
    save_checkpoint,
    sequence_loss,
    teacher_forced,
)
from .autograd import cross_entropy

__all__ = [
    "GraphError", "ModelConfig", "ModelError", "Tensor", "Tokenizer", "TransformerModel",
    "attention", "backward", "cross_entropy", "decode", "decode_step", "encode",
    "greedy_decode", "load_checkpoint", "positional_encoding", "save_checkpoint",
    "sequence_loss", "teacher_forced",
]
