"""Small pre-norm encoder-decoder transformer on top of :mod:`.autograd`."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .. import tasks
from ..tasks import TokenTable
from . import autograd as ag
from .autograd import Tensor

# longest serialized input: 10 + separator + 10, plus the appended end marker
LONGEST_INPUT = 22


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_layers_enc: int = 2
    n_layers_dec: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    vocab_size: int = len(tasks.DEFAULT_TABLE)
    max_len: int = 32
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ModelError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.d_model % 2:
            raise ModelError("d_model must be even for sinusoidal positions")
        if self.max_len < LONGEST_INPUT:
            raise ModelError(f"max_len={self.max_len} shorter than the longest input ({LONGEST_INPUT})")
        if min(self.n_layers_enc, self.n_layers_dec, self.d_ff, self.vocab_size) < 1:
            raise ModelError("layer counts, d_ff and vocab_size must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ModelError("dropout_rate must lie in [0, 1)")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class Tokenizer:
    """Whitespace-separated surfaces <-> dense ids from a :class:`TokenTable`."""

    def __init__(self, table: TokenTable = tasks.DEFAULT_TABLE):
        self.table = table
        self.pad_id = table.id_of(tasks.PAD)
        self.start_id = table.id_of(tasks.START)
        self.end_id = table.id_of(tasks.END)

    def __len__(self):
        return len(self.table)

    def tokenize(self, text: str | Sequence[str]) -> list[int]:
        surfaces = text.split() if isinstance(text, str) else list(text)
        if not surfaces:
            raise ModelError("cannot tokenize an empty input")
        return [self.table.id_of(s) for s in surfaces]

    def detokenize(self, ids: Sequence[int]) -> str:
        return " ".join(self.table.surface_of(int(i)) for i in ids)

    def surfaces(self, ids: Sequence[int]) -> tuple[str, ...]:
        return tuple(self.table.surface_of(int(i)) for i in ids)

    def batch_inputs(self, inputs: Sequence[Sequence[str]]) -> np.ndarray:
        """Pad ``inputs`` (each followed by the end marker) into a (B, L) id array."""
        rows = [self.tokenize(x) + [self.end_id] for x in inputs]
        return self._pad(rows)

    def batch_targets(self, targets: Sequence[Sequence[str]]):
        """Decoder inputs, decoder outputs and 0/1 loss weights for teacher forcing."""
        rows = [self.tokenize(y) for y in targets]
        dec_in = self._pad([[self.start_id] + r for r in rows])
        dec_out = self._pad([r + [self.end_id] for r in rows])
        return dec_in, dec_out, (dec_out != self.pad_id).astype(np.float64)

    def _pad(self, rows: list[list[int]]) -> np.ndarray:
        width = max(len(r) for r in rows)
        out = np.full((len(rows), width), self.pad_id, dtype=np.int64)
        for i, r in enumerate(rows):
            out[i, : len(r)] = r
        return out


def positional_encoding(max_len: int, d_model: int) -> np.ndarray:
    """Row ``p``: ``sin(p / 10000**(2i/d))`` in column 2i and ``cos`` of the same in 2i+1."""
    if d_model % 2:
        raise ModelError("d_model must be even")
    pos = np.arange(max_len, dtype=np.float64)[:, None]
    freq = 10000.0 ** (np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    pe = np.empty((max_len, d_model))
    pe[:, 0::2] = np.sin(pos / freq)
    pe[:, 1::2] = np.cos(pos / freq)
    return pe


def attention(q, k, v, mask=None):
    """Scaled dot-product attention over the last two axes.

    Returns ``(output, weights)``. ``mask`` is boolean, True where a key may be
    attended, broadcastable to the score shape.
    """
    q, k, v = ag.as_tensor(q), ag.as_tensor(k), ag.as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ModelError(f"incompatible attention shapes {q.shape}, {k.shape}, {v.shape}")
    axes = list(range(k.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    scores = ag.scale(ag.matmul(q, ag.transpose(k, axes)), 1.0 / math.sqrt(q.shape[-1]))
    if mask is not None:
        try:
            np.broadcast_shapes(np.shape(mask), scores.shape)
        except ValueError:
            raise ModelError(f"mask shape {np.shape(mask)} does not match scores {scores.shape}") from None
    weights = ag.masked_softmax(scores, mask)
    return ag.matmul(weights, v), weights


class TransformerModel:
    """Parameters live in ``self.params`` (name -> Tensor) in a fixed documented order."""

    def __init__(self, config: ModelConfig = ModelConfig(), seed: int = 0):
        self.config = config
        self.pe = positional_encoding(config.max_len, config.d_model)
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        d, f = config.d_model, config.d_ff
        self._uniform("embed", (config.vocab_size, d), d, rng)
        for i in range(config.n_layers_enc):
            p = f"enc.{i}"
            self._norm(f"{p}.ln1")
            self._attn(f"{p}.attn", rng)
            self._norm(f"{p}.ln2")
            self._ff(f"{p}.ff", rng)
        self._norm("enc.ln")
        for i in range(config.n_layers_dec):
            p = f"dec.{i}"
            self._norm(f"{p}.ln1")
            self._attn(f"{p}.self", rng)
            self._norm(f"{p}.ln2")
            self._attn(f"{p}.cross", rng)
            self._norm(f"{p}.ln3")
            self._ff(f"{p}.ff", rng)
        self._norm("dec.ln")

    def _uniform(self, name, shape, fan_in, rng):
        bound = 1.0 / math.sqrt(fan_in)
        self.params[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)

    def _norm(self, name):
        d = self.config.d_model
        self.params[f"{name}.g"] = Tensor(np.ones(d), requires_grad=True, name=f"{name}.g")
        self.params[f"{name}.b"] = Tensor(np.zeros(d), requires_grad=True, name=f"{name}.b")

    def _attn(self, name, rng):
        d = self.config.d_model
        for w in ("q", "k", "v", "o"):
            self._uniform(f"{name}.w{w}", (d, d), d, rng)
            # a key bias shifts every score in a row equally; softmax ignores it
            if w != "k":
                self._uniform(f"{name}.b{w}", (d,), d, rng)

    def _ff(self, name, rng):
        d, f = self.config.d_model, self.config.d_ff
        self._uniform(f"{name}.w1", (d, f), d, rng)
        self._uniform(f"{name}.b1", (f,), d, rng)
        self._uniform(f"{name}.w2", (f, d), f, rng)
        self._uniform(f"{name}.b2", (d,), f, rng)

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.params.values())

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None

    def gradients(self) -> dict[str, np.ndarray]:
        """Current gradients; parameters the loss never reached get zeros."""
        return {k: (t.grad if t.grad is not None else np.zeros_like(t.data))
                for k, t in self.params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        if list(state) != list(self.params):
            raise ModelError("parameter names differ from this configuration")
        for k, arr in state.items():
            if arr.shape != self.params[k].shape:
                raise ModelError(f"shape mismatch for {k}: {arr.shape} vs {self.params[k].shape}")
            self.params[k].data = np.array(arr, dtype=np.float64, copy=True)

    def all_finite(self) -> bool:
        return all(np.isfinite(t.data).all() for t in self.params.values())


# ---------------------------------------------------------------- forward

def _mha(model, name, xq, xkv, mask, trace, train, rng):
    P = model.params
    cfg = model.config
    B, Lq, _ = xq.shape
    Lk = xkv.shape[1]
    H, dh = cfg.n_heads, cfg.d_head

    def heads(x, w, L):
        t = ag.linear(x, P[f"{name}.w{w}"], P.get(f"{name}.b{w}"))
        return ag.transpose(ag.reshape(t, (B, L, H, dh)), (0, 2, 1, 3))

    out, weights = attention(heads(xq, "q", Lq), heads(xkv, "k", Lk), heads(xkv, "v", Lk), mask)
    if trace is not None:
        trace.append((name, weights.data, np.broadcast_to(mask, weights.shape)))
    out = ag.reshape(ag.transpose(out, (0, 2, 1, 3)), (B, Lq, cfg.d_model))
    out = ag.linear(out, P[f"{name}.wo"], P[f"{name}.bo"])
    return ag.dropout(out, cfg.dropout_rate if train else 0.0, rng)


def _ffn(model, name, x, train, rng):
    P = model.params
    h = ag.relu(ag.linear(x, P[f"{name}.w1"], P[f"{name}.b1"]))
    out = ag.linear(h, P[f"{name}.w2"], P[f"{name}.b2"])
    return ag.dropout(out, model.config.dropout_rate if train else 0.0, rng)


def _ln(model, name, x):
    return ag.layer_norm(x, model.params[f"{name}.g"], model.params[f"{name}.b"])


def _embed(model, ids, train, rng):
    cfg = model.config
    L = ids.shape[1]
    if L > cfg.max_len:
        raise ModelError(f"sequence length {L} exceeds max_len={cfg.max_len}")
    x = ag.scale(ag.embedding(model.params["embed"], ids), math.sqrt(cfg.d_model))
    x = ag.add(x, model.pe[:L])
    return ag.dropout(x, cfg.dropout_rate if train else 0.0, rng)


def _as_batch(ids) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None, :]
    if ids.ndim != 2 or ids.shape[1] == 0:
        raise ModelError(f"expected a (batch, length) id array, got shape {ids.shape}")
    return ids


def encode(model: TransformerModel, src_ids, pad_id: int = 0, train: bool = False,
           rng=None, trace: list | None = None) -> Tensor:
    """Contextual vectors (B, L, d_model). Padding keys are masked out."""
    src = _as_batch(src_ids)
    key_mask = (src != pad_id)[:, None, None, :]
    x = _embed(model, src, train, rng)
    for i in range(model.config.n_layers_enc):
        p = f"enc.{i}"
        h = _ln(model, f"{p}.ln1", x)
        x = ag.add(x, _mha(model, f"{p}.attn", h, h, key_mask, trace, train, rng))
        x = ag.add(x, _ffn(model, f"{p}.ff", _ln(model, f"{p}.ln2", x), train, rng))
    return _ln(model, "enc.ln", x)


def decode(model: TransformerModel, memory: Tensor, src_ids, dec_ids, pad_id: int = 0,
           train: bool = False, rng=None, trace: list | None = None) -> Tensor:
    """Next-token logits (B, T, vocab) for every decoder position under a causal mask."""
    src = _as_batch(src_ids)
    dec = _as_batch(dec_ids)
    T = dec.shape[1]
    causal = np.tril(np.ones((T, T), dtype=bool))
    self_mask = causal[None, None] & (dec != pad_id)[:, None, None, :]
    cross_mask = (src != pad_id)[:, None, None, :]
    x = _embed(model, dec, train, rng)
    for i in range(model.config.n_layers_dec):
        p = f"dec.{i}"
        h = _ln(model, f"{p}.ln1", x)
        x = ag.add(x, _mha(model, f"{p}.self", h, h, self_mask, trace, train, rng))
        h = _ln(model, f"{p}.ln2", x)
        x = ag.add(x, _mha(model, f"{p}.cross", h, memory, cross_mask, trace, train, rng))
        x = ag.add(x, _ffn(model, f"{p}.ff", _ln(model, f"{p}.ln3", x), train, rng))
    h = _ln(model, "dec.ln", x)
    return ag.matmul(h, ag.transpose(model.params["embed"], (1, 0)))


def decode_step(model: TransformerModel, memory: Tensor, src_ids, prefix_ids, pad_id: int = 0) -> np.ndarray:
    """Logits (B, vocab) for the token following ``prefix_ids``."""
    logits = decode(model, memory, src_ids, prefix_ids, pad_id)
    return logits.data[:, -1, :]


def sequence_loss(model: TransformerModel, src, dec_in, dec_out, weights, pad_id: int = 0,
                  train: bool = False, rng=None) -> Tensor:
    memory = encode(model, src, pad_id, train, rng)
    logits = decode(model, memory, src, dec_in, pad_id, train, rng)
    return ag.cross_entropy(logits, dec_out, weights)


def teacher_forced(model: TransformerModel, src, dec_in, pad_id: int = 0):
    """Logits under teacher forcing, no graph kept."""
    memory = encode(model, src, pad_id)
    return decode(model, memory, src, dec_in, pad_id).data


def greedy_decode(model: TransformerModel, src_ids, max_out_len: int, start_id: int,
                  end_id: int, pad_id: int = 0) -> list[list[int]]:
    """Append the argmax token until the end marker or ``max_out_len`` tokens; end marker dropped."""
    if max_out_len < 1:
        raise ModelError("max_out_len must be >= 1")
    src = _as_batch(src_ids)
    B = src.shape[0]
    memory = encode(model, src, pad_id)
    prefix = np.full((B, 1), start_id, dtype=np.int64)
    done = np.zeros(B, dtype=bool)
    outs: list[list[int]] = [[] for _ in range(B)]
    for _ in range(max_out_len):
        nxt = decode_step(model, memory, src, prefix, pad_id).argmax(axis=-1)
        for i in np.flatnonzero(~done):
            if nxt[i] == end_id:
                done[i] = True
            else:
                outs[i].append(int(nxt[i]))
        if done.all():
            break
        nxt = np.where(done, pad_id, nxt)
        prefix = np.concatenate([prefix, nxt[:, None]], axis=1)
    return outs


# -------------------------------------------------------------- checkpoint

def save_checkpoint(path, model: TransformerModel, step: int = 0, eval_loss: float = float("nan"),
                    extra: dict | None = None) -> None:
    """``.npz`` container: a JSON ``__meta__`` entry plus one array per parameter, in model order."""
    meta = {"config": model.config.to_dict(), "order": list(model.params), "step": int(step),
            "eval_loss": float(eval_loss), "extra": extra or {}}
    arrays = {f"p{i:04d}": t.data for i, t in enumerate(model.params.values())}
    with open(path, "wb") as fh:
        np.savez(fh, __meta__=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def load_checkpoint(path) -> tuple[TransformerModel, dict]:
    with np.load(Path(path), allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        model = TransformerModel(ModelConfig(**meta["config"]))
        state = {name: z[f"p{i:04d}"] for i, name in enumerate(meta["order"])}
    model.load_state_dict(state)
    return model, meta
