"""Miniature encoder-decoder language model with a word-level vocabulary.

The encoder consumes embedding-width vectors directly (token embeddings
during pretraining, latent brain sequences afterwards); the decoder is
causally masked, cross-attends to the encoder states, and feeds its last
hidden states through a two-layer MLP head over the vocabulary.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import LengthError, LossError, ShapeError, VocabError
from .tensorio import load_tensors, save_tensors
from .tokenizer import detokenize, tokenize_text

PAD, BOS, EOS, UNK = 0, 1, 2, 3
RESERVED = ["<pad>", "<bos>", "<eos>", "<unk>"]


class Vocabulary:
    """Dense word-level vocabulary with fixed reserved ids 0..3."""

    def __init__(self, tokens: list):
        if tokens[: len(RESERVED)] != RESERVED:
            raise VocabError(f"vocabulary must start with reserved tokens {RESERVED}")
        if len(set(tokens)) != len(tokens):
            raise VocabError("vocabulary tokens are not unique")
        self.tokens = list(tokens)
        self.index = {t: i for i, t in enumerate(self.tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, texts: list) -> "Vocabulary":
        tokens = list(RESERVED)
        seen = set(tokens)
        for text in texts:
            for tok in tokenize_text(text):
                if tok not in seen:
                    seen.add(tok)
                    tokens.append(tok)
        return cls(tokens)

    def tokenize(self, text: str) -> list:
        return [self.index.get(t, UNK) for t in tokenize_text(text)]

    def detokenize(self, ids: list) -> str:
        toks = []
        for i in ids:
            if i < 0 or i >= len(self.tokens):
                raise VocabError(f"token id {i} outside vocabulary of size {len(self.tokens)}")
            if i in (PAD, BOS, EOS):
                continue
            toks.append(self.tokens[i])
        return detokenize(toks)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([ln for ln in lines if ln != ""])


@dataclass
class DecodeResult:
    ids: list
    text: str
    logprobs: list

    @property
    def ended_at_eos(self) -> bool:
        return bool(self.ids) and self.ids[-1] == EOS


@dataclass
class MiniLMConfig:
    vocab_size: int
    emb_dim: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    ffn_dim: int = 128
    head_hidden: int = 64
    max_positions: int = 64
    dropout_rate: float = 0.1
    emb_init_std: float = 1.0
    pos_init_std: float = 0.2  # strong enough to carry word order next to unit-scale embeddings

    def __post_init__(self):
        if self.emb_dim % self.heads != 0:
            raise ShapeError(f"emb_dim {self.emb_dim} not divisible by {self.heads} heads")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def desk_lm_config(vocab_size: int, **overrides) -> MiniLMConfig:
    return MiniLMConfig(vocab_size=vocab_size, **overrides)


def paper_lm_config(vocab_size: int, **overrides) -> MiniLMConfig:
    base = dict(
        emb_dim=1024,
        enc_layers=12,
        dec_layers=12,
        heads=8,
        ffn_dim=4096,
        head_hidden=1024,
        max_positions=128,
        dropout_rate=0.1,
    )
    base.update(overrides)
    return MiniLMConfig(vocab_size=vocab_size, **base)


def _uniform(rng, fan_in, shape):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


class MiniLM:
    def __init__(self, config: MiniLMConfig, seed: int = 0, params: dict = None):
        self.config = config
        self.params = params if params is not None else self._init_params(seed)

    def _init_params(self, seed: int) -> dict:
        cfg = self.config
        rng = np.random.default_rng(seed)
        p = {}

        def w(name, fan_in, shape):
            p[name] = Tensor(_uniform(rng, fan_in, shape), requires_grad=True)

        def zeros(name, shape):
            p[name] = Tensor(np.zeros(shape), requires_grad=True)

        def ones(name, shape):
            p[name] = Tensor(np.ones(shape), requires_grad=True)

        def attn(prefix):
            for proj in ("wq", "wk", "wv", "wo"):
                w(f"{prefix}.{proj}", cfg.emb_dim, (cfg.emb_dim, cfg.emb_dim))
            for bias in ("bq", "bk", "bv", "bo"):
                zeros(f"{prefix}.{bias}", (cfg.emb_dim,))

        def ffn(prefix):
            w(f"{prefix}.w1", cfg.emb_dim, (cfg.emb_dim, cfg.ffn_dim))
            zeros(f"{prefix}.b1", (cfg.ffn_dim,))
            w(f"{prefix}.w2", cfg.ffn_dim, (cfg.ffn_dim, cfg.emb_dim))
            zeros(f"{prefix}.b2", (cfg.emb_dim,))

        def ln(prefix):
            ones(f"{prefix}.g", (cfg.emb_dim,))
            zeros(f"{prefix}.b", (cfg.emb_dim,))

        p["emb.table"] = Tensor(rng.normal(0.0, cfg.emb_init_std, size=(cfg.vocab_size, cfg.emb_dim)), requires_grad=True)
        p["enc.pos"] = Tensor(rng.normal(0.0, cfg.pos_init_std, size=(cfg.max_positions, cfg.emb_dim)), requires_grad=True)
        p["dec.pos"] = Tensor(rng.normal(0.0, cfg.pos_init_std, size=(cfg.max_positions, cfg.emb_dim)), requires_grad=True)
        for layer in range(cfg.enc_layers):
            attn(f"enc.{layer}.attn")
            ln(f"enc.{layer}.ln1")
            ffn(f"enc.{layer}.ffn")
            ln(f"enc.{layer}.ln2")
        for layer in range(cfg.dec_layers):
            attn(f"dec.{layer}.self")
            ln(f"dec.{layer}.ln1")
            attn(f"dec.{layer}.cross")
            ln(f"dec.{layer}.ln2")
            ffn(f"dec.{layer}.ffn")
            ln(f"dec.{layer}.ln3")
        w("head.w1", cfg.emb_dim, (cfg.emb_dim, cfg.head_hidden))
        zeros("head.b1", (cfg.head_hidden,))
        w("head.w2", cfg.head_hidden, (cfg.head_hidden, cfg.vocab_size))
        zeros("head.b2", (cfg.vocab_size,))
        return p

    # -- building blocks ----------------------------------------------------

    def embed_tokens(self, ids) -> Tensor:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.config.vocab_size):
            raise VocabError(f"token id outside vocabulary of size {self.config.vocab_size}")
        if ids.size == 0:
            return Tensor(np.zeros((0, self.config.emb_dim)))
        return ad.embedding(self.params["emb.table"], ids)

    def _attention(self, prefix, x_q, x_kv, mask=None, attn_sink=None) -> Tensor:
        cfg = self.config
        p = self.params
        nq, nk = x_q.shape[0], x_kv.shape[0]
        heads, dh = cfg.heads, cfg.emb_dim // cfg.heads
        q = ad.linear(x_q, p[f"{prefix}.wq"], p[f"{prefix}.bq"]).reshape((nq, heads, dh)).transpose(1, 0, 2)
        k = ad.linear(x_kv, p[f"{prefix}.wk"], p[f"{prefix}.bk"]).reshape((nk, heads, dh)).transpose(1, 0, 2)
        v = ad.linear(x_kv, p[f"{prefix}.wv"], p[f"{prefix}.bv"]).reshape((nk, heads, dh)).transpose(1, 0, 2)
        scores = ad.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh))
        if mask is not None:
            scores = scores + mask
        attn = ad.softmax(scores, axis=-1)
        if attn_sink is not None:
            attn_sink.append(attn.data.copy())
        ctx = ad.matmul(attn, v).transpose(1, 0, 2).reshape((nq, cfg.emb_dim))
        return ad.linear(ctx, p[f"{prefix}.wo"], p[f"{prefix}.bo"])

    def _sublayer(self, x, y, ln_prefix, train_mode, rng) -> Tensor:
        y = ad.dropout(y, self.config.dropout_rate, rng, train_mode)
        return ad.layer_norm(x + y, self.params[f"{ln_prefix}.g"], self.params[f"{ln_prefix}.b"])

    def _ffn(self, prefix, x) -> Tensor:
        p = self.params
        return ad.linear(ad.gelu(ad.linear(x, p[f"{prefix}.w1"], p[f"{prefix}.b1"])), p[f"{prefix}.w2"], p[f"{prefix}.b2"])

    def encode_source(self, encoder_input, train_mode=False, rng=None) -> Tensor:
        """Bidirectional encoder over already-embedded (L, emb_dim) input."""
        cfg = self.config
        x = ad.astensor(encoder_input)
        if x.ndim != 2 or x.shape[1] != cfg.emb_dim:
            raise ShapeError(f"encoder input must be (L, {cfg.emb_dim}), got {x.shape}")
        n = x.shape[0]
        if n > cfg.max_positions:
            raise LengthError(f"encoder input length {n} exceeds max_positions {cfg.max_positions}")
        x = x + self.params["enc.pos"][:n]
        for layer in range(cfg.enc_layers):
            a = self._attention(f"enc.{layer}.attn", x, x)
            x = self._sublayer(x, a, f"enc.{layer}.ln1", train_mode, rng)
            f = self._ffn(f"enc.{layer}.ffn", x)
            x = self._sublayer(x, f, f"enc.{layer}.ln2", train_mode, rng)
        return x

    def decode_states(self, memory, decoder_ids, train_mode=False, rng=None, attn_sink=None) -> Tensor:
        cfg = self.config
        n = len(decoder_ids)
        if n > cfg.max_positions:
            raise LengthError(f"decoder length {n} exceeds max_positions {cfg.max_positions}")
        x = self.embed_tokens(decoder_ids) + self.params["dec.pos"][:n]
        mask = ad.causal_mask(n)
        for layer in range(cfg.dec_layers):
            a = self._attention(f"dec.{layer}.self", x, x, mask, attn_sink)
            x = self._sublayer(x, a, f"dec.{layer}.ln1", train_mode, rng)
            c = self._attention(f"dec.{layer}.cross", x, memory)
            x = self._sublayer(x, c, f"dec.{layer}.ln2", train_mode, rng)
            f = self._ffn(f"dec.{layer}.ffn", x)
            x = self._sublayer(x, f, f"dec.{layer}.ln3", train_mode, rng)
        return x

    def output_head(self, states) -> Tensor:
        p = self.params
        return ad.linear(ad.gelu(ad.linear(states, p["head.w1"], p["head.b1"])), p["head.w2"], p["head.b2"])

    # -- spec operations ------------------------------------------------------

    def forward_teacher_forced(self, encoder_input, target_ids, train_mode=False, rng=None, attn_sink=None) -> Tensor:
        """Logits (N, |V|) for predicting target_ids, teacher-forced.

        The decoder consumes BOS followed by the first N-1 targets, so the
        logits row at position j depends only on targets < j.
        """
        target_ids = np.asarray(target_ids, dtype=np.int64)
        memory = self.encode_source(encoder_input, train_mode, rng)
        decoder_ids = np.concatenate(([BOS], target_ids[:-1]))
        states = self.decode_states(memory, decoder_ids, train_mode, rng, attn_sink)
        return self.output_head(states)

    def cross_entropy_loss(self, logits, target_ids, pad_mask=None) -> Tensor:
        """Mean negative log-likelihood over non-pad positions.

        Mean normalization keeps learning rates length-independent; the
        summed form is the mean times the number of unmasked positions.
        """
        target_ids = np.asarray(target_ids, dtype=np.int64)
        if pad_mask is None:
            pad_mask = target_ids != PAD
        pad_mask = np.asarray(pad_mask, dtype=bool)
        if logits.shape[0] != len(target_ids) or len(target_ids) != len(pad_mask):
            raise ShapeError(f"logits {logits.shape} vs {len(target_ids)} targets, {len(pad_mask)} mask entries")
        if not pad_mask.any():
            raise LossError("all target positions are padding")
        return ad.softmax_cross_entropy(logits, target_ids, pad_mask)

    def greedy_decode(self, encoder_input, max_len: int, vocab: Vocabulary = None) -> DecodeResult:
        """Deterministic argmax decoding; ties resolve to the lowest id."""
        if max_len < 1:
            raise ShapeError("max_len must be >= 1")
        memory = self.encode_source(encoder_input)
        ids: list = []
        logprobs: list = []
        while len(ids) < max_len:
            decoder_ids = np.asarray([BOS] + ids, dtype=np.int64)
            states = self.decode_states(memory, decoder_ids)
            logits = self.output_head(states).data[-1]
            shifted = logits - logits.max()
            logp = shifted - np.log(np.exp(shifted).sum())
            nxt = int(np.argmax(logits))
            ids.append(nxt)
            logprobs.append(float(logp[nxt]))
            if nxt == EOS:
                break
        text = vocab.detokenize(ids) if vocab is not None else ""
        return DecodeResult(ids, text, logprobs)

    # -- parameter management ---------------------------------------------------

    def trainable(self, freeze: set = frozenset()) -> dict:
        if "lm" in freeze:
            return {}
        out = dict(self.params)
        if "lm_embeddings" in freeze:
            out.pop("emb.table", None)
        return out

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def save(self, path) -> None:
        save_tensors(path, {"kind": "mini_lm", "config": self.config.to_dict()}, self.params)

    @classmethod
    def load(cls, path) -> "MiniLM":
        header, tensors = load_tensors(path)
        config = MiniLMConfig(**header["config"])
        params = {name: Tensor(arr, requires_grad=True) for name, arr in tensors.items()}
        return cls(config, params=params)
