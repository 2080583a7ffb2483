"""Subject-aware brain encoder: raw EEG word segments -> latent embeddings.

Per word: a bidirectional GRU reads the (C, T) segment, the concatenated
final hidden states pass through a fully connected layer and a 1x1
point-wise convolution down to D feature channels, and a learned
per-subject row vector r_s scales those channels. The resulting word
sequence is projected to the transformer width, combined with a learned
position table, run through a causally masked transformer encoder stack
(post-norm, dropout after each sublayer), and finished by a residual MLP.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .dataset import SentenceRecord
from .errors import LengthError, ShapeError, SubjectError
from .tensorio import load_tensors, save_tensors


@dataclass
class BrainConfig:
    in_channels: int = 8
    gru_hidden: int = 32
    fc_dim: int = 64
    conv_channels: int = 16
    bte_layers: int = 2
    bte_heads: int = 4
    bte_ffn_dim: int = 128
    d_model: int = 64
    out_dim: int = 64
    max_positions: int = 32
    dropout_rate: float = 0.1

    def __post_init__(self):
        if self.d_model % self.bte_heads != 0:
            raise ShapeError(f"d_model {self.d_model} not divisible by {self.bte_heads} heads")
        if self.out_dim < 1:
            raise ShapeError("out_dim must be positive")

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def desk_brain_config(**overrides) -> BrainConfig:
    return BrainConfig(**overrides)


def paper_brain_config(**overrides) -> BrainConfig:
    base = dict(
        in_channels=104,
        gru_hidden=512,
        fc_dim=1024,
        conv_channels=64,
        bte_layers=12,
        bte_heads=8,
        bte_ffn_dim=4096,
        d_model=1024,
        out_dim=1024,
        max_positions=64,
        dropout_rate=0.1,
    )
    base.update(overrides)
    return BrainConfig(**base)


@dataclass
class LatentSequence:
    """M x out_dim latent brain embeddings for one sentence."""

    Z: np.ndarray
    subject: str = ""
    sentence_id: str = ""

    @property
    def rows(self) -> int:
        return self.Z.shape[0]


def _uniform(rng, fan_in, shape):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


class BrainEncoder:
    """Holds the parameter set and implements the forward pass."""

    def __init__(self, config: BrainConfig, subjects: list, seed: int = 0, params: dict = None):
        self.config = config
        self.subjects = list(subjects)
        self.subject_index = {s: i for i, s in enumerate(self.subjects)}
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

        h = cfg.gru_hidden
        for d in ("fwd", "bwd"):
            w(f"gru.{d}.w_x", cfg.in_channels, (cfg.in_channels, 3 * h))
            w(f"gru.{d}.w_h", h, (h, 3 * h))
            zeros(f"gru.{d}.b", (3 * h,))
        w("fc.w", 2 * h, (2 * h, cfg.fc_dim))
        zeros("fc.b", (cfg.fc_dim,))
        w("conv.w", cfg.fc_dim, (cfg.fc_dim, cfg.conv_channels))
        zeros("conv.b", (cfg.conv_channels,))
        ones("subject.table", (len(self.subjects), cfg.conv_channels))
        w("proj.w_in", cfg.conv_channels, (cfg.conv_channels, cfg.d_model))
        p["pos.table"] = Tensor(rng.normal(0.0, 0.02, size=(cfg.max_positions, cfg.d_model)), requires_grad=True)
        for layer in range(cfg.bte_layers):
            pre = f"bte.{layer}"
            for proj in ("wq", "wk", "wv", "wo"):
                w(f"{pre}.attn.{proj}", cfg.d_model, (cfg.d_model, cfg.d_model))
            for bias in ("bq", "bk", "bv", "bo"):
                zeros(f"{pre}.attn.{bias}", (cfg.d_model,))
            ones(f"{pre}.ln1.g", (cfg.d_model,))
            zeros(f"{pre}.ln1.b", (cfg.d_model,))
            w(f"{pre}.ffn.w1", cfg.d_model, (cfg.d_model, cfg.bte_ffn_dim))
            zeros(f"{pre}.ffn.b1", (cfg.bte_ffn_dim,))
            w(f"{pre}.ffn.w2", cfg.bte_ffn_dim, (cfg.bte_ffn_dim, cfg.d_model))
            zeros(f"{pre}.ffn.b2", (cfg.d_model,))
            ones(f"{pre}.ln2.g", (cfg.d_model,))
            zeros(f"{pre}.ln2.b", (cfg.d_model,))
        w("mlp.w1", cfg.d_model, (cfg.d_model, cfg.bte_ffn_dim))
        zeros("mlp.b1", (cfg.bte_ffn_dim,))
        w("mlp.w2", cfg.bte_ffn_dim, (cfg.bte_ffn_dim, cfg.d_model))
        zeros("mlp.b2", (cfg.d_model,))
        if cfg.d_model != cfg.out_dim:
            w("outproj.w", cfg.d_model, (cfg.d_model, cfg.out_dim))
            zeros("outproj.b", (cfg.out_dim,))
        return p

    # -- per-word front end ------------------------------------------------

    def _gru_scan(self, x_pad: np.ndarray, mask: np.ndarray, direction: str) -> Tensor:
        """Masked GRU over (M, T, C) padded input; returns final (M, H) states.

        Runs as one tape node with a hand-written backward-through-time
        pass, so a whole sentence costs a single graph node per direction.
        Rows whose mask has run out simply hold their state, so the final
        state of word m equals its state at step T_m.

        Cell (update z, reset r, candidate n; reset applied to the
        projected recurrent term):
            z = sigmoid(xp_z + hp_z); r = sigmoid(xp_r + hp_r)
            n = tanh(xp_n + r * hp_n); h' = (1 - z) * n + z * h
        """
        w_x = self.params[f"gru.{direction}.w_x"]
        w_h = self.params[f"gru.{direction}.w_h"]
        b = self.params[f"gru.{direction}.b"]
        h_dim = self.config.gru_hidden
        m_words, steps, channels = x_pad.shape
        x_flat = x_pad.reshape(m_words * steps, channels)
        xp = (x_flat @ w_x.data + b.data).reshape(m_words, steps, 3 * h_dim)

        h = np.zeros((m_words, h_dim))
        saved = []
        for t in range(steps):
            hp = h @ w_h.data
            z = 1.0 / (1.0 + np.exp(-(xp[:, t, :h_dim] + hp[:, :h_dim])))
            r = 1.0 / (1.0 + np.exp(-(xp[:, t, h_dim : 2 * h_dim] + hp[:, h_dim : 2 * h_dim])))
            hp_n = hp[:, 2 * h_dim :]
            n = np.tanh(xp[:, t, 2 * h_dim :] + r * hp_n)
            m_t = mask[:, t : t + 1]
            saved.append((h, z, r, n, hp_n, m_t))
            h = m_t * ((1.0 - z) * n + z * h) + (1.0 - m_t) * h

        out = Tensor(h, parents=(w_x, w_h, b))

        def bw(g):
            dxp = np.zeros_like(xp)
            dwh = np.zeros_like(w_h.data)
            dh = g
            for t in range(steps - 1, -1, -1):
                h_prev, z, r, n, hp_n, m_t = saved[t]
                g_cand = dh * m_t
                dz = g_cand * (h_prev - n)
                da_z = dz * z * (1.0 - z)
                dn = g_cand * (1.0 - z)
                da_n = dn * (1.0 - n * n)
                dr = da_n * hp_n
                da_r = dr * r * (1.0 - r)
                dhp = np.concatenate([da_z, da_r, da_n * r], axis=1)
                dxp[:, t, :] = np.concatenate([da_z, da_r, da_n], axis=1)
                dwh += h_prev.T @ dhp
                dh = dh * (1.0 - m_t) + g_cand * z + dhp @ w_h.data.T
            dxp_flat = dxp.reshape(m_words * steps, 3 * h_dim)
            w_x.accumulate(x_flat.T @ dxp_flat)
            w_h.accumulate(dwh)
            b.accumulate(dxp_flat.sum(axis=0))

        out._backward = bw if out.requires_grad else None
        return out

    def _bigru_features(self, segments: list) -> Tensor:
        """Bi-GRU over each word's segment, then the shared FC layer.

        segments: list of (C, T_m) arrays; returns (M, fc_dim).
        """
        channels = self.config.in_channels
        for seg in segments:
            if seg.shape[0] != channels:
                raise ShapeError(f"encoder built for {channels} channels, got {seg.shape[0]}")
        lengths = [seg.shape[1] for seg in segments]
        t_max = max(lengths)
        m_words = len(segments)
        fwd = np.zeros((m_words, t_max, channels))
        bwd = np.zeros((m_words, t_max, channels))
        mask = np.zeros((m_words, t_max))
        for i, seg in enumerate(segments):
            x = np.asarray(seg, dtype=np.float64).T  # (T, C)
            fwd[i, : lengths[i]] = x
            bwd[i, : lengths[i]] = x[::-1]
            mask[i, : lengths[i]] = 1.0
        h_fwd = self._gru_scan(fwd, mask, "fwd")
        h_bwd = self._gru_scan(bwd, mask, "bwd")
        both = ad.concat([h_fwd, h_bwd], axis=1)
        return ad.linear(both, self.params["fc.w"], self.params["fc.b"])

    def gru_features(self, samples: np.ndarray) -> Tensor:
        """Bi-GRU final states -> fully connected layer; (C, T) -> (1, fc_dim)."""
        return self._bigru_features([np.asarray(samples, dtype=np.float64)])

    def subject_row(self, subject: str, fallback: bool = False) -> Tensor:
        table = self.params["subject.table"]
        idx = self.subject_index.get(subject)
        if idx is None:
            if not fallback:
                raise SubjectError(f"unknown subject {subject!r}; known: {self.subjects}")
            return table.mean(axis=0, keepdims=True)
        return table[idx : idx + 1]

    def apply_subject_layer(self, features: Tensor, subject: str, fallback: bool = False) -> Tensor:
        """Scale the D feature channels of every word by the subject's r_s."""
        return features * self.subject_row(subject, fallback)

    # -- transformer stack ---------------------------------------------------

    def _attention(self, x: Tensor, layer: int, mask: np.ndarray, attn_sink=None) -> Tensor:
        cfg = self.config
        p = self.params
        m = x.shape[0]
        heads, dh = cfg.bte_heads, cfg.d_model // cfg.bte_heads
        pre = f"bte.{layer}.attn"
        q = ad.linear(x, p[f"{pre}.wq"], p[f"{pre}.bq"]).reshape((m, heads, dh)).transpose(1, 0, 2)
        k = ad.linear(x, p[f"{pre}.wk"], p[f"{pre}.bk"]).reshape((m, heads, dh)).transpose(1, 0, 2)
        v = ad.linear(x, p[f"{pre}.wv"], p[f"{pre}.bv"]).reshape((m, heads, dh)).transpose(1, 0, 2)
        scores = ad.matmul(q, k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh)) + mask
        attn = ad.softmax(scores, axis=-1)
        if attn_sink is not None:
            attn_sink.append(attn.data.copy())
        ctx = ad.matmul(attn, v).transpose(1, 0, 2).reshape((m, cfg.d_model))
        return ad.linear(ctx, p[f"{pre}.wo"], p[f"{pre}.bo"])

    def bte_forward(self, tokens: Tensor, train_mode: bool = False, rng=None, attn_sink=None) -> Tensor:
        """Causally masked transformer encoder over (M, d_model) tokens."""
        cfg = self.config
        p = self.params
        m = tokens.shape[0]
        if m > cfg.max_positions:
            raise LengthError(f"sequence length {m} exceeds max_positions {cfg.max_positions}")
        mask = ad.causal_mask(m)
        x = tokens
        for layer in range(cfg.bte_layers):
            a = self._attention(x, layer, mask, attn_sink)
            a = ad.dropout(a, cfg.dropout_rate, rng, train_mode)
            x = ad.layer_norm(x + a, p[f"bte.{layer}.ln1.g"], p[f"bte.{layer}.ln1.b"])
            f = ad.linear(ad.gelu(ad.linear(x, p[f"bte.{layer}.ffn.w1"], p[f"bte.{layer}.ffn.b1"])),
                          p[f"bte.{layer}.ffn.w2"], p[f"bte.{layer}.ffn.b2"])
            f = ad.dropout(f, cfg.dropout_rate, rng, train_mode)
            x = ad.layer_norm(x + f, p[f"bte.{layer}.ln2.g"], p[f"bte.{layer}.ln2.b"])
        return x

    # -- full encode ---------------------------------------------------------

    def encode_tensor(
        self,
        record: SentenceRecord,
        train_mode: bool = False,
        rng=None,
        use_subject_layer: bool = True,
        use_bte: bool = True,
        subject_fallback: bool = False,
        attn_sink=None,
    ) -> Tensor:
        cfg = self.config
        p = self.params
        m = record.num_words
        if m > cfg.max_positions:
            raise LengthError(f"record {record.sentence_id}: {m} words exceed max_positions {cfg.max_positions}")
        feats = self._bigru_features([seg.samples for _, seg in record.words])  # (M, fc_dim)
        feats = ad.linear(feats, p["conv.w"], p["conv.b"])  # 1x1 conv to D channels
        if use_subject_layer:
            feats = self.apply_subject_layer(feats, record.subject, subject_fallback)
        tokens = ad.matmul(feats, p["proj.w_in"]) + p["pos.table"][:m]
        if use_bte:
            tokens = self.bte_forward(tokens, train_mode, rng, attn_sink)
        hidden = ad.linear(ad.gelu(ad.linear(tokens, p["mlp.w1"], p["mlp.b1"])), p["mlp.w2"], p["mlp.b2"])
        out = tokens + hidden
        if "outproj.w" in p:
            out = ad.linear(out, p["outproj.w"], p["outproj.b"])
        return out

    def encode(self, record: SentenceRecord, train_mode: bool = False, **kwargs) -> LatentSequence:
        z = self.encode_tensor(record, train_mode=train_mode, **kwargs)
        return LatentSequence(z.data.copy(), subject=record.subject, sentence_id=record.sentence_id)

    # -- parameter management --------------------------------------------------

    def trainable(self, freeze: set = frozenset()) -> dict:
        if "brain" in freeze:
            return {}
        return dict(self.params)

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def save(self, path) -> None:
        header = {"kind": "brain", "config": self.config.to_dict(), "subjects": self.subjects}
        save_tensors(path, header, self.params)

    @classmethod
    def load(cls, path) -> "BrainEncoder":
        header, tensors = load_tensors(path)
        config = BrainConfig(**header["config"])
        params = {name: Tensor(arr, requires_grad=True) for name, arr in tensors.items()}
        return cls(config, header["subjects"], params=params)
