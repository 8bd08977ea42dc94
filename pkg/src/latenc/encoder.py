"""Lattice Transformer encoder: embeddings + positions, then L layers of
(lattice-aware) multi-head self-attention and position-wise feed-forward,
with residual connections and layer normalization.

The encoder consumes a lattice's edges in canonical order.  Positional
mode and attention mode are independent switches so ablations (flat
positions, vanilla attention, zeroed tables) reuse one code path.
"""

import json
import math
from collections.abc import Iterable, Mapping
from dataclasses import asdict, dataclass, field

import numpy as np

from . import encoding
from .attention import AttentionParams, RelationEmbeddingTable, multi_head
from .lattice import Lattice, N_RELATIONS, relation_matrix
from .numerics import (
    NumericsError,
    Tensor,
    dropout,
    gather_rows,
    layer_norm,
    matmul,
    relu,
)

ATTENTION_MODES = ("vanilla", "lsa")

PAD, UNK, BOS, EOS = "<pad>", "<unk>", "<s>", "</s>"


class Vocab:
    """Token-to-id map with reserved pad/unk/bos/eos entries."""

    def __init__(self, tokens: Iterable[str], include_unk: bool = True):
        reserved = [PAD] + ([UNK] if include_unk else []) + [BOS, EOS]
        self._tokens = list(reserved)
        seen = set(reserved)
        for tok in tokens:
            if tok not in seen:
                seen.add(tok)
                self._tokens.append(tok)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}
        self.include_unk = include_unk

    @classmethod
    def from_surfaces(
        cls, surfaces: Iterable[str], min_freq: int = 1, include_unk: bool = True
    ) -> "Vocab":
        counts: dict[str, int] = {}
        for s in surfaces:
            counts[s] = counts.get(s, 0) + 1
        kept = sorted(tok for tok, c in counts.items() if c >= min_freq)
        return cls(kept, include_unk=include_unk)

    def __len__(self) -> int:
        return len(self._tokens)

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    @property
    def bos_id(self) -> int:
        return self._ids[BOS]

    @property
    def eos_id(self) -> int:
        return self._ids[EOS]

    def id_of(self, token: str) -> int:
        got = self._ids.get(token)
        if got is None:
            if self.include_unk:
                return self._ids[UNK]
            raise KeyError(f"token {token!r} not in vocabulary and no UNK configured")
        return got

    def token_of(self, idx: int) -> str:
        return self._tokens[idx]

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.id_of(t) for t in tokens], dtype=np.int64)

    def to_json(self) -> str:
        return json.dumps({"tokens": self._tokens, "include_unk": self.include_unk})

    @classmethod
    def from_json(cls, text: str) -> "Vocab":
        obj = json.loads(text)
        vocab = cls.__new__(cls)
        vocab._tokens = list(obj["tokens"])
        vocab._ids = {tok: i for i, tok in enumerate(vocab._tokens)}
        vocab.include_unk = bool(obj["include_unk"])
        return vocab


@dataclass
class EncoderConfig:
    """Model shape and mode switches.

    ``scale_by_model_dim`` flips attention scaling from the per-head width
    to the full model dimension (the literal reading of the scaled dot
    product); ``scale_embeddings`` multiplies embeddings by sqrt(d) before
    positions are added.  ``label_smoothing`` is a stub and must stay 0.
    """

    d: int = 32
    heads: int = 2
    layers: int = 2
    d_ff: int = 64
    vocab_size: int = 64
    dropout: float = 0.0
    positional_mode: str = "lpe"
    attention_mode: str = "lsa"
    pre_norm: bool = False
    scale_embeddings: bool = True
    scale_by_model_dim: bool = False
    label_smoothing: float = 0.0

    def __post_init__(self):
        if self.d < 1 or self.heads < 1 or self.layers < 1 or self.d_ff < 1:
            raise NumericsError("all model extents must be >= 1")
        if self.vocab_size < 1:
            raise NumericsError("vocab_size must be >= 1")
        if self.d % self.heads != 0:
            raise NumericsError(f"d={self.d} not divisible by heads={self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise NumericsError("dropout must be in [0,1)")
        if self.positional_mode not in encoding.POSITIONAL_MODES:
            raise NumericsError(f"unknown positional_mode {self.positional_mode!r}")
        if self.attention_mode not in ATTENTION_MODES:
            raise NumericsError(f"unknown attention_mode {self.attention_mode!r}")
        if self.label_smoothing != 0.0:
            raise NumericsError("label smoothing is a config stub; only 0.0 is supported")

    @property
    def d_head(self) -> int:
        return self.d // self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "EncoderConfig":
        return cls(**dict(obj))


@dataclass(frozen=True)
class EncoderOutput:
    """Per-edge hidden states, rows in canonical edge order."""

    hidden: Tensor

    @property
    def num_edges(self) -> int:
        return self.hidden.shape[0]


@dataclass
class _LayerParams:
    attn: AttentionParams
    rel: RelationEmbeddingTable | None
    ln1_gain: Tensor
    ln1_bias: Tensor
    ln2_gain: Tensor
    ln2_bias: Tensor
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor


def _init_weight(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> Tensor:
    std = 1.0 / math.sqrt(fan_in)
    return Tensor(rng.normal(0.0, std, size=(fan_in, fan_out)).astype(dtype), requires_grad=True)


def _init_relation_table(rng: np.random.Generator, d_h: int, dtype) -> RelationEmbeddingTable:
    # small symmetric init keeps early training near the vanilla reduction
    low, high = -0.05, 0.05
    return RelationEmbeddingTable(
        keys=Tensor(rng.uniform(low, high, size=(N_RELATIONS, d_h)).astype(dtype), requires_grad=True),
        values=Tensor(rng.uniform(low, high, size=(N_RELATIONS, d_h)).astype(dtype), requires_grad=True),
    )


class LatticeEncoder:
    """Encoder stack owning its parameters; one instance per configuration."""

    def __init__(self, config: EncoderConfig, seed: int = 0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        d, d_ff = config.d, config.d_ff
        self.embed = Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(d), size=(config.vocab_size, d)).astype(dtype),
            requires_grad=True,
        )
        self.layers: list[_LayerParams] = []
        for _ in range(config.layers):
            attn = AttentionParams(
                wq=_init_weight(rng, d, d, dtype),
                wk=_init_weight(rng, d, d, dtype),
                wv=_init_weight(rng, d, d, dtype),
                wo=_init_weight(rng, d, d, dtype),
            )
            rel = (
                _init_relation_table(rng, config.d_head, dtype)
                if config.attention_mode == "lsa"
                else None
            )
            self.layers.append(
                _LayerParams(
                    attn=attn,
                    rel=rel,
                    ln1_gain=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
                    ln1_bias=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
                    ln2_gain=Tensor(np.ones(d, dtype=dtype), requires_grad=True),
                    ln2_bias=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
                    ffn_w1=_init_weight(rng, d, d_ff, dtype),
                    ffn_b1=Tensor(np.zeros(d_ff, dtype=dtype), requires_grad=True),
                    ffn_w2=_init_weight(rng, d_ff, d, dtype),
                    ffn_b2=Tensor(np.zeros(d, dtype=dtype), requires_grad=True),
                )
            )
        if config.pre_norm:
            self.final_gain = Tensor(np.ones(d, dtype=dtype), requires_grad=True)
            self.final_bias = Tensor(np.zeros(d, dtype=dtype), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        params: dict[str, Tensor] = {"embed": self.embed}
        for i, layer in enumerate(self.layers):
            p = f"layers.{i}"
            params[f"{p}.attn.wq"] = layer.attn.wq
            params[f"{p}.attn.wk"] = layer.attn.wk
            params[f"{p}.attn.wv"] = layer.attn.wv
            params[f"{p}.attn.wo"] = layer.attn.wo
            if layer.rel is not None:
                params[f"{p}.rel.keys"] = layer.rel.keys
                params[f"{p}.rel.values"] = layer.rel.values
            params[f"{p}.ln1.gain"] = layer.ln1_gain
            params[f"{p}.ln1.bias"] = layer.ln1_bias
            params[f"{p}.ln2.gain"] = layer.ln2_gain
            params[f"{p}.ln2.bias"] = layer.ln2_bias
            params[f"{p}.ffn.w1"] = layer.ffn_w1
            params[f"{p}.ffn.b1"] = layer.ffn_b1
            params[f"{p}.ffn.w2"] = layer.ffn_w2
            params[f"{p}.ffn.b2"] = layer.ffn_b2
        if self.config.pre_norm:
            params["final.gain"] = self.final_gain
            params["final.bias"] = self.final_bias
        return params

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        for name, tensor in self.parameters().items():
            arr = np.asarray(arrays[name], dtype=self.dtype)
            if arr.shape != tensor.data.shape:
                raise NumericsError(f"{name}: shape {arr.shape} != {tensor.data.shape}")
            tensor.data = arr.copy()

    def prepare(self, lattice: Lattice, vocab: Vocab) -> tuple[np.ndarray, np.ndarray | None, np.ndarray]:
        """Turn a lattice into the arrays the forward pass consumes."""
        try:
            ids = vocab.encode(lattice.surfaces())
        except KeyError as exc:
            raise NumericsError(str(exc)) from exc
        relations = (
            relation_matrix(lattice).codes if self.config.attention_mode == "lsa" else None
        )
        pos = encoding.position_table(lattice, self.config.positional_mode, self.config.d)
        return ids, relations, pos.astype(self.dtype)

    def forward_arrays(
        self,
        ids: np.ndarray,
        relations: np.ndarray | None,
        pos_table: np.ndarray,
        dropout_rng: np.random.Generator | None = None,
    ) -> Tensor:
        cfg = self.config
        if cfg.attention_mode == "lsa" and relations is None:
            raise NumericsError("lsa attention needs a relation matrix")
        rate = cfg.dropout
        scale_dim = cfg.d if cfg.scale_by_model_dim else None
        x = gather_rows(self.embed, np.asarray(ids, dtype=np.int64))
        if cfg.scale_embeddings:
            x = x * math.sqrt(cfg.d)
        x = x + Tensor(np.asarray(pos_table, dtype=self.dtype))
        x = dropout(x, rate, dropout_rng)
        for layer in self.layers:
            rel = layer.rel if cfg.attention_mode == "lsa" else None
            rel_codes = relations if rel is not None else None

            def attend(h: Tensor) -> Tensor:
                return multi_head(
                    h,
                    layer.attn,
                    cfg.heads,
                    relations=rel_codes,
                    table=rel,
                    scale_dim=scale_dim,
                )

            def feed_forward(h: Tensor) -> Tensor:
                inner = relu(matmul(h, layer.ffn_w1) + layer.ffn_b1)
                return matmul(inner, layer.ffn_w2) + layer.ffn_b2

            if cfg.pre_norm:
                x = x + dropout(attend(layer_norm(x, layer.ln1_gain, layer.ln1_bias)), rate, dropout_rng)
                x = x + dropout(feed_forward(layer_norm(x, layer.ln2_gain, layer.ln2_bias)), rate, dropout_rng)
            else:
                x = layer_norm(x + dropout(attend(x), rate, dropout_rng), layer.ln1_gain, layer.ln1_bias)
                x = layer_norm(x + dropout(feed_forward(x), rate, dropout_rng), layer.ln2_gain, layer.ln2_bias)
        if cfg.pre_norm:
            x = layer_norm(x, self.final_gain, self.final_bias)
        return x

    def encode(
        self,
        lattice: Lattice,
        vocab: Vocab,
        dropout_rng: np.random.Generator | None = None,
    ) -> EncoderOutput:
        ids, relations, pos = self.prepare(lattice, vocab)
        return EncoderOutput(self.forward_arrays(ids, relations, pos, dropout_rng))


def param_count(config: EncoderConfig) -> dict[str, int]:
    """Parameter totals and the deltas each lattice mechanism introduces.

    The positional mechanism is parameter-free, so its delta is always 0.
    The relation tables add 8 x 2 x d_head per layer when lattice-aware
    attention is on; the delta is independent of vocab size and d_ff.
    """
    d, d_ff, layers = config.d, config.d_ff, config.layers
    embedding = config.vocab_size * d
    attn = 4 * d * d
    ffn = d * d_ff + d_ff + d_ff * d + d
    norms = 4 * d
    per_layer = attn + ffn + norms
    lsa_delta = 2 * N_RELATIONS * config.d_head * layers
    total = embedding + layers * per_layer
    if config.pre_norm:
        total += 2 * d
    if config.attention_mode == "lsa":
        total += lsa_delta
    return {
        "total": total,
        "embedding": embedding,
        "per_layer": per_layer,
        "lpe_delta": 0,
        "lsa_delta": lsa_delta,
    }
