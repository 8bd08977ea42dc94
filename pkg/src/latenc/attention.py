"""Self-attention variants over lattice edge sequences.

``sdp_attention`` is single-head scaled dot-product attention.
``lattice_aware_attention`` adds a learned embedding per edge-pair relation
to the keys and values before the dot products; the eight-row lookup
tables are gathered into an M x M x d arrangement so everything stays
batched matrix products.  ``multi_head`` slices shared d x d projections
into heads; when relations are given, all heads of a layer read the same
relation table.
"""

import math
from dataclasses import dataclass

import numpy as np

from .lattice import N_RELATIONS, RelationCode, RelationMatrix
from .numerics import NumericsError, Tensor, gather_rows, matmul, softmax_rows


@dataclass
class AttentionParams:
    """Query/key/value/output projections for one multi-head layer (d x d each)."""

    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor


@dataclass
class RelationEmbeddingTable:
    """Per-layer relation embeddings: 8 x d_h for keys and for values.

    One table per encoder layer, shared by all heads of that layer.
    """

    keys: Tensor
    values: Tensor

    def __post_init__(self):
        for t in (self.keys, self.values):
            if t.data.ndim != 2 or t.data.shape[0] != N_RELATIONS:
                raise NumericsError(
                    f"relation table must be {N_RELATIONS} x d_h, got {t.data.shape}"
                )


def _relation_codes(relations: RelationMatrix | np.ndarray, m: int) -> np.ndarray:
    codes = relations.codes if isinstance(relations, RelationMatrix) else np.asarray(relations)
    if codes.shape != (m, m):
        raise NumericsError(f"relation matrix shape {codes.shape}, expected ({m},{m})")
    if np.any(np.diag(codes) != int(RelationCode.SELF)):
        raise NumericsError("relation matrix diagonal must be self")
    return codes


def sdp_attention(
    x: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    scale_dim: int | None = None,
    mask: np.ndarray | None = None,
) -> Tensor:
    """Single-head attention: softmax(Q K^T / sqrt(d)) V.

    ``x`` is (M, d_in); the projections map d_in to the head width, which is
    also the scaling dimension unless ``scale_dim`` overrides it.
    """
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    scale = 1.0 / math.sqrt(scale_dim if scale_dim is not None else q.shape[-1])
    weights = softmax_rows(matmul(q, k.transpose(1, 0)) * scale, mask=mask)
    return matmul(weights, v)


def lattice_aware_attention(
    x: Tensor,
    relations: RelationMatrix | np.ndarray,
    table: RelationEmbeddingTable,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    scale_dim: int | None = None,
) -> Tensor:
    """Single-head attention with relation embeddings added to keys and values.

    Logits become Q_i (K_j + r^K_ij)^T / sqrt(d); outputs sum
    alpha_ij (V_j + r^V_ij).  With zeroed tables this reduces exactly to
    ``sdp_attention``.
    """
    m = x.shape[0]
    codes = _relation_codes(relations, m)
    q = matmul(x, wq)
    k = matmul(x, wk)
    v = matmul(x, wv)
    d_h = q.shape[-1]
    scale = 1.0 / math.sqrt(scale_dim if scale_dim is not None else d_h)

    rel_k = gather_rows(table.keys, codes)  # (M, M, d_h)
    rel_v = gather_rows(table.values, codes)
    # Q_i . r^K_ij as a stacked matmul: (M,1,d_h) @ (M,d_h,M) -> (M,1,M)
    rel_logits = matmul(q.reshape(m, 1, d_h), rel_k.transpose(0, 2, 1)).reshape(m, m)
    weights = softmax_rows((matmul(q, k.transpose(1, 0)) + rel_logits) * scale)
    # sum_j alpha_ij r^V_ij: (M,1,M) @ (M,M,d_h) -> (M,1,d_h)
    rel_out = matmul(weights.reshape(m, 1, m), rel_v).reshape(m, d_h)
    return matmul(weights, v) + rel_out


def multi_head(
    x: Tensor,
    params: AttentionParams,
    num_heads: int,
    relations: RelationMatrix | np.ndarray | None = None,
    table: RelationEmbeddingTable | None = None,
    kv: Tensor | None = None,
    mask: np.ndarray | None = None,
    scale_dim: int | None = None,
) -> Tensor:
    """Multi-head attention with the heads batched along a leading axis.

    Heads are column slices of the shared projections, run in parallel, and
    concatenated in fixed index order before the output projection.  With
    ``relations`` and ``table`` every head applies the same relation
    embeddings.  ``kv`` switches keys/values to a second sequence
    (cross-attention, relations unsupported there); ``mask`` is applied to
    the attention logits of every head.
    """
    m, d = x.shape
    if d % num_heads != 0:
        raise NumericsError(f"model dim {d} not divisible by {num_heads} heads")
    d_h = d // num_heads
    if (relations is None) != (table is None):
        raise NumericsError("relations and table must be given together")
    if relations is not None and kv is not None:
        raise NumericsError("relation embeddings apply to self-attention only")
    source = x if kv is None else kv
    s = source.shape[0]

    def split(t: Tensor, length: int) -> Tensor:
        return t.reshape(length, num_heads, d_h).transpose(1, 0, 2)

    q = split(matmul(x, params.wq), m)  # (H, M, d_h)
    k = split(matmul(source, params.wk), s)
    v = split(matmul(source, params.wv), s)
    scale = 1.0 / math.sqrt(scale_dim if scale_dim is not None else d_h)

    logits = matmul(q, k.transpose(0, 2, 1))  # (H, M, S)
    if relations is not None:
        codes = _relation_codes(relations, m)
        rel_k = gather_rows(table.keys, codes)  # (M, M, d_h)
        # einsum('hid,ijd->hij') via stacked matmul over the query axis
        rel_logits = matmul(q.transpose(1, 0, 2), rel_k.transpose(0, 2, 1))
        logits = logits + rel_logits.transpose(1, 0, 2)
    weights = softmax_rows(logits * scale, mask=mask)  # (H, M, S)

    out = matmul(weights, v)  # (H, M, d_h)
    if relations is not None:
        rel_v = gather_rows(table.values, codes)  # (M, M, d_h)
        rel_out = matmul(weights.transpose(1, 0, 2), rel_v)  # (M, H, d_h)
        out = out + rel_out.transpose(1, 0, 2)
    merged = out.transpose(1, 0, 2).reshape(m, d)
    return matmul(merged, params.wo)


def zero_relation_table(d_h: int, dtype=np.float64) -> RelationEmbeddingTable:
    """All-zero tables; lattice-aware attention then equals plain attention."""
    return RelationEmbeddingTable(
        keys=Tensor(np.zeros((N_RELATIONS, d_h), dtype=dtype)),
        values=Tensor(np.zeros((N_RELATIONS, d_h), dtype=dtype)),
    )
