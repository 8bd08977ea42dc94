"""latenc: word/subword lattices and lattice-aware Transformer encoders.

Build lattices from multiple segmentations of one sentence, classify the
categorical relations between lattice edges, and encode the edge sequence
with a pure-NumPy Transformer encoder whose positions and attention are
lattice-aware.  Everything differentiable is backed by a small
reverse-mode tensor core with a finite-difference gradient checker.
"""

from .segmentation import (
    ElementSeq,
    MergeTable,
    SegmentationError,
    Token,
    TokenSeq,
    apply_bpe,
    learn_bpe,
    load_segmentations,
    segment_with_bpe,
)
from .lattice import (
    Edge,
    Lattice,
    LatticeError,
    RelationCode,
    RelationMatrix,
    build_lattice,
    classify_relation,
    enumerate_paths,
    relation_matrix,
    validate,
)
from .encoding import (
    PositionAssignment,
    add_positions,
    flat_positions,
    lattice_positions,
    sinusoid,
    sinusoid_table,
)
from .numerics import (
    Adam,
    NumericsError,
    OptimizerConfig,
    Tensor,
    adam_step,
    cross_entropy,
    grad_check,
    grad_check_groups,
    layer_norm,
    load_checkpoint,
    save_checkpoint,
    softmax_rows,
)
from .attention import (
    AttentionParams,
    RelationEmbeddingTable,
    lattice_aware_attention,
    multi_head,
    sdp_attention,
)
from .encoder import EncoderConfig, EncoderOutput, LatticeEncoder, Vocab, param_count

__version__ = "0.1.0"
