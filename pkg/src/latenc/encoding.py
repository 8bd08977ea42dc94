"""Sinusoidal positional encodings and per-edge position assignment.

Edges take the encoding of their first covered element (1-based), which
keeps positions strictly increasing along every complete lattice path.
The flat mode instead ranks edges by their canonical order, and ``none``
adds nothing; both exist for ablations.
"""

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .lattice import Lattice

POSITIONAL_MODES = ("lpe", "flat_pe", "none")


@dataclass(frozen=True)
class PositionAssignment:
    """One integer position per edge, indexed by edge_id."""

    positions: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.positions)


def sinusoid(position: int, d: int) -> np.ndarray:
    """Sinusoidal encoding of one position at model dimension ``d``.

    Component 2i is sin(position / 10000^(2i/d)) and component 2i+1 is the
    matching cosine.  ``d`` must be even and ``position`` nonnegative.
    """
    if d % 2 != 0 or d <= 0:
        raise ValueError(f"model dimension must be positive and even, got {d}")
    if position < 0:
        raise ValueError(f"position must be >= 0, got {position}")
    return sinusoid_table([position], d)[0]


def sinusoid_table(positions: Sequence[int], d: int) -> np.ndarray:
    """Stacked sinusoidal encodings, one row per position (float64)."""
    if d % 2 != 0 or d <= 0:
        raise ValueError(f"model dimension must be positive and even, got {d}")
    pos = np.asarray(positions, dtype=np.float64)[:, None]
    if np.any(pos < 0):
        raise ValueError("positions must be >= 0")
    inv_freq = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    angles = pos * inv_freq[None, :]
    table = np.empty((len(positions), d), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)
    table[:, 1::2] = np.cos(angles)
    return table


def lattice_positions(lattice: Lattice) -> PositionAssignment:
    """Each edge's position: its first covered element, 1-based.

    Edge (i, j) covers elements i+1..j, so its position is i+1.
    """
    return PositionAssignment(tuple(e.start + 1 for e in lattice.edges))


def flat_positions(lattice: Lattice) -> PositionAssignment:
    """Ordinary sequence positions 1..M over the canonical edge order."""
    return PositionAssignment(tuple(range(1, lattice.num_edges + 1)))


def positions_for_mode(lattice: Lattice, mode: str) -> PositionAssignment | None:
    if mode == "lpe":
        return lattice_positions(lattice)
    if mode == "flat_pe":
        return flat_positions(lattice)
    if mode == "none":
        return None
    raise ValueError(f"unknown positional mode {mode!r}")


def add_positions(
    embeddings: np.ndarray, assignment: PositionAssignment, mode: str
) -> np.ndarray:
    """Add positional encodings to an M x d embedding matrix.

    ``lpe`` uses the per-edge assignment; ``flat_pe`` ignores it and uses
    ranks 1..M in row order; ``none`` returns the input unchanged.
    """
    embeddings = np.asarray(embeddings)
    if mode == "none":
        return embeddings
    m, d = embeddings.shape
    if mode == "lpe":
        if len(assignment) != m:
            raise ValueError(
                f"assignment has {len(assignment)} positions for {m} rows"
            )
        table = sinusoid_table(assignment.positions, d)
    elif mode == "flat_pe":
        table = sinusoid_table(range(1, m + 1), d)
    else:
        raise ValueError(f"unknown positional mode {mode!r}")
    return embeddings + table.astype(embeddings.dtype)


def position_table(lattice: Lattice, mode: str, d: int) -> np.ndarray:
    """M x d table of positional encodings for a lattice (zeros for ``none``)."""
    assignment = positions_for_mode(lattice, mode)
    if assignment is None:
        return np.zeros((lattice.num_edges, d), dtype=np.float64)
    return sinusoid_table(assignment.positions, d)
