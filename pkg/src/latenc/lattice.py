"""Compact word/subword lattices over one element sequence.

A lattice is a directed, connected, acyclic graph: node ``v_i`` is the gap
between elements ``i`` and ``i+1``, and an edge spanning ``(i, j)`` is a
candidate token covering elements ``i+1..j`` (half-open span in node
indices).  Merging several segmentations of the same sentence means taking
the deduplicated union of their spans.  Every ordered pair of edges stands
in exactly one of eight categorical relations; the relation matrix drives
lattice-aware self-attention.
"""

import enum
import json
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .segmentation import ElementSeq, SegmentationError, TokenSeq


class LatticeError(ValueError):
    """Malformed lattice or span."""


class RelationCode(enum.IntEnum):
    """Categorical relation of edge a = (i,j) toward edge b = (p,q).

    LAD: a ends where b starts.      RAD: a starts where b ends.
    INC: a includes b.               IND: a is included in b.
    ITS: spans properly intersect.   PRE: a ends before b starts.
    SUC: a starts after b ends.      SELF: a and b are the same edge.
    """

    LAD = 0
    RAD = 1
    INC = 2
    IND = 3
    ITS = 4
    PRE = 5
    SUC = 6
    SELF = 7

    @property
    def code(self) -> str:
        return "sel" if self is RelationCode.SELF else self.name.lower()

    @classmethod
    def from_code(cls, code: str) -> "RelationCode":
        if code == "sel":
            return cls.SELF
        try:
            return cls[code.upper()]
        except KeyError:
            raise LatticeError(f"unknown relation code {code!r}") from None


N_RELATIONS = len(RelationCode)

_CONVERSE = {
    RelationCode.LAD: RelationCode.RAD,
    RelationCode.RAD: RelationCode.LAD,
    RelationCode.INC: RelationCode.IND,
    RelationCode.IND: RelationCode.INC,
    RelationCode.ITS: RelationCode.ITS,
    RelationCode.PRE: RelationCode.SUC,
    RelationCode.SUC: RelationCode.PRE,
    RelationCode.SELF: RelationCode.SELF,
}


def converse(code: RelationCode) -> RelationCode:
    """Relation of b toward a, given the relation of a toward b."""
    return _CONVERSE[code]


def classify_relation(a: tuple[int, int], b: tuple[int, int]) -> RelationCode:
    """Classify the relation of span ``a`` toward span ``b``.

    The eight conditions are mutually exclusive and exhaustive over valid
    span pairs (verified exhaustively in the test suite).
    """
    i, j = a
    p, q = b
    if i >= j:
        raise LatticeError(f"malformed span ({i},{j})")
    if p >= q:
        raise LatticeError(f"malformed span ({p},{q})")
    if (i, j) == (p, q):
        return RelationCode.SELF
    if j == p:
        return RelationCode.LAD
    if q == i:
        return RelationCode.RAD
    if i <= p and q <= j:
        return RelationCode.INC
    if p <= i and j <= q:
        return RelationCode.IND
    if i < p < j < q or p < i < q < j:
        return RelationCode.ITS
    if j < p:
        return RelationCode.PRE
    if q < i:
        return RelationCode.SUC
    raise AssertionError(f"unclassifiable span pair ({i},{j}) vs ({p},{q})")


@dataclass(frozen=True)
class Edge:
    """One lattice edge; ``edge_id`` is its dense index in canonical order."""

    start: int
    end: int
    surface: str
    edge_id: int


@dataclass(frozen=True)
class Lattice:
    """Element sequence plus edges sorted by (start asc, end asc)."""

    element_seq: ElementSeq
    edges: tuple[Edge, ...]

    @property
    def node_count(self) -> int:
        return self.element_seq.n + 1

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def spans(self) -> list[tuple[int, int]]:
        return [(e.start, e.end) for e in self.edges]

    def surfaces(self) -> list[str]:
        return [e.surface for e in self.edges]


@dataclass(frozen=True)
class RelationMatrix:
    """M x M relation codes indexed by edge-id pairs; the diagonal is SELF."""

    codes: np.ndarray

    def __post_init__(self):
        codes = np.asarray(self.codes, dtype=np.int64)
        if codes.ndim != 2 or codes.shape[0] != codes.shape[1]:
            raise LatticeError("relation matrix must be square")
        object.__setattr__(self, "codes", codes)

    @property
    def size(self) -> int:
        return self.codes.shape[0]

    def to_csv(self) -> str:
        rows = []
        for row in self.codes:
            rows.append(",".join(RelationCode(int(c)).code for c in row))
        return "\n".join(rows) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "RelationMatrix":
        rows = []
        for line in text.splitlines():
            if line:
                rows.append([int(RelationCode.from_code(c)) for c in line.split(",")])
        return cls(np.array(rows, dtype=np.int64))


def build_lattice(element_seq: ElementSeq, segmentations: Sequence[TokenSeq]) -> Lattice:
    """Merge segmentations into one lattice: the deduplicated union of spans.

    Each input must tile ``[0, N]``.  The same span arriving with two
    different surfaces signals inconsistent element sequences upstream and
    is rejected.  The result is independent of input order.
    """
    if not segmentations:
        raise LatticeError("no segmentations given")
    by_span: dict[tuple[int, int], str] = {}
    for seq in segmentations:
        try:
            seq.validate_against(element_seq)
        except SegmentationError as exc:
            raise LatticeError(str(exc)) from exc
        for tok in seq.tokens:
            span = (tok.start, tok.end)
            known = by_span.get(span)
            if known is not None and known != tok.surface:
                raise LatticeError(
                    f"span {span} has conflicting surfaces {known!r} and {tok.surface!r}"
                )
            by_span[span] = tok.surface
    edges = tuple(
        Edge(start, end, surface, edge_id=k)
        for k, ((start, end), surface) in enumerate(sorted(by_span.items()))
    )
    return Lattice(element_seq, edges)


def relation_matrix(lattice: Lattice) -> RelationMatrix:
    """Pairwise relation codes for all edges, in canonical edge order."""
    spans = lattice.spans()
    m = len(spans)
    codes = np.empty((m, m), dtype=np.int64)
    for a in range(m):
        for b in range(m):
            codes[a, b] = int(classify_relation(spans[a], spans[b]))
    return RelationMatrix(codes)


MAX_PATH_ELEMENTS = 32


def enumerate_paths(lattice: Lattice, max_elements: int = MAX_PATH_ELEMENTS) -> list[tuple[int, ...]]:
    """All complete v_0 -> v_N paths as edge-id sequences.

    Exhaustive enumeration; intended for tests and desk-scale checks, so a
    size cap applies.  Paths come out in lexicographic edge-id order.
    """
    n = lattice.element_seq.n
    if n > max_elements:
        raise LatticeError(
            f"{n} elements exceeds enumeration cap {max_elements}; sample paths instead"
        )
    outgoing: dict[int, list[Edge]] = {}
    for edge in lattice.edges:
        outgoing.setdefault(edge.start, []).append(edge)
    paths: list[tuple[int, ...]] = []
    stack: list[int] = []

    def walk(node: int) -> None:
        if node == n:
            paths.append(tuple(stack))
            return
        for edge in outgoing.get(node, ()):
            stack.append(edge.edge_id)
            walk(edge.end)
            stack.pop()

    walk(0)
    return paths


def _reachable_from_start(lattice: Lattice) -> set[int]:
    reach = {0}
    for edge in lattice.edges:  # canonical order = topological by start
        if edge.start in reach:
            reach.add(edge.end)
    return reach


def _coreachable_from_end(lattice: Lattice) -> set[int]:
    coreach = {lattice.element_seq.n}
    for edge in reversed(lattice.edges):
        if edge.end in coreach:
            coreach.add(edge.start)
    return coreach


def validate(lattice: Lattice) -> list[str]:
    """All invariant violations, as human-readable strings; empty when valid."""
    violations: list[str] = []
    n = lattice.element_seq.n
    seen_spans: set[tuple[int, int]] = set()
    ordered = True
    prev = (-1, -1)
    for k, edge in enumerate(lattice.edges):
        span = (edge.start, edge.end)
        if not (0 <= edge.start < edge.end <= n):
            violations.append(f"edge {k}: span {span} outside [0,{n}] or empty")
            continue
        if span in seen_spans:
            violations.append(f"edge {k}: duplicate span {span}")
        seen_spans.add(span)
        covered = "".join(lattice.element_seq.elements[edge.start:edge.end])
        if edge.surface != covered:
            violations.append(
                f"edge {k}: surface {edge.surface!r} != elements {covered!r}"
            )
        if edge.edge_id != k:
            violations.append(f"edge {k}: edge_id {edge.edge_id} is not dense")
        if span < prev:
            ordered = False
        prev = span
    if not ordered:
        violations.append("edges not in canonical (start, end) order")
    if violations:
        return violations

    reach = _reachable_from_start(lattice)
    coreach = _coreachable_from_end(lattice)
    for edge in lattice.edges:
        if edge.start not in reach:
            violations.append(
                f"edge {edge.edge_id} ({edge.start},{edge.end}): "
                f"node v_{edge.start} unreachable from v_0"
            )
        if edge.end not in coreach:
            violations.append(
                f"edge {edge.edge_id} ({edge.start},{edge.end}): "
                f"no path from v_{edge.end} to v_{n}"
            )
    return violations


def to_json(lattice: Lattice, positions: Sequence[int] | None = None) -> str:
    """Serialize one lattice as a single JSON line (deterministic field order)."""
    obj: dict = {
        "elements": lattice.element_seq.text,
        "edges": [
            {"start": e.start, "end": e.end, "surface": e.surface}
            for e in lattice.edges
        ],
    }
    if positions is not None:
        if len(positions) != lattice.num_edges:
            raise LatticeError("positions length must equal edge count")
        obj["positions"] = [int(p) for p in positions]
    return json.dumps(obj, ensure_ascii=False)


def from_json(line: str) -> Lattice:
    """Parse a lattice JSON line; word boundaries default to {0, N}."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LatticeError(f"invalid lattice JSON: {exc}") from exc
    elements = obj.get("elements")
    if not isinstance(elements, str) or not elements:
        raise LatticeError("lattice JSON needs a nonempty 'elements' string")
    element_seq = ElementSeq(tuple(elements), frozenset({0, len(elements)}))
    edges = []
    for k, e in enumerate(obj.get("edges", [])):
        edges.append(Edge(int(e["start"]), int(e["end"]), str(e["surface"]), edge_id=k))
    lattice = Lattice(element_seq, tuple(edges))
    problems = validate(lattice)
    if problems:
        raise LatticeError("; ".join(problems))
    return lattice


def chain_lattice(element_seq: ElementSeq, segmentation: TokenSeq) -> Lattice:
    """Lattice of a single segmentation (always a chain)."""
    return build_lattice(element_seq, [segmentation])
