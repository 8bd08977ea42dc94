"""Multiple segmentations of a shared element sequence.

An element sequence is the whitespace-stripped character sequence of a raw
sentence, together with the set of positions where whitespace occurred.
Segmenters (pre-segmented files, or the built-in byte pair encoder at
several merge counts) each produce a token sequence over those elements;
several token sequences of the same sentence are later merged into a
lattice.
"""

import warnings
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_MAX_ELEMENTS = 512


class SegmentationError(ValueError):
    """Malformed or mutually inconsistent segmentation inputs."""


@dataclass(frozen=True)
class ElementSeq:
    """Atomic units of one sentence plus its word-boundary positions.

    ``elements`` holds single non-whitespace characters.  ``word_boundaries``
    holds element counts at which whitespace occurred in the raw sentence;
    0 and ``len(elements)`` are always members.
    """

    elements: tuple[str, ...]
    word_boundaries: frozenset[int]

    def __post_init__(self):
        n = len(self.elements)
        if n < 1:
            raise SegmentationError("element sequence must be nonempty")
        for ch in self.elements:
            if len(ch) != 1 or ch.isspace():
                raise SegmentationError(f"invalid element {ch!r}")
        if not self.word_boundaries <= set(range(n + 1)):
            raise SegmentationError("word boundary outside [0, N]")
        if 0 not in self.word_boundaries or n not in self.word_boundaries:
            raise SegmentationError("word boundaries must include 0 and N")

    @classmethod
    def from_sentence(cls, sentence: str, max_elements: int = DEFAULT_MAX_ELEMENTS) -> "ElementSeq":
        """Strip whitespace from a raw sentence, recording where it occurred."""
        words = sentence.split()
        if not words:
            raise SegmentationError("empty sentence")
        elements: list[str] = []
        boundaries = {0}
        for word in words:
            elements.extend(word)
            boundaries.add(len(elements))
        if len(elements) > max_elements:
            raise SegmentationError(
                f"sentence has {len(elements)} elements, cap is {max_elements}"
            )
        return cls(tuple(elements), frozenset(boundaries))

    @property
    def n(self) -> int:
        return len(self.elements)

    @property
    def text(self) -> str:
        return "".join(self.elements)

    def words(self) -> list[tuple[int, int]]:
        """Word extents as (start, end) element-index pairs."""
        cuts = sorted(self.word_boundaries)
        return list(zip(cuts, cuts[1:]))


@dataclass(frozen=True)
class Token:
    """One token: a half-open element span [start, end) and its surface."""

    start: int
    end: int
    surface: str
    is_word_end: bool = False


@dataclass(frozen=True)
class TokenSeq:
    """One segmenter's tokens, tiling an element sequence left to right."""

    tokens: tuple[Token, ...]
    source_id: str = ""

    def validate_against(self, element_seq: ElementSeq) -> None:
        """Check spans tile [0, N] and surfaces match the covered elements."""
        pos = 0
        for tok in self.tokens:
            if tok.start != pos or tok.end <= tok.start:
                raise SegmentationError(
                    f"{self.source_id or 'segmentation'}: span ({tok.start},{tok.end}) "
                    f"does not continue at element {pos}"
                )
            covered = "".join(element_seq.elements[tok.start:tok.end])
            if tok.surface != covered:
                raise SegmentationError(
                    f"{self.source_id or 'segmentation'}: surface {tok.surface!r} != "
                    f"elements {covered!r} for span ({tok.start},{tok.end})"
                )
            pos = tok.end
        if pos != element_seq.n:
            raise SegmentationError(
                f"{self.source_id or 'segmentation'}: tokens cover [0,{pos}) "
                f"but sentence has {element_seq.n} elements"
            )

    def surfaces(self) -> list[str]:
        return [tok.surface for tok in self.tokens]

    def spans(self) -> list[tuple[int, int]]:
        return [(tok.start, tok.end) for tok in self.tokens]


@dataclass(frozen=True)
class MergeTable:
    """Ordered byte-pair merges; earlier entries have higher priority."""

    merges: tuple[tuple[str, str], ...]
    merge_count: int = field(default=-1)

    def __post_init__(self):
        if len(set(self.merges)) != len(self.merges):
            raise SegmentationError("duplicate merge pair")
        if self.merge_count < 0:
            object.__setattr__(self, "merge_count", len(self.merges))

    def save(self, path: str | Path) -> None:
        lines = [f"{a}\t{b}\n" for a, b in self.merges]
        Path(path).write_text("".join(lines), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MergeTable":
        merges = []
        for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise SegmentationError(f"{path}:{lineno + 1}: expected LEFT<TAB>RIGHT")
            merges.append((parts[0], parts[1]))
        return cls(tuple(merges))


def learn_bpe(corpus: Mapping[str, int], num_merges: int) -> MergeTable:
    """Learn merge operations by iterated most-frequent-pair counting.

    ``corpus`` maps word strings to frequencies.  Each step merges the
    adjacent symbol pair with the highest total frequency; ties are broken
    lexicographically by (left, right) so the result is deterministic.
    Stops early once no adjacent pair remains.
    """
    if not corpus:
        raise SegmentationError("empty corpus")
    if num_merges < 0:
        raise SegmentationError("num_merges must be >= 0")
    words: list[tuple[list[str], int]] = [
        (list(word), freq) for word, freq in corpus.items() if word
    ]
    if not words:
        raise SegmentationError("empty corpus")

    merges: list[tuple[str, str]] = []
    for _ in range(num_merges):
        counts: Counter[tuple[str, str]] = Counter()
        for symbols, freq in words:
            for pair in zip(symbols, symbols[1:]):
                counts[pair] += freq
        if not counts:
            break
        best_count = max(counts.values())
        best = min(pair for pair, c in counts.items() if c == best_count)
        merges.append(best)
        for k, (symbols, freq) in enumerate(words):
            words[k] = (_merge_symbols(symbols, best), freq)
    return MergeTable(tuple(merges), merge_count=num_merges)


def _merge_symbols(symbols: list[str], pair: tuple[str, str]) -> list[str]:
    """Replace adjacent occurrences of ``pair``, scanning left to right."""
    out: list[str] = []
    i = 0
    while i < len(symbols):
        if i + 1 < len(symbols) and (symbols[i], symbols[i + 1]) == pair:
            out.append(symbols[i] + symbols[i + 1])
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return out


def apply_bpe(word: str | Sequence[str], table: MergeTable) -> list[Token]:
    """Segment one word with a learned merge table.

    Repeatedly applies the highest-priority merge present in the word until
    none applies.  Returned token spans are relative to the word start and
    tile it exactly; the final token carries ``is_word_end=True``.
    """
    chars = list(word)
    if not chars:
        raise SegmentationError("empty word")
    rank = {pair: k for k, pair in enumerate(table.merges)}
    symbols = [(i, i + 1, ch) for i, ch in enumerate(chars)]
    while len(symbols) > 1:
        best_rank, best_at = None, None
        for i in range(len(symbols) - 1):
            r = rank.get((symbols[i][2], symbols[i + 1][2]))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank, best_at = r, i
        if best_rank is None:
            break
        pair = (symbols[best_at][2], symbols[best_at + 1][2])
        merged: list[tuple[int, int, str]] = []
        i = 0
        while i < len(symbols):
            if (
                i + 1 < len(symbols)
                and (symbols[i][2], symbols[i + 1][2]) == pair
            ):
                merged.append(
                    (symbols[i][0], symbols[i + 1][1], symbols[i][2] + symbols[i + 1][2])
                )
                i += 2
            else:
                merged.append(symbols[i])
                i += 1
        symbols = merged
    return [
        Token(start, end, surface, is_word_end=(end == len(chars)))
        for start, end, surface in symbols
    ]


def segment_with_bpe(
    element_seq: ElementSeq, table: MergeTable, source_id: str = "bpe"
) -> TokenSeq:
    """Apply BPE word by word, producing spans over the full element sequence.

    Merges never cross a word boundary because each word is segmented in
    isolation.
    """
    tokens: list[Token] = []
    for wstart, wend in element_seq.words():
        word = "".join(element_seq.elements[wstart:wend])
        for tok in apply_bpe(word, table):
            tokens.append(
                Token(wstart + tok.start, wstart + tok.end, tok.surface, tok.is_word_end)
            )
    seq = TokenSeq(tuple(tokens), source_id=source_id)
    seq.validate_against(element_seq)
    return seq


def _tokens_of_line(line: str) -> list[str]:
    return line.split()


def load_segmentations(
    paths: Sequence[str | Path],
    line_index: int = 0,
    max_elements: int = DEFAULT_MAX_ELEMENTS,
) -> tuple[ElementSeq, list[TokenSeq]]:
    """Load line ``line_index`` of several parallel pre-segmented files.

    All files must reduce to the same element sequence once whitespace is
    removed; the first differing element position (1-based) is reported
    otherwise.  Word-boundary sets may legitimately differ between
    segmenters; they are unioned with a warning.
    """
    if not paths:
        raise SegmentationError("no segmentation files given")
    per_file: list[tuple[str, list[str]]] = []
    for path in paths:
        text = Path(path).read_text(encoding="utf-8")
        lines = text.splitlines()
        if line_index >= len(lines):
            raise SegmentationError(f"{path}: no line {line_index}")
        toks = _tokens_of_line(lines[line_index])
        if not toks:
            raise SegmentationError(f"{path}: line {line_index} is empty")
        per_file.append((str(path), toks))

    ref_name, ref_tokens = per_file[0]
    ref_elements = [ch for tok in ref_tokens for ch in tok]
    if len(ref_elements) > max_elements:
        raise SegmentationError(
            f"{ref_name}: {len(ref_elements)} elements, cap is {max_elements}"
        )
    boundary_sets: list[frozenset[int]] = []
    token_seqs: list[TokenSeq] = []
    for name, toks in per_file:
        elements = [ch for tok in toks for ch in tok]
        k = _first_mismatch(ref_elements, elements)
        if k is not None:
            raise SegmentationError(
                f"element mismatch at index {k + 1}: {ref_name} vs {name}"
            )
        tokens: list[Token] = []
        pos = 0
        boundaries = {0}
        for tok in toks:
            tokens.append(Token(pos, pos + len(tok), tok, is_word_end=True))
            pos += len(tok)
            boundaries.add(pos)
        boundary_sets.append(frozenset(boundaries))
        token_seqs.append(TokenSeq(tuple(tokens), source_id=name))

    union = frozenset().union(*boundary_sets)
    if any(bs != union for bs in boundary_sets):
        warnings.warn(
            "segmenters disagree on word boundaries; using the union",
            stacklevel=2,
        )
    element_seq = ElementSeq(tuple(ref_elements), union)
    for seq in token_seqs:
        seq.validate_against(element_seq)
    return element_seq, token_seqs


def _first_mismatch(a: list[str], b: list[str]) -> int | None:
    for k, (x, y) in enumerate(zip(a, b)):
        if x != y:
            return k
    if len(a) != len(b):
        return min(len(a), len(b))
    return None


def count_words(lines: Iterable[str]) -> Counter:
    """Whitespace-tokenized word frequencies, the corpus form learn_bpe takes."""
    counts: Counter[str] = Counter()
    for line in lines:
        counts.update(line.split())
    return counts
