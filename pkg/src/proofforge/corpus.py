"""Problem corpora: typed records, line-delimited persistence, leakage filtering.

A corpus is a JSONL file of problem records.  Each record aligns an informal
statement/proof with its formal counterparts and (once annotated) a subgoal
proof.  The record files produced here are the interchange format for every
other module in the pipeline.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Optional


class CorpusError(Exception):
    """Base error for corpus parsing and validation failures."""


class RecordFormatError(CorpusError):
    """A record line is malformed; carries the 1-based line number."""

    def __init__(self, message: str, line_number: int | None = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class UnbalancedCommentError(CorpusError):
    """Comment delimiters ``(*``/``*)`` do not balance."""


class Origin(str, Enum):
    INFORMAL_CORPUS = "informal_corpus"
    FORMAL_CORPUS = "formal_corpus"
    BENCHMARK = "benchmark"


class DatasetKind(str, Enum):
    INFORMAL = "informal"
    FORMAL = "formal"
    BENCHMARK = "benchmark"


_KIND_FOR_ORIGIN = {
    Origin.INFORMAL_CORPUS: DatasetKind.INFORMAL,
    Origin.FORMAL_CORPUS: DatasetKind.FORMAL,
    Origin.BENCHMARK: DatasetKind.BENCHMARK,
}

# Serialized key order is fixed so that read -> write round-trips are
# byte-stable.
_FIELD_ORDER = (
    "id",
    "informal_statement",
    "informal_proof",
    "formal_statement",
    "formal_proof",
    "formal_proof_stripped",
    "subgoal_proof",
    "origin",
)


@dataclass(frozen=True)
class ProblemRecord:
    """One aligned problem.

    Optional fields are ``None`` when the corresponding annotation does not
    exist yet.  ``formal_proof_stripped`` is the comment-free rendering of
    ``formal_proof``; writers populate it via :func:`with_stripped_proof`,
    readers tolerate its absence (it is recomputed during curation).
    """

    id: str
    origin: Origin
    informal_statement: Optional[str] = None
    informal_proof: Optional[str] = None
    formal_statement: Optional[str] = None
    formal_proof: Optional[str] = None
    formal_proof_stripped: Optional[str] = None
    subgoal_proof: Optional[str] = None

    def get(self, field_name: str) -> Optional[str]:
        if field_name not in _FIELD_ORDER:
            raise KeyError(f"unknown record field: {field_name}")
        value = getattr(self, field_name)
        return None if value is None else str(value)

    def to_json_line(self) -> str:
        payload = {}
        for name in _FIELD_ORDER:
            value = getattr(self, name)
            if value is None:
                continue
            payload[name] = value.value if isinstance(value, Origin) else value
        return json.dumps(payload, ensure_ascii=False)

    @classmethod
    def from_dict(cls, raw: dict, line_number: int | None = None) -> "ProblemRecord":
        if not isinstance(raw, dict):
            raise RecordFormatError("record is not an object", line_number)
        unknown = set(raw) - set(_FIELD_ORDER)
        if unknown:
            raise RecordFormatError(f"unknown keys: {sorted(unknown)}", line_number)
        if "id" not in raw or not isinstance(raw["id"], str) or not raw["id"]:
            raise RecordFormatError("missing required id", line_number)
        if "origin" not in raw:
            raise RecordFormatError("missing required origin", line_number)
        try:
            origin = Origin(raw["origin"])
        except ValueError:
            raise RecordFormatError(f"unknown origin: {raw['origin']!r}", line_number)
        kwargs = {}
        for name in _FIELD_ORDER:
            if name in ("id", "origin") or name not in raw:
                continue
            value = raw[name]
            if not isinstance(value, str):
                raise RecordFormatError(f"field {name} is not a string", line_number)
            kwargs[name] = value
        record = cls(id=raw["id"], origin=origin, **kwargs)
        _check_stripped_consistency(record, line_number)
        return record


def _check_stripped_consistency(record: ProblemRecord, line_number: int | None) -> None:
    # When both proof fields are present they must agree; absence of the
    # stripped field is tolerated on disk and filled in during curation.
    if record.formal_proof_stripped is None:
        return
    if record.formal_proof is None:
        raise RecordFormatError(
            "formal_proof_stripped present without formal_proof", line_number
        )
    try:
        expected = strip_comments(record.formal_proof)
    except UnbalancedCommentError:
        raise RecordFormatError(
            "formal_proof has unbalanced comments but carries a stripped variant",
            line_number,
        )
    if record.formal_proof_stripped != expected:
        raise RecordFormatError(
            "formal_proof_stripped does not match strip_comments(formal_proof)",
            line_number,
        )


def with_stripped_proof(record: ProblemRecord) -> ProblemRecord:
    """Return a copy with ``formal_proof_stripped`` computed.

    Raises :class:`UnbalancedCommentError` when the proof's comment
    delimiters do not balance; callers flag and exclude such records.
    """
    if record.formal_proof is None:
        return replace(record, formal_proof_stripped=None)
    return replace(record, formal_proof_stripped=strip_comments(record.formal_proof))


@dataclass(frozen=True)
class Dataset:
    """An ordered collection of records of one kind."""

    records: tuple[ProblemRecord, ...]
    kind: Optional[DatasetKind] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        seen: set[str] = set()
        for record in self.records:
            if record.id in seen:
                raise CorpusError(f"duplicate record id: {record.id}")
            seen.add(record.id)
            if self.kind is not None and _KIND_FOR_ORIGIN[record.origin] != self.kind:
                raise CorpusError(
                    f"record {record.id} has origin {record.origin.value}, "
                    f"incompatible with dataset kind {self.kind.value}"
                )

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[ProblemRecord]:
        return iter(self.records)

    @classmethod
    def from_records(cls, records: Iterable[ProblemRecord]) -> "Dataset":
        records = tuple(records)
        kinds = {_KIND_FOR_ORIGIN[r.origin] for r in records}
        kind = kinds.pop() if len(kinds) == 1 else None
        return cls(records=records, kind=kind)


def read_records(path: str | Path) -> Dataset:
    """Read a JSONL record file, preserving order.

    Raises :class:`RecordFormatError` with the offending line number for
    malformed lines and :class:`CorpusError` for duplicate ids.
    """
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"record file not found: {path}")
    records = []
    with path.open("r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordFormatError(f"invalid JSON ({exc.msg})", line_number)
            records.append(ProblemRecord.from_dict(raw, line_number))
    return Dataset.from_records(records)


def write_records(dataset: Dataset, path: str | Path) -> None:
    """Write one record per line; absent optional fields are omitted."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for record in dataset.records:
            handle.write(record.to_json_line())
            handle.write("\n")


def strip_comments(proof_text: str) -> str:
    """Remove ``(* ... *)`` comment blocks, including nested ones.

    Whitespace runs created by a removal collapse to a single space (dropped
    entirely at the ends of the text); text outside comments is otherwise
    preserved verbatim.
    """
    out: list[str] = []
    i = 0
    n = len(proof_text)
    depth = 0
    while i < n:
        pair = proof_text[i : i + 2]
        if pair == "(*":
            depth += 1
            if depth == 1:
                while out and out[-1].isspace():
                    out.pop()
            i += 2
        elif pair == "*)":
            if depth == 0:
                raise UnbalancedCommentError(
                    f"unmatched '*)' at offset {i}"
                )
            depth -= 1
            i += 2
            if depth == 0:
                while i < n and proof_text[i].isspace():
                    i += 1
                if out and i < n:
                    out.append(" ")
        else:
            if depth == 0:
                out.append(proof_text[i])
            i += 1
    if depth != 0:
        raise UnbalancedCommentError("unclosed '(*' comment")
    return "".join(out)


# Lowercased alphanumeric runs and symbol runs form tokens; splitting happens
# on whitespace and at alphanumeric/non-alphanumeric boundaries.
_TOKEN_RE = re.compile(r"[0-9a-z]+|[^0-9a-z\s]+")


def normalize_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


Trigram = tuple[str, str, str]


@dataclass(frozen=True)
class NgramIndex:
    """Immutable set of normalized token trigrams over a reference corpus."""

    grams: frozenset[Trigram]
    source_count: int
    n: int = 3


def _trigrams(text: str) -> set[Trigram]:
    tokens = normalize_tokens(text)
    return {tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)}


def build_ngram_index(reference: Dataset, field: str = "informal_statement") -> NgramIndex:
    """Index trigrams of ``field`` across all reference records.

    Records shorter than three tokens contribute nothing; a missing field is
    an error since the reference (benchmark) is expected to be complete.
    """
    grams: set[Trigram] = set()
    for record in reference:
        text = record.get(field)
        if text is None:
            raise CorpusError(f"record {record.id} lacks field {field}")
        grams |= _trigrams(text)
    return NgramIndex(grams=frozenset(grams), source_count=len(reference))


def ngram_overlap(candidate: str, index: NgramIndex) -> float:
    """Fraction of the candidate's distinct trigrams present in the index."""
    cand = _trigrams(candidate)
    if not cand:
        return 0.0
    return len(cand & index.grams) / len(cand)


def filter_leakage(
    dataset: Dataset,
    index: NgramIndex,
    threshold: float = 0.10,
    field: str = "informal_statement",
) -> Dataset:
    """Drop records whose ``field`` overlaps the index above ``threshold``.

    Records lacking the field (or with fewer than three tokens) have overlap
    0 and are always retained.  Order is preserved.
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    kept = []
    for record in dataset:
        text = record.get(field)
        overlap = 0.0 if text is None else ngram_overlap(text, index)
        if overlap <= threshold:
            kept.append(record)
    return Dataset(records=tuple(kept), kind=dataset.kind)


def record_field_names() -> tuple[str, ...]:
    return _FIELD_ORDER


__all__ = [
    "CorpusError",
    "Dataset",
    "DatasetKind",
    "NgramIndex",
    "Origin",
    "ProblemRecord",
    "RecordFormatError",
    "UnbalancedCommentError",
    "build_ngram_index",
    "filter_leakage",
    "ngram_overlap",
    "normalize_tokens",
    "read_records",
    "strip_comments",
    "with_stripped_proof",
    "write_records",
]
