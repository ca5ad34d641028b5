from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proofforge.corpus import (
    CorpusError,
    Dataset,
    NgramIndex,
    Origin,
    ProblemRecord,
    RecordFormatError,
    UnbalancedCommentError,
    build_ngram_index,
    filter_leakage,
    ngram_overlap,
    normalize_tokens,
    read_records,
    strip_comments,
    with_stripped_proof,
    write_records,
)

from conftest import make_benchmark_record, make_informal_record


# ---------------------------------------------------------------------------
# read_records / write_records
# ---------------------------------------------------------------------------


def test_read_empty_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("", encoding="utf-8")
    assert len(read_records(path)) == 0


def test_read_two_records_in_order(tmp_path):
    path = tmp_path / "two.jsonl"
    lines = [
        {"id": "a", "origin": "informal_corpus", "informal_statement": "s1"},
        {"id": "b", "origin": "informal_corpus", "informal_statement": "s2"},
    ]
    path.write_text("\n".join(json.dumps(l) for l in lines) + "\n", encoding="utf-8")
    ds = read_records(path)
    assert [r.id for r in ds] == ["a", "b"]


def test_missing_id_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text(
        "\n".join(
            [
                json.dumps({"id": "a", "origin": "informal_corpus"}),
                json.dumps({"id": "b", "origin": "informal_corpus"}),
                json.dumps({"origin": "informal_corpus"}),
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    with pytest.raises(RecordFormatError, match="line 3"):
        read_records(path)


def test_malformed_json_reports_line_number(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"id": "a", "origin": "informal_corpus"}\n{oops\n', encoding="utf-8")
    with pytest.raises(RecordFormatError, match="line 2"):
        read_records(path)


def test_duplicate_id_rejected(tmp_path):
    path = tmp_path / "dup.jsonl"
    line = json.dumps({"id": "a", "origin": "benchmark"})
    path.write_text(line + "\n" + line + "\n", encoding="utf-8")
    with pytest.raises(CorpusError, match="duplicate"):
        read_records(path)


def test_missing_file():
    with pytest.raises(CorpusError, match="not found"):
        read_records("/nonexistent/records.jsonl")


def test_write_empty_dataset(tmp_path):
    path = tmp_path / "out.jsonl"
    write_records(Dataset.from_records([]), path)
    assert path.read_text(encoding="utf-8") == ""


def test_absent_optionals_omitted(tmp_path):
    record = ProblemRecord(id="x", origin=Origin.BENCHMARK, informal_statement="s")
    path = tmp_path / "out.jsonl"
    write_records(Dataset.from_records([record]), path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    assert raw == {"id": "x", "informal_statement": "s", "origin": "benchmark"}


def test_round_trip_field_for_field(tmp_path):
    records = [make_informal_record(1), make_informal_record(2, informal_proof=None)]
    ds = Dataset.from_records(records)
    path = tmp_path / "rt.jsonl"
    write_records(ds, path)
    assert read_records(path).records == ds.records


def test_round_trip_byte_stable(tmp_path):
    ds = Dataset.from_records([make_informal_record(i) for i in range(1, 4)])
    first = tmp_path / "a.jsonl"
    second = tmp_path / "b.jsonl"
    write_records(ds, first)
    write_records(read_records(first), second)
    assert first.read_bytes() == second.read_bytes()


def test_stripped_mismatch_rejected(tmp_path):
    path = tmp_path / "bad.jsonl"
    raw = {
        "id": "x",
        "origin": "formal_corpus",
        "formal_statement": "S",
        "formal_proof": "by simp (* c *)",
        "formal_proof_stripped": "wrong",
    }
    path.write_text(json.dumps(raw) + "\n", encoding="utf-8")
    with pytest.raises(RecordFormatError, match="does not match"):
        read_records(path)


_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\n"),
    max_size=30,
).filter(lambda s: "(*" not in s and "*)" not in s)


@st.composite
def _records(draw):
    idx = draw(st.integers(min_value=0, max_value=10**6))
    optional = lambda: draw(st.one_of(st.none(), _text))
    proof = optional()
    return ProblemRecord(
        id=f"r{idx}",
        origin=draw(st.sampled_from(list(Origin))),
        informal_statement=optional(),
        informal_proof=optional(),
        formal_statement=optional(),
        formal_proof=proof,
        formal_proof_stripped=strip_comments(proof) if proof is not None else None,
        subgoal_proof=optional(),
    )


@given(st.lists(_records(), max_size=8, unique_by=lambda r: r.id))
@settings(max_examples=60, deadline=None)
def test_round_trip_property(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("rt") / "data.jsonl"
    ds = Dataset(records=tuple(records))
    write_records(ds, path)
    assert read_records(path).records == ds.records


# ---------------------------------------------------------------------------
# strip_comments
# ---------------------------------------------------------------------------


def test_strip_no_comments():
    assert strip_comments("by auto") == "by auto"


def test_strip_trailing_comment():
    assert strip_comments("by auto (* uses X *)") == "by auto"


def test_strip_nested_comment():
    assert strip_comments("(* a (* b *) c *) qed") == "qed"


def test_strip_interior_comment_single_space():
    assert strip_comments("have A (* note *) by simp") == "have A by simp"


def test_strip_preserves_other_whitespace():
    assert strip_comments("proof -\n  show ?thesis\nqed") == "proof -\n  show ?thesis\nqed"


def test_strip_unbalanced_open():
    with pytest.raises(UnbalancedCommentError):
        strip_comments("by auto (* open")


def test_strip_unbalanced_close():
    with pytest.raises(UnbalancedCommentError):
        strip_comments("by auto *) stray")


def test_with_stripped_proof_helper():
    record = make_informal_record(1, formal_proof="by simp (* x *)", formal_proof_stripped=None)
    assert with_stripped_proof(record).formal_proof_stripped == "by simp"


def _random_commented(rng: random.Random) -> str:
    """Random text with properly nested comments."""
    pieces = []

    def emit(depth: int, budget: int) -> int:
        while budget > 0:
            choice = rng.random()
            if choice < 0.4:
                pieces.append(rng.choice(["by", "auto", "simp", "qed", " ", "\n", "x1", "+"]))
                budget -= 1
            elif choice < 0.7 and depth < 4:
                pieces.append("(*")
                budget = emit(depth + 1, budget - 1)
                pieces.append("*)")
            else:
                return budget
        return budget

    emit(0, rng.randint(1, 25))
    return " ".join(pieces)


@pytest.mark.parametrize("seed", range(5))
def test_strip_idempotent_and_subsequence(seed):
    rng = random.Random(seed)
    for _ in range(200):
        text = _random_commented(rng)
        stripped = strip_comments(text)
        assert strip_comments(stripped) == stripped
        squashed = "".join(stripped.split())
        source = "".join(text.split())
        it = iter(source)
        assert all(ch in it for ch in squashed), (text, stripped)


# ---------------------------------------------------------------------------
# n-gram index and leakage filtering
# ---------------------------------------------------------------------------


def _reference(*texts):
    records = [
        make_benchmark_record(i, informal_statement=t) for i, t in enumerate(texts, 1)
    ]
    return Dataset.from_records(records)


def test_build_index_hand_enumeration():
    index = build_ngram_index(_reference("a b c d"))
    assert index.grams == frozenset({("a", "b", "c"), ("b", "c", "d")})
    assert index.source_count == 1


def test_build_index_empty_reference():
    index = build_ngram_index(Dataset.from_records([]))
    assert index.grams == frozenset()


def test_two_token_record_contributes_nothing():
    index = build_ngram_index(_reference("a b"))
    assert index.grams == frozenset()


def test_overlap_identical_record():
    index = build_ngram_index(_reference("a b c d"))
    assert ngram_overlap("a b c d", index) == 1.0


def test_overlap_one_third():
    index = build_ngram_index(_reference("b c d"))
    assert ngram_overlap("a b c d e", index) == pytest.approx(1 / 3)


def test_overlap_no_trigrams():
    index = build_ngram_index(_reference("a b c d"))
    assert ngram_overlap("x y", index) == 0.0


def test_overlap_normalization_boundaries():
    index = build_ngram_index(_reference("show that 1+1=2."))
    assert ngram_overlap("SHOW   that 1 + 1 = 2 .", index) == 1.0


def test_filter_removes_identical():
    index = build_ngram_index(_reference("a b c d"))
    ds = Dataset.from_records([make_informal_record(1, informal_statement="a b c d")])
    assert len(filter_leakage(ds, index, 0.10)) == 0


def test_filter_removes_one_third_overlap():
    index = build_ngram_index(_reference("b c d"))
    ds = Dataset.from_records(
        [make_informal_record(1, informal_statement="a b c d e")]
    )
    assert len(filter_leakage(ds, index, 0.10)) == 0


def test_filter_retains_zero_overlap():
    index = build_ngram_index(_reference("a b c d"))
    ds = Dataset.from_records(
        [make_informal_record(1, informal_statement="p q r s t")]
    )
    assert len(filter_leakage(ds, index, 0.10)) == 1


def test_filter_threshold_boundary_keeps_at_threshold():
    index = build_ngram_index(_reference("b c d"))
    ds = Dataset.from_records(
        [make_informal_record(1, informal_statement="a b c d e")]
    )
    # overlap exactly 1/3: retained at threshold 1/3, removed just below
    assert len(filter_leakage(ds, index, 1 / 3)) == 1
    assert len(filter_leakage(ds, index, 1 / 3 - 1e-9)) == 0


@given(
    st.lists(st.text(alphabet="abcdxyz ", min_size=1, max_size=20), min_size=1, max_size=5),
    st.text(alphabet="abcdxyz ", max_size=30),
)
@settings(max_examples=100, deadline=None)
def test_overlap_range_and_self_overlap(reference_texts, candidate):
    index = build_ngram_index(_reference(*reference_texts))
    assert 0.0 <= ngram_overlap(candidate, index) <= 1.0
    text = reference_texts[0]
    if len(normalize_tokens(text)) >= 3:
        assert ngram_overlap(text, index) == 1.0


def test_filter_monotone_under_index_growth():
    rng = random.Random(7)
    vocab = [f"w{i}" for i in range(12)]
    for _ in range(100):
        texts = [" ".join(rng.choices(vocab, k=rng.randint(3, 10))) for _ in range(8)]
        ds = Dataset.from_records(
            [make_informal_record(i, informal_statement=t) for i, t in enumerate(texts, 1)]
        )
        ref_small = _reference(" ".join(rng.choices(vocab, k=6)))
        ref_big_texts = [ref_small.records[0].informal_statement] + [
            " ".join(rng.choices(vocab, k=6))
        ]
        small = build_ngram_index(ref_small)
        big = NgramIndex(
            grams=small.grams | build_ngram_index(_reference(*ref_big_texts)).grams,
            source_count=2,
        )
        kept_small = {r.id for r in filter_leakage(ds, small, 0.10)}
        kept_big = {r.id for r in filter_leakage(ds, big, 0.10)}
        assert kept_big <= kept_small
