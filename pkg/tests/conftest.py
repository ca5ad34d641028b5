from __future__ import annotations

import pytest

from proofforge.corpus import Dataset, Origin, ProblemRecord


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {name}: {outcome}")


# Toy proofs carry four or more steps so the short-proof drop policy keeps
# them and small-corpus runs exercise every dataset variant.
_INFORMAL_PROOF = (
    'proof -\n  have "{i} + {i} = 2 * {i}" by simp\n'
    '  then have "2 * {i} = {s}" by simp\n  then show ?thesis by simp\nqed'
)
_FORMAL_PROOF = (
    'proof -\n  have "x * {i} = {i} * x" by (simp add: mult.commute)\n'
    "  then show ?thesis by simp\nqed"
)


def make_informal_record(idx: int = 1, **overrides) -> ProblemRecord:
    proof = _INFORMAL_PROOF.format(i=idx, s=2 * idx)
    fields = dict(
        id=f"informal-{idx}",
        origin=Origin.INFORMAL_CORPUS,
        informal_statement=f"Show that {idx} + {idx} = {2 * idx}.",
        informal_proof=f"Direct computation gives {2 * idx}.",
        formal_statement=f'lemma "({idx}::nat) + {idx} = {2 * idx}"',
        formal_proof=proof,
        formal_proof_stripped=proof,
        subgoal_proof=f"Subgoal 1: Evaluate {idx} + {idx}.\nSubgoal 2: Conclude.",
    )
    fields.update(overrides)
    return ProblemRecord(**fields)


def make_formal_record(idx: int = 1, **overrides) -> ProblemRecord:
    proof = _FORMAL_PROOF.format(i=idx)
    fields = dict(
        id=f"formal-{idx}",
        origin=Origin.FORMAL_CORPUS,
        formal_statement=f'lemma "(x::nat) * {idx} = {idx} * x"',
        formal_proof=proof,
        formal_proof_stripped=proof,
        informal_statement=f"Multiplication by {idx} commutes.",
        informal_proof="Commutativity of multiplication.",
    )
    fields.update(overrides)
    return ProblemRecord(**fields)


def make_benchmark_record(idx: int = 1, **overrides) -> ProblemRecord:
    fields = dict(
        id=f"bench-{idx}",
        origin=Origin.BENCHMARK,
        informal_statement=f"Prove that {idx} divides {idx * 3}.",
        informal_proof=f"{idx * 3} = 3 * {idx}.",
        formal_statement=f'theorem "({idx}::nat) dvd {3 * idx}"',
    )
    fields.update(overrides)
    return ProblemRecord(**fields)


@pytest.fixture
def informal_record() -> ProblemRecord:
    return make_informal_record()


@pytest.fixture
def formal_record() -> ProblemRecord:
    return make_formal_record()


@pytest.fixture
def toy_corpora() -> tuple[Dataset, Dataset]:
    informal = Dataset.from_records([make_informal_record(1), make_informal_record(2)])
    formal = Dataset.from_records([make_formal_record(1), make_formal_record(2)])
    return informal, formal
