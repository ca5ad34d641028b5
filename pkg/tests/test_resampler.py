from __future__ import annotations

import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proofforge.corpus import Origin, ProblemRecord
from proofforge.genclient import Candidate, MockGenerator
from proofforge.prompts import GeneratorRole, MissingFieldError, render
from proofforge.resampler import (
    ResampleConfig,
    ResampleError,
    RoleEndpoint,
    compute_weights,
    derive_seed,
    resample,
    sample_formal_statement,
    sample_subgoal,
)

from conftest import make_formal_record, make_informal_record


# ---------------------------------------------------------------------------
# compute_weights
# ---------------------------------------------------------------------------


def test_equal_rewards_uniform():
    weights = compute_weights([2.5, 2.5, 2.5, 2.5], beta=0.7)
    assert weights == pytest.approx([0.25] * 4, abs=1e-12)


def test_direct_arithmetic_oracle():
    rewards = [math.log(0.5), math.log(0.25), math.log(0.25)]
    assert compute_weights(rewards, beta=1.0) == pytest.approx(
        [0.5, 0.25, 0.25], abs=1e-12
    )


def test_log_sum_exp_stability():
    weights = compute_weights([0.0, -1000.0], beta=1.0)
    assert weights[0] == pytest.approx(1.0, abs=1e-9)
    assert weights[1] >= 0.0
    assert sum(weights) == pytest.approx(1.0, abs=1e-9)


def test_extreme_positive_rewards_no_overflow():
    weights = compute_weights([1e6, 1e6 - 1], beta=1.0)
    assert all(math.isfinite(w) for w in weights)
    assert sum(weights) == pytest.approx(1.0, abs=1e-9)


def test_weights_error_cases():
    with pytest.raises(ResampleError):
        compute_weights([], beta=1.0)
    with pytest.raises(ResampleError):
        compute_weights([1.0, float("nan")], beta=1.0)
    with pytest.raises(ResampleError):
        compute_weights([1.0], beta=0.0)
    with pytest.raises(ResampleError):
        compute_weights([1.0], beta=-2.0)


@given(
    st.lists(st.floats(min_value=-50, max_value=50), min_size=1, max_size=12),
    st.floats(min_value=-100, max_value=100),
    st.floats(min_value=0.05, max_value=20),
)
@settings(max_examples=150, deadline=None)
def test_shift_invariance(rewards, constant, beta):
    base = compute_weights(rewards, beta)
    shifted = compute_weights([r + constant for r in rewards], beta)
    assert all(abs(a - b) <= 1e-9 for a, b in zip(base, shifted))


def test_beta_monotonicity():
    r1, r2 = 1.0, -0.5
    ratios = []
    for beta in (0.1, 1.0, 10.0):
        w = compute_weights([r1, r2], beta)
        ratios.append(w[0] / w[1])
        assert w[0] / w[1] == pytest.approx(math.exp((r1 - r2) / beta), rel=1e-9)
    assert ratios[0] > ratios[1] > ratios[2]


# ---------------------------------------------------------------------------
# resample
# ---------------------------------------------------------------------------


def _cands(rewards, texts=None):
    texts = texts or [f"cand-{i}" for i in range(len(rewards))]
    return [
        Candidate(text=t, proposal_logprob=-1.0, reward=r)
        for t, r in zip(texts, rewards)
    ]


def test_single_candidate_always_chosen():
    outcome = resample(_cands([0.3]), ResampleConfig(m=1, seed=4))
    assert [c.text for c in outcome.chosen] == ["cand-0"]
    assert outcome.chosen[0].weight == pytest.approx(1.0)


def test_resample_deterministic():
    cands = _cands([0.1, 0.7, -0.2])
    cfg = ResampleConfig(m=2, seed=99)
    first = resample(cands, cfg)
    second = resample(cands, cfg)
    assert [c.text for c in first.chosen] == [c.text for c in second.chosen]
    assert first.log_normalizer == second.log_normalizer
    assert first.diagnostics == second.diagnostics


def test_weights_sum_to_one_in_diagnostics():
    outcome = resample(_cands([0.5, -1.0, 2.0]), ResampleConfig(m=1, seed=0))
    assert sum(d.weight for d in outcome.diagnostics) == pytest.approx(1.0, abs=1e-9)


def test_chosen_subset_of_candidates():
    cands = _cands([0.5, -1.0, 2.0])
    outcome = resample(cands, ResampleConfig(m=3, seed=1))
    texts = {c.text for c in cands}
    assert all(c.text in texts for c in outcome.chosen)
    assert len({c.text for c in outcome.chosen}) == len(outcome.chosen)  # no repeats


def test_without_replacement_on_duplicates_returns_distinct():
    cands = _cands([1.0, 1.0, 0.0], texts=["same", "same", "other"])
    outcome = resample(cands, ResampleConfig(m=3, seed=2))
    assert sorted(c.text for c in outcome.chosen) == ["other", "same"]


def test_duplicate_merging_weights():
    # Two draws of "same" with equal reward carry twice the mass of "other".
    cands = _cands([1.0, 1.0, 1.0], texts=["same", "same", "other"])
    outcome = resample(cands, ResampleConfig(m=1, seed=0))
    by_text = {d.text: d for d in outcome.diagnostics}
    assert by_text["same"].weight == pytest.approx(2 / 3, abs=1e-9)
    assert by_text["same"].count == 2
    assert by_text["other"].weight == pytest.approx(1 / 3, abs=1e-9)


def test_log_normalizer_value():
    rewards = [0.2, -0.4, 1.1]
    outcome = resample(_cands(rewards), ResampleConfig(beta=2.0, m=1, seed=0))
    logits = [r / 2.0 for r in rewards]
    top = max(logits)
    expected = top + math.log(sum(math.exp(l - top) for l in logits)) - math.log(3)
    assert outcome.log_normalizer == pytest.approx(expected, abs=1e-12)


def test_uniform_rewards_zero_kl():
    outcome = resample(_cands([0.5, 0.5, 0.5]), ResampleConfig(m=1, seed=0))
    assert outcome.kl_estimate == pytest.approx(0.0, abs=1e-9)


def test_resample_frequencies_match_weights():
    rewards = [math.log(0.5), math.log(0.3), math.log(0.2)]
    expected = compute_weights(rewards, 1.0)
    cands = _cands(rewards)
    counts = [0, 0, 0]
    runs = 100_000
    cfg_base = dict(beta=1.0, m=1, replacement=True, n_candidates=3)
    for seed in range(runs):
        outcome = resample(cands, ResampleConfig(seed=seed, **cfg_base))
        counts[int(outcome.chosen[0].text.split("-")[1])] += 1
    tv = 0.5 * sum(abs(c / runs - e) for c, e in zip(counts, expected))
    assert tv < 0.02


def test_huge_beta_gives_uniform_selection():
    rewards = [5.0, -3.0, 1.0]
    cands = _cands(rewards)
    counts = [0, 0, 0]
    runs = 100_000
    for seed in range(runs):
        outcome = resample(
            cands,
            ResampleConfig(beta=1e9, m=1, replacement=True, n_candidates=3, seed=seed),
        )
        counts[int(outcome.chosen[0].text.split("-")[1])] += 1
    tv = 0.5 * sum(abs(c / runs - 1 / 3) for c in counts)
    assert tv < 0.02


def test_resample_precondition_errors():
    with pytest.raises(ResampleError):
        resample([], ResampleConfig(m=1))
    with pytest.raises(ResampleError):
        resample([Candidate(text="x", proposal_logprob=0.0)], ResampleConfig(m=1))
    with pytest.raises(ResampleError):
        ResampleConfig(m=4, n_candidates=2, replacement=False)
    with pytest.raises(ResampleError):
        ResampleConfig(beta=0.0)


def test_derive_seed_stable_and_distinct():
    assert derive_seed(1, "p", "op") == derive_seed(1, "p", "op")
    assert derive_seed(1, "p", "op") != derive_seed(2, "p", "op")
    assert derive_seed(1, "p", "a") != derive_seed(1, "p", "b")


# ---------------------------------------------------------------------------
# sampling ops against fully declared mock spaces
# ---------------------------------------------------------------------------


def _statement_space(record, fsg_probs, scorer_probs, beta=1.0):
    """Mocks plus brute-force target for the statement sampler."""
    fsg_prompt = render(GeneratorRole.FORMAL_STATEMENT_GEN, record)
    fsg_table = {
        fsg_prompt: {f"{s}\n</formal_statement>": p for s, p in fsg_probs.items()}
    }
    scorer_table = {}
    for statement, prob_g in scorer_probs.items():
        prompt = render(
            GeneratorRole.SUBGOAL_GEN, replace(record, formal_statement=statement)
        )
        scorer_table[prompt] = {
            record.subgoal_proof: prob_g,
            "<other>": 1.0 - prob_g,
        }
    target = {
        s: fsg_probs[s] * math.exp(math.log(scorer_probs[s]) / beta) for s in fsg_probs
    }
    z = sum(target.values())
    return fsg_table, scorer_table, {s: v / z for s, v in target.items()}


def test_sample_formal_statement_matches_eq3_oracle():
    record = make_informal_record(1)
    fsg_probs = {"lemma one": 0.5, "lemma two": 0.5}
    scorer_probs = {"lemma one": 0.8, "lemma two": 0.2}
    fsg_table, scorer_table, target = _statement_space(record, fsg_probs, scorer_probs)
    counts = {s: 0 for s in fsg_probs}
    runs = 20_000
    fsg = RoleEndpoint(GeneratorRole.FORMAL_STATEMENT_GEN, MockGenerator(fsg_table, seed=0))
    scorer = RoleEndpoint(GeneratorRole.SUBGOAL_GEN, MockGenerator(scorer_table, seed=1))
    for seed in range(runs):
        cfg = ResampleConfig(n_candidates=16, m=1, seed=seed)
        result = sample_formal_statement(record, fsg, scorer, cfg)
        counts[result.selections[0]] += 1
    tv = 0.5 * sum(abs(counts[s] / runs - target[s]) for s in target)
    assert tv < 0.03


def test_uniform_scorer_recovers_proposal():
    record = make_informal_record(1)
    fsg_probs = {"lemma one": 0.7, "lemma two": 0.3}
    scorer_probs = {"lemma one": 0.5, "lemma two": 0.5}
    fsg_table, scorer_table, _ = _statement_space(record, fsg_probs, scorer_probs)
    counts = {s: 0 for s in fsg_probs}
    runs = 20_000
    fsg = RoleEndpoint(GeneratorRole.FORMAL_STATEMENT_GEN, MockGenerator(fsg_table, seed=0))
    scorer = RoleEndpoint(GeneratorRole.SUBGOAL_GEN, MockGenerator(scorer_table, seed=1))
    for seed in range(runs):
        cfg = ResampleConfig(n_candidates=16, m=1, seed=seed)
        result = sample_formal_statement(record, fsg, scorer, cfg)
        counts[result.selections[0]] += 1
    tv = 0.5 * sum(abs(counts[s] / runs - fsg_probs[s]) for s in fsg_probs)
    assert tv < 0.03


def test_sample_statement_single_candidate():
    record = make_informal_record(1)
    fsg_table, scorer_table, _ = _statement_space(
        record, {"lemma only": 1.0}, {"lemma only": 0.4}
    )
    fsg = RoleEndpoint(GeneratorRole.FORMAL_STATEMENT_GEN, MockGenerator(fsg_table, seed=0))
    scorer = RoleEndpoint(GeneratorRole.SUBGOAL_GEN, MockGenerator(scorer_table, seed=1))
    result = sample_formal_statement(
        record, fsg, scorer, ResampleConfig(n_candidates=1, m=1, seed=0)
    )
    assert result.selections == ["lemma only"]


def test_sample_statement_missing_subgoal_precondition():
    record = make_informal_record(1, subgoal_proof=None)
    fsg = RoleEndpoint(GeneratorRole.FORMAL_STATEMENT_GEN, MockGenerator({"x": 1.0}))
    with pytest.raises(MissingFieldError):
        sample_formal_statement(record, fsg, fsg, ResampleConfig(m=1))


def test_sample_subgoal_missing_proof_precondition():
    record = make_formal_record(1, formal_proof=None, formal_proof_stripped=None)
    sg = RoleEndpoint(GeneratorRole.SUBGOAL_GEN, MockGenerator({"x": 1.0}))
    with pytest.raises(MissingFieldError):
        sample_subgoal(record, sg, sg, ResampleConfig(m=1))


def test_sample_subgoal_two_outcome_space():
    record = make_formal_record(1)
    g1, g2 = "Subgoal plan A.", "Subgoal plan B."
    sg_prompt = render(GeneratorRole.SUBGOAL_GEN, record)
    sg_table = {sg_prompt: {f"{g}\n</subgoal_proof>": 0.5 for g in (g1, g2)}}
    scorer_probs = {g1: 0.9, g2: 0.3}
    scorer_table = {}
    for g, prob in scorer_probs.items():
        prompt = render(
            GeneratorRole.FORMAL_PROOF_GEN_T1, replace(record, subgoal_proof=g)
        )
        scorer_table[prompt] = {
            record.formal_proof: prob,
            "<other>": 1.0 - prob,
        }
    target = {g: 0.5 * scorer_probs[g] for g in (g1, g2)}
    z = sum(target.values())
    target = {g: v / z for g, v in target.items()}

    sg = RoleEndpoint(GeneratorRole.SUBGOAL_GEN, MockGenerator(sg_table, seed=0))
    scorer = RoleEndpoint(
        GeneratorRole.FORMAL_PROOF_GEN_T1, MockGenerator(scorer_table, seed=1)
    )
    counts = {g1: 0, g2: 0}
    runs = 20_000
    for seed in range(runs):
        result = sample_subgoal(
            record, sg, scorer, ResampleConfig(n_candidates=16, m=1, seed=seed)
        )
        counts[result.selections[0]] += 1
    tv = 0.5 * sum(abs(counts[g] / runs - target[g]) for g in target)
    assert tv < 0.03


def test_parse_failures_dropped_and_counted():
    record = make_informal_record(1)
    fsg_prompt = render(GeneratorRole.FORMAL_STATEMENT_GEN, record)
    # Half the proposals lack the end marker and must be dropped.
    fsg_table = {
        fsg_prompt: {"lemma ok\n</formal_statement>": 0.5, "no marker here": 0.5}
    }
    scorer_prompt = render(
        GeneratorRole.SUBGOAL_GEN, replace(record, formal_statement="lemma ok")
    )
    scorer_table = {scorer_prompt: {record.subgoal_proof: 1.0}}
    fsg = RoleEndpoint(GeneratorRole.FORMAL_STATEMENT_GEN, MockGenerator(fsg_table, seed=0))
    scorer = RoleEndpoint(GeneratorRole.SUBGOAL_GEN, MockGenerator(scorer_table, seed=1))
    result = sample_formal_statement(
        record, fsg, scorer, ResampleConfig(n_candidates=32, m=1, seed=0)
    )
    assert result.dropped > 0
    assert result.selections == ["lemma ok"]


def test_all_candidates_failing_flags_empty():
    record = make_informal_record(1)
    fsg_prompt = render(GeneratorRole.FORMAL_STATEMENT_GEN, record)
    fsg_table = {fsg_prompt: {"never parses": 1.0}}
    fsg = RoleEndpoint(GeneratorRole.FORMAL_STATEMENT_GEN, MockGenerator(fsg_table, seed=0))
    result = sample_formal_statement(
        record, fsg, fsg, ResampleConfig(n_candidates=4, m=1, seed=0)
    )
    assert result.selections == []
    assert result.all_failed
    assert result.dropped == 4
