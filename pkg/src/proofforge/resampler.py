"""Reward-weighted resampling of generator outputs.

Candidates drawn from the previous iteration's generators act as proposal
samples; exponentiated rewards divided by the KL temperature ``beta`` give
self-normalized importance weights, and a categorical draw over those
weights realizes the target distribution (proposal densities cancel exactly
because the candidates come from the proposal itself).

Three samplers share this machinery, differing only in what the proposal
draws and what scores the reward:

* joint (statement, proof) pairs rewarded by the posterior subgoal scorer,
* statements rewarded by the subgoal generator's likelihood of the
  subgoal proof,
* subgoal proofs rewarded by the proof generator's likelihood of the
  known formal proof.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass, replace
from typing import Hashable, Optional, Sequence

import numpy as np

from .corpus import ProblemRecord, UnbalancedCommentError, strip_comments
from .genclient import Candidate, GenClientError, GeneratorEndpoint
from .prompts import (
    CompletionParseError,
    GeneratorRole,
    MissingFieldError,
    TemplateLibrary,
    parse_completion,
    render,
)


class ResampleError(Exception):
    """Invalid inputs to the resampling machinery."""


@dataclass(frozen=True)
class ResampleConfig:
    """Knobs of the reward-weighted resampler.

    ``beta`` is the KL temperature; ``n_candidates`` the proposal draws per
    problem; ``m`` how many selections are kept (2 by default, matching the
    expert-learning sample size).
    """

    beta: float = 1.0
    n_candidates: int = 8
    m: int = 2
    replacement: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.beta <= 0:
            raise ResampleError(f"beta must be > 0, got {self.beta}")
        if self.n_candidates < 1:
            raise ResampleError("n_candidates must be >= 1")
        if self.m < 1:
            raise ResampleError("m must be >= 1")
        if not self.replacement and self.m > self.n_candidates:
            raise ResampleError(
                "m cannot exceed n_candidates when sampling without replacement"
            )


@dataclass(frozen=True)
class CandidateDiagnostic:
    """Per-distinct-candidate record kept for the diagnostics file."""

    text: str
    reward: float
    weight: float
    count: int
    chosen: bool


@dataclass
class ResampleOutcome:
    chosen: list[Candidate]
    log_normalizer: float
    diagnostics: list[CandidateDiagnostic]
    kl_estimate: float


@dataclass
class SampleResult:
    """Outcome of one per-problem sampling job.

    ``selections`` holds parsed statements, subgoal proofs, or
    (statement, proof) pairs depending on the op.  ``all_failed`` flags the
    case where every candidate was dropped by parsing or scoring.
    """

    selections: list
    outcome: Optional[ResampleOutcome]
    attempted: int
    dropped: int

    @property
    def all_failed(self) -> bool:
        return self.attempted > 0 and self.outcome is None


def derive_seed(global_seed: int, problem_id: str, op: str = "") -> int:
    """Stable per-job seed from the run seed and the problem identity."""
    digest = hashlib.sha256(f"{global_seed}:{problem_id}:{op}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def _logsumexp(values: Sequence[float]) -> float:
    top = max(values)
    return top + math.log(sum(math.exp(v - top) for v in values))


def compute_weights(rewards: Sequence[float], beta: float) -> list[float]:
    """Self-normalized weights ``w_i = exp(r_i / beta) / sum_j exp(r_j / beta)``.

    Computed with max-subtraction so extreme rewards neither overflow nor
    underflow.
    """
    if beta <= 0:
        raise ResampleError(f"beta must be > 0, got {beta}")
    if len(rewards) == 0:
        raise ResampleError("rewards must be nonempty")
    arr = np.asarray(rewards, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ResampleError("rewards must be finite")
    logits = arr / beta
    logits -= logits.max()
    weights = np.exp(logits)
    weights /= weights.sum()
    return weights.tolist()


def _categorical_draws(
    weights: Sequence[float], m: int, replacement: bool, rng: random.Random
) -> list[int]:
    indices = list(range(len(weights)))
    if replacement:
        return rng.choices(indices, weights=weights, k=m)
    chosen: list[int] = []
    remaining = indices[:]
    live = list(weights)
    for _ in range(min(m, len(indices))):
        if sum(live) > 0:
            pick = rng.choices(range(len(remaining)), weights=live, k=1)[0]
        else:
            # Every surviving weight underflowed to zero: fall back to uniform.
            pick = rng.randrange(len(remaining))
        chosen.append(remaining.pop(pick))
        live.pop(pick)
    return chosen


@dataclass
class _Selection:
    distinct_keys: list
    weights: list[float]
    counts: list[int]
    picked: list[int]
    log_normalizer: float
    kl_estimate: float


def _weighted_selection(
    keys: Sequence[Hashable], rewards: Sequence[float], cfg: ResampleConfig
) -> _Selection:
    """Merge duplicate keys, weight by exp(reward/beta), draw ``m`` of them.

    Duplicates merge by log-sum-exp of their reward logits, so a key drawn
    twice by the proposal carries twice the unnormalized mass, which is
    exactly the correction self-normalized importance sampling requires.
    """
    order: list = []
    grouped: dict = {}
    for key, reward in zip(keys, rewards):
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(reward / cfg.beta)

    merged_logits = [_logsumexp(grouped[key]) for key in order]
    shift = max(merged_logits)
    raw = [math.exp(v - shift) for v in merged_logits]
    total = sum(raw)
    weights = [v / total for v in raw]

    rng = random.Random(cfg.seed)
    picked = _categorical_draws(weights, cfg.m, cfg.replacement, rng)

    all_logits = [r / cfg.beta for r in rewards]
    log_normalizer = _logsumexp(all_logits) - math.log(len(all_logits))
    raw_weights = compute_weights(list(rewards), cfg.beta)
    kl_estimate = sum(w * l for w, l in zip(raw_weights, all_logits)) - log_normalizer

    return _Selection(
        distinct_keys=order,
        weights=weights,
        counts=[len(grouped[key]) for key in order],
        picked=picked,
        log_normalizer=log_normalizer,
        kl_estimate=kl_estimate,
    )


def resample(candidates: Sequence[Candidate], cfg: ResampleConfig) -> ResampleOutcome:
    """Draw up to ``cfg.m`` candidates from the reward-weighted categorical."""
    if not candidates:
        raise ResampleError("no candidates to resample")
    for cand in candidates:
        if cand.reward is None or not math.isfinite(cand.reward):
            raise ResampleError(f"candidate without finite reward: {cand.text[:40]!r}")

    selection = _weighted_selection(
        [c.text for c in candidates], [c.reward for c in candidates], cfg
    )
    first_by_text = {}
    for cand in candidates:
        first_by_text.setdefault(cand.text, cand)

    chosen = []
    for idx in selection.picked:
        text = selection.distinct_keys[idx]
        origin = first_by_text[text]
        chosen.append(
            Candidate(
                text=text,
                proposal_logprob=origin.proposal_logprob,
                reward=origin.reward,
                weight=selection.weights[idx],
            )
        )
    picked_set = set(selection.picked)
    diagnostics = [
        CandidateDiagnostic(
            text=text,
            reward=first_by_text[text].reward,
            weight=selection.weights[i],
            count=selection.counts[i],
            chosen=i in picked_set,
        )
        for i, text in enumerate(selection.distinct_keys)
    ]
    return ResampleOutcome(
        chosen=chosen,
        log_normalizer=selection.log_normalizer,
        diagnostics=diagnostics,
        kl_estimate=selection.kl_estimate,
    )


@dataclass(frozen=True)
class RoleEndpoint:
    """A generator endpoint paired with the role whose template it serves."""

    role: GeneratorRole
    endpoint: GeneratorEndpoint


def _require(record: ProblemRecord, fields: Sequence[str], role: GeneratorRole) -> None:
    for name in fields:
        if record.get(name) is None:
            raise MissingFieldError(role, name)


def _select_payloads(
    keys: list, rewards: list[float], cfg: ResampleConfig
) -> tuple[list, ResampleOutcome]:
    selection = _weighted_selection(keys, rewards, cfg)
    selections = [selection.distinct_keys[i] for i in selection.picked]
    picked_set = set(selection.picked)
    reward_by_key = dict(zip(keys, rewards))
    diagnostics = [
        CandidateDiagnostic(
            text=key if isinstance(key, str) else "\n".join(key),
            reward=reward_by_key[key],
            weight=selection.weights[i],
            count=selection.counts[i],
            chosen=i in picked_set,
        )
        for i, key in enumerate(selection.distinct_keys)
    ]
    outcome = ResampleOutcome(
        chosen=[],
        log_normalizer=selection.log_normalizer,
        diagnostics=diagnostics,
        kl_estimate=selection.kl_estimate,
    )
    return selections, outcome


def sample_formal_proof(
    record: ProblemRecord,
    fsg: RoleEndpoint,
    fpg: RoleEndpoint,
    psg_scorer: RoleEndpoint,
    cfg: ResampleConfig,
    library: TemplateLibrary | None = None,
) -> SampleResult:
    """Sample joint (statement, proof) pairs for an informal problem.

    Proposal: statement from the statement generator, then a proof
    conditioned on it.  Reward: the posterior subgoal scorer's
    log-likelihood of the record's subgoal proof given the statement and the
    comment-stripped proof.
    """
    _require(record, ("informal_statement", "subgoal_proof"), fsg.role)
    subgoal = record.subgoal_proof
    dropped = 0

    fsg_prompt = render(GeneratorRole.FORMAL_STATEMENT_GEN, record, library)
    raw_statements = fsg.endpoint.sample(fsg_prompt, cfg.n_candidates)
    by_statement: dict[str, int] = {}
    for cand in raw_statements:
        try:
            stmt = parse_completion(GeneratorRole.FORMAL_STATEMENT_GEN, cand.text)
        except CompletionParseError:
            dropped += 1
            continue
        by_statement[stmt] = by_statement.get(stmt, 0) + 1

    pairs: list[tuple[str, str]] = []
    for stmt, count in by_statement.items():
        prompt = render(fpg.role, replace(record, formal_statement=stmt), library)
        try:
            proofs = fpg.endpoint.sample(prompt, count)
        except GenClientError:
            dropped += count
            continue
        for proof_cand in proofs:
            try:
                proof = parse_completion(fpg.role, proof_cand.text)
            except CompletionParseError:
                dropped += 1
                continue
            pairs.append((stmt, proof))

    reward_cache: dict[tuple[str, str], Optional[float]] = {}
    keys = []
    for pair in pairs:
        if pair not in reward_cache:
            reward_cache[pair] = _joint_reward(
                record, pair[0], pair[1], subgoal, psg_scorer, library
            )
        if reward_cache[pair] is None:
            dropped += 1
            continue
        keys.append(pair)

    if not keys:
        return SampleResult([], None, cfg.n_candidates, dropped)
    rewards = [reward_cache[k] for k in keys]
    selections, outcome = _select_payloads(keys, rewards, cfg)
    return SampleResult(selections, outcome, cfg.n_candidates, dropped)


def _joint_reward(record, stmt, proof, subgoal, psg_scorer, library) -> Optional[float]:
    try:
        stripped = strip_comments(proof)
    except UnbalancedCommentError:
        return None
    scored_record = replace(
        record,
        formal_statement=stmt,
        formal_proof=proof,
        formal_proof_stripped=stripped,
    )
    try:
        prompt = render(psg_scorer.role, scored_record, library)
        return psg_scorer.endpoint.score(prompt, subgoal)
    except (GenClientError, MissingFieldError):
        return None


def sample_formal_statement(
    record: ProblemRecord,
    fsg: RoleEndpoint,
    sg_scorer: RoleEndpoint,
    cfg: ResampleConfig,
    library: TemplateLibrary | None = None,
) -> SampleResult:
    """Sample formal statements rewarded by the subgoal generator's score."""
    _require(record, ("informal_statement", "subgoal_proof"), fsg.role)
    subgoal = record.subgoal_proof
    dropped = 0

    prompt = render(GeneratorRole.FORMAL_STATEMENT_GEN, record, library)
    raw = fsg.endpoint.sample(prompt, cfg.n_candidates)

    keys: list[str] = []
    reward_cache: dict[str, Optional[float]] = {}
    for cand in raw:
        try:
            stmt = parse_completion(GeneratorRole.FORMAL_STATEMENT_GEN, cand.text)
        except CompletionParseError:
            dropped += 1
            continue
        if stmt not in reward_cache:
            try:
                score_prompt = render(
                    sg_scorer.role, replace(record, formal_statement=stmt), library
                )
                reward_cache[stmt] = sg_scorer.endpoint.score(score_prompt, subgoal)
            except (GenClientError, MissingFieldError):
                reward_cache[stmt] = None
        if reward_cache[stmt] is None:
            dropped += 1
            continue
        keys.append(stmt)

    if not keys:
        return SampleResult([], None, cfg.n_candidates, dropped)
    rewards = [reward_cache[k] for k in keys]
    selections, outcome = _select_payloads(keys, rewards, cfg)
    return SampleResult(selections, outcome, cfg.n_candidates, dropped)


def sample_subgoal(
    record: ProblemRecord,
    sg: RoleEndpoint,
    fpg_scorer: RoleEndpoint,
    cfg: ResampleConfig,
    library: TemplateLibrary | None = None,
) -> SampleResult:
    """Sample subgoal proofs for a formal problem.

    Reward: the proof generator's log-likelihood of the record's known
    formal proof conditioned on each candidate subgoal proof.
    """
    _require(record, ("informal_statement", "formal_statement", "formal_proof"), sg.role)
    target_proof = record.formal_proof
    dropped = 0

    prompt = render(GeneratorRole.SUBGOAL_GEN, record, library)
    raw = sg.endpoint.sample(prompt, cfg.n_candidates)

    keys: list[str] = []
    reward_cache: dict[str, Optional[float]] = {}
    for cand in raw:
        try:
            subgoal = parse_completion(GeneratorRole.SUBGOAL_GEN, cand.text)
        except CompletionParseError:
            dropped += 1
            continue
        if subgoal not in reward_cache:
            try:
                score_prompt = render(
                    fpg_scorer.role, replace(record, subgoal_proof=subgoal), library
                )
                reward_cache[subgoal] = fpg_scorer.endpoint.score(score_prompt, target_proof)
            except (GenClientError, MissingFieldError):
                reward_cache[subgoal] = None
        if reward_cache[subgoal] is None:
            dropped += 1
            continue
        keys.append(subgoal)

    if not keys:
        return SampleResult([], None, cfg.n_candidates, dropped)
    rewards = [reward_cache[k] for k in keys]
    selections, outcome = _select_payloads(keys, rewards, cfg)
    return SampleResult(selections, outcome, cfg.n_candidates, dropped)


__all__ = [
    "CandidateDiagnostic",
    "ResampleConfig",
    "ResampleError",
    "ResampleOutcome",
    "RoleEndpoint",
    "SampleResult",
    "compute_weights",
    "derive_seed",
    "resample",
    "sample_formal_proof",
    "sample_formal_statement",
    "sample_subgoal",
]
