"""Training-dataset assembly for the expert-learning loop.

Builds the initialization datasets (one per generator role) from annotated
corpora, folds resampled statements/proofs/subgoal-proofs into per-iteration
datasets, applies the Bernoulli short-proof drop, and emits the training
manifests an external trainer consumes.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .corpus import Dataset, ProblemRecord, UnbalancedCommentError, strip_comments
from .prompts import GeneratorRole
from .resampler import derive_seed


class CuratorError(Exception):
    """Invalid inputs to dataset assembly."""


class Provenance(str, Enum):
    INITIALIZATION = "initialization"
    SAMPLED = "sampled"
    FORMAL_ORIGINAL = "formal_original"


@dataclass(frozen=True)
class TrainingExample:
    """Role-tagged (prompt fields, target) pair bound for fine-tuning."""

    role: GeneratorRole
    prompt_fields: Mapping[str, str]
    target_field: str
    target: str
    source_record: str
    iteration: int
    provenance: Provenance

    def __post_init__(self):
        object.__setattr__(self, "prompt_fields", dict(self.prompt_fields))

    def dedup_key(self):
        return (
            self.role,
            tuple(sorted(self.prompt_fields.items())),
            self.target_field,
            self.target,
        )

    def to_json_line(self) -> str:
        payload = {
            "role": self.role.value,
            "prompt_fields": dict(self.prompt_fields),
            "target_field": self.target_field,
            "target": self.target,
            "source_record": self.source_record,
            "iteration": self.iteration,
            "provenance": self.provenance.value,
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainingExample":
        return cls(
            role=GeneratorRole(raw["role"]),
            prompt_fields=dict(raw["prompt_fields"]),
            target_field=raw["target_field"],
            target=raw["target"],
            source_record=raw["source_record"],
            iteration=int(raw["iteration"]),
            provenance=Provenance(raw["provenance"]),
        )


# Allowed (prompt fields, target field) shapes per role.  The second shape of
# the proof/subgoal/posterior roles carries the informal proof where
# formal-corpus records have no subgoal proof.
_S = "informal_statement"
_P = "informal_proof"
_FS = "formal_statement"
_FP = "formal_proof"
_FPS = "formal_proof_stripped"
_G = "subgoal_proof"

ROLE_SHAPES: dict[GeneratorRole, tuple[tuple[frozenset, str], ...]] = {
    GeneratorRole.FORMAL_STATEMENT_GEN: ((frozenset({_S}), _FS),),
    GeneratorRole.FORMAL_PROOF_GEN_T1: (
        (frozenset({_S, _FS, _G}), _FP),
        (frozenset({_S, _FS, _P}), _FP),
        (frozenset({_S, _FS}), _FP),  # -subgoal ablation
    ),
    GeneratorRole.FORMAL_PROOF_GEN_T2: (
        (frozenset({_S, _FS, _G}), _FP),
        (frozenset({_S, _FS, _P}), _FP),
        (frozenset({_S, _FS}), _FP),
    ),
    GeneratorRole.SUBGOAL_GEN: (
        (frozenset({_S, _FS}), _G),
        (frozenset({_S, _FS}), _P),
    ),
    GeneratorRole.POSTERIOR_SUBGOAL_GEN: (
        (frozenset({_S, _FS, _FPS}), _G),
        (frozenset({_S, _FS, _FPS}), _P),
    ),
}


def validate_examples(examples: Iterable[TrainingExample]) -> None:
    """Structurally check every example against its role contract."""
    for example in examples:
        shapes = ROLE_SHAPES.get(example.role)
        if shapes is None:
            raise CuratorError(f"role {example.role.value} has no training contract")
        shape = (frozenset(example.prompt_fields), example.target_field)
        if shape not in shapes:
            raise CuratorError(
                f"example from {example.source_record} violates the "
                f"{example.role.value} contract: prompts={sorted(shape[0])}, "
                f"target={example.target_field}"
            )
        if not example.target:
            raise CuratorError(f"example from {example.source_record} has empty target")


@dataclass(frozen=True)
class DropPolicy:
    """Bernoulli drop probabilities keyed by proof step count."""

    rates: Mapping[int, float] = field(
        default_factory=lambda: {1: 0.8, 2: 0.6, 3: 0.4}
    )
    default_rate: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "rates", dict(self.rates))
        for length, rate in self.rates.items():
            if not 0.0 <= rate <= 1.0:
                raise CuratorError(f"drop rate for length {length} not in [0, 1]: {rate}")
        if not 0.0 <= self.default_rate <= 1.0:
            raise CuratorError(f"default drop rate not in [0, 1]: {self.default_rate}")

    def rate_for(self, length: int) -> float:
        return self.rates.get(length, self.default_rate)


# Tokens that open an Isar command line; a line starting with one counts as a
# proof step.
STEP_KEYWORDS = frozenset(
    """
    proof qed by apply done have show hence thus then from with using
    unfolding obtain fix assume presume let note also finally moreover
    ultimately next case define interpret subgoal supply
    """.split()
)


def proof_step_count(proof_text: str) -> int:
    """Number of command-initial lines after comment stripping."""
    stripped = strip_comments(proof_text)
    count = 0
    for line in stripped.splitlines():
        tokens = line.split()
        if tokens and tokens[0] in STEP_KEYWORDS:
            count += 1
    return count


def length_filter(
    examples: Sequence[TrainingExample], policy: DropPolicy, seed: int
) -> list[TrainingExample]:
    """Independently drop each example per its proof-length rate."""
    rng = random.Random(seed)
    kept = []
    for example in examples:
        try:
            length = proof_step_count(example.target)
        except UnbalancedCommentError:
            raise CuratorError(
                f"example from {example.source_record} has an unparseable proof"
            )
        if rng.random() >= policy.rate_for(length):
            kept.append(example)
    return kept


def dedup_examples(examples: Sequence[TrainingExample]) -> list[TrainingExample]:
    seen = set()
    out = []
    for example in examples:
        key = example.dedup_key()
        if key not in seen:
            seen.add(key)
            out.append(example)
    return out


@dataclass
class InitDatasets:
    """The four initialization datasets plus exclusion tallies."""

    fsg: list[TrainingExample]
    fpg: list[TrainingExample]
    sg: list[TrainingExample]
    psg: list[TrainingExample]
    excluded: dict[str, int]


def _stripped_proof(record: ProblemRecord) -> Optional[str]:
    if record.formal_proof_stripped is not None:
        return record.formal_proof_stripped
    if record.formal_proof is None:
        return None
    try:
        return strip_comments(record.formal_proof)
    except UnbalancedCommentError:
        return None


def init_datasets(
    informal: Dataset, formal: Dataset, include_subgoals: bool = True
) -> InitDatasets:
    """Build the initialization datasets from annotated corpora.

    Informal records contribute with their subgoal proof in the plan slot;
    formal records contribute with their annotated informal proof instead.
    Records missing an annotation are skipped for the datasets that need it
    and tallied in ``excluded``.
    """
    fsg: list[TrainingExample] = []
    fpg: list[TrainingExample] = []
    sg: list[TrainingExample] = []
    psg: list[TrainingExample] = []
    excluded = {"fsg": 0, "fpg": 0, "sg": 0, "psg": 0}

    def example(role, prompts, target_field, target, source):
        return TrainingExample(
            role=role,
            prompt_fields=prompts,
            target_field=target_field,
            target=target,
            source_record=source,
            iteration=0,
            provenance=Provenance.INITIALIZATION,
        )

    for record in list(informal) + list(formal):
        s, S, P, g, p = (
            record.informal_statement,
            record.formal_statement,
            record.formal_proof,
            record.subgoal_proof,
            record.informal_proof,
        )
        plan_field, plan = (_G, g) if record.origin.value == "informal_corpus" else (_P, p)

        if s and S:
            fsg.append(example(GeneratorRole.FORMAL_STATEMENT_GEN, {_S: s}, _FS, S, record.id))
        else:
            excluded["fsg"] += 1

        if include_subgoals:
            fpg_ok = s and S and P and plan
            fpg_prompts = {_S: s, _FS: S, plan_field: plan} if fpg_ok else None
        else:
            fpg_ok = s and S and P
            fpg_prompts = {_S: s, _FS: S} if fpg_ok else None
        if fpg_ok:
            fpg.append(
                example(GeneratorRole.FORMAL_PROOF_GEN_T1, fpg_prompts, _FP, P, record.id)
            )
        else:
            excluded["fpg"] += 1

        if s and S and plan:
            sg.append(
                example(GeneratorRole.SUBGOAL_GEN, {_S: s, _FS: S}, plan_field, plan, record.id)
            )
        else:
            excluded["sg"] += 1

        stripped = _stripped_proof(record)
        if s and S and stripped and plan:
            psg.append(
                example(
                    GeneratorRole.POSTERIOR_SUBGOAL_GEN,
                    {_S: s, _FS: S, _FPS: stripped},
                    plan_field,
                    plan,
                    record.id,
                )
            )
        else:
            excluded["psg"] += 1

    return InitDatasets(
        fsg=dedup_examples(fsg),
        fpg=dedup_examples(fpg),
        sg=dedup_examples(sg),
        psg=dedup_examples(psg),
        excluded=excluded,
    )


@dataclass
class InformalSamples:
    """Resampler output for one informal problem."""

    problem: ProblemRecord
    statements: list[str]
    proof_pairs: list[tuple[str, str]]


@dataclass
class FormalSamples:
    """Resampler output for one formal problem."""

    problem: ProblemRecord
    subgoals: list[str]


@dataclass
class IterationDatasets:
    fsg: list[TrainingExample]
    fpg: list[TrainingExample]
    sg: list[TrainingExample]


def assemble_iteration(
    k: int,
    d0: InitDatasets,
    informal_samples: Sequence[InformalSamples],
    formal_samples: Sequence[FormalSamples],
    verdicts: Mapping[str, Sequence["VerificationResult"]],
    include_subgoals: bool = True,
) -> IterationDatasets:
    """Fold iteration-``k`` samples into datasets seeded from the init sets.

    Sampled informal-side proofs enter the proof dataset only when their
    verification verdict is valid; formal-side additions pair sampled
    subgoal proofs with the original library proof and skip re-verification.
    """
    if k < 1:
        raise CuratorError(f"iteration index must be >= 1, got {k}")

    fsg = list(d0.fsg)
    fpg = list(d0.fpg)
    sg = list(d0.sg)

    def example(role, prompts, target_field, target, source, provenance):
        return TrainingExample(
            role=role,
            prompt_fields=prompts,
            target_field=target_field,
            target=target,
            source_record=source,
            iteration=k,
            provenance=provenance,
        )

    for item in informal_samples:
        record = item.problem
        s, g = record.informal_statement, record.subgoal_proof
        results = verdicts.get(record.id, ())
        if len(results) != len(item.proof_pairs):
            raise CuratorError(
                f"problem {record.id}: {len(item.proof_pairs)} sampled proofs but "
                f"{len(results)} verification results"
            )
        for stmt in item.statements:
            fsg.append(
                example(
                    GeneratorRole.FORMAL_STATEMENT_GEN,
                    {_S: s},
                    _FS,
                    stmt,
                    record.id,
                    Provenance.SAMPLED,
                )
            )
        for (stmt, proof), result in zip(item.proof_pairs, results):
            if result.status.value != "valid":
                continue
            prompts = {_S: s, _FS: stmt, _G: g} if include_subgoals else {_S: s, _FS: stmt}
            fpg.append(
                example(
                    GeneratorRole.FORMAL_PROOF_GEN_T1,
                    prompts,
                    _FP,
                    proof,
                    record.id,
                    Provenance.SAMPLED,
                )
            )

    for item in formal_samples:
        record = item.problem
        s, S, P = (
            record.informal_statement,
            record.formal_statement,
            record.formal_proof,
        )
        for subgoal in item.subgoals:
            sg.append(
                example(
                    GeneratorRole.SUBGOAL_GEN,
                    {_S: s, _FS: S},
                    _G,
                    subgoal,
                    record.id,
                    Provenance.SAMPLED,
                )
            )
            prompts = {_S: s, _FS: S, _G: subgoal} if include_subgoals else {_S: s, _FS: S}
            fpg.append(
                example(
                    GeneratorRole.FORMAL_PROOF_GEN_T1,
                    prompts,
                    _FP,
                    P,
                    record.id,
                    Provenance.FORMAL_ORIGINAL,
                )
            )

    return IterationDatasets(
        fsg=dedup_examples(fsg), fpg=dedup_examples(fpg), sg=dedup_examples(sg)
    )


FPG_VARIANTS = ("t1_all", "t1_filtered", "t2_all", "t2_filtered")


def fpg_variants(
    examples: Sequence[TrainingExample], policy: DropPolicy, seed: int
) -> dict[str, list[TrainingExample]]:
    """The four proof-generator dataset variants: template x length policy."""

    def retag(role):
        return [replace(e, role=role) for e in examples]

    t1 = retag(GeneratorRole.FORMAL_PROOF_GEN_T1)
    t2 = retag(GeneratorRole.FORMAL_PROOF_GEN_T2)
    return {
        "t1_all": t1,
        "t1_filtered": length_filter(t1, policy, derive_seed(seed, "t1_filtered")),
        "t2_all": t2,
        "t2_filtered": length_filter(t2, policy, derive_seed(seed, "t2_filtered")),
    }


def write_examples(examples: Sequence[TrainingExample], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for example in examples:
            handle.write(example.to_json_line())
            handle.write("\n")


def read_examples(path: str | Path) -> list[TrainingExample]:
    out = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            if line.strip():
                out.append(TrainingExample.from_dict(json.loads(line)))
    return out


@dataclass(frozen=True)
class TrainingManifest:
    """Instructions for the external trainer; defaults follow the run recipe
    (learning rate 1e-5, 3 epochs, 8192-token sequences)."""

    role: GeneratorRole
    dataset_path: str
    base_model_id: str
    output_endpoint_slot: str
    learning_rate: float = 1e-5
    epochs: int = 3
    max_sequence_length: int = 8192

    def to_json(self) -> str:
        payload = asdict(self)
        payload["role"] = self.role.value
        return json.dumps(payload, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, raw: str) -> "TrainingManifest":
        data = json.loads(raw)
        data["role"] = GeneratorRole(data["role"])
        return cls(**data)


def emit_manifest(
    role: GeneratorRole,
    dataset_path: str | Path,
    base_model_id: str,
    output_endpoint_slot: str,
    out_path: str | Path | None = None,
    learning_rate: float = 1e-5,
    epochs: int = 3,
    max_sequence_length: int = 8192,
) -> Path:
    """Write the training manifest for one dataset.

    ``base_model_id`` must always be the configured base model: components
    are re-initialized from it every iteration, never from a previous
    iteration's checkpoint.
    """
    dataset_path = Path(dataset_path)
    if not dataset_path.exists() or dataset_path.stat().st_size == 0:
        raise CuratorError(f"dataset file missing or empty: {dataset_path}")
    manifest = TrainingManifest(
        role=role,
        dataset_path=str(dataset_path),
        base_model_id=base_model_id,
        output_endpoint_slot=output_endpoint_slot,
        learning_rate=learning_rate,
        epochs=epochs,
        max_sequence_length=max_sequence_length,
    )
    out_path = Path(out_path) if out_path else dataset_path.with_name("manifest.json")
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(manifest.to_json() + "\n", encoding="utf-8")
    return out_path


__all__ = [
    "CuratorError",
    "DropPolicy",
    "FPG_VARIANTS",
    "FormalSamples",
    "InformalSamples",
    "InitDatasets",
    "IterationDatasets",
    "Provenance",
    "ROLE_SHAPES",
    "TrainingExample",
    "TrainingManifest",
    "assemble_iteration",
    "dedup_examples",
    "emit_manifest",
    "fpg_variants",
    "init_datasets",
    "length_filter",
    "proof_step_count",
    "read_examples",
    "validate_examples",
    "write_examples",
]
