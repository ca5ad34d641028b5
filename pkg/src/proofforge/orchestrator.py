"""End-to-end driver for the expert-learning loop.

``initialize_run`` filters and snapshots the corpora and writes the
initialization datasets plus training manifests; ``run_iteration`` executes
one expert-learning iteration (sample, verify, assemble, emit); ``evaluate``
runs the benchmark harness over trained proof-generator endpoints; ``report``
renders per-iteration series and histograms.  The ``forge`` CLI wires these
to a config file, an endpoint registry, and HTTP services.

Per-problem sampling runs sequentially in corpus order so that runs with
stateful endpoints (the in-process mocks) are reproducible; verification
fans out on a bounded pool, whose results merge by job id.
"""

from __future__ import annotations

import argparse
import csv
import json
import time
from dataclasses import asdict, dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence

from filelock import FileLock, Timeout

from . import curator
from .config import RunConfig, load_config, write_example_config
from .corpus import (
    Dataset,
    ProblemRecord,
    build_ngram_index,
    filter_leakage,
    read_records,
    with_stripped_proof,
    write_records,
    UnbalancedCommentError,
)
from .curator import (
    DropPolicy,
    FormalSamples,
    InformalSamples,
    InitDatasets,
    TrainingExample,
)
from .genclient import (
    EndpointConfig,
    GenClientError,
    GeneratorEndpoint,
    HttpGeneratorClient,
)
from .prompts import (
    CompletionParseError,
    GeneratorRole,
    TemplateLibrary,
    parse_completion,
    parse_informal_annotation,
    render,
)
from .resampler import (
    ResampleConfig,
    RoleEndpoint,
    SampleResult,
    derive_seed,
    sample_formal_proof,
    sample_formal_statement,
    sample_subgoal,
)
from .verifier import (
    ErrorCategory,
    HttpProver,
    ProverConfig,
    VerificationResult,
    VerificationStatus,
    verify,
    verify_many,
)


class OrchestratorError(Exception):
    """Run-level failures: bad iteration index, missing state, busy run dir."""


def round_half_up(value: float, decimals: int) -> float:
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(repr(value)).quantize(quantum, rounding=ROUND_HALF_UP))


def pass_rate_percent(solved: int, total: int, decimals: int = 1) -> float:
    """Headline pass rate: percentage at one-decimal half-up rounding."""
    if total <= 0:
        return 0.0
    return round_half_up(100.0 * solved / total, decimals)


def synthetic_pass_rate(sampled_counts: Mapping) -> Optional[float]:
    """Verified / attempted sampled proofs, as a two-decimal percentage.

    Returns None (reported as absent) when nothing was attempted.
    """
    attempted = int(sampled_counts.get("attempted", 0))
    verified = int(sampled_counts.get("verified", 0))
    if attempted <= 0:
        return None
    return round_half_up(100.0 * verified / attempted, 2)


@dataclass
class MetricsBundle:
    solved: int = 0
    total: int = 0
    attempts: int = 0
    failed_attempts: int = 0
    pass_rate_valid: Optional[float] = None
    pass_rate_test: Optional[float] = None
    pass_at_n: list = field(default_factory=list)  # [(n, exact percent), ...]
    arm_pass_rates: dict = field(default_factory=dict)  # arm -> 2-decimal percent
    synthetic_pass_rate: Optional[float] = None
    error_histogram: dict = field(default_factory=dict)  # category -> count

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass_at_n"] = [[n, value] for n, value in self.pass_at_n]
        return out


@dataclass
class IterationManifest:
    k: int
    config_snapshot: dict
    dataset_refs: dict
    endpoint_slots: list
    sampled_counts: dict
    metrics: Optional[dict] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, raw: str) -> "IterationManifest":
        return cls(**json.loads(raw))

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")

    @classmethod
    def read(cls, path: Path) -> "IterationManifest":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


class EndpointResolver(Protocol):
    """Maps (iteration, role, variant) to a live generator endpoint."""

    def resolve(
        self, k: int, role: GeneratorRole, variant: Optional[str] = None
    ) -> RoleEndpoint: ...


class StaticResolver:
    """Fixed role -> endpoint mapping; ignores iteration and variant."""

    def __init__(self, endpoints: Mapping[GeneratorRole, GeneratorEndpoint]):
        self.endpoints = dict(endpoints)

    def resolve(self, k, role, variant=None) -> RoleEndpoint:
        if role not in self.endpoints:
            raise OrchestratorError(f"no endpoint for role {role.value}")
        return RoleEndpoint(role=role, endpoint=self.endpoints[role])


def endpoint_slot(k: int, role: GeneratorRole, variant: Optional[str] = None) -> str:
    base = f"{k:03d}/{role.value}"
    return f"{base}/{variant}" if variant else base


def variant_role(variant: str) -> GeneratorRole:
    if variant.startswith("t1"):
        return GeneratorRole.FORMAL_PROOF_GEN_T1
    if variant.startswith("t2"):
        return GeneratorRole.FORMAL_PROOF_GEN_T2
    raise OrchestratorError(f"unknown proof-generator variant {variant!r}")


def load_registry(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        return {}
    return json.loads(path.read_text(encoding="utf-8"))


def register_endpoint(path: str | Path, slot: str, url: str) -> None:
    path = Path(path)
    registry = load_registry(path)
    registry[slot] = url
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(registry, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def wait_for_endpoints(
    path: str | Path,
    slots: Sequence[str],
    timeout_s: float = 86400.0,
    poll_s: float = 5.0,
) -> dict[str, str]:
    """Poll the registry file until every slot is published."""
    deadline = time.monotonic() + timeout_s
    while True:
        registry = load_registry(path)
        missing = [slot for slot in slots if slot not in registry]
        if not missing:
            return registry
        if time.monotonic() >= deadline:
            raise OrchestratorError(f"endpoints never published: {missing}")
        time.sleep(poll_s)


class RegistryResolver:
    """Builds HTTP generator clients from the endpoint registry file."""

    def __init__(self, registry_path: str | Path, config: RunConfig):
        self.registry_path = Path(registry_path)
        self.config = config

    def resolve(self, k, role, variant=None) -> RoleEndpoint:
        registry = load_registry(self.registry_path)
        slot = endpoint_slot(k, role, variant)
        if slot not in registry:
            raise OrchestratorError(f"registry has no endpoint for slot {slot}")
        endpoint = HttpGeneratorClient(
            EndpointConfig(
                base_url=registry[slot],
                role=role,
                temperature=self.config.temperature,
                max_tokens=self.config.max_tokens,
                retry_limit=self.config.generator_retry_limit,
                seed=self.config.seed,
                max_in_flight=self.config.max_parallel_generators,
                max_sequence_tokens=self.config.max_sequence_length,
            )
        )
        return RoleEndpoint(role=role, endpoint=endpoint)


class RunLock:
    """Single orchestrator instance per run directory."""

    def __init__(self, run_dir: str | Path):
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        self._lock = FileLock(str(run_dir / "run.lock"))

    def __enter__(self):
        try:
            self._lock.acquire(timeout=0.1)
        except Timeout:
            raise OrchestratorError("run directory is locked by another orchestrator")
        return self

    def __exit__(self, *exc):
        self._lock.release()


# ---------------------------------------------------------------------------
# Corpus annotation (initialization phase, lines 1-12 of the loop)
# ---------------------------------------------------------------------------


def annotate_corpora(
    informal: Dataset,
    formal: Dataset,
    annotators: Mapping[GeneratorRole, GeneratorEndpoint],
    prover_cfg: Optional[ProverConfig] = None,
    library: TemplateLibrary | None = None,
) -> tuple[Dataset, Dataset, dict[str, int]]:
    """Fill missing record fields through the annotator endpoints.

    Annotated formal proofs for informal problems are kept only when the
    prover verifies them (when a prover is configured).  Records that cannot
    be annotated keep their gaps; downstream dataset builders exclude them.
    """
    counts = {
        "statements_annotated": 0,
        "proofs_annotated": 0,
        "proofs_rejected": 0,
        "subgoals_annotated": 0,
        "informalized": 0,
        "failures": 0,
        "unbalanced_comments": 0,
    }

    def one(role: GeneratorRole, record: ProblemRecord) -> Optional[str]:
        endpoint = annotators.get(role)
        if endpoint is None:
            return None
        try:
            prompt = render(role, record, library)
            completion = endpoint.sample(prompt, 1)[0].text
            return parse_completion(role, completion)
        except (GenClientError, CompletionParseError, Exception) as exc:
            if not isinstance(exc, (GenClientError, CompletionParseError)):
                raise
            counts["failures"] += 1
            return None

    informal_records = []
    for record in informal:
        if record.formal_statement is None and record.informal_proof is not None:
            statement = one(GeneratorRole.FORMAL_STATEMENT_ANNOTATOR, record)
            if statement:
                record = replace(record, formal_statement=statement)
                counts["statements_annotated"] += 1
        if record.formal_proof is None and record.formal_statement is not None:
            proof = one(GeneratorRole.FORMAL_PROOF_ANNOTATOR, record)
            if proof:
                keep = True
                if prover_cfg is not None:
                    verdict = verify(prover_cfg, record.formal_statement, proof)
                    keep = verdict.status == VerificationStatus.VALID
                if keep:
                    record = replace(record, formal_proof=proof)
                    counts["proofs_annotated"] += 1
                else:
                    counts["proofs_rejected"] += 1
        if record.formal_proof is not None and record.formal_proof_stripped is None:
            try:
                record = with_stripped_proof(record)
            except UnbalancedCommentError:
                counts["unbalanced_comments"] += 1
        if record.subgoal_proof is None and record.formal_proof is not None:
            subgoal = one(GeneratorRole.SUBGOAL_ANNOTATOR, record)
            if subgoal:
                record = replace(record, subgoal_proof=subgoal)
                counts["subgoals_annotated"] += 1
        informal_records.append(record)

    formal_records = []
    for record in formal:
        if record.informal_statement is None or record.informal_proof is None:
            endpoint = annotators.get(GeneratorRole.INFORMALIZER)
            if endpoint is not None:
                try:
                    prompt = render(GeneratorRole.INFORMALIZER, record, library)
                    completion = endpoint.sample(prompt, 1)[0].text
                    statement, proof = parse_informal_annotation(completion)
                    record = replace(
                        record, informal_statement=statement, informal_proof=proof
                    )
                    counts["informalized"] += 1
                except (GenClientError, CompletionParseError):
                    counts["failures"] += 1
        if record.formal_proof is not None and record.formal_proof_stripped is None:
            try:
                record = with_stripped_proof(record)
            except UnbalancedCommentError:
                counts["unbalanced_comments"] += 1
        formal_records.append(record)

    return (
        Dataset(records=tuple(informal_records), kind=informal.kind),
        Dataset(records=tuple(formal_records), kind=formal.kind),
        counts,
    )


# ---------------------------------------------------------------------------
# Initialization (iteration 0)
# ---------------------------------------------------------------------------


def _iter_dir(run_dir: Path, k: int) -> Path:
    return run_dir / f"{k:03d}"


def _write_dataset_with_manifest(
    examples: Sequence[TrainingExample],
    role: GeneratorRole,
    directory: Path,
    slot: str,
    config: RunConfig,
    dataset_refs: dict,
    endpoint_slots: list,
) -> None:
    data_path = directory / "data.jsonl"
    curator.validate_examples(examples)
    curator.write_examples(examples, data_path)
    dataset_refs[slot] = {"path": str(data_path), "examples": len(examples)}
    if examples:
        curator.emit_manifest(
            role,
            data_path,
            base_model_id=config.base_model_id,
            output_endpoint_slot=slot,
            out_path=directory / "manifest.json",
            learning_rate=config.learning_rate,
            epochs=config.epochs,
            max_sequence_length=config.max_sequence_length,
        )
        endpoint_slots.append(slot)


def _write_role_datasets(
    k: int,
    run_dir: Path,
    config: RunConfig,
    fsg: Sequence[TrainingExample],
    sg: Sequence[TrainingExample],
    fpg: Sequence[TrainingExample],
    psg: Sequence[TrainingExample] | None,
) -> tuple[dict, list]:
    """Write fsg/sg(/psg) datasets and the four proof-generator variants."""
    base = _iter_dir(run_dir, k)
    dataset_refs: dict = {}
    endpoint_slots: list = []

    _write_dataset_with_manifest(
        fsg,
        GeneratorRole.FORMAL_STATEMENT_GEN,
        base / GeneratorRole.FORMAL_STATEMENT_GEN.value,
        endpoint_slot(k, GeneratorRole.FORMAL_STATEMENT_GEN),
        config,
        dataset_refs,
        endpoint_slots,
    )
    _write_dataset_with_manifest(
        sg,
        GeneratorRole.SUBGOAL_GEN,
        base / GeneratorRole.SUBGOAL_GEN.value,
        endpoint_slot(k, GeneratorRole.SUBGOAL_GEN),
        config,
        dataset_refs,
        endpoint_slots,
    )
    if psg is not None:
        _write_dataset_with_manifest(
            psg,
            GeneratorRole.POSTERIOR_SUBGOAL_GEN,
            base / GeneratorRole.POSTERIOR_SUBGOAL_GEN.value,
            endpoint_slot(k, GeneratorRole.POSTERIOR_SUBGOAL_GEN),
            config,
            dataset_refs,
            endpoint_slots,
        )

    curator.write_examples(fpg, base / "formal_proof_gen" / "base.jsonl")
    policy = DropPolicy(rates=config.drop_rates)
    variants = curator.fpg_variants(
        fpg, policy, derive_seed(config.seed, f"k{k}", "fpg-variants")
    )
    for variant_name, examples in variants.items():
        role = variant_role(variant_name)
        _write_dataset_with_manifest(
            examples,
            role,
            base / "formal_proof_gen" / variant_name,
            endpoint_slot(k, role, variant_name),
            config,
            dataset_refs,
            endpoint_slots,
        )
    return dataset_refs, endpoint_slots


def initialize_run(
    config: RunConfig,
    informal: Dataset,
    formal: Dataset,
    benchmark: Dataset | None = None,
    library: TemplateLibrary | None = None,
) -> IterationManifest:
    """Filter corpora, build the initialization datasets, emit manifests."""
    run_dir = Path(config.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    leakage_removed = {"informal": 0, "formal": 0}
    if benchmark is not None and len(benchmark) > 0:
        index = build_ngram_index(benchmark, config.leakage_field)
        filtered_informal = filter_leakage(
            informal, index, config.leakage_threshold, config.leakage_field
        )
        filtered_formal = filter_leakage(
            formal, index, config.leakage_threshold, config.leakage_field
        )
        leakage_removed["informal"] = len(informal) - len(filtered_informal)
        leakage_removed["formal"] = len(formal) - len(filtered_formal)
        informal, formal = filtered_informal, filtered_formal

    write_records(informal, run_dir / "corpora" / "informal.jsonl")
    write_records(formal, run_dir / "corpora" / "formal.jsonl")
    if benchmark is not None:
        write_records(benchmark, run_dir / "corpora" / "benchmark.jsonl")

    d0 = curator.init_datasets(informal, formal, include_subgoals=config.use_subgoals)
    dataset_refs, endpoint_slots = _write_role_datasets(
        0, run_dir, config, d0.fsg, d0.sg, d0.fpg, d0.psg
    )

    manifest = IterationManifest(
        k=0,
        config_snapshot=config.to_dict(),
        dataset_refs=dataset_refs,
        endpoint_slots=endpoint_slots,
        sampled_counts={
            "excluded": d0.excluded,
            "leakage_removed": leakage_removed,
        },
    )
    manifest.write(_iter_dir(run_dir, 0) / "manifest.json")
    return manifest


def _load_init_datasets(run_dir: Path) -> InitDatasets:
    base = _iter_dir(run_dir, 0)
    if not base.exists():
        raise OrchestratorError("run directory has no initialization datasets; run init first")
    return InitDatasets(
        fsg=curator.read_examples(base / GeneratorRole.FORMAL_STATEMENT_GEN.value / "data.jsonl"),
        fpg=curator.read_examples(base / "formal_proof_gen" / "base.jsonl"),
        sg=curator.read_examples(base / GeneratorRole.SUBGOAL_GEN.value / "data.jsonl"),
        psg=curator.read_examples(
            base / GeneratorRole.POSTERIOR_SUBGOAL_GEN.value / "data.jsonl"
        ),
        excluded={},
    )


# ---------------------------------------------------------------------------
# One expert-learning iteration
# ---------------------------------------------------------------------------


class _Journal:
    """Append-only job journal giving exactly-once dataset contributions."""

    def __init__(self, path: Path):
        self.path = path
        self.entries: dict[str, dict] = {}
        if path.exists():
            with path.open("r", encoding="utf-8") as handle:
                for line in handle:
                    if line.strip():
                        entry = json.loads(line)
                        self.entries[entry["job"]] = entry["payload"]

    def get(self, job: str) -> Optional[dict]:
        return self.entries.get(job)

    def put(self, job: str, payload: dict) -> None:
        if job in self.entries:
            return
        self.entries[job] = payload
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as handle:
            handle.write(json.dumps({"job": job, "payload": payload}, ensure_ascii=False))
            handle.write("\n")


def _sample_payload(result: SampleResult, pair_selections: bool) -> dict:
    diagnostics = []
    if result.outcome is not None:
        diagnostics = [asdict(d) for d in result.outcome.diagnostics]
    selections = (
        [list(pair) for pair in result.selections] if pair_selections else list(result.selections)
    )
    return {
        "selections": selections,
        "attempted": result.attempted,
        "dropped": result.dropped,
        "log_normalizer": result.outcome.log_normalizer if result.outcome else None,
        "kl_estimate": result.outcome.kl_estimate if result.outcome else None,
        "diagnostics": diagnostics,
    }


def _run_sample_job(fn, pair_selections: bool, attempted: int) -> dict:
    """The retry budget lives in the client; a job that still fails is
    recorded as failed (empty selections) rather than aborting the run."""
    try:
        return _sample_payload(fn(), pair_selections)
    except GenClientError as exc:
        return {
            "selections": [],
            "attempted": attempted,
            "dropped": attempted,
            "log_normalizer": None,
            "kl_estimate": None,
            "diagnostics": [],
            "error": str(exc),
        }


def run_iteration(
    k: int,
    config: RunConfig,
    resolver: EndpointResolver,
    prover_cfg: ProverConfig,
    library: TemplateLibrary | None = None,
) -> IterationManifest:
    """Execute iteration ``k``: sample, verify, assemble datasets, emit manifests.

    Re-running with the same seed resumes from the journal and reproduces the
    dataset files byte for byte.  The journal guarantees exactly-once dataset
    contribution per job; byte-identical resumption after a partial
    interruption additionally requires endpoints whose responses are a pure
    function of the request (the stub service's per-request determinism),
    since jobs replayed against a stateful endpoint see a fresh stream.
    """
    if k < 1 or k > config.k_max:
        raise OrchestratorError(f"iteration {k} outside [1, {config.k_max}]")
    run_dir = Path(config.run_dir)
    informal = read_records(run_dir / "corpora" / "informal.jsonl")
    formal = read_records(run_dir / "corpora" / "formal.jsonl")
    d0 = _load_init_datasets(run_dir)

    iter_dir = _iter_dir(run_dir, k)
    iter_dir.mkdir(parents=True, exist_ok=True)
    journal = _Journal(iter_dir / "journal.jsonl")

    fsg_prop = resolver.resolve(k - 1, GeneratorRole.FORMAL_STATEMENT_GEN)
    sg_prop = resolver.resolve(k - 1, GeneratorRole.SUBGOAL_GEN)
    fpg_role = variant_role(config.sampling_fpg_variant)
    fpg_prop = resolver.resolve(k - 1, fpg_role, config.sampling_fpg_variant)
    # The posterior scorer is trained once at initialization and stays fixed.
    psg_score = resolver.resolve(0, GeneratorRole.POSTERIOR_SUBGOAL_GEN)

    def cfg_for(problem_id: str, op: str) -> ResampleConfig:
        return ResampleConfig(
            beta=config.beta,
            n_candidates=config.n_candidates,
            m=config.m,
            replacement=False,
            seed=derive_seed(config.seed, problem_id, f"k{k}:{op}"),
        )

    counts = {
        "informal": {"problems": 0, "statements": 0, "proofs": 0, "dropped": 0, "skipped": 0},
        "formal": {"problems": 0, "subgoals": 0, "dropped": 0, "skipped": 0},
        "synthetic": {"attempted": 0, "verified": 0},
    }
    informal_samples: list[InformalSamples] = []
    formal_samples: list[FormalSamples] = []
    diagnostics_lines: list[str] = []

    def record_diag(problem_id: str, op: str, payload: dict) -> None:
        diagnostics_lines.append(
            json.dumps(
                {
                    "problem": problem_id,
                    "op": op,
                    "log_normalizer": payload.get("log_normalizer"),
                    "kl_estimate": payload.get("kl_estimate"),
                    "diagnostics": payload.get("diagnostics", []),
                },
                ensure_ascii=False,
                sort_keys=True,
            )
        )

    for record in informal:
        if record.informal_statement is None or record.subgoal_proof is None:
            counts["informal"]["skipped"] += 1
            continue
        counts["informal"]["problems"] += 1

        job = f"{record.id}:statements"
        payload = journal.get(job)
        if payload is None:
            payload = _run_sample_job(
                lambda: sample_formal_statement(
                    record, fsg_prop, sg_prop, cfg_for(record.id, "statements"), library
                ),
                pair_selections=False,
                attempted=config.n_candidates,
            )
            journal.put(job, payload)
        record_diag(record.id, "statements", payload)
        statements = list(payload["selections"])
        counts["informal"]["statements"] += len(statements)
        counts["informal"]["dropped"] += payload["dropped"]

        job = f"{record.id}:proofs"
        payload = journal.get(job)
        if payload is None:
            payload = _run_sample_job(
                lambda: sample_formal_proof(
                    record, fsg_prop, fpg_prop, psg_score, cfg_for(record.id, "proofs"), library
                ),
                pair_selections=True,
                attempted=config.n_candidates,
            )
            journal.put(job, payload)
        record_diag(record.id, "proofs", payload)
        pairs = [tuple(pair) for pair in payload["selections"]]
        counts["informal"]["proofs"] += len(pairs)
        counts["informal"]["dropped"] += payload["dropped"]

        informal_samples.append(
            InformalSamples(problem=record, statements=statements, proof_pairs=pairs)
        )

    for record in formal:
        if (
            record.informal_statement is None
            or record.formal_statement is None
            or record.formal_proof is None
        ):
            counts["formal"]["skipped"] += 1
            continue
        counts["formal"]["problems"] += 1
        job = f"{record.id}:subgoals"
        payload = journal.get(job)
        if payload is None:
            payload = _run_sample_job(
                lambda: sample_subgoal(
                    record, sg_prop, fpg_prop, cfg_for(record.id, "subgoals"), library
                ),
                pair_selections=False,
                attempted=config.n_candidates,
            )
            journal.put(job, payload)
        record_diag(record.id, "subgoals", payload)
        subgoals = list(payload["selections"])
        counts["formal"]["subgoals"] += len(subgoals)
        counts["formal"]["dropped"] += payload["dropped"]
        formal_samples.append(FormalSamples(problem=record, subgoals=subgoals))

    # Verify the sampled informal-side proofs (the formal-side proofs are the
    # original library proofs and are not re-verified).
    verdicts: dict[str, list[VerificationResult]] = {}
    to_verify = []
    for item in informal_samples:
        job = f"{item.problem.id}:verdicts"
        cached = journal.get(job)
        if cached is None:
            for index, (statement, proof) in enumerate(item.proof_pairs):
                to_verify.append(((item.problem.id, index), statement, proof))
    if to_verify:
        raw_results = verify_many(prover_cfg, to_verify)
    else:
        raw_results = {}
    for item in informal_samples:
        job = f"{item.problem.id}:verdicts"
        cached = journal.get(job)
        if cached is None:
            statuses = []
            for index in range(len(item.proof_pairs)):
                result = raw_results[(item.problem.id, index)]
                statuses.append(result.to_dict())
            cached = {"results": statuses}
            journal.put(job, cached)
        results = []
        for raw in cached["results"]:
            results.append(
                VerificationResult(
                    status=VerificationStatus(raw["status"]),
                    prover_version=raw.get("prover_version"),
                    error_message=raw.get("error_message"),
                    error_category=(
                        ErrorCategory(raw["error_category"])
                        if raw.get("error_category")
                        else None
                    ),
                    elapsed_ms=raw.get("elapsed_ms", 0),
                )
            )
        verdicts[item.problem.id] = results
        counts["synthetic"]["attempted"] += len(results)
        counts["synthetic"]["verified"] += sum(
            1 for r in results if r.status == VerificationStatus.VALID
        )

    datasets = curator.assemble_iteration(
        k,
        d0,
        informal_samples,
        formal_samples,
        verdicts,
        include_subgoals=config.use_subgoals,
    )
    dataset_refs, endpoint_slots = _write_role_datasets(
        k, run_dir, config, datasets.fsg, datasets.sg, datasets.fpg, psg=None
    )

    (iter_dir / "diagnostics.jsonl").write_text(
        "".join(line + "\n" for line in diagnostics_lines), encoding="utf-8"
    )

    counts["synthetic"]["pass_rate"] = synthetic_pass_rate(counts["synthetic"])
    manifest = IterationManifest(
        k=k,
        config_snapshot=config.to_dict(),
        dataset_refs=dataset_refs,
        endpoint_slots=endpoint_slots,
        sampled_counts=counts,
    )
    manifest.write(iter_dir / "manifest.json")
    return manifest


def run_expert_loop(
    config: RunConfig,
    resolver: EndpointResolver,
    prover_cfg: ProverConfig,
    informal: Dataset,
    formal: Dataset,
    benchmark: Dataset | None = None,
    library: TemplateLibrary | None = None,
) -> list[IterationManifest]:
    """Initialization plus all ``k_max`` iterations; returns every manifest."""
    manifests = [initialize_run(config, informal, formal, benchmark, library)]
    for k in range(1, config.k_max + 1):
        if config.wait_endpoints:
            wait_for_endpoints(
                Path(config.run_dir) / "registry.json",
                manifests[-1].endpoint_slots,
                timeout_s=config.endpoint_wait_timeout_s,
                poll_s=config.endpoint_poll_s,
            )
        manifests.append(run_iteration(k, config, resolver, prover_cfg, library))
    return manifests


# ---------------------------------------------------------------------------
# Benchmark evaluation
# ---------------------------------------------------------------------------

ARM_WITH_INFORMAL = "with_informal"
ARM_WITHOUT_INFORMAL = "without_informal"


def _arm_record(record: ProblemRecord, arm: str, use_subgoals: bool) -> ProblemRecord:
    # The proof-generator prompt's plan slot carries the human informal proof
    # in the with-informal arm and stays empty otherwise (the model supplies
    # its own plan in the completion).
    if arm == ARM_WITH_INFORMAL:
        if record.informal_proof is None:
            raise OrchestratorError(
                f"problem {record.id} lacks an informal proof for the {arm} arm"
            )
        return replace(record, subgoal_proof=record.informal_proof)
    return replace(record, subgoal_proof="")


def evaluate(
    benchmark: Dataset,
    endpoints: Sequence[RoleEndpoint],
    budget_per_endpoint: int,
    arms: Sequence[str] = (ARM_WITH_INFORMAL, ARM_WITHOUT_INFORMAL),
    prover_cfg: ProverConfig | None = None,
    library: TemplateLibrary | None = None,
    split: str = "valid",
    use_subgoals: bool = True,
) -> MetricsBundle:
    """Run the proof-attempt harness over the benchmark.

    Attempts interleave round-robin across endpoints, then arms, then sample
    index; a problem is solved when any attempt verifies.  Generator, parse,
    and prover failures consume budget and land in the error histogram; they
    never abort the evaluation.
    """
    if prover_cfg is None:
        raise OrchestratorError("evaluate requires a prover configuration")
    if budget_per_endpoint < 0:
        raise OrchestratorError("budget must be >= 0")
    for record in benchmark:
        if record.informal_statement is None or record.formal_statement is None:
            raise OrchestratorError(f"benchmark record {record.id} lacks s or S")

    plan = [
        (sample_index, arm, endpoint)
        for sample_index in range(budget_per_endpoint)
        for arm in arms
        for endpoint in endpoints
    ]
    total_attempts_per_problem = len(plan)

    solved_at: dict[str, int] = {}
    solved_by_arm: dict[str, set] = {arm: set() for arm in arms}
    histogram: dict[str, int] = {}
    attempts = 0
    failed_attempts = 0

    def register_failure(category: ErrorCategory) -> None:
        nonlocal failed_attempts
        failed_attempts += 1
        histogram[category.value] = histogram.get(category.value, 0) + 1

    for record in benchmark:
        arm_solved = {arm: False for arm in arms}
        for n, (sample_index, arm, endpoint) in enumerate(plan, start=1):
            if arm_solved[arm]:
                continue
            if all(arm_solved.values()):
                break
            attempts += 1
            try:
                prompt = render(endpoint.role, _arm_record(record, arm, use_subgoals), library)
                completion = endpoint.endpoint.sample(prompt, 1)[0].text
            except GenClientError:
                register_failure(ErrorCategory.OTHER)
                continue
            try:
                proof = parse_completion(endpoint.role, completion)
            except CompletionParseError:
                register_failure(ErrorCategory.OTHER)
                continue
            result = verify(prover_cfg, record.formal_statement, proof)
            if result.status == VerificationStatus.VALID:
                arm_solved[arm] = True
                solved_by_arm[arm].add(record.id)
                solved_at.setdefault(record.id, n)
            else:
                register_failure(result.error_category or ErrorCategory.OTHER)

    total = len(benchmark)
    solved = len(solved_at)
    pass_at_n = []
    for n in range(1, total_attempts_per_problem + 1):
        cumulative = sum(1 for first in solved_at.values() if first <= n)
        pass_at_n.append((n, 100.0 * cumulative / total if total else 0.0))

    bundle = MetricsBundle(
        solved=solved,
        total=total,
        attempts=attempts,
        failed_attempts=failed_attempts,
        pass_at_n=pass_at_n,
        arm_pass_rates={
            arm: round_half_up(100.0 * len(ids) / total, 2) if total else 0.0
            for arm, ids in solved_by_arm.items()
        },
        error_histogram=dict(sorted(histogram.items())),
    )
    headline = pass_rate_percent(solved, total)
    if split == "test":
        bundle.pass_rate_test = headline
    else:
        bundle.pass_rate_valid = headline
    return bundle


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def report(run_dir: str | Path) -> dict[str, Path]:
    """Render per-iteration series and histogram tables; deterministic."""
    run_dir = Path(run_dir)
    manifest_paths = sorted(run_dir.glob("[0-9][0-9][0-9]/manifest.json"))
    if not manifest_paths:
        raise OrchestratorError(f"no iteration manifests under {run_dir}")
    manifests = [IterationManifest.read(path) for path in manifest_paths]

    out_dir = run_dir / "report"
    out_dir.mkdir(parents=True, exist_ok=True)

    pass_rows = []
    synthetic_rows = []
    histogram_total: dict[str, int] = {}
    for manifest in manifests:
        metrics = manifest.metrics or {}
        for arm, value in sorted((metrics.get("arm_pass_rates") or {}).items()):
            pass_rows.append((manifest.k, arm, value))
        headline = metrics.get("pass_rate_valid")
        if headline is None:
            headline = metrics.get("pass_rate_test")
        if headline is not None:
            pass_rows.append((manifest.k, "overall", headline))
        for category, count in (metrics.get("error_histogram") or {}).items():
            histogram_total[category] = histogram_total.get(category, 0) + count
        synthetic = (manifest.sampled_counts.get("synthetic") or {}).get("pass_rate")
        synthetic_rows.append((manifest.k, synthetic))

    paths = {}

    paths["pass_rates"] = out_dir / "pass_rates.csv"
    with paths["pass_rates"].open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "arm", "pass_rate_percent"])
        writer.writerows(pass_rows)

    paths["synthetic"] = out_dir / "synthetic_pass_rates.csv"
    with paths["synthetic"].open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["iteration", "synthetic_pass_rate_percent"])
        for k, value in synthetic_rows:
            writer.writerow([k, "" if value is None else value])

    paths["histogram"] = out_dir / "error_histogram.csv"
    ordered = sorted(histogram_total.items(), key=lambda kv: (-kv[1], kv[0]))
    with paths["histogram"].open("w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["category", "count"])
        writer.writerows(ordered)

    paths["summary"] = out_dir / "summary.json"
    summary = {
        "iterations": [asdict(m) for m in manifests],
        "error_histogram_total": dict(ordered),
        "synthetic_series": [[k, v] for k, v in synthetic_rows],
        "pass_rate_series": [[k, arm, v] for k, arm, v in pass_rows],
    }
    paths["summary"].write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return paths


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _build_prover_cfg(config: RunConfig) -> ProverConfig:
    if not config.prover_versions:
        raise OrchestratorError("config.prover_versions is empty")
    versions = [(name, HttpProver(url)) for name, url in config.prover_versions.items()]
    return ProverConfig(
        versions=versions,
        job_timeout_s=config.job_timeout_s,
        max_parallel=config.max_parallel_provers,
    )


def _load_corpora(config: RunConfig) -> tuple[Dataset, Dataset, Optional[Dataset]]:
    if not config.informal_path or not config.formal_path:
        raise OrchestratorError("config must set informal_path and formal_path")
    informal = read_records(config.informal_path)
    formal = read_records(config.formal_path)
    benchmark = read_records(config.benchmark_path) if config.benchmark_path else None
    return informal, formal, benchmark


def _library(config: RunConfig) -> TemplateLibrary | None:
    return TemplateLibrary(config.template_dir) if config.template_dir else None


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="forge", description="Expert-learning pipeline orchestrator."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name in ("init", "iterate", "evaluate", "report", "run"):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True)
        if name == "iterate":
            cmd.add_argument("--k", type=int, required=True)
        if name == "evaluate":
            cmd.add_argument("--k", type=int, default=None, help="attach metrics to this manifest")
            cmd.add_argument("--split", choices=("valid", "test"), default="valid")
            cmd.add_argument(
                "--endpoint-slots",
                default=None,
                help="comma list of registry slots serving proof generators",
            )
    example = sub.add_parser("example-config")
    example.add_argument("path")

    args = parser.parse_args(argv)

    if args.command == "example-config":
        write_example_config(args.path)
        print(f"wrote {args.path}")
        return 0

    config = load_config(args.config)
    run_dir = Path(config.run_dir)

    if args.command == "report":
        paths = report(run_dir)
        for name, path in sorted(paths.items()):
            print(f"{name}: {path}")
        return 0

    with RunLock(run_dir):
        if args.command == "init":
            informal, formal, benchmark = _load_corpora(config)
            library = _library(config)
            if config.annotator_endpoints:
                annotators = {
                    GeneratorRole(role): HttpGeneratorClient(
                        EndpointConfig(
                            base_url=url,
                            role=GeneratorRole(role),
                            temperature=config.temperature,
                            max_tokens=config.max_tokens,
                        )
                    )
                    for role, url in config.annotator_endpoints.items()
                }
                prover_cfg = _build_prover_cfg(config) if config.prover_versions else None
                informal, formal, counts = annotate_corpora(
                    informal, formal, annotators, prover_cfg, library
                )
                print(f"annotation: {counts}")
            manifest = initialize_run(config, informal, formal, benchmark, library)
            print(f"initialized run at {run_dir}; slots: {manifest.endpoint_slots}")
            return 0

        if args.command == "iterate":
            resolver = RegistryResolver(run_dir / "registry.json", config)
            manifest = run_iteration(
                args.k, config, resolver, _build_prover_cfg(config), _library(config)
            )
            print(
                f"iteration {args.k}: counts {manifest.sampled_counts['synthetic']}"
            )
            return 0

        if args.command == "run":
            informal, formal, benchmark = _load_corpora(config)
            resolver = RegistryResolver(run_dir / "registry.json", config)
            manifests = run_expert_loop(
                config,
                resolver,
                _build_prover_cfg(config),
                informal,
                formal,
                benchmark,
                _library(config),
            )
            print(f"completed {len(manifests) - 1} iterations")
            return 0

        if args.command == "evaluate":
            if not config.benchmark_path:
                raise OrchestratorError("config must set benchmark_path")
            benchmark = read_records(config.benchmark_path)
            registry = load_registry(run_dir / "registry.json")
            if args.endpoint_slots:
                slots = [s.strip() for s in args.endpoint_slots.split(",")]
            else:
                slots = [
                    slot for slot in sorted(registry) if "/formal_proof_gen" in slot
                ]
            if not slots:
                raise OrchestratorError("no proof-generator endpoint slots available")
            endpoints = []
            for slot in slots:
                variant = slot.rsplit("/", 1)[-1]
                role = variant_role(variant) if variant.startswith(("t1", "t2")) else (
                    GeneratorRole.FORMAL_PROOF_GEN_T1
                )
                endpoints.append(
                    RoleEndpoint(
                        role=role,
                        endpoint=HttpGeneratorClient(
                            EndpointConfig(
                                base_url=registry[slot],
                                role=role,
                                temperature=config.temperature,
                                max_tokens=config.max_tokens,
                            )
                        ),
                    )
                )
            bundle = evaluate(
                benchmark,
                endpoints,
                config.budget_per_endpoint_per_arm,
                config.arms,
                _build_prover_cfg(config),
                _library(config),
                split=args.split,
                use_subgoals=config.use_subgoals,
            )
            print(json.dumps(bundle.to_dict(), indent=2, sort_keys=True))
            if args.k is not None:
                manifest_path = _iter_dir(run_dir, args.k) / "manifest.json"
                manifest = IterationManifest.read(manifest_path)
                manifest.metrics = bundle.to_dict()
                manifest.write(manifest_path)
            return 0

    return 1


if __name__ == "__main__":
    raise SystemExit(main())


__all__ = [
    "ARM_WITHOUT_INFORMAL",
    "ARM_WITH_INFORMAL",
    "EndpointResolver",
    "IterationManifest",
    "MetricsBundle",
    "OrchestratorError",
    "RegistryResolver",
    "RunLock",
    "StaticResolver",
    "annotate_corpora",
    "endpoint_slot",
    "evaluate",
    "initialize_run",
    "load_registry",
    "main",
    "pass_rate_percent",
    "register_endpoint",
    "report",
    "round_half_up",
    "run_expert_loop",
    "run_iteration",
    "synthetic_pass_rate",
    "variant_role",
    "wait_for_endpoints",
]
