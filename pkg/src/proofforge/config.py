"""Run configuration: every pipeline default in one place.

Loadable from YAML or JSON.  Defaults mirror the published recipe: KL
temperature 1.0, sample size m=2, K_max=3 iterations, drop rates
{1: 0.8, 2: 0.6, 3: 0.4}, 10% trigram leakage threshold, 120 s prover
timeout, temperature 0.8 with 2048-token generations, and training
hyperparameters lr 1e-5 / 3 epochs / 8192-token sequences.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import yaml


@dataclass
class RunConfig:
    # Reproducibility
    seed: int = 0

    # Expert-learning loop
    beta: float = 1.0
    m: int = 2
    n_candidates: int = 8
    k_max: int = 3
    sampling_fpg_variant: str = "t1_all"
    use_subgoals: bool = True  # False: the -subgoal ablation

    # Dataset curation
    drop_rates: dict[int, float] = field(default_factory=lambda: {1: 0.8, 2: 0.6, 3: 0.4})
    leakage_threshold: float = 0.10
    leakage_field: str = "informal_statement"

    # Generation
    temperature: float = 0.8  # the recipe alternates 0.6 and 0.8
    max_tokens: int = 2048
    generator_retry_limit: int = 3
    max_parallel_generators: int = 8

    # Training manifests
    base_model_id: str = "llama-3-8b"
    learning_rate: float = 1e-5
    epochs: int = 3
    max_sequence_length: int = 8192

    # Verification
    prover_versions: dict[str, str] = field(default_factory=dict)  # name -> URL
    job_timeout_s: int = 120
    max_parallel_provers: int = 8

    # Evaluation
    budget_per_endpoint_per_arm: int = 512
    arms: tuple[str, ...] = ("with_informal", "without_informal")

    # Paths and services
    run_dir: str = "run"
    informal_path: Optional[str] = None
    formal_path: Optional[str] = None
    benchmark_path: Optional[str] = None
    template_dir: Optional[str] = None
    annotator_endpoints: dict[str, str] = field(default_factory=dict)  # role -> URL
    wait_endpoints: bool = False
    endpoint_poll_s: float = 5.0
    endpoint_wait_timeout_s: float = 86400.0

    def __post_init__(self):
        self.drop_rates = {int(k): float(v) for k, v in self.drop_rates.items()}
        self.arms = tuple(self.arms)
        # YAML 1.1 reads bare scientific notation like 1e-5 as a string.
        for name in ("beta", "leakage_threshold", "temperature", "learning_rate"):
            setattr(self, name, float(getattr(self, name)))
        if self.m < 1 or self.n_candidates < 1 or self.k_max < 0:
            raise ValueError("m, n_candidates must be >= 1 and k_max >= 0")
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if not 0.0 <= self.leakage_threshold <= 1.0:
            raise ValueError("leakage_threshold must be in [0, 1]")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["arms"] = list(self.arms)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix in (".yaml", ".yml"):
        raw = yaml.safe_load(text) or {}
    else:
        raw = json.loads(text)
    return RunConfig.from_dict(raw)


def write_example_config(path: str | Path) -> None:
    """Write a commented YAML config carrying every default."""
    cfg = RunConfig()
    lines = [
        "# Pipeline configuration; values shown are the defaults.",
        f"seed: {cfg.seed}",
        "",
        "# Expert-learning loop",
        f"beta: {cfg.beta}          # KL temperature of the reward reweighting",
        f"m: {cfg.m}                # kept samples per problem per iteration",
        f"n_candidates: {cfg.n_candidates}     # proposal draws per problem",
        f"k_max: {cfg.k_max}            # expert-learning iterations",
        f"sampling_fpg_variant: {cfg.sampling_fpg_variant}   # proposal proof generator variant",
        f"use_subgoals: {str(cfg.use_subgoals).lower()}   # false runs the -subgoal ablation",
        "",
        "# Dataset curation",
        "drop_rates:          # Bernoulli drop probability by proof step count",
        "  1: 0.8",
        "  2: 0.6",
        "  3: 0.4",
        f"leakage_threshold: {cfg.leakage_threshold}   # max benchmark trigram overlap",
        f"leakage_field: {cfg.leakage_field}",
        "",
        "# Generation",
        f"temperature: {cfg.temperature}     # the recipe alternates 0.6 and 0.8",
        f"max_tokens: {cfg.max_tokens}",
        f"generator_retry_limit: {cfg.generator_retry_limit}",
        f"max_parallel_generators: {cfg.max_parallel_generators}",
        "",
        "# Training manifests",
        f"base_model_id: {cfg.base_model_id}   # every iteration retrains from this base",
        f"learning_rate: {cfg.learning_rate}",
        f"epochs: {cfg.epochs}",
        f"max_sequence_length: {cfg.max_sequence_length}",
        "",
        "# Verification",
        "prover_versions: {}   # e.g. {isabelle2021: 'http://host:9000', isabelle2022: 'http://host:9001'}",
        f"job_timeout_s: {cfg.job_timeout_s}",
        f"max_parallel_provers: {cfg.max_parallel_provers}",
        "",
        "# Evaluation",
        f"budget_per_endpoint_per_arm: {cfg.budget_per_endpoint_per_arm}",
        "arms: [with_informal, without_informal]",
        "",
        "# Paths and services",
        f"run_dir: {cfg.run_dir}",
        "informal_path: null",
        "formal_path: null",
        "benchmark_path: null",
        "template_dir: null    # null uses the shipped templates",
        "annotator_endpoints: {}   # role -> URL for corpus annotation",
        f"wait_endpoints: {str(cfg.wait_endpoints).lower()}",
        f"endpoint_poll_s: {cfg.endpoint_poll_s}",
        f"endpoint_wait_timeout_s: {cfg.endpoint_wait_timeout_s}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


__all__ = ["RunConfig", "load_config", "write_example_config"]
