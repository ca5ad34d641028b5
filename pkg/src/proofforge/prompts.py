"""Prompt assembly and completion parsing for every generator role.

Each role owns a template (instruction preamble + input layout + shipped
demonstrations) and a begin/end marker pair per target field.  Rendering is
pure string substitution: identical inputs yield byte-identical prompts.
Completions are parsed by locating the role's marker pair; anything after
the end marker is discarded.

The shipped demonstrations are placeholder fixtures with the documented slot
schema; production runs swap in their own template directory.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from .corpus import ProblemRecord


class PromptError(Exception):
    """Base error for template loading, rendering, and parsing."""


class MissingFieldError(PromptError):
    """The record lacks a field the role's template requires."""

    def __init__(self, role: "GeneratorRole", field: str):
        self.role = role
        self.field = field
        super().__init__(f"role {role.value} requires field {field}")


class CompletionParseError(PromptError):
    """The completion does not contain the role's marked target span."""


class GeneratorRole(str, Enum):
    SUBGOAL_ANNOTATOR = "subgoal_annotator"
    FORMAL_STATEMENT_GEN = "formal_statement_gen"
    SUBGOAL_GEN = "subgoal_gen"
    POSTERIOR_SUBGOAL_GEN = "posterior_subgoal_gen"
    FORMAL_PROOF_GEN_T1 = "formal_proof_gen_T1"
    FORMAL_PROOF_GEN_T2 = "formal_proof_gen_T2"
    FORMAL_STATEMENT_ANNOTATOR = "formal_statement_annotator"
    FORMAL_PROOF_ANNOTATOR = "formal_proof_annotator"
    INFORMALIZER = "informalizer"


# One constants table defines the extraction markers for every target field.
MARKERS: dict[str, tuple[str, str]] = {
    "informal_statement": ("<informal_statement>", "</informal_statement>"),
    "informal_proof": ("<informal_proof>", "</informal_proof>"),
    "formal_statement": ("<formal_statement>", "</formal_statement>"),
    "formal_proof": ("<formal_proof>", "</formal_proof>"),
    "subgoal_proof": ("<subgoal_proof>", "</subgoal_proof>"),
}


@dataclass(frozen=True)
class RoleSpec:
    """Input slots and target fields of one generator role."""

    role: GeneratorRole
    inputs: tuple[str, ...]
    targets: tuple[str, ...]

    @property
    def target(self) -> str:
        return self.targets[0]


ROLE_SPECS: dict[GeneratorRole, RoleSpec] = {
    spec.role: spec
    for spec in (
        RoleSpec(
            GeneratorRole.SUBGOAL_ANNOTATOR,
            inputs=("informal_statement", "formal_statement", "formal_proof"),
            targets=("subgoal_proof",),
        ),
        RoleSpec(
            GeneratorRole.FORMAL_STATEMENT_GEN,
            inputs=("informal_statement",),
            targets=("formal_statement",),
        ),
        RoleSpec(
            GeneratorRole.SUBGOAL_GEN,
            inputs=("informal_statement", "formal_statement"),
            targets=("subgoal_proof",),
        ),
        RoleSpec(
            GeneratorRole.POSTERIOR_SUBGOAL_GEN,
            inputs=("informal_statement", "formal_statement", "formal_proof_stripped"),
            targets=("subgoal_proof",),
        ),
        RoleSpec(
            GeneratorRole.FORMAL_PROOF_GEN_T1,
            inputs=("informal_statement", "formal_statement", "subgoal_proof"),
            targets=("formal_proof",),
        ),
        RoleSpec(
            GeneratorRole.FORMAL_PROOF_GEN_T2,
            inputs=("informal_statement", "formal_statement", "subgoal_proof"),
            targets=("formal_proof",),
        ),
        RoleSpec(
            GeneratorRole.FORMAL_STATEMENT_ANNOTATOR,
            inputs=("informal_statement", "informal_proof"),
            targets=("formal_statement",),
        ),
        RoleSpec(
            GeneratorRole.FORMAL_PROOF_ANNOTATOR,
            inputs=("informal_statement", "informal_proof", "formal_statement"),
            targets=("formal_proof",),
        ),
        RoleSpec(
            GeneratorRole.INFORMALIZER,
            inputs=("formal_statement", "formal_proof"),
            targets=("informal_statement", "informal_proof"),
        ),
    )
}


@dataclass(frozen=True)
class PromptTemplate:
    """Skeleton with named slots plus the demonstrations that precede queries."""

    role: GeneratorRole
    preamble: str
    input_layout: str
    demonstrations: tuple[Mapping[str, str], ...]

    def __post_init__(self):
        spec = ROLE_SPECS[self.role]
        layout_slots = set(_SLOT_RE.findall(self.input_layout))
        extra = layout_slots - set(spec.inputs)
        if extra:
            raise PromptError(
                f"template for {self.role.value} names unknown slots: {sorted(extra)}"
            )
        needed = set(spec.inputs) | set(spec.targets)
        for i, demo in enumerate(self.demonstrations):
            missing = needed - set(demo)
            if missing:
                raise PromptError(
                    f"demonstration {i} for {self.role.value} lacks slots: {sorted(missing)}"
                )


_SLOT_RE = re.compile(r"\{([a-z_]+)\}")


def _fill(layout: str, values: Mapping[str, str]) -> str:
    # Plain substitution: slot values are inserted verbatim, so braces inside
    # Isabelle text cannot corrupt the layout.
    return _SLOT_RE.sub(lambda m: values[m.group(1)], layout)


def _demo_block(spec: RoleSpec, template: PromptTemplate, values: Mapping[str, str]) -> str:
    parts = [_fill(template.input_layout, values)]
    for target in spec.targets:
        begin, end = MARKERS[target]
        parts.append(f"{begin}\n{values[target]}\n{end}\n")
    return "".join(parts)


def load_template(role: GeneratorRole, directory: str | Path | None = None) -> PromptTemplate:
    """Load one role's template from ``directory`` (default: shipped fixtures)."""
    name = f"{role.value}.json"
    if directory is None:
        raw = resources.files("proofforge.templates").joinpath(name).read_text("utf-8")
    else:
        path = Path(directory) / name
        if not path.exists():
            raise PromptError(f"no template file for role {role.value} in {directory}")
        raw = path.read_text("utf-8")
    data = json.loads(raw)
    return PromptTemplate(
        role=role,
        preamble=data["preamble"],
        input_layout=data["input_layout"],
        demonstrations=tuple(data["demonstrations"]),
    )


class TemplateLibrary:
    """All role templates, loaded once from a directory."""

    def __init__(self, directory: str | Path | None = None):
        self.templates = {role: load_template(role, directory) for role in GeneratorRole}

    def __getitem__(self, role: GeneratorRole) -> PromptTemplate:
        return self.templates[role]


_default_library: Optional[TemplateLibrary] = None


def default_library() -> TemplateLibrary:
    global _default_library
    if _default_library is None:
        _default_library = TemplateLibrary()
    return _default_library


def render(
    role: GeneratorRole,
    record: ProblemRecord,
    library: TemplateLibrary | None = None,
) -> str:
    """Assemble the role's prompt for ``record``.

    Demonstrations come first, then the query block, which ends right after
    the first target's begin marker so the model continues with the target.
    """
    spec = ROLE_SPECS[role]
    template = (library or default_library())[role]
    values = {}
    for field in spec.inputs:
        value = record.get(field)
        if value is None:
            raise MissingFieldError(role, field)
        values[field] = value
    parts = [template.preamble, "\n\n"]
    for demo in template.demonstrations:
        parts.append(_demo_block(spec, template, demo))
        parts.append("\n")
    parts.append(_fill(template.input_layout, values))
    begin, _ = MARKERS[spec.target]
    parts.append(f"{begin}\n")
    return "".join(parts)


def _extract_span(completion: str, field: str, role: GeneratorRole) -> tuple[str, str]:
    """Return (payload, text after the end marker).

    Query prompts end with an open begin marker, so a completion without the
    begin marker is treated as starting inside the span.
    """
    begin, end = MARKERS[field]
    start = completion.find(begin)
    tail = completion if start < 0 else completion[start + len(begin) :]
    stop = tail.find(end)
    if stop < 0:
        raise CompletionParseError(
            f"completion for {role.value} lacks the {end} marker"
        )
    payload = tail[:stop].strip()
    if not payload:
        raise CompletionParseError(f"empty {field} payload for {role.value}")
    return payload, tail[stop + len(end) :]


def parse_completion(role: GeneratorRole, completion: str) -> str:
    """Extract the role's (first) target span; trailing chatter is dropped."""
    payload, _ = _extract_span(completion, ROLE_SPECS[role].target, role)
    return payload


def parse_all_targets(role: GeneratorRole, completion: str) -> dict[str, str]:
    """Extract every target span of a multi-target role (the informalizer)."""
    spec = ROLE_SPECS[role]
    out = {}
    remaining = completion
    for field in spec.targets:
        out[field], remaining = _extract_span(remaining, field, role)
    return out


def parse_informal_annotation(completion: str) -> tuple[str, str]:
    """Split an informalizer completion into (statement, proof)."""
    parsed = parse_all_targets(GeneratorRole.INFORMALIZER, completion)
    return parsed["informal_statement"], parsed["informal_proof"]


def embed_target(role: GeneratorRole, target: str) -> str:
    """Wrap a target in the role's marker format (the render-echo inverse)."""
    begin, end = MARKERS[ROLE_SPECS[role].target]
    return f"{begin}\n{target}\n{end}\n"


__all__ = [
    "CompletionParseError",
    "GeneratorRole",
    "MARKERS",
    "MissingFieldError",
    "PromptError",
    "PromptTemplate",
    "ROLE_SPECS",
    "RoleSpec",
    "TemplateLibrary",
    "default_library",
    "embed_target",
    "load_template",
    "parse_all_targets",
    "parse_completion",
    "parse_informal_annotation",
    "render",
]
