"""Proof validity gating, outer-syntax checking, and prover dispatch.

A proof reaches the prover only after passing two cheap local gates: a
forbidden-keyword scan (``sorry``/``oops`` as standalone tokens) and a
heuristic outer-syntax check (balanced comments, quotes, cartouches, proof
blocks).  The prover dispatch tries each configured prover version in order
and accepts on the first success; failures are categorized from the error
message.  The outer-syntax checker is a pre-filter, not a parser: false
accepts are fine (the prover is authoritative), false rejects are not.

Wire contract: POST {prover}/v1/verify with {statement, proof, timeout_s}
returns {"status": "ok"|"failed"|"timeout", "error_message"?, "elapsed_ms"?}.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import requests

from .corpus import UnbalancedCommentError, strip_comments
from .pool import run_jobs


class VerificationStatus(str, Enum):
    VALID = "valid"
    INVALID_KEYWORD = "invalid_keyword"
    SYNTAX_REJECTED = "syntax_rejected"
    PROVER_FAILED = "prover_failed"
    TIMEOUT = "timeout"
    TRANSPORT_ERROR = "transport_error"


class ErrorCategory(str, Enum):
    OUTER_SYNTAX_ERROR = "outer_syntax_error"
    FAILED_TO_FINISH_PROOF = "failed_to_finish_proof"
    UNDEFINED_FACT = "undefined_fact"
    TYPE_UNIFICATION_FAILED = "type_unification_failed"
    TIMEOUT = "timeout"
    FAILED_INITIAL_PROOF_METHOD = "failed_initial_proof_method"
    OTHER = "other"


# First match wins.
_CATEGORY_RULES: tuple[tuple[str, ErrorCategory], ...] = (
    ("outer syntax error", ErrorCategory.OUTER_SYNTAX_ERROR),
    ("failed to finish proof", ErrorCategory.FAILED_TO_FINISH_PROOF),
    ("undefined fact", ErrorCategory.UNDEFINED_FACT),
    ("type unification failed", ErrorCategory.TYPE_UNIFICATION_FAILED),
    ("timeout", ErrorCategory.TIMEOUT),
    ("failed to apply initial proof method", ErrorCategory.FAILED_INITIAL_PROOF_METHOD),
)


def categorize_error(message: str) -> ErrorCategory:
    """Map a prover error message to its category; unmatched goes to other."""
    lowered = message.lower()
    for needle, category in _CATEGORY_RULES:
        if needle in lowered:
            return category
    return ErrorCategory.OTHER


@dataclass
class VerificationResult:
    status: VerificationStatus
    prover_version: Optional[str] = None
    error_message: Optional[str] = None
    error_category: Optional[ErrorCategory] = None
    elapsed_ms: int = 0
    version_outcomes: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {"status": self.status.value, "elapsed_ms": self.elapsed_ms}
        if self.prover_version is not None:
            out["prover_version"] = self.prover_version
        if self.error_message is not None:
            out["error_message"] = self.error_message
        if self.error_category is not None:
            out["error_category"] = self.error_category.value
        return out


@dataclass
class ProverResponse:
    """One prover version's answer to a verification request."""

    status: str  # "ok" | "failed" | "timeout"
    error_message: Optional[str] = None
    elapsed_ms: int = 0


class ProverLike(Protocol):
    def check(self, statement: str, proof: str, timeout_s: int) -> ProverResponse: ...


class ProverTransportError(Exception):
    """The prover service could not be reached."""


# Documentation of the automation the external prover applies before falling
# back to plain Sledgehammer: 11 common tactics, 10 seconds each.
DEFAULT_TACTIC_NOTE = (
    "heuristic set: auto, simp, blast, fastforce, force, eval, presburger, "
    "sos, arith, linarith, auto simp: field_simps; 10 s per tactic, then "
    "Sledgehammer with E/CVC4/Z3/Vampire/SPASS"
)


@dataclass
class ProverConfig:
    """Ordered prover versions plus dispatch limits."""

    versions: Sequence[tuple[str, ProverLike]]
    job_timeout_s: int = 120
    max_parallel: int = 8
    retry_limit: int = 3
    retry_backoff_s: float = 0.5
    forbidden_keywords: tuple[str, ...] = ("sorry", "oops")
    tactic_note: str = DEFAULT_TACTIC_NOTE

    def __post_init__(self):
        if not self.versions:
            raise ValueError("at least one prover version is required")
        if self.job_timeout_s <= 0:
            raise ValueError("job_timeout_s must be positive")


_WORD_RE = re.compile(r"[A-Za-z0-9_']+")


def validity_gate(proof: str, keywords: Sequence[str] = ("sorry", "oops")) -> Optional[str]:
    """Return the first forbidden keyword found as a standalone token, else None.

    Operates on comment-stripped text so keywords inside comments or larger
    identifiers do not reject.
    """
    try:
        text = strip_comments(proof)
    except UnbalancedCommentError:
        text = proof  # the syntax checker will flag the comments
    forbidden = set(keywords)
    for token in _WORD_RE.findall(text):
        if token in forbidden:
            return token
    return None


def _scan_tokens(text: str) -> tuple[list[str], list[str]]:
    """Lex word/period tokens outside comments, strings, and cartouches.

    Returns (tokens, balance findings).
    """
    findings: list[str] = []
    tokens: list[str] = []
    word: list[str] = []
    i = 0
    n = len(text)
    comment_depth = 0
    cartouche_depth = 0
    in_string = False

    def flush():
        if word:
            tokens.append("".join(word))
            word.clear()

    while i < n:
        ch = text[i]
        pair = text[i : i + 2]
        if comment_depth > 0:
            if pair == "(*":
                comment_depth += 1
                i += 2
            elif pair == "*)":
                comment_depth -= 1
                i += 2
            else:
                i += 1
            continue
        if in_string:
            if ch == "\\" and i + 1 < n:
                i += 2
            elif ch == '"':
                in_string = False
                i += 1
            else:
                i += 1
            continue
        if cartouche_depth > 0:
            if ch == "‹" or text[i : i + 7] == "\\<open>":
                cartouche_depth += 1
                i += 7 if text[i : i + 7] == "\\<open>" else 1
            elif ch == "›" or text[i : i + 8] == "\\<close>":
                cartouche_depth -= 1
                i += 8 if text[i : i + 8] == "\\<close>" else 1
            else:
                i += 1
            continue
        if pair == "(*":
            flush()
            comment_depth = 1
            i += 2
            continue
        if pair == "*)":
            findings.append("unmatched comment close '*)'")
            i += 2
            continue
        if ch == '"':
            flush()
            in_string = True
            i += 1
            continue
        if ch == "‹" or text[i : i + 7] == "\\<open>":
            flush()
            cartouche_depth = 1
            i += 7 if text[i : i + 7] == "\\<open>" else 1
            continue
        if ch == "›" or text[i : i + 8] == "\\<close>":
            findings.append("unmatched cartouche close")
            i += 8 if text[i : i + 8] == "\\<close>" else 1
            continue
        if ch.isalnum() or ch in "_'?":
            word.append(ch)
            i += 1
            continue
        flush()
        if ch == ".":
            if pair == "..":
                tokens.append("..")
                i += 2
            else:
                tokens.append(".")
                i += 1
            continue
        i += 1
    flush()
    if comment_depth > 0:
        findings.append("unclosed comment '(*'")
    if in_string:
        findings.append("unbalanced quotation")
    if cartouche_depth > 0:
        findings.append("unclosed cartouche")
    return tokens, findings


_OBLIGATION_OPENERS = frozenset({"have", "show", "obtain", "hence", "thus"})
_OBLIGATION_CLOSERS = frozenset({"by", ".", ".."})


def check_outer_syntax(proof: str) -> list[str]:
    """Heuristic outer-syntax findings; an empty list means ok."""
    tokens, findings = _scan_tokens(proof)
    depth = 0
    pending = 0
    for token in tokens:
        if token == "proof":
            depth += 1
            if pending:
                pending -= 1
        elif token == "qed":
            if depth == 0:
                findings.append("qed without matching proof")
            else:
                depth -= 1
        elif token in _OBLIGATION_OPENERS:
            pending += 1
        elif token in _OBLIGATION_CLOSERS:
            if pending:
                pending -= 1
    if depth > 0:
        findings.append("unclosed proof block")
    if pending > 0:
        findings.append("goal statement without terminating justification")
    return findings


class MockProver:
    """Scriptable in-process prover used by tests; counts its calls."""

    def __init__(self, responder: Callable[[str, str], ProverResponse] | ProverResponse):
        self._responder = responder
        self.calls = 0

    def check(self, statement: str, proof: str, timeout_s: int) -> ProverResponse:
        self.calls += 1
        if callable(self._responder):
            return self._responder(statement, proof)
        return self._responder

    @classmethod
    def always_valid(cls) -> "MockProver":
        return cls(ProverResponse(status="ok", elapsed_ms=1))

    @classmethod
    def always_failing(cls, message: str) -> "MockProver":
        return cls(ProverResponse(status="failed", error_message=message, elapsed_ms=1))

    @classmethod
    def always_timeout(cls) -> "MockProver":
        return cls(ProverResponse(status="timeout", elapsed_ms=1))


class HttpProver:
    """HTTP client for one prover service version."""

    def __init__(self, base_url: str, session: requests.Session | None = None):
        self.base_url = base_url.rstrip("/")
        self._session = session or requests.Session()

    def check(self, statement: str, proof: str, timeout_s: int) -> ProverResponse:
        body = {"statement": statement, "proof": proof, "timeout_s": timeout_s}
        try:
            response = self._session.post(
                f"{self.base_url}/v1/verify", json=body, timeout=timeout_s + 10
            )
        except requests.Timeout:
            return ProverResponse(status="timeout", elapsed_ms=timeout_s * 1000)
        except requests.RequestException as exc:
            raise ProverTransportError(str(exc)) from exc
        if response.status_code != 200:
            raise ProverTransportError(
                f"{self.base_url} returned status {response.status_code}"
            )
        try:
            payload = response.json()
        except ValueError as exc:
            raise ProverTransportError(f"{self.base_url} returned non-JSON body") from exc
        status = payload.get("status")
        if status not in ("ok", "failed", "timeout"):
            raise ProverTransportError(f"{self.base_url} returned bad status {status!r}")
        return ProverResponse(
            status=status,
            error_message=payload.get("error_message"),
            elapsed_ms=int(payload.get("elapsed_ms", 0)),
        )


def _call_version(
    prover: ProverLike, statement: str, proof: str, cfg: ProverConfig
) -> ProverResponse:
    last: Exception | None = None
    for attempt in range(cfg.retry_limit + 1):
        if attempt and cfg.retry_backoff_s:
            time.sleep(cfg.retry_backoff_s * 2 ** (attempt - 1))
        try:
            return prover.check(statement, proof, cfg.job_timeout_s)
        except ProverTransportError as exc:
            last = exc
    raise ProverTransportError(str(last))


def verify(cfg: ProverConfig, statement: str, proof: str) -> VerificationResult:
    """Gate locally, then try each prover version in order.

    Valid on the first success; otherwise the first version's failure (with
    its category) is reported and every version's outcome is kept in
    ``version_outcomes`` for diagnostics.  Gate failures never reach a
    prover.
    """
    started = time.monotonic()

    def elapsed_ms() -> int:
        return int((time.monotonic() - started) * 1000)

    keyword = validity_gate(proof, cfg.forbidden_keywords)
    if keyword is not None:
        return VerificationResult(
            status=VerificationStatus.INVALID_KEYWORD,
            error_message=f"forbidden keyword: {keyword}",
            error_category=ErrorCategory.OTHER,
            elapsed_ms=elapsed_ms(),
        )
    findings = check_outer_syntax(proof)
    if findings:
        return VerificationResult(
            status=VerificationStatus.SYNTAX_REJECTED,
            error_message="; ".join(findings),
            error_category=ErrorCategory.OUTER_SYNTAX_ERROR,
            elapsed_ms=elapsed_ms(),
        )

    outcomes: dict[str, str] = {}
    first_failure: Optional[tuple[str, ProverResponse]] = None
    for name, prover in cfg.versions:
        try:
            response = _call_version(prover, statement, proof, cfg)
        except ProverTransportError as exc:
            outcomes[name] = f"transport: {exc}"
            continue
        if response.status == "ok":
            outcomes[name] = "ok"
            return VerificationResult(
                status=VerificationStatus.VALID,
                prover_version=name,
                elapsed_ms=elapsed_ms(),
                version_outcomes=outcomes,
            )
        outcomes[name] = f"{response.status}: {response.error_message or ''}"
        if first_failure is None:
            first_failure = (name, response)

    if first_failure is None:
        return VerificationResult(
            status=VerificationStatus.TRANSPORT_ERROR,
            error_message="all prover versions unreachable",
            error_category=ErrorCategory.OTHER,
            elapsed_ms=elapsed_ms(),
            version_outcomes=outcomes,
        )
    name, response = first_failure
    if response.status == "timeout":
        return VerificationResult(
            status=VerificationStatus.TIMEOUT,
            prover_version=name,
            error_message=response.error_message or "prover timeout",
            error_category=ErrorCategory.TIMEOUT,
            elapsed_ms=elapsed_ms(),
            version_outcomes=outcomes,
        )
    message = response.error_message or "prover failure"
    return VerificationResult(
        status=VerificationStatus.PROVER_FAILED,
        prover_version=name,
        error_message=message,
        error_category=categorize_error(message),
        elapsed_ms=elapsed_ms(),
        version_outcomes=outcomes,
    )


def verify_many(
    cfg: ProverConfig, items: Sequence[tuple[str, str, str]]
) -> dict[str, VerificationResult]:
    """Verify (id, statement, proof) triples on a bounded worker pool."""
    results = run_jobs(
        [(job_id, (statement, proof)) for job_id, statement, proof in items],
        worker=lambda pair: verify(cfg, pair[0], pair[1]),
        max_parallel=cfg.max_parallel,
    )
    out = {}
    for job_id, job in results.items():
        if job.ok:
            out[job_id] = job.value
        elif job.timed_out:
            out[job_id] = VerificationResult(
                status=VerificationStatus.TIMEOUT,
                error_message="client-side job timeout",
                error_category=ErrorCategory.TIMEOUT,
                elapsed_ms=int(job.elapsed_s * 1000),
            )
        else:
            out[job_id] = VerificationResult(
                status=VerificationStatus.TRANSPORT_ERROR,
                error_message=str(job.error),
                error_category=ErrorCategory.OTHER,
                elapsed_ms=int(job.elapsed_s * 1000),
            )
    return out


def _parse_provers(raw: str) -> list[tuple[str, HttpProver]]:
    versions = []
    for part in raw.split(","):
        if "=" not in part:
            raise ValueError(f"expected name=URL, got {part!r}")
        name, url = part.split("=", 1)
        versions.append((name.strip(), HttpProver(url.strip())))
    return versions


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="verify", description="Verify proofs against prover services."
    )
    parser.add_argument("--input", required=True, help="JSONL of {id?, statement, proof}")
    parser.add_argument("--provers", required=True, help="comma list of name=URL")
    parser.add_argument("--timeout", type=int, default=120)
    parser.add_argument("--parallel", type=int, default=8)
    parser.add_argument("--out", required=True, help="JSONL output path")
    args = parser.parse_args(argv)

    cfg = ProverConfig(
        versions=_parse_provers(args.provers),
        job_timeout_s=args.timeout,
        max_parallel=args.parallel,
    )
    items = []
    with open(args.input, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            raw = json.loads(line)
            items.append(
                (str(raw.get("id", line_number)), raw["statement"], raw["proof"])
            )
    results = verify_many(cfg, items)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with out_path.open("w", encoding="utf-8") as handle:
        for job_id, _, _ in items:
            payload = {"id": job_id, **results[job_id].to_dict()}
            handle.write(json.dumps(payload, ensure_ascii=False) + "\n")
    solved = sum(1 for r in results.values() if r.status == VerificationStatus.VALID)
    print(f"verified {solved}/{len(items)} proofs", file=sys.stderr)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())


__all__ = [
    "DEFAULT_TACTIC_NOTE",
    "ErrorCategory",
    "HttpProver",
    "MockProver",
    "ProverConfig",
    "ProverLike",
    "ProverResponse",
    "ProverTransportError",
    "VerificationResult",
    "VerificationStatus",
    "categorize_error",
    "check_outer_syntax",
    "validity_gate",
    "verify",
    "verify_many",
]
