"""Declared probability tables for the stub backend.

A flat table maps completions to probabilities and serves every prompt; a
conditional table maps contexts to such tables, and sampling keeps extending
the context while the grown context is itself a declared key.  Scores are
rng-free: the sum of chunk log-probabilities of the greedy longest-prefix
factorization of the target.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from pathlib import Path


class TableError(ValueError):
    """The declared table is structurally invalid."""


def _validate(table: dict, context: str) -> dict[str, float]:
    if not table:
        raise TableError(f"empty table for context {context!r}")
    cleaned = {}
    for completion, prob in table.items():
        if not isinstance(completion, str) or not completion:
            raise TableError(f"invalid completion key {completion!r}")
        prob = float(prob)
        if prob <= 0 or prob > 1:
            raise TableError(f"probability {prob} for {completion!r} not in (0, 1]")
        cleaned[completion] = prob
    total = sum(cleaned.values())
    if abs(total - 1.0) > 1e-9:
        raise TableError(f"probabilities for {context!r} sum to {total}, not 1")
    return cleaned


class StubTable:
    """Validated flat or conditional completion table."""

    def __init__(self, spec: dict):
        if not spec:
            raise TableError("empty table spec")
        first = next(iter(spec.values()))
        self.conditional = isinstance(first, dict)
        if self.conditional:
            self.tables = {ctx: _validate(tbl, ctx) for ctx, tbl in spec.items()}
        else:
            self.tables = {None: _validate(spec, "<any>")}

    @classmethod
    def load(cls, path: str | Path) -> "StubTable":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        # Accept {"table": {...}}, {"tables": {...}}, a full stub config
        # carrying one of those keys, or a bare mapping.
        if "tables" in raw:
            return cls(raw["tables"])
        if "table" in raw:
            return cls(raw["table"])
        return cls(raw)

    def _table_for(self, context: str) -> dict[str, float] | None:
        if not self.conditional:
            return self.tables[None]
        return self.tables.get(context)

    def draw(self, prompt: str, rng: random.Random) -> tuple[str, float]:
        """One completion: chunks drawn while the grown context is declared."""
        context = prompt
        pieces = []
        logprob = 0.0
        while True:
            table = self._table_for(context)
            if table is None:
                break
            completions = sorted(table)
            chunk = rng.choices(completions, weights=[table[c] for c in completions])[0]
            pieces.append(chunk)
            logprob += math.log(table[chunk])
            if not self.conditional:
                break
            context += chunk
        if not pieces:
            raise TableError(f"no table declared for context {prompt!r}")
        return "".join(pieces), logprob

    def score(self, prompt: str, target: str) -> float:
        context = prompt
        remaining = target
        total = 0.0
        while remaining:
            table = self._table_for(context)
            if table is None:
                raise TableError(f"no table declared for context {context!r}")
            matches = [c for c in table if remaining.startswith(c)]
            if not matches:
                raise TableError(f"target chunk {remaining[:40]!r} not declared")
            chunk = max(matches, key=len)
            total += math.log(table[chunk])
            context += chunk
            remaining = remaining[len(chunk) :]
        return total


def canonical_request(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def request_rng(server_seed: int, body: dict) -> random.Random:
    """Per-request RNG: identical across restarts and unaffected by other
    requests, so concurrency cannot perturb determinism."""
    digest = hashlib.sha256(f"{server_seed}|{canonical_request(body)}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


__all__ = ["StubTable", "TableError", "canonical_request", "request_rng"]
