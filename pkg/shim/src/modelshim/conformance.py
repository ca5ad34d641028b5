"""Conformance checker: replay the shared golden wire fixtures.

The golden directory is the single source of truth for the sample/score
contract.  Any deviation between a live service's answers and the frozen
request/response pairs fails with a path-labelled diff.
"""

from __future__ import annotations

import json
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

FLOAT_TOLERANCE = 1e-9


@dataclass
class ConformanceReport:
    checked: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and not self.failures

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        lines = [f"{status}: {self.checked} fixtures checked"]
        lines.extend(f"  {failure}" for failure in self.failures)
        return "\n".join(lines)


def _diff(expected, actual, path: str, failures: list[str]) -> None:
    if isinstance(expected, dict):
        if not isinstance(actual, dict):
            failures.append(f"{path}: expected object, got {type(actual).__name__}")
            return
        for key in expected:
            if key not in actual:
                failures.append(f"{path}.{key}: missing")
            else:
                _diff(expected[key], actual[key], f"{path}.{key}", failures)
        for key in actual:
            if key not in expected:
                failures.append(f"{path}.{key}: unexpected")
        return
    if isinstance(expected, list):
        if not isinstance(actual, list):
            failures.append(f"{path}: expected array, got {type(actual).__name__}")
            return
        if len(expected) != len(actual):
            failures.append(f"{path}: expected {len(expected)} items, got {len(actual)}")
            return
        for index, (e, a) in enumerate(zip(expected, actual)):
            _diff(e, a, f"{path}[{index}]", failures)
        return
    if isinstance(expected, float) or isinstance(actual, float):
        try:
            if abs(float(expected) - float(actual)) <= FLOAT_TOLERANCE:
                return
        except (TypeError, ValueError):
            pass
        failures.append(f"{path}: expected {expected!r}, got {actual!r}")
        return
    if expected != actual:
        failures.append(f"{path}: expected {expected!r}, got {actual!r}")


def _post(base_url: str, endpoint: str, body: dict, timeout: float) -> tuple[int, dict]:
    request = urllib.request.Request(
        base_url.rstrip("/") + endpoint,
        data=json.dumps(body, ensure_ascii=False).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=timeout) as response:
            return response.status, json.loads(response.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def default_fixture_dir() -> Optional[Path]:
    """Locate the shared fixtures directory in the monorepo layout."""
    for base in Path(__file__).resolve().parents:
        candidate = base / "fixtures" / "wire"
        if candidate.is_dir():
            return candidate
    return None


def conformance(
    base_url: str,
    fixture_dir: str | Path | None = None,
    timeout: float = 10.0,
) -> ConformanceReport:
    """Exercise a live service against every golden fixture."""
    fixture_dir = Path(fixture_dir) if fixture_dir else default_fixture_dir()
    if fixture_dir is None or not fixture_dir.is_dir():
        raise FileNotFoundError("golden fixture directory not found")
    report = ConformanceReport()
    for path in sorted(fixture_dir.glob("*.json")):
        fixture = json.loads(path.read_text(encoding="utf-8"))
        if "endpoint" not in fixture:  # stub_config.json and friends
            continue
        report.checked += 1
        try:
            status, body = _post(base_url, fixture["endpoint"], fixture["request"], timeout)
        except (urllib.error.URLError, OSError) as exc:
            report.failures.append(f"{path.stem}: unreachable service: {exc}")
            continue
        if status != fixture["status"]:
            report.failures.append(
                f"{path.stem}: status {status}, expected {fixture['status']}"
            )
            continue
        failures: list[str] = []
        _diff(fixture["response"], body, "response", failures)
        if (
            fixture["endpoint"] == "/v1/sample"
            and fixture["status"] == 200
            and isinstance(body.get("samples"), list)
        ):
            wanted = fixture["request"].get("n")
            if wanted is not None and len(body["samples"]) != wanted:
                failures.append(
                    f"samples: expected {wanted} items, got {len(body['samples'])}"
                )
        report.failures.extend(f"{path.stem}: {f}" for f in failures)
    return report


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        prog="shim-conformance", description="Check a service against the goldens."
    )
    parser.add_argument("base_url")
    parser.add_argument("--fixtures", default=None)
    args = parser.parse_args(argv)
    report = conformance(args.base_url, args.fixtures)
    print(report.summary())
    return 0 if report.passed else 1


if __name__ == "__main__":
    raise SystemExit(main())


__all__ = ["ConformanceReport", "conformance", "default_fixture_dir", "main"]
