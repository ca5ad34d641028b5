from __future__ import annotations

import json
import math
import urllib.error
import urllib.request

import pytest

from modelshim.server import ShimConfig, ShimError, serve
from modelshim.tables import StubTable, TableError, request_rng


def _post(base_url, endpoint, body):
    request = urllib.request.Request(
        base_url + endpoint,
        data=json.dumps(body).encode("utf-8"),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=5) as response:
            return response.status, json.loads(response.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def _sample_body(n=3, **overrides):
    body = {
        "role": "formal_statement_gen",
        "prompt": "p",
        "n": n,
        "temperature": 0.8,
        "max_tokens": 64,
    }
    body.update(overrides)
    return body


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def test_table_validation_rejects_bad_sums():
    with pytest.raises(TableError):
        StubTable({"A": 0.7, "B": 0.2})


def test_table_validation_rejects_empty():
    with pytest.raises(TableError):
        StubTable({})


def test_conditional_table_draw_extends_context():
    table = StubTable({"p": {"a": 1.0}, "pa": {"b": 1.0}})
    text, logprob = table.draw("p", request_rng(0, {"x": 1}))
    assert text == "ab"
    assert logprob == pytest.approx(0.0, abs=1e-12)


def test_score_additive_factorization():
    table = StubTable({"p": {"a": 0.6, "b": 0.4}, "pa": {"x": 1.0}})
    assert table.score("p", "ax") == pytest.approx(math.log(0.6), abs=1e-12)
    joint = table.score("p", "ax")
    parts = table.score("p", "a") + table.score("pa", "x")
    assert joint == pytest.approx(parts, abs=1e-9)


# ---------------------------------------------------------------------------
# server behavior
# ---------------------------------------------------------------------------


def test_sample_returns_exactly_n(stub_server):
    status, body = _post(stub_server.base_url, "/v1/sample", _sample_body(n=7))
    assert status == 200
    assert len(body["samples"]) == 7
    for sample in body["samples"]:
        assert sample["text"] in ("A", "B")
        expected = math.log({"A": 0.7, "B": 0.3}[sample["text"]])
        assert sample["logprob"] == pytest.approx(expected, abs=1e-9)


def test_score_matches_declared_table(stub_server, stub_config):
    for completion, prob in stub_config["table"].items():
        status, body = _post(
            stub_server.base_url,
            "/v1/score",
            {"role": "subgoal_gen", "prompt": "anything", "target": completion},
        )
        assert status == 200
        assert body["logprob"] == pytest.approx(math.log(prob), abs=1e-9)


def test_single_completion_scores_zero(tmp_path):
    table_path = tmp_path / "table.json"
    table_path.write_text(json.dumps({"table": {"only": 1.0}}), encoding="utf-8")
    server = serve(ShimConfig(mode="stub", port=0, seed=1, stub_table_path=str(table_path)))
    try:
        status, body = _post(
            server.base_url,
            "/v1/score",
            {"role": "subgoal_gen", "prompt": "p", "target": "only"},
        )
        assert status == 200
        assert body["logprob"] == pytest.approx(0.0, abs=1e-12)
    finally:
        server.shutdown()


def test_identical_request_identical_response_within_run(stub_server):
    body = _sample_body(n=5, seed=3)
    first = _post(stub_server.base_url, "/v1/sample", body)
    second = _post(stub_server.base_url, "/v1/sample", body)
    assert first == second


def test_identical_request_identical_across_restarts(stub_config_path, stub_config):
    body = _sample_body(n=6, seed=9)
    responses = []
    for _ in range(2):
        server = serve(
            ShimConfig(
                mode="stub",
                port=0,
                seed=stub_config["seed"],
                stub_table_path=str(stub_config_path),
            )
        )
        try:
            responses.append(_post(server.base_url, "/v1/sample", body))
        finally:
            server.shutdown()
    assert responses[0] == responses[1]


def test_different_requests_differ(stub_server):
    _, first = _post(stub_server.base_url, "/v1/sample", _sample_body(n=20, seed=1))
    _, second = _post(stub_server.base_url, "/v1/sample", _sample_body(n=20, seed=2))
    assert first != second  # seed participates in the request hash


def test_malformed_request_missing_prompt(stub_server):
    status, body = _post(stub_server.base_url, "/v1/sample", {"role": "x", "n": 2})
    assert status == 400
    assert body == {"error": "missing field: prompt"}


def test_malformed_request_missing_target(stub_server):
    status, body = _post(stub_server.base_url, "/v1/score", {"role": "x", "prompt": "p"})
    assert status == 400
    assert body == {"error": "missing field: target"}


def test_bad_n_rejected(stub_server):
    status, body = _post(stub_server.base_url, "/v1/sample", _sample_body(n=0))
    assert status == 400
    status, body = _post(stub_server.base_url, "/v1/sample", _sample_body(n="three"))
    assert status == 400


def test_unknown_target_rejected(stub_server):
    status, body = _post(
        stub_server.base_url,
        "/v1/score",
        {"role": "x", "prompt": "p", "target": "undeclared"},
    )
    assert status == 400


def test_invalid_json_rejected(stub_server):
    request = urllib.request.Request(
        stub_server.base_url + "/v1/sample",
        data=b"{not json",
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    with pytest.raises(urllib.error.HTTPError) as exc:
        urllib.request.urlopen(request, timeout=5)
    assert exc.value.code == 400


def test_unknown_path_404(stub_server):
    status, _ = _post(stub_server.base_url, "/v1/other", {})
    assert status == 404


# ---------------------------------------------------------------------------
# configuration errors
# ---------------------------------------------------------------------------


def test_config_requires_table_in_stub_mode():
    with pytest.raises(ShimError, match="stub_table_path"):
        ShimConfig(mode="stub", port=0, seed=0)


def test_config_rejects_unknown_mode():
    with pytest.raises(ShimError, match="unknown mode"):
        ShimConfig(mode="quantum", port=0, seed=0)


def test_invalid_table_fails_startup(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"table": {"A": 0.5, "B": 0.2}}), encoding="utf-8")
    with pytest.raises(ShimError, match="invalid stub table"):
        serve(ShimConfig(mode="stub", port=0, seed=0, stub_table_path=str(bad)))


def test_port_conflict_fails(stub_server, stub_config_path, stub_config):
    with pytest.raises(ShimError, match="cannot bind"):
        serve(
            ShimConfig(
                mode="stub",
                port=stub_server.port,
                seed=stub_config["seed"],
                stub_table_path=str(stub_config_path),
            )
        )
