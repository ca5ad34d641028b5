"""Generator service speaking the sample/score wire contract.

Two backends: a deterministic table-driven stub for integration tests, and a
local causal language model for real runs.  The wire contract:

    POST /v1/sample  {role, prompt, n, temperature?, max_tokens?, seed?}
        -> {"samples": [{"text", "logprob"}, ...]}   (exactly n items)
    POST /v1/score   {role, prompt, target}
        -> {"logprob": float}

Status 400 carries {"error": str} for malformed requests; backend failures
return 500.
"""

from __future__ import annotations

import argparse
import json
import threading
from dataclasses import dataclass
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional, Sequence

from .tables import StubTable, TableError, request_rng


class ShimError(Exception):
    """Configuration or startup failure."""


@dataclass
class ShimConfig:
    mode: str  # "stub" | "local_model"
    port: int = 0
    seed: int = 0
    host: str = "127.0.0.1"
    stub_table_path: Optional[str] = None
    model_id: Optional[str] = None

    def __post_init__(self):
        if self.mode == "stub":
            if not self.stub_table_path:
                raise ShimError("stub mode requires stub_table_path")
        elif self.mode == "local_model":
            if not self.model_id:
                raise ShimError("local_model mode requires model_id")
        else:
            raise ShimError(f"unknown mode {self.mode!r}")


class _BadRequest(Exception):
    pass


def _require(body: dict, fields: Sequence[str]) -> None:
    for name in fields:
        if name not in body:
            raise _BadRequest(f"missing field: {name}")


class StubBackend:
    """Serves samples and scores from a declared table, deterministically."""

    def __init__(self, table: StubTable, seed: int):
        self.table = table
        self.seed = seed

    def sample(self, body: dict) -> dict:
        _require(body, ("role", "prompt", "n"))
        n = body["n"]
        if not isinstance(n, int) or n < 1:
            raise _BadRequest("n must be a positive integer")
        rng = request_rng(self.seed, body)
        samples = []
        for _ in range(n):
            text, logprob = self.table.draw(body["prompt"], rng)
            samples.append({"text": text, "logprob": logprob})
        return {"samples": samples}

    def score(self, body: dict) -> dict:
        _require(body, ("role", "prompt", "target"))
        target = body["target"]
        if not isinstance(target, str) or not target:
            raise _BadRequest("target must be a nonempty string")
        try:
            return {"logprob": self.table.score(body["prompt"], target)}
        except TableError as exc:
            raise _BadRequest(str(exc))


def _make_handler(backend):
    class Handler(BaseHTTPRequestHandler):
        def _reply(self, status: int, payload: dict) -> None:
            data = json.dumps(payload, ensure_ascii=False).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json; charset=utf-8")
            self.send_header("Content-Length", str(len(data)))
            self.end_headers()
            self.wfile.write(data)

        def do_POST(self):
            try:
                length = int(self.headers.get("Content-Length", "0"))
                body = json.loads(self.rfile.read(length))
                if not isinstance(body, dict):
                    raise _BadRequest("request body must be a JSON object")
            except (ValueError, _BadRequest) as exc:
                self._reply(400, {"error": str(exc) or "invalid JSON body"})
                return
            try:
                if self.path == "/v1/sample":
                    self._reply(200, backend.sample(body))
                elif self.path == "/v1/score":
                    self._reply(200, backend.score(body))
                else:
                    self._reply(404, {"error": f"unknown path {self.path}"})
            except _BadRequest as exc:
                self._reply(400, {"error": str(exc)})
            except Exception as exc:  # backend failure
                self._reply(500, {"error": str(exc)})

        def log_message(self, *args):
            pass

    return Handler


class ShimServer:
    """A running service; ``base_url`` is live after construction."""

    def __init__(self, config: ShimConfig):
        self.config = config
        backend = _build_backend(config)
        try:
            self._server = ThreadingHTTPServer(
                (config.host, config.port), _make_handler(backend)
            )
        except OSError as exc:
            raise ShimError(f"cannot bind {config.host}:{config.port}: {exc}")
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()

    @property
    def port(self) -> int:
        return self._server.server_address[1]

    @property
    def base_url(self) -> str:
        return f"http://{self.config.host}:{self.port}"

    def shutdown(self) -> None:
        self._server.shutdown()
        self._server.server_close()

    def serve_forever(self) -> None:
        self._thread.join()


def _build_backend(config: ShimConfig):
    if config.mode == "stub":
        try:
            table = StubTable.load(config.stub_table_path)
        except (OSError, ValueError) as exc:
            raise ShimError(f"invalid stub table {config.stub_table_path}: {exc}")
        return StubBackend(table, config.seed)
    from .localmodel import LocalModelBackend

    return LocalModelBackend(config.model_id, config.seed)


def serve(config: ShimConfig) -> ShimServer:
    return ShimServer(config)


def main(argv: Sequence[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="shim", description="Generator service: table stub or local model."
    )
    parser.add_argument("--mode", choices=("stub", "local_model"), required=True)
    parser.add_argument("--table", help="stub table JSON path")
    parser.add_argument("--model-id", help="causal LM identifier for local mode")
    parser.add_argument("--port", type=int, default=8040)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--host", default="127.0.0.1")
    args = parser.parse_args(argv)

    config = ShimConfig(
        mode=args.mode,
        port=args.port,
        seed=args.seed,
        host=args.host,
        stub_table_path=args.table,
        model_id=args.model_id,
    )
    server = serve(config)
    print(f"shim serving {args.mode} on {server.base_url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())


__all__ = ["ShimConfig", "ShimError", "ShimServer", "StubBackend", "main", "serve"]
