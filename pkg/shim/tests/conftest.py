from __future__ import annotations

import json
from pathlib import Path

import pytest

from modelshim.server import ShimConfig, ShimServer, serve

WIRE_DIR = Path(__file__).resolve().parents[2] / "fixtures" / "wire"


@pytest.fixture(scope="session")
def stub_config_path() -> Path:
    return WIRE_DIR / "stub_config.json"


@pytest.fixture(scope="session")
def stub_config(stub_config_path) -> dict:
    return json.loads(stub_config_path.read_text(encoding="utf-8"))


@pytest.fixture
def stub_server(stub_config_path, stub_config) -> ShimServer:
    server = serve(
        ShimConfig(
            mode="stub",
            port=0,
            seed=stub_config["seed"],
            stub_table_path=str(stub_config_path),
        )
    )
    yield server
    server.shutdown()
