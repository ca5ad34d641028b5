"""Reference generator service for the sample/score wire contract."""

from .conformance import ConformanceReport, conformance
from .server import ShimConfig, ShimError, ShimServer, serve
from .tables import StubTable, TableError

__version__ = "0.1.0"

__all__ = [
    "ConformanceReport",
    "ShimConfig",
    "ShimError",
    "ShimServer",
    "StubTable",
    "TableError",
    "conformance",
    "serve",
]
