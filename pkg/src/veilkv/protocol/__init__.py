"""Client/server protocol: wire format, transports, cost model, endpoints."""

from .client import ClientError, ClientSession, LookupMetrics, ServerSideError
from .cost import PLAIN_DOWNLOAD, VARPIR, CostInputs, select_scheme
from .server import QueryService, Server, handle_plain_download
from .transport import (
    LatencyAccount,
    LoopbackTransport,
    SimulatedTransport,
    TcpTransport,
    Transport,
)
from .wire import InitBundle

__all__ = [
    "ClientError",
    "ClientSession",
    "CostInputs",
    "InitBundle",
    "LatencyAccount",
    "LookupMetrics",
    "LoopbackTransport",
    "PLAIN_DOWNLOAD",
    "QueryService",
    "Server",
    "ServerSideError",
    "SimulatedTransport",
    "TcpTransport",
    "Transport",
    "VARPIR",
    "handle_plain_download",
    "select_scheme",
]
