"""Byte-stream transports: TCP, in-process loopback, and a simulated
bandwidth/latency wrapper with deterministic virtual-time accounting.
"""

from __future__ import annotations

import socket
import threading
import time
from dataclasses import dataclass

from . import wire


class Transport:
    """Single-request-at-a-time message channel."""

    def request(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        raise NotImplementedError

    def close(self):
        pass


class TcpTransport(Transport):
    """Blocking framed request/response over one TCP connection."""

    def __init__(self, host: str, port: int, timeout: float = 600.0):
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._lock = threading.Lock()

    def request(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        with self._lock:
            self._sock.sendall(wire.frame(msg_type, payload))
            return wire.recv_message(self._sock)

    def close(self):
        try:
            self._sock.close()
        except OSError:
            pass


class LoopbackTransport(Transport):
    """Direct dispatch into a service object, byte-level faithful.

    Messages still round-trip through the codecs, so wire-shape tests see
    exactly what a socket would carry.
    """

    def __init__(self, service, admin: bool = False):
        self._service = service
        self._session = service.new_session()
        self._admin = admin

    def request(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        return self._service.handle(self._session, msg_type, bytes(payload), self._admin)


@dataclass
class LatencyAccount:
    """Virtual-time record of one request/response exchange."""

    up_bytes: int = 0
    down_bytes: int = 0
    transfer_s: float = 0.0
    rtt_s: float = 0.0
    service_wall_s: float = 0.0

    @property
    def total_s(self) -> float:
        return self.transfer_s + self.rtt_s + self.service_wall_s


class SimulatedTransport(Transport):
    """Deterministic bandwidth/latency accounting around another transport.

    Serialization delay is bytes * 8 / bandwidth and each direction adds
    rtt / 2; delays are accounted, not slept, and add up across pipelined
    messages.  The wall time spent inside the wrapped transport (the
    server's compute) is recorded separately.
    """

    def __init__(self, inner: Transport, bandwidth_bps: float, rtt_s: float):
        self.inner = inner
        self.bandwidth_bps = bandwidth_bps
        self.rtt_s = rtt_s
        self.total_virtual_s = 0.0
        self.total_bytes = 0
        self.last = LatencyAccount()

    @staticmethod
    def transfer_seconds(nbytes: int, bandwidth_bps: float) -> float:
        return nbytes * 8 / bandwidth_bps

    def request(self, msg_type: int, payload: bytes) -> tuple[int, bytes]:
        up = wire.frame_size(len(payload))
        t0 = time.perf_counter()
        resp_type, resp = self.inner.request(msg_type, payload)
        wall = time.perf_counter() - t0
        down = wire.frame_size(len(resp))
        account = LatencyAccount(
            up_bytes=up,
            down_bytes=down,
            transfer_s=self.transfer_seconds(up + down, self.bandwidth_bps),
            rtt_s=self.rtt_s,
            service_wall_s=wall,
        )
        self.last = account
        self.total_virtual_s += account.transfer_s + account.rtt_s
        self.total_bytes += up + down
        return resp_type, resp

    def close(self):
        self.inner.close()
