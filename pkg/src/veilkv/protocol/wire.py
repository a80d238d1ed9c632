"""Framed wire format shared by both halves of the protocol.

Framing: u32 little-endian payload length, u8 message type, payload.
All integers are little-endian.  Plaintext fields of query messages are
functions of the obfuscated range and public parameters only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from ..hecore import HeParams
from ..varpir import EncodingParams

MSG_INIT_REQ = 0x01
MSG_INIT_RESP = 0x02
MSG_GALOIS_KEYS = 0x03
MSG_QUERY_PLAIN = 0x10
MSG_QUERY_VARPIR = 0x11
MSG_RESP_PLAIN = 0x20
MSG_RESP_VARPIR = 0x21
MSG_STALE_VERSION = 0x22
MSG_ADMIN_UPDATE_VALUE = 0x30
MSG_ADMIN_BATCH_UPDATE = 0x31
MSG_ERROR = 0x7F

ERR_BAD_MESSAGE = 1
ERR_VERSION_EXPIRED = 2
ERR_KEY_NOT_FOUND = 3
ERR_UPDATE_CONFLICT = 4
ERR_INTERNAL = 5
ERR_ADMIN_ONLY = 6

SCHEME_PLAIN = 0
SCHEME_VARPIR = 1

KIND_TO_CODE = {"contiguous": 0, "wrapped": 1, "full": 2}
CODE_TO_KIND = {v: k for k, v in KIND_TO_CODE.items()}

_FRAME = struct.Struct("<IB")


class WireError(ValueError):
    """Malformed frame or payload."""


def frame(msg_type: int, payload: bytes) -> bytes:
    return _FRAME.pack(len(payload), msg_type) + payload


def frame_size(payload_len: int) -> int:
    return _FRAME.size + payload_len


def parse_frame_header(blob: bytes) -> tuple[int, int]:
    """(payload_length, msg_type) from the 5 header bytes."""
    if len(blob) < _FRAME.size:
        raise WireError("short frame header")
    length, msg_type = _FRAME.unpack_from(blob)
    return length, msg_type


def recv_exact(sock, count: int) -> bytes:
    chunks = []
    got = 0
    while got < count:
        part = sock.recv(count - got)
        if not part:
            raise ConnectionError("peer closed mid-frame")
        chunks.append(part)
        got += len(part)
    return b"".join(chunks)


def recv_message(sock) -> tuple[int, bytes]:
    header = recv_exact(sock, _FRAME.size)
    length, msg_type = _FRAME.unpack(header)
    payload = recv_exact(sock, length) if length else b""
    return msg_type, payload


# -- payload codecs -----------------------------------------------------------


@dataclass
class InitBundle:
    """Offline-phase state the server ships to a new client."""

    n: int
    kv_bits: int
    version_id: int
    schemes: tuple[int, ...]
    he: HeParams
    encoding: EncodingParams
    pgm_blob: bytes
    c_fhe_per_plaintext: float
    bandwidth_hint: float
    rtt_hint: float

    def encode(self) -> bytes:
        head = struct.pack(
            "<QIQB",
            self.n,
            self.kv_bits,
            self.version_id,
            len(self.schemes),
        ) + bytes(self.schemes)
        he = struct.pack(
            "<IQQdI",
            self.he.ring_degree,
            self.he.plain_modulus,
            self.he.cipher_modulus,
            self.he.noise_stddev,
            self.he.decomp_log,
        )
        encp = struct.pack(
            "<QIIQIIIIQ",
            self.encoding.n,
            self.encoding.kv_bits,
            self.encoding.limb_bits,
            self.encoding.plain_modulus,
            self.encoding.slots_per_pair,
            self.encoding.pairs_per_plaintext,
            self.encoding.overlap_m,
            self.encoding.step,
            self.encoding.pt_count,
        )
        hints = struct.pack(
            "<ddd", self.c_fhe_per_plaintext, self.bandwidth_hint, self.rtt_hint
        )
        return (
            head
            + he
            + encp
            + hints
            + struct.pack("<I", len(self.pgm_blob))
            + self.pgm_blob
        )

    @classmethod
    def decode(cls, blob: bytes) -> "InitBundle":
        try:
            off = 0
            n, kv_bits, version_id, n_schemes = struct.unpack_from("<QIQB", blob, off)
            off += struct.calcsize("<QIQB")
            schemes = tuple(blob[off : off + n_schemes])
            off += n_schemes
            ring, plain, cipher, noise, decomp = struct.unpack_from("<IQQdI", blob, off)
            off += struct.calcsize("<IQQdI")
            he = HeParams(ring, plain, cipher, noise, decomp)
            vals = struct.unpack_from("<QIIQIIIIQ", blob, off)
            off += struct.calcsize("<QIIQIIIIQ")
            encoding = EncodingParams(*vals)
            c_fhe, bw, rtt = struct.unpack_from("<ddd", blob, off)
            off += struct.calcsize("<ddd")
            (pgm_len,) = struct.unpack_from("<I", blob, off)
            off += 4
            pgm_blob = blob[off : off + pgm_len]
            if len(pgm_blob) != pgm_len:
                raise WireError("truncated index blob")
        except struct.error as exc:
            raise WireError(f"malformed init bundle: {exc}") from exc
        return cls(
            n, kv_bits, version_id, schemes, he, encoding, pgm_blob, c_fhe, bw, rtt
        )


_QUERY_PLAIN = struct.Struct("<QBQQ")


def encode_query_plain(version: int, kind: str, l: int, r: int) -> bytes:
    return _QUERY_PLAIN.pack(version, KIND_TO_CODE[kind], l, r)


def decode_query_plain(payload: bytes) -> tuple[int, str, int, int]:
    try:
        version, code, l, r = _QUERY_PLAIN.unpack(payload)
    except struct.error as exc:
        raise WireError("malformed plain query") from exc
    if code not in CODE_TO_KIND:
        raise WireError(f"unknown range kind {code}")
    return version, CODE_TO_KIND[code], l, r


_QUERY_VARPIR_HEAD = struct.Struct("<QBQQH")


def encode_query_varpir(
    version: int, kind: str, l_pt: int, r_pt: int, ct_blobs: list[bytes]
) -> bytes:
    head = _QUERY_VARPIR_HEAD.pack(
        version, KIND_TO_CODE[kind], l_pt, r_pt, len(ct_blobs)
    )
    return head + b"".join(ct_blobs)


def decode_query_varpir(
    payload: bytes, ct_bytes: int
) -> tuple[int, str, int, int, list[bytes]]:
    try:
        version, code, l_pt, r_pt, count = _QUERY_VARPIR_HEAD.unpack_from(payload)
    except struct.error as exc:
        raise WireError("malformed varpir query") from exc
    if code not in CODE_TO_KIND:
        raise WireError(f"unknown range kind {code}")
    body = payload[_QUERY_VARPIR_HEAD.size :]
    if len(body) != count * ct_bytes:
        raise WireError("query ciphertext payload length mismatch")
    blobs = [body[i * ct_bytes : (i + 1) * ct_bytes] for i in range(count)]
    return version, CODE_TO_KIND[code], l_pt, r_pt, blobs


def encode_stale(new_version: int, pgm_blob: bytes, inner_type: int, inner: bytes) -> bytes:
    return (
        struct.pack("<QI", new_version, len(pgm_blob))
        + pgm_blob
        + struct.pack("<BI", inner_type, len(inner))
        + inner
    )


def decode_stale(payload: bytes) -> tuple[int, bytes, int, bytes]:
    try:
        new_version, pgm_len = struct.unpack_from("<QI", payload)
        off = 12
        pgm_blob = payload[off : off + pgm_len]
        off += pgm_len
        inner_type, inner_len = struct.unpack_from("<BI", payload, off)
        off += 5
        inner = payload[off : off + inner_len]
        if len(pgm_blob) != pgm_len or len(inner) != inner_len:
            raise WireError("truncated stale payload")
    except struct.error as exc:
        raise WireError("malformed stale notice") from exc
    return new_version, pgm_blob, inner_type, inner


def encode_error(code: int, message: str) -> bytes:
    return struct.pack("<H", code) + message.encode()


def decode_error(payload: bytes) -> tuple[int, str]:
    (code,) = struct.unpack_from("<H", payload)
    return code, payload[2:].decode(errors="replace")


def encode_admin_update_value(key: int, value: bytes) -> bytes:
    return struct.pack("<Q", key) + value


def decode_admin_update_value(payload: bytes) -> tuple[int, bytes]:
    if len(payload) < 8:
        raise WireError("malformed value update")
    return struct.unpack_from("<Q", payload)[0], payload[8:]


def encode_admin_batch(
    inserts: list[tuple[int, bytes]], deletes: list[int], value_bytes: int
) -> bytes:
    parts = [struct.pack("<I", len(inserts))]
    for key, value in inserts:
        if len(value) != value_bytes:
            raise WireError(f"insert value must be {value_bytes} bytes")
        parts.append(struct.pack("<Q", key) + value)
    parts.append(struct.pack("<I", len(deletes)))
    for key in deletes:
        parts.append(struct.pack("<Q", key))
    return b"".join(parts)


def decode_admin_batch(
    payload: bytes, value_bytes: int
) -> tuple[list[tuple[int, bytes]], list[int]]:
    try:
        (n_ins,) = struct.unpack_from("<I", payload)
        off = 4
        inserts = []
        for _ in range(n_ins):
            (key,) = struct.unpack_from("<Q", payload, off)
            off += 8
            value = payload[off : off + value_bytes]
            if len(value) != value_bytes:
                raise WireError("truncated insert value")
            off += value_bytes
            inserts.append((key, value))
        (n_del,) = struct.unpack_from("<I", payload, off)
        off += 4
        deletes = []
        for _ in range(n_del):
            (key,) = struct.unpack_from("<Q", payload, off)
            off += 8
            deletes.append(key)
    except struct.error as exc:
        raise WireError("malformed batch update") from exc
    return inserts, deletes
