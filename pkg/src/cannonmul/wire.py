"""Wire message format and tag packing.

Every frame starts with a fixed 20-byte header, all integers little-endian:

    magic           4 bytes  "JMP1" (0x4A 0x4D 0x50 0x31)
    tag             u32
    source_rank     u32
    payload_length  u64      total payload bytes (may exceed buffer capacity)

The payload is the tile's row-major element bytes, little-endian, with no
per-element framing.  Payloads larger than the channel buffer are streamed in
chunks after the single header.

Tag layout (32 bits):

    data frames:     [31:16] epoch   [15:2] step    [1:0] plane (0=A, 1=B)
    control frames:  [31:16] epoch   [15:4] reason  [3:2] kind  [1:0] plane=2

The epoch field binds the gang restart attempt and the barrier sequence number
into every frame: epoch = (attempt << 8) | seq (data frames use seq 0).  Stale
frames from a previous attempt are thereby detectable and rejected.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import ProtocolError

MAGIC = b"JMP1"
HEADER_LEN = 20
_HEADER = struct.Struct("<4sIIQ")

PLANE_A = 0
PLANE_B = 1
PLANE_CONTROL = 2

CTRL_ARRIVE = 0
CTRL_RELEASE = 1
CTRL_ABORT = 2
CTRL_HELLO = 3

REASON_NONE = 0
REASON_FAILURE = 1
REASON_TIMEOUT = 2
REASON_TRANSPORT = 3
REASON_PROTOCOL = 4
REASON_DISCONNECT = 5

REASON_NAMES = {
    REASON_NONE: "none",
    REASON_FAILURE: "worker-failure",
    REASON_TIMEOUT: "timeout",
    REASON_TRANSPORT: "transport-error",
    REASON_PROTOCOL: "protocol-error",
    REASON_DISCONNECT: "disconnect",
}

# source_rank used by the coordinator / when the failing rank is unknown
RANK_NONE = 0xFFFFFFFF

MAX_ATTEMPT = (1 << 8) - 1
MAX_SEQ = (1 << 8) - 1
MAX_STEP = (1 << 14) - 1


def epoch_field(attempt: int, seq: int = 0) -> int:
    if not 0 <= attempt <= MAX_ATTEMPT:
        raise ProtocolError(f"attempt {attempt} out of tag range (max {MAX_ATTEMPT})")
    if not 0 <= seq <= MAX_SEQ:
        raise ProtocolError(f"barrier seq {seq} out of tag range (max {MAX_SEQ})")
    return (attempt << 8) | seq


def data_tag(attempt: int, step: int, plane: int) -> int:
    if plane not in (PLANE_A, PLANE_B):
        raise ProtocolError(f"data plane must be 0 or 1, got {plane}")
    if not 0 <= step <= MAX_STEP:
        raise ProtocolError(f"step {step} out of tag range (max {MAX_STEP})")
    return (epoch_field(attempt, 0) << 16) | (step << 2) | plane


def control_tag(attempt: int, seq: int, kind: int, reason: int = REASON_NONE) -> int:
    if not 0 <= kind <= 3:
        raise ProtocolError(f"control kind must be 0..3, got {kind}")
    if not 0 <= reason < (1 << 12):
        raise ProtocolError(f"reason code {reason} out of tag range")
    return (epoch_field(attempt, seq) << 16) | (reason << 4) | (kind << 2) | PLANE_CONTROL


def tag_plane(tag: int) -> int:
    return tag & 3


def tag_epoch(tag: int) -> int:
    return (tag >> 16) & 0xFFFF


def tag_attempt(tag: int) -> int:
    return tag_epoch(tag) >> 8


def tag_seq(tag: int) -> int:
    return tag_epoch(tag) & 0xFF


def tag_step(tag: int) -> int:
    return (tag >> 2) & 0x3FFF


def tag_kind(tag: int) -> int:
    return (tag >> 2) & 3


def tag_reason(tag: int) -> int:
    return (tag >> 4) & 0xFFF


@dataclass(frozen=True)
class Header:
    tag: int
    source_rank: int
    payload_length: int

    @property
    def plane(self) -> int:
        return tag_plane(self.tag)

    @property
    def attempt(self) -> int:
        return tag_attempt(self.tag)


def encode_header(tag: int, source_rank: int, payload_length: int) -> bytes:
    return _HEADER.pack(MAGIC, tag, source_rank, payload_length)


def decode_header(buf: bytes | memoryview) -> Header:
    if len(buf) < HEADER_LEN:
        raise ProtocolError(f"short header: {len(buf)} bytes")
    magic, tag, source, plen = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ProtocolError(f"bad magic {bytes(magic)!r}, expected {MAGIC!r}")
    return Header(tag=tag, source_rank=source, payload_length=plen)


def encode_message(tag: int, source_rank: int, payload: bytes = b"") -> bytes:
    """Whole frame as bytes (used for control frames and small-message tests)."""
    return encode_header(tag, source_rank, len(payload)) + payload


def check_expected(header: Header, expected_tag: int, expected_source: int | None):
    """Validate an incoming frame against what the receiver is waiting for.

    A mismatched attempt means a stale frame from a previous gang epoch; any
    other tag mismatch means cross-step confusion.  Both are fatal.
    """
    if header.tag != expected_tag:
        if tag_attempt(header.tag) != tag_attempt(expected_tag):
            raise ProtocolError(
                f"stale-epoch frame: got attempt {tag_attempt(header.tag)}, "
                f"expected attempt {tag_attempt(expected_tag)} "
                f"(tag 0x{header.tag:08x} != 0x{expected_tag:08x})"
            )
        raise ProtocolError(
            f"tag mismatch: got 0x{header.tag:08x}, expected 0x{expected_tag:08x}"
        )
    if expected_source is not None and header.source_rank != expected_source:
        raise ProtocolError(
            f"frame from rank {header.source_rank}, expected rank {expected_source}"
        )
