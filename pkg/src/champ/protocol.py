"""Wire types and codec for the cartridge bus.

Everything that crosses the (simulated) bus is either a data frame
(:class:`FrameEnvelope`) or a control message (:class:`ControlMessage`).
Both share a 9-byte framing header: a 4-byte magic, a 1-byte message
class, and a 4-byte big-endian body length. Body fields follow in
declaration order, integers big-endian, durations as unsigned 32-bit
milliseconds. The first body byte is a reserved version byte, fixed
at 1.

The codec is dependency-free and total: ``decode`` never raises
anything other than :class:`DecodeError` subclasses, no matter the
input bytes.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum

MAGIC = b"CHMP"
WIRE_VERSION = 1
HEADER_LEN = 9

CLASS_FRAME = 0x01
CLASS_CONTROL = 0x02

U16_MAX = 0xFFFF
U32_MAX = 0xFFFFFFFF
U64_MAX = 0xFFFFFFFFFFFFFFFF

_NO_DIMS = 0xFF


class Capability(IntEnum):
    """Registered capability codes. Unknown codes are rejected at decode
    time; 0x0100 and above are reserved for third parties."""

    OBJECT_DETECTION = 0x0001
    FACE_DETECTION = 0x0002
    FACE_RECOGNITION = 0x0003
    FACE_QUALITY = 0x0004
    GAIT_RECOGNITION = 0x0005
    DATABASE_STORAGE = 0x0006
    PASS_THROUGH = 0x00FF


class FormatKind(IntEnum):
    IMAGE_FRAME = 1
    BOUNDING_BOX_SET = 2
    EMBEDDING_VECTOR = 3
    QUALITY_SCORE_SET = 4
    MATCH_RESULT_SET = 5
    OPAQUE = 6


class Mode(IntEnum):
    STREAMING = 0
    REQUEST_RESPONSE = 1


class ControlKind(IntEnum):
    HANDSHAKE_REQUEST = 1
    HANDSHAKE_REPLY = 2
    THROTTLE = 3
    PAUSE = 4
    RESUME = 5
    DETACH = 6


class ProtocolError(Exception):
    pass


class InvariantViolation(ProtocolError):
    """A message value breaks one of its declared invariants."""


class DecodeError(ProtocolError):
    """Base for all structured decode failures."""


class BadMagic(DecodeError):
    pass


class TruncatedBody(DecodeError):
    pass


class UnknownMessageClass(DecodeError):
    pass


class UnknownCapabilityCode(DecodeError):
    pass


class MalformedBody(DecodeError):
    pass


class MissingPartition(ProtocolError):
    pass


class DuplicatePartition(ProtocolError):
    pass


class MixedSequence(ProtocolError):
    pass


@dataclass(frozen=True)
class DataFormat:
    """Advertised shape of what a stage consumes or produces.

    ``dims`` is optional; a consumer with no dims accepts any shape of
    the same kind (wildcard). When present, EmbeddingVector dims must
    be ``[d]`` with d >= 1 and ImageFrame dims must be ``[W, H, C]``
    with all entries >= 1.
    """

    kind: FormatKind
    dims: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))

    def validate(self) -> None:
        if not isinstance(self.kind, FormatKind):
            raise InvariantViolation(f"unknown format kind {self.kind!r}")
        if self.dims is None:
            return
        if any(d < 0 for d in self.dims):
            raise InvariantViolation(f"negative dim in {self.dims}")
        if len(self.dims) > 8:
            raise InvariantViolation("at most 8 dims supported on the wire")
        if self.kind is FormatKind.EMBEDDING_VECTOR:
            if len(self.dims) != 1 or self.dims[0] < 1:
                raise InvariantViolation(
                    f"EmbeddingVector dims must be [d], d >= 1, got {self.dims}"
                )
        if self.kind is FormatKind.IMAGE_FRAME:
            if len(self.dims) != 3 or any(d < 1 for d in self.dims):
                raise InvariantViolation(
                    f"ImageFrame dims must be [W, H, C], all >= 1, got {self.dims}"
                )


@dataclass(frozen=True)
class LatencySpec:
    """Per-frame processing time descriptor: uniform on
    [mean - jitter, mean + jitter], milliseconds."""

    mean_ms: int
    jitter_ms: int = 0

    def validate(self) -> None:
        if self.mean_ms <= 0:
            raise InvariantViolation("per-frame latency mean must be > 0")
        if not (0 <= self.jitter_ms <= self.mean_ms):
            raise InvariantViolation("jitter must satisfy 0 <= jitter <= mean")


@dataclass(frozen=True)
class CapabilityDescriptor:
    """What a cartridge is: reported during the handshake."""

    capability: Capability
    input_format: DataFormat
    output_format: DataFormat
    mode: Mode
    bypassable: bool
    model_load_ms: int
    per_frame_latency: LatencySpec
    output_bytes_per_frame: int

    def validate(self) -> None:
        if not isinstance(self.capability, Capability):
            raise InvariantViolation(f"unregistered capability {self.capability!r}")
        self.input_format.validate()
        self.output_format.validate()
        self.per_frame_latency.validate()
        if self.model_load_ms < 0:
            raise InvariantViolation("model_load_ms must be >= 0")
        if self.output_bytes_per_frame < 0:
            raise InvariantViolation("output_bytes_per_frame must be >= 0")
        if self.capability is Capability.DATABASE_STORAGE and self.mode is not Mode.REQUEST_RESPONSE:
            raise InvariantViolation("DatabaseStorage cartridges are request-response")


@dataclass(frozen=True)
class FrameEnvelope:
    """The unit of pipeline data.

    hop_trail records the capability codes already applied, in order;
    it only ever grows along the pipeline.
    """

    stream_id: int
    sequence: int
    payload_format: DataFormat
    payload: bytes
    partition_index: int = 0
    partition_count: int = 1
    hop_trail: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "hop_trail", tuple(int(c) for c in self.hop_trail))

    def validate(self) -> None:
        if not (0 <= self.stream_id <= U32_MAX):
            raise InvariantViolation("stream_id out of u32 range")
        if not (0 <= self.sequence <= U64_MAX):
            raise InvariantViolation("sequence out of u64 range")
        if not (1 <= self.partition_count <= U16_MAX):
            raise InvariantViolation("partition_count must be in 1..65535")
        if not (0 <= self.partition_index < self.partition_count):
            raise InvariantViolation(
                f"partition_index {self.partition_index} outside 0..{self.partition_count - 1}"
            )
        if len(self.payload) > U32_MAX:
            raise InvariantViolation("payload too large for u32 length prefix")
        self.payload_format.validate()
        for code in self.hop_trail:
            if code not in Capability._value2member_map_:
                raise InvariantViolation(f"hop_trail contains unregistered code {code:#06x}")
        if len(self.hop_trail) > U16_MAX:
            raise InvariantViolation("hop_trail too long")

    def with_hop(self, code: Capability) -> "FrameEnvelope":
        return replace(self, hop_trail=self.hop_trail + (int(code),))


@dataclass(frozen=True)
class ControlMessage:
    kind: ControlKind
    issued_at_ms: int = 0
    descriptor: CapabilityDescriptor | None = None
    credit_delta: int = 0

    def validate(self) -> None:
        if not isinstance(self.kind, ControlKind):
            raise InvariantViolation(f"unknown control kind {self.kind!r}")
        if not (0 <= self.issued_at_ms <= U64_MAX):
            raise InvariantViolation("issued_at_ms out of u64 range")
        if self.kind is ControlKind.HANDSHAKE_REPLY:
            if self.descriptor is None:
                raise InvariantViolation("HandshakeReply carries a descriptor")
            self.descriptor.validate()
        elif self.descriptor is not None:
            raise InvariantViolation("only HandshakeReply carries a descriptor")
        if self.kind is ControlKind.THROTTLE:
            if not (-(2**31) <= self.credit_delta < 2**31):
                raise InvariantViolation("credit_delta out of i32 range")
        elif self.credit_delta != 0:
            raise InvariantViolation("only Throttle carries a credit_delta")


Message = FrameEnvelope | ControlMessage


@dataclass(frozen=True)
class Compatibility:
    """Result of format negotiation. Incompatibility is a value, not an
    error; ``reason`` explains the mismatch."""

    ok: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.ok


COMPATIBLE = Compatibility(True)


def negotiate(upstream_out: DataFormat, downstream_in: DataFormat) -> Compatibility:
    """Check whether a producer's output format can feed a consumer.

    Kinds must match exactly. Missing dims on the consumer side act as
    a wildcard; a consumer that demands specific dims is incompatible
    with a producer that declares none.
    """
    if upstream_out.kind is not downstream_in.kind:
        return Compatibility(
            False,
            f"kind mismatch: {upstream_out.kind.name} vs {downstream_in.kind.name}",
        )
    if downstream_in.dims is None:
        return COMPATIBLE
    if upstream_out.dims is None:
        return Compatibility(
            False,
            f"consumer requires dims {list(downstream_in.dims)} but producer declares none",
        )
    if upstream_out.dims != downstream_in.dims:
        return Compatibility(
            False,
            f"dims mismatch: {list(upstream_out.dims)} vs {list(downstream_in.dims)}",
        )
    return COMPATIBLE


# --- encoding -------------------------------------------------------------


class _Writer:
    def __init__(self):
        self.parts: list[bytes] = []

    def u8(self, v: int):
        self.parts.append(struct.pack(">B", v))

    def u16(self, v: int):
        self.parts.append(struct.pack(">H", v))

    def u32(self, v: int):
        self.parts.append(struct.pack(">I", v))

    def u64(self, v: int):
        self.parts.append(struct.pack(">Q", v))

    def i32(self, v: int):
        self.parts.append(struct.pack(">i", v))

    def raw(self, b: bytes):
        self.parts.append(b)

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


def _write_format(w: _Writer, fmt: DataFormat):
    w.u8(int(fmt.kind))
    if fmt.dims is None:
        w.u8(_NO_DIMS)
    else:
        w.u8(len(fmt.dims))
        for d in fmt.dims:
            w.u32(d)


def _write_descriptor(w: _Writer, d: CapabilityDescriptor):
    w.u16(int(d.capability))
    _write_format(w, d.input_format)
    _write_format(w, d.output_format)
    w.u8(int(d.mode))
    w.u8(1 if d.bypassable else 0)
    w.u32(d.model_load_ms)
    w.u32(d.per_frame_latency.mean_ms)
    w.u32(d.per_frame_latency.jitter_ms)
    w.u32(d.output_bytes_per_frame)


def encode(message: Message) -> bytes:
    """Serialize a message. Raises InvariantViolation if the message
    breaks its type invariants (e.g. inconsistent partition fields)."""
    message.validate()
    w = _Writer()
    w.u8(WIRE_VERSION)
    if isinstance(message, FrameEnvelope):
        cls = CLASS_FRAME
        w.u32(message.stream_id)
        w.u64(message.sequence)
        w.u16(message.partition_index)
        w.u16(message.partition_count)
        _write_format(w, message.payload_format)
        w.u32(len(message.payload))
        w.raw(message.payload)
        w.u16(len(message.hop_trail))
        for code in message.hop_trail:
            w.u16(code)
    else:
        cls = CLASS_CONTROL
        w.u8(int(message.kind))
        w.u64(message.issued_at_ms)
        if message.kind is ControlKind.HANDSHAKE_REPLY:
            _write_descriptor(w, message.descriptor)
        elif message.kind is ControlKind.THROTTLE:
            w.i32(message.credit_delta)
    body = w.getvalue()
    return MAGIC + struct.pack(">BI", cls, len(body)) + body


# --- decoding -------------------------------------------------------------


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise TruncatedBody(f"need {n} bytes at offset {self.pos}, have {len(self.buf) - self.pos}")
        chunk = self.buf[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def i32(self) -> int:
        return struct.unpack(">i", self.take(4))[0]

    def done(self) -> bool:
        return self.pos == len(self.buf)


def _read_format(r: _Reader) -> DataFormat:
    kind_raw = r.u8()
    if kind_raw not in FormatKind._value2member_map_:
        raise MalformedBody(f"unknown format kind {kind_raw}")
    ndims = r.u8()
    if ndims == _NO_DIMS:
        dims = None
    elif ndims > 8:
        raise MalformedBody(f"dim count {ndims} exceeds wire limit")
    else:
        dims = tuple(r.u32() for _ in range(ndims))
    return DataFormat(FormatKind(kind_raw), dims)


def _read_capability(r: _Reader) -> Capability:
    code = r.u16()
    if code not in Capability._value2member_map_:
        raise UnknownCapabilityCode(f"capability code {code:#06x} is not registered")
    return Capability(code)


def _read_descriptor(r: _Reader) -> CapabilityDescriptor:
    capability = _read_capability(r)
    input_format = _read_format(r)
    output_format = _read_format(r)
    mode_raw = r.u8()
    if mode_raw not in Mode._value2member_map_:
        raise MalformedBody(f"unknown mode {mode_raw}")
    bypass_raw = r.u8()
    if bypass_raw not in (0, 1):
        raise MalformedBody(f"bypassable flag must be 0 or 1, got {bypass_raw}")
    model_load = r.u32()
    mean = r.u32()
    jitter = r.u32()
    out_bytes = r.u32()
    return CapabilityDescriptor(
        capability=capability,
        input_format=input_format,
        output_format=output_format,
        mode=Mode(mode_raw),
        bypassable=bool(bypass_raw),
        model_load_ms=model_load,
        per_frame_latency=LatencySpec(mean, jitter),
        output_bytes_per_frame=out_bytes,
    )


def decode(data: bytes) -> Message:
    """Parse a message. Never raises anything but DecodeError subclasses,
    however mangled the input."""
    if not isinstance(data, (bytes, bytearray, memoryview)):
        raise MalformedBody("decode expects bytes")
    data = bytes(data)
    if len(data) < HEADER_LEN:
        raise TruncatedBody(f"header needs {HEADER_LEN} bytes, got {len(data)}")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    cls, body_len = struct.unpack(">BI", data[4:HEADER_LEN])
    body = data[HEADER_LEN:]
    if len(body) < body_len:
        raise TruncatedBody(f"body declares {body_len} bytes, got {len(body)}")
    if len(body) > body_len:
        raise MalformedBody(f"{len(body) - body_len} trailing bytes after body")
    if cls not in (CLASS_FRAME, CLASS_CONTROL):
        raise UnknownMessageClass(f"message class {cls:#04x}")
    r = _Reader(body)
    version = r.u8()
    if version != WIRE_VERSION:
        raise MalformedBody(f"unsupported wire version {version}")
    if cls == CLASS_FRAME:
        msg = _decode_frame(r)
    else:
        msg = _decode_control(r)
    if not r.done():
        raise MalformedBody(f"{len(body) - r.pos} unparsed bytes in body")
    try:
        msg.validate()
    except InvariantViolation as exc:
        raise MalformedBody(str(exc)) from exc
    return msg


def _decode_frame(r: _Reader) -> FrameEnvelope:
    stream_id = r.u32()
    sequence = r.u64()
    partition_index = r.u16()
    partition_count = r.u16()
    payload_format = _read_format(r)
    payload = r.take(r.u32())
    trail_len = r.u16()
    trail = []
    for _ in range(trail_len):
        trail.append(int(_read_capability(r)))
    return FrameEnvelope(
        stream_id=stream_id,
        sequence=sequence,
        payload_format=payload_format,
        payload=payload,
        partition_index=partition_index,
        partition_count=partition_count,
        hop_trail=tuple(trail),
    )


def _decode_control(r: _Reader) -> ControlMessage:
    kind_raw = r.u8()
    if kind_raw not in ControlKind._value2member_map_:
        raise MalformedBody(f"unknown control kind {kind_raw}")
    kind = ControlKind(kind_raw)
    issued_at = r.u64()
    descriptor = None
    credit_delta = 0
    if kind is ControlKind.HANDSHAKE_REPLY:
        descriptor = _read_descriptor(r)
    elif kind is ControlKind.THROTTLE:
        credit_delta = r.i32()
    return ControlMessage(
        kind=kind, issued_at_ms=issued_at, descriptor=descriptor, credit_delta=credit_delta
    )


# --- partitioning ----------------------------------------------------------


def partition(
    payload: bytes,
    chunk_size: int,
    *,
    stream_id: int = 0,
    sequence: int = 0,
    payload_format: DataFormat = DataFormat(FormatKind.OPAQUE),
) -> list[FrameEnvelope]:
    """Split a payload into ceil(len/chunk_size) envelopes sharing one
    sequence number. A zero-byte payload yields exactly one empty part."""
    if chunk_size < 1:
        raise InvariantViolation("chunk_size must be >= 1")
    n_parts = max(1, math.ceil(len(payload) / chunk_size))
    if n_parts > U16_MAX:
        raise InvariantViolation("payload needs more than 65535 partitions")
    return [
        FrameEnvelope(
            stream_id=stream_id,
            sequence=sequence,
            payload_format=payload_format,
            payload=payload[i * chunk_size : (i + 1) * chunk_size],
            partition_index=i,
            partition_count=n_parts,
        )
        for i in range(n_parts)
    ]


def reassemble(parts: list[FrameEnvelope]) -> bytes:
    """Inverse of partition: parts must share stream_id and sequence and
    cover 0..partition_count-1 exactly once."""
    if not parts:
        raise MissingPartition("no parts given")
    key = (parts[0].stream_id, parts[0].sequence, parts[0].partition_count)
    by_index: dict[int, FrameEnvelope] = {}
    for p in parts:
        if (p.stream_id, p.sequence, p.partition_count) != key:
            raise MixedSequence(
                f"part {p.partition_index} belongs to a different sequence/series"
            )
        if p.partition_index in by_index:
            raise DuplicatePartition(f"partition {p.partition_index} appears twice")
        by_index[p.partition_index] = p
    count = key[2]
    missing = [i for i in range(count) if i not in by_index]
    if missing:
        raise MissingPartition(f"missing partitions {missing}")
    return b"".join(by_index[i].payload for i in range(count))
