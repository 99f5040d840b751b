"""Per-packet application-protocol resolution with per-flow state.

Each packet is tagged HTTP, Do53, DoT, TLS (with version), QUIC or Other*.
TLS versions come from two signals: the hello legacy version fields and the
supported-versions extension, carried across packets by a bounded per-flow
reassembly of the TCP byte stream. DoH and DoQ are indistinguishable from
HTTPS/QUIC on the wire and are deliberately not classified.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field

from .ingest import PacketRecord, Transport
from .tlswire import (
    CONTENT_APPLICATION_DATA,
    HANDSHAKE_CLIENT_HELLO,
    HANDSHAKE_SERVER_HELLO,
    Desync,
    NotTls,
    TlsRecordView,
    TlsVersion,
    parse_tls_records,
    resolve_tls_version,
)

DNS_PORT = 53
DOT_PORT = 853
HTTP_PORT = 80

REASSEMBLY_CAP = 65536

_HTTP_PREFIXES = (b"GET ", b"POST ", b"HEAD ", b"PUT ", b"DELETE ", b"OPTIONS ", b"HTTP/")

QUIC_V1 = 0x00000001
QUIC_V2 = 0x6B3343CF
_QUIC_DRAFT_VERSIONS = frozenset(range(0xFF00001D, 0xFF000021))
_QUIC_KNOWN_VERSIONS = frozenset({QUIC_V1, QUIC_V2}) | _QUIC_DRAFT_VERSIONS


class ProtoTag(enum.Enum):
    HTTP = "HTTP"
    DO53 = "Do53"
    DOT = "DoT"
    TLS = "TLS"
    QUIC = "QUIC"
    OTHER_TCP = "OtherTCP"
    OTHER_UDP = "OtherUDP"


@dataclass(frozen=True)
class AppProtocol:
    tag: ProtoTag
    tls_version: TlsVersion | None = None

    def __post_init__(self):
        versioned = self.tag in (ProtoTag.TLS, ProtoTag.DOT)
        if versioned != (self.tls_version is not None):
            raise ValueError("tls_version present iff tag is TLS or DoT")

    @property
    def category(self) -> str:
        """Display label; TLS expands by version, DoT collapses to one bucket."""
        if self.tag is ProtoTag.TLS:
            return self.tls_version.label
        return self.tag.value


@dataclass(frozen=True)
class FlowKey:
    endpoint_lo: tuple[str, int]
    endpoint_hi: tuple[str, int]
    transport: Transport

    @classmethod
    def from_record(cls, record: PacketRecord) -> "FlowKey":
        a = (record.src_ip, record.src_port)
        b = (record.dst_ip, record.dst_port)
        lo, hi = (a, b) if a <= b else (b, a)
        return cls(endpoint_lo=lo, endpoint_hi=hi, transport=record.transport)


@dataclass
class FlowState:
    negotiated_tls: TlsVersion | None = None
    client_hello_version_hint: TlsVersion | None = None
    quic_seen: bool = False
    client_random: bytes | None = None
    saw_tls: bool = False
    last_protocol: AppProtocol | None = None
    buffers: dict[tuple[str, int], bytes] = field(default_factory=dict)
    desync: dict[tuple[str, int], bool] = field(default_factory=dict)

    @property
    def tls_version(self) -> TlsVersion:
        return self.negotiated_tls or self.client_hello_version_hint or TlsVersion.UNKNOWN


@dataclass(frozen=True)
class ClassifiedPacket:
    record: PacketRecord
    protocol: AppProtocol
    is_app_data: bool
    flow: FlowKey

    def __post_init__(self):
        if self.is_app_data and not self.record.payload:
            raise ValueError("app-data packets must carry payload")


@dataclass(frozen=True)
class QuicInfo:
    long_header: bool
    version: int | None = None
    long_packet_type: int | None = None


def detect_quic(
    payload: bytes, src_port: int, dst_port: int, quic_seen: bool = False
) -> QuicInfo | None:
    """Recognize QUIC long headers, and short headers on known-QUIC flows.

    Ports are accepted for signature parity but the detection is purely
    header-shaped: long headers need the form+fixed bits and a known version;
    short headers are only trusted once the flow has produced a long header.
    """
    del src_port, dst_port
    if not payload:
        return None
    b0 = payload[0]
    if b0 & 0x80:
        if not b0 & 0x40 or len(payload) < 7:
            return None
        version = struct.unpack(">I", payload[1:5])[0]
        if version == 0:
            return QuicInfo(long_header=True, version=0)
        if version not in _QUIC_KNOWN_VERSIONS:
            return None
        # Packet type bits are version-specific; v1 and the drafts share the
        # Initial/0-RTT/Handshake/Retry layout.
        packet_type = (b0 & 0x30) >> 4 if version != QUIC_V2 else None
        return QuicInfo(long_header=True, version=version, long_packet_type=packet_type)
    if quic_seen and b0 & 0x40:
        return QuicInfo(long_header=False)
    return None


def dns_message(payload: bytes, transport: Transport) -> bytes | None:
    """Return the DNS message bytes if the payload is a plausible DNS message.

    TCP carries a two-byte length prefix. Well-formed means a full 12-byte
    header with QDCOUNT >= 1 or the QR response bit set.
    """
    msg = payload
    if transport is Transport.TCP:
        if len(payload) < 14:
            return None
        msg = payload[2:]
    if len(msg) < 12:
        return None
    flags, qdcount = struct.unpack(">HH", msg[2:6])
    if qdcount >= 1 or flags & 0x8000:
        return msg
    return None


def dns_query_name(payload: bytes, transport: Transport) -> str | None:
    """Extract the first question name (lowercase, dotted), if parseable."""
    msg = dns_message(payload, transport)
    if msg is None:
        return None
    labels = []
    pos = 12
    hops = 0
    while pos < len(msg):
        length = msg[pos]
        if length == 0:
            break
        if length & 0xC0 == 0xC0:
            if pos + 1 >= len(msg) or hops > 10:
                return None
            pos = ((length & 0x3F) << 8) | msg[pos + 1]
            hops += 1
            continue
        if length & 0xC0 or pos + 1 + length > len(msg):
            return None
        labels.append(msg[pos + 1 : pos + 1 + length])
        pos += 1 + length
    if not labels:
        return None
    try:
        return b".".join(labels).decode("ascii").lower()
    except UnicodeDecodeError:
        return None


def classify_dns(record: PacketRecord, tls_version: TlsVersion | None = None) -> AppProtocol | None:
    """Port-based DNS rules: Do53 needs a well-formed header, DoT is port 853."""
    if record.transport is Transport.TCP and DOT_PORT in (record.src_port, record.dst_port):
        return AppProtocol(ProtoTag.DOT, tls_version or TlsVersion.UNKNOWN)
    if DNS_PORT in (record.src_port, record.dst_port):
        if dns_message(record.payload, record.transport) is not None:
            return AppProtocol(ProtoTag.DO53)
    return None


class FlowTable:
    """Flow-confined classification state for one capture."""

    def __init__(self):
        self.states: dict[FlowKey, FlowState] = {}

    def state_for(self, key: FlowKey) -> FlowState:
        state = self.states.get(key)
        if state is None:
            state = FlowState()
            self.states[key] = state
        return state

    def classify(self, record: PacketRecord) -> ClassifiedPacket:
        key = FlowKey.from_record(record)
        state = self.state_for(key)
        payload = record.payload
        is_dot_port = record.transport is Transport.TCP and DOT_PORT in (
            record.src_port,
            record.dst_port,
        )

        if not payload:
            if state.last_protocol is not None:
                protocol = state.last_protocol
            elif is_dot_port:
                protocol = AppProtocol(ProtoTag.DOT, state.tls_version)
            else:
                protocol = _other(record.transport)
            return ClassifiedPacket(record, protocol, False, key)

        tls_ok = False
        records: list[TlsRecordView] = []
        partial_app_data = False
        if record.transport is Transport.TCP:
            tls_ok, records, partial_app_data = _ingest_tls(
                state, (record.src_ip, record.src_port), payload, record.payload_truncated
            )
            _absorb_hellos(state, records)

        has_app_record = partial_app_data or any(
            r.content_type == CONTENT_APPLICATION_DATA for r in records
        )

        protocol: AppProtocol
        is_app_data: bool
        if is_dot_port:
            protocol = AppProtocol(ProtoTag.DOT, state.tls_version)
            is_app_data = has_app_record
        elif (
            DNS_PORT in (record.src_port, record.dst_port)
            and dns_message(payload, record.transport) is not None
        ):
            protocol = AppProtocol(ProtoTag.DO53)
            is_app_data = True
        elif record.transport is Transport.TCP and tls_ok:
            protocol = AppProtocol(ProtoTag.TLS, state.tls_version)
            is_app_data = has_app_record
        elif (
            record.transport is Transport.TCP
            and state.last_protocol is not None
            and state.last_protocol.tag in (ProtoTag.TLS, ProtoTag.DOT)
        ):
            # Desynchronized tail of an established TLS flow: keep the tag,
            # treat the unparseable bytes as unknown (non-app) data.
            protocol = state.last_protocol
            is_app_data = False
        elif record.transport is Transport.TCP and HTTP_PORT in (
            record.src_port,
            record.dst_port,
        ) and payload.startswith(_HTTP_PREFIXES):
            protocol = AppProtocol(ProtoTag.HTTP)
            is_app_data = True
        else:
            quic = None
            if record.transport is Transport.UDP:
                quic = detect_quic(payload, record.src_port, record.dst_port, state.quic_seen)
            if quic is not None:
                if quic.long_header:
                    state.quic_seen = True
                protocol = AppProtocol(ProtoTag.QUIC)
                is_app_data = (not quic.long_header) or quic.long_packet_type == 1
            else:
                protocol = _other(record.transport)
                is_app_data = False

        state.last_protocol = protocol
        return ClassifiedPacket(record, protocol, is_app_data, key)


def _other(transport: Transport) -> AppProtocol:
    return AppProtocol(ProtoTag.OTHER_TCP if transport is Transport.TCP else ProtoTag.OTHER_UDP)


def _ingest_tls(
    state: FlowState, sender: tuple[str, int], payload: bytes, truncated: bool
) -> tuple[bool, list[TlsRecordView], bool]:
    """Feed one direction's payload through the record parser.

    Returns (parsed-as-TLS, complete records, partial-app-data-seen). The
    per-direction carryover buffer is bounded; truncation and desync reset it
    so the next packet re-syncs at its own segment boundary.
    """
    buf = b"" if state.desync.get(sender) else state.buffers.get(sender, b"")
    data = buf + payload
    try:
        records, remainder = parse_tls_records(data)
        broke = False
    except NotTls:
        state.buffers[sender] = b""
        if buf:
            state.desync[sender] = True
        return False, [], False
    except Desync as exc:
        records = exc.records
        remainder = b""
        broke = True

    if records:
        state.saw_tls = True
    partial_app_data = bool(remainder) and remainder[0] == CONTENT_APPLICATION_DATA

    if truncated or broke or len(remainder) > REASSEMBLY_CAP:
        state.buffers[sender] = b""
        state.desync[sender] = True
    else:
        state.buffers[sender] = remainder
        state.desync[sender] = False
    return True, records, partial_app_data


def _absorb_hellos(state: FlowState, records: list[TlsRecordView]) -> None:
    for view in records:
        if view.handshake_type == HANDSHAKE_CLIENT_HELLO:
            if state.client_random is None and view.random is not None:
                state.client_random = view.random
            state.client_hello_version_hint = resolve_tls_version(view, None)
        elif view.handshake_type == HANDSHAKE_SERVER_HELLO:
            if state.negotiated_tls is None:
                state.negotiated_tls = resolve_tls_version(None, view)


def classify_packet(record: PacketRecord, flows: FlowTable) -> ClassifiedPacket:
    return flows.classify(record)


def classify_capture(packets) -> list[ClassifiedPacket]:
    """Classify a capture's packets in order with a fresh flow table."""
    flows = FlowTable()
    return [flows.classify(record) for record in packets]
