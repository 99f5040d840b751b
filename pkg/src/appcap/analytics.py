"""Dataset statistics: distributions, rates, histograms and comparisons.

All reducers are plain counting over classified packets, so per-capture work
can run in parallel and merge deterministically. Percentages are emitted for
nonzero categories only; display concerns like log scaling stay out of here.
"""

from __future__ import annotations

import enum
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

from .classify import ClassifiedPacket, ProtoTag
from .dataset import CaptureLabel, truncate_packets
from .ingest import Transport
from .tlswire import TlsVersion

NS_PER_SECOND = 1_000_000_000


class Scope(enum.Enum):
    ALL_PACKETS = "all_packets"
    APP_DATA_ONLY = "app_data_only"


@dataclass
class ProtocolDistribution:
    counts: dict[tuple[str, str], int]
    total: int
    percentages: dict[tuple[str, str], float]
    scope: Scope

    def transport_totals(self) -> dict[str, tuple[int, float]]:
        sums: Counter = Counter()
        for (transport, _), count in self.counts.items():
            sums[transport] += count
        return {
            t: (c, 100.0 * c / self.total if self.total else 0.0) for t, c in sorted(sums.items())
        }


def protocol_distribution(
    classified: Sequence[ClassifiedPacket], scope: Scope = Scope.ALL_PACKETS
) -> ProtocolDistribution:
    counts: Counter = Counter()
    for cp in classified:
        if scope is Scope.APP_DATA_ONLY and not cp.is_app_data:
            continue
        counts[(cp.record.transport.value, cp.protocol.category)] += 1
    total = sum(counts.values())
    percentages = {key: 100.0 * count / total for key, count in counts.items()} if total else {}
    return ProtocolDistribution(
        counts=dict(counts), total=total, percentages=percentages, scope=scope
    )


# The five temporal-histogram series.
HIST_TCP_ENCRYPTED = "tcp_encrypted"
HIST_QUIC = "quic"
HIST_DO53 = "do53"
HIST_DOT = "dot"
HIST_HTTP = "http"

_HIST_CATEGORY = {
    ProtoTag.TLS: HIST_TCP_ENCRYPTED,
    ProtoTag.QUIC: HIST_QUIC,
    ProtoTag.DO53: HIST_DO53,
    ProtoTag.DOT: HIST_DOT,
    ProtoTag.HTTP: HIST_HTTP,
}


@dataclass
class TemporalHistogram:
    bin_width_s: float
    t0_ns: int | None
    series: dict[str, list[int]]

    @property
    def n_bins(self) -> int:
        return max((len(s) for s in self.series.values()), default=0)

    def bins(self) -> list[dict[str, int]]:
        out = []
        for i in range(self.n_bins):
            out.append({proto: s[i] if i < len(s) else 0 for proto, s in self.series.items()})
        return out


def temporal_histogram(
    classified: Sequence[ClassifiedPacket],
    bin_width_s: float = 10.0,
    app_data_only: bool = True,
) -> TemporalHistogram:
    """Per-protocol packet counts binned from the first packet onward."""
    if bin_width_s <= 0:
        raise ValueError("bin_width_s must be positive")
    if not classified:
        return TemporalHistogram(bin_width_s=bin_width_s, t0_ns=None, series={})
    t0 = min(cp.record.ts_ns for cp in classified)
    width_ns = int(bin_width_s * NS_PER_SECOND)
    series: dict[str, list[int]] = {}
    for cp in classified:
        if app_data_only and not cp.is_app_data:
            continue
        category = _HIST_CATEGORY.get(cp.protocol.tag)
        if category is None:
            continue
        idx = (cp.record.ts_ns - t0) // width_ns
        bins = series.setdefault(category, [])
        if len(bins) <= idx:
            bins.extend([0] * (idx + 1 - len(bins)))
        bins[idx] += 1
    n = max((len(s) for s in series.values()), default=0)
    for bins in series.values():
        bins.extend([0] * (n - len(bins)))
    return TemporalHistogram(bin_width_s=bin_width_s, t0_ns=t0, series=series)


def packets_per_minute(
    capture: Sequence[ClassifiedPacket], label: CaptureLabel | None = None
) -> float:
    """Packet rate over the labeled duration, or the observed span if unlabeled."""
    count = len(capture)
    if count == 0:
        return 0.0
    if label is not None:
        duration_s = float(label.duration_s)
    else:
        ts = [cp.record.ts_ns for cp in capture]
        duration_s = (max(ts) - min(ts)) / NS_PER_SECOND
    duration_s = max(duration_s, 1.0)
    return count * 60.0 / duration_s


@dataclass(frozen=True)
class PpmRecord:
    app_name: str
    mean_ppm: float
    captures_used: int


Captures = Sequence[tuple[CaptureLabel, Sequence[ClassifiedPacket]]]


def mean_ppm_per_app(captures: Captures) -> list[PpmRecord]:
    per_app: dict[str, list[float]] = defaultdict(list)
    for label, packets in captures:
        per_app[label.app_name].append(packets_per_minute(packets, label))
    return [
        PpmRecord(app_name=app, mean_ppm=sum(values) / len(values), captures_used=len(values))
        for app, values in sorted(per_app.items())
    ]


def dataset_mean_ppm(records: Sequence[PpmRecord]) -> float:
    """Unweighted mean over apps of per-app mean rates."""
    if not records:
        return 0.0
    return sum(r.mean_ppm for r in records) / len(records)


@dataclass
class EncryptionBreakdown:
    tcp_encrypted_counts: dict[TlsVersion, int]
    tcp_encrypted_pct: dict[TlsVersion, float]
    tcp_encrypted_total: int
    quic_total: int
    quic_share_pct: float
    dot_total: int
    dot_pct_of_total: float
    dot_version_counts: dict[TlsVersion, int]
    dot_version_pct: dict[TlsVersion, float]
    total_app_data: int


def encryption_breakdown(classified: Sequence[ClassifiedPacket]) -> EncryptionBreakdown:
    """Version shares of TCP-encrypted traffic plus QUIC and DoT shares.

    The TCP-encrypted denominator is every TLS or DoT app-data packet over
    TCP; QUIC and DoT shares are of all app-data packets.
    """
    tcp_counts: Counter = Counter()
    dot_counts: Counter = Counter()
    quic_total = 0
    dot_total = 0
    total_app_data = 0
    for cp in classified:
        if not cp.is_app_data:
            continue
        total_app_data += 1
        tag = cp.protocol.tag
        if tag in (ProtoTag.TLS, ProtoTag.DOT) and cp.record.transport is Transport.TCP:
            tcp_counts[cp.protocol.tls_version] += 1
        if tag is ProtoTag.QUIC:
            quic_total += 1
        elif tag is ProtoTag.DOT:
            dot_total += 1
            dot_counts[cp.protocol.tls_version] += 1
    tcp_total = sum(tcp_counts.values())
    return EncryptionBreakdown(
        tcp_encrypted_counts=dict(tcp_counts),
        tcp_encrypted_pct={v: 100.0 * c / tcp_total for v, c in tcp_counts.items()},
        tcp_encrypted_total=tcp_total,
        quic_total=quic_total,
        quic_share_pct=100.0 * quic_total / total_app_data if total_app_data else 0.0,
        dot_total=dot_total,
        dot_pct_of_total=100.0 * dot_total / total_app_data if total_app_data else 0.0,
        dot_version_counts=dict(dot_counts),
        dot_version_pct={v: 100.0 * c / dot_total for v, c in dot_counts.items()},
        total_app_data=total_app_data,
    )


class FlowGraphMode(enum.Enum):
    COMM_GRAPH6 = "CommGraph6"
    SANKEY3 = "Sankey3"


ENCRYPTED_TAGS = frozenset({ProtoTag.TLS, ProtoTag.DOT, ProtoTag.QUIC})

Node = tuple[int, str]


@dataclass
class FlowGraph:
    mode: FlowGraphMode
    nodes: list[Node]
    links: list[tuple[Node, Node, int]]


def flow_graph(
    captures: Iterable[tuple[str, Sequence[ClassifiedPacket]]],
    mode: FlowGraphMode,
    app_data_only: bool | None = None,
    port_interval_width: int = 4096,
) -> FlowGraph:
    """Stage-by-stage packet flow graph.

    CommGraph6 stages source IPs through transports, source-port intervals,
    destination ports and IPs to app names over all packets; Sankey3 stages
    transport through encryption status to terminal protocol over app-data
    packets. Interior nodes conserve flow by construction.
    """
    if app_data_only is None:
        app_data_only = mode is FlowGraphMode.SANKEY3
    links: Counter = Counter()
    for app_name, packets in captures:
        for cp in packets:
            if app_data_only and not cp.is_app_data:
                continue
            stages = _stages_for(cp, app_name, mode, port_interval_width)
            for i in range(len(stages) - 1):
                links[((i, stages[i]), (i + 1, stages[i + 1]))] += 1
    nodes = sorted({node for pair in links for node in pair[:2]})
    ordered_links = [(src, dst, count) for (src, dst), count in sorted(links.items())]
    return FlowGraph(mode=mode, nodes=nodes, links=ordered_links)


def _stages_for(
    cp: ClassifiedPacket, app_name: str, mode: FlowGraphMode, interval: int
) -> list[str]:
    record = cp.record
    if mode is FlowGraphMode.COMM_GRAPH6:
        lo = (record.src_port // interval) * interval
        return [
            record.src_ip,
            record.transport.value,
            f"{lo}-{lo + interval - 1}",
            str(record.dst_port),
            record.dst_ip,
            app_name,
        ]
    status = "Encrypted" if cp.protocol.tag in ENCRYPTED_TAGS else "Cleartext"
    return [record.transport.value, status, cp.protocol.category]


class QuicBehavior(enum.Enum):
    CONSISTENT_BOTH = "ConsistentBoth"
    ADOPTED_IN_B = "AdoptedInB"
    PRESENT_IN_A_ONLY_IN_B_ABSENT = "PresentInAOnlyInB_Absent"
    ABSENT_BOTH = "AbsentBoth"


def quic_behavior_for(count_a: int, count_b: int) -> QuicBehavior:
    """Total over the sign pair of per-dataset QUIC packet counts."""
    if count_a > 0 and count_b > 0:
        return QuicBehavior.CONSISTENT_BOTH
    if count_a > 0:
        return QuicBehavior.PRESENT_IN_A_ONLY_IN_B_ABSENT
    if count_b > 0:
        return QuicBehavior.ADOPTED_IN_B
    return QuicBehavior.ABSENT_BOTH


class NoCommonApps(ValueError):
    """The two datasets share no app names."""


@dataclass(frozen=True)
class PpmComparison:
    app_name: str
    ppm_a: float
    ppm_b: float

    @property
    def ratio_b_over_a(self) -> float | None:
        return self.ppm_b / self.ppm_a if self.ppm_a else None


@dataclass(frozen=True)
class DnsEvolution:
    do53_pct_a: float
    dot_pct_a: float
    do53_pct_b: float
    dot_pct_b: float


@dataclass
class ComparisonReport:
    common_apps: tuple[str, ...]
    distribution_a: ProtocolDistribution
    distribution_b: ProtocolDistribution
    ppm_rows: list[PpmComparison]
    mean_ppm_a: float
    mean_ppm_b: float
    encryption_bihistogram: dict[str, dict[str, tuple[int, int]]]
    quic_behavior: dict[str, QuicBehavior]
    dns_evolution: DnsEvolution

    @property
    def ppm_ratio_a_over_b(self) -> float | None:
        return self.mean_ppm_a / self.mean_ppm_b if self.mean_ppm_b else None


def compare_datasets(
    a: Captures,
    b: Captures,
    truncate_min: float | None = None,
    truncate_min_a: float | None = None,
    truncate_min_b: float | None = None,
    common_only: bool = True,
) -> ComparisonReport:
    """Cross-dataset report over the apps present in both datasets.

    Truncation applies symmetrically unless a per-dataset override is given,
    and always before any statistic. Per-app fields are keyed by the common
    apps; ``common_only`` controls whether the dataset-level distributions
    also drop non-common apps.
    """
    a = _truncated(a, truncate_min_a if truncate_min_a is not None else truncate_min)
    b = _truncated(b, truncate_min_b if truncate_min_b is not None else truncate_min)
    apps_a = {label.app_name for label, _ in a}
    apps_b = {label.app_name for label, _ in b}
    common = tuple(sorted(apps_a & apps_b))
    if not common:
        raise NoCommonApps("datasets share no app names")
    common_set = set(common)
    a_common = [(label, pkts) for label, pkts in a if label.app_name in common_set]
    b_common = [(label, pkts) for label, pkts in b if label.app_name in common_set]

    dist_source_a = a_common if common_only else a
    dist_source_b = b_common if common_only else b
    distribution_a = protocol_distribution(_concat(dist_source_a), Scope.APP_DATA_ONLY)
    distribution_b = protocol_distribution(_concat(dist_source_b), Scope.APP_DATA_ONLY)

    ppm_a = {r.app_name: r for r in mean_ppm_per_app(a_common)}
    ppm_b = {r.app_name: r for r in mean_ppm_per_app(b_common)}
    ppm_rows = [
        PpmComparison(
            app_name=app,
            ppm_a=ppm_a[app].mean_ppm if app in ppm_a else 0.0,
            ppm_b=ppm_b[app].mean_ppm if app in ppm_b else 0.0,
        )
        for app in common
    ]
    mean_a = dataset_mean_ppm(list(ppm_a.values()))
    mean_b = dataset_mean_ppm(list(ppm_b.values()))

    bihistogram: dict[str, dict[str, tuple[int, int]]] = {}
    quic_counts_a = _per_app_quic(a_common)
    quic_counts_b = _per_app_quic(b_common)
    versions_a = _per_app_versions(a_common)
    versions_b = _per_app_versions(b_common)
    for app in common:
        merged: dict[str, tuple[int, int]] = {}
        labels = set(versions_a.get(app, {})) | set(versions_b.get(app, {}))
        for label in sorted(labels):
            merged[label] = (
                versions_a.get(app, {}).get(label, 0),
                versions_b.get(app, {}).get(label, 0),
            )
        bihistogram[app] = merged

    quic_behavior = {
        app: quic_behavior_for(quic_counts_a.get(app, 0), quic_counts_b.get(app, 0))
        for app in common
    }

    return ComparisonReport(
        common_apps=common,
        distribution_a=distribution_a,
        distribution_b=distribution_b,
        ppm_rows=ppm_rows,
        mean_ppm_a=mean_a,
        mean_ppm_b=mean_b,
        encryption_bihistogram=bihistogram,
        quic_behavior=quic_behavior,
        dns_evolution=_dns_evolution(a_common, b_common),
    )


def _truncated(captures: Captures, minutes: float | None) -> Captures:
    if minutes is None:
        return [(label, list(pkts)) for label, pkts in captures]
    return [(label, truncate_packets(pkts, minutes)) for label, pkts in captures]


def _concat(captures: Captures) -> list[ClassifiedPacket]:
    out: list[ClassifiedPacket] = []
    for _, pkts in captures:
        out.extend(pkts)
    return out


def _per_app_quic(captures: Captures) -> dict[str, int]:
    counts: Counter = Counter()
    for label, pkts in captures:
        counts[label.app_name] += sum(1 for cp in pkts if cp.protocol.tag is ProtoTag.QUIC)
    return dict(counts)


def _per_app_versions(captures: Captures) -> dict[str, dict[str, int]]:
    """Per-app TLS-version packet counts over TCP (TLS and DoT tags)."""
    out: dict[str, Counter] = defaultdict(Counter)
    for label, pkts in captures:
        for cp in pkts:
            if cp.protocol.tag in (ProtoTag.TLS, ProtoTag.DOT):
                out[label.app_name][cp.protocol.tls_version.label] += 1
    return {app: dict(c) for app, c in out.items()}


def _dns_evolution(a: Captures, b: Captures) -> DnsEvolution:
    do53_a, dot_a = _dns_counts(a)
    do53_b, dot_b = _dns_counts(b)
    return DnsEvolution(
        do53_pct_a=_pct(do53_a, do53_a + dot_a),
        dot_pct_a=_pct(dot_a, do53_a + dot_a),
        do53_pct_b=_pct(do53_b, do53_b + dot_b),
        dot_pct_b=_pct(dot_b, do53_b + dot_b),
    )


def _dns_counts(captures: Captures) -> tuple[int, int]:
    do53 = 0
    dot = 0
    for _, pkts in captures:
        for cp in pkts:
            if not cp.is_app_data:
                continue
            if cp.protocol.tag is ProtoTag.DO53:
                do53 += 1
            elif cp.protocol.tag is ProtoTag.DOT:
                dot += 1
    return do53, dot


def _pct(part: int, whole: int) -> float:
    return 100.0 * part / whole if whole else 0.0
