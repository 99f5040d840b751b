"""Report envelopes and JSON/CSV serialization for the CLI.

Bodies are deterministic functions of the inputs: identical files and flags
produce byte-identical bodies. The envelope adds tool metadata, input digests
and a generation timestamp (the only varying field). The JSON shape is
described by report_schema.json shipped with the package.
"""

from __future__ import annotations

import csv
import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .analytics import (
    ComparisonReport,
    FlowGraph,
    PpmRecord,
    ProtocolDistribution,
    TemporalHistogram,
)
from .classify import ClassifiedPacket, ProtoTag, detect_quic, dns_query_name
from .dataset import BackgroundKind, DatasetManifest
from .ingest import Transport
from .keylog import CoverageReport
from .tlswire import Desync, NotTls, parse_tls_records

REPORT_SCHEMA_VERSION = 1

_RECORD_NAMES = {20: "ChangeCipherSpec", 21: "Alert", 22: "Handshake", 23: "ApplicationData"}
_HANDSHAKE_NAMES = {1: "ClientHello", 2: "ServerHello"}


def file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def make_envelope(command: str, inputs: Sequence[Path], body: dict) -> dict:
    return {
        "report_schema": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "inputs": [{"path": str(p), "sha256": file_digest(p)} for p in inputs],
        "generated_at": datetime.now(timezone.utc).isoformat(),
        "body": body,
    }


def write_envelope(envelope: dict, path: Path | None, stream) -> None:
    text = json.dumps(envelope, indent=2, sort_keys=True) + "\n"
    if path is None:
        stream.write(text)
    else:
        path.write_text(text)


def distribution_json(dist: ProtocolDistribution) -> dict:
    rows = [
        {
            "transport": transport,
            "protocol": protocol,
            "count": count,
            "pct": round(dist.percentages[(transport, protocol)], 4),
        }
        for (transport, protocol), count in sorted(dist.counts.items())
    ]
    transports = [
        {"transport": t, "count": c, "pct": round(p, 4)}
        for t, (c, p) in dist.transport_totals().items()
    ]
    return {
        "scope": dist.scope.value,
        "total": dist.total,
        "rows": rows,
        "transport_totals": transports,
    }


def histogram_json(hist: TemporalHistogram) -> dict:
    return {
        "bin_width_s": hist.bin_width_s,
        "t0_ns": hist.t0_ns,
        "n_bins": hist.n_bins,
        "series": {k: list(v) for k, v in sorted(hist.series.items())},
    }


def coverage_json(coverage: CoverageReport, malformed_lines: int) -> dict:
    return {
        "tls_flows": coverage.tls_flows,
        "flows_with_client_hello": coverage.flows_with_client_hello,
        "flows_with_keys": coverage.flows_with_keys,
        "coverage_fraction": round(coverage.coverage_fraction, 6),
        "keylog_malformed_lines": malformed_lines,
    }


def manifest_json(manifest: DatasetManifest) -> dict:
    return {
        "apps": sorted(manifest.apps),
        "n_apps": len(manifest.apps),
        "n_entries": len(manifest.entries),
        "entries": [
            {
                "app_name": e.label.app_name,
                "date": e.label.capture_date.isoformat(),
                "duration_s": e.label.duration_s,
                "capture": str(e.capture_path),
                "keylog": str(e.keylog_path) if e.keylog_path else None,
            }
            for e in manifest.entries
        ],
        "unpaired_keylogs": [str(p) for p in manifest.unpaired_keylogs],
        "unparseable": [str(p) for p in manifest.unparseable],
    }


def ppm_json(records: Sequence[PpmRecord]) -> list[dict]:
    return [
        {"app_name": r.app_name, "mean_ppm": round(r.mean_ppm, 3), "captures_used": r.captures_used}
        for r in records
    ]


def flow_graph_json(graph: FlowGraph) -> dict:
    return {
        "mode": graph.mode.value,
        "nodes": [{"stage": stage, "label": label} for stage, label in graph.nodes],
        "links": [
            {"source": [src[0], src[1]], "target": [dst[0], dst[1]], "packets": count}
            for src, dst, count in graph.links
        ],
    }


def comparison_json(report: ComparisonReport) -> dict:
    ratio = report.ppm_ratio_a_over_b
    return {
        "common_apps": list(report.common_apps),
        "distribution_a": distribution_json(report.distribution_a),
        "distribution_b": distribution_json(report.distribution_b),
        "ppm": {
            "rows": [
                {
                    "app_name": row.app_name,
                    "ppm_a": round(row.ppm_a, 3),
                    "ppm_b": round(row.ppm_b, 3),
                    "ratio_b_over_a": round(row.ratio_b_over_a, 4)
                    if row.ratio_b_over_a is not None
                    else None,
                }
                for row in report.ppm_rows
            ],
            "mean_ppm_a": round(report.mean_ppm_a, 3),
            "mean_ppm_b": round(report.mean_ppm_b, 3),
            "ratio_a_over_b": round(ratio, 4) if ratio is not None else None,
        },
        "encryption_bihistogram": {
            app: {version: {"a": a, "b": b} for version, (a, b) in versions.items()}
            for app, versions in report.encryption_bihistogram.items()
        },
        "quic_behavior": {app: b.value for app, b in report.quic_behavior.items()},
        "dns_evolution": {
            "do53_pct_a": round(report.dns_evolution.do53_pct_a, 4),
            "dot_pct_a": round(report.dns_evolution.dot_pct_a, 4),
            "do53_pct_b": round(report.dns_evolution.do53_pct_b, 4),
            "dot_pct_b": round(report.dns_evolution.dot_pct_b, 4),
        },
    }


def background_json(tags: Sequence[BackgroundKind]) -> dict:
    counts = {kind.value: 0 for kind in BackgroundKind}
    for tag in tags:
        counts[tag.value] += 1
    return counts


def describe_packet(cp: ClassifiedPacket) -> str:
    """Short info string for the per-packet feature table."""
    record = cp.record
    tag = cp.protocol.tag
    if tag in (ProtoTag.TLS, ProtoTag.DOT) and record.payload:
        try:
            views, _ = parse_tls_records(record.payload)
        except (NotTls, Desync):
            return "Continuation"
        names = []
        for view in views:
            if view.is_sslv2:
                names.append("SSLv2Handshake")
            elif view.content_type == 22 and view.handshake_type in _HANDSHAKE_NAMES:
                names.append(_HANDSHAKE_NAMES[view.handshake_type])
            elif view.content_type in _RECORD_NAMES:
                names.append(_RECORD_NAMES[view.content_type])
        return ",".join(names) if names else "Continuation"
    if tag is ProtoTag.DO53:
        name = dns_query_name(record.payload, record.transport)
        msg = record.payload[2:] if record.transport is Transport.TCP else record.payload
        kind = "Response" if len(msg) >= 4 and msg[2] & 0x80 else "Query"
        return f"{kind} {name}" if name else kind
    if tag is ProtoTag.HTTP:
        line = record.payload.split(b"\r\n", 1)[0][:80]
        return line.decode("ascii", errors="replace")
    if tag is ProtoTag.QUIC:
        info = detect_quic(record.payload, record.src_port, record.dst_port, quic_seen=True)
        if info is None:
            return ""
        return "LongHeader" if info.long_header else "ShortHeader"
    return ""


FEATURE_COLUMNS = [
    "ts_ns",
    "src_ip",
    "src_port",
    "dst_ip",
    "dst_port",
    "transport",
    "protocol",
    "info",
    "app_data",
    "packet_len",
]


def feature_rows(classified: Sequence[ClassifiedPacket]) -> list[dict]:
    rows = []
    for cp in classified:
        r = cp.record
        rows.append(
            {
                "ts_ns": r.ts_ns,
                "src_ip": r.src_ip,
                "src_port": r.src_port,
                "dst_ip": r.dst_ip,
                "dst_port": r.dst_port,
                "transport": r.transport.value,
                "protocol": cp.protocol.category,
                "info": describe_packet(cp),
                "app_data": cp.is_app_data,
                "packet_len": r.packet_len,
            }
        )
    return rows


def write_feature_csv(rows: Sequence[dict], path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=FEATURE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)


COMPARE_COLUMNS = ["app", "ppm_a", "ppm_b", "ratio"]


def write_compare_csv(report: ComparisonReport, path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARE_COLUMNS)
        for row in report.ppm_rows:
            ratio = row.ratio_b_over_a
            writer.writerow(
                [
                    row.app_name,
                    f"{row.ppm_a:.3f}",
                    f"{row.ppm_b:.3f}",
                    f"{ratio:.4f}" if ratio is not None else "",
                ]
            )


STATS_COLUMNS = ["app", "captures", "mean_ppm"]


def write_stats_csv(records: Sequence[PpmRecord], path: Path) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(STATS_COLUMNS)
        for r in records:
            writer.writerow([r.app_name, r.captures_used, f"{r.mean_ppm:.3f}"])
