"""Command-line surface: analyze, dataset scan/stats, compare, keycov,
baseline and synth.

Exit codes: 0 success, 2 I/O problems, 3 domain problems (unparseable
capture, empty dataset, no common apps), 64 usage errors including invalid
fixture specs. Relative --json/--csv paths resolve against $APPCAP_OUTPUT_DIR
when it is set.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .analytics import (
    FlowGraphMode,
    NoCommonApps,
    Scope,
    compare_datasets,
    flow_graph,
    mean_ppm_per_app,
    protocol_distribution,
    temporal_histogram,
)
from .classify import ClassifiedPacket, FlowTable
from .dataset import (
    BackgroundKind,
    CaptureLabel,
    DatasetManifest,
    attribute_background,
    scan_directory,
    truncate_packets,
)
from .ingest import CaptureError, PacketRecord, decode_stream, read_capture
from .keylog import key_coverage, parse_keylog
from .reports import (
    background_json,
    comparison_json,
    coverage_json,
    distribution_json,
    feature_rows,
    flow_graph_json,
    histogram_json,
    make_envelope,
    manifest_json,
    ppm_json,
    write_compare_csv,
    write_envelope,
    write_feature_csv,
    write_stats_csv,
)
from .synth import FixtureSpec, FixtureSpecError, parse_fixture_spec, synth_dataset

EXIT_OK = 0
EXIT_IO = 2
EXIT_DOMAIN = 3
EXIT_USAGE = 64

OUTPUT_DIR_ENV = "APPCAP_OUTPUT_DIR"


class _DomainError(Exception):
    """Carries a user-facing message for exit code 3."""


class _UsageError(Exception):
    """Carries a user-facing message for exit code 64."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be > 0")
    return value


def build_parser() -> _Parser:
    parser = _Parser(prog="appcap", description="Packet-capture analysis toolkit")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    analyze = sub.add_parser("analyze", help="per-capture features, distribution, histogram")
    analyze.add_argument("capture", type=Path)
    analyze.add_argument("--keylog", type=Path, help="paired SSL key log for coverage")
    analyze.add_argument("--app-data-only", action="store_true")
    analyze.add_argument("--bins", type=_positive_float, default=10.0, metavar="SECONDS")
    _output_flags(analyze)
    analyze.set_defaults(func=cmd_analyze)

    dataset = sub.add_parser("dataset", help="dataset directory operations")
    dsub = dataset.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    scan = dsub.add_parser("scan", help="inventory a labeled dataset directory")
    scan.add_argument("directory", type=Path)
    _output_flags(scan, csv=False)
    scan.set_defaults(func=cmd_dataset_scan)
    stats = dsub.add_parser("stats", help="per-app rates and dataset distribution")
    stats.add_argument("directory", type=Path)
    stats.add_argument("--truncate-min", type=_positive_float, metavar="MINUTES")
    stats.add_argument("--app-data-only", action="store_true")
    _output_flags(stats)
    stats.set_defaults(func=cmd_dataset_stats)

    compare = sub.add_parser("compare", help="cross-dataset comparison report")
    compare.add_argument("dir_a", type=Path)
    compare.add_argument("dir_b", type=Path)
    compare.add_argument("--truncate-min", type=_positive_float, metavar="MINUTES")
    compare.add_argument(
        "--common-only",
        action="store_true",
        help="restrict dataset-level distributions to common apps",
    )
    _output_flags(compare)
    compare.set_defaults(func=cmd_compare)

    keycov = sub.add_parser("keycov", help="key log coverage of a capture's TLS flows")
    keycov.add_argument("capture", type=Path)
    keycov.add_argument("keylog", type=Path)
    _output_flags(keycov, csv=False)
    keycov.set_defaults(func=cmd_keycov)

    baseline = sub.add_parser("baseline", help="background-traffic attribution")
    baseline.add_argument("capture", type=Path)
    baseline.add_argument("--bins", type=_positive_float, default=10.0, metavar="SECONDS")
    _output_flags(baseline, csv=False)
    baseline.set_defaults(func=cmd_baseline)

    synth = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    synth.add_argument("spec", type=Path)
    synth.add_argument(
        "out_dir",
        type=Path,
        nargs="?",
        help=f"output directory (default: ${OUTPUT_DIR_ENV})",
    )
    synth.add_argument("--seed", type=int, metavar="U64", help="override the spec's seed")
    synth.set_defaults(func=cmd_synth)

    return parser


def _output_flags(parser, csv: bool = True) -> None:
    parser.add_argument("--json", dest="json_path", metavar="PATH", help="write report JSON ('-' for stdout)")
    if csv:
        parser.add_argument("--csv", dest="csv_path", metavar="PATH")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FixtureSpecError as exc:
        print(f"appcap: invalid fixture spec: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except CaptureError as exc:
        print(f"appcap: cannot parse capture: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except NoCommonApps as exc:
        print(f"appcap: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except _DomainError as exc:
        print(f"appcap: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except _UsageError as exc:
        print(f"appcap: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"appcap: {exc}", file=sys.stderr)
        return EXIT_IO


def _resolve_out(path_text: str | None) -> Path | None:
    if path_text is None or path_text == "-":
        return None
    path = Path(path_text)
    base = os.environ.get(OUTPUT_DIR_ENV)
    if base and not path.is_absolute():
        path = Path(base) / path
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _resolve_csv(path_text: str) -> Path:
    path = _resolve_out(path_text)
    if path is None:
        raise _UsageError("--csv needs a file path, not '-'")
    return path


def _emit(args, envelope: dict) -> None:
    if getattr(args, "json_path", None) is not None:
        write_envelope(envelope, _resolve_out(args.json_path), sys.stdout)


def _load_records(path: Path) -> list[PacketRecord]:
    stream = read_capture(path.read_bytes())
    return decode_stream(stream)


def _classify_file(path: Path) -> tuple[list[ClassifiedPacket], FlowTable]:
    flows = FlowTable()
    classified = [flows.classify(r) for r in _load_records(path)]
    return classified, flows


def _load_dataset(directory: Path) -> tuple[DatasetManifest, list[tuple[CaptureLabel, list[ClassifiedPacket]]]]:
    if not directory.is_dir():
        raise _DomainError(f"not a dataset directory: {directory}")
    manifest = scan_directory(directory)
    captures = []
    for entry in manifest.entries:
        classified, _ = _classify_file(entry.capture_path)
        captures.append((entry.label, classified))
    return manifest, captures


def cmd_analyze(args) -> int:
    classified, flows = _classify_file(args.capture)
    scope = Scope.APP_DATA_ONLY if args.app_data_only else Scope.ALL_PACKETS
    rows_source = [cp for cp in classified if cp.is_app_data] if args.app_data_only else classified
    dist = protocol_distribution(classified, scope)
    hist = temporal_histogram(classified, bin_width_s=args.bins)
    body = {
        "packets": feature_rows(rows_source),
        "distribution": distribution_json(dist),
        "histogram": histogram_json(hist),
    }
    if args.keylog is not None:
        index = parse_keylog(args.keylog.read_text())
        coverage = key_coverage(classified, index, flows.states)
        body["coverage"] = coverage_json(coverage, index.malformed_lines)
    inputs = [args.capture] + ([args.keylog] if args.keylog else [])
    envelope = make_envelope("analyze", inputs, body)
    if args.csv_path:
        write_feature_csv(body["packets"], _resolve_csv(args.csv_path))
    _emit(args, envelope)
    if args.json_path is None:
        _print_distribution(dist)
    return EXIT_OK


def _print_distribution(dist) -> None:
    print(f"packets: {dist.total} ({dist.scope.value})")
    for (transport, protocol), count in sorted(dist.counts.items()):
        pct = dist.percentages[(transport, protocol)]
        print(f"  {transport:<4} {protocol:<10} {count:>8}  {pct:6.2f}%")


def cmd_dataset_scan(args) -> int:
    if not args.directory.is_dir():
        raise _DomainError(f"not a dataset directory: {args.directory}")
    manifest = scan_directory(args.directory)
    envelope = make_envelope("dataset-scan", [], {"manifest": manifest_json(manifest)})
    _emit(args, envelope)
    if args.json_path is None:
        print(
            f"apps: {len(manifest.apps)}  captures: {len(manifest.entries)}  "
            f"unpaired keylogs: {len(manifest.unpaired_keylogs)}  "
            f"unparseable: {len(manifest.unparseable)}"
        )
    return EXIT_OK


def cmd_dataset_stats(args) -> int:
    manifest, captures = _load_dataset(args.directory)
    if not captures:
        raise _DomainError(f"no captures found in {args.directory}")
    if args.truncate_min is not None:
        captures = [(label, truncate_packets(pkts, args.truncate_min)) for label, pkts in captures]
    scope = Scope.APP_DATA_ONLY if args.app_data_only else Scope.ALL_PACKETS
    all_packets = [cp for _, pkts in captures for cp in pkts]
    dist = protocol_distribution(all_packets, scope)
    ppm = mean_ppm_per_app(captures)
    body = {
        "manifest": manifest_json(manifest),
        "ppm": ppm_json(ppm),
        "distribution": distribution_json(dist),
    }
    envelope = make_envelope("dataset-stats", [e.capture_path for e in manifest.entries], body)
    if args.csv_path:
        write_stats_csv(ppm, _resolve_csv(args.csv_path))
    _emit(args, envelope)
    if args.json_path is None:
        for record in ppm:
            print(f"{record.app_name:<40} {record.mean_ppm:>12.1f} ppm ({record.captures_used} captures)")
        _print_distribution(dist)
    return EXIT_OK


def cmd_compare(args) -> int:
    manifest_a, captures_a = _load_dataset(args.dir_a)
    manifest_b, captures_b = _load_dataset(args.dir_b)
    report = compare_datasets(
        captures_a,
        captures_b,
        truncate_min=args.truncate_min,
        common_only=args.common_only,
    )
    common = set(report.common_apps)
    sankey_a = flow_graph(
        [(label.app_name, pkts) for label, pkts in captures_a if label.app_name in common],
        FlowGraphMode.SANKEY3,
    )
    sankey_b = flow_graph(
        [(label.app_name, pkts) for label, pkts in captures_b if label.app_name in common],
        FlowGraphMode.SANKEY3,
    )
    body = comparison_json(report)
    body["sankey_a"] = flow_graph_json(sankey_a)
    body["sankey_b"] = flow_graph_json(sankey_b)
    inputs = [e.capture_path for e in manifest_a.entries] + [
        e.capture_path for e in manifest_b.entries
    ]
    envelope = make_envelope("compare", inputs, body)
    if args.csv_path:
        write_compare_csv(report, _resolve_csv(args.csv_path))
    _emit(args, envelope)
    if args.json_path is None:
        dns = report.dns_evolution
        print(f"common apps: {len(report.common_apps)}")
        print(f"mean ppm: a={report.mean_ppm_a:.0f} b={report.mean_ppm_b:.0f}")
        print(
            f"dns evolution: a Do53/DoT {dns.do53_pct_a:.1f}/{dns.dot_pct_a:.1f}  "
            f"b Do53/DoT {dns.do53_pct_b:.1f}/{dns.dot_pct_b:.1f}"
        )
    return EXIT_OK


def cmd_keycov(args) -> int:
    classified, flows = _classify_file(args.capture)
    index = parse_keylog(args.keylog.read_text())
    coverage = key_coverage(classified, index, flows.states)
    body = {"coverage": coverage_json(coverage, index.malformed_lines)}
    envelope = make_envelope("keycov", [args.capture, args.keylog], body)
    _emit(args, envelope)
    if args.json_path is None:
        print(
            f"tls flows: {coverage.tls_flows}  with hello: {coverage.flows_with_client_hello}  "
            f"with keys: {coverage.flows_with_keys}  coverage: {coverage.coverage_fraction:.3f}"
        )
    return EXIT_OK


def cmd_baseline(args) -> int:
    classified, _ = _classify_file(args.capture)
    tags = attribute_background(classified, baseline_mode=True)
    tagged = [cp for cp, tag in zip(classified, tags) if tag is not BackgroundKind.NONE]
    hist = temporal_histogram(tagged, bin_width_s=args.bins)
    body = {"tags": background_json(tags), "histogram": histogram_json(hist)}
    envelope = make_envelope("baseline", [args.capture], body)
    _emit(args, envelope)
    if args.json_path is None:
        for kind, count in body["tags"].items():
            print(f"  {kind:<18} {count}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec_obj = json.loads(args.spec.read_text())
    except json.JSONDecodeError as exc:
        raise FixtureSpecError("$", f"not valid JSON: {exc}") from exc
    spec = parse_fixture_spec(spec_obj)
    if args.seed is not None:
        if args.seed < 0:
            raise FixtureSpecError("seed", "must be a non-negative integer")
        spec = FixtureSpec(
            apps=spec.apps,
            seed=args.seed,
            linktype=spec.linktype,
            ts_resolution=spec.ts_resolution,
            base_date=spec.base_date,
        )
    out_dir = args.out_dir
    if out_dir is None:
        env = os.environ.get(OUTPUT_DIR_ENV)
        if env is None:
            print(
                f"appcap: synth needs an output directory (argument or ${OUTPUT_DIR_ENV})",
                file=sys.stderr,
            )
            return EXIT_USAGE
        out_dir = Path(env)
    written = synth_dataset(spec, out_dir)
    for path in written:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
