"""Command-line entry point: ``reviewjudge judge|eval|serve|cost-report``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from decimal import Decimal
from pathlib import Path
from typing import Sequence

from .config import ConfigError, Settings, load_settings
from .cost import CostRecord, PricingTable, UnknownPricingKey, aggregate_cost, estimate_cost, format_usd
from .diff import MalformedDiff, ReviewComment, parse_unified_diff
from .evalharness import DatasetError, load_dataset, run_evaluation
from .gate import GateConfig, GateMode, gate, parse_strategy_set
from .judgment import EnsembleVerdict, InvalidThreshold
from .pipeline import Judge, Unjudgeable
from .provider import AuditLog, Gateway, MockProvider, ProviderError, RetryPolicy, Usage, UsageSource, default_providers
from .strategies import IncompleteCatalog

EXIT_OK = 0
EXIT_HALLUCINATED = 1
EXIT_USAGE = 2
EXIT_PROVIDER = 3

log = logging.getLogger("reviewjudge")


class UsageError(Exception):
    pass


def _settings(args: argparse.Namespace) -> Settings:
    base = load_settings(args.config)
    return base.merge(
        {
            "model": getattr(args, "model", None),
            "strategy": getattr(args, "strategy", None),
            "threshold": getattr(args, "threshold", None),
            "concurrency": getattr(args, "concurrency", None),
            "mode": getattr(args, "mode", None),
            "pricing_path": getattr(args, "pricing", None),
            "fewshot_path": getattr(args, "fewshot", None),
            "mock_script": getattr(args, "mock_script", None),
            "audit_log": getattr(args, "audit_log", None),
            "pricing_key": getattr(args, "pricing_key", None),
        }
    )


def build_judge(settings: Settings) -> Judge:
    spec = settings.model_spec()
    mock = None
    if spec.provider_id == "mock":
        if not settings.mock_script:
            raise UsageError("model 'mock' needs --mock-script")
        try:
            mock = MockProvider.from_file(settings.mock_script)
        except (OSError, ValueError, TypeError) as exc:
            raise UsageError(f"cannot load mock script: {exc}") from exc
    gateway = Gateway(
        default_providers(mock),
        RetryPolicy(max_attempts=settings.max_attempts),
        max_in_flight=settings.concurrency,
        audit=AuditLog(settings.audit_log) if settings.audit_log else None,
    )
    return Judge(gateway, spec, settings.pricing(), settings.catalog())


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    return Path(path).read_text(encoding="utf-8")


def cmd_judge(args: argparse.Namespace) -> int:
    settings = _settings(args)
    if args.comment is not None and args.comment_file is not None:
        raise UsageError("give either --comment or --comment-file, not both")
    comment_text = args.comment if args.comment is not None else (
        _read_text(args.comment_file) if args.comment_file else None
    )
    if comment_text is None or not comment_text.strip():
        raise UsageError("comment text must be non-empty (precondition: --comment/--comment-file)")
    try:
        diff = parse_unified_diff(_read_text(args.diff))
    except OSError as exc:
        raise UsageError(f"cannot read diff: {exc}") from exc
    strategies = parse_strategy_set(settings.strategy)
    config = GateConfig(strategies, settings.model_spec(), settings.threshold, GateMode.BLOCK)
    judge = build_judge(settings)
    decision = gate(judge, config, diff, ReviewComment("cli", comment_text))
    body = decision.to_dict()
    del body["allow"], body["mode"]
    body["usage"]["source"] = decision.judgement.usage.source.value
    if args.output == "json":
        print(json.dumps(body, indent=2, ensure_ascii=False))
    else:
        verdict = "HALLUCINATED" if decision.verdict.hallucinated else "ok"
        scores = (
            ", ".join(f"{k}={v}" for k, v in body["scores"].items())
            if isinstance(decision.verdict, EnsembleVerdict)
            else str(body["score"])
        )
        print(f"verdict: {verdict} (score {scores}, threshold {body['threshold']})")
        print(f"explanation: {decision.explanation}")
        print(f"usage: in={body['usage']['input_tokens']} out={body['usage']['output_tokens']} "
              f"({body['usage']['source']})")
        print(f"cost: ${body['cost_usd_exact']}")
    return EXIT_HALLUCINATED if decision.verdict.hallucinated else EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    settings = _settings(args)
    try:
        dataset = load_dataset(args.dataset)
    except OSError as exc:
        raise UsageError(f"cannot read dataset: {exc}") from exc
    strategies = parse_strategy_set(settings.strategy)
    judge = build_judge(settings)
    report = run_evaluation(dataset, strategies, judge, settings.threshold, settings.concurrency)
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    print(report.render_table())
    return EXIT_OK


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import make_server

    settings = _settings(args)
    config = GateConfig(
        parse_strategy_set(settings.strategy), settings.model_spec(), settings.threshold, GateMode(settings.mode)
    )
    judge = build_judge(settings)
    audit = AuditLog(args.decision_log) if args.decision_log else None
    server = make_server(args.host, args.port, judge, config, audit)
    log.warning("serving on http://%s:%d (mode=%s)", *server.server_address[:2], config.mode.value)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _records_from_file(path: str, pricing: PricingTable, default_key: str | None) -> list[CostRecord]:
    text = Path(path).read_text(encoding="utf-8")
    records: list[CostRecord] = []
    try:
        report = json.loads(text)
    except json.JSONDecodeError:
        report = None
    if isinstance(report, dict) and "cases" in report:
        config = report.get("config", {})
        key = default_key or config.get("pricing_key")
        if key is None:
            raise UsageError("eval report has no pricing_key; pass --pricing-key")
        strategy = "+".join(config.get("strategies", [])) or None
        for case in report["cases"]:
            if case.get("status") != "judged":
                continue
            u = case["usage"]
            usage = Usage(u["input_tokens"], u["output_tokens"], UsageSource(u.get("source", "Estimated")))
            records.append(estimate_cost(usage, key, pricing, strategy=strategy, model=config.get("model")))
        return records
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            usage = rec.get("usage", rec)
            key = rec.get("pricing_key", default_key)
            if key is None:
                raise ValueError("no pricing_key (set one per line or pass --pricing-key)")
            records.append(
                estimate_cost(
                    Usage(int(usage["input_tokens"]), int(usage["output_tokens"]),
                          UsageSource(usage.get("source", "Estimated"))),
                    key,
                    pricing,
                    strategy=rec.get("strategy"),
                    model=rec.get("model"),
                )
            )
        except UnknownPricingKey as exc:
            raise UsageError(f"line {number}: unknown pricing key {exc}") from exc
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise UsageError(f"line {number}: bad usage record: {exc}") from exc
    return records


def cmd_cost_report(args: argparse.Namespace) -> int:
    pricing = PricingTable.load(args.pricing) if args.pricing else PricingTable.default()
    records = _records_from_file(args.input, pricing, args.pricing_key)
    summary = aggregate_cost(records)
    if args.output == "json":
        print(json.dumps(summary.to_dict(), indent=2))
        return EXIT_OK
    print(f"{'strategy':<14}{'model':<24}{'n':>6}{'total_usd':>14}{'mean_usd':>14}")
    for row in summary.to_dict()["groups"]:
        print(f"{str(row['strategy']):<14}{str(row['model']):<24}{row['count']:>6}"
              f"{row['total_usd']:>14}{float(Decimal(row['mean_usd'])):>14.6f}")
    mean = "n/a" if summary.mean is None else f"{float(summary.mean):.6f}"
    print(f"{'all':<38}{summary.count:>6}{format_usd(summary.total):>14}{mean:>14}")
    return EXIT_OK


def _add_common(p: argparse.ArgumentParser, with_strategy: bool = True) -> None:
    p.add_argument("--config", help="JSON config file (default: $REVIEWJUDGE_CONFIG or ./reviewjudge.json)")
    p.add_argument("--model", help="model name: gemini-3, gpt-5.1, mock, or one defined in the config")
    if with_strategy:
        p.add_argument("--strategy", help="direct, few-shot, multi-step, tot, or ensemble")
        p.add_argument("--threshold", type=int, help="lowest score counted as hallucinated (1-4)")
    p.add_argument("--pricing", help="pricing JSON overriding the built-in rates")
    p.add_argument("--pricing-key", help="pricing entry to bill the model under")
    p.add_argument("--fewshot", help="few-shot catalog JSON (five records, levels 0-4)")
    p.add_argument("--mock-script", help="mock provider script (required with --model mock)")
    p.add_argument("--audit-log", help="append request/response transcripts to this JSONL file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reviewjudge", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("judge", help="judge one review comment against a diff")
    p.add_argument("--diff", required=True, help="unified diff file, or - for stdin")
    p.add_argument("--comment", help="comment text")
    p.add_argument("--comment-file", help="file holding the comment text")
    p.add_argument("--output", choices=("json", "text"), default="text")
    _add_common(p)
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("eval", help="evaluate a judge over a JSONL dataset")
    p.add_argument("dataset")
    p.add_argument("--report", help="write the JSON report here")
    p.add_argument("--concurrency", type=int, help="cases judged in parallel")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP gating service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--mode", choices=[m.value for m in GateMode])
    p.add_argument("--concurrency", type=int, help="in-flight provider requests")
    p.add_argument("--decision-log", help="append gate decisions to this JSONL file")
    _add_common(p)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("cost-report", help="summarise token usage cost")
    p.add_argument("input", help="eval report JSON or JSONL usage records")
    p.add_argument("--pricing")
    p.add_argument("--pricing-key")
    p.add_argument("--output", choices=("json", "text"), default="text")
    p.set_defaults(func=cmd_cost_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, MalformedDiff, DatasetError, InvalidThreshold, IncompleteCatalog,
            UnknownPricingKey) as exc:
        print(f"reviewjudge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"reviewjudge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Unjudgeable as exc:
        print(f"reviewjudge: judge output unusable: {exc.reason}", file=sys.stderr)
        return EXIT_PROVIDER
    except ProviderError as exc:
        print(f"reviewjudge: provider failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
