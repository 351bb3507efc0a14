"""Command-line front end.

Subcommands:
  run               drive a campaign from a config file
  verify            re-train gallery candidates at the verification stage
  export-tree       lineage forest as dot or json
  report            scaling | components | provenance analytics
  ingest-cognition  load cognition documents from a directory
  selftest          hermetic end-to-end loop with mock provider + simulator
  exec-one          run one candidate source file under the harness
  validate-metrics  check a metrics.json against the wire contract

All results are printed as JSON on stdout; diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import tempfile
from pathlib import Path

from .config import CampaignConfig
from .contract import validate_metrics_payload
from .errors import EngineError
from .harness import EXEC_OK, EngineerHarness
from .orchestrator import Campaign
from .reporting import classify_motivations, export_tree, report_scaling

logger = logging.getLogger(__name__)


def _load_config(path: str) -> CampaignConfig:
    return CampaignConfig.from_file(path)


def _emit(payload) -> None:
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def _campaign(args) -> Campaign:
    config = _load_config(args.config)
    return Campaign(config)


def _store_records(args):
    config = _load_config(args.config)
    gateway = config.build_gateway()
    store = config.build_store(gateway)
    return config, gateway, store.iter_records()


def cmd_run(args) -> int:
    campaign = _campaign(args)
    summary = campaign.run()
    _emit(summary.to_dict())
    return 0


def cmd_verify(args) -> int:
    campaign = _campaign(args)
    if len(campaign.store) == 0:
        raise EngineError("store is empty; run a campaign before verifying")
    result = campaign.run_verification()
    _emit(result)
    return 0


def cmd_export_tree(args) -> int:
    _, _, records = _store_records(args)
    if not records:
        raise EngineError("store is empty; nothing to export")
    rendered = export_tree(records, args.format)
    if args.output:
        Path(args.output).write_text(rendered, encoding="utf-8")
        _emit({"written": args.output, "format": args.format, "nodes": len(records)})
    else:
        sys.stdout.write(rendered)
    return 0


def cmd_report(args) -> int:
    config, gateway, records = _store_records(args)
    if args.kind == "scaling":
        _emit(report_scaling(records))
        return 0
    result = classify_motivations(
        records,
        gateway,
        prompts_dir=Path(config.prompts_dir) if config.prompts_dir else None,
    )
    if args.kind == "components":
        _emit({"component_histogram": result["component_histogram"]})
    else:
        _emit({"provenance": result["provenance"]})
    return 0


def cmd_ingest_cognition(args) -> int:
    campaign = _campaign(args)
    report = campaign.cognition_base.ingest_dir(args.directory)
    _emit(report)
    return 0 if not report["errors"] else 1


def cmd_selftest(args) -> int:
    checks: dict[str, bool] = {}

    def hermetic(root: Path, tag: str) -> tuple[bytes, dict]:
        config = CampaignConfig(
            campaign_seed=args.seed,
            workers=2,
            plan_stride=4,
            max_cycles=12,
            store_dir=str(root / tag / "store"),
            workspace_root=str(root / tag / "ws"),
        )
        campaign = Campaign(config)
        summary = campaign.run()
        return campaign.store.dump_bytes(), summary.to_dict()

    with tempfile.TemporaryDirectory(prefix="archevolve-selftest-") as scratch:
        root = Path(scratch)
        first_bytes, first = hermetic(root, "first")
        second_bytes, _ = hermetic(root, "second")
        checks["ran_12_cycles"] = first["cycles"] == 12
        checks["conservation"] = (
            sum(first["status_counts"].values()) == first["cycles"]
        )
        checks["some_accepted"] = first["status_counts"].get("accepted", 0) > 0
        checks["deterministic_replay"] = first_bytes == second_bytes
        checks["cost_ledger_populated"] = bool(first["cost"])
    passed = all(checks.values())
    _emit({"passed": passed, "checks": checks})
    return 0 if passed else 1


def cmd_exec_one(args) -> int:
    config = _load_config(args.config) if args.config else CampaignConfig(max_cycles=1)
    gateway = config.build_gateway()
    executor = config.build_executor()
    harness = EngineerHarness(
        executor,
        gateway,
        prompts_dir=Path(config.prompts_dir) if config.prompts_dir else None,
    )
    code = Path(args.code).read_text(encoding="utf-8")
    baseline_name, baseline = config.primary_baseline_pair()
    stage = config.stage_config(args.stage)
    outcome = harness.execute_with_revision(
        code,
        stage,
        Path(args.workspace),
        baseline=baseline,
        baseline_name=baseline_name,
        median_wall=args.median_wall,
        seed=args.seed,
    )
    report = outcome.report
    _emit(
        {
            "status": report.status,
            "wall_seconds": report.wall_seconds,
            "revisions": len(outcome.revisions),
            "metrics": report.metrics.to_dict() if report.metrics else None,
            "error_log_tail": report.error_log[-2000:] if report.error_log else "",
        }
    )
    return 0 if report.status == EXEC_OK else 1


def cmd_validate_metrics(args) -> int:
    try:
        payload = json.loads(Path(args.file).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        _emit({"valid": False, "violations": [f"unreadable metrics file: {exc}"]})
        return 1
    violations = validate_metrics_payload(payload)
    _emit({"valid": not violations, "violations": violations})
    return 0 if not violations else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="archevolve",
        description="Closed-loop evolutionary discovery engine for token-mixer architectures.",
    )
    parser.add_argument(
        "--verbose", action="store_true", help="log deeper diagnostics to stderr"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="drive a campaign from a config file")
    run.add_argument("--config", required=True, help="campaign config JSON")
    run.set_defaults(func=cmd_run)

    verify = sub.add_parser("verify", help="promote gallery candidates and re-train them")
    verify.add_argument("--config", required=True)
    verify.set_defaults(func=cmd_verify)

    tree = sub.add_parser("export-tree", help="write the lineage forest")
    tree.add_argument("--config", required=True)
    tree.add_argument("--format", required=True, choices=("dot", "json"))
    tree.add_argument("--output", help="write here instead of stdout")
    tree.set_defaults(func=cmd_export_tree)

    report = sub.add_parser("report", help="campaign analytics")
    report.add_argument("kind", choices=("scaling", "components", "provenance"))
    report.add_argument("--config", required=True)
    report.set_defaults(func=cmd_report)

    ingest = sub.add_parser(
        "ingest-cognition", help="load cognition documents from a directory"
    )
    ingest.add_argument("directory")
    ingest.add_argument("--config", required=True)
    ingest.set_defaults(func=cmd_ingest_cognition)

    selftest = sub.add_parser("selftest", help="hermetic end-to-end loop check")
    selftest.add_argument("--seed", type=int, default=0)
    selftest.set_defaults(func=cmd_selftest)

    exec_one = sub.add_parser(
        "exec-one", help="run one candidate source file under the harness"
    )
    exec_one.add_argument("--code", required=True, help="candidate source file")
    exec_one.add_argument("--workspace", required=True, help="fresh workspace directory")
    exec_one.add_argument("--config", help="campaign config JSON (defaults to mock/simulated)")
    exec_one.add_argument("--stage", default="exploration", choices=("exploration", "verification"))
    exec_one.add_argument("--seed", type=int, default=0)
    exec_one.add_argument(
        "--median-wall",
        type=float,
        default=None,
        help="trailing median wall seconds used for the kill threshold",
    )
    exec_one.set_defaults(func=cmd_exec_one)

    validate = sub.add_parser(
        "validate-metrics", help="check a metrics.json against the wire contract"
    )
    validate.add_argument("file")
    validate.set_defaults(func=cmd_validate_metrics)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except EngineError as exc:
        logger.error("%s", exc)
        _emit({"error": str(exc)})
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
