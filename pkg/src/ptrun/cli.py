"""Command-line interface: run, replay, bench, verify-trace.

Exit codes: 0 success / full match, 2 usage or divergence, 3 run_invalid,
4 budget_exceeded. Provider credentials are read from the environment
variable named in the provider config (default PTRUN_API_KEY) and never
appear in traces or results.
"""

from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from .bench import (EmptySuiteError, format_table, load_scriptbook, load_suite,
                    results_document, run_bench, scripted_model_factory, write_results)
from .core import Metadata, Task
from .pipeline import ReplayReport, RunConfig, ToolEnvironment, replay_trace, run_ptr
from .semantic import HttpProviderModel, ScriptedModel

EXIT_OK = 0
EXIT_DIVERGENCE = 2
EXIT_RUN_INVALID = 3
EXIT_BUDGET = 4

_OUTCOME_EXIT = {"ok": EXIT_OK, "run_invalid": EXIT_RUN_INVALID, "budget_exceeded": EXIT_BUDGET}


def bundled_data(name: str) -> Path:
    return Path(str(resources.files("ptrun").joinpath("data", name)))


def _load_json(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _load_config(path: str) -> tuple[RunConfig, dict]:
    raw = _load_json(path)
    return RunConfig.from_dict(raw), raw.get("providers", {})


def _build_model(spec: str, cfg: RunConfig, providers: dict, role_script_ok: bool = True):
    kind, _, detail = spec.partition(":")
    if kind == "scripted" and detail:
        entries = _load_json(detail)
        return ScriptedModel(entries, price=cfg.price_for("scripted"))
    if kind == "provider" and detail:
        provider = providers.get(detail)
        if provider is None:
            raise SystemExit(f"config has no provider entry named {detail!r}")
        return HttpProviderModel(
            endpoint=provider["endpoint"],
            model=provider["model"],
            price=cfg.price_for(provider["model"]),
            api_key_env=provider.get("api_key_env", "PTRUN_API_KEY"),
        )
    raise SystemExit(f"--model must be scripted:<script-file> or provider:<id>, got {spec!r}")


def _environment(kb_path: str | None, fault_scripts_path: str | None) -> ToolEnvironment:
    kb = kb_path or bundled_data("kb.json")
    faults = _load_json(fault_scripts_path) if fault_scripts_path else None
    return ToolEnvironment.from_kb_path(kb, faults)


def cmd_run(args) -> int:
    cfg, providers = _load_config(args.config)
    task = Task.from_dict(_load_json(args.task_file))
    metadata = Metadata.from_dict(_load_json(args.metadata))
    model = _build_model(args.model, cfg, providers)
    environment = _environment(args.kb, args.fault_scripts)
    report = run_ptr(task, metadata, cfg, model, environment, trace_path=args.trace_out)
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return _OUTCOME_EXIT[report.outcome]


def _print_replay(report: ReplayReport) -> int:
    print(json.dumps(report.to_dict(), sort_keys=True, indent=2))
    return EXIT_OK if report.matched else EXIT_DIVERGENCE


def cmd_replay(args) -> int:
    return _print_replay(replay_trace(args.trace))


def cmd_verify_trace(args) -> int:
    report = replay_trace(args.trace)
    if report.matched:
        print(f"trace verified: {report.sections_checked} sections match")
        return EXIT_OK
    divergence = report.divergence or {}
    print(f"trace diverged at {divergence.get('section')} (index {divergence.get('index')})")
    return EXIT_DIVERGENCE


def cmd_bench(args) -> int:
    cfg, providers = _load_config(args.config)
    try:
        suite = load_suite(args.suite)
    except EmptySuiteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    kind, _, detail = args.model.partition(":")
    scripted = kind == "scripted"
    if scripted:
        factory = scripted_model_factory(load_scriptbook(detail))
    else:
        def factory(framework: str, item_id: str):
            return _build_model(args.model, cfg, providers)
    environment = _environment(args.kb, None)
    ptr_result, react_result, comparison = run_bench(suite, cfg, factory, environment,
                                                     scripted=scripted)
    document = results_document(suite, cfg, ptr_result, react_result, comparison)
    if args.out:
        write_results(document, args.out)
    print(format_table(document))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ptrun",
        description="Bounded profile-then-reason runtime for tool-augmented agents",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one task through the bounded pipeline")
    run_p.add_argument("--task-file", required=True, help="task JSON (objective/data_ref/context)")
    run_p.add_argument("--metadata", required=True, help="metadata JSON (schema/tools/constraints)")
    run_p.add_argument("--config", required=True, help="run configuration JSON")
    run_p.add_argument("--model", required=True, help="scripted:<script-file> or provider:<id>")
    run_p.add_argument("--trace-out", required=True, help="JSONL trace output path")
    run_p.add_argument("--kb", help="knowledge-base JSON (default: bundled corpus)")
    run_p.add_argument("--fault-scripts", help="per-tool fault script JSON (testing)")
    run_p.set_defaults(func=cmd_run)

    replay_p = sub.add_parser("replay", help="recompute a trace's deterministic stages")
    replay_p.add_argument("--trace", required=True)
    replay_p.set_defaults(func=cmd_replay)

    verify_p = sub.add_parser("verify-trace", help="exit nonzero when a trace diverges on replay")
    verify_p.add_argument("--trace", required=True)
    verify_p.set_defaults(func=cmd_verify_trace)

    bench_p = sub.add_parser("bench", help="evaluate both frameworks over a suite")
    bench_p.add_argument("--suite", required=True, help="benchmark suite JSON")
    bench_p.add_argument("--config", required=True, help="run configuration JSON")
    bench_p.add_argument("--model", required=True,
                         help="scripted:<scriptbook-file> or provider:<id>")
    bench_p.add_argument("--out", help="results JSON output path")
    bench_p.add_argument("--kb", help="knowledge-base JSON (default: bundled corpus)")
    bench_p.set_defaults(func=cmd_bench)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
