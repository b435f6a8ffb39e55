"""Command-line entry point: ``asseteqa <stage> [flags]``.

Every stage reads and writes only the files named by its flags. A JSON
config file (``--config``) can supply any flag, either at top level under
``"common"`` or in a section named after the stage; explicit flags win.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

from .facts import dumps, read_jsonl, write_facts, write_jsonl

logger = logging.getLogger("asseteqa")

STAGE_CODES = {
    "synth": 10,
    "extract": 11,
    "ingest": 12,
    "train": 13,
    "build-qa": 14,
    "prompt": 15,
    "answer": 16,
    "verify": 17,
    "evaluate": 18,
    "report": 19,
}


class StageError(RuntimeError):
    pass


# -- shared helpers -----------------------------------------------------------------


def _kg(path: str | None):
    from .kg import load_bundled_kg, load_kg

    return load_kg(path) if path else load_bundled_kg()


def _model(path: str | None):
    from .risk import RiskModel

    return RiskModel.load(path) if path else None


def _out(path: str) -> str:
    """Create the parent directory of an output file and return the path unchanged."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return path


def _store(path: str, must_exist: bool = True):
    from .store import EpisodicStore

    if must_exist and not Path(path).exists():
        raise StageError(f"{path}: store not found")
    return EpisodicStore(path)


def _corpus(path: str):
    from .qa import read_corpus

    return read_corpus(path)


def _backend(args: argparse.Namespace, corpus):
    from .answerer import FaultBackend, FaultSpec, OracleBackend, RemoteBackend

    if args.backend == "oracle":
        return OracleBackend(corpus, seed=args.seed)
    if args.backend == "fault":
        if not args.corruption:
            raise StageError("--corruption is required with --backend fault")
        return FaultBackend(OracleBackend(corpus, seed=args.seed), FaultSpec(args.corruption, args.rate, args.seed))
    return RemoteBackend.from_env(url=args.url, timeout=args.timeout, retries=args.retries, max_in_flight=args.max_in_flight)


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    from .answerer import CORRUPTIONS

    p.add_argument("--backend", choices=("oracle", "fault", "remote"), default="oracle")
    p.add_argument("--corruption", choices=CORRUPTIONS)
    p.add_argument("--rate", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--url", help="remote endpoint (default: $ANSWERER_URL)")
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--retries", type=int, default=2)
    p.add_argument("--max-in-flight", type=int, default=4)


# -- stages ---------------------------------------------------------------------------


def cmd_synth(args: argparse.Namespace) -> int:
    from .synth import SyntheticSpec, write_synthetic

    spec = SyntheticSpec(n_machines=args.machines, hours=args.hours, seed=args.seed)
    paths = write_synthetic(args.out, spec)
    for key, path in paths.items():
        print(f"{key}: {path}")
    return 0


def cmd_extract(args: argparse.Namespace) -> int:
    from .extractor import ExtractorConfig, extract_facts, load_tables

    cfg = ExtractorConfig(
        window_hours=args.window_hours,
        horizon_hours=args.horizon_hours,
        max_healthy_per_machine=args.max_healthy_per_machine,
        dataset=args.dataset,
    )
    tables = load_tables(args.telemetry, args.failures, args.errors, args.maint, args.machines)
    kg = None if args.no_kg else _kg(args.kg)
    facts = extract_facts(tables, cfg, kg)
    n = write_facts(facts, _out(args.out))
    print(f"Wrote {n} facts ({sum(f.is_failure for f in facts)} failure windows) to {args.out}")
    return 0


def cmd_ingest(args: argparse.Namespace) -> int:
    with _store(_out(args.db), must_exist=False) as store:
        n = store.ingest_jsonl(args.facts, overwrite=not args.no_overwrite)
        print(f"Ingested {n}")
        if store.last_skipped:
            print(f"Skipped {len(store.last_skipped)} malformed line(s): {[ln for ln, _ in store.last_skipped]}")
        print(f"Assets: {store.list_assets()}")
        if args.export_csv:
            store.export_features_csv(_out(args.export_csv))
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    from .risk import TrainConfig, train

    cfg = TrainConfig(l2_strength=args.l2, max_iters=args.max_iters, tolerance=args.tol)
    if args.csv:
        model = train(args.csv, cfg)
    else:
        with _store(args.db) as store:
            model = train(list(store.iter_facts()), cfg)
    model.save(_out(args.out))
    meta = model.training_meta
    print(
        f"Trained on {meta['n_examples']} examples, classes {model.class_names}: "
        f"loss {meta['final_loss']:.6g}, accuracy {meta['train_accuracy']:.4f}, {meta['iterations']} iterations"
    )
    return 0


def cmd_build_qa(args: argparse.Namespace) -> int:
    from .qa import TASK_TYPES, ActionPolicy, build_corpus, write_corpus

    tasks = TASK_TYPES if args.tasks == "all" else [t.strip() for t in args.tasks.split(",") if t.strip()]
    with _store(args.db) as store:
        corpus, report = build_corpus(store, _kg(args.kg), _model(args.model), tasks, ActionPolicy(args.risk_threshold))
    write_corpus(corpus, _out(args.out))
    if args.report:
        Path(_out(args.report)).write_text(dumps(report.to_dict()) + "\n", encoding="utf-8")
    print(f"Wrote {len(corpus)} QA instances to {args.out}: {report.counts}")
    return 0


def _prompt_options(args: argparse.Namespace):
    from .prompts import PromptOptions

    if getattr(args, "preset", None):
        from .harness import get_preset

        return get_preset(args.preset).prompt_options
    return PromptOptions(include_kg=not args.no_kg, include_episodic=not args.no_episodic, include_simulator=not args.no_simulator)


def cmd_prompt(args: argparse.Namespace) -> int:
    from .prompts import build_prompt

    corpus = {qa.qa_id: qa for qa in _corpus(args.qa)}
    qa = corpus.get(args.qa_id)
    if qa is None:
        raise StageError(f"{args.qa}: no QA instance with qa_id {args.qa_id!r}")
    with _store(args.db) as store:
        fact = store.get_fact(qa.fact_id)
    if fact is None:
        raise StageError(f"{args.db}: fact {qa.fact_id!r} not found")
    prompt = build_prompt(fact, qa, _prompt_options(args), _model(args.model))
    text = prompt.to_json() + "\n" if args.json else prompt.as_text()
    if args.out:
        Path(_out(args.out)).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


def cmd_answer(args: argparse.Namespace) -> int:
    from .prompts import build_prompt

    corpus = _corpus(args.qa)
    backend = _backend(args, corpus)
    opts = _prompt_options(args)
    model = _model(args.model)
    rows = []
    with _store(args.db) as store:
        for qa in sorted(corpus, key=lambda q: q.qa_id):
            fact = store.get_fact(qa.fact_id)
            if fact is None:
                raise StageError(f"{args.db}: fact {qa.fact_id!r} (from {qa.qa_id}) not found")
            prompt = build_prompt(fact, qa, opts, model)
            rows.append({"qa_id": qa.qa_id, "backend": backend.name, "text": backend.answer(prompt)})
    write_jsonl(rows, _out(args.out))
    print(f"Wrote {len(rows)} answers to {args.out}")
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    from collections import Counter

    from .answerer import parse_answer
    from .verifier import GatePolicy, IncidentLog, gate, verify

    corpus = {qa.qa_id: qa for qa in _corpus(args.qa)}
    kg = _kg(args.kg)
    log = IncidentLog(_out(args.incidents)) if args.incidents else None
    policy = GatePolicy(args.min_confidence)
    rows, outcomes = [], Counter()
    with _store(args.db) as store:
        for i, ans in enumerate(read_jsonl(args.answers), start=1):
            qa = corpus.get(ans.get("qa_id"))
            if qa is None:
                raise StageError(f"{args.answers}:{i}: unknown qa_id {ans.get('qa_id')!r}")
            report = verify(parse_answer(ans["text"]), qa, store, kg)
            decision = gate(report, policy, log)
            outcomes[decision.outcome] += 1
            rows.append({**report.to_dict(), "outcome": decision.outcome})
    write_jsonl(rows, _out(args.out))
    n = len(rows)
    struct = sum(r["struct_ok"] for r in rows) / n if n else 0.0
    prov = sum(r["prov_ok"] for r in rows) / n if n else 0.0
    print(f"Verified {n} answers: Struct.OK={struct:.4f} Prov.OK={prov:.4f} outcomes={dict(sorted(outcomes.items()))}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    from .harness import get_preset, run_config, write_records
    from .verifier import GatePolicy, IncidentLog

    corpus = _corpus(args.qa)
    kg = _kg(args.kg)
    model = _model(args.model)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    backend = _backend(args, corpus)
    presets = [p.strip() for p in args.presets.split(",") if p.strip()]
    with _store(args.db) as store:
        for name in presets:
            preset = get_preset(name)
            log = IncidentLog(out / f"incidents_{name}.jsonl")
            agg, records = run_config(corpus, store, backend, preset, kg, model, GatePolicy(args.min_confidence), log, args.max_attempts)
            (out / f"aggregate_{name}.json").write_text(dumps(agg.to_dict()) + "\n", encoding="utf-8")
            write_records(records, out / f"records_{name}.jsonl")
            m = agg.metrics
            print(
                f"{name}: Struct.OK={m['struct_ok']['mean']} Prov.OK={m['prov_ok']['mean']} "
                f"LabelCons={m['label_consistent']['mean']} CFAcc={m['cf_direction_ok']['mean']} FullPass={agg.full_pass}"
            )
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    from .harness import ABLATION_ROWS, BASELINE_ROWS
    from .metrics import MetricRecord, compare_configs
    from .reporting import load_aggregate, plot_reports, render_markdown, write_csv

    src = Path(args.eval_dir)
    found = {p.stem[len("aggregate_"):]: p for p in sorted(src.glob("aggregate_*.json"))}
    if not found:
        raise StageError(f"{src}: no aggregate_*.json files (run evaluate first)")
    order = [n for n in dict.fromkeys(BASELINE_ROWS + ABLATION_ROWS) if n in found]
    order += [n for n in sorted(found) if n not in order]
    reports = [load_aggregate(found[n]) for n in order]

    comparisons = {}
    ref_path = src / "records_full.jsonl"
    if ref_path.exists():
        ref = [MetricRecord.from_dict(r) for r in read_jsonl(ref_path)]
        for name in order:
            path = src / f"records_{name}.jsonl"
            if name != "full" and path.exists():
                comparisons[name] = compare_configs(ref, [MetricRecord.from_dict(r) for r in read_jsonl(path)])

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(reports, out / "report.csv")
    plot_reports(reports, out / "report.png")
    (out / "report.md").write_text(render_markdown(reports, comparisons, "report.png"), encoding="utf-8")
    (out / "significance.json").write_text(dumps(comparisons) + "\n", encoding="utf-8")
    print(f"Wrote report.md, report.csv, report.png and significance.json to {out}")
    return 0


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asseteqa", description="Provenance-backed QA over industrial telemetry.")
    parser.add_argument("--config", help="JSON config file supplying default flag values")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write seeded synthetic PdM-schema CSV tables")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--machines", type=int, default=10)
    p.add_argument("--hours", type=int, default=2880)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", help="extract episode facts to JSONL")
    for flag in ("--telemetry", "--failures", "--errors", "--maint", "--machines", "--out"):
        p.add_argument(flag, required=True)
    p.add_argument("--window-hours", type=float, default=24)
    p.add_argument("--horizon-hours", type=float, default=24)
    p.add_argument("--max-healthy-per-machine", type=int, default=50)
    p.add_argument("--dataset", default="pdm")
    p.add_argument("--kg", help="KG JSONL (default: bundled fixture)")
    p.add_argument("--no-kg", action="store_true", help="skip KG enrichment")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("ingest", help="upsert facts into the episodic store")
    p.add_argument("--db", required=True)
    p.add_argument("--facts", required=True)
    p.add_argument("--no-overwrite", action="store_true")
    p.add_argument("--export-csv")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit the risk model")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--db")
    src.add_argument("--csv", help="feature CSV exported by ingest --export-csv")
    p.add_argument("--out", required=True)
    p.add_argument("--l2", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("build-qa", help="build the gold QA corpus")
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kg")
    p.add_argument("--model")
    p.add_argument("--tasks", default="all", help="comma-separated task types or 'all'")
    p.add_argument("--risk-threshold", type=float, default=0.5)
    p.add_argument("--report", help="write per-task counts and skip reasons as JSON")
    p.set_defaults(func=cmd_build_qa)

    def prompt_flags(q: argparse.ArgumentParser) -> None:
        q.add_argument("--preset", help="take prompt toggles from an evaluation preset")
        q.add_argument("--no-kg", action="store_true")
        q.add_argument("--no-episodic", action="store_true")
        q.add_argument("--no-simulator", action="store_true")
        q.add_argument("--model", help="risk model for top-k feature selection")

    p = sub.add_parser("prompt", help="render one prompt")
    p.add_argument("--db", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--qa-id", required=True)
    p.add_argument("--json", action="store_true", help="emit {qa_id, system, user} JSON")
    p.add_argument("--out")
    prompt_flags(p)
    p.set_defaults(func=cmd_prompt)

    p = sub.add_parser("answer", help="answer every QA prompt with a backend")
    p.add_argument("--db", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out", required=True)
    prompt_flags(p)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_answer)

    p = sub.add_parser("verify", help="verify answers and apply the safety gate")
    p.add_argument("--db", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--answers", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kg")
    p.add_argument("--incidents", help="append-only incident log (JSONL)")
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("evaluate", help="run presets end to end and write metrics")
    p.add_argument("--db", required=True)
    p.add_argument("--qa", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--kg")
    p.add_argument("--model")
    p.add_argument("--presets", default="full")
    p.add_argument("--min-confidence", type=float, default=0.5)
    p.add_argument("--max-attempts", type=int, default=3)
    _add_backend_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render comparison tables and a figure")
    p.add_argument("--eval-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def _config_defaults(path: str, command: str) -> dict[str, Any]:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise StageError(f"{path}: cannot read config: {exc}") from exc
    if not isinstance(cfg, dict):
        raise StageError(f"{path}: config must be a JSON object")
    merged = dict(cfg.get("common", {}))
    merged.update(cfg.get(command, {}))
    return {k.replace("-", "_"): v for k, v in merged.items()}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    # the full parser would reject flags the config is about to supply, so peek with a minimal one
    peek = argparse.ArgumentParser(add_help=False)
    peek.add_argument("--config")
    peek.add_argument("-v", "--verbose", action="store_true")
    pre, rest = peek.parse_known_args(argv)
    command = next((a for a in rest if a in STAGE_CODES), None)
    if pre.config and command:
        try:
            defaults = _config_defaults(pre.config, command)
        except StageError as exc:
            print(f"error[config]: {exc}", file=sys.stderr)
            return 2
        sub = next(a for a in parser._subparsers._group_actions if isinstance(a, argparse._SubParsersAction))
        stage_parser = sub.choices[command]
        known = {a.dest for a in stage_parser._actions}
        stage_parser.set_defaults(**{k: v for k, v in defaults.items() if k in known})
        for action in stage_parser._actions:
            if action.dest in defaults:
                action.required = False
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    func: Callable[[argparse.Namespace], int] = args.func
    try:
        return func(args)
    except Exception as exc:
        code = STAGE_CODES[args.command]
        if args.verbose:
            logger.exception("stage %s failed", args.command)
        print(f"error[{args.command}]: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    raise SystemExit(main())
