from __future__ import annotations

import json
import subprocess
import sys

import pytest

from asseteqa.cli import STAGE_CODES
from asseteqa.facts import read_jsonl
from asseteqa.qa import read_corpus

from pipeline import run_cli, run_pipeline


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("cli"), presets="full,no_kg,llm_only")


def test_pipeline_artifacts(work):
    for name in ("facts.jsonl", "store.db", "features.csv", "model.json", "qa.jsonl", "qa_report.json"):
        assert (work / name).stat().st_size > 0
    for name in ("report.md", "report.csv", "report.png", "significance.json"):
        assert (work / "report" / name).stat().st_size > 0
    sig = json.loads((work / "report" / "significance.json").read_text())
    assert set(sig) == {"no_kg", "llm_only"}
    agg = json.loads((work / "eval" / "aggregate_full.json").read_text())
    assert agg["full_pass"] == 1.0
    md = (work / "report" / "report.md").read_text()
    assert md.index("| llm_only |") < md.index("| full |") < md.index("| no_kg |")


def test_prompt_stage(work, capsys):
    qa = read_corpus(work / "qa.jsonl")[0]
    assert run_cli("prompt", "--db", work / "store.db", "--qa", work / "qa.jsonl", "--qa-id", qa.qa_id) == 0
    out = capsys.readouterr().out
    assert out.startswith("=== SYSTEM ===") and f"fact_id: {qa.fact_id}" in out
    assert run_cli("prompt", "--db", work / "store.db", "--qa", work / "qa.jsonl", "--qa-id", qa.qa_id, "--json", "--preset", "no_episodic") == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["qa_id"] == qa.qa_id and qa.fact_id not in payload["user"]


def test_answer_and_verify_stages(work, tmp_path, capsys):
    answers, verified, inc = tmp_path / "a.jsonl", tmp_path / "v.jsonl", tmp_path / "inc.jsonl"
    common = ("--db", work / "store.db", "--qa", work / "qa.jsonl")
    assert run_cli("answer", *common, "--out", answers, "--backend", "fault", "--corruption", "wrong_row", "--rate", "0.5") == 0
    assert run_cli("verify", *common, "--answers", answers, "--out", verified, "--incidents", inc) == 0
    rows = list(read_jsonl(verified))
    assert len(rows) == len(read_corpus(work / "qa.jsonl"))
    bad = sum(not r["prov_ok"] for r in rows)
    assert 0 < bad < len(rows)
    assert len(inc.read_text().splitlines()) == sum(r["outcome"] != "admit" for r in rows)
    assert "Prov.OK=" in capsys.readouterr().out


def test_missing_store_exit_code(tmp_path, capsys):
    code = run_cli("train", "--db", tmp_path / "nope.db", "--out", tmp_path / "m.json")
    assert code == STAGE_CODES["train"]
    assert capsys.readouterr().err.startswith("error[train]: ")


def test_bad_input_file_exit_code(tmp_path, capsys):
    code = run_cli(
        "extract", "--telemetry", tmp_path / "t.csv", "--failures", tmp_path / "f.csv", "--errors", tmp_path / "e.csv",
        "--maint", tmp_path / "m.csv", "--machines", tmp_path / "x.csv", "--out", tmp_path / "facts.jsonl",
    )
    assert code == STAGE_CODES["extract"]
    assert "error[extract]:" in capsys.readouterr().err
    assert not (tmp_path / "facts.jsonl").exists()


def test_fault_requires_corruption(work, tmp_path, capsys):
    code = run_cli("answer", "--db", work / "store.db", "--qa", work / "qa.jsonl", "--out", tmp_path / "a.jsonl", "--backend", "fault")
    assert code == STAGE_CODES["answer"]
    assert "--corruption is required" in capsys.readouterr().err


def test_unknown_preset(work, tmp_path, capsys):
    code = run_cli("evaluate", "--db", work / "store.db", "--qa", work / "qa.jsonl", "--out-dir", tmp_path, "--presets", "turbo")
    assert code == STAGE_CODES["evaluate"] and "unknown preset" in capsys.readouterr().err


def test_report_without_eval(tmp_path, capsys):
    assert run_cli("report", "--eval-dir", tmp_path, "--out-dir", tmp_path / "r") == STAGE_CODES["report"]
    assert "run evaluate first" in capsys.readouterr().err


def test_config_file_supplies_flags(work, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"common": {"db": str(work / "store.db")}, "build-qa": {"out": str(tmp_path / "qa.jsonl"), "tasks": "temporal_count"}}))
    assert run_cli("--config", cfg, "build-qa") == 0
    corpus = read_corpus(tmp_path / "qa.jsonl")
    assert corpus and {q.task_type for q in corpus} == {"temporal_count"}
    # an explicit flag beats the config value
    assert run_cli("--config", cfg, "build-qa", "--tasks", "descriptive") == 0
    assert {q.task_type for q in read_corpus(tmp_path / "qa.jsonl")} == {"descriptive"}


def test_bad_config(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    assert run_cli("--config", cfg, "synth", "--out", tmp_path) == 2
    assert capsys.readouterr().err.startswith("error[config]:")


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "asseteqa", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0 and "build-qa" in proc.stdout


def test_outputs_create_parent_dirs(tmp_path):
    from conftest import PDM_MINI

    out = tmp_path / "new" / "deeper" / "facts.jsonl"
    code = run_cli(
        "extract", "--telemetry", PDM_MINI / "PdM_telemetry.csv", "--failures", PDM_MINI / "PdM_failures.csv",
        "--errors", PDM_MINI / "PdM_errors.csv", "--maint", PDM_MINI / "PdM_maint.csv",
        "--machines", PDM_MINI / "PdM_machines.csv", "--out", out,
    )
    assert code == 0 and out.exists()
    assert run_cli("ingest", "--db", tmp_path / "db" / "s.db", "--facts", out) == 0
