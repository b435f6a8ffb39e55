from __future__ import annotations

from pathlib import Path

import pytest

from asseteqa.extractor import ExtractorConfig, extract_facts, load_tables
from asseteqa.kg import load_bundled_kg
from asseteqa.qa import build_corpus
from asseteqa.risk import train
from asseteqa.synth import generate

FIXTURES = Path(__file__).parent / "fixtures"
PDM_MINI = FIXTURES / "pdm_mini"
TABLE_KEYS = ("telemetry", "failures", "errors", "maint", "machines")


def table_paths(directory: Path) -> dict[str, Path]:
    return {k: directory / f"PdM_{k}.csv" for k in TABLE_KEYS}


def load_dir(directory: Path):
    p = table_paths(directory)
    return load_tables(*(p[k] for k in TABLE_KEYS))


@pytest.fixture(autouse=True)
def _pinned_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "1700000000")


@pytest.fixture(scope="session")
def kg():
    return load_bundled_kg()


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory) -> Path:
    d = tmp_path_factory.mktemp("synth")
    generate().write(d)
    return d


@pytest.fixture(scope="session")
def synth_tables(synth_dir):
    return load_dir(synth_dir)


@pytest.fixture(scope="session")
def synth_facts(synth_tables, kg):
    return extract_facts(synth_tables, ExtractorConfig(), kg)


@pytest.fixture(scope="session")
def synth_model(synth_facts):
    return train(synth_facts)


@pytest.fixture(scope="session")
def synth_corpus(synth_facts, kg, synth_model):
    corpus, _ = build_corpus(synth_facts, kg, synth_model)
    return corpus


@pytest.fixture(scope="session")
def fact_index(synth_facts):
    return {f.fact_id: f for f in synth_facts}


@pytest.fixture(scope="session")
def mini_tables():
    return load_dir(PDM_MINI)


@pytest.fixture(scope="session")
def mini_facts(mini_tables, kg):
    return extract_facts(mini_tables, ExtractorConfig(), kg)
