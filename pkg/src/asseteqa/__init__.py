"""Provenance-backed question answering over industrial telemetry episodes."""

from .facts import EpisodeFact, NamedFeature, Provenance
from .kg import KnowledgeGraph, load_bundled_kg, load_kg, validate_kg
from .store import EpisodicStore

__all__ = [
    "EpisodeFact",
    "EpisodicStore",
    "KnowledgeGraph",
    "NamedFeature",
    "Provenance",
    "load_bundled_kg",
    "load_kg",
    "validate_kg",
]
__version__ = "0.1.0"
