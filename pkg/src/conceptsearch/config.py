"""Provider selection from a config file and environment overrides.

Precedence: explicit arguments, then environment variables, then the config
file, then defaults.  The config file is TOML::

    [provider]
    name = "test"        # or "remote"
    dimension = 64
    seed = 0
    endpoint = "http://localhost:8600"   # remote only

Environment overrides: ``CONCEPTSEARCH_CONFIG`` (file path),
``CONCEPTSEARCH_PROVIDER``, ``CONCEPTSEARCH_DIMENSION``,
``CONCEPTSEARCH_SEED``, ``CONCEPTSEARCH_ENDPOINT``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from conceptsearch.embedding import (
    DEFAULT_DIMENSION,
    EmbedProvider,
    RemoteEmbedProvider,
    TestEmbedProvider,
)


@dataclass
class ProviderSettings:
    name: str = "test"
    dimension: int = DEFAULT_DIMENSION
    seed: int = 0
    endpoint: str = "http://localhost:8600"


def load_settings(config_path: str | Path | None = None) -> ProviderSettings:
    settings = ProviderSettings()
    path = config_path or os.environ.get("CONCEPTSEARCH_CONFIG")
    if path and Path(path).exists():
        data = tomllib.loads(Path(path).read_text(encoding="utf-8"))
        section = data.get("provider", {})
        settings.name = section.get("name", settings.name)
        settings.dimension = int(section.get("dimension", settings.dimension))
        settings.seed = int(section.get("seed", settings.seed))
        settings.endpoint = section.get("endpoint", settings.endpoint)
    if "CONCEPTSEARCH_PROVIDER" in os.environ:
        settings.name = os.environ["CONCEPTSEARCH_PROVIDER"]
    if "CONCEPTSEARCH_DIMENSION" in os.environ:
        settings.dimension = int(os.environ["CONCEPTSEARCH_DIMENSION"])
    if "CONCEPTSEARCH_SEED" in os.environ:
        settings.seed = int(os.environ["CONCEPTSEARCH_SEED"])
    if "CONCEPTSEARCH_ENDPOINT" in os.environ:
        settings.endpoint = os.environ["CONCEPTSEARCH_ENDPOINT"]
    return settings


def build_provider(settings: ProviderSettings) -> EmbedProvider:
    if settings.name == "test":
        return TestEmbedProvider(dimension=settings.dimension, seed=settings.seed)
    if settings.name == "remote":
        return RemoteEmbedProvider(settings.endpoint)
    raise ValueError(f"unknown provider {settings.name!r} (expected test or remote)")
