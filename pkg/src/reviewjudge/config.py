"""Runtime configuration: built-in defaults < config file < command-line flags."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

from .cost import PricingTable
from .provider import BUILTIN_MODELS, ModelSpec
from .strategies import FewShotCatalog

DEFAULT_CONFIG_PATH = Path("reviewjudge.json")
CONFIG_ENV = "REVIEWJUDGE_CONFIG"

_KEYS = {
    "model",
    "models",
    "strategy",
    "threshold",
    "concurrency",
    "mode",
    "pricing_path",
    "fewshot_path",
    "mock_script",
    "audit_log",
    "max_attempts",
    "pricing_key",
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Settings:
    model: str = "gemini-3"
    strategy: str = "tot"
    threshold: int = 1
    concurrency: int = 4
    mode: str = "block"
    pricing_path: str | None = None
    fewshot_path: str | None = None
    mock_script: str | None = None
    audit_log: str | None = None
    max_attempts: int = 3
    pricing_key: str | None = None
    models: Mapping[str, ModelSpec] = field(default_factory=dict)

    def merge(self, overrides: Mapping[str, Any]) -> "Settings":
        """Apply non-``None`` overrides on top of these settings."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})

    def model_spec(self) -> ModelSpec:
        models = {**BUILTIN_MODELS, **self.models}
        try:
            spec = models[self.model]
        except KeyError:
            raise ConfigError(f"unknown model {self.model!r}; known: {', '.join(sorted(models))}") from None
        if self.pricing_key:
            spec = replace(spec, pricing_key=self.pricing_key)
        return spec

    def pricing(self) -> PricingTable:
        return PricingTable.load(self.pricing_path) if self.pricing_path else PricingTable.default()

    def catalog(self) -> FewShotCatalog | None:
        return FewShotCatalog.load(self.fewshot_path) if self.fewshot_path else None


def load_settings(path: str | Path | None = None) -> Settings:
    """Read the config file given, or ``$REVIEWJUDGE_CONFIG``, or ``./reviewjudge.json`` if present."""
    if path is None:
        env = os.environ.get(CONFIG_ENV)
        path = Path(env) if env else DEFAULT_CONFIG_PATH
        if not path.exists():
            return Settings()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(data) - _KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    models = {}
    for name, m in (data.pop("models", None) or {}).items():
        try:
            models[name] = ModelSpec(m["provider_id"], m["model_name"], int(m["context_window"]), m["pricing_key"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad model entry {name!r}: {exc}") from exc
    return Settings(models=models).merge(data)
