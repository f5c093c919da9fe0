"""Run configuration: one JSON file, every key overridable from the command line."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from .errors import ConfigError


@dataclass
class RunConfig:
    global_seed: int = 0
    precision: int = 3
    model_name: str = "gpt-4o"
    temperature_generate: float = 0.7
    temperature_judge: float = 0.0
    max_in_flight: int = 4
    cache_dir: str = "cache"
    assets_dir: str | None = None
    max_output_tokens: int = 1024
    max_attempts: int = 5
    requests_per_minute: int | None = None
    min_labeled_keypoints: int = 1
    endpoint: str | None = None
    run_log: str = "runs.jsonl"

    def validate(self) -> "RunConfig":
        checks = [
            (isinstance(self.global_seed, int), "global_seed must be an integer"),
            (isinstance(self.precision, int) and 1 <= self.precision <= 10, "precision must be an integer in 1..10"),
            (isinstance(self.model_name, str) and self.model_name, "model_name must be a non-empty string"),
            (0.0 <= self.temperature_generate <= 2.0, "temperature_generate must be in [0, 2]"),
            (0.0 <= self.temperature_judge <= 2.0, "temperature_judge must be in [0, 2]"),
            (isinstance(self.max_in_flight, int) and 1 <= self.max_in_flight <= 256, "max_in_flight must be in 1..256"),
            (isinstance(self.max_output_tokens, int) and self.max_output_tokens >= 1, "max_output_tokens must be >= 1"),
            (isinstance(self.max_attempts, int) and 1 <= self.max_attempts <= 20, "max_attempts must be in 1..20"),
            (self.requests_per_minute is None or self.requests_per_minute >= 1, "requests_per_minute must be >= 1"),
            (isinstance(self.min_labeled_keypoints, int) and 0 <= self.min_labeled_keypoints <= 17,
             "min_labeled_keypoints must be in 0..17"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**data).validate()
    except TypeError as e:
        raise ConfigError(str(e)) from None
