"""JSON configuration: schema validation, defaults, and typed access."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Dict, Optional, Union

import jsonschema

from coips.errors import ConfigError
from coips.qa import QATrainConfig
from coips.segmenter import SegTrainConfig
from coips.synthgen import SynthSpec


def schema() -> dict:
    return json.loads(resources.files("coips").joinpath("config_schema.json").read_text(encoding="utf-8"))


@dataclass(frozen=True)
class PipelineConfig:
    input_dir: Optional[str] = None
    manifest: Optional[str] = None
    field_mm: float = 3.0
    classifier: Optional[str] = None
    segmenter: Optional[str] = None
    output_dir: str = "out"
    parallelism: int = 1
    seed: int = 42
    synth: Dict[str, Any] = field(default_factory=dict)
    train_qa: Dict[str, Any] = field(default_factory=dict)
    train_seg: Dict[str, Any] = field(default_factory=dict)
    base_dir: str = "."  # directory relative paths are resolved against; not serialised

    def path(self, value: Optional[str]) -> Optional[Path]:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # section seeds default to the top-level seed
    def synth_spec(self) -> SynthSpec:
        return SynthSpec.from_dict({"seed": self.seed, **self.synth})

    def qa_config(self) -> QATrainConfig:
        return QATrainConfig.from_dict({"seed": self.seed, **self.train_qa})

    def seg_config(self) -> SegTrainConfig:
        return SegTrainConfig.from_dict({"seed": self.seed, **self.train_seg})

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Override every seed, including ones set inside sections."""
        def strip(section: dict) -> dict:
            return {k: v for k, v in section.items() if k != "seed"}

        return replace(self, seed=seed, synth=strip(self.synth), train_qa=strip(self.train_qa),
                       train_seg=strip(self.train_seg))

    def to_dict(self) -> dict:
        return {
            "input_dir": self.input_dir,
            "manifest": self.manifest,
            "field_mm": self.field_mm,
            "classifier": self.classifier,
            "segmenter": self.segmenter,
            "output_dir": self.output_dir,
            "parallelism": self.parallelism,
            "seed": self.seed,
            "synth": self.synth,
            "train_qa": self.train_qa,
            "train_seg": self.train_seg,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _line_of(text: str, key: str) -> Optional[int]:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def parse_config(text: str, base_dir: Union[str, Path] = ".", source: str = "<config>") -> PipelineConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        path = [str(p) for p in err.absolute_path]
        key = path[-1] if path else None
        if err.validator == "additionalProperties":
            m = re.search(r"'([^']+)' was unexpected", err.message)
            key = m.group(1) if m else key
            path = path + ([key] if key else [])
        line = _line_of(text, key) if key and not key.isdigit() else None
        where = f"{source}:{line}" if line else source
        raise ConfigError(f"{where}: key '{'.'.join(path) or '<root>'}': {err.message}")
    cfg = PipelineConfig(**data, base_dir=str(base_dir))
    # surface section errors (bad ranges etc.) at load time
    try:
        cfg.synth_spec()
        cfg.qa_config().network_spec()
        cfg.seg_config()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def load_config(path: Union[str, Path]) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text, path.parent, str(path))


def require_file(cfg: PipelineConfig, key: str) -> Path:
    """Resolve a path-valued key and check that it exists."""
    value = getattr(cfg, key)
    if value is None:
        raise ConfigError(f"config key '{key}' is required for this command")
    p = cfg.path(value)
    if not p.exists():
        raise ConfigError(f"config key '{key}': {p} does not exist")
    return p
