"""Pipeline configuration with documented precedence:

    CLI flags  >  VIDINSTRUCT_* environment variables  >  JSON config file
    >  built-in defaults.

Defaults carry the published operating points: confidence thresholds 0.7,
learning rate 2e-5, batch size 32, 3 epochs, and the ViT-L/14 geometry
(patch 14, side 224 -> 256 tokens, embed dim 1024, decoder dim 4096).
"""

import json
import os
from dataclasses import dataclass, fields

from .errors import ConfigError

ENV_PREFIX = "VIDINSTRUCT_"


@dataclass
class PipelineConfig:
    encoder_url: str = ""
    captioner_url: str = ""
    dense_captioner_url: str = ""
    tagger_url: str = ""
    llm_url: str = ""
    judge_url: str = ""
    api_key: str = ""
    caption_min: float = 0.7
    region_min: float = 0.7
    tag_min: float = 0.7
    keyframe_k: int = 8
    frames_t: int = 100
    tokens_n: int = 256
    embed_dim: int = 1024
    output_dim: int = 4096
    patch_size: int = 14
    input_side: int = 224
    learning_rate: float = 2e-5
    batch_size: int = 32
    epochs: int = 3
    seed: int = 0
    max_attempts: int = 5
    backoff_base: float = 0.25
    decoder_template: str = ""

    def __post_init__(self):
        for name in ("caption_min", "region_min", "tag_min"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name}={value} outside [0, 1]")
        for name in ("keyframe_k", "frames_t", "tokens_n", "embed_dim",
                     "output_dim", "batch_size", "max_attempts"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def _coerce(name: str, value, target_type):
    try:
        if target_type is bool:
            return str(value).lower() in ("1", "true", "yes", "on")
        return target_type(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc


def load_config(cli_overrides=None, config_file=None, env=None) -> PipelineConfig:
    """Resolve one PipelineConfig from all four sources."""
    env = os.environ if env is None else env
    values = {}

    if config_file:
        try:
            file_values = json.loads(open(config_file).read())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_file}") from None
        except ValueError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from None
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
        values.update(file_values)

    field_types = {f.name: f.type for f in fields(PipelineConfig)}
    for name in field_types:
        env_name = ENV_PREFIX + name.upper()
        if env_name in env:
            values[name] = env[env_name]

    for name, value in (cli_overrides or {}).items():
        if value is not None:
            values[name] = value

    unknown = set(values) - set(field_types)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")

    defaults = PipelineConfig()
    coerced = {}
    for name, value in values.items():
        coerced[name] = _coerce(name, value, type(getattr(defaults, name)))
    return PipelineConfig(**coerced)
