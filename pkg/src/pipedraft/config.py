"""Experiment configuration files (TOML) with a strict, versioned schema.

Example::

    schema_version = 1
    seed = 42
    max_tokens = 512
    modes = ["autoregressive", "speculative_sync", "pipespec_async"]

    [[stages]]            # stage 0: the fastest drafter
    latency = 1.0

    [[stages]]            # final verifier
    latency = 10.0
    acceptance = 0.8      # agreement with the previous stage
    window = "unbounded"  # or an integer verify-batch cap
    lookahead = 0

    [mode_overrides.speculative_sync]
    lookahead = 8

    [sweep]
    axis = "lookahead"
    values = [1, 4, 8, 16]

Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .core import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_VOCAB_SIZE,
    MASK64,
    ConfigError,
    Mode,
    PipelineConfig,
    StageSpec,
)
from .models import TokenModel, build_oracle_chain, load_trace, trace_models

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCHEMA_VERSION = 1
SWEEP_AXES = ("lookahead", "alpha", "gamma", "depth")

Window = Union[Annotated[int, Field(ge=0)], Literal["unbounded"]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class StageEntry(_Strict):
    latency: Annotated[float, Field(gt=0)]
    acceptance: Annotated[float, Field(ge=0, le=1)] = 1.0
    window: Window = "unbounded"
    lookahead: Annotated[int, Field(ge=0)] = 0
    power: Annotated[float, Field(ge=0)] = 1.0


class ModeOverride(_Strict):
    """Applied to every verifying stage when running the given mode."""

    lookahead: Annotated[int, Field(ge=0)] | None = None
    window: Window | None = None


class SweepEntry(_Strict):
    axis: Literal["lookahead", "alpha", "gamma", "depth"]
    values: Annotated[list[float], Field(min_length=1)]


class TraceEntry(_Strict):
    path: str


class ExperimentConfig(_Strict):
    schema_version: int
    seed: Annotated[int, Field(ge=0, le=MASK64)]
    vocab_size: Annotated[int, Field(ge=3)] = DEFAULT_VOCAB_SIZE
    max_tokens: Annotated[int, Field(ge=1)] = DEFAULT_MAX_TOKENS
    eos_token: Annotated[int, Field(ge=0)] | None = None
    modes: Annotated[list[Mode], Field(min_length=1)] = [Mode.PIPESPEC_ASYNC]
    stages: Annotated[list[StageEntry], Field(min_length=1)]
    mode_overrides: dict[Mode, ModeOverride] = {}
    sweep: SweepEntry | None = None
    trace: TraceEntry | None = None

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v: int) -> int:
        if v != SCHEMA_VERSION:
            raise ValueError(f"schema_version {v} is not supported (expected {SCHEMA_VERSION})")
        return v

    @field_validator("modes", mode="before")
    @classmethod
    def _all_modes(cls, v):
        if v == "all" or v == ["all"]:
            return [m.value for m in Mode]
        return v

    def pipeline(self, mode: Mode | str | None = None, seed: int | None = None) -> PipelineConfig:
        mode = Mode(mode) if mode is not None else self.modes[0]
        stages = []
        override = self.mode_overrides.get(mode)
        for i, st in enumerate(self.stages):
            window = st.window
            lookahead = st.lookahead
            if override is not None and i > 0:
                if override.window is not None:
                    window = override.window
                if override.lookahead is not None:
                    lookahead = override.lookahead
            stages.append(
                StageSpec(
                    latency_per_token=st.latency,
                    acceptance_rate=st.acceptance,
                    window=None if window == "unbounded" else window,
                    lookahead=lookahead,
                    power=st.power,
                )
            )
        return PipelineConfig(
            stages=tuple(stages),
            seed=self.seed if seed is None else seed,
            mode=mode,
            vocab_size=self.vocab_size,
            max_tokens=self.max_tokens,
            eos_token=self.eos_token,
        )

    def models(self, config: PipelineConfig, base: Path | None = None) -> list[TokenModel]:
        if self.trace is None:
            return build_oracle_chain(config)
        path = Path(self.trace.path)
        if base is not None and not path.is_absolute():
            path = base / path
        records = load_trace(path)
        if len(records[0].drafts) + 1 != len(config.stages):
            raise ConfigError(
                f"trace has {len(records[0].drafts) + 1} stages, config has {len(config.stages)}"
            )
        return trace_models(records, config.seed, config.vocab_size)


def _format_errors(exc: ValidationError) -> str:
    lines = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "invalid experiment config:\n" + "\n".join(lines)


def parse_experiment(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc)) from None


def load_experiment(path: str | Path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from None
    return parse_experiment(data)


def config_to_dict(config: PipelineConfig) -> dict:
    return {
        "mode": config.mode.value,
        "seed": config.seed,
        "vocab_size": config.vocab_size,
        "max_tokens": config.max_tokens,
        "eos_token": config.eos_token,
        "stages": [
            {
                "latency": s.latency_per_token,
                "acceptance": s.acceptance_rate,
                "window": "unbounded" if s.window is None else s.window,
                "lookahead": s.lookahead,
                "power": s.power,
            }
            for s in config.stages
        ],
    }
