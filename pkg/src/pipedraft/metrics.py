"""Run summaries and parameter sweeps, computed from event logs."""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import asdict, dataclass, replace

from .core import ConfigError, Mode, PipelineConfig
from .engine import RunResult, run
from .eventlog import tally
from .models import TokenModel, build_oracle_chain

ModelFactory = Callable[[PipelineConfig], Sequence[TokenModel]]

SWEEP_COLUMNS = ("mode", "axis", "value", "time_per_token", "speedup", "rollbacks")
METRICS_COLUMNS = (
    "mode",
    "tokens",
    "total_time",
    "time_per_token",
    "speedup_vs_ar",
    "verify_steps",
    "fallback_steps",
    "verify_probability",
    "tokens_per_step",
    "busy_fraction",
    "rollbacks",
    "wasted_tokens",
    "energy_proxy",
)


class MetricsError(ValueError):
    """Result and baseline cannot be compared."""


@dataclass(frozen=True)
class MetricsReport:
    mode: str
    tokens: int
    total_time: float
    time_per_token: float
    speedup_vs_ar: float
    accept_histogram: dict[int, int]
    verify_steps: int
    fallback_steps: int
    verify_probability: float
    tokens_per_step: float
    busy_fraction: tuple[float, ...]
    rollbacks: tuple[int, ...]
    wasted_tokens: tuple[int, ...]
    energy_proxy: float

    def as_dict(self) -> dict:
        d = asdict(self)
        d["accept_histogram"] = {str(k): v for k, v in self.accept_histogram.items()}
        d["busy_fraction"] = list(self.busy_fraction)
        d["rollbacks"] = list(self.rollbacks)
        d["wasted_tokens"] = list(self.wasted_tokens)
        return d

    def row(self) -> dict:
        """Flat CSV row; per-stage lists are joined with ``;``."""
        d = self.as_dict()
        out = {}
        for col in METRICS_COLUMNS:
            v = d[col]
            out[col] = ";".join(repr(x) for x in v) if isinstance(v, list) else v
        return out


def _check_baseline(result: RunResult, baseline: RunResult) -> None:
    a, b = result.config, baseline.config
    if b.mode is not Mode.AUTOREGRESSIVE:
        raise MetricsError(f"baseline must be an autoregressive run, got {b.mode.value}")
    mismatched = [
        name
        for name, x, y in (
            ("seed", a.seed, b.seed),
            ("max_tokens", a.max_tokens, b.max_tokens),
            ("vocab_size", a.vocab_size, b.vocab_size),
            ("eos_token", a.eos_token, b.eos_token),
            ("final-stage latency", a.stages[-1].latency_per_token, b.stages[-1].latency_per_token),
        )
        if x != y
    ]
    if mismatched:
        raise MetricsError("baseline does not match the run: " + ", ".join(mismatched))


def summarize(result: RunResult, baseline: RunResult) -> MetricsReport:
    """Metrics for ``result`` relative to the autoregressive ``baseline`` run."""
    _check_baseline(result, baseline)
    cfg = result.config
    t = tally(result.events, len(cfg.stages), cfg.final_stage, check=False)
    b = tally(baseline.events, len(baseline.config.stages), baseline.config.final_stage, check=False)
    n = len(t.final_sequence)
    tpt = t.total_time / n
    base_tpt = b.total_time / len(b.final_sequence)
    steps = t.final_steps
    return MetricsReport(
        mode=cfg.mode.value,
        tokens=n,
        total_time=t.total_time,
        time_per_token=tpt,
        speedup_vs_ar=base_tpt / tpt,
        accept_histogram=t.accept_histogram,
        verify_steps=t.verify_steps,
        fallback_steps=t.fallback_steps,
        verify_probability=t.verify_steps / steps if steps else 0.0,
        tokens_per_step=n / steps if steps else 0.0,
        busy_fraction=tuple(t.busy_fraction()),
        rollbacks=tuple(t.rollbacks),
        wasted_tokens=tuple(t.wasted_tokens),
        energy_proxy=sum(bt * s.power for bt, s in zip(t.busy_time, cfg.stages)),
    )


# Sweeps ---------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    mode: str
    axis: str
    value: float
    time_per_token: float
    speedup: float
    rollbacks: int

    def row(self) -> dict:
        return asdict(self)


def keep_stages(config: PipelineConfig, keep: Sequence[int]) -> PipelineConfig:
    return replace(config, stages=tuple(config.stages[i] for i in keep))


def depth_indices(num_stages: int, depth: int) -> list[int]:
    """Stages kept for a pipeline of ``depth`` models: the first ``depth - 1`` drafters plus the final verifier."""
    if not 1 <= depth <= num_stages:
        raise ConfigError(f"depth must lie in [1, {num_stages}], got {depth}")
    return list(range(depth - 1)) + [num_stages - 1]


def apply_axis(config: PipelineConfig, axis: str, value: float) -> tuple[PipelineConfig, list[int]]:
    """Config for one sweep point plus the indices of the full chain's models it uses."""
    k = config.final_stage
    keep = list(range(k + 1))
    stages = list(config.stages)
    if axis == "lookahead":
        stages[k] = replace(stages[k], lookahead=_as_int(value, axis))
    elif axis == "gamma":
        g = _as_int(value, axis)
        if config.mode is Mode.SPECULATIVE_SYNC:
            stages[k] = replace(stages[k], lookahead=g, window=g)
        else:
            stages[k] = replace(stages[k], window=g)
    elif axis == "alpha":
        stages = [stages[0]] + [replace(s, acceptance_rate=value) for s in stages[1:]]
    elif axis == "depth":
        keep = depth_indices(len(stages), _as_int(value, axis))
        return keep_stages(config, keep), keep
    else:
        raise ConfigError(f"unknown sweep axis {axis!r}")
    return replace(config, stages=tuple(stages)), keep


def _as_int(value: float, axis: str) -> int:
    if value != int(value) or value < 0:
        raise ConfigError(f"{axis} values must be non-negative integers, got {value}")
    return int(value)


def sweep(
    configs: Mapping[Mode, PipelineConfig] | Iterable[PipelineConfig],
    axis: str,
    values: Sequence[float],
    model_factory: ModelFactory = build_oracle_chain,
) -> list[SweepRow]:
    """One row per (mode, value), each scored against its own autoregressive baseline.

    Models are built once per sweep point from the un-truncated config, so a
    depth point that drops middle stages keeps the drafters' original chain.
    """
    if not values:
        raise ConfigError("sweep needs at least one value")
    if isinstance(configs, Mapping):
        configs = list(configs.values())
    rows = []
    for cfg in configs:
        for v in values:
            point, keep = apply_axis(cfg, axis, v)
            full = replace(point, stages=cfg.stages) if axis == "depth" else point
            models = model_factory(full)
            models = [models[i] for i in keep]
            res = run(point, models)
            base = run(point.with_mode(Mode.AUTOREGRESSIVE), models)
            rows.append(
                SweepRow(
                    mode=cfg.mode.value,
                    axis=axis,
                    value=v,
                    time_per_token=res.time_per_token,
                    speedup=base.time_per_token / res.time_per_token,
                    rollbacks=sum(res.rollback_count),
                )
            )
    return rows


def sweep_lookahead(
    config: PipelineConfig,
    values: Sequence[int],
    modes: Sequence[Mode] = (Mode.SPECULATIVE_SYNC, Mode.PIPESPEC_ASYNC),
    model_factory: ModelFactory = build_oracle_chain,
) -> list[tuple[str, int, float]]:
    """(mode, lookahead, time_per_token) rows; lookahead is set on the final stage."""
    rows = sweep([config.with_mode(m) for m in modes], "lookahead", values, model_factory)
    return [(r.mode, int(r.value), r.time_per_token) for r in rows]
