"""Named pipeline configurations and the sync/async ablation."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, replace

from .analytic import pipespec_rate
from .core import Mode, PipelineConfig, StageSpec
from .engine import RunResult, run
from .metrics import keep_stages
from .models import TokenModel, build_oracle_chain

SD_LOOKAHEAD = 8
PS_LOOKAHEAD = 0


def chain(
    latencies: Sequence[float],
    alphas: Sequence[float],
    *,
    seed: int,
    max_tokens: int,
    mode: Mode = Mode.PIPESPEC_ASYNC,
    window: int | None = None,
    lookahead: int = 0,
) -> PipelineConfig:
    """Pipeline with ``alphas[i]`` the agreement between stage i and stage i+1."""
    if len(alphas) != len(latencies) - 1:
        raise ValueError("need one acceptance rate per link")
    stages = [StageSpec(latencies[0])]
    for t, a in zip(latencies[1:], alphas):
        stages.append(StageSpec(t, acceptance_rate=a, window=window, lookahead=lookahead))
    return PipelineConfig(tuple(stages), seed=seed, mode=mode, max_tokens=max_tokens)


def for_mode(config: PipelineConfig, mode: Mode, lookahead: int | None = None) -> PipelineConfig:
    """``config`` under ``mode`` with that mode's default verifier lookahead."""
    if lookahead is None:
        lookahead = SD_LOOKAHEAD if mode is Mode.SPECULATIVE_SYNC else PS_LOOKAHEAD
    return config.with_mode(mode).with_verifiers(lookahead=lookahead)


def three_tier(
    alpha: float = 0.8,
    *,
    seed: int = 3,
    max_tokens: int = 20000,
    latencies: Sequence[float] = (1.0, 10.0, 70.0),
) -> PipelineConfig:
    """Three stages with latency ratios 1:10:70 and the same agreement on each link."""
    return chain(latencies, [alpha] * (len(latencies) - 1), seed=seed, max_tokens=max_tokens)


def subpipeline(
    config: PipelineConfig, keep: Sequence[int], models: Sequence[TokenModel] | None = None
) -> tuple[PipelineConfig, list[TokenModel]]:
    """Keep only ``keep`` stages, reusing the full chain's models so dropped links compound."""
    if models is None:
        models = build_oracle_chain(config)
    return keep_stages(config, keep), [models[i] for i in keep]


@dataclass(frozen=True)
class Ablation:
    autoregressive: RunResult
    sync_single: RunResult
    sync_multi: RunResult
    async_single: RunResult
    async_multi: RunResult

    def speedups(self) -> dict[str, float]:
        base = self.autoregressive.time_per_token
        return {
            name: base / getattr(self, name).time_per_token
            for name in ("autoregressive", "sync_single", "sync_multi", "async_single", "async_multi")
        }

    def runs(self) -> list[RunResult]:
        return [self.autoregressive, self.sync_single, self.sync_multi, self.async_single, self.async_multi]


def ablation(config: PipelineConfig) -> Ablation:
    """Sync vs async, one draft model vs all of them.

    The single-draft pipelines keep the last two stages (the mid-sized
    drafter and the final verifier).
    """
    models = build_oracle_chain(config)
    k = config.final_stage
    single, single_models = subpipeline(config, [k - 1, k], models)

    def go(cfg, mode, ms):
        return run(for_mode(cfg, mode), ms)

    return Ablation(
        autoregressive=go(config, Mode.AUTOREGRESSIVE, models),
        sync_single=go(single, Mode.SPECULATIVE_SYNC, single_models),
        sync_multi=go(config, Mode.SPECULATIVE_SYNC, models),
        async_single=go(single, Mode.PIPESPEC_ASYNC, single_models),
        async_multi=go(config, Mode.PIPESPEC_ASYNC, models),
    )


def two_stage_fixed_window(alpha: float, gamma: int, *, seed: int = 7, steps: int = 100_000) -> PipelineConfig:
    """Async pair whose verifier step is long enough to always find a full window drafted.

    ``max_tokens`` is sized so the final stage takes about ``steps`` steps.
    """
    expected = pipespec_rate(alpha, gamma)
    return chain(
        (1.0, float(gamma + 2)),
        [alpha],
        seed=seed,
        max_tokens=int(steps * expected * 1.03) + 10,
        window=gamma,
    )


def with_final(config: PipelineConfig, **changes) -> PipelineConfig:
    stages = list(config.stages)
    stages[-1] = replace(stages[-1], **changes)
    return replace(config, stages=tuple(stages))
