"""Deterministic token generators standing in for the draft and target models.

Every model is a pure function of (context, stage, seed). Agreement between
adjacent stages is realized by a Bernoulli draw keyed on the context digest,
so a re-presented context after a rollback always yields the same token.
"""

from __future__ import annotations

import abc
import json
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

from .core import (
    DEFAULT_VOCAB_SIZE,
    GOLDEN64,
    MASK64,
    ConfigError,
    PipelineConfig,
    fold_digest,
    mix64,
)

_UNIT = 1.0 / (1 << 53)


def context_digest(context: Sequence[int]) -> int:
    d = getattr(context, "digest", None)
    return fold_digest(context) if d is None else d


def _stage_key(seed: int, stage_index: int, salt: int) -> int:
    return mix64(mix64(seed ^ (salt * GOLDEN64 & MASK64)) ^ ((stage_index + 1) * 0xD6E8FEB86659FD93 & MASK64))


def _scaled(h: int, n: int) -> int:
    # unbiased enough for n << 2**64
    return (h * n) >> 64


class TokenModel(abc.ABC):
    """A stage's next-token predictor; the engine only calls ``next_token``."""

    @abc.abstractmethod
    def next_token(self, context: Sequence[int]) -> int: ...

    def _pair(self, context: Sequence[int], digest: int) -> tuple[int, int]:
        # (own token, final-stage token); oracles override to share work
        tok = self.next_token(context)
        return tok, tok


def canonical_next(seed: int, context: Sequence[int], vocab_size: int = DEFAULT_VOCAB_SIZE) -> int:
    """Ground-truth next token for ``context`` under ``seed``."""
    key = _stage_key(seed, -1, 0x5EED)
    return _scaled(mix64(context_digest(context) ^ key), vocab_size)


class CanonicalModel(TokenModel):
    """The final verifier: its output is the reference stream."""

    def __init__(self, seed: int, vocab_size: int = DEFAULT_VOCAB_SIZE):
        self.seed = seed
        self.vocab_size = vocab_size
        self._key = _stage_key(seed, -1, 0x5EED)

    def next_token(self, context: Sequence[int]) -> int:
        return _scaled(mix64(context_digest(context) ^ self._key), self.vocab_size)

    def _pair(self, context, digest):
        tok = _scaled(mix64(digest ^ self._key), self.vocab_size)
        return tok, tok

    def __repr__(self) -> str:
        return f"CanonicalModel(seed={self.seed})"


class ChainedOracle(TokenModel):
    """Agrees with ``successor`` on a context with probability ``agreement_rate``.

    A disagreeing token differs from both the successor's token and the final
    stage's token, so this stage matches the final stage exactly when every
    link down the chain agrees.
    """

    def __init__(
        self,
        stage_index: int,
        seed: int,
        agreement_rate: float,
        successor: TokenModel,
        vocab_size: int = DEFAULT_VOCAB_SIZE,
    ):
        if not 0.0 <= agreement_rate <= 1.0:
            raise ConfigError(f"agreement_rate must lie in [0, 1], got {agreement_rate}")
        if vocab_size < 3:
            raise ConfigError("vocab_size must be >= 3")
        self.stage_index = stage_index
        self.seed = seed
        self.agreement_rate = agreement_rate
        self.successor = successor
        self.vocab_size = vocab_size
        self._coin_key = _stage_key(seed, stage_index, 0xC011)
        self._alt_key = _stage_key(seed, stage_index, 0xA17)

    def agrees(self, digest: int) -> bool:
        return (mix64(digest ^ self._coin_key) >> 11) * _UNIT < self.agreement_rate

    def _pair(self, context, digest):
        target, final = self.successor._pair(context, digest)
        if self.agrees(digest):
            return target, final
        avoid = sorted({target, final})
        tok = _scaled(mix64(digest ^ self._alt_key), self.vocab_size - len(avoid))
        for a in avoid:
            if tok >= a:
                tok += 1
        return tok, final

    def next_token(self, context: Sequence[int]) -> int:
        return self._pair(context, context_digest(context))[0]

    def __repr__(self) -> str:
        return f"ChainedOracle(stage={self.stage_index}, rate={self.agreement_rate})"


def chained_next(oracle: ChainedOracle, context: Sequence[int]) -> int:
    return oracle.next_token(context)


def build_oracle_chain(config: PipelineConfig) -> list[TokenModel]:
    """One oracle per stage; stage i agrees with stage i+1 at ``stages[i+1].acceptance_rate``."""
    final = CanonicalModel(config.seed, config.vocab_size)
    models: list[TokenModel] = [final]
    for i in range(config.final_stage - 1, -1, -1):
        rate = config.stages[i + 1].acceptance_rate
        models.append(ChainedOracle(i, config.seed, rate, models[-1], config.vocab_size))
    return models[::-1]


# Trace-driven models --------------------------------------------------------


@dataclass(frozen=True)
class TraceRecord:
    position: int
    drafts: tuple[int, ...]
    final: int


def parse_trace(lines) -> list[TraceRecord]:
    """Parse line-delimited JSON records ``{"position", "drafts", "final"}``."""
    records = []
    for lineno, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"trace line {lineno}: {exc}") from None
        if not isinstance(obj, dict) or set(obj) != {"position", "drafts", "final"}:
            raise ConfigError(f"trace line {lineno}: expected keys position, drafts, final")
        pos, drafts, final = obj["position"], obj["drafts"], obj["final"]
        if pos != len(records):
            raise ConfigError(f"trace line {lineno}: position {pos}, expected {len(records)}")
        if not isinstance(drafts, list) or not all(isinstance(t, int) and t >= 0 for t in drafts):
            raise ConfigError(f"trace line {lineno}: drafts must be a list of token ids")
        if not isinstance(final, int) or final < 0:
            raise ConfigError(f"trace line {lineno}: final must be a token id")
        if records and len(drafts) != len(records[0].drafts):
            raise ConfigError(f"trace line {lineno}: inconsistent number of draft stages")
        records.append(TraceRecord(pos, tuple(drafts), final))
    if not records:
        raise ConfigError("trace is empty")
    return records


def load_trace(path: str | Path) -> list[TraceRecord]:
    with open(path, encoding="utf-8") as fh:
        return parse_trace(fh)


class TraceModel(TokenModel):
    """Replays recorded per-position predictions.

    On the recorded reference prefix the stored token is returned. Contexts
    off the reference prefix (reachable only behind a wrong draft) fall back
    to a seeded hash, as do positions past the end of the trace.
    """

    def __init__(self, records: Sequence[TraceRecord], stage_index: int, seed: int, vocab_size: int):
        num_drafts = len(records[0].drafts)
        if not 0 <= stage_index <= num_drafts:
            raise ConfigError(f"trace has {num_drafts + 1} stages, no stage {stage_index}")
        self.stage_index = stage_index
        self._is_final = stage_index == num_drafts
        self._tokens = [r.final if self._is_final else r.drafts[stage_index] for r in records]
        self._prefix = [fold_digest([])]
        for r in records:
            self._prefix.append(fold_digest([r.final], self._prefix[-1]))
        self._fallback = CanonicalModel(mix64(seed ^ (stage_index + 1)), vocab_size)

    def next_token(self, context: Sequence[int]) -> int:
        p = len(context)
        d = context_digest(context)
        if p < len(self._tokens) and d == self._prefix[p]:
            return self._tokens[p]
        return self._fallback._pair(context, d)[0]


def trace_models(records: Sequence[TraceRecord], seed: int, vocab_size: int) -> list[TokenModel]:
    num_stages = len(records[0].drafts) + 1
    return [TraceModel(records, i, seed, vocab_size) for i in range(num_stages)]
