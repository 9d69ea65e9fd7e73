"""Shared domain types: stage/pipeline configuration and the rollback-capable token buffer."""

from __future__ import annotations

import enum
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

MASK64 = (1 << 64) - 1
GOLDEN64 = 0x9E3779B97F4A7C15
EMPTY_DIGEST = 0x243F6A8885A308D3

DEFAULT_VOCAB_SIZE = 32768
DEFAULT_MAX_TOKENS = 512

TokenId = int


class ConfigError(ValueError):
    """Invalid pipeline or experiment configuration."""


class ContractViolation(RuntimeError):
    """An internal precondition was broken; signals an engine bug."""


class EngineFault(RuntimeError):
    """The engine detected an inconsistent state and aborted the run."""


def mix64(x: int) -> int:
    # splitmix64 finalizer
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def extend_digest(digest: int, token: int) -> int:
    """Fold one token into a running context digest."""
    return mix64((digest ^ ((token + 1) * GOLDEN64)) + GOLDEN64)


def fold_digest(tokens: Iterable[int], digest: int = EMPTY_DIGEST) -> int:
    for t in tokens:
        digest = extend_digest(digest, t)
    return digest


class Mode(str, enum.Enum):
    AUTOREGRESSIVE = "autoregressive"
    SPECULATIVE_SYNC = "speculative_sync"
    PIPESPEC_ASYNC = "pipespec_async"


@dataclass(frozen=True)
class StageSpec:
    """Parameters of one pipeline stage.

    ``acceptance_rate`` is the agreement probability with the previous stage
    and is ignored for stage 0. ``window=None`` means the verify batch is
    unbounded. ``power`` weights busy time in the energy proxy.
    """

    latency_per_token: float
    acceptance_rate: float = 1.0
    window: int | None = None
    lookahead: int = 0
    power: float = 1.0

    def __post_init__(self) -> None:
        if not self.latency_per_token > 0:
            raise ConfigError(f"latency_per_token must be > 0, got {self.latency_per_token}")
        if not 0.0 <= self.acceptance_rate <= 1.0:
            raise ConfigError(f"acceptance_rate must lie in [0, 1], got {self.acceptance_rate}")
        if self.window is not None and self.window < 0:
            raise ConfigError(f"window must be >= 0, got {self.window}")
        if self.lookahead < 0:
            raise ConfigError(f"lookahead must be >= 0, got {self.lookahead}")
        if self.power < 0:
            raise ConfigError(f"power must be >= 0, got {self.power}")


@dataclass(frozen=True)
class PipelineConfig:
    stages: tuple[StageSpec, ...]
    seed: int
    mode: Mode = Mode.PIPESPEC_ASYNC
    vocab_size: int = DEFAULT_VOCAB_SIZE
    max_tokens: int = DEFAULT_MAX_TOKENS
    eos_token: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "mode", Mode(self.mode))
        if not self.stages:
            raise ConfigError("a pipeline needs at least one stage")
        if self.vocab_size < 3:
            # a disagreeing token must avoid up to two values
            raise ConfigError(f"vocab_size must be >= 3, got {self.vocab_size}")
        if self.max_tokens < 1:
            raise ConfigError(f"max_tokens must be >= 1, got {self.max_tokens}")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if self.eos_token is not None and not 0 <= self.eos_token < self.vocab_size:
            raise ConfigError(f"eos_token must be a vocabulary id, got {self.eos_token}")

    @property
    def final_stage(self) -> int:
        return len(self.stages) - 1

    def with_mode(self, mode: Mode | str) -> PipelineConfig:
        return replace(self, mode=Mode(mode))

    def with_verifiers(self, **changes) -> PipelineConfig:
        """Copy with ``changes`` applied to every verifying stage (index >= 1)."""
        stages = (self.stages[0],) + tuple(replace(s, **changes) for s in self.stages[1:])
        return replace(self, stages=stages)


class Context(Sequence):
    """Read-only view of a buffer prefix carrying the prefix digest.

    Only valid for the duration of a single model call; the underlying
    buffer may be rolled back afterwards.
    """

    __slots__ = ("_tokens", "_n", "digest")

    def __init__(self, tokens: list[int], n: int, digest: int):
        self._tokens = tokens
        self._n = n
        self.digest = digest

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self._tokens[: self._n][i]
        if i < 0:
            i += self._n
        if not 0 <= i < self._n:
            raise IndexError(i)
        return self._tokens[i]

    def __repr__(self) -> str:
        return f"Context(len={self._n}, digest={self.digest:#018x})"


@dataclass(eq=False)
class TokenBuffer:
    """Append-only token sequence of one stage with rollback to a prefix.

    ``digests[n]`` is the digest of ``tokens[:n]``, so any prefix context is
    available in O(1).
    """

    tokens: list[int] = field(default_factory=list)
    verified_upto: int = 0
    digests: list[int] = field(default_factory=lambda: [EMPTY_DIGEST], repr=False)

    def __post_init__(self) -> None:
        if len(self.digests) != len(self.tokens) + 1:
            toks = list(self.tokens)
            self.tokens = []
            self.digests = [EMPTY_DIGEST]
            self.append(toks)
        if not 0 <= self.verified_upto <= len(self.tokens):
            raise ContractViolation("verified_upto outside buffer")

    def __len__(self) -> int:
        return len(self.tokens)

    def append(self, toks: Iterable[int]) -> TokenBuffer:
        tokens, digests = self.tokens, self.digests
        d = digests[-1]
        for t in toks:
            d = extend_digest(d, t)
            tokens.append(t)
            digests.append(d)
        return self

    def rollback(self, keep: int) -> TokenBuffer:
        if not 0 <= keep <= len(self.tokens):
            raise ContractViolation(f"rollback to {keep} on a buffer of length {len(self.tokens)}")
        del self.tokens[keep:]
        del self.digests[keep + 1 :]
        self.verified_upto = min(self.verified_upto, keep)
        return self

    def mark_verified(self, upto: int) -> None:
        self.verified_upto = max(self.verified_upto, min(upto, len(self.tokens)))

    def context(self, n: int | None = None) -> Context:
        if n is None:
            n = len(self.tokens)
        return Context(self.tokens, n, self.digests[n])

    def is_extension_of(self, other: Sequence[int]) -> bool:
        return len(self.tokens) >= len(other) and self.tokens[: len(other)] == list(other)


def buffer_append(buf: TokenBuffer, toks: Iterable[int]) -> TokenBuffer:
    return buf.append(toks)


def buffer_rollback(buf: TokenBuffer, keep: int) -> TokenBuffer:
    return buf.rollback(keep)
