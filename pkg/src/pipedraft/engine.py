"""Discrete-event execution of draft/verify pipelines over a virtual clock.

Three schedules share the same commit and rollback machinery:

* ``autoregressive``: the final stage alone, one token per step.
* ``speculative_sync``: one stage computes at a time; a verifier blocks
  until its drafter has produced ``lookahead`` tokens, then verifies them.
* ``pipespec_async``: every stage runs continuously. Stage 0 drafts
  optimistically; a verifier takes whatever its drafter has produced
  (capped by ``window``), or computes one token itself when nothing is
  available. A commit that disagrees with an upstream buffer resyncs that
  buffer to the committing stage's content and discards its in-flight work.

Every stage holds at most one unit of in-flight work, so the pending-event
set is one slot per stage; the next event is the earliest slot, ties going
to the lower stage index.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass

from .core import (
    ConfigError,
    ContractViolation,
    EngineFault,
    Mode,
    PipelineConfig,
    TokenBuffer,
)
from .eventlog import (
    DRAFT_DONE,
    FINISHED,
    ROLLBACK_APPLIED,
    VERIFY_DONE,
    EventLog,
    LogIntegrityError,
    tally,
)
from .models import TokenModel, build_oracle_chain

log = logging.getLogger(__name__)

_IDLE, _DRAFT, _FALLBACK, _VERIFY = 0, 1, 2, 3


@dataclass
class RunResult:
    config: PipelineConfig
    final_sequence: list[int]
    total_time: float
    events: EventLog
    busy_time: list[float]
    per_stage_busy: list[float]
    accept_histogram: dict[int, int]
    fallback_steps: int
    verify_steps: int
    rollback_count: list[int]
    wasted_tokens: list[int]

    @property
    def mode(self) -> Mode:
        return self.config.mode

    @property
    def num_stages(self) -> int:
        return len(self.config.stages)

    @property
    def final_stage(self) -> int:
        return self.config.final_stage

    @property
    def final_steps(self) -> int:
        return self.fallback_steps + self.verify_steps

    @property
    def verify_probability(self) -> float:
        """Fraction of final-stage steps that verified a non-empty batch."""
        return self.verify_steps / self.final_steps if self.final_steps else 0.0

    @property
    def tokens_per_step(self) -> float:
        return len(self.final_sequence) / self.final_steps if self.final_steps else 0.0

    @property
    def time_per_token(self) -> float:
        return self.total_time / len(self.final_sequence)

    @property
    def throughput(self) -> float:
        return len(self.final_sequence) / self.total_time


class _Stage:
    __slots__ = ("index", "spec", "model", "buf", "latency", "work", "start", "end", "pos", "batch")

    def __init__(self, index, spec, model):
        self.index = index
        self.spec = spec
        self.model = model
        self.buf = TokenBuffer()
        self.latency = spec.latency_per_token
        self.work = _IDLE
        self.start = 0.0
        self.end = 0.0
        self.pos = 0
        self.batch: tuple[int, ...] = ()


class _Simulation:
    def __init__(self, config: PipelineConfig, models: Sequence[TokenModel]):
        self.config = config
        self.stages = [_Stage(i, s, m) for i, (s, m) in enumerate(zip(config.stages, models))]
        self.final = self.stages[-1]
        self.cap = config.max_tokens
        self.eos = config.eos_token
        self.now = 0.0
        self.done = False
        self.log = EventLog()

    # shared commit / rollback machinery ------------------------------------

    def _complete(self, s: _Stage) -> None:
        kind, s.work = s.work, _IDLE
        busy = s.end - s.start
        self.now = s.end
        if kind == _VERIFY:
            self._commit(s, s.pos, self._verify(s), VERIFY_DONE, len(s.batch), busy)
        else:
            n = len(s.buf)
            tok = s.model.next_token(s.buf.context(n))
            self._commit(s, n, [tok], DRAFT_DONE, 0, busy)

    def _verify(self, s: _Stage) -> list[int]:
        """Longest matching prefix of the batch plus one token of the verifier's own."""
        up = self.stages[s.index - 1].buf
        f, batch, model = s.pos, s.batch, s.model
        if up.tokens[f : f + len(batch)] != list(batch):
            raise EngineFault(f"stage {s.index}: draft batch at {f} changed while in flight")
        out = []
        for j, d in enumerate(batch):
            pred = model.next_token(up.context(f + j))
            if pred != d:
                out.append(pred)
                return out
            out.append(d)
        out.append(model.next_token(up.context(f + len(batch))))
        return out

    def _commit(self, s: _Stage, pos: int, tokens: list[int], kind: str, info: int, busy: float) -> None:
        buf = s.buf
        if pos != len(buf):
            raise EngineFault(f"stage {s.index}: commit at {pos} but buffer length is {len(buf)}")
        tokens = tokens[: self.cap - pos]
        if s is self.final and self.eos is not None and self.eos in tokens:
            tokens = tokens[: tokens.index(self.eos) + 1]
            self.done = True
        buf.append(tokens)
        self.log.append(self.now, s.index, kind, pos, tokens, info, busy)
        if s.index:
            self._reconcile(s, pos, pos + len(tokens))
        if s is self.final:
            buf.verified_upto = len(buf)
            if len(buf) >= self.cap:
                self.done = True

    def _reconcile(self, src: _Stage, start: int, end: int) -> None:
        """Resync every upstream buffer that is not an extension of ``src``'s buffer."""
        ref = src.buf.tokens
        for m in range(src.index - 1, -1, -1):
            st = self.stages[m]
            bt = st.buf.tokens
            lim = min(end, len(bt))
            d = start
            while d < lim and bt[d] == ref[d]:
                d += 1
            if d < end:
                lost = self.now - st.start if st.work else 0.0
                st.work = _IDLE
                st.buf.rollback(d).append(ref[d:end])
                self.log.append(self.now, m, ROLLBACK_APPLIED, d, ref[d:end], src.index, lost)
            if m == src.index - 1:
                st.buf.mark_verified(end)

    def _finish(self) -> None:
        for st in self.stages:
            partial = self.now - st.start if st.work else 0.0
            st.work = _IDLE
            self.log.append(self.now, st.index, FINISHED, len(st.buf), (), 0, partial)

    def _begin(self, s: _Stage, work: int) -> None:
        s.work = work
        s.start = self.now
        s.end = self.now + s.latency

    # schedules --------------------------------------------------------------

    def run_autoregressive(self) -> None:
        s = self.final
        while not self.done:
            self._begin(s, _FALLBACK)
            self._complete(s)
        self._finish()

    def run_sync(self) -> None:
        while not self.done:
            self._sync_step(self.final.index)
        self._finish()

    def _sync_step(self, i: int) -> None:
        s = self.stages[i]
        if i == 0:
            self._begin(s, _DRAFT)
            self._complete(s)
            return
        up = self.stages[i - 1].buf
        n = len(s.buf)
        lookahead = s.spec.lookahead
        need = min(lookahead, self.cap - n)
        while len(up) - n < need:
            self._sync_step(i - 1)
        avail = len(up) - n
        window = s.spec.window if s.spec.window is not None else avail
        b = min(avail, lookahead, window, self.cap - n)
        if b > 0:
            s.pos = n
            s.batch = tuple(up.tokens[n : n + b])
            self._begin(s, _VERIFY)
        else:
            self._begin(s, _FALLBACK)
        self._complete(s)

    def run_async(self) -> None:
        stages = self.stages
        while True:
            for s in stages:
                if s.work == _IDLE:
                    self._try_start(s)
            nxt = None
            for s in stages:
                if s.work and (nxt is None or s.end < nxt.end):
                    nxt = s
            if nxt is None:
                raise EngineFault("no stage can make progress")
            self._complete(nxt)
            if self.done:
                break
        self._finish()

    def _try_start(self, s: _Stage) -> None:
        n = len(s.buf)
        if n >= self.cap:
            return
        if s.index == 0:
            self._begin(s, _DRAFT)
            return
        up = self.stages[s.index - 1].buf
        avail = len(up) - n
        if avail < 0:
            raise EngineFault(f"stage {s.index} is ahead of its drafter")
        window = s.spec.window
        if avail == 0 or window == 0:
            self._begin(s, _FALLBACK)
        elif avail >= min(s.spec.lookahead, self.cap - n):
            b = min(avail, self.cap - n)
            if window is not None:
                b = min(b, window)
            s.pos = n
            s.batch = tuple(up.tokens[n : n + b])
            self._begin(s, _VERIFY)
        # otherwise wait for more drafts


def _result(config: PipelineConfig, sim: _Simulation) -> RunResult:
    try:
        t = tally(sim.log, len(config.stages), config.final_stage, check=True)
    except LogIntegrityError as exc:
        raise EngineFault(f"event log failed self-check: {exc}") from exc
    if t.final_sequence != sim.final.buf.tokens:
        raise EngineFault("event log does not reproduce the final buffer")
    return RunResult(
        config=config,
        final_sequence=list(sim.final.buf.tokens),
        total_time=t.total_time,
        events=sim.log,
        busy_time=t.busy_time,
        per_stage_busy=t.busy_fraction(),
        accept_histogram=t.accept_histogram,
        fallback_steps=t.fallback_steps,
        verify_steps=t.verify_steps,
        rollback_count=t.rollbacks,
        wasted_tokens=t.wasted_tokens,
    )


def run(config: PipelineConfig, models: Sequence[TokenModel] | None = None) -> RunResult:
    """Execute ``config`` to completion under ``config.mode``.

    ``models`` defaults to the seeded oracle chain built from the config's
    acceptance rates. Raises :class:`ConfigError` on a model-count mismatch
    and :class:`EngineFault` on an internal consistency violation.
    """
    if models is None:
        models = build_oracle_chain(config)
    if len(models) != len(config.stages):
        raise ConfigError(f"{len(config.stages)} stages but {len(models)} models")
    sim = _Simulation(config, models)
    try:
        if config.mode is Mode.AUTOREGRESSIVE:
            sim.run_autoregressive()
        elif config.mode is Mode.SPECULATIVE_SYNC:
            sim.run_sync()
        else:
            sim.run_async()
    except ContractViolation as exc:
        tail = [sim.log[i] for i in range(max(0, len(sim.log) - 5), len(sim.log))]
        log.error("engine fault at t=%s; last events: %s", sim.now, tail)
        raise EngineFault(str(exc)) from exc
    return _result(config, sim)


def run_sync_sd(config: PipelineConfig, models: Sequence[TokenModel] | None = None) -> RunResult:
    if config.mode is not Mode.SPECULATIVE_SYNC:
        raise ConfigError(f"run_sync_sd needs mode speculative_sync, got {config.mode.value}")
    return run(config, models)


def run_autoregressive(config: PipelineConfig, models: Sequence[TokenModel] | None = None) -> RunResult:
    return run(config.with_mode(Mode.AUTOREGRESSIVE), models)
