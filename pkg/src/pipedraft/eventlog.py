"""Event records, compact storage, JSONL serialization, and log replay."""

from __future__ import annotations

import json
from array import array
from collections import Counter
from collections.abc import Iterator
from dataclasses import dataclass
from typing import NamedTuple

from .core import TokenBuffer, fold_digest

SCHEMA_VERSION = 1

DRAFT_DONE = "draft_done"
VERIFY_DONE = "verify_done"
ROLLBACK_APPLIED = "rollback_applied"
FINISHED = "finished"

KINDS = (DRAFT_DONE, VERIFY_DONE, ROLLBACK_APPLIED, FINISHED)
_KIND_CODE = {k: i for i, k in enumerate(KINDS)}


class LogIntegrityError(ValueError):
    """An event log is truncated, reordered, or internally inconsistent."""


class Event(NamedTuple):
    """One entry of a run's timeline.

    ``pos`` is the buffer position the payload starts at (the keep-length for
    rollbacks). ``tokens`` are the appended tokens. ``info`` is the batch size
    of a verify step or the origin stage of a rollback. ``busy`` is the
    compute time the event concludes, including discarded partial work.
    """

    seq: int
    time: float
    stage: int
    kind: str
    pos: int
    tokens: tuple[int, ...]
    info: int
    busy: float


class EventLog:
    """Append-only columnar event store.

    Asynchronous runs emit one event per drafted token, so rows are kept in
    typed arrays instead of per-event objects.
    """

    def __init__(self) -> None:
        self._time = array("d")
        self._busy = array("d")
        self._stage = array("b")
        self._kind = array("b")
        self._pos = array("q")
        self._info = array("q")
        self._tok_end = array("q")
        self._toks = array("q")

    def append(self, time: float, stage: int, kind: str, pos: int, tokens, info: int = 0, busy: float = 0.0) -> None:
        self._time.append(time)
        self._busy.append(busy)
        self._stage.append(stage)
        self._kind.append(_KIND_CODE[kind])
        self._pos.append(pos)
        self._info.append(info)
        self._toks.extend(tokens)
        self._tok_end.append(len(self._toks))

    def __len__(self) -> int:
        return len(self._time)

    def __getitem__(self, i: int) -> Event:
        n = len(self._time)
        if i < 0:
            i += n
        if not 0 <= i < n:
            raise IndexError(i)
        lo = self._tok_end[i - 1] if i else 0
        return Event(
            i,
            self._time[i],
            self._stage[i],
            KINDS[self._kind[i]],
            self._pos[i],
            tuple(self._toks[lo : self._tok_end[i]]),
            self._info[i],
            self._busy[i],
        )

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventLog):
            return NotImplemented
        return all(
            getattr(self, f) == getattr(other, f)
            for f in ("_time", "_busy", "_stage", "_kind", "_pos", "_info", "_tok_end", "_toks")
        )

    @classmethod
    def from_events(cls, events) -> EventLog:
        log = cls()
        for e in events:
            log.append(e.time, e.stage, e.kind, e.pos, e.tokens, e.info, e.busy)
        return log


@dataclass
class LogTally:
    """Quantities derived purely from an event log."""

    final_sequence: list[int]
    total_time: float
    busy_time: list[float]
    accept_histogram: dict[int, int]
    fallback_steps: int
    verify_steps: int
    rollbacks: list[int]
    resyncs: list[int]
    wasted_tokens: list[int]

    @property
    def final_steps(self) -> int:
        return self.fallback_steps + self.verify_steps

    def busy_fraction(self) -> list[float]:
        if self.total_time <= 0:
            return [0.0] * len(self.busy_time)
        return [min(1.0, b / self.total_time) for b in self.busy_time]


def tally(events, num_stages: int, final_stage: int | None = None, check: bool = True) -> LogTally:
    """Rebuild every stage buffer from ``events`` and aggregate run statistics.

    With ``check`` set, each event is validated against the rebuilt state
    (append positions, rollback bounds, verified prefixes matching the
    upstream buffer) and a :class:`LogIntegrityError` is raised on mismatch.
    """
    if final_stage is None:
        final_stage = num_stages - 1
    bufs = [[] for _ in range(num_stages)]
    busy = [0.0] * num_stages
    rollbacks = [0] * num_stages
    resyncs = [0] * num_stages
    wasted = [0] * num_stages
    hist: Counter[int] = Counter()
    fallback = verify = 0
    last_time = 0.0
    finished = False
    total_time = 0.0
    for e in events:
        if finished and e.kind != FINISHED:
            raise LogIntegrityError(f"event {e.seq} after finish")
        if not 0 <= e.stage < num_stages:
            raise LogIntegrityError(f"event {e.seq}: stage {e.stage} out of range")
        if check and e.time < last_time:
            raise LogIntegrityError(f"event {e.seq}: time goes backwards")
        last_time = e.time
        buf = bufs[e.stage]
        busy[e.stage] += e.busy
        if e.kind == DRAFT_DONE:
            if check and e.pos != len(buf):
                raise LogIntegrityError(f"event {e.seq}: append at {e.pos}, buffer length {len(buf)}")
            buf.extend(e.tokens)
            if e.stage == final_stage:
                fallback += 1
        elif e.kind == VERIFY_DONE:
            if check:
                if e.pos != len(buf):
                    raise LogIntegrityError(f"event {e.seq}: append at {e.pos}, buffer length {len(buf)}")
                if e.stage == 0:
                    raise LogIntegrityError(f"event {e.seq}: stage 0 cannot verify")
                up = bufs[e.stage - 1]
                accepted = len(e.tokens) - 1
                if up[e.pos : e.pos + accepted] != list(e.tokens[:accepted]):
                    raise LogIntegrityError(f"event {e.seq}: accepted tokens disagree with upstream buffer")
            buf.extend(e.tokens)
            if e.stage == final_stage:
                verify += 1
                hist[len(e.tokens)] += 1
        elif e.kind == ROLLBACK_APPLIED:
            if check and not 0 <= e.pos <= len(buf):
                raise LogIntegrityError(f"event {e.seq}: rollback to {e.pos} beyond length {len(buf)}")
            dropped = len(buf) - e.pos
            del buf[e.pos :]
            buf.extend(e.tokens)
            resyncs[e.stage] += 1
            if dropped:
                rollbacks[e.stage] += 1
                wasted[e.stage] += dropped
        elif e.kind == FINISHED:
            finished = True
            total_time = max(total_time, e.time)
    if check and not finished:
        raise LogIntegrityError("log has no finish event")
    return LogTally(
        final_sequence=bufs[final_stage],
        total_time=total_time,
        busy_time=busy,
        accept_histogram=dict(sorted(hist.items())),
        fallback_steps=fallback,
        verify_steps=verify,
        rollbacks=rollbacks,
        resyncs=resyncs,
        wasted_tokens=wasted,
    )


# JSONL serialization -------------------------------------------------------


def sequence_digest(tokens) -> str:
    return f"{fold_digest(tokens):016x}"


def write_events(fh, result) -> None:
    """Write a run's event log: header line, one line per event, trailer."""
    from .config import config_to_dict

    header = {
        "type": "header",
        "schema_version": SCHEMA_VERSION,
        "mode": result.mode.value,
        "num_stages": result.num_stages,
        "final_stage": result.final_stage,
        "config": config_to_dict(result.config),
    }
    fh.write(json.dumps(header, sort_keys=True) + "\n")
    for e in result.events:
        fh.write(json.dumps([e.seq, e.time, e.stage, e.kind, e.pos, list(e.tokens), e.info, e.busy]) + "\n")
    trailer = {
        "type": "trailer",
        "events": len(result.events),
        "final_length": len(result.final_sequence),
        "final_digest": sequence_digest(result.final_sequence),
        "total_time": result.total_time,
    }
    fh.write(json.dumps(trailer, sort_keys=True) + "\n")


@dataclass
class LoadedLog:
    header: dict
    events: EventLog
    trailer: dict


def read_events(fh) -> LoadedLog:
    lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise LogIntegrityError("empty event log")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise LogIntegrityError(f"bad header: {exc}") from None
    if not isinstance(header, dict) or header.get("type") != "header":
        raise LogIntegrityError("first line is not a log header")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise LogIntegrityError(
            f"schema_version {header.get('schema_version')!r} unsupported (expected {SCHEMA_VERSION})"
        )
    n = header.get("num_stages")
    k = header.get("final_stage")
    if not (isinstance(n, int) and n >= 1 and isinstance(k, int) and 0 <= k < n):
        raise LogIntegrityError("header has no valid num_stages/final_stage")
    try:
        trailer = json.loads(lines[-1])
    except json.JSONDecodeError:
        trailer = None
    if len(lines) < 2 or not isinstance(trailer, dict) or trailer.get("type") != "trailer":
        raise LogIntegrityError("log is truncated: trailer missing")
    log = EventLog()
    for n, line in enumerate(lines[1:-1], 1):
        try:
            seq, time, stage, kind, pos, tokens, info, busy = json.loads(line)
        except (json.JSONDecodeError, ValueError, TypeError):
            raise LogIntegrityError(f"malformed event on line {n + 1}") from None
        if seq != len(log) or kind not in _KIND_CODE:
            raise LogIntegrityError(f"event sequence broken on line {n + 1}")
        log.append(time, stage, kind, pos, tokens, info, busy)
    if trailer.get("events") != len(log):
        raise LogIntegrityError(f"trailer announces {trailer.get('events')} events, found {len(log)}")
    return LoadedLog(header, log, trailer)


def replay(loaded: LoadedLog) -> LogTally:
    """Reconstruct a run from its log and check it against the trailer."""
    h = loaded.header
    t = tally(loaded.events, h["num_stages"], h["final_stage"])
    if len(t.final_sequence) != loaded.trailer["final_length"]:
        raise LogIntegrityError("replayed sequence length differs from the recorded one")
    if sequence_digest(t.final_sequence) != loaded.trailer["final_digest"]:
        raise LogIntegrityError("replayed sequence differs from the recorded one")
    return t


def replay_buffers(events, num_stages: int) -> list[TokenBuffer]:
    """Per-stage buffers at the end of the log (unchecked)."""
    bufs = [TokenBuffer() for _ in range(num_stages)]
    for e in events:
        if e.kind in (DRAFT_DONE, VERIFY_DONE):
            bufs[e.stage].append(e.tokens)
        elif e.kind == ROLLBACK_APPLIED:
            bufs[e.stage].rollback(e.pos).append(e.tokens)
    return bufs
