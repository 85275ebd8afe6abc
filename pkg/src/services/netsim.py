"""
Deterministic discrete-event simulator of a partially synchronous,
unreliable network (loss, duplication, random delay until GST).
"""

import hashlib
import heapq
import logging
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..core.errors import UnknownNode
from ..models.schemas import NetworkConfig, TraceSummary

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["tick", "kind", "src", "dst", "msg_id"]


class EventKind(str, Enum):
    SEND = "Send"
    DELIVER = "Deliver"
    DROP = "Drop"
    DUPLICATE = "Duplicate"
    TIMER_FIRE = "TimerFire"


@dataclass(frozen=True)
class SimEvent:
    tick: int
    kind: EventKind
    src: str
    dst: str
    payload_digest: bytes
    msg_id: int
    tag: str = ""

    def to_row(self) -> Dict[str, Any]:
        return {
            "tick": self.tick,
            "kind": self.kind.value,
            "src": self.src,
            "dst": self.dst,
            "msg_id": self.msg_id,
        }


# handler(sim, event, payload): payload is the message bytes on Deliver
# and the timer data on TimerFire
Handler = Callable[["NetworkSimulator", SimEvent, Any], None]


@dataclass(frozen=True)
class _Pending:
    kind: EventKind
    src: str
    dst: str
    msg_id: int
    payload_digest: bytes
    tag: str = ""


class NetworkSimulator:
    """Single-threaded event loop; handlers run sequentially inside step"""

    def __init__(self, config: NetworkConfig, seed: Optional[int] = None):
        self.config = config
        # config.seed picks a sub-stream of the master seed, it never replaces it
        if config.seed is None:
            self._rng = np.random.default_rng(seed or 0)
        else:
            self._rng = np.random.default_rng(np.random.SeedSequence([seed or 0, config.seed]))
        self._queue: List[Tuple[int, int, _Pending]] = []
        self._seq = 0
        self._next_msg_id = 0
        self._next_timer_id = 0
        self._handlers: Dict[str, Handler] = {}
        self._payloads: Dict[int, bytes] = {}
        self._timer_data: Dict[int, Any] = {}
        self._send_ticks: Dict[int, int] = {}
        self.clock = 0
        self.trace: List[SimEvent] = []

    @property
    def nodes(self) -> List[str]:
        return sorted(self._handlers)

    def register(self, node_id: str, handler: Handler) -> None:
        self._handlers[node_id] = handler

    def _push(self, tick: int, pending: _Pending) -> None:
        heapq.heappush(self._queue, (tick, self._seq, pending))
        self._seq += 1

    def _check_node(self, node_id: str) -> None:
        if node_id not in self._handlers:
            raise UnknownNode(f"node {node_id} is not registered")

    def _check_time(self, now: Optional[int]) -> int:
        tick = self.clock if now is None else now
        if tick < self.clock:
            raise ValueError(f"cannot schedule at tick {tick}, clock is {self.clock}")
        return tick

    def send(self, src: str, dst: str, payload: bytes, now: Optional[int] = None) -> int:
        """Queue a message; fault injection happens when the Send is processed"""
        self._check_node(src)
        self._check_node(dst)
        tick = self._check_time(now)
        msg_id = self._next_msg_id
        self._next_msg_id += 1
        self._payloads[msg_id] = bytes(payload)
        digest = hashlib.sha256(payload).digest()
        self._push(tick, _Pending(EventKind.SEND, src, dst, msg_id, digest))
        return msg_id

    def schedule_timer(
        self, node_id: str, at_tick: int, tag: str = "", data: Any = None
    ) -> int:
        self._check_node(node_id)
        tick = self._check_time(at_tick)
        timer_id = self._next_timer_id
        self._next_timer_id += 1
        self._timer_data[timer_id] = data
        self._push(
            tick, _Pending(EventKind.TIMER_FIRE, node_id, node_id, timer_id, b"", tag)
        )
        return timer_id

    def payload_of(self, msg_id: int) -> bytes:
        return self._payloads[msg_id]

    def send_tick(self, msg_id: int) -> int:
        return self._send_ticks[msg_id]

    def in_flight(self) -> int:
        return sum(1 for _, _, p in self._queue if p.kind == EventKind.DELIVER)

    def idle(self) -> bool:
        return not self._queue

    def _record(self, tick: int, kind: EventKind, pending: _Pending) -> SimEvent:
        event = SimEvent(
            tick=tick,
            kind=kind,
            src=pending.src,
            dst=pending.dst,
            payload_digest=pending.payload_digest,
            msg_id=pending.msg_id,
            tag=pending.tag,
        )
        self.trace.append(event)
        return event

    def _delay(self, tick: int) -> int:
        cfg = self.config
        if tick >= cfg.gst:
            low = min(cfg.delay_min, cfg.delta_bound)
            return int(self._rng.integers(low, cfg.delta_bound + 1))
        return int(self._rng.integers(cfg.delay_min, cfg.delay_max + 1))

    def _process_send(self, tick: int, pending: _Pending) -> SimEvent:
        event = self._record(tick, EventKind.SEND, pending)
        self._send_ticks[pending.msg_id] = tick
        deliver = _Pending(
            EventKind.DELIVER, pending.src, pending.dst, pending.msg_id, pending.payload_digest
        )
        if tick < self.config.gst:
            if self._rng.random() < self.config.drop_prob:
                self._record(tick, EventKind.DROP, pending)
                logger.debug(f"Drop msg {pending.msg_id} {pending.src}->{pending.dst}")
                return event
            self._push(tick + self._delay(tick), deliver)
            if self._rng.random() < self.config.dup_prob:
                self._record(tick, EventKind.DUPLICATE, pending)
                self._push(tick + self._delay(tick), deliver)
        else:
            self._push(tick + self._delay(tick), deliver)
        return event

    def step(self) -> Optional[SimEvent]:
        """Process the earliest event; None when the queue is idle"""
        if not self._queue:
            return None
        tick, _, pending = heapq.heappop(self._queue)
        self.clock = tick
        if pending.kind == EventKind.SEND:
            return self._process_send(tick, pending)
        event = self._record(tick, pending.kind, pending)
        handler = self._handlers.get(pending.dst)
        if pending.kind == EventKind.DELIVER:
            logger.debug(f"Deliver msg {pending.msg_id} {pending.src}->{pending.dst} at {tick}")
            if handler is not None:
                handler(self, event, self._payloads[pending.msg_id])
        elif handler is not None:
            handler(self, event, self._timer_data.pop(pending.msg_id, None))
        return event

    def run_until(self, tick_limit: int) -> List[SimEvent]:
        """Process every event with tick <= tick_limit, then return the trace"""
        if tick_limit < self.clock:
            raise ValueError(f"tick_limit {tick_limit} is before clock {self.clock}")
        while self._queue and self._queue[0][0] <= tick_limit:
            self.step()
        self.clock = tick_limit
        return list(self.trace)


def trace_frame(trace: Sequence[SimEvent]) -> pd.DataFrame:
    return pd.DataFrame([event.to_row() for event in trace], columns=TRACE_COLUMNS)


def trace_bytes(trace: Sequence[SimEvent]) -> bytes:
    return trace_frame(trace).to_csv(index=False, lineterminator="\n").encode("utf-8")


def export_trace_csv(trace: Sequence[SimEvent], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.write_bytes(trace_bytes(trace))
    return path


def trace_summary(trace: Sequence[SimEvent], gst: int) -> TraceSummary:
    """Counts per kind, worst post-GST delivery delay and messages still in flight"""
    counts = Counter(event.kind.value for event in trace)
    send_ticks = {e.msg_id: e.tick for e in trace if e.kind == EventKind.SEND}
    max_delay = 0
    for event in trace:
        if event.kind != EventKind.DELIVER:
            continue
        sent = send_ticks.get(event.msg_id)
        if sent is not None and sent >= gst:
            max_delay = max(max_delay, event.tick - sent)
    in_flight = (
        counts[EventKind.SEND.value]
        + counts[EventKind.DUPLICATE.value]
        - counts[EventKind.DELIVER.value]
        - counts[EventKind.DROP.value]
    )
    return TraceSummary(
        counts={kind.value: counts[kind.value] for kind in EventKind},
        max_post_gst_delay=max_delay,
        in_flight=in_flight,
    )


def audit_trace(trace: Sequence[SimEvent]) -> List[str]:
    """Structural violations: deliveries without an earlier send, or not after it"""
    problems = []
    send_ticks: Dict[int, int] = {}
    last_tick = None
    for event in trace:
        if last_tick is not None and event.tick < last_tick:
            problems.append(f"tick went backwards at msg {event.msg_id}")
        last_tick = event.tick
        if event.kind == EventKind.SEND:
            send_ticks[event.msg_id] = event.tick
        elif event.kind == EventKind.DELIVER:
            if event.msg_id not in send_ticks:
                problems.append(f"deliver without send for msg {event.msg_id}")
            elif event.tick <= send_ticks[event.msg_id]:
                problems.append(f"deliver not after send for msg {event.msg_id}")
    return problems
