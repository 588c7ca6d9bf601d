"""Event records and the FIFO observer dispatcher."""
from __future__ import annotations

import itertools
import logging
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable

logger = logging.getLogger(__name__)

__all__ = ["EVENT_KINDS", "CUSTOM_KINDS", "Event", "EventDispatcher", "post_event", "dispatch_pending"]

CUSTOM_KINDS = ("custom-1", "custom-2", "custom-3", "custom-4")
# mouse/key exist for completeness; nothing produces them in a headless run
EVENT_KINDS = ("physics-update", "visual-update", "mouse", "key", "simulation-start", "simulation-stop",
               "error") + CUSTOM_KINDS


@dataclass(frozen=True)
class Event:
    kind: str
    timestamp: float = 0.0
    payload: Any = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {self.kind!r}; custom events are {', '.join(CUSTOM_KINDS)}")


class EventDispatcher:
    """Thread-safe FIFO queue with per-kind observers.

    ``post`` may be called from any thread.  ``dispatch_pending`` delivers
    the events queued when it starts; each event goes to the observers
    attached at the moment that event is delivered, so an observer added
    from inside a callback only sees later events.
    """

    def __init__(self):
        self._queue = deque()
        self._observers = {k: [] for k in EVENT_KINDS}
        self._lock = threading.Lock()
        self._wake = threading.Condition(self._lock)
        self._ids = itertools.count()
        self.failures = 0
        self.delivered = 0

    def attach(self, kind: str, callback: Callable[[Event], None]) -> int:
        if kind not in self._observers:
            raise ValueError(f"unknown event kind {kind!r}")
        handle = next(self._ids)
        with self._lock:
            self._observers[kind] = self._observers[kind] + [(handle, callback)]
        return handle

    def detach(self, handle: int):
        with self._lock:
            for kind, obs in self._observers.items():
                self._observers[kind] = [o for o in obs if o[0] != handle]

    def post(self, event: Event):
        with self._wake:
            self._queue.append(event)
            self._wake.notify()

    def pending(self) -> int:
        with self._lock:
            return len(self._queue)

    def dispatch_pending(self) -> int:
        """Deliver everything queued so far; returns the number of events dispatched."""
        with self._lock:
            n = len(self._queue)
        for _ in range(n):
            with self._lock:
                event = self._queue.popleft()
                observers = self._observers[event.kind]  # replaced on attach, never mutated
            for _, cb in observers:
                try:
                    cb(event)
                except Exception:  # noqa: BLE001 - observers must not break dispatch
                    self.failures += 1
                    logger.exception("observer failed on %s event", event.kind)
                self.delivered += 1
        return n

    def run(self, stop: threading.Event, poll: float = 0.05):
        """Dispatcher task: drain the queue until ``stop`` is set, then drain once more."""
        while not stop.is_set():
            with self._wake:
                if not self._queue:
                    self._wake.wait(poll)
            self.dispatch_pending()
        self.dispatch_pending()


def post_event(dispatcher: EventDispatcher, event: Event):
    dispatcher.post(event)


def dispatch_pending(dispatcher: EventDispatcher) -> int:
    return dispatcher.dispatch_pending()
