"""Per-port queue state and the four scheduling disciplines.

These classes back the pure-Python event loop and can also be driven
directly, one port at a time.  The compiled kernel mirrors the exact same
arithmetic so both backends produce bit-identical results.
"""
from __future__ import annotations

import math
from collections import deque

FIFO, SP, WFQ, DRR = 0, 1, 2, 3

# DRR quantum given to the heaviest queue of a port, in bits (1500 bytes).
DRR_QUANTUM = 12000.0


def drr_quanta(weights, base: float = DRR_QUANTUM) -> list[float]:
    """Quantum per queue, scaled so the largest weight receives ``base``."""
    top = max(weights)
    return [base * w / top for w in weights]


class QueueState:
    __slots__ = ("capacity", "weight", "quantum", "buffer", "deficit", "fresh", "last_tag",
                 "max_occupancy")

    def __init__(self, capacity: int, weight: float = 1.0, quantum: float = DRR_QUANTUM):
        self.capacity = capacity
        self.weight = weight
        self.quantum = quantum
        self.buffer: deque = deque()  # entries: (packet, size, tag)
        self.deficit = 0.0
        self.fresh = False  # quantum already granted on the current DRR visit
        self.last_tag = 0.0
        self.max_occupancy = 0


class PortState:
    """Queues of one output port plus the scheduler state of its link.

    ``rank_order`` lists local queue indices from highest to lowest priority.
    """

    def __init__(self, policy: int, queues: list[QueueState], rank_order: list[int] | None = None):
        self.policy = policy
        self.queues = queues
        self.rank_order = list(range(len(queues))) if rank_order is None else list(rank_order)
        self.backlog = 0
        self.busy = False
        self.vtime = 0.0
        self.ptr = 0

    def enqueue(self, qi: int, packet, size: float) -> bool:
        """Append a packet to queue ``qi``; ``False`` means it was dropped (buffer full)."""
        q = self.queues[qi]
        if len(q.buffer) >= q.capacity:
            return False
        tag = 0.0
        if self.policy == WFQ:
            tag = max(self.vtime, q.last_tag) + size / q.weight
            q.last_tag = tag
        q.buffer.append((packet, size, tag))
        self.backlog += 1
        if len(q.buffer) > q.max_occupancy:
            q.max_occupancy = len(q.buffer)
        return True

    def select_next(self) -> int | None:
        """Queue to serve next, or ``None`` when every queue is empty."""
        if self.backlog == 0:
            if self.policy == WFQ:
                self.vtime = 0.0
                for q in self.queues:
                    q.last_tag = 0.0
            return None
        if self.policy == FIFO:
            return 0
        if self.policy == SP:
            for qi in self.rank_order:
                if self.queues[qi].buffer:
                    return qi
        if self.policy == WFQ:
            best, best_tag = -1, math.inf
            for qi, q in enumerate(self.queues):
                if q.buffer and q.buffer[0][2] < best_tag:
                    best, best_tag = qi, q.buffer[0][2]
            self.vtime = best_tag
            return best
        return self._select_drr()

    def _select_drr(self) -> int:
        queues = self.queues
        k = len(queues)
        misses = 0
        while True:
            q = queues[self.ptr]
            if q.buffer:
                if not q.fresh:
                    q.deficit += q.quantum
                    q.fresh = True
                if q.buffer[0][1] <= q.deficit:
                    return self.ptr
                q.fresh = False
            else:
                q.deficit = 0.0
                q.fresh = False
            self.ptr = (self.ptr + 1) % k
            misses += 1
            if misses >= k:
                # A whole round granted nothing: jump over the idle rounds at once.
                rounds = math.inf
                for r in queues:
                    if r.buffer:
                        rounds = min(rounds, math.ceil((r.buffer[0][1] - r.deficit) / r.quantum))
                for r in queues:
                    if r.buffer:
                        r.deficit += (rounds - 1) * r.quantum
                misses = 0

    def dequeue(self, qi: int):
        """Remove the head of queue ``qi`` and return ``(packet, size)``."""
        q = self.queues[qi]
        packet, size, _ = q.buffer.popleft()
        self.backlog -= 1
        if self.policy == DRR:
            q.deficit -= size
            if not q.buffer:
                q.deficit = 0.0
                q.fresh = False
                self.ptr = (self.ptr + 1) % len(self.queues)
        return packet, size
