"""Consistency checkers over client-visible histories.

Both checkers only use what clients can observe: invocation and response
times plus the values written and returned. Written values are assumed to be
unique per object, so a read's value identifies the write it observed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .history import NOT_FOUND, OK, READ, UNAVAILABLE, WRITE, HistoryEntry, MalformedHistoryError, OpHistory

DEFAULT_EXHAUSTIVE_BOUND = 8


class HistoryTooLargeError(ValueError):
    pass


@dataclass(frozen=True)
class StalenessViolation:
    read: HistoryEntry
    write: HistoryEntry
    observed: HistoryEntry | None
    reason: str

    def to_json(self) -> dict:
        return {"reason": self.reason, "read": self.read.to_json(), "write": self.write.to_json(),
                "observed": None if self.observed is None else self.observed.to_json()}


def _certainly_before(a: HistoryEntry, b: HistoryEntry, epsilon: int) -> bool:
    """True when a's GPS stamp is provably lower than b's.

    A write is stamped at some instant of [invoke, respond] by a clock that is
    off by at most epsilon, so its stamp lies in [invoke - eps, respond + eps].
    Unacknowledged writes have no upper bound.
    """
    if a.status == UNAVAILABLE:
        return False
    return a.respond_us + epsilon < b.invoke_us - epsilon


def check_staleness(h: OpHistory, epsilon: int) -> list[StalenessViolation]:
    """Reads that started more than ``epsilon`` after a write completed but observed an older version."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    OpHistory(h).validate()
    violations = []
    for obj, entries in sorted(OpHistory(h).by_object().items(), key=lambda kv: (str(kv[0][0]), kv[0][1])):
        writes = [e for e in entries if e.op == WRITE]
        by_value: dict[str, list[HistoryEntry]] = {}
        for w in writes:
            by_value.setdefault(w.value, []).append(w)
        done = sorted((w for w in writes if w.status == OK), key=lambda w: (w.respond_us, w.client))
        reads = sorted((e for e in entries if e.op == READ and e.status in (OK, NOT_FOUND)),
                       key=lambda e: (e.invoke_us, e.client))
        for r in reads:
            observed = by_value.get(r.returned, []) if r.returned is not None else []
            if r.returned is not None and not observed:
                violations.append(StalenessViolation(r, r, None, "read returned a value nobody wrote"))
                continue
            for w in done:
                if not r.invoke_us > w.respond_us + epsilon:
                    break
                if w in observed:
                    continue
                if all(_certainly_before(o, w, epsilon) for o in observed):
                    reason = "not found after completed write" if not observed else "stale value"
                    violations.append(StalenessViolation(r, w, observed[0] if observed else None, reason))
    return violations


@dataclass
class LinearizabilityResult:
    linearizable: bool
    order: list[int] | None = None
    witness: dict | None = None

    def __bool__(self) -> bool:
        return self.linearizable


@dataclass(frozen=True)
class _Op:
    idx: int
    invoke: int
    respond: float
    kind: str
    value: str | None
    optional: bool


def _object_ops(entries: list[tuple[int, HistoryEntry]]) -> list[_Op]:
    ops = []
    for idx, e in entries:
        if e.op == READ:
            if e.status == UNAVAILABLE:
                continue
            ops.append(_Op(idx, e.invoke_us, e.respond_us, READ, e.returned, False))
        else:
            pending = e.status == UNAVAILABLE
            ops.append(_Op(idx, e.invoke_us, math.inf if pending else e.respond_us, WRITE, e.value, pending))
    return ops


def _search(ops: list[_Op]) -> tuple[list[int] | None, list[int]]:
    """Depth-first search for a legal sequential order of one register's ops.

    An op may go next only if no unplaced op responded before it was invoked.
    Memoises on (placed set, register value). Returns (order, longest prefix).
    """
    n = len(ops)
    required = 0
    for i, o in enumerate(ops):
        if not o.optional:
            required |= 1 << i
    dead: set[tuple[int, str | None]] = set()
    best: list[int] = []
    order: list[int] = []

    def rec(placed: int, value: str | None) -> bool:
        nonlocal best
        if placed & required == required:
            return True
        if (placed, value) in dead:
            return False
        horizon = min(ops[i].respond for i in range(n) if not placed >> i & 1)
        for i in range(n):
            if placed >> i & 1:
                continue
            o = ops[i]
            if o.invoke > horizon:
                continue
            if o.kind == READ:
                if o.value != value:
                    continue
                nxt = value
            else:
                nxt = o.value
            order.append(o.idx)
            if len(order) > len(best):
                best = list(order)
            if rec(placed | 1 << i, nxt):
                return True
            order.pop()
        dead.add((placed, value))
        return False

    if rec(0, None):
        return list(order), list(order)
    return None, best


def check_linearizable(h: OpHistory, bound: int = DEFAULT_EXHAUSTIVE_BOUND) -> LinearizabilityResult:
    """Exhaustive linearizability check for read/write registers.

    Registers are checked one object at a time (linearizability is local).
    The initial value of every register is "not found". Unacknowledged
    writes may or may not have taken effect.
    """
    h = OpHistory(h)
    if len(h) > bound:
        raise HistoryTooLargeError(f"history has {len(h)} operations; exhaustive bound is {bound}")
    h.validate()
    indexed: dict[tuple, list[tuple[int, HistoryEntry]]] = {}
    for i, e in enumerate(h):
        indexed.setdefault(e.object_id, []).append((i, e))
    order: list[int] = []
    for obj in sorted(indexed, key=lambda o: (str(o[0]), o[1])):
        ops = _object_ops(indexed[obj])
        found, prefix = _search(ops)
        if found is None:
            placed = set(prefix)
            return LinearizabilityResult(False, None, {
                "object": {"region": obj[0], "key": obj[1]},
                "longest_legal_prefix": prefix,
                "unplaceable": [o.idx for o in ops if o.idx not in placed],
                "constraints": _constraints(ops),
            })
        order.extend(found)
    return LinearizabilityResult(True, order, None)


def _constraints(ops: list[_Op]) -> dict:
    precedes = [[a.idx, b.idx] for a in ops for b in ops if a is not b and a.respond < b.invoke]
    reads_from = {}
    for r in ops:
        if r.kind == READ:
            reads_from[r.idx] = [w.idx for w in ops if w.kind == WRITE and w.value == r.value]
    return {"real_time_precedes": precedes, "reads_from": reads_from}


__all__ = ["StalenessViolation", "LinearizabilityResult", "HistoryTooLargeError", "MalformedHistoryError",
           "check_staleness", "check_linearizable", "DEFAULT_EXHAUSTIVE_BOUND"]
