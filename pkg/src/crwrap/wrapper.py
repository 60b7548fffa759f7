"""Turn a crash-stop algorithm into a crash-recovery one.

Each wrapped process keeps its core state ``st``, one LIFO retransmission
buffer per peer (itself included) and the last payload received from every
peer (``acks``), which doubles as the acknowledgment piggybacked on outgoing
messages.  One crash-recovery step is simulated by *unfolding* it into N
crash-stop steps, one per sender.

Two additions to the bare construction:

* ``seen``: payloads already handed to the core per sender.  With LIFO
  buffers a message can be retransmitted after the receiver's ``acks`` entry
  has moved on to a later message; ``seen`` keeps delivery exactly-once.
* ``ann``: what the core sent at the moment it decided.  A decided process
  sends these announcements in place of its buffer heads, so a decision
  reaches peers even when an older backlog sits in the buffers.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .crashstop import CrashStopAlgorithm, CrashStopLabel
from .model import BOTTOM, CRConfig, pids


class Tag:
    """Named singleton outside every algorithm's message space."""

    _registry: dict = {}

    def __new__(cls, name: str):
        if name not in cls._registry:
            obj = super().__new__(cls)
            obj.name = name
            cls._registry[name] = obj
        return cls._registry[name]

    def __repr__(self):
        return self.name

    def __reduce__(self):
        return (Tag, (self.name,))


HEARTBEAT = Tag("HEARTBEAT")
NOACK = Tag("NOACK")


def is_payload(m) -> bool:
    return m is not BOTTOM and m is not HEARTBEAT and m is not NOACK


@dataclass(frozen=True)
class WrappedState:
    st: object
    buff: tuple  # buff[q - 1]: messages for q, head first
    acks: tuple  # acks[q - 1]: last payload received from q, or NOACK
    seen: tuple = ()  # seen[q - 1]: payloads from q already fed to the core
    ann: tuple = ()  # sorted (dest, msg) announced on deciding

    @classmethod
    def fresh(cls, st, n: int) -> "WrappedState":
        return cls(st, ((),) * n, (NOACK,) * n, (frozenset(),) * n, ())

    def head(self, q: int):
        b = self.buff[q - 1]
        return b[0] if b else HEARTBEAT


@dataclass
class UnfoldTrace:
    """``states[0], labels[0], states[1], ...``; ``sent[i]`` is what the core sent in step i."""

    states: list
    labels: list
    sent: list = field(default_factory=list)

    def alternating(self) -> list:
        out = [self.states[0]]
        for l, s in zip(self.labels, self.states[1:]):
            out += [l, s]
        return out

    def last(self) -> WrappedState:
        return self.states[-1]


def unfold(p: int, s: WrappedState, rmsgs: dict, alg: CrashStopAlgorithm) -> UnfoldTrace:
    n = alg.n
    fdo = frozenset(q for q in pids(n) if q not in rmsgs)
    st = s.st
    buff = list(s.buff)
    acks = list(s.acks)
    seen = list(s.seen) if s.seen else [frozenset()] * n
    ann = s.ann
    states, labels, sent_log = [s], [], []
    for q in pids(n):
        m, a = rmsgs.get(q, (BOTTOM, BOTTOM))
        genuine = is_payload(m)
        fresh = genuine and m != acks[q - 1] and m not in seen[q - 1]
        rmsg = (q, m) if fresh else BOTTOM
        st2 = alg.next(st, rmsg, fdo)
        if genuine:
            acks[q - 1] = m
        if fresh:
            seen[q - 1] = seen[q - 1] | {m}
        if is_payload(a) and buff[q - 1] and buff[q - 1][0] == a:
            buff[q - 1] = buff[q - 1][1:]
        sent = alg.send(st2)
        for dest in sorted(sent):
            buff[dest - 1] = (sent[dest],) + buff[dest - 1]
        if st.dec is BOTTOM and st2.dec is not BOTTOM:
            ann = tuple(sorted(sent.items()))
        st = st2
        labels.append(CrashStopLabel(p, rmsg, frozenset(), fdo))
        sent_log.append(sent)
        states.append(WrappedState(st, tuple(buff), tuple(acks), tuple(seen), ann))
    return UnfoldTrace(states, labels, sent_log)


def wrapped_next(p: int, s: WrappedState, rmsgs: dict, alg: CrashStopAlgorithm) -> WrappedState:
    return unfold(p, s, rmsgs, alg).last()


def wrapped_send(s: WrappedState, n: int) -> dict:
    announced = dict(s.ann) if s.st.dec is not BOTTOM else {}
    return {
        q: (announced[q] if q in announced else s.head(q), s.acks[q - 1])
        for q in pids(n)
    }


class WrappedAlgorithm:
    """The crash-recovery algorithm obtained from a crash-stop one."""

    def __init__(self, core: CrashStopAlgorithm):
        self.core = core
        self.n = core.n
        self.name = f"wrapped-{core.name}"

    def next(self, p: int, s: WrappedState, rmsgs: dict) -> WrappedState:
        return wrapped_next(p, s, rmsgs, self.core)

    def send(self, s: WrappedState) -> dict:
        return wrapped_send(s, self.n)

    def initial_configs(self, failure_sets=None) -> list:
        return wrapped_init(self.core, failure_sets)


def all_subsets(n: int) -> list:
    ps = list(pids(n))
    return [frozenset(c) for k in range(n + 1) for c in itertools.combinations(ps, k)]


def wrapped_init(alg: CrashStopAlgorithm, failure_sets=None) -> list:
    """One configuration per (core initial state, initial failed set); all failed sets by default."""
    sets = all_subsets(alg.n) if failure_sets is None else [frozenset(f) for f in failure_sets]
    return [
        CRConfig(0, tuple(WrappedState.fresh(x, alg.n) for x in g), F)
        for g in alg.initial_states()
        for F in sets
    ]


def in_flight_of(s: tuple) -> frozenset:
    """Crash-stop in-flight set matching a wrapped global state: buffered and not yet delivered."""
    return frozenset(
        (q, p, m)
        for p, wp in enumerate(s, start=1)
        for q in pids(len(s))
        for m in wp.buff[q - 1]
        if m not in s[q - 1].seen[p - 1]
    )


def in_flight_literal(s: tuple) -> frozenset:
    """The same set with only the last-ack test (no delivery history)."""
    return frozenset(
        (q, p, m)
        for p, wp in enumerate(s, start=1)
        for q in pids(len(s))
        for m in wp.buff[q - 1]
        if s[q - 1].acks[p - 1] != m
    )
