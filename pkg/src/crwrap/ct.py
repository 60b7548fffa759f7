"""Rotating-coordinator consensus with an eventually accurate failure detector.

Messages are *bundles*: tuples of parts, so a step emits at most one message
per destination even when it completes several protocol actions at once.
Parts are ``("est", r, value, ts)``, ``("prop", r, value)``, ``("ack", r)``,
``("nack", r)``, ``("abort", r)`` and ``("dec", value)``.

Each round has four phases.  Phase 1 is a resting point: the first step taken
in a round, whatever it receives, sends the estimate to the round's
coordinator.  The coordinator then collects a majority of estimates (phase 2),
everyone waits for the proposal or a suspicion of the coordinator (phase 3),
and phase 4 waits for the round's outcome.
"""

from __future__ import annotations

import dataclasses
import itertools
from dataclasses import dataclass
from typing import Any

from .crashstop import CrashStopAlgorithm
from .model import BOTTOM, CoreState, pids


@dataclass(frozen=True)
class CtState(CoreState):
    pid: int = 1
    round: int = 1
    phase: int = 1
    estimate: Any = BOTTOM
    ts: int = 0
    collected: frozenset = frozenset()  # (sender, estimate, ts) of this round
    replies: frozenset = frozenset()  # (sender, "ack" | "nack") of this round
    proposal: Any = BOTTOM
    aborted: bool = False
    stash: frozenset = frozenset()  # (sender, part) for later rounds
    outbox: tuple = ()  # sorted (dest, bundle) pairs produced by the last step

    def digest_fields(self) -> tuple:
        return (self.round, self.phase, self.estimate, self.ts, self.dec)


@dataclass(frozen=True)
class BoundConstants:
    B_s: int
    B_Delta: int
    B_adv: int
    phases: int = 4

    @property
    def B_slow(self) -> int:
        return self.B_s * self.B_Delta + 1

    def B_iter(self, n: int) -> int:
        return n * (self.B_Delta + self.B_adv)

    def B(self, n: int) -> int:
        """Stable-period length after which the fastest correct processes decide."""
        return self.B_slow * self.B_iter(n)


def coordinator(r: int, n: int) -> int:
    return (r - 1) % n + 1


def composite_round(s: CtState) -> int:
    return 4 * (s.round - 1) + s.phase


def round_of(part) -> int | None:
    """Round tag of a message part; ``None`` for decide parts and junk."""
    if isinstance(part, tuple) and part and part[0] in _ARITY and len(part) == _ARITY[part[0]]:
        return None if part[0] == "dec" else part[1]
    return None


_ARITY = {"est": 4, "prop": 3, "ack": 2, "nack": 2, "abort": 2, "dec": 2}


def _well_formed(part) -> bool:
    if not (isinstance(part, tuple) and part and part[0] in _ARITY and len(part) == _ARITY[part[0]]):
        return False
    if part[0] == "dec":
        return isinstance(part[1], int)
    if not isinstance(part[1], int) or part[1] < 1:
        return False
    if part[0] == "est":
        return isinstance(part[2], int) and isinstance(part[3], int)
    if part[0] == "prop":
        return isinstance(part[2], int)
    return True


def parts_of(msg) -> tuple:
    if not isinstance(msg, tuple):
        return ()
    return tuple(p for p in msg if _well_formed(p))


def is_decide(msg) -> bool:
    return any(p[0] == "dec" for p in parts_of(msg))


class _Step:
    """Mutable scratch copy of a CtState used while one step is computed."""

    def __init__(self, s: CtState, n: int):
        self.__dict__.update({f.name: getattr(s, f.name) for f in dataclasses.fields(s)})
        self.n = n
        self.out: dict[int, list] = {}

    @property
    def quorum(self) -> int:
        return self.n // 2 + 1

    @property
    def coord(self) -> int:
        return coordinator(self.round, self.n)

    def emit(self, dest, part):
        self.out.setdefault(dest, []).append(part)

    def freeze(self) -> CtState:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(CtState)}
        d["outbox"] = tuple(sorted((q, tuple(ps)) for q, ps in self.out.items()))
        return CtState(**d)

    def decide(self, v):
        self.dec = v
        self.out = {q: [("dec", v)] for q in pids(self.n) if q != self.pid}

    def advance(self):
        self.round += 1
        self.phase = 1
        self.collected = frozenset()
        self.replies = frozenset()
        self.proposal = BOTTOM
        self.aborted = False

    def start_round(self):
        self.emit(self.coord, ("est", self.round, self.estimate, self.ts))
        self.phase = 2 if self.coord == self.pid else 3
        mine = {(q, part) for q, part in self.stash if part[1] == self.round}
        self.stash = self.stash - mine
        for q, part in sorted(mine, key=repr):
            self.absorb(q, part)

    def absorb(self, q, part):
        r = part[1]
        if r < self.round:
            return
        if r > self.round or self.phase == 1:
            self.stash = self.stash | {(q, part)}
            return
        kind = part[0]
        if kind == "est":
            self.collected = self.collected | {(q, part[2], part[3])}
        elif kind == "prop" and q == self.coord and self.proposal is BOTTOM:
            self.proposal = part[2]
        elif kind in ("ack", "nack"):
            self.replies = self.replies | {(q, kind)}
        elif kind == "abort" and q == self.coord:
            self.aborted = True

    def settle(self, fdo):
        suspected = self.coord in fdo and self.coord != self.pid
        while self.dec is BOTTOM:
            if self.phase == 2:
                if len(self.collected) < self.quorum:
                    return
                # highest timestamp wins, lowest sender breaks ties
                _, v, _ = max(self.collected, key=lambda e: (e[2], -e[0]))
                for q in pids(self.n):
                    self.emit(q, ("prop", self.round, v))
                self.phase = 3
            elif self.phase == 3:
                if self.proposal is not BOTTOM:
                    self.estimate, self.ts = self.proposal, self.round
                    self.emit(self.coord, ("ack", self.round))
                    self.phase = 4
                elif suspected:
                    self.emit(self.coord, ("nack", self.round))
                    self.advance()
                    return
                else:
                    return
            elif self.phase == 4 and self.coord == self.pid:
                if len(self.replies) < self.quorum:
                    return
                if sum(1 for _, k in self.replies if k == "ack") >= self.quorum:
                    self.decide(self.estimate)
                    return
                for q in pids(self.n):
                    if q != self.pid:
                        self.emit(q, ("abort", self.round))
                self.advance()
                return
            elif self.phase == 4:
                if self.aborted or suspected:
                    self.advance()
                return
            else:
                return


class ChandraToueg(CrashStopAlgorithm):
    name = "ct"

    def __init__(self, n: int, n_f: int | None = None, values=range(3)):
        super().__init__(n, (n - 1) // 2 if n_f is None else n_f)
        if 2 * self.n_f >= n:
            raise ValueError("rotating-coordinator consensus needs a majority of correct processes")
        self.values = tuple(values)

    def bounds(self) -> BoundConstants:
        return ct_bounds(self.n)

    def initial_state(self, p: int, v) -> CtState:
        return CtState(inp=v, pid=p, estimate=v)

    def initial_states(self) -> tuple:
        return tuple(
            tuple(self.initial_state(p, v) for p, v in zip(pids(self.n), combo))
            for combo in itertools.product(self.values, repeat=self.n)
        )

    def is_initial(self, s) -> bool:
        return (
            isinstance(s, tuple)
            and len(s) == self.n
            and all(isinstance(x, CtState) and x.inp in self.values and x == self.initial_state(p, x.inp)
                    for p, x in zip(pids(self.n), s))
        )

    def next(self, s: CtState, rmsg, fdo) -> CtState:
        return ct_next(s, rmsg, fdo, self.n)

    def send(self, s: CtState) -> dict:
        return ct_send(s)

    def progress(self, s: CtState) -> int:
        return composite_round(s)


def ct_bounds(n: int) -> BoundConstants:
    return BoundConstants(B_s=1, B_Delta=4 * n, B_adv=4 * (n // 2))


def ct_next(s: CtState, rmsg, fdo, n: int) -> CtState:
    if s.dec is not BOTTOM:
        return s if not s.outbox else dataclasses.replace(s, outbox=())
    parts = () if rmsg is BOTTOM else parts_of(rmsg[1])
    sender = None if rmsg is BOTTOM else rmsg[0]
    st = _Step(s, n)
    st.outbox = ()
    for part in parts:
        if part[0] == "dec":
            st.decide(part[1])
            return st.freeze()
    if st.phase == 1:
        st.start_round()
    for part in parts:
        st.absorb(sender, part)
    st.settle(frozenset(fdo))
    return st.freeze()


def ct_send(s: CtState) -> dict:
    return dict(s.outbox)


def locked_estimates(g: tuple) -> bool:
    """Every decided value is the estimate of a majority of processes."""
    n = len(g)
    decided = {x.dec for x in g if x.dec is not BOTTOM}
    return all(sum(1 for x in g if x.estimate == v) > n // 2 for v in decided)
