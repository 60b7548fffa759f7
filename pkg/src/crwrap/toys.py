"""Small crash-stop algorithms used as fixtures and in enumeration mode."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace

from .crashstop import CrashStopAlgorithm
from .model import BOTTOM, CoreState, pids


class NullAlgorithm(CrashStopAlgorithm):
    """Never changes state, never sends; one initial state."""

    name = "null"

    def __init__(self, n: int, n_f: int = 0):
        super().__init__(n, n_f)

    def initial_states(self) -> tuple:
        return (tuple(CoreState(inp=0) for _ in pids(self.n)),)

    def next(self, state, rmsg, fdo):
        return state

    def send(self, state) -> dict:
        return {}


@dataclass(frozen=True)
class PollState(CoreState):
    pid: int = 1
    announced: bool = False
    heard: frozenset = frozenset()  # (sender, input)
    outbox: tuple = ()


class MajorityMin(CrashStopAlgorithm):
    """Broadcast the input once, decide the minimum input heard from a majority.

    Deliberately unsafe: two processes that hear different majorities may
    decide differently.  Useful to exercise violation reporting.
    """

    name = "majority-min"

    def __init__(self, n: int, n_f: int | None = None, values=(0, 1)):
        super().__init__(n, (n - 1) // 2 if n_f is None else n_f)
        self.values = tuple(values)

    def initial_states(self) -> tuple:
        return tuple(
            tuple(PollState(inp=v, pid=p) for p, v in zip(pids(self.n), combo))
            for combo in itertools.product(self.values, repeat=self.n)
        )

    def next(self, s: PollState, rmsg, fdo):
        out = ()
        heard = s.heard
        if not s.announced:
            out = tuple((q, ("in", s.pid, s.inp)) for q in pids(self.n))
        if rmsg is not BOTTOM:
            _, m = rmsg
            if isinstance(m, tuple) and len(m) == 3 and m[0] == "in":
                heard = heard | {(m[1], m[2])}
        dec = s.dec
        if dec is BOTTOM and len(heard) > self.n // 2:
            dec = min(v for _, v in heard)
        return replace(s, announced=True, heard=heard, dec=dec, outbox=out)

    def send(self, s: PollState) -> dict:
        return dict(s.outbox)
