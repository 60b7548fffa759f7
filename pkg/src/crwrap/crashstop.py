"""Asynchronous crash-stop model: steps, run validation, a fair scheduler.

In-flight messages are triples ``(receiver, sender, msg)``; a received message
in a label is ``(sender, msg)`` or ``BOTTOM``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from .model import BOTTOM, Run, pids
from .rng import DETECTOR, CounterRng


class CrashStopAlgorithm:
    """Base class for crash-stop algorithms ``(I, next/send, D, N_f)``.

    Subclasses implement :meth:`initial_states`, :meth:`next` and :meth:`send`;
    both step functions must be pure.
    """

    name = "abstract"

    def __init__(self, n: int, n_f: int):
        if n < 1:
            raise ValueError("need at least one process")
        if not 0 <= n_f < n:
            raise ValueError(f"resilience N_f={n_f} must satisfy 0 <= N_f < N={n}")
        self.n = n
        self.n_f = n_f
        self._initial = None

    @property
    def n_c(self) -> int:
        return self.n - self.n_f

    def initial_states(self) -> tuple:
        raise NotImplementedError

    def is_initial(self, s) -> bool:
        if self._initial is None:
            self._initial = frozenset(self.initial_states())
        return s in self._initial

    def next(self, state, rmsg, fdo: frozenset):
        raise NotImplementedError

    def send(self, state) -> dict:
        raise NotImplementedError

    def progress(self, state) -> int:
        """Round-like progress measure; 0 for algorithms without rounds."""
        return 0


@dataclass(frozen=True)
class CrashStopConfig:
    s: tuple
    M: frozenset = frozenset()
    F: frozenset = frozenset()


@dataclass(frozen=True)
class CrashStopLabel:
    p: int
    rmsg: Any = BOTTOM
    fails: frozenset = frozenset()
    fdo: frozenset = frozenset()


class StepViolation(Exception):
    KINDS = (
        "FailedProcessStepped",
        "MessageNotInFlight",
        "FailureSetShrank",
        "DuplicateMessage",
        "InitialStateNotAllowed",
        "ResilienceExceeded",
        "DetectorInconsistent",
        "SuccessorMismatch",
    )

    def __init__(self, kind: str, detail: str = ""):
        assert kind in self.KINDS, kind
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind}: {detail}" if detail else kind)


def cs_apply_step(c: CrashStopConfig, l: CrashStopLabel, alg: CrashStopAlgorithm) -> CrashStopConfig:
    """Successor of ``c`` under ``l``; raises :class:`StepViolation` on an illegal step."""
    p = l.p
    if p in c.F:
        raise StepViolation("FailedProcessStepped", f"process {p} is in F={sorted(c.F)}")
    M = c.M
    if l.rmsg is not BOTTOM:
        q, m = l.rmsg
        triple = (p, q, m)
        if triple not in M:
            raise StepViolation("MessageNotInFlight", f"({p}, {q}, {m!r})")
        M = M - {triple}
    if not c.F <= l.fails:
        raise StepViolation("FailureSetShrank", f"{sorted(c.F)} not within {sorted(l.fails)}")
    sp = alg.next(c.s[p - 1], l.rmsg, l.fdo)
    sent = {(q, p, m) for q, m in alg.send(sp).items()}
    dup = sent & M
    if dup:
        raise StepViolation("DuplicateMessage", repr(sorted(dup, key=repr)[0]))
    s = c.s[: p - 1] + (sp,) + c.s[p:]
    return CrashStopConfig(s, M | sent if sent else M, frozenset(l.fails))


@dataclass
class RunCheck:
    ok: bool
    index: int | None = None
    kind: str | None = None
    detail: str = ""

    def __bool__(self):
        return self.ok


def cs_run_valid(run: Run, alg: CrashStopAlgorithm, gst: int | None = None) -> RunCheck:
    """Check every run condition; report the first violation.

    ``gst`` pins the detector discipline: from step ``gst`` on, the label's
    ``fdo`` must equal the failed set.  ``None`` leaves the detector
    unconstrained (any finite prefix is allowed by an unreliable detector).
    Configuration-level violations are indexed by configuration, step-level
    ones by label.
    """
    c0 = run.configs[0]
    if not alg.is_initial(c0.s):
        return RunCheck(False, 0, "InitialStateNotAllowed")
    sent_ever = set(c0.M)
    for i, c in enumerate(run.configs):
        if len(c.F) > alg.n_f:
            return RunCheck(False, i, "ResilienceExceeded", f"|F|={len(c.F)} > N_f={alg.n_f}")
    for i, (c, l, c2) in enumerate(run.steps()):
        try:
            nxt = cs_apply_step(c, l, alg)
        except StepViolation as v:
            return RunCheck(False, i, v.kind, v.detail)
        fresh = nxt.M - c.M
        again = fresh & sent_ever
        if again:
            return RunCheck(False, i, "DuplicateMessage", f"resent {sorted(again, key=repr)[0]!r}")
        sent_ever |= fresh
        if nxt != c2:
            return RunCheck(False, i, "SuccessorMismatch", "recorded configuration differs from the step result")
        if gst is not None and i >= gst and l.fdo != c.F:
            return RunCheck(False, i, "DetectorInconsistent", f"fdo={sorted(l.fdo)} but F={sorted(c.F)} after gst")
    return RunCheck(True)


@dataclass
class FdEmulator:
    """Arbitrary (seeded) output before ``gst``, the true failed set from then on."""

    n: int
    gst: int = 0
    seed: int = 0
    mode: str = "arbitrary-then-perfect"

    def __post_init__(self):
        self._rng = CounterRng(self.seed)

    def output(self, step: int, c: CrashStopConfig) -> frozenset:
        if step >= self.gst:
            return c.F
        u = self._rng.block(step, DETECTOR, self.n)
        return frozenset(p for p in pids(self.n) if u[p - 1] < 0.5)


class FairScheduler:
    """Round-robin over live processes, oldest in-flight message first."""

    def __init__(self, alg: CrashStopAlgorithm, fd: FdEmulator | None = None, crash_plan: Iterable = ()):
        self.alg = alg
        self.fd = fd if fd is not None else FdEmulator(alg.n, gst=0)
        plan: dict[int, set] = {}
        for step, p in crash_plan:
            if p not in pids(alg.n):
                raise ValueError(f"crash plan names unknown process {p}")
            plan.setdefault(int(step), set()).add(p)
        if len(set().union(*plan.values()) if plan else ()) > alg.n_f:
            raise ValueError(f"crash plan fails more than N_f={alg.n_f} processes")
        self.plan = plan
        self.pointer = 1
        self._age: dict = {}
        self._tick = itertools.count()

    def resume(self, run: Run) -> None:
        """Adopt the in-flight ages and round-robin position left by ``run``."""
        for i, (c, l, c2) in enumerate(run.steps()):
            for t in sorted(c2.M - c.M, key=repr):
                self._age[t] = (i, next(self._tick))
            self.pointer = l.p % self.alg.n + 1
        for t in sorted(run.configs[0].M, key=repr):
            self._age.setdefault(t, (-1, next(self._tick)))

    def pick(self, c: CrashStopConfig) -> int | None:
        n = self.alg.n
        for k in range(n):
            p = (self.pointer - 1 + k) % n + 1
            if p not in c.F:
                return p
        return None

    def step(self, i: int, c: CrashStopConfig) -> tuple[CrashStopLabel, CrashStopConfig] | None:
        p = self.pick(c)
        if p is None:
            return None
        mine = [t for t in c.M if t[0] == p]
        rmsg = BOTTOM
        if mine:
            oldest = min(mine, key=lambda t: self._age.get(t, (-1, -1)))
            rmsg = (oldest[1], oldest[2])
        fails = c.F | self.plan.get(i, set())
        label = CrashStopLabel(p, rmsg, frozenset(fails), self.fd.output(i, c))
        c2 = cs_apply_step(c, label, self.alg)
        if rmsg is not BOTTOM:
            self._age.pop((p,) + rmsg, None)
        for t in sorted(c2.M - c.M, key=repr):
            self._age[t] = (i, next(self._tick))
        self.pointer = p % self.alg.n + 1
        return label, c2

    def extend(self, run: Run, steps: int, start: int | None = None) -> Run:
        configs, labels = list(run.configs), list(run.labels)
        i0 = len(labels) if start is None else start
        for i in range(i0, i0 + steps):
            out = self.step(i, configs[-1])
            if out is None:
                break
            labels.append(out[0])
            configs.append(out[1])
        return Run(configs, labels)


def cs_fair_scheduler(
    alg: CrashStopAlgorithm,
    seed: int,
    horizon: int,
    crash_plan: Sequence = (),
    gst: int = 0,
    initial: tuple | None = None,
) -> Run:
    """A reliable-links run of at most ``horizon`` steps.

    The initial state is ``initial`` or the seed-th entry of ``alg.initial_states()``
    (modulo its size).  ``seed`` also drives the detector's output before ``gst``.
    """
    if initial is None:
        states = alg.initial_states()
        initial = states[seed % len(states)]
    sched = FairScheduler(alg, FdEmulator(alg.n, gst=gst, seed=seed), crash_plan)
    return sched.extend(Run([CrashStopConfig(tuple(initial))]), horizon)


def extend_reliable(run: Run, alg: CrashStopAlgorithm, extra_steps: int) -> Run:
    """Continue a valid finite run with fair, failure-free, truthful-detector steps."""
    check = cs_run_valid(run, alg)
    if not check:
        raise ValueError(f"cannot extend an invalid run: {check.kind} at {check.index}")
    if extra_steps == 0:
        return run
    sched = FairScheduler(alg, FdEmulator(alg.n, gst=0))
    sched.resume(run)
    return sched.extend(run, extra_steps)
