"""Checkers: consensus safety on traces, superword certificates, detour
instances, bounded-algorithm properties and termination statistics.

Trace indices in every report are 0-based positions in the trace.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

from .crashstop import CrashStopAlgorithm, CrashStopConfig, CrashStopLabel, cs_run_valid
from .model import BOTTOM, CRConfig, Run, is_subword, pids, subword_embedding, trace_of_cr_run
from .wrapper import in_flight_literal, in_flight_of, unfold

SAFETY = ("validity", "integrity", "agreement")


@dataclass(frozen=True)
class Violation:
    property: str
    indices: tuple
    values: tuple

    def record(self, run_seed=None) -> dict:
        return {
            "property": self.property,
            "indices": list(self.indices),
            "values": [None if v is BOTTOM else v for v in self.values],
            "run_seed": run_seed,
        }


def check_validity(trace: Sequence) -> Violation | None:
    inputs = {x.inp for x in trace[0]}
    for i, letter in enumerate(trace):
        for p, x in enumerate(letter, start=1):
            if x.dec is not BOTTOM and x.dec not in inputs:
                return Violation("validity", (i, p), (x.dec,))
    return None


def check_integrity(trace: Sequence) -> Violation | None:
    first: dict = {}
    for i, letter in enumerate(trace):
        for p, x in enumerate(letter, start=1):
            if p in first:
                i0, v = first[p]
                if x.dec != v:
                    return Violation("integrity", (i0, p, i), (v, x.dec))
            elif x.dec is not BOTTOM:
                first[p] = (i, x.dec)
    return None


def check_agreement(trace: Sequence) -> Violation | None:
    witness = None
    for i, letter in enumerate(trace):
        for p, x in enumerate(letter, start=1):
            if x.dec is BOTTOM:
                continue
            if witness is None:
                witness = (i, p, x.dec)
            elif x.dec != witness[2]:
                return Violation("agreement", (witness[0], witness[1], i, p), (witness[2], x.dec))
    return None


def check_state_invariant(trace: Sequence, good: Callable) -> Violation | None:
    for i, letter in enumerate(trace):
        if not good(letter):
            return Violation("invariant", (i,), ())
    return None


CHECKERS = {
    "validity": check_validity,
    "integrity": check_integrity,
    "agreement": check_agreement,
}


def check_safety(trace: Sequence, checks: Iterable[str] = SAFETY) -> list:
    out = []
    for name in checks:
        v = CHECKERS[name](trace)
        if v is not None:
            out.append(v)
    return out


class SafetyMonitor:
    """Incremental form of the three safety checkers; reports the same first witnesses."""

    def __init__(self, checks: Iterable[str] = SAFETY):
        self.checks = tuple(checks)
        self.index = -1
        self.inputs = None
        self.first: dict = {}
        self.witness = None
        self.found: dict = {}

    def feed(self, letter) -> None:
        self.index += 1
        i = self.index
        if self.inputs is None:
            self.inputs = {x.inp for x in letter}
        for p, x in enumerate(letter, start=1):
            d = x.dec
            if "validity" not in self.found and d is not BOTTOM and d not in self.inputs:
                self.found["validity"] = Violation("validity", (i, p), (d,))
            if "integrity" not in self.found:
                if p in self.first:
                    i0, v = self.first[p]
                    if d != v:
                        self.found["integrity"] = Violation("integrity", (i0, p, i), (v, d))
                elif d is not BOTTOM:
                    self.first[p] = (i, d)
            if "agreement" not in self.found and d is not BOTTOM:
                if self.witness is None:
                    self.witness = (i, p, d)
                elif d != self.witness[2]:
                    w = self.witness
                    self.found["agreement"] = Violation("agreement", (w[0], w[1], i, p), (w[2], d))

    def violations(self) -> list:
        return [self.found[k] for k in self.checks if k in self.found]


# ---------------------------------------------------------------------------
# superword reconstruction


@dataclass
class SuperwordCertificate:
    cs_run: Run
    embedding: list | None
    p1: bool
    p2: bool
    p3: bool
    cs_valid: bool
    p3_literal: bool = True
    diff: list = field(default_factory=list)
    stutter_gaps: list = field(default_factory=list)  # all-down steps with no identity step available
    p1_destuttered: bool = True

    @property
    def ok(self) -> bool:
        return self.p1 and self.p2 and self.p3 and self.cs_valid

    def record(self) -> dict:
        return {
            "ok": self.ok,
            "P1": self.p1,
            "P2": self.p2,
            "P3": self.p3,
            "cs_run_valid": self.cs_valid,
            "P3_last_ack_only": self.p3_literal,
            "P1_destuttered": self.p1_destuttered,
            "stutter_gaps": self.stutter_gaps,
            "embedding": self.embedding,
            "cs_steps": len(self.cs_run.labels),
            "diff": self.diff,
        }


def _stutter(cfg: CrashStopConfig, alg: CrashStopAlgorithm):
    for p in pids(alg.n):
        x = cfg.s[p - 1]
        for fdo in (frozenset(), frozenset(pids(alg.n))):
            if alg.next(x, BOTTOM, fdo) == x and not alg.send(x):
                return CrashStopLabel(p, BOTTOM, frozenset(), fdo)
    return None


def reconstruct_superword(cr_run: Run, alg: CrashStopAlgorithm) -> SuperwordCertificate:
    """Build the failure-free crash-stop run whose trace contains the wrapped run's trace.

    Each crash-recovery step contributes, for every process up at its start
    (ascending), the crash-stop steps of that process's unfolding.  A step in
    which every process is down contributes one stuttering step when some
    process admits one; otherwise the step is listed in ``stutter_gaps`` and
    strict P1 fails.
    """
    diff = []
    gaps = []
    c0 = cr_run.configs[0]
    cfg = CrashStopConfig(tuple(w.st for w in c0.s), frozenset(), frozenset())
    configs, labels = [cfg], []
    anchors = [0]
    for k, (c, l, c2) in enumerate(cr_run.steps()):
        live = [p for p in pids(alg.n) if p not in c.F]
        for p in live:
            ut = unfold(p, c.s[p - 1], l.row(p), alg)
            if ut.last() != c2.s[p - 1]:
                diff.append(f"step {k}: unfolding of process {p} disagrees with the recorded state")
            for j, lab in enumerate(ut.labels):
                M = cfg.M
                if lab.rmsg is not BOTTOM:
                    M = M - {(p, lab.rmsg[0], lab.rmsg[1])}
                # messages come from send of the new state
                M = M | {(q, p, m) for q, m in ut.sent[j].items()}
                s = cfg.s[: p - 1] + (ut.states[j + 1].st,) + cfg.s[p:]
                cfg = CrashStopConfig(s, frozenset(M), frozenset())
                configs.append(cfg)
                labels.append(lab)
        if not live:
            lab = _stutter(cfg, alg)
            if lab is not None:
                configs.append(cfg)
                labels.append(lab)
            else:
                gaps.append(k)
                diff.append(f"step {k}: every process is down and no process has an identity step")
        anchors.append(len(configs) - 1)
    rho = Run(configs, labels)
    tr_cr = trace_of_cr_run(cr_run)
    tr_cs = [c.s for c in configs]

    embedding = anchors
    if any(a >= b for a, b in zip(anchors, anchors[1:])) or any(tr_cs[j] != x for j, x in zip(anchors, tr_cr)):
        embedding = _anchored_embedding(tr_cr, tr_cs)
    elif anchors[-1] != len(configs) - 1:
        embedding = None
    p1 = embedding is not None
    if not p1:
        diff.append("P1: crash-recovery trace does not embed with matching first and last letters")
    p2 = all(not c.F for c in configs) and all(not lab.fails for lab in labels)
    if not p2:
        diff.append("P2: a failure occurs in the crash-stop run")
    want = in_flight_of(cr_run.last().s)
    p3 = configs[-1].M == want
    if not p3:
        extra = sorted(configs[-1].M - want, key=repr)[:3]
        missing = sorted(want - configs[-1].M, key=repr)[:3]
        diff.append(f"P3: in flight but not buffered {extra}; buffered but not in flight {missing}")
    check = cs_run_valid(rho, alg)
    if not check:
        diff.append(f"cs_run_valid: {check.kind} at {check.index} {check.detail}")
    collapsed = [x for i, x in enumerate(tr_cr) if i == 0 or x != tr_cr[i - 1]]
    return SuperwordCertificate(
        rho, embedding, p1, p2, p3, check.ok,
        p3_literal=configs[-1].M == in_flight_literal(cr_run.last().s),
        diff=diff,
        stutter_gaps=gaps,
        p1_destuttered=p1 or _anchored_embedding(collapsed, tr_cs) is not None,
    )


def _anchored_embedding(u: Sequence, v: Sequence) -> list | None:
    if not u or not v or u[0] != v[0] or u[-1] != v[-1]:
        return None
    if len(u) == 1:
        return [0]
    mid = subword_embedding(u[1:-1], v[1:-1])
    if mid is None:
        return None
    return [0] + [j + 1 for j in mid] + [len(v) - 1]


def certificate_double_check(cert: SuperwordCertificate, cr_run: Run, alg: CrashStopAlgorithm) -> bool:
    """Re-derive the certificate's claims from the model and engine primitives alone."""
    tr_cr = trace_of_cr_run(cr_run)
    tr_cs = [c.s for c in cert.cs_run.configs]
    emb = cert.embedding
    monotone = emb is not None and all(a < b for a, b in zip(emb, emb[1:]))
    mapped = emb is not None and all(tr_cs[j] == tr_cr[i] for i, j in enumerate(emb))
    ends = emb is not None and emb[0] == 0 and emb[-1] == len(tr_cs) - 1
    return (
        monotone and mapped and ends
        and is_subword(tr_cr, tr_cs)
        and bool(cs_run_valid(cert.cs_run, alg))
        and cert.cs_run.last().M == in_flight_of(cr_run.last().s)
    )


# ---------------------------------------------------------------------------
# detour instances


class DetourPrecondition(ValueError):
    pass


def check_detour_instance(u: Sequence, w: Sequence, prop: str) -> Violation | None:
    """Confirm that the superword ``w`` of a violating ``u`` still violates ``prop``.

    Returns ``None`` when it does; otherwise a counterexample record.
    """
    if prop not in CHECKERS:
        raise ValueError(f"detour check only covers {SAFETY}")
    checker = CHECKERS[prop]
    if not u or not w:
        raise DetourPrecondition("empty word")
    if checker(u) is None:
        raise DetourPrecondition("u does not violate the property")
    if u[0] != w[0]:
        raise DetourPrecondition("u and w start differently")
    if not is_subword(u, w):
        raise DetourPrecondition("u is not a subword of w")
    if checker(w) is not None:
        return None
    return Violation(f"{prop}-repaired", (len(u), len(w)), ())


def one_changes(trace: Sequence) -> Violation | None:
    """At most one process changes its local state between consecutive letters."""
    for i in range(1, len(trace)):
        changed = [p for p, (a, b) in enumerate(zip(trace[i - 1], trace[i]), start=1) if a != b]
        if len(changed) > 1:
            return Violation("one-changes", (i,), tuple(changed))
    return None


# ---------------------------------------------------------------------------
# bounded-algorithm properties


@dataclass
class BoundReport:
    applicable: bool = True
    b3_max: int = 0
    b3_ok: bool = True
    b4_max_gap: int = 0
    b4_ok: bool = True
    b5: str = "n/a"  # "ok", "violated", "pending", "n/a"
    b5_detail: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)

    def record(self) -> dict:
        return dict(self.__dict__)


def fastest(states: Sequence, k: int, progress: Callable, undecided_only: bool = False) -> list:
    """The ``k`` fastest processes by (progress desc, pid asc)."""
    cand = [p for p, x in enumerate(states, start=1) if not undecided_only or x.dec is BOTTOM]
    cand.sort(key=lambda p: (-progress(states[p - 1]), p))
    return cand[:k]


def round_gap(states: Sequence, k: int, progress: Callable) -> int:
    chosen = fastest(states, k, progress)
    if not chosen:
        return 0
    vals = [progress(states[p - 1]) for p in chosen]
    return max(vals) - min(vals)


class BoundsMonitor:
    """Tracks B3 (messages per round and channel) and B4 (round gap) online."""

    def __init__(self, alg: CrashStopAlgorithm, consts, messages: bool = True):
        self.alg = alg
        self.consts = consts
        self.messages = messages
        self.counts: dict = {}
        self.b3_max = 0
        self.b4_max_gap = 0

    def config(self, states: Sequence) -> None:
        g = round_gap(states, self.alg.n_c, self.alg.progress)
        if g > self.b4_max_gap:
            self.b4_max_gap = g

    def sent(self, p: int, pre_state, msgs: dict) -> None:
        r = self.alg.progress(pre_state)
        for q in msgs:
            key = (p, q, r)
            c = self.counts.get(key, 0) + 1
            self.counts[key] = c
            if c > self.b3_max:
                self.b3_max = c

    def cr_step(self, i, c: CRConfig, l, c2: CRConfig) -> None:
        if self.messages:
            for p in pids(self.alg.n):
                if p in c.F:
                    continue
                ut = unfold(p, c.s[p - 1], l.row(p), self.alg)
                for j, msgs in enumerate(ut.sent):
                    self.sent(p, ut.states[j].st, msgs)
        self.config(tuple(w.st for w in c2.s))

    def report(self) -> BoundReport:
        k = self.consts
        return BoundReport(
            b3_max=self.b3_max,
            b3_ok=self.b3_max <= k.B_s,
            b4_max_gap=self.b4_max_gap,
            b4_ok=self.b4_max_gap <= k.B_Delta,
            constants={"B_s": k.B_s, "B_Delta": k.B_Delta, "B_adv": k.B_adv},
        )


def check_b5(run: Run, alg: CrashStopAlgorithm, consts, gst: int = 0) -> tuple[str, dict]:
    """Bounded termination on a crash-stop run.

    From the first configuration at or after ``gst`` whose fastest N_c
    processes never fail while all others have already failed, those
    processes must all decide before any of them reaches ``r_max + B_adv``.
    """
    final_F = run.last().F
    prog = alg.progress
    for i in range(gst, len(run.configs)):
        c = run.configs[i]
        S = fastest(c.s, alg.n_c, prog, undecided_only=False)
        others = set(pids(alg.n)) - set(S)
        if set(S) & final_F or not others <= c.F:
            continue
        r_max = max(prog(x) for x in c.s)
        limit = r_max + consts.B_adv
        detail = {"start": i, "fastest": S, "r_max": r_max, "limit": limit}
        for j in range(i, len(run.configs)):
            s = run.configs[j].s
            if all(s[p - 1].dec is not BOTTOM for p in S):
                detail["all_decided_at"] = j
                return "ok", detail
            reached = [p for p in S if prog(s[p - 1]) >= limit]
            if reached:
                detail.update(violated_at=j, reached=reached)
                return "violated", detail
        return "pending", detail
    return "n/a", {}


def check_bounds(run: Run, alg: CrashStopAlgorithm, consts=None, gst: int = 0) -> BoundReport:
    """B3/B4 on crash-stop or wrapped runs of CT; B5 on crash-stop runs."""
    if consts is None:
        consts = getattr(alg, "bounds", lambda: None)()
    if consts is None:
        return BoundReport(applicable=False, b3_ok=True, b4_ok=True, b5="skipped")
    mon = BoundsMonitor(alg, consts)
    c0 = run.configs[0]
    if isinstance(c0, CRConfig):
        mon.config(tuple(w.st for w in c0.s))
        for i, (c, l, c2) in enumerate(run.steps()):
            mon.cr_step(i, c, l, c2)
        return mon.report()
    mon.config(c0.s)
    for c, l, c2 in run.steps():
        p = l.p
        sent = {q: m for (q, s_, m) in c2.M - c.M if s_ == p}
        # bundles are unique per destination within a step
        mon.sent(p, c.s[p - 1], sent)
        mon.config(c2.s)
    rep = mon.report()
    rep.b5, rep.b5_detail = check_b5(run, alg, consts, gst)
    return rep


def stable_period_bound(consts, n: int) -> dict:
    return {
        "B_slow": consts.B_slow,
        "B_iter": consts.B_iter(n),
        "B": consts.B(n),
    }


# ---------------------------------------------------------------------------
# termination


@dataclass
class RunSummary:
    seed: int
    decision_steps: dict  # pid -> step of first decision (None if undecided)
    horizon: int
    steps: int = 0


def termination_stats(runs: Iterable[RunSummary], scope=None) -> dict:
    runs = list(runs)
    if not runs:
        return {"runs": 0, "decided_fraction": None}
    per_proc: dict = {}
    decided_runs = 0
    finish = []
    for r in runs:
        procs = sorted(r.decision_steps) if scope is None else sorted(scope)
        steps = [r.decision_steps.get(p) for p in procs]
        for p, s in zip(procs, steps):
            d = per_proc.setdefault(p, [0, 0])
            d[1] += 1
            d[0] += s is not None
        if all(s is not None for s in steps):
            decided_runs += 1
            finish.append(max(steps) if steps else 0)
    out = {
        "runs": len(runs),
        "decided_fraction": decided_runs / len(runs),
        "per_process": {p: d[0] / d[1] for p, d in sorted(per_proc.items())},
        "scope": "all" if scope is None else sorted(scope),
    }
    if finish:
        qs = statistics.quantiles(finish, n=100, method="inclusive") if len(finish) > 1 else [finish[0]] * 99
        out.update(p50=qs[49], p90=qs[89], p99=qs[98], max=max(finish))
    return out
