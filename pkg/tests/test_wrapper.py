from dataclasses import dataclass, replace

import pytest
from hypothesis import given, strategies as st

from crwrap.crashstop import CrashStopAlgorithm
from crwrap.crsim import run_cr
from crwrap.ct import ChandraToueg
from crwrap.model import BOTTOM, CoreState, pids
from crwrap.rng import CounterRng
from crwrap.toys import NullAlgorithm
from crwrap.wrapper import (
    HEARTBEAT, NOACK, WrappedAlgorithm, WrappedState, is_payload, unfold, wrapped_init, wrapped_next,
    wrapped_send,
)

from conftest import benign, ct_cr_run


@dataclass(frozen=True)
class LogState(CoreState):
    pid: int = 1
    k: int = 0
    got: tuple = ()


class Chatter(CrashStopAlgorithm):
    """Logs every delivered message and sends a fresh numbered message to everyone on each step."""

    name = "chatter"

    def __init__(self, n):
        super().__init__(n, 0)

    def initial_states(self):
        return (tuple(LogState(0, pid=p) for p in pids(self.n)),)

    def next(self, s, rmsg, fdo):
        got = s.got + ((rmsg,) if rmsg is not BOTTOM else ())
        return replace(s, k=s.k + 1, got=got)

    def send(self, s):
        return {q: ("m", s.pid, s.k) for q in pids(self.n)}


class Recorder(CrashStopAlgorithm):
    """Logs deliveries, never sends."""

    name = "recorder"

    def __init__(self, n):
        super().__init__(n, 0)

    def initial_states(self):
        return (tuple(LogState(0, pid=p) for p in pids(self.n)),)

    def next(self, s, rmsg, fdo):
        return s if rmsg is BOTTOM else replace(s, got=s.got + (rmsg,))

    def send(self, s):
        return {}


class TestUnfold:
    def test_single_process_no_messages(self):
        alg = NullAlgorithm(1)
        s = WrappedState.fresh(CoreState(0), 1)
        ut = unfold(1, s, {}, alg)
        assert len(ut.labels) == 1
        assert ut.labels[0].fdo == frozenset({1}) and ut.labels[0].rmsg is BOTTOM
        assert ut.last() == s

    def test_ack_pops_buffer_head(self):
        alg = NullAlgorithm(2)
        s = WrappedState(CoreState(0), ((), ("m1",)), (NOACK, NOACK), (frozenset(), frozenset()))
        ut = unfold(1, s, {1: (HEARTBEAT, NOACK), 2: (HEARTBEAT, "m1")}, alg)
        out = ut.last()
        assert all(l.fdo == frozenset() for l in ut.labels)
        assert out.buff == ((), ())
        assert out.acks == (NOACK, NOACK) and out.st == s.st

    def test_stale_ack_pops_nothing(self):
        alg = NullAlgorithm(2)
        s = WrappedState(CoreState(0), ((), ("m2", "m1")), (NOACK, NOACK), (frozenset(), frozenset()))
        out = unfold(1, s, {2: (HEARTBEAT, "m1")}, alg).last()
        assert out.buff[1] == ("m2", "m1")

    def test_duplicate_is_fed_as_bottom(self):
        alg = Recorder(2)
        st0 = alg.initial_states()[0][0]
        s = WrappedState(st0, ((), ()), (NOACK, "m"), (frozenset(), frozenset({"m"})))
        ut = unfold(1, s, {2: ("m", NOACK)}, alg)
        assert ut.labels[1].rmsg is BOTTOM
        assert ut.last().acks == (NOACK, "m") and ut.last().st.got == ()

    def test_fresh_payload_is_fed_once_and_acked(self):
        alg = Recorder(2)
        s = WrappedState.fresh(alg.initial_states()[0][0], 2)
        once = unfold(1, s, {2: ("m", NOACK)}, alg).last()
        assert once.st.got == ((2, "m"),) and once.acks[1] == "m"
        twice = unfold(1, once, {2: ("m", NOACK)}, alg).last()
        assert twice.st.got == ((2, "m"),)

    def test_heartbeat_never_updates_acks(self):
        alg = Recorder(2)
        s = WrappedState(alg.initial_states()[0][0], ((), ()), (NOACK, "m"), (frozenset(), frozenset({"m"})))
        assert unfold(1, s, {2: (HEARTBEAT, NOACK)}, alg).last().acks == (NOACK, "m")

    def test_lifo_push(self):
        alg = Chatter(2)
        s = WrappedState(alg.initial_states()[0][0], ((), ("m1",)), (NOACK, NOACK), (frozenset(), frozenset()))
        out = unfold(1, s, {}, alg).last()
        assert out.buff[1] == (("m", 1, 2), ("m", 1, 1), "m1")
        assert wrapped_send(out, 2)[2] == (("m", 1, 2), NOACK)


@st.composite
def unfold_case(draw):
    n = draw(st.integers(1, 3))
    alg = Chatter(n)
    msgs = st.sampled_from([("m", q, k) for q in pids(n) for k in range(3)] + [HEARTBEAT])
    buff = tuple(tuple(dict.fromkeys(draw(st.lists(msgs.filter(is_payload), max_size=3)))) for _ in pids(n))
    acks = tuple(draw(st.one_of(st.just(NOACK), msgs.filter(is_payload))) for _ in pids(n))
    p = draw(st.integers(1, n))
    s = WrappedState(LogState(0, pid=p, k=draw(st.integers(0, 2))), buff, acks, (frozenset(),) * n)
    rmsgs = {}
    for q in draw(st.frozensets(st.integers(1, n))):
        rmsgs[q] = (draw(msgs), draw(st.one_of(st.just(NOACK), msgs)))
    return p, s, rmsgs, alg


class TestUnfoldProperties:
    @given(unfold_case())
    def test_next_is_last_of_unfold(self, case):
        p, s, rmsgs, alg = case
        assert wrapped_next(p, s, rmsgs, alg) == unfold(p, s, rmsgs, alg).last()

    @given(unfold_case())
    def test_labels_fail_free_with_constant_detector(self, case):
        p, s, rmsgs, alg = case
        ut = unfold(p, s, rmsgs, alg)
        assert len(ut.alternating()) == 2 * alg.n + 1
        assert all(l.fails == frozenset() and l.p == p for l in ut.labels)
        assert {l.fdo for l in ut.labels} == {frozenset(q for q in pids(alg.n) if q not in rmsgs)}

    @given(unfold_case())
    def test_lifo_head_is_newest(self, case):
        p, s, rmsgs, alg = case
        ut = unfold(p, s, rmsgs, alg)
        for q in pids(alg.n):
            newest = [m[q] for m in ut.sent if q in m]
            if newest:
                assert ut.last().head(q) == newest[-1]

    @given(unfold_case())
    def test_send_is_read_only(self, case):
        p, s, rmsgs, alg = case
        before = s
        out = wrapped_send(s, alg.n)
        assert s == before
        assert set(out) == set(pids(alg.n))
        for q, (m, a) in out.items():
            assert m == s.head(q) and a == s.acks[q - 1]


def test_all_empty_sends_heartbeats():
    s = WrappedState.fresh(CoreState(0), 3)
    assert wrapped_send(s, 3) == {q: (HEARTBEAT, NOACK) for q in (1, 2, 3)}


def test_send_emits_head():
    s = WrappedState(CoreState(0), ((), ("m2", "m1")), (NOACK, "x"), (frozenset(), frozenset()))
    assert wrapped_send(s, 2)[2] == ("m2", "x")


@pytest.mark.parametrize("seed", range(20))
def test_exactly_once_delivery_to_core(seed):
    walg = WrappedAlgorithm(Chatter(3))
    run = run_cr(walg, benign(3, net=0.6, fp=0.8), CounterRng(seed), 25, False)
    for w in run.last().s:
        assert len(w.st.got) == len(set(w.st.got))
        for b in w.buff:
            assert len(b) == len(set(b))


class TestDecidedStates:
    def decided_run(self):
        for seed in range(50):
            walg, run = ct_cr_run(seed, horizon=300, stop=True)
            for c in run.configs:
                for p, w in enumerate(c.s, start=1):
                    if w.st.dec is not BOTTOM:
                        return walg, p, w
        raise AssertionError("no decision")

    def test_decided_stays_decided_and_announces(self):
        walg, p, w = self.decided_run()
        assert w.ann, "announcements recorded on deciding"
        sends = {q: wrapped_send(w, 3)[q] for q in pids(3)}
        for q, dest_msg in w.ann:
            assert sends[q][0] == dest_msg
        w2 = walg.next(p, w, {q: (HEARTBEAT, NOACK) for q in pids(3)})
        assert w2.st.dec == w.st.dec and w2.ann == w.ann


def test_seed0_step_matches_manual_unfold():
    walg, run = ct_cr_run(0, horizon=2)
    alg = walg.core
    c, l, c2 = next(run.steps())
    for p in pids(3):
        if p in c.F:
            assert c2.s[p - 1] == c.s[p - 1]
            continue
        row = l.row(p)
        fdo = frozenset(q for q in pids(3) if q not in row)
        w = c.s[p - 1]
        st_, buff, acks = w.st, list(w.buff), list(w.acks)
        for q in pids(3):
            m, a = row.get(q, (BOTTOM, BOTTOM))
            fed = (q, m) if is_payload(m) and m != acks[q - 1] and m not in w.seen[q - 1] else BOTTOM
            st_ = alg.next(st_, fed, fdo)
            if is_payload(m):
                acks[q - 1] = m
            if is_payload(a) and buff[q - 1] and buff[q - 1][0] == a:
                buff[q - 1] = buff[q - 1][1:]
            for dest, msg in sorted(alg.send(st_).items()):
                buff[dest - 1] = (msg,) + buff[dest - 1]
        assert c2.s[p - 1].st == st_
        assert c2.s[p - 1].buff == tuple(buff) and c2.s[p - 1].acks == tuple(acks)


class TestInit:
    def test_one_initial_state_no_failures(self):
        cs = wrapped_init(NullAlgorithm(2), failure_sets=[()])
        assert len(cs) == 1
        assert cs[0].s[0].buff == ((), ()) and cs[0].n == 0

    def test_acks_start_unset(self):
        for c in wrapped_init(ChandraToueg(3)):
            assert all(a is NOACK for w in c.s for a in w.acks)

    def test_trace_letter_matches_crash_stop_initial(self):
        alg = ChandraToueg(3)
        assert {tuple(w.st for w in c.s) for c in wrapped_init(alg)} == set(alg.initial_states())

    def test_all_failure_sets_by_default(self):
        assert len(wrapped_init(NullAlgorithm(2))) == 4
