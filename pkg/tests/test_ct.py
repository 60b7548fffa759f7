import dataclasses

import pytest
from hypothesis import given, strategies as st

from crwrap.crashstop import CrashStopConfig, cs_fair_scheduler
from crwrap.ct import (
    ChandraToueg, CtState, composite_round, coordinator, ct_bounds, ct_next, ct_send, locked_estimates, parts_of,
)
from crwrap.model import BOTTOM, Run
from crwrap.verify import check_bounds, stable_period_bound

N = 3
EMPTY = frozenset()


def walk_states(seeds=range(40), horizon=120):
    """(state, fdo that produced it) pairs visited by crash-stop runs with crashes and late gst."""
    alg = ChandraToueg(N)
    out = []
    for seed in seeds:
        plan = [(seed % 13, seed % 3 + 1)] if seed % 3 else []
        run = cs_fair_scheduler(alg, seed, horizon, crash_plan=plan, gst=seed % 50)
        for c, l, c2 in run.steps():
            out.append((c2.s[l.p - 1], l.fdo))
    return out


STATES = walk_states()


class TestSteps:
    def test_decided_state_is_absorbing(self):
        s = CtState(inp=1, pid=2, estimate=1, dec=1, round=3, phase=4)
        for rmsg in (BOTTOM, (1, (("prop", 3, 0),)), (3, (("dec", 0),))):
            assert ct_next(s, rmsg, frozenset({1, 3}), N) == s

    def test_phase3_adopts_proposal_and_acks(self):
        s = CtState(inp=0, pid=2, estimate=0, phase=3)
        s2 = ct_next(s, (1, (("prop", 1, 2),)), EMPTY, N)
        assert (s2.estimate, s2.ts, s2.phase, s2.round) == (2, 1, 4, 1)
        assert ct_send(s2) == {1: (("ack", 1),)}

    def test_phase3_suspicion_nacks_and_advances(self):
        s = CtState(inp=0, pid=2, estimate=0, phase=3)
        s2 = ct_next(s, BOTTOM, frozenset({1}), N)
        assert (s2.round, s2.phase) == (2, 1)
        assert ct_send(s2) == {1: (("nack", 1),)}

    def test_phase1_step_sends_estimate_to_coordinator(self):
        for r, p in [(1, 2), (2, 3), (4, 1)]:
            s = CtState(inp=1, pid=p, estimate=1, round=r)
            out = ct_send(ct_next(s, BOTTOM, EMPTY, N))
            assert out == {coordinator(r, N): (("est", r, 1, 0),)}
        assert coordinator(4, N) == 1

    def test_coordinator_waits_for_quorum(self):
        s = ct_next(CtState(inp=0, pid=1, estimate=0), BOTTOM, EMPTY, N)
        s = ct_next(s, (2, (("est", 1, 1, 0),)), EMPTY, N)
        assert s.phase == 2 and ct_send(s) == {}

    def test_decision_is_announced_to_the_others(self):
        s = CtState(inp=0, pid=1, estimate=2, ts=1, phase=4, replies=frozenset({(1, "ack")}))
        s2 = ct_next(s, (3, (("ack", 1),)), EMPTY, N)
        assert s2.dec == 2
        assert ct_send(s2) == {2: (("dec", 2),), 3: (("dec", 2),)}

    def test_nack_majority_aborts_round(self):
        s = CtState(inp=0, pid=1, estimate=2, ts=1, phase=4, replies=frozenset({(1, "ack")}))
        s2 = ct_next(s, (3, (("nack", 1),)), EMPTY, N)
        assert s2.dec is BOTTOM and (s2.round, s2.phase) == (2, 1)
        assert ct_send(s2) == {2: (("abort", 1),), 3: (("abort", 1),)}

    def test_malformed_parts_ignored(self):
        s = CtState(inp=0, pid=2, estimate=0, phase=3)
        junk = (1, (("prop",), ("prop", "x", 1), "garbage", ("dec", "v")))
        assert ct_next(s, junk, EMPTY, N) == ct_next(s, BOTTOM, EMPTY, N)
        assert parts_of("not a bundle") == ()


class TestCompositeRound:
    def test_formula(self):
        assert composite_round(CtState(inp=0)) == 1
        assert composite_round(CtState(inp=0, round=2, phase=3)) == 7

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_non_decreasing_along_run(self, seed):
        run = cs_fair_scheduler(ChandraToueg(N), seed, 300, crash_plan=[(5, 3)], gst=40)
        for p in range(N):
            seq = [composite_round(c.s[p]) for c in run.configs]
            assert seq == sorted(seq)


class TestConstants:
    def test_values_for_three(self):
        k = ct_bounds(3)
        assert (k.B_Delta, k.B_adv, k.B_s, k.phases) == (12, 4, 1, 4)

    @given(st.integers(1, 40))
    def test_scaling(self, n):
        k = ct_bounds(n)
        assert k.B_Delta == 4 * n and k.B_adv == 4 * (n // 2)
        assert k.B_slow == k.B_Delta + 1 and k.B(n) == k.B_slow * n * (k.B_Delta + k.B_adv)

    def test_stable_period_arithmetic(self):
        assert stable_period_bound(ct_bounds(3), 3) == {"B_slow": 13, "B_iter": 48, "B": 624}

    def test_single_config_bounds(self):
        alg = ChandraToueg(N)
        rep = check_bounds(Run([CrashStopConfig(alg.initial_states()[0])]), alg)
        assert (rep.b3_max, rep.b4_max_gap, rep.b3_ok, rep.b4_ok) == (0, 0, True, True)

    def test_majority_required(self):
        with pytest.raises(ValueError):
            ChandraToueg(4, n_f=2)


def other_round_parts(r):
    rounds = st.integers(1, 6).filter(lambda x: x != r)
    return st.one_of(
        st.builds(lambda k, v, t: ("est", k, v, t), rounds, st.integers(0, 2), st.integers(0, 5)),
        st.builds(lambda k, v: ("prop", k, v), rounds, st.integers(0, 2)),
        st.builds(lambda kind, k: (kind, k), st.sampled_from(["ack", "nack", "abort"]), rounds),
    )


@st.composite
def state_and_foreign_message(draw):
    s, _ = draw(st.sampled_from(STATES))
    parts = draw(st.lists(other_round_parts(s.round), min_size=1, max_size=3))
    q = draw(st.integers(1, N))
    fdo = draw(st.frozensets(st.integers(1, N), max_size=1))
    return s, (q, tuple(parts)), fdo


class TestBoundedProperties:
    @given(state_and_foreign_message())
    def test_b1_other_rounds_are_ignored(self, case):
        s, rmsg, fdo = case
        a, b = ct_next(s, rmsg, fdo, N), ct_next(s, BOTTOM, fdo, N)
        if all(p[1] < s.round for p in rmsg[1]):
            assert a == b
        else:
            # later-round parts are held back for their round, nothing else differs
            assert dataclasses.replace(a, stash=b.stash) == b

    @given(st.sampled_from(STATES))
    def test_b2_no_spontaneous_change(self, case):
        s, fdo = case
        if s.phase == 1 and s.dec is BOTTOM:
            return  # the round's first step has not happened yet
        assert ct_next(s, BOTTOM, fdo, N) == dataclasses.replace(s, outbox=())

    @given(st.sampled_from(STATES), st.integers(1, N), st.integers(0, 2), st.frozensets(st.integers(1, N)))
    def test_integrity_at_algorithm_level(self, case, q, v, fdo):
        s, _ = case
        if s.dec is BOTTOM:
            return
        for rmsg in (BOTTOM, (q, (("dec", v),)), (q, (("prop", s.round, v),))):
            assert ct_next(s, rmsg, fdo, N).dec == s.dec

    def test_quorums_before_proposing_and_deciding(self):
        alg = ChandraToueg(N)
        quorum = N // 2 + 1
        for seed in range(60):
            run = cs_fair_scheduler(alg, seed, 200, crash_plan=[(seed % 9, 2)] if seed % 2 else [], gst=seed % 40)
            for c, l, c2 in run.steps():
                s, s2 = c.s[l.p - 1], c2.s[l.p - 1]
                props = [p for _, b in s2.outbox for p in b if p[0] == "prop"]
                if props:
                    assert len(s2.collected) >= quorum
                got_dec = l.rmsg is not BOTTOM and any(p[0] == "dec" for p in parts_of(l.rmsg[1]))
                if s.dec is BOTTOM and s2.dec is not BOTTOM and not got_dec:
                    assert sum(1 for _, k in s2.replies if k == "ack") >= quorum

    def test_phase_order_and_timestamps(self):
        for s, _ in STATES:
            assert 1 <= s.phase <= 4
            assert s.ts < s.round or (s.ts == s.round and s.phase == 4)

    @pytest.mark.parametrize("seed", range(100))
    def test_b4_round_gap_and_locked_estimates(self, seed):
        alg = ChandraToueg(N)
        plan = [(seed % 11, seed % 3 + 1)] if seed % 2 else []
        run = cs_fair_scheduler(alg, seed, 300, crash_plan=plan, gst=seed % 60)
        rep = check_bounds(run, alg, gst=seed % 60)
        assert rep.b4_max_gap <= 4 * N and rep.b3_max <= 1
        assert all(locked_estimates(c.s) for c in run.configs)
