import itertools
import json

import pytest
from hypothesis import given, strategies as st

from crwrap.crashstop import CrashStopConfig
from crwrap.model import (
    BOTTOM, CoreState, CRConfig, CRLabel, MalformedRun, Run, TraceBuffer, TraceFormatError,
    is_subword, read_trace, subword_embedding, trace_of_cr_run, trace_of_cs_run, write_trace,
)
from crwrap.wrapper import NOACK, WrappedState

from conftest import ct_cr_run

words = st.lists(st.integers(0, 3), max_size=7)


def brute_subword(u, v):
    return any(all(u[i] == v[j] for i, j in enumerate(m)) for m in itertools.combinations(range(len(v)), len(u)))


class TestSubword:
    def test_empty_word_embeds_everywhere(self):
        assert is_subword([], ["s1", "s2"])

    def test_monotone_map(self):
        assert subword_embedding(["a", "b"], ["a", "c", "b"]) == [0, 2]

    def test_order_matters(self):
        # oracle: brute force over all monotone maps for |u|=2, |v|=3
        assert brute_subword(["b", "a"], ["a", "c", "b"]) is False
        assert not is_subword(["b", "a"], ["a", "c", "b"])

    @given(words, words)
    def test_matches_brute_force(self, u, v):
        assert is_subword(u, v) == brute_subword(u, v)

    @given(words)
    def test_reflexive(self, u):
        assert is_subword(u, u)

    @given(words, words, words)
    def test_transitive(self, u, v, w):
        if is_subword(u, v) and is_subword(v, w):
            assert is_subword(u, w)

    @given(words, words)
    def test_equal_length_means_equal(self, u, v):
        if len(u) == len(v) and is_subword(u, v):
            assert u == v

    @given(words, words)
    def test_embedding_is_strictly_monotone(self, u, v):
        m = subword_embedding(u, v)
        if m is not None:
            assert all(a < b for a, b in zip(m, m[1:]))
            assert [v[j] for j in m] == u


class TestRun:
    def test_needs_a_configuration(self):
        with pytest.raises(MalformedRun):
            Run([])

    def test_label_count(self):
        with pytest.raises(MalformedRun):
            Run(["c0", "c1"], [])

    def test_alternating_round_trip(self):
        r = Run.from_alternating(["c0", "l0", "c1"])
        assert r.alternating() == ["c0", "l0", "c1"]
        with pytest.raises(MalformedRun):
            Run.from_alternating(["c0", "l0"])


class TestTraces:
    def test_single_configuration(self):
        c0 = CrashStopConfig((CoreState(1),))
        assert trace_of_cs_run(Run([c0])) == [c0.s]

    def test_label_dropped(self):
        c0, c1 = CrashStopConfig((CoreState(1),)), CrashStopConfig((CoreState(1, 1),))
        assert trace_of_cs_run([c0, "label", c1]) == [c0.s, c1.s]

    def test_seed0_ct_run_projection(self, seed0_cs_run):
        run = seed0_cs_run
        assert len(run.labels) == 3
        assert trace_of_cs_run(run) == [c.s for c in run.configs]
        assert len(trace_of_cs_run(run)) == 4

    def test_wrapped_projection_discards_buffers(self):
        a = WrappedState(CoreState(0), ((), ()), (NOACK, NOACK))
        b = WrappedState(CoreState(0), (("m",), ()), ("x", NOACK))
        c0, c1 = CRConfig(0, (a, a), frozenset()), CRConfig(1, (b, b), frozenset())
        tr = trace_of_cr_run(Run([c0, c1], [CRLabel(((), ()))]))
        assert tr[0] == tr[1] == (CoreState(0), CoreState(0))

    def test_wrapped_ct_projection_by_hand(self):
        _, run = ct_cr_run(0, horizon=3)
        tr = trace_of_cr_run(run)
        assert len(tr) == len(run.configs) == 4
        for letter, c in zip(tr, run.configs):
            assert letter == tuple(w.st for w in c.s)

    @pytest.mark.parametrize("seed", range(5))
    def test_letter_count_and_idempotence(self, seed):
        _, run = ct_cr_run(seed, horizon=20)
        tr = trace_of_cr_run(run)
        assert len(tr) == len(run.configs)
        assert trace_of_cr_run(tr) == tr
        assert trace_of_cs_run(tr) == tr


class TestTraceFiles:
    def test_round_trip(self, tmp_path):
        trace = [(CoreState(1), CoreState(2)), (CoreState(1, 2), CoreState(2))]
        write_trace(tmp_path / "t.jsonl", trace, verbose=True)
        back = read_trace(tmp_path / "t.jsonl")
        assert [(x.inp, x.dec) for x in back[1]] == [(1, 2), (2, BOTTOM)]

    def test_position_in_errors(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        write_trace(p, [(CoreState(1),), (CoreState(1),)])
        lines = p.read_text().splitlines()
        p.write_text(lines[0] + "\n{not json\n")
        with pytest.raises(TraceFormatError) as e:
            read_trace(p)
        assert e.value.line == 2

    def test_step_index_gap(self, tmp_path):
        p = tmp_path / "gap.jsonl"
        rec = {"step_index": 1, "processes": {"1": {"inp": 0, "dec": None}}}
        p.write_text(json.dumps(rec) + "\n")
        with pytest.raises(TraceFormatError, match="step_index"):
            read_trace(p)

    def test_non_integer_decision(self, tmp_path):
        p = tmp_path / "bad.jsonl"
        p.write_text(json.dumps({"step_index": 0, "processes": {"1": {"inp": 0, "dec": "x"}}}) + "\n")
        with pytest.raises(TraceFormatError):
            read_trace(p)

    def test_buffer_spills_past_cap(self, tmp_path):
        buf = TraceBuffer(cap=3, spill_dir=tmp_path)
        for i in range(10):
            buf.append((CoreState(i),))
        buf.close()
        assert len(buf) == 10 and buf.spilled == 7
        assert [x[0].inp for x in buf.in_memory()] == [7, 8, 9]
        assert len(read_trace(buf.path)) == 7


def test_bottom_is_not_a_value():
    assert BOTTOM != 0 and BOTTOM is not None and not BOTTOM
