"""Shared vocabulary: bottom, local/global states, runs, traces and words.

A global state is a plain tuple of local states; process ``p`` lives at index
``p - 1``.  Runs are stored as two parallel lists (configurations, labels) but
can be built from, and flattened to, the alternating ``c0, l0, c1, ...`` form.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence


class Bottom:
    """The distinguished "no value" element.  Never equal to any integer."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "BOTTOM"

    def __reduce__(self):
        return (Bottom, ())

    def __bool__(self):
        return False


BOTTOM = Bottom()


def is_bottom(x) -> bool:
    return x is BOTTOM


def pids(n: int) -> range:
    return range(1, n + 1)


@dataclass(frozen=True)
class CoreState:
    """Local state of a crash-stop algorithm with the two distinguished fields.

    Subclasses add the algorithm payload as further fields.
    """

    inp: int
    dec: Any = BOTTOM

    def digest_fields(self) -> tuple:
        return tuple(
            getattr(self, f.name) for f in dataclasses.fields(self) if f.name not in ("inp", "dec")
        ) + (self.dec,)

    def payload_digest(self) -> str:
        return stable_digest(self.digest_fields())

    def payload_dict(self) -> dict:
        return {
            f.name: _jsonable(getattr(self, f.name))
            for f in dataclasses.fields(self)
            if f.name not in ("inp", "dec")
        }


def _jsonable(x):
    if x is BOTTOM:
        return None
    if isinstance(x, (tuple, list)):
        return [_jsonable(y) for y in x]
    if isinstance(x, (set, frozenset)):
        return sorted((_jsonable(y) for y in x), key=repr)
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    return x


def stable_digest(obj) -> str:
    # repr of tuples/ints/frozensets-of-sorted is stable across processes
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()[:16]


def _canonical(x) -> str:
    if isinstance(x, (frozenset, set)):
        return "{" + ",".join(sorted(_canonical(y) for y in x)) + "}"
    if isinstance(x, tuple):
        return "(" + ",".join(_canonical(y) for y in x) + ")"
    if isinstance(x, dict):
        return "{" + ",".join(f"{_canonical(k)}:{_canonical(v)}" for k, v in sorted(x.items(), key=repr)) + "}"
    return repr(x)


class MalformedRun(ValueError):
    pass


@dataclass
class Run:
    """A finite run: ``configs[i]`` and ``labels[i]`` lead to ``configs[i + 1]``."""

    configs: list
    labels: list = field(default_factory=list)

    def __post_init__(self):
        if not self.configs:
            raise MalformedRun("a run needs at least one configuration")
        if len(self.labels) != len(self.configs) - 1:
            raise MalformedRun(
                f"{len(self.configs)} configurations need {len(self.configs) - 1} labels, got {len(self.labels)}"
            )

    @classmethod
    def from_alternating(cls, seq: Sequence, config_type=None, label_type=None) -> "Run":
        seq = list(seq)
        if not seq or len(seq) % 2 == 0:
            raise MalformedRun("alternating run must have odd length and end in a configuration")
        configs, labels = seq[0::2], seq[1::2]
        if config_type is not None and not all(isinstance(c, config_type) for c in configs):
            raise MalformedRun("even positions must hold configurations")
        if label_type is not None and not all(isinstance(l, label_type) for l in labels):
            raise MalformedRun("odd positions must hold labels")
        return cls(configs, labels)

    def alternating(self) -> list:
        out = [self.configs[0]]
        for l, c in zip(self.labels, self.configs[1:]):
            out += [l, c]
        return out

    def steps(self) -> Iterator[tuple]:
        for i, l in enumerate(self.labels):
            yield self.configs[i], l, self.configs[i + 1]

    def last(self):
        return self.configs[-1]

    def __len__(self):
        return len(self.configs)


# ---------------------------------------------------------------------------
# words and traces


def subword_embedding(u: Sequence, v: Iterable) -> list[int] | None:
    """Leftmost strictly monotone embedding of ``u`` into ``v`` (0-based), or None."""
    u = list(u)
    if not u:
        return []
    out = []
    k = 0
    for j, letter in enumerate(v):
        if letter == u[k]:
            out.append(j)
            k += 1
            if k == len(u):
                return out
    return None


def is_subword(u: Sequence, v: Iterable) -> bool:
    return subword_embedding(u, v) is not None


def _project_letter(x):
    s = getattr(x, "s", x)
    if isinstance(s, tuple) and s and hasattr(s[0], "st"):
        return tuple(w.st for w in s)
    return s


def _as_configs(run) -> list:
    if isinstance(run, Run):
        return run.configs
    seq = list(run)
    if seq and all(hasattr(x, "s") for x in seq[0::2]) and len(seq) % 2 == 1:
        if any(hasattr(x, "s") for x in seq[1::2]):
            raise MalformedRun("labels and configurations do not alternate")
        return seq[0::2]
    if seq and any(hasattr(x, "s") for x in seq):
        raise MalformedRun("labels and configurations do not alternate")
    # already a trace
    return seq


def trace_of_cs_run(run) -> list:
    """State trace of a crash-stop run: drop labels, keep each ``c.s``."""
    return [_project_letter(c) for c in _as_configs(run)]


def trace_of_cr_run(run) -> list:
    """State trace of a wrapped crash-recovery run: keep each ``c.s_p.st``."""
    return [_project_letter(c) for c in _as_configs(run)]


# ---------------------------------------------------------------------------
# serialization


class TraceFormatError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def letter_record(index: int, letter: Sequence[CoreState], verbose: bool = False, **extra) -> dict:
    procs = {}
    for p, st in enumerate(letter, start=1):
        rec = {
            "inp": st.inp,
            "dec": None if st.dec is BOTTOM else st.dec,
            "payload_digest": st.payload_digest(),
        }
        if verbose:
            rec["payload"] = st.payload_dict()
        procs[str(p)] = rec
    out = {"step_index": index, "processes": procs}
    out.update(extra)
    return out


@dataclass(frozen=True)
class ReplayState:
    """Local state rebuilt from a trace file; carries only what checkers need."""

    inp: int
    dec: Any
    digest: str


def parse_letter(rec: dict, line: int | None = None) -> tuple:
    try:
        procs = rec["processes"]
        n = len(procs)
        letter = []
        for p in pids(n):
            r = procs[str(p)]
            inp, dec = r["inp"], r["dec"]
            if not isinstance(inp, int) or not (dec is None or isinstance(dec, int)):
                raise TraceFormatError(f"process {p}: inp/dec must be integers", line)
            letter.append(ReplayState(inp, BOTTOM if dec is None else dec, str(r.get("payload_digest", ""))))
        return tuple(letter)
    except TraceFormatError:
        raise
    except (KeyError, TypeError) as e:
        raise TraceFormatError(f"malformed record ({e!r})", line) from None


def write_trace(path, trace: Iterable[Sequence[CoreState]], verbose: bool = False) -> None:
    with open(path, "w") as fh:
        for i, letter in enumerate(trace):
            fh.write(json.dumps(letter_record(i, letter, verbose), sort_keys=True) + "\n")


def read_trace(path) -> list[tuple]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise TraceFormatError(f"invalid JSON: {e.msg} (column {e.colno})", lineno) from None
            if not isinstance(rec, dict):
                raise TraceFormatError("record is not an object", lineno)
            if rec.get("step_index") != len(out):
                raise TraceFormatError(f"expected step_index {len(out)}, got {rec.get('step_index')!r}", lineno)
            letter = parse_letter(rec, lineno)
            if out and len(letter) != len(out[0]):
                raise TraceFormatError("process count changed within trace", lineno)
            out.append(letter)
    if not out:
        raise TraceFormatError("empty trace")
    return out


class TraceBuffer:
    """Append-only trace that keeps at most ``cap`` letters in memory.

    Past the cap, letters are spilled to a JSONL file (digest form) and only
    the in-memory tail stays random-access.
    """

    def __init__(self, cap: int = 10**6, spill_dir=None):
        self.cap = cap
        self._mem: list = []
        self._spilled = 0
        self._spill_dir = spill_dir
        self._fh = None
        self.path = None

    def append(self, letter) -> None:
        self._mem.append(letter)
        if len(self._mem) > self.cap:
            self._spill(self._mem[: len(self._mem) - self.cap])
            del self._mem[: len(self._mem) - self.cap]

    def _spill(self, letters):
        if self._fh is None:
            fd, self.path = tempfile.mkstemp(suffix=".trace.jsonl", dir=self._spill_dir)
            self._fh = os.fdopen(fd, "w")
        for letter in letters:
            self._fh.write(json.dumps(letter_record(self._spilled, letter), sort_keys=True) + "\n")
            self._spilled += 1
        self._fh.flush()

    def __len__(self):
        return self._spilled + len(self._mem)

    @property
    def spilled(self) -> int:
        return self._spilled

    def in_memory(self) -> list:
        return list(self._mem)

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


# ---------------------------------------------------------------------------
# crash-recovery configurations and labels


@dataclass(frozen=True)
class CRConfig:
    """``(n, s, F)``: step number, per-process wrapped states, failed set."""

    n: int
    s: tuple
    F: frozenset = frozenset()


@dataclass(frozen=True)
class CRLabel:
    """``rmsgs[p - 1]`` holds the ``(sender, message)`` pairs received by ``p``, sorted by sender."""

    rmsgs: tuple
    fails: frozenset = frozenset()

    @classmethod
    def build(cls, rows: dict, fails=(), n: int | None = None) -> "CRLabel":
        n = n if n is not None else max(rows, default=0)
        return cls(tuple(tuple(sorted(rows.get(p, {}).items())) for p in pids(n)), frozenset(fails))

    def row(self, p: int) -> dict:
        return dict(self.rmsgs[p - 1])
