"""Lossy synchronous crash-recovery semantics and its probabilistic layer."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

from .model import BOTTOM, CRConfig, CRLabel, Run, pids
from .rng import INIT, LABEL, CounterRng
from .wrapper import WrappedAlgorithm, WrappedState, wrapped_next, wrapped_send


# ---------------------------------------------------------------------------
# probability families


@dataclass(frozen=True)
class Constant:
    value: float

    def __call__(self, t: int) -> float:
        return self.value

    def bounds(self) -> tuple[float, float]:
        return self.value, self.value


@dataclass(frozen=True)
class Schedule:
    """Piecewise constant: ``points`` are ``(start_step, value)`` sorted by start, first start 0."""

    points: tuple

    def __post_init__(self):
        starts = [t for t, _ in self.points]
        if not starts or starts[0] != 0 or starts != sorted(set(starts)):
            raise ValueError("schedule needs strictly increasing starts beginning at 0")

    def __call__(self, t: int) -> float:
        v = self.points[0][1]
        for start, val in self.points:
            if start > t:
                break
            v = val
        return v

    def bounds(self) -> tuple[float, float]:
        vals = [v for _, v in self.points]
        return min(vals), max(vals)


@dataclass(frozen=True)
class Sinusoid:
    mean: float
    amplitude: float
    period: float
    phase: float = 0.0

    def __call__(self, t: int) -> float:
        return self.mean + self.amplitude * math.sin(2 * math.pi * t / self.period + self.phase)

    def bounds(self) -> tuple[float, float]:
        a = abs(self.amplitude)
        return self.mean - a, self.mean + a


FAMILIES = {"constant": Constant, "schedule": Schedule, "sinusoid": Sinusoid}


class ModelError(ValueError):
    pass


@dataclass
class ProbModel:
    """Delivery probability per channel and up-probability per process.

    ``net`` / ``fp`` are a family shared by all channels (processes) or a dict
    keyed by ``(receiver, sender)`` (process).  In ``nastier`` mode the
    processes outside ``correct`` are down for good from ``cutoffs[p]`` on.
    ``strict=False`` admits probabilities of exactly 0 or 1 (for tests and
    for the nondeterministic model).
    """

    n: int
    net: object
    fp: object
    eps_net: float
    eps_f: float
    mode: str = "standard"
    correct: frozenset | None = None
    cutoffs: dict = field(default_factory=dict)
    n_f: int | None = None
    strict: bool = True

    def __post_init__(self):
        if self.mode not in ("standard", "nastier"):
            raise ModelError(f"unknown mode {self.mode!r}")
        if self.mode == "nastier":
            if self.correct is None:
                raise ModelError("nastier mode needs the correct set C")
            self.correct = frozenset(self.correct)
            n_f = (self.n - 1) // 2 if self.n_f is None else self.n_f
            if len(self.correct) < self.n - n_f:
                raise ModelError(f"|C|={len(self.correct)} is below N - N_f = {self.n - n_f}")
            for p in pids(self.n):
                if p not in self.correct and p not in self.cutoffs:
                    raise ModelError(f"process {p} outside C needs a cutoff")
        self.validate()

    def _net_family(self, receiver, sender):
        return self.net[(receiver, sender)] if isinstance(self.net, dict) else self.net

    def _fp_family(self, p):
        return self.fp[p] if isinstance(self.fp, dict) else self.fp

    def validate(self):
        if not (0 < self.eps_net < 1 and 0 < self.eps_f < 0.5) and self.strict:
            raise ModelError("need 0 < eps_net < 1 and 0 < eps_f < 1/2")
        for p in pids(self.n):
            for q in pids(self.n):
                lo, hi = self._net_family(p, q).bounds()
                if hi > 1 or lo < 0:
                    raise ModelError(f"net({p},{q}) leaves [0, 1]")
                if self.strict and not lo > self.eps_net:
                    raise ModelError(f"net({p},{q}) can drop to {lo} <= eps_net={self.eps_net}")
        for p in pids(self.n):
            lo, hi = self._fp_family(p).bounds()
            if hi > 1 or lo < 0:
                raise ModelError(f"fp({p}) leaves [0, 1]")
            if self.strict and not (self.eps_f < lo and hi < 1 - self.eps_f):
                raise ModelError(f"fp({p}) range [{lo}, {hi}] violates eps_f={self.eps_f}")

    def net_prob(self, receiver: int, sender: int, t: int) -> float:
        return self._net_family(receiver, sender)(t)

    def up_prob(self, p: int, t: int) -> float:
        if self.mode == "nastier" and p not in self.correct and t >= self.cutoffs[p]:
            return 0.0
        return self._fp_family(p)(t)


# ---------------------------------------------------------------------------
# transitions


class CRViolation(Exception):
    def __init__(self, kind: str, detail: str = ""):
        self.kind = kind
        self.detail = detail
        super().__init__(f"{kind}: {detail}" if detail else kind)


def cr_apply(c: CRConfig, l: CRLabel, walg: WrappedAlgorithm) -> CRConfig:
    n = walg.n
    if len(l.rmsgs) != n or not set(l.fails) <= set(pids(n)):
        raise CRViolation("MalformedLabel", "label does not match the process set")
    sends = {}
    new = list(c.s)
    for p in pids(n):
        row = l.row(p)
        for q, msg in row.items():
            if q in c.F:
                raise CRViolation("FailedSenderDelivered", f"{q} -> {p}")
            if q not in sends:
                sends[q] = wrapped_send(c.s[q - 1], n)
            if sends[q][p] != msg:
                raise CRViolation("MessageContentMismatch", f"{q} -> {p}")
        if p not in c.F:
            new[p - 1] = wrapped_next(p, c.s[p - 1], row, walg.core)
    return CRConfig(c.n + 1, tuple(new), frozenset(l.fails))


def sample_label(c: CRConfig, pm: ProbModel, rng: CounterRng, walg: WrappedAlgorithm) -> CRLabel:
    """Draws use one block per step: channel (p, q) at ``(p-1)*N + q-1``, then failures."""
    n = walg.n
    u = rng.block(c.n, LABEL, n * n + n)
    live = [p for p in pids(n) if p not in c.F]
    sends = {q: wrapped_send(c.s[q - 1], n) for q in live}
    rows = []
    for p in pids(n):
        row = ()
        if p not in c.F:
            row = tuple(
                (q, sends[q][p]) for q in live if u[(p - 1) * n + q - 1] < pm.net_prob(p, q, c.n)
            )
        rows.append(row)
    fails = frozenset(p for p in pids(n) if u[n * n + p - 1] >= pm.up_prob(p, c.n + 1))
    return CRLabel(tuple(rows), fails)


def _fresh_config(g, F, n: int) -> CRConfig:
    return CRConfig(0, tuple(WrappedState.fresh(x, n) for x in g), frozenset(F))


def initial_config(pm: ProbModel, walg: WrappedAlgorithm, rng: CounterRng) -> CRConfig:
    n = walg.n
    states = walg.core.initial_states()
    u = rng.block(0, INIT, n + 1)
    g = states[min(int(u[0] * len(states)), len(states) - 1)]
    F = frozenset(p for p in pids(n) if u[1 + p - 1] >= pm.up_prob(p, 0))
    return _fresh_config(g, F, n)


def initial_prob(c: CRConfig, pm: ProbModel, walg: WrappedAlgorithm) -> float:
    """Uniform over core initial states times the product failure distribution at t = 0."""
    states = walg.core.initial_states()
    g = tuple(w.st for w in c.s)
    if c.n != 0 or g not in set(states) or c != _fresh_config(g, c.F, walg.n):
        return 0.0
    return fails_prob(c.F, pm, 0, walg.n) / len(states)


def fails_prob(F, pm: ProbModel, t: int, n: int) -> float:
    out = 1.0
    for p in pids(n):
        up = pm.up_prob(p, t)
        out *= (1 - up) if p in F else up
    return out


class TooLarge(ValueError):
    pass


MAX_N = 4


def _check_size(c: CRConfig, n: int, limit: int):
    live = n - len(c.F)
    labels = 2 ** (live * live) * 2 ** n
    if n > MAX_N or labels > limit:
        raise TooLarge(
            f"refusing exact enumeration: N={n}, {live} live processes, "
            f"{labels} labels (limit N<={MAX_N}, {limit} labels)"
        )
    return labels


def receiver_outcomes(c: CRConfig, p: int, pm: ProbModel, walg: WrappedAlgorithm, sends=None) -> dict:
    """Distribution of ``p``'s next wrapped state over the delivery outcomes of its row."""
    n = walg.n
    if p in c.F:
        return {c.s[p - 1]: 1.0}
    live = [q for q in pids(n) if q not in c.F]
    if sends is None:
        sends = {q: wrapped_send(c.s[q - 1], n) for q in live}
    out: dict = {}
    for mask in itertools.product((False, True), repeat=len(live)):
        w = 1.0
        row = {}
        for q, on in zip(live, mask):
            pr = pm.net_prob(p, q, c.n)
            w *= pr if on else 1 - pr
            if on:
                row[q] = sends[q][p]
        if w == 0.0:
            continue
        s2 = wrapped_next(p, c.s[p - 1], row, walg.core)
        out[s2] = out.get(s2, 0.0) + w
    return out


def transition_distribution(c: CRConfig, pm: ProbModel, walg: WrappedAlgorithm, limit: int = 1 << 20) -> dict:
    """All successors of ``c`` with their probabilities.

    Receivers' rows and the failure draws are independent, so the label sum
    factorizes into per-receiver sums times the failure distribution.
    """
    n = walg.n
    _check_size(c, n, limit)
    live = [q for q in pids(n) if q not in c.F]
    sends = {q: wrapped_send(c.s[q - 1], n) for q in live}
    per = [receiver_outcomes(c, p, pm, walg, sends) for p in pids(n)]
    fails_dist = {}
    for mask in itertools.product((False, True), repeat=n):
        F = frozenset(p for p, down in zip(pids(n), mask) if down)
        w = fails_prob(F, pm, c.n + 1, n)
        if w:
            fails_dist[F] = w
    out = {}
    for combo in itertools.product(*(d.items() for d in per)):
        ws = math.prod(w for _, w in combo)
        s2 = tuple(s for s, _ in combo)
        for F, wf in fails_dist.items():
            key = CRConfig(c.n + 1, s2, F)
            out[key] = out.get(key, 0.0) + ws * wf
    return out


def trans_prob(c: CRConfig, c2: CRConfig, pm: ProbModel, walg: WrappedAlgorithm, limit: int = 1 << 20) -> float:
    n = walg.n
    _check_size(c, n, limit)
    if c2.n != c.n + 1:
        return 0.0
    out = fails_prob(c2.F, pm, c.n + 1, n)
    live = [q for q in pids(n) if q not in c.F]
    sends = {q: wrapped_send(c.s[q - 1], n) for q in live}
    for p in pids(n):
        if out == 0.0:
            break
        out *= receiver_outcomes(c, p, pm, walg, sends).get(c2.s[p - 1], 0.0)
    return out


def enumerate_labels(c: CRConfig, walg: WrappedAlgorithm):
    """Every canonical label out of ``c``: failed receivers get empty rows."""
    n = walg.n
    live = [q for q in pids(n) if q not in c.F]
    sends = {q: wrapped_send(c.s[q - 1], n) for q in live}
    chans = [(p, q) for p in live for q in live]
    for mask in itertools.product((False, True), repeat=len(chans)):
        rows = {p: {} for p in pids(n)}
        for (p, q), on in zip(chans, mask):
            if on:
                rows[p][q] = sends[q][p]
        for fmask in itertools.product((False, True), repeat=n):
            fails = frozenset(p for p, down in zip(pids(n), fmask) if down)
            yield CRLabel.build(rows, fails, n)


def label_weight(c: CRConfig, l: CRLabel, pm: ProbModel, n: int) -> float:
    w = 1.0
    for p in pids(n):
        row = l.row(p)
        for q in pids(n):
            if p in c.F or q in c.F:
                continue  # forced-undefined channels carry no randomness
            pr = pm.net_prob(p, q, c.n)
            w *= pr if q in row else 1 - pr
        up = pm.up_prob(p, c.n + 1)
        w *= (1 - up) if p in l.fails else up
    return w


def trans_prob_bruteforce(c: CRConfig, c2: CRConfig, pm: ProbModel, walg: WrappedAlgorithm, limit: int = 1 << 16) -> float:
    """Sum of label weights over every label leading from ``c`` to ``c2``."""
    _check_size(c, walg.n, limit)
    total = 0.0
    for l in enumerate_labels(c, walg):
        if cr_apply(c, l, walg) == c2:
            total += label_weight(c, l, pm, walg.n)
    return total


def reachable_configs(walg: WrappedAlgorithm, pm: ProbModel, depth: int, initial=None) -> list:
    """Configurations reachable with positive probability within ``depth`` steps."""
    frontier = list(initial) if initial is not None else [
        c for c in walg.initial_configs() if initial_prob(c, pm, walg) > 0
    ]
    seen = dict.fromkeys(frontier)
    for _ in range(depth):
        nxt = []
        for c in frontier:
            for c2, w in transition_distribution(c, pm, walg).items():
                if w > 0 and c2 not in seen:
                    seen[c2] = None
                    nxt.append(c2)
        frontier = nxt
    return list(seen)


# ---------------------------------------------------------------------------
# runs


def run_cr(
    walg: WrappedAlgorithm,
    pm: ProbModel,
    rng: CounterRng,
    horizon: int,
    stop_on_all_decided: bool = True,
    scope=None,
    keep: bool = True,
    observers=(),
    initial: CRConfig | None = None,
) -> Run | CRConfig:
    """Alternate sampling and application for up to ``horizon`` steps.

    Stops early once every process in ``scope`` (all by default) has decided.
    ``observers`` are called as ``obs(i, c, l, c2)`` per step.  With
    ``keep=False`` only the last configuration is returned.
    """
    c = initial if initial is not None else initial_config(pm, walg, rng)
    scope = list(pids(walg.n)) if scope is None else sorted(scope)
    configs, labels = [c], []
    for i in range(horizon):
        if stop_on_all_decided and all(c.s[p - 1].st.dec is not BOTTOM for p in scope):
            break
        l = sample_label(c, pm, rng, walg)
        c2 = cr_apply(c, l, walg)
        for obs in observers:
            obs(i, c, l, c2)
        if keep:
            configs.append(c2)
            labels.append(l)
        c = c2
    return Run(configs, labels) if keep else c


# ---------------------------------------------------------------------------
# stable periods


def _window_ok(configs, labels, i, delta, C, n) -> bool:
    down = frozenset(pids(n)) - C
    if i + delta + 1 >= len(configs):
        return False
    for j in range(i + 1, i + delta + 2):
        if configs[j].F != down:
            return False
    for j in range(i + 1, i + delta + 1):
        l = labels[j]
        for p in C:
            row = l.rmsgs[p - 1]
            got = {q for q, _ in row}
            if not C <= got:
                return False
    return True


def detect_stable_periods(run: Run, delta: int, sel: Callable) -> list:
    """Start indices ``i`` whose next ``delta + 1`` configurations form a selective stable period for ``sel(c_i)``."""
    n = len(run.configs[0].s)
    return [
        i for i in range(len(run.configs))
        if _window_ok(run.configs, run.labels, i, delta, frozenset(sel(run.configs[i])), n)
    ]


class StablePeriodMonitor:
    """Online version of :func:`detect_stable_periods`; feed it every step in order."""

    def __init__(self, n: int, delta: int, sel: Callable):
        self.n, self.delta, self.sel = n, delta, sel
        self.open: list = []  # [start, C, configs checked]
        self.found: list = []
        self._index = 0

    def __call__(self, i, c, l, c2):
        if i == 0:
            self.open.append([0, frozenset(self.sel(c)), 0])
        # a step from c_i to c_{i+1}: c_{i+1} is config number k = 1..delta+1 of windows started at i+1-k
        still = []
        for w in self.open:
            start, C, k = w
            down = frozenset(pids(self.n)) - C
            ok = True
            if k >= 1:  # this label lies inside the window
                ok = all(C <= {q for q, _ in l.rmsgs[p - 1]} for p in C)
            ok = ok and c2.F == down
            if not ok:
                continue
            w[2] = k + 1
            if w[2] == self.delta + 1:
                self.found.append(start)
            else:
                still.append(w)
        self.open = still
        self.open.append([i + 1, frozenset(self.sel(c2)), 0])

    @property
    def count(self) -> int:
        return len(self.found)


def stable_window_probability(c: CRConfig, C, delta: int, pm: ProbModel, walg: WrappedAlgorithm) -> float:
    """Exact probability that ``c`` starts a selective stable period for ``C`` of length ``delta``."""
    n = walg.n
    C = frozenset(C)
    down = frozenset(pids(n)) - C
    total = 0.0
    for c1, w1 in transition_distribution(c, pm, walg).items():
        if c1.F != down or w1 == 0.0:
            continue
        w, cur = w1, c1
        for _ in range(delta):
            # every live channel is inside C, so the successor is forced
            rows = {p: {q: wrapped_send(cur.s[q - 1], n)[p] for q in C} for p in C}
            l = CRLabel.build(rows, down, n)
            w *= label_weight(cur, l, pm, n)
            cur = cr_apply(cur, l, walg)
        total += w
    return total


def eps_ss(n: int, c_size: int, delta: int, eps_f: float, eps_net: float) -> float:
    recover = eps_f ** c_size * (1 - eps_f) ** (n - c_size)
    return recover * (eps_net ** (c_size * c_size) * recover) ** delta
