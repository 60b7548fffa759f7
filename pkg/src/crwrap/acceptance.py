"""The bundled acceptance suite: one pass/fail verdict per criterion.

Experiments come from the INI files in ``crwrap/specs``; the remaining
criteria are exhaustive or generated checks run directly on the library.
"""

from __future__ import annotations

import itertools
import math
import random
import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .crsim import ProbModel, Constant, cr_apply, reachable_configs, sample_label, transition_distribution
from .experiment import load_spec, run_experiment
from .model import BOTTOM, CoreState, is_subword, pids
from .rng import CounterRng
from .toys import NullAlgorithm
from .verify import CHECKERS, check_detour_instance, one_changes
from .wrapper import WrappedAlgorithm, all_subsets


@dataclass
class Criterion:
    number: int
    title: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.number:>2} {self.title}: {self.detail} ({self.seconds:.1f}s)"


def spec_path(name: str) -> Path:
    return Path(str(resources.files("crwrap") / "specs" / f"{name}.ini"))


class Suite:
    """Runs the criteria, sharing experiment results between them."""

    def __init__(self, workdir=None, jobs: int | None = None):
        self.workdir = Path(workdir or tempfile.mkdtemp(prefix="crwrap-acceptance-"))
        self.jobs = jobs
        self._cache: dict = {}

    def experiment(self, name: str, tag: str = "") -> dict:
        key = name + tag
        if key not in self._cache:
            out = self.workdir / key
            status, verdict = run_experiment(load_spec(spec_path(name)), out, self.jobs)
            self._cache[key] = {"status": status, "verdict": verdict, "csv": (out / "summary.csv").read_bytes()}
        return self._cache[key]

    # -- criteria -------------------------------------------------------------

    def c1(self):
        v = self.experiment("safety")["verdict"]
        return v["violations"] == 0, f"{v['runs']} runs, {v['violations']} safety violations"

    def c2(self):
        v = self.experiment("superword")["verdict"]
        ok = v["certificate_failures"] == 0 and v["violations"] == 0 and v["runs"] == 100
        return ok, f"{v['runs']} runs, {v['certificate_failures']} failed certificates"

    def c3(self):
        a = self.experiment("safety")["verdict"]
        b = self.experiment("hostile")["verdict"]
        ok = a["decided_fraction"] == 1.0 and b["decided_fraction"] >= 0.99 and b["violations"] == 0
        return ok, (
            f"benign decided_fraction={a['decided_fraction']:.4f}; hostile decided_fraction="
            f"{b['decided_fraction']:.4f}, max steps {b['termination'].get('max')}, {b['violations']} violations"
        )

    def _null_setup(self):
        walg = WrappedAlgorithm(NullAlgorithm(2))
        pm = ProbModel(2, Constant(0.7), Constant(0.9), 0.5, 0.05)
        return walg, pm, reachable_configs(walg, pm, 3)

    def c4(self, draws: int = 100_000):
        walg, pm, configs = self._null_setup()
        worst = max(abs(sum(transition_distribution(c, pm, walg).values()) - 1.0) for c in configs)
        worst_z = 0.0
        sources = [c for c in configs if c.n == 0]
        for c in sources:
            dist = transition_distribution(c, pm, walg)
            counts: dict = {}
            for seed in range(draws):
                c2 = cr_apply(c, sample_label(c, pm, CounterRng(seed), walg), walg)
                counts[c2] = counts.get(c2, 0) + 1
            if set(counts) - set(dist):
                return False, "sampler produced a successor with zero probability"
            for c2, p in dist.items():
                se = math.sqrt(p * (1 - p) / draws)
                z = abs(counts.get(c2, 0) / draws - p) / se if se > 0 else 0.0
                worst_z = max(worst_z, z)
        ok = worst <= 1e-9 and worst_z <= 3.0
        return ok, (
            f"{len(configs)} reachable configs, max |sum-1|={worst:.1e}; "
            f"{len(sources)} sources x {draws} draws, max deviation {worst_z:.2f} SE"
        )

    def c5(self):
        walg, pm, configs = self._null_setup()
        n = walg.n
        checked = failed = 0
        for c in configs:
            dist = transition_distribution(c, pm, walg)
            for C in all_subsets(n):
                if not C:
                    continue
                down = frozenset(pids(n)) - C
                got = sum(w for c2, w in dist.items() if c2.F == down)
                bound = pm.eps_f ** len(C) * (1 - pm.eps_f) ** (n - len(C))
                checked += 1
                failed += not got > bound
        return failed == 0, f"{checked} (config, C) pairs with C non-empty, {failed} below the bound"

    def c6(self):
        cs = self.experiment("bounds-cs")["verdict"]["bound_reports"]
        cr = self.experiment("bounds-cr")["verdict"]["bound_reports"]
        b5 = self.experiment("b5-scenario")["verdict"]["bound_reports"]["b5"]
        gap = max(cs["b4_max_gap"], cr["b4_max_gap"])
        b3 = max(cs["b3_max"], cr["b3_max"])
        ok = gap <= 12 and b3 <= 1 and b5["ok"] == 200
        return ok, f"b4_max_gap={gap} (cs {cs['b4_max_gap']}, cr {cr['b4_max_gap']}), messages per round <= {b3}, B5 {b5}"

    def c7(self, pairs: int = 1000):
        rng = random.Random(7)
        results = {}
        for prop in CHECKERS:
            passed = 0
            for _ in range(pairs):
                u = _violating_word(rng, prop)
                w = _superword(rng, u)
                passed += check_detour_instance(u, w, prop) is None
            results[prop] = passed
        a, b = CoreState(0), CoreState(1)
        u = [(a, a), (b, b)]
        w = [(a, a), (b, a), (b, b)]
        demo = one_changes(u) is not None and one_changes(w) is None and is_subword(u, w) and u[0] == w[0]
        ok = all(v == pairs for v in results.values()) and demo
        return ok, ", ".join(f"{k} {v}/{pairs}" for k, v in results.items()) + f"; one-changes repair {'shown' if demo else 'FAILED'}"

    def c8(self, max_len: int = 6):
        total, disagree = exhaustive_checker_comparison(max_len)
        return disagree == 0, f"{total} traces x 3 checkers, {disagree} disagreements"

    def c9(self):
        v = self.experiment("nastier")["verdict"]
        ok = v["decided_fraction"] == 1.0 and v["violations"] == 0
        per = v["termination"]["per_process"]
        return ok, f"{v['runs']} runs, C decided_fraction={v['decided_fraction']:.4f} {per}, {v['violations']} violations"

    def c10(self):
        names = ("superword", "bounds-cs", "b5-scenario", "nastier")
        same = []
        for name in names:
            first = self.experiment(name)["csv"]
            again = self.experiment(name, tag="-rerun")["csv"]
            same.append(first == again)
        serial = self.experiment("superword")["csv"]
        saved, self.jobs = self.jobs, 2
        try:
            pooled = self.experiment("superword", tag="-pool")["csv"]
        finally:
            self.jobs = saved
        ok = all(same) and pooled == serial
        return ok, f"{sum(same)}/{len(names)} specs byte-identical on re-run; pooled run {'identical' if pooled == serial else 'DIFFERS'}"


TITLES = {
    1: "safety preservation",
    2: "superword certificates",
    3: "probabilistic termination",
    4: "transition probabilities",
    5: "selective recovery bound",
    6: "CT bounds",
    7: "detour irreparability",
    8: "checker vs brute force",
    9: "nastier environment",
    10: "determinism",
}


def run_all(only=None, workdir=None, jobs: int | None = None, suite: Suite | None = None) -> list:
    suite = suite or Suite(workdir, jobs)
    out = []
    for k in sorted(only or TITLES):
        t0 = time.time()
        passed, detail = getattr(suite, f"c{k}")()
        out.append(Criterion(k, TITLES[k], bool(passed), detail, time.time() - t0))
    return out


# ---------------------------------------------------------------------------
# generators and brute-force formulas


def _random_letter(rng: random.Random, inputs, values):
    return tuple(CoreState(v, rng.choice((BOTTOM,) + values)) for v in inputs)


def _violating_word(rng: random.Random, prop: str, values=(0, 1, 2)) -> list:
    checker = CHECKERS[prop]
    while True:
        n = rng.choice((2, 3))
        inputs = tuple(rng.choice(values) for _ in range(n))
        length = rng.randint(1, 6)
        u = [_random_letter(rng, inputs, values) for _ in range(length)]
        if checker(u) is not None:
            return u


def _superword(rng: random.Random, u: list, values=(0, 1, 2)) -> list:
    """Keep the first letter, then stutter or insert arbitrary letters around the rest."""
    inputs = tuple(x.inp for x in u[0])
    w = [u[0]]
    for x in u[1:] + [None]:
        for _ in range(rng.randint(0, 2)):
            w.append(rng.choice((w[-1], _random_letter(rng, inputs, values))))
        if x is not None:
            w.append(x)
    return w


def _formulas(dec: np.ndarray, inp: np.ndarray) -> dict:
    """Direct evaluation of the three properties over a batch of traces.

    ``dec`` has shape (traces, length, processes) with -1 for undecided;
    ``inp`` has shape (traces, processes).
    """
    decided = dec >= 0
    valid_value = (dec[..., None] == inp[:, None, None, :]).any(-1)
    validity = (~decided | valid_value).all(axis=(1, 2))
    a = dec[:, :, None, :]
    b = dec[:, None, :, :]
    later = np.triu(np.ones((dec.shape[1], dec.shape[1]), bool))[None, :, :, None]
    integrity = ~((a >= 0) & later & (a != b)).any(axis=(1, 2, 3))
    flat = dec.reshape(dec.shape[0], -1)
    both = (flat[:, :, None] >= 0) & (flat[:, None, :] >= 0)
    agreement = ~(both & (flat[:, :, None] != flat[:, None, :])).any(axis=(1, 2))
    return {"validity": validity, "integrity": integrity, "agreement": agreement}


def exhaustive_checker_comparison(max_len: int = 6, n: int = 2, inputs=(0, 1), decisions=(0, 1)) -> tuple[int, int]:
    """Every trace up to ``max_len`` letters: inputs fixed by the first letter, decisions in {undecided} + ``decisions``."""
    codes = (-1,) + tuple(decisions)
    total = disagree = 0
    for inp in itertools.product(inputs, repeat=n):
        states = [{d: CoreState(v, BOTTOM if d < 0 else d) for d in codes} for v in inp]
        letters = {ds: tuple(states[p][d] for p, d in enumerate(ds)) for ds in itertools.product(codes, repeat=n)}
        keys = list(letters)
        for length in range(1, max_len + 1):
            combos = np.array(list(itertools.product(range(len(keys)), repeat=length)), dtype=np.int64)
            dec = np.array(keys, dtype=np.int64)[combos]
            expect = _formulas(dec, np.tile(np.array(inp), (len(combos), 1)))
            for t, row in enumerate(combos.tolist()):
                trace = [letters[keys[k]] for k in row]
                for name, checker in CHECKERS.items():
                    disagree += (checker(trace) is None) != bool(expect[name][t])
            total += len(combos)
    return total, disagree
