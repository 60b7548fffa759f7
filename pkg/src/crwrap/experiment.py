"""Experiment specs, seeded sweeps, replay and exhaustive enumeration.

A spec is an INI document::

    [experiment]
    model = cr-prob          # crash-stop | cr-nondet | cr-prob
    algorithm = ct
    wrapper = on
    N = 3, 4, 5              # several values cycle with the seed
    seeds = 0..499           # inclusive range or comma list
    horizon = 100000
    checks = validity, integrity, agreement, bounds

    [net]
    family = constant
    value = 0.9

    [fp]
    family = constant
    value = 0.9

    [model]
    eps_net = 0.5
    eps_f = 0.05

    [outputs]
    dir = out
"""

from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import os
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .crashstop import FairScheduler, FdEmulator, CrashStopConfig, cs_run_valid
from .crsim import (
    FAMILIES, ModelError, ProbModel, StablePeriodMonitor, TooLarge, reachable_configs,
    initial_config, run_cr, transition_distribution,
)
from .ct import ChandraToueg
from .model import BOTTOM, Run, letter_record, pids, read_trace, stable_digest
from .rng import CounterRng
from .toys import MajorityMin, NullAlgorithm
from .verify import (
    SAFETY, BoundsMonitor, RunSummary, SafetyMonitor, check_b5, check_safety, fastest,
    reconstruct_superword, termination_stats,
)
from .wrapper import WrappedAlgorithm, all_subsets

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CSV_COLUMNS = (
    "schema_version", "seed", "model", "N", "decided_fraction", "first_decision_step",
    "last_decision_step", "violations", "stable_periods", "b4_max_gap", "b5_ok",
)
MODELS = ("crash-stop", "cr-nondet", "cr-prob")
ALGORITHMS = {"ct": ChandraToueg, "null": NullAlgorithm, "majority-min": MajorityMin}
KNOWN_CHECKS = SAFETY + ("superword", "bounds")


class SpecError(ValueError):
    def __init__(self, message, line=None, field_name=None):
        self.line = line
        self.field_name = field_name
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field_name:
            where.append(field_name)
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


@dataclass
class ExperimentSpec:
    model: str = "cr-prob"
    algorithm: str = "ct"
    wrapper: bool = True
    n: tuple = (3,)
    n_f: int | None = None
    values: tuple = (0, 1, 2)
    seeds: tuple = (0,)
    horizon: int = 1000
    stop_on_decided: bool = True
    checks: tuple = SAFETY
    delta: int = 1
    gst: int = 0
    crash_plan: tuple = ()
    net: object = None
    fp: object = None
    eps_net: float = 0.5
    eps_f: float = 0.05
    mode: str = "standard"
    correct: tuple = ()
    cutoffs: dict = field(default_factory=dict)
    out_dir: str = "out"
    traces: bool = False
    verbose: bool = False
    name: str = "experiment"

    def n_for(self, seed: int) -> int:
        return self.n[seed % len(self.n)]

    def algorithm_for(self, n: int):
        cls = ALGORITHMS[self.algorithm]
        if cls is ChandraToueg:
            return cls(n, self.n_f, values=self.values)
        if cls is MajorityMin:
            return cls(n, self.n_f, values=self.values)
        return cls(n, self.n_f or 0)

    def prob_model(self, n: int) -> ProbModel:
        return ProbModel(
            n, self.net, self.fp, self.eps_net, self.eps_f,
            mode=self.mode,
            correct=frozenset(self.correct) if self.mode == "nastier" else None,
            cutoffs=dict(self.cutoffs),
            n_f=self.n_f,
            strict=self.model == "cr-prob",
        )

    def validate(self):
        if self.model not in MODELS:
            raise SpecError(f"unknown model {self.model!r}", field_name="experiment.model")
        if self.algorithm not in ALGORITHMS:
            raise SpecError(f"unknown algorithm {self.algorithm!r}", field_name="experiment.algorithm")
        if self.wrapper and self.model == "crash-stop":
            raise SpecError("wrapper=on needs a crash-recovery model", field_name="experiment.wrapper")
        if not self.wrapper and self.model != "crash-stop":
            raise SpecError("crash-recovery models run wrapped algorithms only", field_name="experiment.wrapper")
        for n in self.n:
            if n < 1:
                raise SpecError("N must be positive", field_name="experiment.N")
            if self.n_f is not None and not self.n_f < n:
                raise SpecError(f"N_f={self.n_f} must be below N={n}", field_name="experiment.N_f")
        bad = set(self.checks) - set(KNOWN_CHECKS)
        if bad:
            raise SpecError(f"unknown checks {sorted(bad)}", field_name="experiment.checks")
        if self.model != "crash-stop":
            if self.net is None or self.fp is None:
                raise SpecError("crash-recovery models need [net] and [fp] sections")
            for n in set(self.n):
                try:
                    self.prob_model(n)
                except ModelError as e:
                    raise SpecError(str(e), field_name="model") from None
        if self.horizon < 0:
            raise SpecError("horizon must be non-negative", field_name="experiment.horizon")


# ---------------------------------------------------------------------------
# parsing


def _int_list(text: str) -> tuple:
    out = []
    for part in re.split(r"[,\s]+", text.strip()):
        if not part:
            continue
        if ".." in part:
            a, b = part.split("..")
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    return tuple(out)


def _pairs(text: str, conv=int) -> tuple:
    out = []
    for part in re.split(r"[,\s]+", text.strip()):
        if part:
            a, b = part.split(":")
            out.append((int(a), conv(b)))
    return tuple(out)


def _family(sec) -> object:
    kind = sec.get("family", "constant")
    if kind not in FAMILIES:
        raise ValueError(f"unknown family {kind!r}")
    if kind == "constant":
        return FAMILIES[kind](float(sec["value"]))
    if kind == "schedule":
        return FAMILIES[kind](_pairs(sec["points"], float))
    return FAMILIES[kind](
        float(sec["mean"]), float(sec["amplitude"]), float(sec["period"]), float(sec.get("phase", "0"))
    )


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for i, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        m = re.match(r"\[(.+)\]", s)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return i
            continue
        if current == section and key is not None and re.match(rf"{re.escape(key)}\s*[=:]", s, re.I):
            return i
    return None


def parse_spec(text: str, name: str = "experiment") -> ExperimentSpec:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else None
        raise SpecError("malformed line", line=lineno) from None
    except configparser.Error as e:
        raise SpecError(str(e).splitlines()[0], line=getattr(e, "lineno", None)) from None
    if not cp.has_section("experiment"):
        raise SpecError("missing [experiment] section")
    spec = ExperimentSpec(name=name)
    ex = cp["experiment"]

    def field_(section, key, conv, attr=None):
        sec = cp[section] if cp.has_section(section) else None
        if sec is None or key not in sec:
            return
        try:
            setattr(spec, attr or key, conv(sec[key]))
        except (ValueError, KeyError) as e:
            raise SpecError(f"bad value {sec[key]!r} ({e})", _line_of(text, section, key), f"{section}.{key}") from None

    def boolean(v):
        if v.lower() in ("on", "yes", "true", "1"):
            return True
        if v.lower() in ("off", "no", "false", "0"):
            return False
        raise ValueError("expected on/off")

    field_("experiment", "model", str.strip)
    field_("experiment", "algorithm", str.strip)
    field_("experiment", "wrapper", boolean)
    field_("experiment", "n", lambda v: _int_list(v))
    field_("experiment", "n_f", int)
    field_("experiment", "values", _int_list)
    field_("experiment", "seeds", _int_list)
    field_("experiment", "horizon", lambda v: int(float(v)))
    field_("experiment", "stop_on_decided", boolean)
    field_("experiment", "checks", lambda v: tuple(x for x in re.split(r"[,\s]+", v.strip()) if x))
    field_("experiment", "delta", int)
    field_("experiment", "gst", int)
    field_("experiment", "crash_plan", _pairs)
    field_("model", "eps_net", float)
    field_("model", "eps_f", float)
    field_("model", "mode", str.strip)
    field_("model", "correct", _int_list)
    field_("model", "cutoffs", lambda v: dict(_pairs(v)))
    field_("outputs", "dir", str.strip, "out_dir")
    field_("outputs", "traces", boolean)
    field_("outputs", "verbose", boolean)
    for sec in ("net", "fp"):
        if cp.has_section(sec):
            try:
                setattr(spec, sec, _family(cp[sec]))
            except (ValueError, KeyError) as e:
                raise SpecError(f"bad probability family ({e})", _line_of(text, sec, None), sec) from None
    if not spec.seeds:
        raise SpecError("empty seed list", _line_of(text, "experiment", "seeds"), "experiment.seeds")
    try:
        spec.validate()
    except SpecError as e:
        section, _, key = (e.field_name or "experiment").partition(".")
        line = _line_of(text, section, key or None) or _line_of(text, section, None)
        raise SpecError(str(e).split(": ", 1)[-1], line, e.field_name) from None
    return spec


def load_spec(path) -> ExperimentSpec:
    path = Path(path)
    return parse_spec(path.read_text(), name=path.stem)


# ---------------------------------------------------------------------------
# one seed


def _selector(core):
    def sel(c):
        states = tuple(w.st for w in c.s)
        if any(x.dec is not BOTTOM for x in states):
            return frozenset(pids(core.n))
        return frozenset(fastest(states, core.n_c, core.progress))
    return sel


def _label_digest(l) -> str:
    return stable_digest((tuple(tuple((q, repr(m)) for q, m in row) for row in l.rmsgs), l.fails)) if hasattr(l, "rmsgs") \
        else stable_digest((l.p, repr(l.rmsg), l.fails, l.fdo))


class _TraceWriter:
    def __init__(self, path, verbose):
        self.fh = open(path, "w")
        self.verbose = verbose
        self.i = 0

    def write(self, letter, label=None):
        extra = {} if label is None else {"label_digest": _label_digest(label)}
        self.fh.write(json.dumps(letter_record(self.i, letter, self.verbose, **extra), sort_keys=True) + "\n")
        self.i += 1

    def close(self):
        self.fh.close()


def run_seed(spec: ExperimentSpec, seed: int, out_dir: str | None = None) -> dict:
    n = spec.n_for(seed)
    core = spec.algorithm_for(n)
    safety = SafetyMonitor([c for c in spec.checks if c in SAFETY])
    consts = core.bounds() if hasattr(core, "bounds") and "bounds" in spec.checks else None
    bounds = BoundsMonitor(core, consts) if consts is not None else None
    decided: dict = {}
    writer = None
    if spec.traces and out_dir is not None:
        writer = _TraceWriter(Path(out_dir) / f"trace-{seed}.jsonl", spec.verbose)

    def see(i, letter, label=None):
        safety.feed(letter)
        for p, x in enumerate(letter, start=1):
            if x.dec is not BOTTOM and p not in decided:
                decided[p] = i
        if writer:
            writer.write(letter, label)

    result = {"seed": seed, "model": spec.model, "N": n}
    cert = None
    stable = None
    b5 = "n/a"
    if spec.model == "crash-stop":
        scope = list(pids(n))
        sched = FairScheduler(core, FdEmulator(n, gst=spec.gst, seed=seed), spec.crash_plan)
        states = core.initial_states()
        c = CrashStopConfig(tuple(states[seed % len(states)]))
        configs, labels = [c], []
        see(0, c.s)
        if bounds:
            bounds.config(c.s)
        for i in range(spec.horizon):
            if spec.stop_on_decided and all(c.s[p - 1].dec is not BOTTOM for p in pids(n) if p not in c.F):
                break
            out = sched.step(i, c)
            if out is None:
                break
            l, c2 = out
            if bounds:
                bounds.sent(l.p, c.s[l.p - 1], {q: m for (q, s_, m) in c2.M - c.M if s_ == l.p})
                bounds.config(c2.s)
            configs.append(c2)
            labels.append(l)
            see(i + 1, c2.s, l)
            c = c2
        run = Run(configs, labels)
        valid = cs_run_valid(run, core, gst=spec.gst)
        result["cs_run_valid"] = valid.ok
        if not valid.ok:
            result["cs_violation"] = {"index": valid.index, "kind": valid.kind}
        if consts is not None:
            b5, detail = check_b5(run, core, consts, spec.gst)
            result["b5_detail"] = detail
        steps = len(labels)
        scope = [p for p in pids(n) if p not in run.last().F]
    else:
        walg = WrappedAlgorithm(core)
        pm = spec.prob_model(n)
        scope = sorted(spec.correct) if spec.mode == "nastier" else list(pids(n))
        observers = []
        stable = StablePeriodMonitor(n, spec.delta, _selector(core))
        observers.append(stable)
        if bounds:
            observers.append(bounds.cr_step)
        observers.append(lambda i, c, l, c2: see(i + 1, tuple(w.st for w in c2.s), l))
        rng = CounterRng(seed)
        c0 = initial_config(pm, walg, rng)
        see(0, tuple(w.st for w in c0.s))
        if bounds:
            bounds.config(tuple(w.st for w in c0.s))
        keep = "superword" in spec.checks
        out = run_cr(walg, pm, rng, spec.horizon, spec.stop_on_decided, scope=scope, keep=keep,
                     observers=observers, initial=c0)
        if keep:
            cert = reconstruct_superword(out, core)
            steps = len(out.labels)
        else:
            steps = out.n
    if writer:
        writer.close()
    viol = safety.violations()
    result.update(
        steps=steps,
        decision_steps={p: decided.get(p) for p in pids(n)},
        scope=scope,
        violations=[v.record(seed) for v in viol],
        stable_periods=stable.count if stable is not None else 0,
        b4_max_gap=bounds.b4_max_gap if bounds else None,
        b3_max=bounds.b3_max if bounds else None,
        b5=b5,
    )
    if cert is not None:
        result["certificate"] = {k: v for k, v in cert.record().items() if k != "embedding"}
    return result


def csv_row(spec: ExperimentSpec, r: dict) -> list:
    scope = r["scope"]
    steps = [r["decision_steps"][p] for p in scope if r["decision_steps"][p] is not None]
    frac = len(steps) / len(scope) if scope else 1.0
    return [
        SCHEMA_VERSION, r["seed"], r["model"], r["N"], f"{frac:.6g}",
        min(steps) if steps else "", max(steps) if steps else "",
        len(r["violations"]), r["stable_periods"],
        "" if r["b4_max_gap"] is None else r["b4_max_gap"], r["b5"],
    ]


# ---------------------------------------------------------------------------
# sweeps


def _job(args):
    spec, seed, out_dir = args
    return run_seed(spec, seed, out_dir)


def default_jobs() -> int:
    return int(os.environ.get("CRWRAP_JOBS", "1"))


def run_experiment(spec: ExperimentSpec, out_dir=None, jobs: int | None = None) -> tuple[int, dict]:
    """Run every seed, write summary.csv, verdict.json and meta.json; return (exit status, verdict)."""
    out_dir = Path(out_dir or os.environ.get("CRWRAP_OUT") or spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = jobs or default_jobs()
    started = time.time()
    args = [(spec, s, str(out_dir)) for s in spec.seeds]
    if jobs <= 1 or len(args) == 1:
        results = [_job(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_job, args, chunksize=max(1, len(args) // (4 * jobs))))
    results.sort(key=lambda r: r["seed"])

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in results:
        w.writerow(csv_row(spec, r))
    (out_dir / "summary.csv").write_text(buf.getvalue())

    summaries = [RunSummary(r["seed"], {p: r["decision_steps"][p] for p in r["scope"]}, spec.horizon, r["steps"])
                 for r in results]
    term = termination_stats(summaries)
    violations = sum(len(r["violations"]) for r in results)
    cert_fail = sum(1 for r in results if "certificate" in r and not r["certificate"]["ok"])
    cs_invalid = sum(1 for r in results if r.get("cs_run_valid") is False)
    gaps = [r["b4_max_gap"] for r in results if r["b4_max_gap"] is not None]
    verdict = {
        "schema_version": SCHEMA_VERSION,
        "spec": spec.name,
        "runs": len(results),
        "violations": violations,
        "violation_records": [v for r in results for v in r["violations"]],
        "certificate_failures": cert_fail,
        "cs_run_invalid": cs_invalid,
        "decided_fraction": term["decided_fraction"],
        "termination": term,
        "bound_reports": {
            "b3_max": max((r["b3_max"] for r in results if r["b3_max"] is not None), default=None),
            "b4_max_gap": max(gaps, default=None),
            "b5": {k: sum(1 for r in results if r["b5"] == k) for k in ("ok", "violated", "pending", "n/a")},
        },
        "stable_periods": sum(r["stable_periods"] for r in results),
    }
    (out_dir / "verdict.json").write_text(json.dumps(verdict, indent=2, sort_keys=True) + "\n")
    meta = {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "elapsed_seconds": round(time.time() - started, 3),
        "jobs": jobs,
        "version": __version__,
    }
    (out_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    status = 1 if violations or cert_fail or cs_invalid else 0
    return status, verdict


# ---------------------------------------------------------------------------
# replay and enumeration


def replay(trace_file, checks=SAFETY) -> dict:
    trace = read_trace(trace_file)
    viol = check_safety(trace, checks)
    return {
        "trace": str(trace_file),
        "letters": len(trace),
        "checks": list(checks),
        "violations": [v.record() for v in viol],
    }


def enumerate_spec(spec: ExperimentSpec, out_dir=None, depth: int = 3) -> tuple[int, dict]:
    """Exhaustive transition probabilities for small instances (N <= 2)."""
    out_dir = Path(out_dir or os.environ.get("CRWRAP_OUT") or spec.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    n = spec.n[0]
    if n > 2:
        raise TooLarge(f"enumeration mode is limited to N <= 2, got N={n}")
    core = spec.algorithm_for(n)
    walg = WrappedAlgorithm(core)
    pm = spec.prob_model(n)
    configs = reachable_configs(walg, pm, depth)
    index = {c: i for i, c in enumerate(configs)}
    rows = []
    worst_norm = 0.0
    recovery_fail = []
    for c in configs:
        dist = transition_distribution(c, pm, walg)
        worst_norm = max(worst_norm, abs(sum(dist.values()) - 1.0))
        for c2, w in sorted(dist.items(), key=lambda kv: index.get(kv[0], len(index))):
            rows.append((index[c], index.get(c2, ""), stable_digest(repr(c2)), f"{w:.12g}"))
        for C in all_subsets(n):
            if not C:
                continue
            down = frozenset(pids(n)) - C
            got = sum(w for c2, w in dist.items() if c2.F == down)
            bound = pm.eps_f ** len(C) * (1 - pm.eps_f) ** (n - len(C))
            if not got > bound:
                recovery_fail.append({"config": index[c], "C": sorted(C), "prob": got, "bound": bound})
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("source", "target", "target_digest", "probability"))
    w.writerows(rows)
    (out_dir / "transitions.csv").write_text(buf.getvalue())
    report = {
        "configs": len(configs),
        "depth": depth,
        "max_normalization_error": worst_norm,
        "selective_recovery_failures": recovery_fail,
    }
    (out_dir / "enumeration.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    status = 0 if worst_norm <= 1e-9 and not recovery_fail else 1
    return status, report
