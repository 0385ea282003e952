"""Metrics, single-thread timing and the three-method comparison harness."""
from __future__ import annotations

import csv
import gc
import io
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_info, threadpool_limits

from . import persist
from .channel.scenario import SCENARIOS, normalize_scenario
from .checkpoint import Checkpoint, load_checkpoint
from .errors import ConfigError, ContractError, StateError
from .model import Regressor, count_params
from .preprocess import Dataset, merge
from .router import AdaptiveEnsemble, Router, method2_select, router_param_count

METHODS = ("method1", "method2", "method3")
ADAPTIVE = {"method1": True, "method2": False, "method3": True}
TIMING_PROTOCOL = "single thread, garbage collector paused, warm-up pass excluded, median of 5 passes, one snapshot per call"


def mee(predictions, truths) -> float:
    """Mean Euclidean distance in meters between paired (x, y) points."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape != t.shape:
        raise ContractError(f"mee needs two equal-length lists of (x, y) pairs, got {p.shape} and {t.shape}")
    if len(p) == 0:
        raise ContractError("mee of an empty set is undefined")
    return float(np.mean(np.hypot(p[:, 0] - t[:, 0], p[:, 1] - t[:, 1])))


def router_accuracy(router, raw_cir, labels) -> float:
    """Fraction of samples routed to their true scenario.

    ``router`` is a Router (fed raw amplitudes) or any callable mapping the
    raw batch to class indices. Labels are indices or scenario ids.
    """
    labels = np.asarray([SCENARIOS.index(normalize_scenario(s)) if isinstance(s, str) else int(s)
                         for s in labels], dtype=np.int64)
    if len(labels) == 0:
        raise ContractError("router accuracy of an empty set is undefined")
    if len(raw_cir) != len(labels):
        raise ContractError(f"{len(raw_cir)} samples but {len(labels)} labels")
    pred = router.predict_raw(raw_cir) if isinstance(router, Router) else np.asarray(router(raw_cir))
    return float(np.mean(pred == labels))


# -- timing --------------------------------------------------------------------

def _single_thread_check():
    busy = [p for p in threadpool_info() if p.get("num_threads", 1) != 1]
    if busy:
        names = ", ".join(sorted({p.get("internal_api", "?") for p in busy}))
        raise StateError(f"timing requires a single thread but {names} still runs multi-threaded")


def _runner(predictor, raw_cir, batch):
    if isinstance(predictor, AdaptiveEnsemble):
        def run():
            predictor.reset()
            predictor.dispatch_stream(raw_cir)
    elif isinstance(predictor, Regressor):
        def run():
            for i in range(0, len(raw_cir), batch):
                predictor.predict_meters(raw_cir[i:i + batch], batch=batch)
    elif callable(predictor):
        def run():
            predictor(raw_cir)
    else:
        raise ContractError(f"cannot time a {type(predictor).__name__}")
    return run


def time_passes(predictor, raw_cir, repeats: int = 5, batch: int = 1) -> tuple[float, list[float]]:
    """(warm-up seconds, timed pass seconds) for full passes over ``raw_cir``.

    The cyclic garbage collector is paused while timing, as ``timeit`` does.
    """
    run = _runner(predictor, raw_cir, batch)
    gc_was_on = gc.isenabled()
    gc.collect()
    gc.disable()
    try:
        with threadpool_limits(limits=1):
            _single_thread_check()
            t0 = time.perf_counter()
            run()
            warm = time.perf_counter() - t0
            passes = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                run()
                passes.append(time.perf_counter() - t0)
    finally:
        if gc_was_on:
            gc.enable()
    return warm, passes


def measure_test_time(predictor, raw_cir, repeats: int = 5, batch: int = 1) -> float:
    """Median single-thread wall clock of one pass over the test set (warm-up excluded)."""
    _, passes = time_passes(predictor, raw_cir, repeats, batch)
    return float(statistics.median(passes))


# -- comparison ------------------------------------------------------------------

@dataclass
class ComparisonReport:
    """Per-method MEE, parameter accounting and timings.

    ``methods[m]`` holds ``mee``, ``active_params`` and ``test_time_s`` keyed
    by scenario, plus ``total_params``, ``adaptive`` and ``components``.
    """

    methods: dict
    router_accuracy: float | None = None
    switch_events: int | None = None
    meta: dict = field(default_factory=dict)

    def active_reduction(self, scenario: str) -> float:
        total = self.methods["method1"]["total_params"]
        return 1.0 - self.methods["method3"]["active_params"][scenario] / total

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "ComparisonReport":
        return cls(**obj)

    def to_csv(self) -> str:
        """Long-format CSV carrying every field (method, field, scenario, value)."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "field", "scenario", "value"])
        for m in sorted(self.methods):
            row = self.methods[m]
            for key in sorted(row):
                val = row[key]
                if isinstance(val, dict) and val:
                    for sid in sorted(val):
                        w.writerow([m, key, sid, json.dumps(val[sid])])
                else:
                    w.writerow([m, key, "", json.dumps(val)])
        w.writerow(["", "router_accuracy", "", json.dumps(self.router_accuracy)])
        w.writerow(["", "switch_events", "", json.dumps(self.switch_events)])
        for key in sorted(self.meta):
            w.writerow(["", "meta." + key, "", json.dumps(self.meta[key], sort_keys=True)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ComparisonReport":
        methods, meta, extra = {}, {}, {}
        for rec in csv.DictReader(io.StringIO(text)):
            val = json.loads(rec["value"])
            m, key, sid = rec["method"], rec["field"], rec["scenario"]
            if not m:
                if key.startswith("meta."):
                    meta[key[5:]] = val
                else:
                    extra[key] = val
            elif sid:
                methods.setdefault(m, {}).setdefault(key, {})[sid] = val
            else:
                methods.setdefault(m, {})[key] = val
        return cls(methods, extra.get("router_accuracy"), extra.get("switch_events"), meta)

    def table_rows(self) -> list[list[str]]:
        """One column per method; rows are per-scenario MEE, parameter count, adaptive flag, test time."""
        present = [m for m in METHODS if m in self.methods]
        rows = [[""] + [f"Method {m[-1]}" for m in present]]
        for sid in self.meta.get("scenarios", SCENARIOS):
            rows.append([f"{sid}, MEE (m)"] + [_fmt(self.methods[m]["mee"].get(sid), 2) for m in present])
        rows.append(["number of parameters"] +
                    [" + ".join(str(c) for c in self.methods[m]["components"]) for m in present])
        rows.append(["adaptive"] + ["+" if self.methods[m]["adaptive"] else "-" for m in present])
        ts = self.meta.get("time_scenario", "S1")
        rows.append([f"test time, {ts} (s)"] +
                    [_fmt(self.methods[m]["test_time_s"].get(ts), 3) for m in present])
        return rows

    def table_csv(self) -> str:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.table_rows())
        return buf.getvalue()

    def save(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        persist.atomic_write_text(directory / "report.json", persist.dumps(self.to_json()))
        persist.atomic_write_text(directory / "report.csv", self.to_csv())
        persist.atomic_write_text(directory / "table.csv", self.table_csv())
        return directory


def _fmt(v, digits):
    return "" if v is None else f"{v:.{digits}f}"


def _resolve(obj, kind: str, label: str, missing: list):
    if obj is None:
        missing.append(label)
        return None
    if isinstance(obj, Checkpoint):
        return obj.net
    if isinstance(obj, (Regressor, Router)):
        return obj
    try:
        return load_checkpoint(obj, kind=kind).net
    except ConfigError:
        missing.append(f"{label} ({obj})")
        return None


def test_sets(datasets) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Per-scenario (raw CIR, labels in meters) of the test lap."""
    if isinstance(datasets, Dataset):
        ds = datasets
    elif isinstance(datasets, dict):
        ds = merge(list(datasets.values()))
    else:
        ds = merge(list(datasets))
    out = {}
    for sid in ds.scenarios:
        idx = ds.indices("test", sid)
        if len(idx):
            out[sid] = (ds.cir[idx], ds.labels[idx].astype(np.float64))
    if not out:
        raise ContractError("no test-lap samples to evaluate")
    return out


def interleave(lengths: dict[str, int], block: int = 50) -> list[tuple[str, int]]:
    """Round-robin (scenario, index) order taking ``block`` snapshots per turn."""
    pos = {s: 0 for s in lengths}
    order = []
    while any(pos[s] < lengths[s] for s in lengths):
        for s in lengths:
            stop = min(pos[s] + block, lengths[s])
            order.extend((s, i) for i in range(pos[s], stop))
            pos[s] = stop
    return order


def _per_snapshot(model: Regressor, raw: np.ndarray) -> np.ndarray:
    return np.array([model.predict_meters(c[None], batch=1)[0] for c in raw], dtype=np.float64)


def _blank() -> dict:
    return {"mee": {}, "active_params": {}, "test_time_s": {}}


def method1_result(gen: Regressor, sets: dict, timed=(), repeats: int = 5) -> dict:
    """The generalized model on every test set."""
    n = count_params(gen.config)
    res = _blank()
    for sid, (raw, truth) in sets.items():
        res["mee"][sid] = mee(_per_snapshot(gen, raw), truth)
        res["active_params"][sid] = n
    for sid in timed:
        res["test_time_s"][sid] = measure_test_time(gen, sets[sid][0], repeats)
    res.update(total_params=n, components=[n], adaptive=ADAPTIVE["method1"])
    return res


def method2_result(registry: dict, sets: dict, declared: dict | None = None, timed=(),
                   repeats: int = 5) -> dict:
    """Manual switching: each test set runs the model of its declared scenario."""
    declared = declared or {k: k for k in sets}
    res = _blank()
    used = {}
    for key, (raw, truth) in sets.items():
        model = method2_select(declared[key], registry)
        used[normalize_scenario(declared[key])] = count_params(model.config)
        res["mee"][key] = mee(_per_snapshot(model, raw), truth)
        res["active_params"][key] = count_params(model.config)
    for key in timed:
        res["test_time_s"][key] = measure_test_time(method2_select(declared[key], registry),
                                                    sets[key][0], repeats)
    counts = {normalize_scenario(s): count_params(m.config) for s, m in registry.items()}
    res.update(total_params=sum(counts.values()), components=[counts[s] for s in sorted(counts)],
               adaptive=ADAPTIVE["method2"])
    return res


def method3_result(ensemble: AdaptiveEnsemble, sets: dict, block: int = 50, timed=(),
                   repeats: int = 5) -> tuple[dict, float, int]:
    """Router dispatch over the interleaved stream; returns (result, accuracy, switches)."""
    order = interleave({s: len(sets[s][0]) for s in sets}, block)
    stream = np.stack([sets[s][0][i] for s, i in order])
    ensemble.reset()
    pos, routed = ensemble.dispatch_stream(stream)
    switches = ensemble.stats.switches
    acc = float(np.mean([r == s for r, (s, _) in zip(routed, order)]))
    n_rtr = router_param_count(ensemble.router.config)
    counts = {s: count_params(m.config) for s, m in ensemble.specialists.items()}
    res = _blank()
    for sid, (_, truth) in sets.items():
        sel = [k for k, (s, _) in enumerate(order) if s == sid]
        res["mee"][sid] = mee(pos[sel], truth[[order[k][1] for k in sel]])
        res["active_params"][sid] = ensemble.active_param_count(sid)
    for sid in timed:
        res["test_time_s"][sid] = measure_test_time(ensemble, sets[sid][0], repeats)
    ensemble.reset()
    res.update(total_params=sum(counts.values()) + n_rtr,
               components=[counts[s] for s in sorted(counts)] + [n_rtr],
               adaptive=ADAPTIVE["method3"])
    return res, acc, int(switches)


def report_meta(sets: dict, repeats: int, time_scenario: str = "S1", **extra) -> dict:
    meta = {
        "scenarios": list(sets),
        "n_test": {s: int(len(sets[s][0])) for s in sets},
        "timing_protocol": TIMING_PROTOCOL.replace("median of 5", f"median of {repeats}"),
        "time_scenario": normalize_scenario(time_scenario),
    }
    meta.update(extra)
    return meta


def compare_methods(datasets, generalized, specialists: dict, router, method2: dict | None = None,
                    block: int = 50, timing_repeats: int = 5, time_scenarios=None,
                    time_scenario: str = "S1", smoothing_window: int = 1) -> ComparisonReport:
    """Evaluate Methods 1, 2 and 3 on every scenario's test lap.

    Method 2 uses ``method2`` models when given, otherwise the specialists
    (manual selection by the true scenario). Method 3 runs the router over
    the interleaved stream of all test laps. Every method predicts one
    snapshot per call, so the routed and manual paths execute identical
    arithmetic.
    """
    missing: list[str] = []
    gen = _resolve(generalized, "model", "generalized model", missing)
    rtr = _resolve(router, "router", "router", missing)
    sets = test_sets(datasets)
    given = {normalize_scenario(k): v for k, v in (specialists or {}).items()}
    spec = {sid: _resolve(given.get(sid), "model", f"{sid} specialist", missing) for sid in sets}
    m2 = {}
    if method2 is not None:
        given = {normalize_scenario(k): v for k, v in method2.items()}
        m2 = {sid: _resolve(given.get(sid), "model", f"{sid} method-2 model", missing) for sid in sets}
    if missing:
        raise ConfigError("missing checkpoint(s): " + ", ".join(missing))
    m2 = m2 or dict(spec)

    timed = list(sets) if time_scenarios is None else [normalize_scenario(s) for s in time_scenarios]
    ensemble = AdaptiveEnsemble(rtr, spec, smoothing_window)
    r3, acc, switches = method3_result(ensemble, sets, block, timed, timing_repeats)
    methods = {
        "method1": method1_result(gen, sets, timed, timing_repeats),
        "method2": method2_result(m2, sets, None, timed, timing_repeats),
        "method3": r3,
    }
    n_gen = methods["method1"]["total_params"]
    meta = report_meta(
        sets, timing_repeats, time_scenario,
        interleave_block=int(block), smoothing_window=int(smoothing_window),
        active_reduction={s: 1.0 - r3["active_params"][s] / n_gen for s in sets},
        configs={"method1": gen.config.tag,
                 "method2": {s: m.config.tag for s, m in m2.items()},
                 "method3": {s: m.config.tag for s, m in spec.items()},
                 "router": rtr.config.to_json()})
    return ComparisonReport(methods, acc, switches, meta)
