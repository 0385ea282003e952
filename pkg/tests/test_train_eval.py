import csv
import io
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from adaloc.channel.scenario import SCENARIOS
from adaloc.checkpoint import Checkpoint
from adaloc.errors import ConfigError, ContractError, DataError, TrainingError
from adaloc.evaluate import (
    ComparisonReport,
    compare_methods,
    interleave,
    measure_test_time,
    mee,
    router_accuracy,
    test_sets as split_test_sets,
    time_passes,
)
from adaloc.model import ModelConfig, Regressor, count_params, parse_arch
from adaloc.preprocess import TEST, Scalers, from_arrays, generate_dataset, merge
from adaloc.rng import generator
from adaloc.router import Router, RouterConfig
from adaloc.train import Hyper, TrainRun, train_model, train_router

SMALL = ModelConfig(use_max_pool=True, d_ff=16, fcnn_hidden=8)


def rng(name):
    return generator(0, "tests", "train", name)


def tiny_dataset(n_train=10, n_test=4, val_fraction=0.0, seed=0):
    r = rng(f"tiny{n_train}{seed}")
    n = n_train + n_test
    cir = r.random((n, 128, 46)).astype(np.float32)
    labels = r.normal(0, 10, (n, 2)).astype(np.float32)
    lap = np.array([1] * n_train + [2] * n_test)
    return from_arrays(cir, labels, np.zeros(n, int), lap, np.arange(n, dtype=np.float32), 2,
                       val_fraction, seed)


@pytest.fixture(scope="module")
def mixed():
    parts = [generate_dataset(s, laps=2, seed=0, snapshot_interval_s=0.6) for s in SCENARIOS]
    return merge(parts)


# -- mee -----------------------------------------------------------------------------------

def test_mee_zero_and_three_four_five():
    y = rng("y").normal(size=(20, 2))
    assert mee(y, y) == 0.0
    assert mee(y + [3.0, 4.0], y) == 5.0


def test_mee_matches_pairwise_oracle():
    r = rng("pairs")
    a, b = r.normal(0, 30, (1000, 2)), r.normal(0, 30, (1000, 2))
    oracle = sum(((a[i, 0] - b[i, 0]) ** 2 + (a[i, 1] - b[i, 1]) ** 2) ** 0.5 for i in range(1000)) / 1000
    assert abs(mee(a, b) - oracle) < 1e-9


@settings(max_examples=80, deadline=None)
@given(hnp.arrays(np.float64, (6, 2), elements=st.floats(-1e3, 1e3)),
       hnp.arrays(np.float64, (6, 2), elements=st.floats(-1e3, 1e3)),
       hnp.arrays(np.float64, 2, elements=st.floats(-1e3, 1e3)))
def test_mee_properties(a, b, c):
    m = mee(a, b)
    assert m >= 0
    assert (m == 0) == bool(np.all(a == b))
    assert mee(a + c, b + c) == pytest.approx(m, rel=1e-9, abs=1e-9)


@pytest.mark.parametrize("a,b", [(np.zeros((3, 2)), np.zeros((4, 2))), (np.zeros((0, 2)), np.zeros((0, 2))),
                                 (np.zeros((3, 3)), np.zeros((3, 3)))])
def test_mee_contract(a, b):
    with pytest.raises(ContractError):
        mee(a, b)


# -- router accuracy ---------------------------------------------------------------------

def test_router_accuracy_identities():
    labels = np.repeat([0, 1, 2], 7)
    raw = np.zeros((21, 128, 46))
    assert router_accuracy(lambda x: labels, raw, labels) == 1.0
    assert router_accuracy(lambda x: np.zeros(len(x), int), raw, labels) == pytest.approx(1 / 3)
    assert router_accuracy(lambda x: labels, raw, [SCENARIOS[i] for i in labels]) == 1.0


def test_router_accuracy_of_concatenation_is_weighted_mean():
    r = rng("acc")
    parts = [(r.integers(0, 3, n), r.integers(0, 3, n)) for n in (13, 29, 8)]
    accs = [router_accuracy(lambda x, p=p: p, np.zeros((len(t), 1)), t) for p, t in parts]
    pred = np.concatenate([p for p, _ in parts])
    truth = np.concatenate([t for _, t in parts])
    whole = router_accuracy(lambda x: pred, np.zeros((len(truth), 1)), truth)
    assert whole == pytest.approx(sum(a * len(t) for a, (_, t) in zip(accs, parts)) / len(truth), abs=1e-12)


def test_router_accuracy_empty():
    with pytest.raises(ContractError):
        router_accuracy(lambda x: x, np.zeros((0, 128, 46)), [])


# -- training ------------------------------------------------------------------------------

def test_zero_lr_leaves_weights_and_loss_unchanged():
    ds = tiny_dataset()
    cfg = ModelConfig(use_max_pool=True, dropout_rate=0.0, d_ff=16, fcnn_hidden=8)
    init = Regressor(cfg, seed=3)
    ck = train_model(ds, cfg, Hyper(epochs=4, lr=0.0), seed=3)
    for k, w in ck.net.weights.items():
        np.testing.assert_array_equal(w.data, init.weights[k].data)
    # weights are bit-identical; the loss is summed over a reshuffled batch each
    # epoch, so it may move in the last float32 ulp
    curve = np.array(ck.training["run"]["train_loss"])
    assert np.ptp(curve) <= 2 * np.finfo(np.float32).eps * curve.max()


def test_memorizes_ten_samples():
    ds = tiny_dataset()
    ck = train_model(ds, SMALL, Hyper(epochs=200, batch_size=64, lr=6e-4), seed=0)
    curve = ck.training["run"]["train_loss"]
    assert curve[-1] < 0.1 * curve[0]


def test_same_seed_same_curves():
    ds = tiny_dataset(n_train=30, val_fraction=0.2)
    a = train_model(ds, SMALL, Hyper(epochs=3, batch_size=8), seed=5).training["run"]
    b = train_model(ds, SMALL, Hyper(epochs=3, batch_size=8), seed=5).training["run"]
    assert a["train_loss"] == b["train_loss"] and a["val_loss"] == b["val_loss"]
    c = train_model(ds, SMALL, Hyper(epochs=3, batch_size=8), seed=6).training["run"]
    assert c["train_loss"] != a["train_loss"]


def test_best_epoch_checkpoint_has_lowest_val():
    ds = tiny_dataset(n_train=40, val_fraction=0.25)
    ck = train_model(ds, SMALL, Hyper(epochs=8, batch_size=8, lr=3e-3), seed=1)
    run = ck.training["run"]
    assert run["best_val"] == min(run["val_loss"])
    assert run["val_loss"][run["best_epoch"] - 1] == run["best_val"]
    va = ds.indices("val")
    pred = ck.net.predict_standardized(ds.standardized_inputs(va))
    assert float(np.mean((pred.astype(np.float64) - ds.standardized_labels(va)) ** 2)) == \
        pytest.approx(run["best_val"], rel=1e-12)


def test_training_never_touches_the_test_lap():
    ds = tiny_dataset(n_train=12, val_fraction=0.25)
    ds.cir[ds.split == TEST] = np.nan
    ck = train_model(ds, SMALL, Hyper(epochs=2, batch_size=4), seed=0)
    assert all(np.isfinite(ck.training["run"]["train_loss"]))


def test_empty_train_split():
    ds = tiny_dataset()
    ds.split[:] = TEST
    with pytest.raises(DataError):
        train_model(ds, SMALL, Hyper(epochs=1), seed=0)


def test_divergence_reports_epoch():
    ds = tiny_dataset()
    ds.cir[0, 0, 0] = np.nan
    with pytest.raises(TrainingError) as info:
        train_model(ds, SMALL, Hyper(epochs=3), seed=0)
    assert info.value.epoch == 1


@pytest.mark.parametrize("kw", [dict(epochs=0), dict(batch_size=0), dict(lr=-1.0)])
def test_bad_hyperparameters(kw):
    with pytest.raises(ConfigError):
        Hyper(**kw)


def test_specialist_trains_on_one_scenario(mixed):
    ck = train_model(mixed, SMALL, Hyper(epochs=1), seed=0, scenario="S2")
    run = ck.training["run"]
    assert run["scenarios"] == ["S2"]
    assert run["n_train"] == len(mixed.indices("train", "S2"))


def test_loss_curve_csv():
    run = TrainRun({}, {}, 0, train_loss=[1.5, 0.25], val_loss=[2.0, None])
    lines = run.curve_csv().splitlines()
    assert lines == ["epoch,train_loss,val_loss", "1,1.5,2.0", "2,0.25,"]


def test_router_learns_the_toy_mix(mixed):
    ck = train_router(mixed, RouterConfig("full_input"), Hyper(epochs=20))
    te = mixed.indices("test")
    assert ck.param_count == 17_667
    assert router_accuracy(ck.net, mixed.cir[te], mixed.scenario[te]) > 0.9


def test_router_needs_several_scenarios():
    with pytest.raises(DataError):
        train_router(tiny_dataset(), RouterConfig("full_input"))


# -- timing ----------------------------------------------------------------------------------

def test_timing_scales_with_test_set_size():
    model = Regressor(SMALL, seed=0)
    x = rng("time").random((240, 128, 46)).astype(np.float32)
    model.scalers = Scalers.fit(x, rng("tl").normal(size=(240, 2)))
    # alternate the two sizes so clock-speed drift hits both alike
    half, full = [], []
    for _ in range(7):
        half.append(time_passes(model, x[:120], repeats=1)[1][0])
        full.append(time_passes(model, x, repeats=1)[1][0])
    t1, t2 = np.median(half), np.median(full)
    assert 1.6 <= t2 / t1 <= 2.4


def test_warm_up_pass_is_reported_separately():
    calls = []
    warm, passes = time_passes(lambda x: calls.append(len(x)), np.zeros((3, 1)), repeats=5)
    assert len(calls) == 6 and len(passes) == 5 and warm >= 0


def test_specialist_is_faster_than_generalized(mixed):
    raw = mixed.cir[mixed.indices("test")][:60]
    spec = Regressor(parse_arch("el=1,ln=off,mp=on"), scalers=mixed.scalers)
    gen = Regressor(parse_arch("el=3,ln=off,mp=off"), scalers=mixed.scalers)
    assert measure_test_time(spec, raw) < measure_test_time(gen, raw)


# -- comparison -------------------------------------------------------------------------------

class OracleRouter(Router):
    """Routes every known snapshot to its true scenario."""

    def __init__(self, table):
        super().__init__(RouterConfig("full_input"))
        self.table = table

    def predict_raw(self, raw_cir):
        return np.array([self.table[c.tobytes()] for c in raw_cir])


@pytest.fixture(scope="module")
def trained(mixed):
    gen = train_model(mixed, parse_arch("el=1,ln=off,mp=off"), Hyper(epochs=1), seed=0)
    spec = {s: train_model(mixed, SMALL, Hyper(epochs=2), seed=1, scenario=s) for s in SCENARIOS}
    table = {c.tobytes(): int(s) for c, s in zip(mixed.cir, mixed.scenario)}
    return gen, spec, OracleRouter(table)


def test_perfect_router_matches_manual_switching(mixed, trained):
    gen, spec, oracle = trained
    rep = compare_methods(mixed, gen, spec, oracle, block=7, timing_repeats=1, time_scenarios=["S1"])
    assert rep.router_accuracy == 1.0
    for s in SCENARIOS:
        assert rep.methods["method3"]["mee"][s] == rep.methods["method2"]["mee"][s]
    order = interleave({s: len(mixed.indices("test", s)) for s in SCENARIOS}, 7)
    assert rep.switch_events == sum(a[0] != b[0] for a, b in zip(order, order[1:]))


def test_report_parameter_accounting(mixed, trained):
    gen, spec, oracle = trained
    rep = compare_methods(mixed, gen, spec, oracle, timing_repeats=1, time_scenarios=[])
    n_gen = count_params(gen.net.config)
    assert rep.methods["method1"]["total_params"] == n_gen
    assert all(v == n_gen for v in rep.methods["method1"]["active_params"].values())
    for s in SCENARIOS:
        assert rep.methods["method3"]["active_params"][s] == count_params(spec[s].net.config) + 17_667
        assert rep.active_reduction(s) == pytest.approx(1 - (count_params(spec[s].net.config) + 17_667) / n_gen)
    assert rep.methods["method1"]["adaptive"] and rep.methods["method3"]["adaptive"]
    assert not rep.methods["method2"]["adaptive"]
    assert "single thread" in rep.meta["timing_protocol"]


def test_report_round_trips(mixed, trained, tmp_path):
    gen, spec, oracle = trained
    rep = compare_methods(mixed, gen, spec, oracle, timing_repeats=1, time_scenarios=["S1"])
    assert ComparisonReport.from_json(json.loads(json.dumps(rep.to_json()))) == rep
    assert ComparisonReport.from_csv(rep.to_csv()) == rep
    rep.save(tmp_path)
    assert ComparisonReport.from_json(json.loads((tmp_path / "report.json").read_text())) == rep
    rows = list(csv.reader(io.StringIO((tmp_path / "table.csv").read_text())))
    assert [r[0] for r in rows] == ["", "S1, MEE (m)", "S2, MEE (m)", "S3, MEE (m)",
                                    "number of parameters", "adaptive", "test time, S1 (s)"]
    assert rows[0] == ["", "Method 1", "Method 2", "Method 3"]


def test_missing_checkpoints_are_listed(mixed, trained):
    gen, spec, oracle = trained
    with pytest.raises(ConfigError, match="S2 specialist.*S3 specialist"):
        compare_methods(mixed, gen, {"S1": spec["S1"]}, oracle)
    with pytest.raises(ConfigError, match="router"):
        compare_methods(mixed, gen, spec, None)


def test_interleave_blocks():
    order = interleave({"S1": 3, "S2": 5}, block=2)
    assert order == [("S1", 0), ("S1", 1), ("S2", 0), ("S2", 1), ("S1", 2), ("S2", 2), ("S2", 3), ("S2", 4)]


def test_test_sets_cover_each_scenario(mixed):
    sets = split_test_sets(mixed)
    assert list(sets) == list(SCENARIOS)
    for s, (raw, y) in sets.items():
        assert len(raw) == len(mixed.indices("test", s)) == len(y)


def test_checkpoint_wrapper_is_accepted(mixed, trained):
    gen, spec, oracle = trained
    assert isinstance(gen, Checkpoint)
    rep = compare_methods(mixed, gen.net, {s: c.net for s, c in spec.items()}, oracle,
                          timing_repeats=1, time_scenarios=[])
    assert set(rep.methods) == {"method1", "method2", "method3"}
