import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from adaloc.errors import ConfigError, ShapeError
from adaloc.model import ModelConfig, Regressor, count_params
from adaloc.preprocess import CirSample, Scalers
from adaloc.router import (
    AdaptiveEnsemble,
    Router,
    RouterConfig,
    argmax_lowest,
    dispatch,
    extract_features,
    method2_select,
    route,
    router_param_count,
    slp_forward,
)
from adaloc.rng import generator
from adaloc.tensor import parameter


def rng(name):
    return generator(0, "tests", "router", name)


def const_router(bias, variant="full_input", bin_index=None, scalers=None):
    cfg = RouterConfig(variant, bin_index)
    w = {"W": np.zeros((cfg.input_dim, 3)), "b": np.asarray(bias, dtype=np.float64)}
    return Router(cfg, {k: parameter(v) for k, v in w.items()}, scalers)


@pytest.fixture(scope="module")
def toy():
    """Three specialists sharing one scaler set and three raw CIR streams."""
    r = rng("toy")
    raw = {s: r.random((12, 128, 46)).astype(np.float32) + i for i, s in enumerate(("S1", "S2", "S3"))}
    allx = np.concatenate(list(raw.values()))
    scalers = Scalers.fit(allx, r.normal(0, 5, (len(allx), 2)))
    specs = {"S1": Regressor(ModelConfig(use_max_pool=True), scalers=scalers, seed=1),
             "S2": Regressor(ModelConfig(encoder_layers=2, use_max_pool=True), scalers=scalers, seed=2),
             "S3": Regressor(ModelConfig(encoder_layers=2, use_max_pool=True), scalers=scalers, seed=3)}
    return raw, scalers, specs


# -- configuration and counts ----------------------------------------------------

def test_parameter_identities():
    assert router_param_count(RouterConfig("full_input")) == 17_667
    for k in (0, 17, 45):
        assert router_param_count(RouterConfig("single_bin", k)) == 387
    assert Router(RouterConfig("bin", 3)).n_params == 387
    assert Router(RouterConfig("full")).n_params == 17_667


def test_single_bin_needs_index():
    with pytest.raises(ConfigError, match="bin-index"):
        RouterConfig("single_bin")


@pytest.mark.parametrize("k", [-1, 46])
def test_bin_index_range(k):
    with pytest.raises(ConfigError):
        RouterConfig("single_bin", k)


def test_bin_index_only_with_single_bin():
    with pytest.raises(ConfigError):
        RouterConfig("full_input", 3)


def test_unknown_variant():
    with pytest.raises(ConfigError):
        RouterConfig("mlp")


# -- features ----------------------------------------------------------------------

def test_feature_lengths_and_round_trip():
    x = rng("f").normal(size=(128, 46))
    assert extract_features(x, RouterConfig("single_bin", 0)).shape == (128,)
    np.testing.assert_array_equal(extract_features(x, RouterConfig("single_bin", 9)), x[:, 9])
    full = extract_features(x, RouterConfig("full_input"))
    assert full.shape == (5888,)
    np.testing.assert_array_equal(full.reshape(128, 46), x)
    s = CirSample(x, (0.0, 0.0), "S1", 1, 0.0, True)
    np.testing.assert_array_equal(extract_features(s, RouterConfig("full_input")), full)


def test_feature_shape_contract():
    with pytest.raises(ShapeError):
        extract_features(np.zeros((64, 46)), RouterConfig("full_input"))


# -- SLP ---------------------------------------------------------------------------

def test_slp_closed_forms():
    w0 = {"W": np.zeros((4, 3)), "b": np.array([1.0, 0.0, 0.0])}
    p = slp_forward(np.ones(4), w0)
    e = math.e
    assert np.allclose(p, [e / (e + 2), 1 / (e + 2), 1 / (e + 2)], atol=1e-12)
    assert p.argmax() == 0
    assert np.allclose(slp_forward(np.ones(4), {"W": np.zeros((4, 3)), "b": np.zeros(3)}), 1 / 3)


def test_slp_shape_mismatch():
    with pytest.raises(ShapeError):
        slp_forward(np.ones(5), {"W": np.zeros((4, 3)), "b": np.zeros(3)})


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, 3, elements=st.floats(-20, 20)), st.floats(-50, 50))
def test_slp_is_shift_invariant_probability(b, c):
    w = {"W": np.zeros((2, 3)), "b": b}
    p = slp_forward(np.ones(2), w)
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-6
    q = slp_forward(np.ones(2), {"W": w["W"], "b": b + c})
    assert np.allclose(p, q, atol=1e-9)


def test_argmax_ties_go_low():
    assert argmax_lowest(np.array([0.2, 0.5, 0.3])) == 1
    assert argmax_lowest(np.full(3, 1 / 3)) == 0
    assert argmax_lowest(np.array([0.1, 0.45, 0.45])) == 1


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.float64, 3, elements=st.floats(-10, 10)), st.floats(0.01, 100), st.floats(-100, 100))
def test_route_invariant_to_positive_scale_and_shift(z, lam, c):
    assert argmax_lowest(z * lam) == argmax_lowest(z) or np.isclose(np.sort(z)[-1], np.sort(z)[-2])
    assert argmax_lowest(z + c) == argmax_lowest(z) or np.isclose(np.sort(z)[-1], np.sort(z)[-2])


def test_route_returns_scenario_ids():
    x = np.zeros((128, 46))
    assert route(x, const_router([0.0, 2.0, 1.0])) == "S2"
    assert route(x, const_router([0.0, 0.0, 0.0])) == "S1"


# -- dispatcher -------------------------------------------------------------------------

def test_dispatch_equals_direct_specialist(toy):
    raw, scalers, specs = toy
    for true_id, want in (("S1", 0), ("S2", 1), ("S3", 2)):
        bias = np.zeros(3)
        bias[want] = 5.0
        ens = AdaptiveEnsemble(const_router(bias, scalers=scalers), specs)
        for c in raw[true_id][:4]:
            got = dispatch(c, ens)
            direct = specs[true_id].predict_meters(c[None], batch=1)[0]
            np.testing.assert_array_equal(got, direct)
        assert ens.active_id == true_id


def test_same_scenario_stream_has_no_switches(toy):
    raw, scalers, specs = toy
    ens = AdaptiveEnsemble(const_router([0.0, 3.0, 0.0], scalers=scalers), specs)
    ens.dispatch_stream(raw["S1"])
    assert ens.stats.switches == 0
    assert ens.stats.routed["S2"] == len(raw["S1"])


def test_active_parameters_are_specialist_plus_router(toy):
    raw, scalers, specs = toy
    ens = AdaptiveEnsemble(const_router([4.0, 0.0, 0.0], scalers=scalers), specs)
    ens.dispatch_stream(raw["S1"][:3])
    assert set(ens.stats.active_params) == {count_params(specs["S1"].config) + 17_667}
    assert ens.total_params == sum(count_params(m.config) for m in specs.values()) + 17_667


def test_switch_events_counted(toy):
    raw, scalers, specs = toy
    cfg = RouterConfig("full_input")
    # nearest-mean classifier on the mean amplitude: the toy streams sit near 0.5, 1.5, 2.5
    centers = np.array([0.5, 1.5, 2.5])
    W = np.tile(2 * centers / 5888, (5888, 1))
    b = -centers ** 2
    rtr = Router(cfg, {"W": parameter(W), "b": parameter(b)}, Scalers(np.zeros((128, 46)), np.ones((128, 46)),
                                                                      scalers.label_mean, scalers.label_std))
    ens = AdaptiveEnsemble(rtr, specs)
    stream = np.concatenate([raw["S1"][:2], raw["S3"][:2], raw["S3"][:2], raw["S1"][:1]])
    _, ids = ens.dispatch_stream(stream)
    assert ids == ["S1", "S1", "S3", "S3", "S3", "S3", "S1"]
    assert ens.stats.switches == 2


def test_smoothing_window_suppresses_a_blip(toy):
    raw, scalers, specs = toy
    ens = AdaptiveEnsemble(const_router([0, 0, 0], scalers=scalers), specs, smoothing_window=3)
    assert [ens._smooth(s) for s in ["S1", "S1", "S2", "S1", "S1"]] == ["S1"] * 5


def test_missing_specialist_is_config_error(toy):
    raw, scalers, specs = toy
    ens = AdaptiveEnsemble(const_router([0.0, 0.0, 9.0], scalers=scalers), {"S1": specs["S1"]})
    with pytest.raises(ConfigError):
        ens.dispatch(raw["S1"][0])


def test_method2_selection(toy):
    raw, scalers, specs = toy
    for s in ("S1", "S2", "S3"):
        assert method2_select(s.lower(), specs) is specs[s]
    # a wrong declaration still evaluates
    out = method2_select("S1", specs).predict_meters(raw["S2"][:2])
    assert out.shape == (2, 2)
    with pytest.raises(ConfigError):
        method2_select("S3", {"S1": specs["S1"]})
