"""Single-layer-perceptron scenario router and the run-time dispatcher."""
from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .channel.scenario import N_ROWS, N_SUBCARRIERS, SCENARIOS, normalize_scenario
from .errors import ConfigError, ShapeError
from .model import Regressor, count_params
from .preprocess import CirSample, Scalers
from .rng import Streams
from .tensor import Tensor, matmul, no_grad, parameter

N_CLASSES = len(SCENARIOS)
VARIANTS = ("full_input", "single_bin")


@dataclass(frozen=True)
class RouterConfig:
    variant: str = "full_input"
    bin_index: int | None = None
    n_classes: int = N_CLASSES

    def __post_init__(self):
        v = {"full": "full_input", "bin": "single_bin"}.get(self.variant, self.variant)
        object.__setattr__(self, "variant", v)
        if v not in VARIANTS:
            raise ConfigError(f"router variant must be full_input or single_bin, got {self.variant!r}")
        if v == "single_bin":
            if self.bin_index is None:
                raise ConfigError("single_bin router needs a bin_index (--bin-index)")
            if not 0 <= self.bin_index < N_SUBCARRIERS:
                raise ConfigError(f"bin_index must be in 0..{N_SUBCARRIERS - 1}, got {self.bin_index}")
        elif self.bin_index is not None:
            raise ConfigError("bin_index is only valid with the single_bin variant")

    @property
    def input_dim(self) -> int:
        return N_ROWS * N_SUBCARRIERS if self.variant == "full_input" else N_ROWS

    def to_json(self) -> dict:
        return {"variant": self.variant, "bin_index": self.bin_index, "n_classes": self.n_classes}

    @classmethod
    def from_json(cls, obj) -> "RouterConfig":
        return cls(**obj)


def router_param_count(config: RouterConfig) -> int:
    return config.input_dim * config.n_classes + config.n_classes


def extract_features(cir, config: RouterConfig) -> np.ndarray:
    """Standardized CIR (128, 46) or (n, 128, 46) -> router input vector(s)."""
    x = cir.cir if isinstance(cir, CirSample) else np.asarray(cir)
    single = x.ndim == 2
    x = x[None] if single else x
    if x.shape[-2:] != (N_ROWS, N_SUBCARRIERS):
        raise ShapeError(f"router expects 128x46 CIR matrices, got {x.shape[-2:]}")
    if config.variant == "full_input":
        f = x.reshape(len(x), -1)
    else:
        if not 0 <= config.bin_index < x.shape[-1]:
            raise ConfigError(f"bin_index {config.bin_index} out of range")
        f = x[:, :, config.bin_index]
    f = np.ascontiguousarray(f)
    return f[0] if single else f


class Router:
    """softmax(x W + b) over the three scenarios, with its own input scalers."""

    def __init__(self, config: RouterConfig, weights: dict | None = None,
                 scalers: Scalers | None = None, seed: int = 0):
        self.config = config
        if weights is None:
            rng = Streams(seed).get("router-init")
            bound = np.sqrt(6.0 / (config.input_dim + config.n_classes))
            weights = {"W": parameter(rng.uniform(-bound, bound, (config.input_dim, config.n_classes))),
                       "b": parameter(np.zeros(config.n_classes))}
        self.weights = weights
        self.scalers = scalers or Scalers()

    @property
    def n_params(self) -> int:
        return int(sum(w.data.size for w in self.weights.values()))

    def parameters(self):
        return list(self.weights.values())

    def logits(self, features) -> Tensor:
        x = features if isinstance(features, Tensor) else Tensor(features)
        return matmul(x, self.weights["W"]) + self.weights["b"]

    def features_from_raw(self, raw_cir: np.ndarray) -> np.ndarray:
        return extract_features(self.scalers.forward_inputs(raw_cir), self.config)

    def predict_raw(self, raw_cir: np.ndarray) -> np.ndarray:
        """Routed class indices for raw CIR amplitudes (n, 128, 46)."""
        with no_grad():
            logits = self.logits(self.features_from_raw(raw_cir)).data
        return argmax_lowest(logits)


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def slp_forward(x, weights: dict) -> np.ndarray:
    """Class probabilities softmax(x W + b) for one vector or a batch."""
    W = weights["W"].data if isinstance(weights["W"], Tensor) else np.asarray(weights["W"])
    b = weights["b"].data if isinstance(weights["b"], Tensor) else np.asarray(weights["b"])
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeError(f"SLP input {x.shape} does not match W{W.shape} / b{b.shape}")
    return _softmax(x @ W.astype(np.float64) + b.astype(np.float64))


def argmax_lowest(scores: np.ndarray) -> np.ndarray:
    """Argmax along the last axis; exact ties resolve to the lowest index."""
    return np.argmax(scores, axis=-1)


def route(cir, router: Router, standardized: bool = True) -> str:
    """Scenario id for one CIR (standardized with the router's scalers unless told otherwise)."""
    x = cir.cir if isinstance(cir, CirSample) else np.asarray(cir)
    if not standardized:
        x = router.scalers.forward_inputs(x)
    p = slp_forward(extract_features(x, router.config), router.weights)
    return SCENARIOS[int(argmax_lowest(p))]


@dataclass
class DispatchStats:
    switches: int = 0
    routed: Counter = field(default_factory=Counter)
    active_params: list = field(default_factory=list)


class AdaptiveEnsemble:
    """Router plus one specialist per scenario; exactly one specialist runs per snapshot.

    With ``smoothing_window > 1`` the routed id is the majority vote over the
    last window of raw router decisions (ties go to the most recent).
    """

    def __init__(self, router: Router, specialists: dict[str, Regressor], smoothing_window: int = 1):
        self.router = router
        self.specialists = {normalize_scenario(k): v for k, v in specialists.items()}
        self.smoothing_window = int(smoothing_window)
        self.active_id: str | None = None
        self.stats = DispatchStats()
        self._recent: deque = deque(maxlen=max(1, self.smoothing_window))

    def reset(self):
        self.active_id = None
        self.stats = DispatchStats()
        self._recent.clear()

    def active_param_count(self, scenario_id: str) -> int:
        return count_params(self._specialist(scenario_id).config) + router_param_count(self.router.config)

    @property
    def total_params(self) -> int:
        return sum(count_params(m.config) for m in self.specialists.values()) + \
            router_param_count(self.router.config)

    def _specialist(self, sid: str) -> Regressor:
        try:
            return self.specialists[sid]
        except KeyError:
            raise ConfigError(f"no specialist loaded for routed scenario {sid}") from None

    def _smooth(self, sid: str) -> str:
        self._recent.append(sid)
        if self.smoothing_window <= 1:
            return sid
        counts = Counter(self._recent)
        best = max(counts.values())
        for s in reversed(self._recent):
            if counts[s] == best:
                return s
        return sid

    def dispatch(self, raw_cir: np.ndarray) -> np.ndarray:
        """Route one raw CIR (128, 46) and localize it with the chosen specialist (meters)."""
        sid = self._smooth(SCENARIOS[int(self.router.predict_raw(raw_cir[None])[0])])
        model = self._specialist(sid)
        if self.active_id is not None and sid != self.active_id:
            self.stats.switches += 1
        self.active_id = sid
        self.stats.routed[sid] += 1
        self.stats.active_params.append(self.active_param_count(sid))
        return model.predict_meters(raw_cir[None])[0]

    def dispatch_stream(self, raw_cir: np.ndarray) -> tuple[np.ndarray, list[str]]:
        """Dispatch a stream snapshot by snapshot; returns positions and routed ids."""
        out, ids = [], []
        for c in raw_cir:
            out.append(self.dispatch(c))
            ids.append(self.active_id)
        return np.array(out), ids


def dispatch(cir: np.ndarray, ensemble: AdaptiveEnsemble) -> np.ndarray:
    return ensemble.dispatch(np.asarray(cir))


def method2_select(scenario_id: str, registry: dict[str, Regressor]) -> Regressor:
    """Manually chosen specialist; no check that the data matches the declaration."""
    sid = normalize_scenario(scenario_id)
    try:
        return registry[sid]
    except KeyError:
        raise ConfigError(f"no model registered for scenario {sid}") from None
