"""Mini-batch Adam training for the regressors and the router."""
from __future__ import annotations

import contextlib
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .channel.scenario import scenario_index
from .checkpoint import Checkpoint
from .errors import ConfigError, DataError, NumericError, TrainingError
from .model import ModelConfig, Regressor
from .preprocess import TRAIN, VAL, Dataset
from .rng import Streams
from .router import Router, RouterConfig, extract_features
from .tensor import Adam, mse_loss, no_grad, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class Hyper:
    epochs: int = 200
    batch_size: int = 64
    lr: float = 6e-4

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr < 0:
            raise ConfigError(f"learning rate must be non-negative, got {self.lr}")


@dataclass
class TrainRun:
    config: dict
    hyper: dict
    seed: int
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float | None = None
    seconds: float = 0.0
    n_train: int = 0
    n_val: int = 0
    scenarios: list = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)

    def curve_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss"]
        for i, tr in enumerate(self.train_loss):
            va = self.val_loss[i] if i < len(self.val_loss) and self.val_loss[i] is not None else ""
            rows.append(f"{i + 1},{tr!r},{va!r}" if va != "" else f"{i + 1},{tr!r},")
        return "\n".join(rows) + "\n"


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _check_finite(value: float, epoch: int, what: str):
    if not np.isfinite(value):
        raise TrainingError(f"{what} diverged (non-finite loss) at epoch {epoch}", epoch=epoch)


@contextlib.contextmanager
def _epoch_guard(epoch: int, what: str):
    """Re-raise numeric failures inside an epoch as a TrainingError naming it."""
    try:
        yield
    except TrainingError:
        raise
    except NumericError as exc:
        raise TrainingError(f"{what} diverged at epoch {epoch}: {exc}", epoch=epoch) from exc


def _split_indices(ds: Dataset, scenario: str | None):
    tr = ds.indices(TRAIN, scenario)
    va = ds.indices(VAL, scenario)
    if len(tr) == 0:
        raise DataError("training split is empty")
    return tr, va


def train_model(dataset: Dataset, config: ModelConfig, hyper: Hyper | None = None, seed: int = 0,
                scenario: str | None = None, progress=None) -> Checkpoint:
    """Train a regressor on the dataset's train split; keep the best validation epoch.

    ``scenario`` restricts training to one scenario of a mixed dataset (the
    scalers are refitted on that subset). ``lr == 0`` runs a frozen pass
    that only records losses.
    """
    hyper = hyper or Hyper()
    ds = dataset
    if scenario is not None:
        ds = ds.subset(np.flatnonzero(ds.scenario == scenario_index(scenario)))
    tr, va = _split_indices(ds, None)
    x_tr, y_tr = ds.standardized_inputs(tr), ds.standardized_labels(tr)
    x_va, y_va = (ds.standardized_inputs(va), ds.standardized_labels(va)) if len(va) else (None, None)

    streams = Streams(seed)
    model = Regressor(config, seed=seed, scalers=ds.scalers)
    opt = Adam(model.parameters(), lr=hyper.lr) if hyper.lr > 0 else None
    shuffle = streams.get("shuffle")
    drop_rng = streams.get("dropout")
    run = TrainRun(config.to_json(), asdict(hyper), seed, n_train=len(tr), n_val=len(va),
                   scenarios=ds.scenarios)
    best = None
    start = time.perf_counter()
    for epoch in range(1, hyper.epochs + 1):
        total = 0.0
        with _epoch_guard(epoch, "training"):
            for b in _batches(len(tr), hyper.batch_size, shuffle):
                out = model.forward(x_tr[b], training=True, rng=drop_rng)
                loss = mse_loss(out, y_tr[b])
                if opt is not None:
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                total += float(loss.data) * len(b)
        train_loss = total / len(tr)
        _check_finite(train_loss, epoch, "training")
        run.train_loss.append(train_loss)
        if x_va is not None:
            with _epoch_guard(epoch, "validation"):
                val = _mse(model, x_va, y_va)
            _check_finite(val, epoch, "validation")
            run.val_loss.append(val)
            score = val
        else:
            run.val_loss.append(None)
            score = train_loss
        if best is None or score < best:
            best = score
            run.best_epoch = epoch
            best_weights = {k: w.data.copy() for k, w in model.weights.items()}
        if progress:
            progress(epoch, train_loss, run.val_loss[-1])
    run.best_val = best if x_va is not None else None
    run.seconds = time.perf_counter() - start
    for k, w in model.weights.items():
        w.data[...] = best_weights[k]
    return Checkpoint("model", model, {"run": run.to_json()})


def _mse(model: Regressor, x: np.ndarray, y: np.ndarray) -> float:
    pred = model.predict_standardized(x)
    return float(np.mean((pred.astype(np.float64) - y) ** 2))


def train_router(dataset: Dataset, config: RouterConfig, hyper: Hyper | None = None,
                 seed: int = 0) -> Checkpoint:
    """Softmax cross-entropy training of the SLP on the mixed train split."""
    hyper = hyper or Hyper(epochs=50)
    if len(dataset.scenarios) < 2:
        raise DataError("router training needs a mixed dataset with several scenarios")
    tr, va = _split_indices(dataset, None)
    router = Router(config, seed=seed, scalers=dataset.scalers)
    f_tr = extract_features(dataset.standardized_inputs(tr), config)
    c_tr = dataset.scenario[tr]
    f_va = extract_features(dataset.standardized_inputs(va), config) if len(va) else None
    streams = Streams(seed)
    shuffle = streams.get("router-shuffle")
    opt = Adam(router.parameters(), lr=hyper.lr) if hyper.lr > 0 else None
    run = TrainRun(config.to_json(), asdict(hyper), seed, n_train=len(tr), n_val=len(va),
                   scenarios=dataset.scenarios)
    best = None
    start = time.perf_counter()
    for epoch in range(1, hyper.epochs + 1):
        total = 0.0
        with _epoch_guard(epoch, "router training"):
            for b in _batches(len(tr), hyper.batch_size, shuffle):
                loss = softmax_cross_entropy(router.logits(f_tr[b]), c_tr[b])
                if opt is not None:
                    opt.zero_grad()
                    loss.backward()
                    opt.step()
                total += float(loss.data) * len(b)
        train_loss = total / len(tr)
        _check_finite(train_loss, epoch, "router training")
        run.train_loss.append(train_loss)
        if f_va is not None:
            with no_grad():
                val = float(softmax_cross_entropy(router.logits(f_va), dataset.scenario[va]).data)
            run.val_loss.append(val)
            score = val
        else:
            run.val_loss.append(None)
            score = train_loss
        if best is None or score < best:
            best = score
            run.best_epoch = epoch
            best_weights = {k: w.data.copy() for k, w in router.weights.items()}
    run.best_val = best if f_va is not None else None
    run.seconds = time.perf_counter() - start
    for k, w in router.weights.items():
        w.data[...] = best_weights[k]
    return Checkpoint("router", router, {"run": run.to_json()})
