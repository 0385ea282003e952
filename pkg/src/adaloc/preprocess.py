"""CTF -> CIR amplitude conversion, lap-split datasets and standardization."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import persist
from .channel import make_trajectory, preset, synth_snapshots
from .channel.scenario import N_ROWS, N_SUBCARRIERS, SCENARIOS, normalize_scenario
from .errors import ConfigError, ContractError, DataError, StateError
from .rng import Streams

TRAIN, VAL, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "val", "test")
CIR_SHAPE = (N_ROWS, N_SUBCARRIERS)
_STD_FLOOR = 1e-8


def hann_window(n: int = N_SUBCARRIERS) -> np.ndarray:
    """Symmetric Hann window, zero at both ends."""
    if n < 2:
        raise ConfigError(f"Hann window length must be >= 2, got {n}")
    i = np.arange(n)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * i / (n - 1)))


def ctf_to_cir(ctf: np.ndarray) -> np.ndarray:
    """Windowed inverse DFT along each row, then magnitude.

    Accepts one (128, 46) matrix or a stack (..., 128, 46). The inverse DFT
    carries the 1/N factor.
    """
    ctf = np.asarray(ctf)
    if ctf.shape[-2:] != CIR_SHAPE:
        raise ContractError(f"CTF must be 128x46, got {ctf.shape}")
    cir = np.abs(np.fft.ifft(ctf * hann_window(N_SUBCARRIERS), axis=-1))
    return cir.astype(np.float32)


@dataclass
class CirSample:
    cir: np.ndarray
    label: tuple
    scenario_id: str
    lap_index: int
    t: float
    standardized: bool = False


@dataclass
class Scalers:
    """Per-feature input z-score over the 128x46 grid and per-axis label z-score."""

    input_mean: np.ndarray | None = None
    input_std: np.ndarray | None = None
    label_mean: np.ndarray | None = None
    label_std: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.input_mean is not None

    @classmethod
    def fit(cls, cir: np.ndarray, labels: np.ndarray) -> "Scalers":
        if len(cir) == 0:
            raise DataError("cannot fit scalers on an empty training split")
        im, istd = _moments(np.asarray(cir, dtype=np.float64))
        lm, lstd = _moments(np.asarray(labels, dtype=np.float64))
        return cls(im, istd, lm, lstd)

    def _check(self):
        if not self.fitted:
            raise StateError("scalers are not fitted")

    def forward_inputs(self, cir: np.ndarray) -> np.ndarray:
        self._check()
        x = (np.asarray(cir, dtype=np.float64) - self.input_mean) / self.input_std
        return x.astype(np.float32)

    def inverse_inputs(self, x: np.ndarray) -> np.ndarray:
        self._check()
        return np.asarray(x, dtype=np.float64) * self.input_std + self.input_mean

    def forward_labels(self, y: np.ndarray) -> np.ndarray:
        self._check()
        return (np.asarray(y, dtype=np.float64) - self.label_mean) / self.label_std

    def inverse_labels(self, y: np.ndarray) -> np.ndarray:
        self._check()
        return np.asarray(y, dtype=np.float64) * self.label_std + self.label_mean

    def to_json(self) -> dict:
        self._check()
        return {"input_mean": persist.f32_list(self.input_mean),
                "input_std": persist.f32_list(self.input_std),
                "label_mean": persist.f32_list(self.label_mean),
                "label_std": persist.f32_list(self.label_std)}

    @classmethod
    def from_json(cls, obj: dict) -> "Scalers":
        def arr(k):
            return np.asarray(obj[k], dtype=np.float32).astype(np.float64)
        return cls(arr("input_mean"), arr("input_std"), arr("label_mean"), arr("label_std"))


def _moments(a: np.ndarray):
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    flat = std < _STD_FLOOR
    mean = np.where(flat, 0.0, mean)
    std = np.where(flat, 1.0, std)
    # stored as float32 on disk; keep the in-memory copy identical
    return (mean.astype(np.float32).astype(np.float64),
            std.astype(np.float32).astype(np.float64))


def apply_scalers(sample: CirSample, scalers: Scalers, direction: str = "forward") -> CirSample:
    if direction == "forward":
        if sample.standardized:
            raise ContractError("sample is already standardized")
        cir = scalers.forward_inputs(sample.cir)
        label = tuple(scalers.forward_labels(sample.label).tolist())
        return dataclasses.replace(sample, cir=cir, label=label, standardized=True)
    if direction == "inverse":
        if not sample.standardized:
            raise ContractError("sample is not standardized")
        cir = scalers.inverse_inputs(sample.cir)
        label = tuple(scalers.inverse_labels(sample.label).tolist())
        return dataclasses.replace(sample, cir=cir, label=label, standardized=False)
    raise ConfigError(f"direction must be 'forward' or 'inverse', got {direction!r}")


@dataclass
class Dataset:
    """Raw CIR amplitudes with labels, lap tags and a train/val/test split.

    ``scenario`` holds indices into ``SCENARIOS``; ``split`` holds TRAIN,
    VAL or TEST per sample. Scalers are fitted on the train split only.
    """

    cir: np.ndarray            # (N, 128, 46) float32
    labels: np.ndarray         # (N, 2) float32 meters
    scenario: np.ndarray       # (N,) int
    lap_index: np.ndarray      # (N,) int
    t: np.ndarray              # (N,) float32 seconds
    split: np.ndarray          # (N,) int
    laps: int
    seed: int
    val_fraction: float
    scalers: Scalers = field(default_factory=Scalers)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.labels)

    @property
    def scenarios(self) -> list[str]:
        return [SCENARIOS[i] for i in sorted(set(self.scenario.tolist()))]

    def indices(self, split: str | int, scenario: str | None = None) -> np.ndarray:
        code = SPLIT_NAMES.index(split) if isinstance(split, str) else split
        mask = self.split == code
        if scenario is not None:
            mask &= self.scenario == SCENARIOS.index(normalize_scenario(scenario))
        return np.flatnonzero(mask)

    def sample(self, i: int) -> CirSample:
        return CirSample(self.cir[i], (float(self.labels[i, 0]), float(self.labels[i, 1])),
                         SCENARIOS[int(self.scenario[i])], int(self.lap_index[i]), float(self.t[i]))

    def standardized_inputs(self, idx=None) -> np.ndarray:
        cir = self.cir if idx is None else self.cir[idx]
        return self.scalers.forward_inputs(cir)

    def standardized_labels(self, idx=None) -> np.ndarray:
        y = self.labels if idx is None else self.labels[idx]
        return self.scalers.forward_labels(y).astype(np.float32)

    def audit(self) -> None:
        """Assert the split discipline: final lap is test and nothing else is."""
        final = self.lap_index == self.laps
        if not np.array_equal(final, self.split == TEST):
            raise DataError("split audit failed: test split differs from the final-lap samples")
        if len(self.indices("train")) == 0:
            raise DataError("split audit failed: empty training split")
        refit = Scalers.fit(self.cir[self.split == TRAIN], self.labels[self.split == TRAIN])
        if self.scalers.fitted and not np.array_equal(refit.input_mean, self.scalers.input_mean):
            raise DataError("split audit failed: scalers were not fitted on the train split")

    def subset(self, idx) -> "Dataset":
        """Samples ``idx`` as a new dataset keeping split tags and refitting scalers."""
        idx = np.asarray(idx)
        ds = Dataset(self.cir[idx], self.labels[idx], self.scenario[idx], self.lap_index[idx],
                     self.t[idx], self.split[idx], self.laps, self.seed, self.val_fraction,
                     meta=dict(self.meta))
        tr = ds.split == TRAIN
        if tr.any():
            ds.scalers = Scalers.fit(ds.cir[tr], ds.labels[tr])
        return ds


def assign_splits(scenario: np.ndarray, lap_index: np.ndarray, laps: int,
                  val_fraction: float, seed: int) -> np.ndarray:
    """Final lap -> test; per scenario, a seeded ``val_fraction`` of the rest -> val."""
    if laps < 2:
        raise ConfigError(f"datasets need at least 2 laps (train + test), got {laps}")
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    split = np.full(len(scenario), TRAIN, dtype=np.int64)
    split[lap_index == laps] = TEST
    for s in np.unique(scenario):
        pool = np.flatnonzero((scenario == s) & (lap_index != laps))
        n_val = int(round(val_fraction * len(pool)))
        rng = Streams(seed).split("split").get(SCENARIOS[int(s)])
        chosen = pool[rng.permutation(len(pool))[:n_val]]
        split[chosen] = VAL
    return split


def build_dataset(snapshots, laps: int, val_fraction: float = 0.1, seed: int = 0,
                  meta: dict | None = None) -> Dataset:
    """Preprocess snapshots (one or several scenarios) into a split dataset."""
    snapshots = list(snapshots)
    if laps < 2:
        raise ConfigError(f"datasets need at least 2 laps (train + test), got {laps}")
    if not snapshots:
        raise DataError("no snapshots")
    cir = ctf_to_cir(np.stack([s.ctf for s in snapshots]))
    labels = np.array([s.pose.position for s in snapshots], dtype=np.float32)
    scenario = np.array([SCENARIOS.index(s.scenario_id) for s in snapshots], dtype=np.int64)
    lap = np.array([s.pose.lap_index for s in snapshots], dtype=np.int64)
    t = np.array([s.pose.t for s in snapshots], dtype=np.float32)
    if lap.max() < 2 or lap.max() != laps:
        raise ConfigError(f"snapshots cover {lap.max()} laps, expected {laps} (>= 2)")
    return from_arrays(cir, labels, scenario, lap, t, laps, val_fraction, seed, meta)


def from_arrays(cir, labels, scenario, lap, t, laps, val_fraction=0.1, seed=0, meta=None) -> Dataset:
    if not np.all(np.isfinite(cir)) or not np.all(np.isfinite(labels)):
        raise DataError("non-finite CIR amplitudes or labels")
    split = assign_splits(scenario, lap, laps, val_fraction, seed)
    ds = Dataset(np.asarray(cir, np.float32), np.asarray(labels, np.float32), np.asarray(scenario, np.int64),
                 np.asarray(lap, np.int64), np.asarray(t, np.float32), split, laps, seed,
                 float(val_fraction), meta=dict(meta or {}))
    train = split == TRAIN
    if not train.any():
        raise DataError("training split is empty")
    ds.scalers = Scalers.fit(ds.cir[train], ds.labels[train])
    return ds


def merge(datasets, seed: int | None = None) -> Dataset:
    """Mix several scenario datasets, keeping every sample's split tag."""
    datasets = list(datasets)
    laps = {d.laps for d in datasets}
    if len(laps) != 1:
        raise ConfigError(f"cannot mix datasets with different lap counts {sorted(laps)}")
    meta = {"scenario_params": {}}
    for d in datasets:
        meta["scenario_params"].update(d.meta.get("scenario_params", {}))
    cat = {k: np.concatenate([getattr(d, k) for d in datasets])
           for k in ("cir", "labels", "scenario", "lap_index", "t", "split")}
    ds = Dataset(**cat, laps=laps.pop(), seed=datasets[0].seed if seed is None else seed,
                 val_fraction=datasets[0].val_fraction, meta=meta)
    train = ds.split == TRAIN
    ds.scalers = Scalers.fit(ds.cir[train], ds.labels[train])
    return ds


def scenario_feature(cir: np.ndarray, window: int = 4, onset_db: float = -10.0) -> np.ndarray:
    """Fraction of the strongest beam's CIR energy in ``window`` bins from its first arrival.

    The first arrival is the earliest bin within ``onset_db`` of that beam's
    peak power. Works on (128, 46) or (N, 128, 46).
    """
    cir = np.asarray(cir, dtype=np.float64)
    single = cir.ndim == 2
    cir = cir[None] if single else cir
    power = cir ** 2
    beam = power.sum(axis=2).argmax(axis=1)
    row = power[np.arange(len(power)), beam]                      # (N, 46)
    onset = (row >= row.max(axis=1, keepdims=True) * 10 ** (onset_db / 10)).argmax(axis=1)
    bins = np.arange(row.shape[1])
    inwin = (bins[None] >= onset[:, None]) & (bins[None] < onset[:, None] + window)
    frac = (row * inwin).sum(axis=1) / row.sum(axis=1)
    return frac[0] if single else frac


# -- on-disk format -----------------------------------------------------------

_ARRAYS = ("cir", "labels", "t", "lap_index", "scenario")


def save_dataset(ds: Dataset, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {name: persist.write_blob(directory, f"{name}.f32", getattr(ds, name)) for name in _ARRAYS}
    manifest = {
        "format_version": persist.FORMAT_VERSION,
        "kind": "dataset",
        "scenarios": ds.scenarios,
        "laps": int(ds.laps),
        "seed": int(ds.seed),
        "val_fraction": float(ds.val_fraction),
        "n_samples": len(ds),
        "arrays": arrays,
        "splits": {name: ds.indices(name).tolist() for name in SPLIT_NAMES},
        "scalers": ds.scalers.to_json(),
        "meta": ds.meta,
    }
    persist.write_manifest(directory, manifest)
    return directory


def load_dataset(directory: str | Path) -> Dataset:
    directory = Path(directory)
    m = persist.read_manifest(directory, kind="dataset")
    arr = {name: persist.read_blob(directory, m["arrays"][name]) for name in _ARRAYS}
    n = m["n_samples"]
    split = np.full(n, -1, dtype=np.int64)
    for code, name in enumerate(SPLIT_NAMES):
        split[np.asarray(m["splits"][name], dtype=np.int64)] = code
    if (split < 0).any():
        raise DataError(f"{directory}: split indices do not cover every sample")
    return Dataset(arr["cir"], arr["labels"], arr["scenario"].astype(np.int64),
                   arr["lap_index"].astype(np.int64), arr["t"], split, int(m["laps"]),
                   int(m["seed"]), float(m["val_fraction"]), Scalers.from_json(m["scalers"]),
                   m.get("meta", {}))


def generate_dataset(scenario_id: str, laps: int = 5, seed: int = 0, val_fraction: float = 0.1,
                     **overrides) -> Dataset:
    """Synthesize one scenario's trajectory and snapshots and preprocess them."""
    params = preset(scenario_id, seed=seed, **overrides)
    poses = make_trajectory(params, laps, seed)
    meta = {"scenario_params": {params.scenario_id: dict(params.to_pairs())}}
    return build_dataset(synth_snapshots(poses, params), laps, val_fraction, seed, meta)
