"""Model and router checkpoints: a manifest plus one float32 blob per parameter."""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import persist
from .errors import ConfigError, DataError
from .model import ModelConfig, Regressor, count_params
from .preprocess import Scalers
from .router import Router, RouterConfig, router_param_count
from .tensor import parameter


@dataclass
class Checkpoint:
    """A trained model or router with its training metadata."""

    kind: str                      # "model" | "router"
    net: object                    # Regressor | Router
    training: dict = field(default_factory=dict)

    @property
    def param_count(self) -> int:
        return int(sum(w.data.size for w in self.net.weights.values()))

    def save(self, directory) -> Path:
        return save_checkpoint(self, directory)


def _blob_name(name: str) -> str:
    return f"param.{name}.f32"


def save_checkpoint(ckpt: Checkpoint, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    net = ckpt.net
    params = {name: persist.write_blob(directory, _blob_name(name), w.data)
              for name, w in net.weights.items()}
    if ckpt.kind == "model":
        closed_form = count_params(net.config)
    elif ckpt.kind == "router":
        closed_form = router_param_count(net.config)
    else:
        raise ConfigError(f"unknown checkpoint kind {ckpt.kind!r}")
    manifest = {
        "format_version": persist.FORMAT_VERSION,
        "kind": ckpt.kind,
        "config": net.config.to_json(),
        "param_count": ckpt.param_count,
        "param_count_closed_form": closed_form,
        "params": params,
        "param_order": list(net.weights),
        "scalers": net.scalers.to_json() if net.scalers.fitted else None,
        "training": ckpt.training,
    }
    persist.write_manifest(directory, manifest)
    return directory


def load_checkpoint(directory, kind: str | None = None) -> Checkpoint:
    directory = Path(directory)
    if not directory.exists():
        raise ConfigError(f"checkpoint not found: {directory}")
    m = persist.read_manifest(directory, kind=None)
    if m.get("kind") not in ("model", "router"):
        raise ConfigError(f"{directory} is not a checkpoint (kind={m.get('kind')!r})")
    if kind is not None and m["kind"] != kind:
        raise ConfigError(f"{directory} holds a {m['kind']} checkpoint, expected {kind}")
    weights = {}
    for name in m["param_order"]:
        weights[name] = parameter(persist.read_blob(directory, m["params"][name]))
    n = int(sum(w.data.size for w in weights.values()))
    if n != m["param_count"]:
        raise DataError(f"{directory}: manifest says {m['param_count']} parameters, blobs hold {n}")
    scalers = Scalers.from_json(m["scalers"]) if m.get("scalers") else Scalers()
    if m["kind"] == "model":
        net = Regressor(ModelConfig.from_json(m["config"]), weights, scalers)
        expected = count_params(net.config)
    else:
        net = Router(RouterConfig.from_json(m["config"]), weights, scalers)
        expected = router_param_count(net.config)
    if n != expected:
        raise DataError(f"{directory}: {n} parameters stored, config implies {expected}")
    return Checkpoint(m["kind"], net, m.get("training", {}))


def blob_element_count(directory) -> int:
    """Scalars actually present in the blob files (independent of the manifest counts)."""
    m = persist.read_manifest(Path(directory))
    total = 0
    for entry in m["params"].values():
        total += (Path(directory) / entry["file"]).stat().st_size // np.dtype(persist.BLOB_DTYPE).itemsize
    return int(total)
