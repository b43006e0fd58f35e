"""Run configuration: dataclasses, JSON round-trip, presets.

Config files are JSON with two sections, "train" and "data"; the canonical
key lists are exactly the dataclass fields below.  Unknown keys are errors,
not warnings.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .data import GenSpec

VIEW_CHOICES = ("off", "long", "trans")
DTYPE_CHOICES = ("float64", "float32")


@dataclass
class TrainConfig:
    # defaults are the desk-scale profile (< 1 min CPU per run); the
    # reference-scale preset lives in `paper_preset`
    seed: int = 0
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alpha: float = 0.01  # memory EMA coefficient (weight on the old slot)
    tau: float = 0.01  # contrastive temperature
    lam: float = 0.2  # contrastive loss weight ("lambda" in config files)
    no_cmcl: bool = False
    no_dsam: bool = False
    no_moe: bool = False
    single_view: str = "off"  # off | long | trans
    base_channels: int = 8
    proj_dim: int = 128
    patches: int = 4
    heads: int = 2
    share_backbone: bool = True
    gate_stop_gradient: bool = False
    dtype: str = "float64"
    select_by: str = "m_f1"
    log_train_metrics: bool = False
    data_seed: int | None = None
    split_ratios: tuple[float, float, float] = (7.0, 1.0, 2.0)
    data: GenSpec = field(default_factory=GenSpec)

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if self.tau <= 0:
            raise ValueError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.single_view not in VIEW_CHOICES:
            raise ValueError(f"single_view must be one of {VIEW_CHOICES}, got {self.single_view!r}")
        if self.dtype not in DTYPE_CHOICES:
            raise ValueError(f"dtype must be one of {DTYPE_CHOICES}, got {self.dtype!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        self.data.validate()

    @property
    def effective_data_seed(self) -> int:
        return self.seed if self.data_seed is None else self.data_seed


def paper_preset(seed: int = 0) -> TrainConfig:
    """Reference-scale settings: 224x224 inputs, 100 epochs, lr 1e-4."""
    return TrainConfig(
        seed=seed,
        epochs=100,
        lr=1e-4,
        data=GenSpec(image_size=224, n_samples=1657, spacing_range=(0.042, 0.064)),
    )


_TRAIN_KEY_ALIASES = {"lambda": "lam"}
_TRAIN_FIELDS = {f.name for f in dataclasses.fields(TrainConfig)} - {"data"}
_DATA_FIELDS = {f.name for f in dataclasses.fields(GenSpec)}


def config_to_dict(cfg: TrainConfig) -> dict:
    train = {}
    for f in dataclasses.fields(TrainConfig):
        if f.name == "data":
            continue
        key = "lambda" if f.name == "lam" else f.name
        val = getattr(cfg, f.name)
        train[key] = list(val) if isinstance(val, tuple) else val
    data = {
        f.name: (list(v) if isinstance(v := getattr(cfg.data, f.name), tuple) else v)
        for f in dataclasses.fields(GenSpec)
    }
    return {"train": train, "data": data}


def config_from_dict(doc: dict) -> TrainConfig:
    unknown_top = set(doc) - {"train", "data"}
    if unknown_top:
        raise ValueError(f"unknown config sections: {sorted(unknown_top)}")
    train_doc = dict(doc.get("train", {}))
    data_doc = dict(doc.get("data", {}))
    train_kwargs = {}
    for key, val in train_doc.items():
        name = _TRAIN_KEY_ALIASES.get(key, key)
        if name not in _TRAIN_FIELDS:
            raise ValueError(f"unknown train config key: {key!r}")
        if name == "split_ratios":
            val = tuple(val)
        train_kwargs[name] = val
    data_kwargs = {}
    for key, val in data_doc.items():
        if key not in _DATA_FIELDS:
            raise ValueError(f"unknown data config key: {key!r}")
        if key in ("class_ratios", "spacing_range"):
            val = tuple(val)
        data_kwargs[key] = val
    cfg = TrainConfig(data=GenSpec(**data_kwargs), **train_kwargs)
    cfg.validate()
    return cfg


def load_config(path) -> TrainConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")
