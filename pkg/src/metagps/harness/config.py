"""Flat experiment configuration with strict key checking."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

from ..metalearner.model import Ablation, HyperParams
from ..metalearner.training import Schedule

log = logging.getLogger(__name__)

# probe on raw features of the default SBM scores ~0.6 at this noise level
DEFAULT_FEATURE_NOISE = 0.541


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    # data: a dataset directory, or the SBM generator below when empty
    dataset: str = ""
    classes: int = 10
    per_class: int = 200
    p_in: float = 0.02
    p_out: float = 0.002
    feature_dim: int = 16
    feature_noise: float = DEFAULT_FEATURE_NOISE
    graph_seed: int = 0
    split: list = field(default_factory=lambda: [5, 0, 5])
    # tasks
    N: int = 5
    K: int = 3
    M: int = 10
    noise_ratio: float = 0.0
    noise_ratios: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3])
    # meta-learner
    alpha: float = 0.5
    beta: float = 0.001
    xi: float = 0.1
    zeta: float = 0.1
    gamma: float = 0.001
    tau: float = 0.5
    topk: int = 30
    phi_steps: int = 1
    theta_steps: int = 5
    order: str = "first"
    hidden: int = 16
    mlp_hidden: int = 16
    hops: int = 2
    sgc_power: int = 2
    pool_cap: int = 2048
    optimizer: str = "adam"
    no_st: bool = False
    no_s2: bool = False
    sgc_encoder: bool = False
    no_cl: bool = False
    no_pi: bool = False
    # schedule and evaluation
    batch_size: int = 10
    epochs: int = 100
    batches_per_epoch: int = 1
    patience: int = 50
    val_tasks: int = 50
    test_tasks: int = 200
    test_repeats: int = 3
    seed: int = 0
    out: str = "runs/default"

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            want = f.type if isinstance(f.type, str) else f.type.__name__
            if want == "bool" and not isinstance(v, bool):
                raise ConfigError(f"{f.name} must be a boolean, got {v!r}")
            if want == "int" and (isinstance(v, bool) or not isinstance(v, int)):
                raise ConfigError(f"{f.name} must be an integer, got {v!r}")
            if want == "float":
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{f.name} must be a number, got {v!r}")
                setattr(self, f.name, float(v))
            if want == "str" and not isinstance(v, str):
                raise ConfigError(f"{f.name} must be a string, got {v!r}")
        if not (isinstance(self.split, list) and len(self.split) == 3
                and all(isinstance(x, int) and x >= 0 for x in self.split)):
            raise ConfigError(f"split must be three non-negative integers, got {self.split!r}")
        if not self.dataset and sum(self.split) != self.classes:
            raise ConfigError(f"split {self.split} does not add up to {self.classes} classes")
        for r in [self.noise_ratio, *self.noise_ratios]:
            if not 0 <= r < 1:
                raise ConfigError(f"noise ratio {r} outside [0, 1)")
        for name in ("N", "K", "M", "batch_size", "hidden", "mlp_hidden", "test_repeats"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if not 1 <= self.hops <= 3:
            raise ConfigError("hops must be in 1..3")
        try:
            self.hyper()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def hyper(self) -> HyperParams:
        return HyperParams(**{k: getattr(self, k) for k in HyperParams.field_names()})

    def ablation(self) -> Ablation:
        return Ablation(**{k: getattr(self, k) for k in Ablation.field_names()})

    def schedule(self, noise_ratio: float | None = None) -> Schedule:
        return Schedule(N=self.N, K=self.K, M=self.M, batch_size=self.batch_size,
                        epochs=self.epochs, batches_per_epoch=self.batches_per_epoch,
                        patience=self.patience, val_tasks=self.val_tasks,
                        noise_ratio=self.noise_ratio if noise_ratio is None else noise_ratio,
                        seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    def replace(self, **changes) -> "Config":
        d = self.to_dict()
        d.update(changes)
        return from_dict(d)


def from_dict(d: dict) -> Config:
    known = {f.name for f in fields(Config)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return Config(**d)
    except TypeError as e:
        raise ConfigError(str(e)) from None


def parse_override(item: str) -> tuple[str, object]:
    """``key=value`` with the value read as JSON, falling back to a plain string."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    key = key.strip()
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def load_config(path: str | None = None, overrides=(), **direct) -> Config:
    """Config file, then ``--set`` overrides, then explicit keyword values."""
    d: dict = {}
    if path:
        try:
            with open(path) as fh:
                d = json.load(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(d, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    for item in overrides:
        k, v = parse_override(item)
        d[k] = v
    d.update({k: v for k, v in direct.items() if v is not None})
    cfg = from_dict(d)
    filled = sorted(set(cfg.to_dict()) - set(d))
    if filled:
        log.info("defaults used: %s",
                 json.dumps({k: getattr(cfg, k) for k in filled}, sort_keys=True))
    return cfg
