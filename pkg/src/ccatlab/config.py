"""Experiment configuration: one JSON document, dotted-path overrides,
and construction of datasets, models, and attack suites from it."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import rng as rngmod
from .attacks import AttackConfig, frame_mask, pgd_attack_batch, random_sampling_attack
from .data import Dataset, load_idx, make_two_gaussians, make_two_point, ordered_split
from .geometry import ThreatModel
from .net import Network, make_mlp


@dataclass
class DatasetConfig:
    name: str = "two_gaussians"  # two_gaussians | two_point | digits | idx
    n: int = 1200
    separation: float = 6.0
    p0: float = 0.3
    spacing: float = 0.3  # atom spacing for two_point
    images: str | None = None  # IDX paths
    labels: str | None = None


@dataclass
class ModelConfig:
    hidden: list[int] = field(default_factory=lambda: [64, 64])


@dataclass
class TrainingConfig:
    regime: str = "normal"  # normal | at50 | at100 | ccat
    epochs: int = 20
    batch_size: int = 100
    lr: float = 0.1
    lr_decay: float = 0.95
    epsilon: float = 0.1
    rho: float = 10.0
    attack_iterations: int = 40
    attack_lr: float | None = None  # defaults: 0.005 for conf, 0.05 for ce
    attack_momentum: float = 0.9
    attack_lr_factor: float = 1.5


@dataclass
class AttackSpec:
    kind: str = "pgd_conf"  # pgd_conf | pgd_ce | random | frames
    p: str = "inf"
    epsilon: float = 0.1
    iterations: int = 200
    lr: float | None = None
    momentum: float = 0.9
    lr_factor: float | None = None
    init: str = "random"
    restarts: int = 1
    samples: int = 1000  # random sampling attack
    border: int = 2  # frames
    label: str | None = None


@dataclass
class SplitConfig:
    train: int = 800
    rte: int = 200
    te: int = 100
    holdout: int = 100


@dataclass
class EvalConfig:
    tpr: list[float] = field(default_factory=lambda: [0.99])


@dataclass
class ExperimentConfig:
    seed: int | None = None  # resolved by the CLI: flag, then file, then env
    output_dir: str = "runs/out"
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    splits: SplitConfig = field(default_factory=SplitConfig)
    attacks: list[AttackSpec] = field(
        default_factory=lambda: [
            AttackSpec(kind="pgd_conf", iterations=200, restarts=3),
            AttackSpec(kind="pgd_conf", iterations=200, init="zero"),
            AttackSpec(kind="pgd_ce", iterations=100, restarts=2),
        ]
    )
    eval: EvalConfig = field(default_factory=EvalConfig)


_SECTIONS = {
    "dataset": DatasetConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "splits": SplitConfig,
    "eval": EvalConfig,
}


def config_from_dict(doc: dict) -> ExperimentConfig:
    cfg = ExperimentConfig()
    known = {"seed", "output_dir", "attacks", *_SECTIONS}
    for key in doc:
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
    if "seed" in doc:
        cfg.seed = int(doc["seed"])
    cfg.output_dir = doc.get("output_dir", cfg.output_dir)
    for name, cls in _SECTIONS.items():
        if name in doc:
            setattr(cfg, name, _build(cls, doc[name]))
    if "attacks" in doc:
        cfg.attacks = [_build(AttackSpec, spec) for spec in doc["attacks"]]
    return cfg


def _build(cls, doc: dict):
    fields = {f for f in cls.__dataclass_fields__}
    for key in doc:
        if key not in fields:
            raise ValueError(f"unknown {cls.__name__} key {key!r}")
    return cls(**doc)


def load_config(path: str | None, overrides: Sequence[str] = ()) -> ExperimentConfig:
    """Read the JSON config (or defaults) and apply key=value overrides.

    Override keys use dotted paths into the document, e.g.
    training.lr=0.05; values are parsed as JSON with a string fallback.
    """
    if path is None:
        doc = {}
    else:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"override must look like a.b=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ValueError(f"cannot descend into {part!r} of override {key!r}")
        node[parts[-1]] = value
    return config_from_dict(doc)


def save_config(cfg: ExperimentConfig, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(asdict(cfg), f, indent=2)


def build_dataset(cfg: DatasetConfig, seed: int) -> Dataset:
    if cfg.name == "two_gaussians":
        return make_two_gaussians(cfg.n, cfg.separation, rngmod.stream(seed, "dataset"))
    if cfg.name == "two_point":
        return make_two_point(cfg.p0, cfg.spacing, cfg.n)
    if cfg.name == "digits":
        return load_digits_dataset(seed)
    if cfg.name == "idx":
        if not cfg.images or not cfg.labels:
            raise ValueError("idx dataset needs images and labels paths")
        return load_idx(cfg.images, cfg.labels)
    raise ValueError(f"unknown dataset {cfg.name!r}")


def load_digits_dataset(seed: int) -> Dataset:
    """8x8 handwritten digits bundled with scikit-learn, shuffled per seed."""
    from sklearn.datasets import load_digits  # optional dependency

    raw = load_digits()
    inputs = raw.data / 16.0
    labels = raw.target.astype(int)
    perm = rngmod.stream(seed, "digits-shuffle").permutation(len(labels))
    return Dataset(inputs[perm], labels[perm], name="digits", image_shape=(8, 8, 1))


def build_model(cfg: ModelConfig, input_dim: int, num_classes: int, seed: int) -> Network:
    dims = [input_dim, *cfg.hidden, num_classes]
    return make_mlp(dims, rngmod.stream(seed, "model-init"))


def split_dataset(ds: Dataset, cfg: SplitConfig) -> dict[str, Dataset]:
    return ordered_split(
        ds, {"train": cfg.train, "rte": cfg.rte, "te": cfg.te, "holdout": cfg.holdout}
    )


def _parse_p(p: str | float) -> float:
    if isinstance(p, str):
        return np.inf if p.lower() in ("inf", "linf") else float(p)
    return float(p)


def attack_name(spec: AttackSpec) -> str:
    if spec.label:
        return spec.label
    p = _parse_p(spec.p)
    pstr = "inf" if p == np.inf else format(p, "g")
    suffix = "-zero" if spec.init == "zero" else ""
    return f"{spec.kind}-L{pstr}-eps{spec.epsilon:g}{suffix}"


def build_suite(
    specs: Sequence[AttackSpec], seed: int, image_shape: tuple[int, ...] | None = None
):
    """Named batch attacks ready for build_eval_records."""
    suite = []
    for i, spec in enumerate(specs):
        name = attack_name(spec)
        p = _parse_p(spec.p)
        tm = ThreatModel(p, spec.epsilon)
        attack_seed = rngmod.derive_seed(seed, "eval-attack", i)
        if spec.kind == "random":

            def run_random(net, X, ys, ids, _tm=tm, _n=spec.samples, _seed=attack_seed):
                return [
                    random_sampling_attack(net, X[j], int(ys[j]), _tm, _n, _seed, ids[j])
                    for j in range(len(X))
                ]

            suite.append((name, run_random))
            continue
        if spec.kind == "frames":
            if image_shape is None:
                raise ValueError("frames attack needs the dataset image shape")
            mask = frame_mask(image_shape, spec.border)
            cfg = AttackConfig(
                objective="conf",
                tm=tm,
                iterations=spec.iterations,
                lr=spec.lr if spec.lr is not None else 0.01,
                momentum=spec.momentum,
                lr_factor=spec.lr_factor if spec.lr_factor is not None else 1.1,
                init=spec.init,
                restarts=spec.restarts,
                mask=mask,
                seed=attack_seed,
            )
        elif spec.kind in ("pgd_conf", "pgd_ce"):
            conf = spec.kind == "pgd_conf"
            cfg = AttackConfig(
                objective="conf" if conf else "ce",
                tm=tm,
                iterations=spec.iterations,
                lr=spec.lr if spec.lr is not None else (0.001 if conf else 0.05),
                momentum=spec.momentum,
                lr_factor=spec.lr_factor if spec.lr_factor is not None else (1.1 if conf else 1.25),
                init=spec.init,
                restarts=spec.restarts,
                seed=attack_seed,
            )
        else:
            raise ValueError(f"unknown attack kind {spec.kind!r}")

        def run_pgd(net, X, ys, ids, _cfg=cfg):
            return pgd_attack_batch(net, X, ys, _cfg, ids)

        suite.append((name, run_pgd))
    return suite
