"""Run configuration: everything a training/eval run needs, in one
versioned YAML document.

Every system variant of the main comparison (full, no-demos,
no-interventions, no-vision, no-priors, the imitation baseline, and the
random-policy floor) is expressible purely through flags here.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .sim import ResetConfig, TaskGeometry

CONFIG_FORMAT_VERSION = 1

VARIANTS = (
    "full",
    "no_demos",
    "no_interventions",
    "no_vision",
    "no_priors",
    "hg_dagger",
    "random",
)


@dataclass(frozen=True)
class RLHyperparams:
    lr: float = 3e-4
    batch_size: int = 256
    discount: float = 0.99
    polyak: float = 5e-3
    utd_ratio: int = 4
    init_temperature: float = 0.1
    hidden: tuple[int, ...] = (256, 256)
    online_capacity: int = 100_000
    augment_shift: bool = True   # train-time +/-1-cell image translation


@dataclass(frozen=True)
class RunConfig:
    name: str = "full"
    seed: int = 0
    geometry: TaskGeometry = field(default_factory=TaskGeometry)
    reset: ResetConfig = field(default_factory=ResetConfig)
    rl: RLHyperparams = field(default_factory=RLHyperparams)
    net_path: str | None = None        # None: built-in net for the variant
    horizon: int = 90
    limits: str = "adaptive"           # adaptive | static
    # prior-knowledge flags
    structure: bool = True             # False: single freeform primitive
    demos: int = 20
    interventions: bool = True
    vision: bool = True
    reward_kind: str = "sparse"        # sparse | dense
    algo: str = "rlpd"                 # rlpd | dagger | random
    # budgets and pacing
    train_episodes: int = 300
    max_wallclock_s: float | None = None
    eval_episodes: int = 20
    sync_interval_ticks: int = 50
    checkpoint_every_episodes: int = 50
    # classifier corpus
    classifier_episodes: int = 40      # demo + induced-jam + random episodes

    def __post_init__(self) -> None:
        if self.limits not in ("adaptive", "static"):
            raise ValueError(f"unknown limits mode {self.limits!r}")
        if self.reward_kind not in ("sparse", "dense"):
            raise ValueError(f"unknown reward kind {self.reward_kind!r}")
        if self.algo not in ("rlpd", "dagger", "random"):
            raise ValueError(f"unknown algo {self.algo!r}")


def apply_variant(base: RunConfig, variant: str) -> RunConfig:
    """Flag layout of each system row of the main comparison."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    v = variant
    if v == "full":
        over = dict(structure=True, demos=base.demos or 20, interventions=True,
                    vision=True, reward_kind="sparse", algo="rlpd")
    elif v == "no_demos":
        over = dict(structure=True, demos=0, interventions=False,
                    vision=True, reward_kind="sparse", algo="rlpd")
    elif v == "no_interventions":
        over = dict(structure=True, demos=base.demos or 20, interventions=False,
                    vision=True, reward_kind="sparse", algo="rlpd")
    elif v == "no_vision":
        over = dict(structure=True, demos=base.demos or 20, interventions=True,
                    vision=False, reward_kind="sparse", algo="rlpd")
    elif v == "no_priors":
        over = dict(structure=False, demos=0, interventions=False,
                    vision=True, reward_kind="dense", algo="rlpd")
    elif v == "hg_dagger":
        over = dict(structure=True, demos=base.demos or 20, interventions=True,
                    vision=True, reward_kind="dense", algo="dagger")
    else:  # random
        over = dict(structure=True, demos=0, interventions=False,
                    vision=True, reward_kind="dense", algo="random",
                    train_episodes=0)
    return replace(base, name=variant, **over)


# ---------------------------------------------------------------------------
# YAML round trip
# ---------------------------------------------------------------------------


def config_to_dict(cfg: RunConfig) -> dict:
    d = {
        "version": CONFIG_FORMAT_VERSION,
        "name": cfg.name,
        "seed": cfg.seed,
        "geometry": dataclasses.asdict(cfg.geometry),
        "reset": dataclasses.asdict(cfg.reset),
        "rl": dataclasses.asdict(cfg.rl),
    }
    d["rl"]["hidden"] = list(cfg.rl.hidden)
    for f in dataclasses.fields(RunConfig):
        if f.name in ("geometry", "reset", "rl", "name", "seed"):
            continue
        d[f.name] = getattr(cfg, f.name)
    return d


def config_from_dict(d: dict) -> RunConfig:
    version = d.get("version")
    if version != CONFIG_FORMAT_VERSION:
        raise ValueError(f"unsupported config version {version!r}")
    kwargs = dict(d)
    kwargs.pop("version")
    kwargs["geometry"] = TaskGeometry(**d.get("geometry", {}))
    kwargs["reset"] = ResetConfig(**d.get("reset", {}))
    rl = dict(d.get("rl", {}))
    if "hidden" in rl:
        rl["hidden"] = tuple(rl["hidden"])
    kwargs["rl"] = RLHyperparams(**rl)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(kwargs) - known
    if unknown:
        raise ValueError(f"unknown config fields: {sorted(unknown)}")
    return RunConfig(**kwargs)


def save_config(cfg: RunConfig, path: str | Path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(config_to_dict(cfg), f, sort_keys=False)


def load_config(path: str | Path) -> RunConfig:
    with open(path) as f:
        return config_from_dict(yaml.safe_load(f))
