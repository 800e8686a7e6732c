"""Operator-in-the-loop machinery.

Intervention gating, rolling episode metrics, demonstration sessions,
and a scripted operator that stands in for the human expert so training
and acceptance runs are reproducible.  The oracle gets privileged
ground-truth misalignment (a human watching the rig has roughly that);
its imperfection is emulated with action noise and short pauses.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .records import EpisodeRecord
from .sim import BodyState, InsertionEnv, TaskGeometry, success_oracle


@dataclass
class OperatorInput:
    axes: np.ndarray | None = None
    override_active: bool = False
    stop_button: bool = False
    source: str = "scripted-oracle"   # console | scripted-oracle


def gate_action(
    policy_action: np.ndarray, operator: OperatorInput | None
) -> tuple[np.ndarray, bool]:
    """Replace the policy action while the operator holds the override.

    Axes are ignored unless the override is active; takes effect at the
    next control tick by construction (callers poll once per tick).
    """
    if operator is not None and operator.override_active:
        applied = np.asarray(operator.axes, dtype=np.float64)
        if applied.shape != np.shape(policy_action):
            raise ValueError(
                f"operator axes shape {applied.shape} != policy {np.shape(policy_action)}"
            )
        return applied, True
    return np.asarray(policy_action, dtype=np.float64), False


# ---------------------------------------------------------------------------
# rolling metrics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EpisodeStats:
    success: bool
    cycle_steps: int
    intervention_ratio: float


@dataclass(frozen=True)
class MetricsWindow:
    """Success rate, cycle time, and intervention rate over the last N
    episodes; every value recomputable exactly from the EpisodeRecords."""

    capacity: int = 20
    episodes: tuple[EpisodeStats, ...] = ()
    control_rate_hz: float = 10.0

    @property
    def success_rate(self) -> float:
        if not self.episodes:
            return 0.0
        return sum(e.success for e in self.episodes) / len(self.episodes)

    @property
    def cycle_time(self) -> float | None:
        """Mean seconds spent in the scored primitive on successful episodes;
        None when the window holds no successes."""
        good = [e.cycle_steps for e in self.episodes if e.success]
        if not good:
            return None
        return float(np.mean(good)) / self.control_rate_hz

    @property
    def intervention_rate(self) -> float:
        if not self.episodes:
            return 0.0
        return float(np.mean([e.intervention_ratio for e in self.episodes]))


def episode_stats(record: EpisodeRecord) -> EpisodeStats:
    return EpisodeStats(
        success=record.outcome,
        cycle_steps=record.cycle_steps(),
        intervention_ratio=record.intervention_ratio(),
    )


def update_metrics(window: MetricsWindow, record: EpisodeRecord) -> MetricsWindow:
    eps = (window.episodes + (episode_stats(record),))[-window.capacity :]
    return replace(window, episodes=eps)


def metrics_from_records(
    records: list[EpisodeRecord], capacity: int = 20
) -> MetricsWindow:
    w = MetricsWindow(capacity=capacity)
    for r in records:
        w = update_metrics(w, r)
    return w


# ---------------------------------------------------------------------------
# scripted operator
# ---------------------------------------------------------------------------


@dataclass
class OracleConfig:
    gain_x: float = 0.8          # action units per mm of lateral error
    gain_c: float = 0.3          # action units per degree of rotation error
    noise_sigma: float = 0.05
    pause_prob: float = 0.40     # chance per tick of a short operator pause
    pause_ticks: tuple[int, int] = (2, 6)
    sequential_deg: float = 1.2  # demo style: rotate first, translate after
    # intervention policy during training: the operator lets a competent
    # policy run longer before stepping in, mirroring how real operators
    # reduce involvement as performance improves
    stall_ticks: int = 30        # patience while the policy still fails a lot
    stall_ticks_max: int = 70    # patience once the rolling success is high
    wander_limit: float = 32.0   # mm of lateral error that triggers early help
    release_dx: float = 0.3      # mm alignment at which control is released
    release_dc: float = 0.8      # deg
    seed: int = 0


class ScriptedOracle:
    """Proportional alignment controller with privileged state access.

    Modes:
      demo           always overriding; presses the stop button at success
      intervene      takes over when the policy stalls or wanders, lets go
                     once re-aligned
      failure-inject drives toward a wedged misalignment early in the
                     episode, then releases control
      off            never intervenes
    """

    def __init__(self, geom: TaskGeometry, cfg: OracleConfig | None = None,
                 mode: str = "demo"):
        if mode not in ("demo", "intervene", "failure-inject", "off"):
            raise ValueError(f"unknown oracle mode {mode!r}")
        self.geom = geom
        self.cfg = cfg or OracleConfig()
        self.mode = mode
        self.force_failure = False   # demo-mode switch: sabotage instead of align
        self._rng = np.random.default_rng(self.cfg.seed)
        self._pause_left = 0
        self._holding = False
        self._inject_done = False
        self._performance = 0.0

    def performance_hint(self, success_rate: float) -> None:
        """Rolling success rate of the learner; scales the stall patience."""
        self._performance = min(max(float(success_rate), 0.0), 1.0)

    def _stall_threshold(self) -> float:
        cfg = self.cfg
        return cfg.stall_ticks + (cfg.stall_ticks_max - cfg.stall_ticks) * self._performance

    def begin_episode(self, episode: int) -> None:
        """Reset per-episode state on a reproducible per-episode stream."""
        self._rng = np.random.default_rng(
            np.random.SeedSequence((self.cfg.seed, episode))
        )
        self._pause_left = 0
        self._holding = False
        self._inject_done = False

    # -- low-level alignment command ----------------------------------------

    def _align_action(self, state: BodyState, sequential: bool = False) -> np.ndarray:
        g, cfg = self.geom, self.cfg
        dx = state.x - g.slot_center_x
        dc = state.c - g.slot_rotation
        ax = -cfg.gain_x * dx
        ac = -cfg.gain_c * dc
        if sequential and abs(dc) > cfg.sequential_deg:
            # one axis at a time, the way a human works a hand controller
            ax = 0.0
        a = np.array([ax, ac])
        a += self._rng.normal(0.0, cfg.noise_sigma, size=2)
        return np.clip(a, -1.0, 1.0)

    def _sabotage_action(self, state: BodyState) -> np.ndarray:
        # head for the slot laterally but hold a wedging tilt
        g, cfg = self.geom, self.cfg
        dx = state.x - g.slot_center_x
        ax = -cfg.gain_x * dx
        ac = 0.6 if state.c - g.slot_rotation < 6.0 else 0.0
        return np.clip(np.array([ax, ac]), -1.0, 1.0)

    # -- gate protocol -------------------------------------------------------

    def poll(self, state: BodyState, obs=None, node: str = "", elapsed: int = 0,
             env=None, mode: str = "train") -> OperatorInput | None:
        adaptive_node = node in ("insert", "freeform")
        if self.mode == "off":
            return None
        if not adaptive_node:
            # the operator keeps watching (and labeling) through the
            # non-adaptive primitives but never steers them
            if self.mode == "demo" and not self.force_failure:
                return OperatorInput(
                    axes=None,
                    override_active=False,
                    stop_button=success_oracle(state, self.geom),
                )
            return None

        if self.mode == "demo":
            if self.force_failure:
                return OperatorInput(
                    axes=self._sabotage_action(state), override_active=True
                )
            if self._pause_left > 0:
                self._pause_left -= 1
                axes = np.zeros(2)
            else:
                if self._rng.random() < self.cfg.pause_prob:
                    self._pause_left = int(
                        self._rng.integers(*self.cfg.pause_ticks)
                    )
                axes = self._align_action(state, sequential=True)
            return OperatorInput(
                axes=axes,
                override_active=True,
                stop_button=success_oracle(state, self.geom),
            )

        if self.mode == "failure-inject":
            if self._inject_done:
                return None
            wedged = state.z < -1.0 and abs(state.c - self.geom.slot_rotation) > 3.0
            if elapsed > 15 or wedged:
                self._inject_done = True
                return None
            return OperatorInput(
                axes=self._sabotage_action(state), override_active=True
            )

        # intervene mode
        g, cfg = self.geom, self.cfg
        dx = state.x - g.slot_center_x
        dc = state.c - g.slot_rotation
        near_goal = state.z < g.z_goal + 2.0
        if self._holding:
            if (abs(dx) <= cfg.release_dx and abs(dc) <= cfg.release_dc) or near_goal:
                self._holding = False
                return None
            return OperatorInput(axes=self._align_action(state), override_active=True)
        stalled = elapsed >= self._stall_threshold() and not near_goal
        wandering = abs(dx) > cfg.wander_limit
        if stalled or wandering:
            self._holding = True
            return OperatorInput(axes=self._align_action(state), override_active=True)
        return None


# ---------------------------------------------------------------------------
# demonstration sessions
# ---------------------------------------------------------------------------


def collect_demos(
    n: int,
    net,
    env: InsertionEnv,
    operator: ScriptedOracle,
    *,
    transition_sink=None,
    episode_offset: int = 0,
    reward_kind: str = "dense",
    reward_classifier=None,
    stop_classifiers: dict | None = None,
    vision: bool = True,
) -> tuple[list[EpisodeRecord], int]:
    """Run n full-net demo traversals; only successful ones are kept.

    Returns (stored records, number of discarded failures).  Transitions
    stream to `transition_sink` only for episodes that end in success
    (failed demonstrations would poison the demonstration buffer).
    """
    from .mpnet import traverse  # deferred: hil <-> mpnet would cycle at import

    stored: list[EpisodeRecord] = []
    discarded = 0
    for i in range(n):
        episode = episode_offset + i
        env.reset(episode)
        operator.begin_episode(episode)
        staged: list = []
        rec = traverse(
            net, env, policy=None, gate=operator, mode="demo",
            reward_kind=reward_kind, reward_classifier=reward_classifier,
            stop_classifiers=stop_classifiers,
            vision=vision, episode=episode,
            transition_sink=staged.append if transition_sink else None,
        )
        if rec.outcome:
            stored.append(rec)
            if transition_sink:
                for ev in staged:
                    transition_sink(ev)
        else:
            discarded += 1
            warnings.warn(
                f"demo episode {episode} failed and was discarded", stacklevel=2
            )
    return stored, discarded
