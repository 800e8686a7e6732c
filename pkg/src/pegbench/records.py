"""Episode traces and their JSONL serialization.

One EpisodeRecord is the full story of a single net traversal: per-step
body states, actions, intervention flags, primitive ids, rewards, and
the final outcome.  Rolling metrics, replay, occupancy analysis, and
the console timeline are all recomputed from these records, so the
format is append-only and explicit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class StepRecord:
    tick: int
    primitive: str
    pose: tuple[float, float, float]
    velocity: tuple[float, float, float]
    wrench: tuple[float, float, float]
    action: tuple[float, ...] | None
    intervened: bool
    reward: float
    stop_button: bool = False

    def to_json(self) -> dict:
        return {
            "tick": self.tick,
            "primitive": self.primitive,
            "pose": list(self.pose),
            "velocity": list(self.velocity),
            "wrench": list(self.wrench),
            "action": None if self.action is None else list(self.action),
            "intervened": self.intervened,
            "reward": self.reward,
            "stop_button": self.stop_button,
        }

    @staticmethod
    def from_json(d: dict) -> "StepRecord":
        return StepRecord(
            tick=d["tick"],
            primitive=d["primitive"],
            pose=tuple(d["pose"]),
            velocity=tuple(d["velocity"]),
            wrench=tuple(d["wrench"]),
            action=None if d["action"] is None else tuple(d["action"]),
            intervened=d["intervened"],
            reward=d["reward"],
            stop_button=d.get("stop_button", False),
        )


@dataclass
class EpisodeRecord:
    episode: int
    mode: str                      # train | eval | demo
    steps: list[StepRecord] = field(default_factory=list)
    outcome: bool = False
    fault: bool = False
    scored_primitive: str | None = None
    seed: int | None = None

    @property
    def n_steps(self) -> int:
        return len(self.steps)

    def scored_steps(self) -> list[StepRecord]:
        if self.scored_primitive is None:
            return self.steps
        return [s for s in self.steps if s.primitive == self.scored_primitive]

    def cycle_steps(self) -> int:
        """Length of the scored (insertion) phase in control ticks."""
        return len(self.scored_steps())

    def intervention_ratio(self) -> float:
        if not self.steps:
            return 0.0
        return sum(1 for s in self.steps if s.intervened) / len(self.steps)

    def to_json_lines(self) -> list[str]:
        header = {
            "type": "episode_start",
            "episode": self.episode,
            "mode": self.mode,
            "scored_primitive": self.scored_primitive,
            "seed": self.seed,
        }
        lines = [json.dumps(header)]
        lines += [json.dumps(s.to_json()) for s in self.steps]
        lines.append(
            json.dumps(
                {
                    "type": "episode_end",
                    "episode": self.episode,
                    "outcome": self.outcome,
                    "fault": self.fault,
                    "n_steps": self.n_steps,
                    "cycle_steps": self.cycle_steps(),
                    "intervention_ratio": self.intervention_ratio(),
                }
            )
        )
        return lines


def write_episodes(path: str | Path, records: list[EpisodeRecord]) -> None:
    with open(path, "w") as f:
        for rec in records:
            for line in rec.to_json_lines():
                f.write(line + "\n")


def append_episode(path: str | Path, record: EpisodeRecord) -> None:
    with open(path, "a") as f:
        for line in record.to_json_lines():
            f.write(line + "\n")


def read_episodes(path: str | Path) -> list[EpisodeRecord]:
    records: list[EpisodeRecord] = []
    current: EpisodeRecord | None = None
    with open(path) as f:
        for raw in f:
            raw = raw.strip()
            if not raw:
                continue
            d = json.loads(raw)
            kind = d.get("type")
            if kind == "episode_start":
                current = EpisodeRecord(
                    episode=d["episode"],
                    mode=d["mode"],
                    scored_primitive=d.get("scored_primitive"),
                    seed=d.get("seed"),
                )
            elif kind == "episode_end":
                if current is None:
                    raise ValueError("episode_end without episode_start")
                current.outcome = d["outcome"]
                current.fault = d.get("fault", False)
                records.append(current)
                current = None
            else:
                if current is None:
                    raise ValueError("step line outside an episode")
                current.steps.append(StepRecord.from_json(d))
    return records
