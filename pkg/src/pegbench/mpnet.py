"""Manipulation primitives and their state-machine composition.

A primitive assigns each task-frame axis an independent controller mode
(velocity, force, or position-hold) with either a fixed setpoint or an
adaptive one bound to a policy action dimension, plus a tool command
and a stop condition.  Primitives compose into a directed net whose
transitions fire on stop events; traversing the net from the initial
node to a terminal produces one episode.

Action layout: the action vector covers the adaptive axes of a
primitive in fixed axis order (x, z, c), each component in [-1, 1]
scaled linearly to the axis bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from .records import EpisodeRecord, StepRecord
from .sim import (
    AXES,
    AxisTarget,
    BodyState,
    EnvFault,
    InsertionEnv,
    Observation,
    TaskGeometry,
    render_obs,
    reward as compute_reward,
    success_oracle,
)

NET_FORMAT_VERSION = 1

STOP_KINDS = (
    "force-threshold",
    "depth-threshold",
    "timeout",
    "learned-classifier",
    "operator-button",
)


class NetConfigError(ValueError):
    pass


@dataclass(frozen=True)
class AxisSpec:
    axis: str                       # x | z | c
    mode: str                       # velocity | force | hold
    setpoint: float = 0.0
    adaptive: bool = False
    bound: float = 0.0              # setpoint magnitude at |action| = 1

    def __post_init__(self) -> None:
        if self.axis not in AXES:
            raise NetConfigError(f"unknown axis {self.axis!r}")
        if self.mode not in ("velocity", "force", "hold"):
            raise NetConfigError(f"unknown mode {self.mode!r} on axis {self.axis}")
        if self.adaptive:
            if self.mode != "velocity":
                raise NetConfigError(
                    f"adaptive setpoints are velocity-only (axis {self.axis})"
                )
            if self.bound <= 0:
                raise NetConfigError(f"adaptive axis {self.axis} needs a bound > 0")


@dataclass(frozen=True)
class StopCondition:
    kind: str
    axis: str = "z"
    threshold: float = 0.0
    direction: str = "geq"          # geq | leq, for threshold kinds
    limit: int = 0                  # timeout kind: ticks
    classifier_ref: str = ""        # learned-classifier kind
    hold_steps: int = 1             # consecutive ticks the predicate must hold

    def __post_init__(self) -> None:
        if self.kind not in STOP_KINDS:
            raise NetConfigError(f"unknown stop kind {self.kind!r}")
        if self.kind == "timeout" and self.limit < 1:
            raise NetConfigError("timeout stop needs limit >= 1")
        if self.kind == "learned-classifier" and not self.classifier_ref:
            raise NetConfigError("learned-classifier stop needs classifier_ref")
        if self.direction not in ("geq", "leq"):
            raise NetConfigError(f"unknown direction {self.direction!r}")
        if self.hold_steps < 1:
            raise NetConfigError("hold_steps must be >= 1")


@dataclass(frozen=True)
class ManipulationPrimitive:
    id: str
    axes: dict[str, AxisSpec]
    stop: StopCondition
    tool: str = "none"              # none | grip | release
    timeout: int = 150              # hard per-node tick budget

    def __post_init__(self) -> None:
        if set(self.axes) != set(AXES):
            raise NetConfigError(
                f"node {self.id}: must specify all axes {AXES}, got {sorted(self.axes)}"
            )
        if self.tool not in ("none", "grip", "release"):
            raise NetConfigError(f"node {self.id}: unknown tool {self.tool!r}")
        if self.timeout < 1:
            raise NetConfigError(f"node {self.id}: timeout must be >= 1")

    @property
    def adaptive(self) -> bool:
        return any(a.adaptive for a in self.axes.values())

    def adaptive_axes(self) -> list[AxisSpec]:
        return [self.axes[a] for a in AXES if self.axes[a].adaptive]

    @property
    def action_dim(self) -> int:
        return len(self.adaptive_axes())


@dataclass
class MPNet:
    nodes: dict[str, ManipulationPrimitive]
    edges: dict[tuple[str, str], str]   # (node, event) -> target
    initial: str
    terminals: set[str]                 # marker ids or executed nodes
    training_skip: set[str] = field(default_factory=set)
    scored: str | None = None           # node whose span defines cycle time
    name: str = "net"

    def adaptive_node(self) -> ManipulationPrimitive | None:
        for mp in self.nodes.values():
            if mp.adaptive:
                return mp
        return None

    def scored_id(self) -> str | None:
        if self.scored:
            return self.scored
        mp = self.adaptive_node()
        return mp.id if mp else None

    def max_steps(self) -> int:
        return sum(mp.timeout for mp in self.nodes.values())


def validate_mpnet(net: MPNet) -> list[str]:
    """Structural report; empty means every net invariant holds."""
    problems: list[str] = []
    node_ids = set(net.nodes)
    all_targets = node_ids | net.terminals

    if net.initial not in node_ids:
        problems.append(f"initial node {net.initial!r} is not a defined node")
        return problems
    if not net.terminals:
        problems.append("no terminal nodes declared")

    for (src, event), dst in net.edges.items():
        if src not in node_ids:
            problems.append(f"edge from unknown node {src!r}")
        if event not in ("done", "timeout"):
            problems.append(f"edge ({src}, {event}): unknown event")
        if dst not in all_targets:
            problems.append(f"edge ({src}, {event}) -> unknown target {dst!r}")

    # reachability over all edges
    seen = {net.initial}
    frontier = [net.initial]
    while frontier:
        cur = frontier.pop()
        for ev in ("done", "timeout"):
            dst = net.edges.get((cur, ev))
            if dst and dst in node_ids and dst not in seen:
                seen.add(dst)
                frontier.append(dst)
    for nid in node_ids:
        if nid not in seen:
            problems.append(f"unreachable node {nid!r}")

    # guaranteed termination: every executed node needs a timeout route, and
    # the timeout-only walk must reach a terminal without cycling
    for nid in sorted(node_ids & seen):
        if nid in net.terminals:
            continue
        if (nid, "done") not in net.edges:
            problems.append(f"node {nid!r} has no done edge")
        if (nid, "timeout") not in net.edges:
            problems.append(f"no-guaranteed-termination: node {nid!r} lacks a timeout edge")
            continue
        cur, hops = nid, 0
        while cur in node_ids and cur not in net.terminals:
            nxt = net.edges.get((cur, "timeout"))
            if nxt is None:
                problems.append(
                    f"no-guaranteed-termination: timeout path from {nid!r} stalls at {cur!r}"
                )
                break
            cur = nxt
            hops += 1
            if hops > len(node_ids):
                problems.append(
                    f"no-guaranteed-termination: timeout cycle reachable from {nid!r}"
                )
                break

    for nid, mp in net.nodes.items():
        if nid != mp.id:
            problems.append(f"node key {nid!r} does not match primitive id {mp.id!r}")

    skip_unknown = net.training_skip - node_ids
    if skip_unknown:
        problems.append(f"training_skip references unknown nodes {sorted(skip_unknown)}")
    if net.scored and net.scored not in node_ids:
        problems.append(f"scored node {net.scored!r} is not defined")
    return problems


def resolve_setpoints(
    mp: ManipulationPrimitive, action: np.ndarray | None = None
) -> dict[str, AxisTarget]:
    """Controller targets for one tick; adaptive axes scale the action
    linearly to their bounds, fixed axes pass their setpoints through."""
    if mp.adaptive:
        if action is None:
            raise NetConfigError(f"node {mp.id} is adaptive and needs an action")
        action = np.asarray(action, dtype=np.float64).ravel()
        if action.shape[0] != mp.action_dim:
            raise NetConfigError(
                f"node {mp.id}: action dim {action.shape[0]} != {mp.action_dim}"
            )
        action = np.clip(action, -1.0, 1.0)
    targets: dict[str, AxisTarget] = {}
    adaptive_i = 0
    for axis in AXES:
        spec = mp.axes[axis]
        if spec.adaptive:
            targets[axis] = AxisTarget("velocity", float(action[adaptive_i]) * spec.bound)
            adaptive_i += 1
        elif spec.mode == "hold":
            targets[axis] = AxisTarget("hold")
        else:
            targets[axis] = AxisTarget(spec.mode, spec.setpoint)
    return targets


class StopConfigError(ValueError):
    pass


def eval_stop(
    cond: StopCondition,
    state: BodyState,
    elapsed: int,
    *,
    stop_button: bool = False,
    classifiers: dict | None = None,
    obs: Observation | None = None,
    vision: bool = True,
) -> bool:
    """Instantaneous stop predicate; hold/hysteresis is the monitor's job."""
    if cond.kind == "timeout":
        return elapsed >= cond.limit
    if cond.kind == "force-threshold":
        idx = AXES.index(cond.axis)
        mag = abs(state.wrench[idx])
        return mag >= cond.threshold if cond.direction == "geq" else mag <= cond.threshold
    if cond.kind == "depth-threshold":
        idx = AXES.index(cond.axis)
        val = state.pose[idx]
        return val >= cond.threshold if cond.direction == "geq" else val <= cond.threshold
    if cond.kind == "operator-button":
        return stop_button
    if cond.kind == "learned-classifier":
        if not classifiers or cond.classifier_ref not in classifiers:
            raise StopConfigError(
                f"classifier {cond.classifier_ref!r} not resolvable"
            )
        if obs is None:
            raise StopConfigError("learned-classifier stop needs the observation")
        p = float(classifiers[cond.classifier_ref].prob(obs.features(vision=vision))[0])
        return p >= 0.5
    raise StopConfigError(f"unknown stop kind {cond.kind!r}")


class StopMonitor:
    """Applies the hold-for-N-consecutive-ticks rule on top of eval_stop."""

    def __init__(self, cond: StopCondition):
        self.cond = cond
        self._streak = 0

    def tick(self, state: BodyState, elapsed: int, **kw) -> bool:
        if eval_stop(self.cond, state, elapsed, **kw):
            self._streak += 1
        else:
            self._streak = 0
        return self._streak >= self.cond.hold_steps


# ---------------------------------------------------------------------------
# traversal
# ---------------------------------------------------------------------------


@dataclass
class TransitionEvent:
    """RL-facing step emitted for adaptive-node ticks."""

    obs_features: np.ndarray
    action: np.ndarray
    reward: float
    next_obs_features: np.ndarray
    done: bool
    intervened: bool
    primitive_index: int


def traverse(
    net: MPNet,
    env: InsertionEnv,
    policy=None,
    gate=None,
    mode: str = "eval",
    *,
    reward_kind: str = "dense",
    reward_classifier=None,
    stop_classifiers: dict | None = None,
    vision: bool = True,
    rng: np.random.Generator | None = None,
    episode: int = 0,
    transition_sink=None,
    on_tick=None,
) -> EpisodeRecord:
    """Run the net from its initial node until a terminal is reached.

    mode "train"/"eval" bypasses nodes listed in training_skip (repeated
    rollouts); "demo" runs the full net with adaptive actions coming
    exclusively from the operator gate.  Policy is any callable mapping
    observation features to an action vector in [-1, 1]^n.
    """
    if mode not in ("train", "eval", "demo"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "demo" and gate is None:
        raise ValueError("demo mode needs an operator gate")
    problems = validate_mpnet(net)
    if problems:
        raise NetConfigError(f"net invalid: {problems}")
    if env.state is None:
        raise RuntimeError("env.reset() must be applied before traverse()")

    geom = env.geom
    scored_id = net.scored_id()
    record = EpisodeRecord(
        episode=episode, mode=mode, scored_primitive=scored_id
    )
    state = env.state
    obs = render_obs(state, geom, None)
    tick = 0
    sparse_granted = False
    node: str = net.initial
    node_order = {nid: i for i, nid in enumerate(net.nodes)}
    scored_exit: tuple[str, BodyState] | None = None

    while True:
        if node in net.terminals and node not in net.nodes:
            break
        mp = net.nodes[node]
        skip = mode in ("train", "eval") and node in net.training_skip
        event = None
        if skip:
            event = "done"
        else:
            env.begin_primitive()
            monitor = StopMonitor(mp.stop)
            elapsed = 0
            fault = False
            while True:
                action = None
                intervened = False
                op = None
                if gate is not None:
                    op = gate.poll(
                        state=state, obs=obs, node=node, elapsed=elapsed,
                        env=env, mode=mode,
                    )
                if mp.adaptive:
                    if mode == "demo":
                        if op is None or op.axes is None:
                            raise RuntimeError(
                                "demo mode requires operator input on adaptive nodes"
                            )
                        action = np.asarray(op.axes, dtype=np.float64)
                        intervened = True
                    else:
                        if policy is not None:
                            action = np.asarray(
                                policy(obs.features(vision=vision)), dtype=np.float64
                            )
                        else:
                            action = np.zeros(mp.action_dim)
                        if op is not None and op.override_active:
                            action = np.asarray(op.axes, dtype=np.float64)
                            intervened = True
                targets = resolve_setpoints(mp, action)
                prev_features = obs.features(vision=vision)
                try:
                    state, _ = env.step(targets)
                except EnvFault:
                    record.fault = True
                    record.outcome = False
                    fault = True
                    break
                elapsed += 1
                tick += 1
                obs = render_obs(state, geom, obs)

                if reward_kind == "sparse":
                    r = compute_reward(
                        state, geom, "sparse", classifier=reward_classifier,
                        obs=obs, vision=vision,
                    )
                    if r >= 1.0 and sparse_granted:
                        r = 0.0
                    elif r >= 1.0:
                        sparse_granted = True
                else:
                    r = compute_reward(state, geom, "dense")

                stop_button = bool(op.stop_button) if op is not None else False
                fired = monitor.tick(
                    state, elapsed, stop_button=stop_button,
                    classifiers=stop_classifiers, obs=obs, vision=vision,
                )
                if mode == "demo" and stop_button:
                    fired = True
                timed_out = elapsed >= mp.timeout
                event = "done" if fired else ("timeout" if timed_out else None)

                record.steps.append(
                    StepRecord(
                        tick=tick,
                        primitive=node,
                        pose=state.pose,
                        velocity=state.velocity,
                        wrench=state.wrench,
                        action=None if action is None else tuple(action),
                        intervened=intervened,
                        reward=r,
                        stop_button=stop_button,
                    )
                )
                if mp.adaptive and transition_sink is not None:
                    # finite-horizon MDP: the adaptive primitive's value chain
                    # ends at any exit, timeout included
                    transition_sink(
                        TransitionEvent(
                            obs_features=prev_features,
                            action=action.copy(),
                            reward=r,
                            next_obs_features=obs.features(vision=vision),
                            done=event is not None,
                            intervened=intervened,
                            primitive_index=node_order[node],
                        )
                    )
                if on_tick is not None:
                    on_tick(tick=tick, node=node, state=state, obs=obs,
                            action=action, intervened=intervened, reward=r)
                if event is not None:
                    break
            if fault:
                return record
        if node == scored_id:
            scored_exit = (event, state)
        if node in net.terminals:
            break
        nxt = net.edges.get((node, event))
        if nxt is None:
            raise NetConfigError(f"no edge for ({node}, {event})")
        node = nxt
        if tick > net.max_steps():
            raise NetConfigError("traversal exceeded the summed timeout budget")

    if scored_exit is not None:
        ev, st = scored_exit
        record.outcome = ev == "done" and success_oracle(st, geom)
    else:
        record.outcome = success_oracle(state, geom)
    return record


# ---------------------------------------------------------------------------
# the production insertion net and file IO
# ---------------------------------------------------------------------------


def default_insertion_net(
    geom: TaskGeometry | None = None,
    horizon: int = 90,
    insert_stop: StopCondition | None = None,
) -> MPNet:
    """Five-primitive insertion net: guarded approach, adaptive fine
    insertion, snap press, release, retract.

    The insertion stop defaults to a ground-truth depth threshold; runs
    with a trained stop classifier swap it for a learned-classifier
    condition via `insert_stop`.
    """
    g = geom or TaskGeometry()
    hold = lambda a: AxisSpec(a, "hold")
    nodes = {
        "approach": ManipulationPrimitive(
            id="approach",
            axes={
                "x": hold("x"),
                "z": AxisSpec("z", "velocity", -10.0),
                "c": hold("c"),
            },
            stop=StopCondition(
                "force-threshold", axis="z", threshold=1.5, hold_steps=2
            ),
            timeout=150,
        ),
        "insert": ManipulationPrimitive(
            id="insert",
            axes={
                "x": AxisSpec("x", "velocity", adaptive=True, bound=10.0),
                "z": AxisSpec("z", "force", -2.0),
                "c": AxisSpec("c", "velocity", adaptive=True, bound=20.0),
            },
            stop=insert_stop
            or StopCondition(
                "depth-threshold", axis="z", threshold=g.z_goal + 0.2,
                direction="leq", hold_steps=2,
            ),
            timeout=horizon,
        ),
        "snap": ManipulationPrimitive(
            id="snap",
            axes={
                "x": AxisSpec("x", "force", 0.0),
                "z": AxisSpec("z", "velocity", -1.0),
                "c": AxisSpec("c", "force", 0.0),
            },
            stop=StopCondition(
                "depth-threshold", axis="z", threshold=g.z_goal + 0.05,
                direction="leq",
            ),
            timeout=30,
        ),
        "release": ManipulationPrimitive(
            id="release",
            axes={"x": hold("x"), "z": hold("z"), "c": hold("c")},
            stop=StopCondition("timeout", limit=5),
            tool="release",
            timeout=20,
        ),
        "retract": ManipulationPrimitive(
            id="retract",
            axes={
                "x": AxisSpec("x", "force", 0.0),
                "z": AxisSpec("z", "velocity", 3.0),
                "c": AxisSpec("c", "force", 0.0),
            },
            stop=StopCondition(
                "depth-threshold", axis="z",
                threshold=g.approach_height - 1.0, direction="geq",
            ),
            timeout=150,
        ),
    }
    edges = {
        ("approach", "done"): "insert",
        ("approach", "timeout"): "fail",
        ("insert", "done"): "snap",
        ("insert", "timeout"): "fail",
        ("snap", "done"): "release",
        ("snap", "timeout"): "release",
        ("release", "done"): "retract",
        ("release", "timeout"): "retract",
        ("retract", "done"): "exit",
        ("retract", "timeout"): "exit",
    }
    return MPNet(
        nodes=nodes,
        edges=edges,
        initial="approach",
        terminals={"exit", "fail"},
        training_skip={"snap", "release"},
        scored="insert",
        name="planar-insertion",
    )


def freeform_net(geom: TaskGeometry | None = None, horizon: int = 90) -> MPNet:
    """Single unstructured primitive: the policy drives x, z, and c velocity
    directly with no approach phase (the no-priors ablation)."""
    g = geom or TaskGeometry()
    nodes = {
        "freeform": ManipulationPrimitive(
            id="freeform",
            axes={
                "x": AxisSpec("x", "velocity", adaptive=True, bound=10.0),
                "z": AxisSpec("z", "velocity", adaptive=True, bound=10.0),
                "c": AxisSpec("c", "velocity", adaptive=True, bound=20.0),
            },
            stop=StopCondition(
                "depth-threshold", axis="z", threshold=g.z_goal + 0.2,
                direction="leq", hold_steps=2,
            ),
            timeout=horizon,
        )
    }
    edges = {("freeform", "done"): "exit", ("freeform", "timeout"): "fail"}
    return MPNet(
        nodes=nodes,
        edges=edges,
        initial="freeform",
        terminals={"exit", "fail"},
        scored="freeform",
        name="freeform",
    )


def net_to_dict(net: MPNet) -> dict:
    nodes = []
    for mp in net.nodes.values():
        axes = {}
        for a in AXES:
            spec = mp.axes[a]
            if spec.adaptive:
                axes[a] = {"mode": spec.mode, "adaptive": True, "bound": spec.bound}
            else:
                axes[a] = {"mode": spec.mode, "setpoint": spec.setpoint}
        stop = {
            "kind": mp.stop.kind,
            "axis": mp.stop.axis,
            "threshold": mp.stop.threshold,
            "direction": mp.stop.direction,
            "limit": mp.stop.limit,
            "classifier_ref": mp.stop.classifier_ref,
            "hold_steps": mp.stop.hold_steps,
        }
        nodes.append(
            {"id": mp.id, "axes": axes, "stop": stop, "tool": mp.tool,
             "timeout": mp.timeout}
        )
    return {
        "version": NET_FORMAT_VERSION,
        "name": net.name,
        "initial": net.initial,
        "terminals": sorted(net.terminals),
        "training_skip": sorted(net.training_skip),
        "scored": net.scored,
        "nodes": nodes,
        "edges": [
            {"from": src, "event": ev, "to": dst}
            for (src, ev), dst in sorted(net.edges.items())
        ],
    }


def net_from_dict(d: dict) -> MPNet:
    version = d.get("version")
    if version != NET_FORMAT_VERSION:
        raise NetConfigError(f"unsupported net format version {version!r}")
    nodes: dict[str, ManipulationPrimitive] = {}
    for nd in d["nodes"]:
        axes = {}
        for a, ad in nd["axes"].items():
            if ad.get("adaptive"):
                axes[a] = AxisSpec(a, ad["mode"], adaptive=True, bound=ad["bound"])
            else:
                axes[a] = AxisSpec(a, ad["mode"], setpoint=ad.get("setpoint", 0.0))
        sd = nd["stop"]
        stop = StopCondition(
            kind=sd["kind"],
            axis=sd.get("axis", "z"),
            threshold=sd.get("threshold", 0.0),
            direction=sd.get("direction", "geq"),
            limit=sd.get("limit", 0),
            classifier_ref=sd.get("classifier_ref", ""),
            hold_steps=sd.get("hold_steps", 1),
        )
        nodes[nd["id"]] = ManipulationPrimitive(
            id=nd["id"], axes=axes, stop=stop, tool=nd.get("tool", "none"),
            timeout=nd.get("timeout", 150),
        )
    edges = {(e["from"], e["event"]): e["to"] for e in d["edges"]}
    return MPNet(
        nodes=nodes,
        edges=edges,
        initial=d["initial"],
        terminals=set(d["terminals"]),
        training_skip=set(d.get("training_skip", [])),
        scored=d.get("scored"),
        name=d.get("name", "net"),
    )


def save_net(net: MPNet, path: str | Path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(net_to_dict(net), f, sort_keys=False)


def load_net(path: str | Path) -> MPNet:
    with open(path) as f:
        return net_from_dict(yaml.safe_load(f))
