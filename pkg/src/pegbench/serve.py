"""Interactive session: runtime loop wired to the console bridge.

Runs episodes continuously (training or evaluation), streams one state
frame per control tick at roughly real time, accepts operator overrides
and stop labels from the connected console, and honors start / pause /
reset control messages.
"""

from __future__ import annotations

import threading
import time

import numpy as np

from .bridge import ConsoleBridge, ConsoleGate
from .config import RunConfig
from .hil import MetricsWindow, update_metrics
from .mpnet import TransitionEvent, traverse
from .rl import ReplayBuffers
from .runtime import (
    ActorPolicy,
    _build_learner,
    _event_to_transition,
    build_env,
    build_net,
    load_checkpoint,
    snapshot_message,
    train_classifiers,
)
from .sim import feature_dim


class _EpisodeAbort(Exception):
    pass


def serve_session(
    cfg: RunConfig,
    port: int = 8787,
    mode: str = "train",
    episodes: int = 1000,
    checkpoint: str | None = None,
    realtime: bool = True,
) -> int:
    bridge = ConsoleBridge(port=port)
    bridge.start()
    print(f"console bridge on ws://127.0.0.1:{bridge.port} (mode {mode})")

    paused = threading.Event()
    reset_requested = threading.Event()

    def on_control(command: str) -> None:
        if command == "pause":
            paused.set()
        elif command == "start":
            paused.clear()
        elif command == "reset":
            reset_requested.set()

    bridge.on_control = on_control

    obs_dim = feature_dim(cfg.vision)
    classifiers = None
    if mode == "train" and cfg.reward_kind == "sparse":
        classifiers = train_classifiers(cfg, seed=cfg.seed + 500)
    net = build_net(
        cfg,
        learned_stop=classifiers is not None and classifiers.stop is not None,
    )
    env = build_env(cfg, reset_seed=cfg.seed)
    act_dim = net.adaptive_node().action_dim
    learner = _build_learner(cfg, obs_dim, act_dim)
    if checkpoint:
        meta, arrays = load_checkpoint(checkpoint)
        learner.load_state_arrays(
            {k: v for k, v in arrays.items() if not k.startswith("clf_")}
        )
    buffers = ReplayBuffers(online_capacity=cfg.rl.online_capacity, seed=cfg.seed + 7)
    actor = ActorPolicy(obs_dim, act_dim, tuple(cfg.rl.hidden),
                        rng=np.random.default_rng(cfg.seed + 23))
    actor.apply(snapshot_message(0, learner.actor))
    actor.stochastic = mode == "train"
    gate = ConsoleGate(bridge, act_dim=act_dim)
    window = MetricsWindow()
    seq = 0
    episode = 0

    def sink(ev: TransitionEvent) -> None:
        if mode != "train":
            return
        buffers.add(_event_to_transition(ev))
        for _ in range(cfg.rl.utd_ratio):
            learner.update(buffers)

    try:
        while episode < episodes:
            env.reset(episode)
            tick_in_episode = 0

            def on_tick(tick, node, state, obs, action, intervened, reward):
                nonlocal seq, tick_in_episode
                tick_in_episode += 1
                while paused.is_set() and not reset_requested.is_set():
                    time.sleep(0.05)
                if reset_requested.is_set():
                    raise _EpisodeAbort
                if tick % cfg.sync_interval_ticks == 0:
                    seq += 1
                    actor.apply(snapshot_message(seq, learner.actor))
                bridge.publish_state(
                    tick=tick,
                    episode=episode,
                    primitive=node,
                    state=state,
                    image=obs.image,
                    intervened=intervened,
                    metrics={
                        "success_rate": window.success_rate,
                        "cycle_time": window.cycle_time,
                        "intervention_rate": window.intervention_rate,
                        "episodes": len(window.episodes),
                    },
                )
                if realtime:
                    time.sleep(0.1)

            try:
                rec = traverse(
                    net, env, policy=actor, gate=gate,
                    mode="train" if mode == "train" else "eval",
                    episode=episode,
                    reward_kind=cfg.reward_kind if classifiers else "dense",
                    reward_classifier=classifiers.reward if classifiers else None,
                    stop_classifiers=classifiers.stop_registry() if classifiers else None,
                    vision=cfg.vision,
                    transition_sink=sink,
                    on_tick=on_tick,
                )
            except _EpisodeAbort:
                reset_requested.clear()
                episode += 1
                continue
            window = update_metrics(window, rec)
            bridge.publish(
                {
                    "type": "episode_end",
                    "episode": episode,
                    "outcome": rec.outcome,
                    "cycle_steps": rec.cycle_steps(),
                    "intervention_ratio": rec.intervention_ratio(),
                    "success_rate": window.success_rate,
                    "cycle_time": window.cycle_time,
                    "intervention_rate": window.intervention_rate,
                }
            )
            episode += 1
    except KeyboardInterrupt:
        print("interrupted")
    finally:
        bridge.stop()
    return 0
