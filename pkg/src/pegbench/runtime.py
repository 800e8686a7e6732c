"""Actor-learner runtime, evaluation protocol, and analysis utilities.

Training runs one actor (net traversals in the simulator) against one
learner (gradient updates on the replay buffers).  Two execution styles
share the same message schema:

  * lockstep -- the default; the actor and learner interleave
    deterministically (updates fire inside the transition sink, weight
    snapshots apply on a fixed tick interval), so a (seed, config)
    pair reproduces bit-identical logs.
  * threaded -- two workers joined by bounded queues, used by the
    console bridge and the liveness tests; same messages, free running.

Weight snapshots carry monotone sequence numbers and the actor never
applies an older snapshot over a newer one.
"""

from __future__ import annotations

import json
import queue
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig, apply_variant, config_to_dict
from .hil import (
    MetricsWindow,
    OracleConfig,
    ScriptedOracle,
    collect_demos,
    update_metrics,
)
from .mpnet import (
    MPNet,
    StopCondition,
    TransitionEvent,
    default_insertion_net,
    freeform_net,
    load_net,
    traverse,
)
from .records import EpisodeRecord, append_episode, read_episodes
from .rl import (
    BinaryClassifier,
    DaggerLearner,
    ReplayBuffers,
    SacConfig,
    SacLearner,
    TanhGaussianPolicy,
    Transition,
    train_classifier,
)
from .sim import (
    GRID_SIDE,
    InsertionEnv,
    ResetConfig,
    TaskGeometry,
    default_limits,
    feature_dim,
)

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# weight streaming
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyncMessage:
    """Either a parameter snapshot (learner -> actor) or a transition batch
    (actor -> learner), stamped with a monotone sequence number."""

    seq: int
    kind: str                       # params | transitions
    payload: object = None


class ParameterBox:
    """Latest-wins snapshot slot; stale sequence numbers are ignored."""

    def __init__(self):
        self._lock = threading.Lock()
        self._msg: SyncMessage | None = None

    def publish(self, msg: SyncMessage) -> None:
        with self._lock:
            if self._msg is None or msg.seq > self._msg.seq:
                self._msg = msg

    def take_if_newer(self, have_seq: int) -> SyncMessage | None:
        with self._lock:
            if self._msg is not None and self._msg.seq > have_seq:
                return self._msg
        return None


class ActorPolicy:
    """Read-only policy snapshot the actor executes; refreshed via messages."""

    def __init__(self, obs_dim: int, act_dim: int, hidden, rng: np.random.Generator):
        self.net = TanhGaussianPolicy(obs_dim, act_dim, hidden,
                                      rng=np.random.default_rng(0))
        self.rng = rng
        self.version = -1
        self.stochastic = True

    def apply(self, msg: SyncMessage) -> bool:
        if msg.seq <= self.version:
            return False
        params = [np.array(p, copy=True) for p in msg.payload]
        self.net.trunk.set_params(params)
        self.version = msg.seq
        return True

    def __call__(self, features: np.ndarray) -> np.ndarray:
        a, _ = self.net.sample(
            features, rng=self.rng, deterministic=not self.stochastic
        )
        return a[0]


def snapshot_message(seq: int, policy: TanhGaussianPolicy) -> SyncMessage:
    return SyncMessage(
        seq=seq, kind="params",
        payload=[p.copy() for p in policy.trunk.params()],
    )


# ---------------------------------------------------------------------------
# environment / net assembly
# ---------------------------------------------------------------------------


def build_env(cfg: RunConfig, reset_seed: int) -> InsertionEnv:
    return InsertionEnv(
        geom=cfg.geometry,
        reset_cfg=ResetConfig(
            sigma_xy=cfg.reset.sigma_xy,
            sigma_c=cfg.reset.sigma_c,
            offset_x=cfg.reset.offset_x,
            seed=reset_seed,
        ),
        limits=default_limits(static=cfg.limits == "static"),
    )


def build_net(cfg: RunConfig, learned_stop: bool = False) -> MPNet:
    if cfg.net_path:
        return load_net(cfg.net_path)
    if not cfg.structure:
        return freeform_net(cfg.geometry, horizon=cfg.horizon)
    stop = None
    if learned_stop:
        stop = StopCondition(
            "learned-classifier", classifier_ref="stop", hold_steps=2
        )
    return default_insertion_net(cfg.geometry, horizon=cfg.horizon, insert_stop=stop)


# ---------------------------------------------------------------------------
# classifier corpus
# ---------------------------------------------------------------------------


@dataclass
class ClassifierBundle:
    reward: BinaryClassifier | None
    stop: BinaryClassifier | None
    reward_accuracy: float = 0.0
    stop_accuracy: float = 0.0

    def stop_registry(self) -> dict:
        return {"stop": self.stop} if self.stop is not None else {}


def build_classifier_corpus(
    cfg: RunConfig, seed: int, n_episodes: int | None = None
) -> dict[str, np.ndarray]:
    """Labeled observation features from oracle demos, deliberately induced
    failure cases, and random probes.

    Success labels come from the ground-truth oracle; stop labels from the
    operator's button presses during demonstrations.  The failure-injection
    episodes matter: they put wedged-deep states (which look inserted in
    the image but are tilted) into the negative set, which is what lets
    the classifiers separate "seated" from "jammed".
    """
    from .sim import success_oracle

    n_episodes = n_episodes or cfg.classifier_episodes
    env = build_env(cfg, reset_seed=seed)
    net = default_insertion_net(cfg.geometry, horizon=cfg.horizon) \
        if cfg.structure else freeform_net(cfg.geometry, horizon=cfg.horizon)
    oracle = ScriptedOracle(cfg.geometry, OracleConfig(seed=seed + 1), mode="demo")
    feats: list[np.ndarray] = []
    success_labels: list[bool] = []
    button_labels: list[bool] = []

    def on_tick(tick, node, state, obs, action, intervened, reward):
        feats.append(obs.features(vision=cfg.vision))
        success_labels.append(success_oracle(state, cfg.geometry))
        button_labels.append(False)

    n_demo = max(1, int(round(0.5 * n_episodes)))
    n_jam = int(round(0.3 * n_episodes))
    for ep in range(n_demo):
        env.reset(ep)
        oracle.begin_episode(ep)
        mark = len(feats)
        rec = traverse(
            net, env, gate=oracle, mode="demo", episode=ep, on_tick=on_tick,
        )
        for i, step in enumerate(rec.steps):
            button_labels[mark + i] = step.stop_button

    # operator-induced jams: drive toward the slot with a wedging tilt
    oracle.force_failure = True
    for ep in range(n_demo, n_demo + n_jam):
        env.reset(ep)
        oracle.begin_episode(ep)
        traverse(net, env, gate=oracle, mode="demo", episode=ep, on_tick=on_tick)
    oracle.force_failure = False

    rng = np.random.default_rng(seed + 2)
    for ep in range(n_demo + n_jam, n_episodes):
        env.reset(ep)
        traverse(
            net, env, policy=lambda f: rng.uniform(-1, 1, net.adaptive_node().action_dim),
            mode="train", episode=ep, on_tick=on_tick,
        )

    return {
        "features": np.stack(feats),
        "success": np.array(success_labels, dtype=bool),
        "button": np.array(button_labels, dtype=bool),
    }


def train_classifiers(cfg: RunConfig, seed: int) -> ClassifierBundle:
    corpus = build_classifier_corpus(cfg, seed)
    x = corpus["features"]
    pos = x[corpus["success"]]
    neg = x[~corpus["success"]]
    rng = np.random.default_rng(seed + 3)
    # rebalance: plenty of negatives exist, cap them at 4x the positives
    if len(neg) > 4 * len(pos):
        neg = neg[rng.choice(len(neg), size=4 * len(pos), replace=False)]
    reward_clf, reward_rep = train_classifier(pos, neg, seed=seed + 4)

    stop_pos = x[corpus["button"]]
    stop_neg = x[~corpus["button"]]
    if len(stop_neg) > 8 * len(stop_pos) and len(stop_pos) > 0:
        stop_neg = stop_neg[rng.choice(len(stop_neg), size=8 * len(stop_pos), replace=False)]
    if len(stop_pos) == 0:
        stop_clf, stop_acc = None, 0.0
    else:
        stop_clf, stop_rep = train_classifier(stop_pos, stop_neg, seed=seed + 5)
        stop_acc = stop_rep.holdout_accuracy
    return ClassifierBundle(
        reward=reward_clf,
        stop=stop_clf,
        reward_accuracy=reward_rep.holdout_accuracy,
        stop_accuracy=stop_acc,
    )


# ---------------------------------------------------------------------------
# checkpoints and logs
# ---------------------------------------------------------------------------


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    meta = dict(meta, version=CHECKPOINT_VERSION)
    np.savez_compressed(path, __meta__=np.frombuffer(
        json.dumps(meta).encode(), dtype=np.uint8
    ), **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    with np.load(path) as z:
        meta = json.loads(bytes(z["__meta__"]).decode())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
        arrays = {k: z[k] for k in z.files if k != "__meta__"}
    return meta, arrays


class JsonlWriter:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "w")

    def write(self, obj: dict) -> None:
        self._f.write(json.dumps(obj) + "\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    n: int
    success_rate: float
    cycle_time: float | None
    outcomes: list[bool]
    records: list[EpisodeRecord] = field(default_factory=list)


EVAL_SEED_OFFSET = 777_000


def evaluate_policy(
    policy,
    cfg: RunConfig,
    n: int | None = None,
    classifiers: ClassifierBundle | None = None,
    keep_records: bool = True,
) -> EvalReport:
    """n autonomous rollouts, deterministic policy, gate disabled."""
    n = n or cfg.eval_episodes
    env = build_env(cfg, reset_seed=cfg.seed + EVAL_SEED_OFFSET)
    learned_stop = (
        cfg.structure and cfg.reward_kind == "sparse"
        and classifiers is not None and classifiers.stop is not None
    )
    net = build_net(cfg, learned_stop=learned_stop)
    outcomes, cycles, records = [], [], []
    stop_reg = classifiers.stop_registry() if classifiers else None
    for ep in range(n):
        env.reset(ep)
        rec = traverse(
            net, env, policy=policy, mode="eval", episode=ep,
            reward_kind="dense",
            stop_classifiers=stop_reg,
            vision=cfg.vision,
        )
        outcomes.append(rec.outcome)
        if rec.outcome:
            cycles.append(rec.cycle_steps() / 10.0)
        if keep_records:
            records.append(rec)
    return EvalReport(
        n=n,
        success_rate=float(np.mean(outcomes)) if outcomes else 0.0,
        cycle_time=float(np.mean(cycles)) if cycles else None,
        outcomes=outcomes,
        records=records,
    )


def deterministic_policy(net: TanhGaussianPolicy):
    def act(features):
        a, _ = net.sample(features, deterministic=True)
        return a[0]
    return act


def random_policy(act_dim: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    return lambda features: rng.uniform(-1.0, 1.0, size=act_dim)


def evaluate_checkpoint(path: str | Path, n: int | None = None) -> EvalReport:
    from .config import config_from_dict

    meta, arrays = load_checkpoint(path)
    cfg = config_from_dict(meta["config"])
    classifiers = _classifiers_from_arrays(meta, arrays)
    if meta["algo"] == "dagger":
        pol = TanhGaussianPolicy(meta["obs_dim"], meta["act_dim"],
                                 tuple(cfg.rl.hidden))
        pol.trunk.set_params(
            [arrays[f"actor.{i}"] for i in range(2 * pol.trunk.n_layers)]
        )
        return evaluate_policy(deterministic_policy(pol), cfg, n, classifiers)
    learner = _build_learner(cfg, meta["obs_dim"], meta["act_dim"])
    learner.load_state_arrays(
        {k: v for k, v in arrays.items() if not k.startswith("clf_")}
    )
    return evaluate_policy(
        deterministic_policy(learner.actor), cfg, n, classifiers
    )


def _build_learner(cfg: RunConfig, obs_dim: int, act_dim: int) -> SacLearner:
    # returns are bounded by construction: sparse pays at most 1 once,
    # dense is nonpositive; clipping targets to the reachable range keeps
    # bootstrapped values from spiraling
    if cfg.reward_kind == "sparse":
        clip = (0.0, 1.0)
    else:
        horizon = max(cfg.horizon, 1)
        clip = (-30.0 * horizon, 0.0)
    return SacLearner(
        SacConfig(
            obs_dim=obs_dim,
            act_dim=act_dim,
            hidden=tuple(cfg.rl.hidden),
            lr=cfg.rl.lr,
            batch_size=cfg.rl.batch_size,
            discount=cfg.rl.discount,
            polyak=cfg.rl.polyak,
            utd_ratio=cfg.rl.utd_ratio,
            init_temperature=cfg.rl.init_temperature,
            target_clip=clip,
            augment_image_side=GRID_SIDE if (cfg.vision and cfg.rl.augment_shift) else 0,
            seed=cfg.seed,
        )
    )


def _classifier_arrays(bundle: ClassifierBundle) -> dict[str, np.ndarray]:
    out = {}
    for name, clf in (("reward", bundle.reward), ("stop", bundle.stop)):
        if clf is None:
            continue
        for i, p in enumerate(clf.net.params()):
            out[f"clf_{name}.{i}"] = p
        out[f"clf_{name}.widths"] = np.array(clf.net.widths)
    return out


def _classifiers_from_arrays(meta: dict, arrays: dict) -> ClassifierBundle | None:
    bundle = ClassifierBundle(reward=None, stop=None)
    found = False
    for name in ("reward", "stop"):
        key = f"clf_{name}.widths"
        if key not in arrays:
            continue
        widths = tuple(int(w) for w in arrays[key])
        clf = BinaryClassifier(widths[0], hidden=widths[1:-1])
        n_arr = 2 * clf.net.n_layers
        clf.net.set_params(
            [np.asarray(arrays[f"clf_{name}.{i}"], dtype=np.float64) for i in range(n_arr)]
        )
        setattr(bundle, name, clf)
        found = True
    return bundle if found else None


# ---------------------------------------------------------------------------
# the lockstep trainer
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    config: RunConfig
    checkpoint: Path
    metrics_path: Path
    curve_path: Path
    episodes_path: Path
    eval: EvalReport
    final_window: MetricsWindow
    updates: int
    train_episodes: int
    wallclock_s: float
    intervened_ticks: int
    classifier_accuracy: float = 0.0


def train(cfg: RunConfig, out_dir: str | Path, quiet: bool = False) -> TrainResult:
    """Full pipeline for one variant: demos, classifiers, training, eval."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.monotonic()
    obs_dim = feature_dim(cfg.vision)

    # classifier plumbing (sparse-reward variants and learned stops)
    classifiers = None
    if cfg.reward_kind == "sparse":
        classifiers = train_classifiers(cfg, seed=cfg.seed + 500)
        if not quiet:
            print(
                f"[{cfg.name}] classifiers: reward acc "
                f"{classifiers.reward_accuracy:.3f}, stop acc "
                f"{classifiers.stop_accuracy:.3f}"
            )

    learned_stop = (
        cfg.structure and classifiers is not None and classifiers.stop is not None
    )
    net = build_net(cfg, learned_stop=learned_stop)
    env = build_env(cfg, reset_seed=cfg.seed)
    act_dim = net.adaptive_node().action_dim

    buffers = ReplayBuffers(online_capacity=cfg.rl.online_capacity, seed=cfg.seed + 7)
    learner: SacLearner | None = None
    dagger: DaggerLearner | None = None
    if cfg.algo == "rlpd":
        learner = _build_learner(cfg, obs_dim, act_dim)
    elif cfg.algo == "dagger":
        dagger = DaggerLearner(
            obs_dim, act_dim, hidden=tuple(cfg.rl.hidden), lr=cfg.rl.lr,
            batch_size=cfg.rl.batch_size, seed=cfg.seed,
        )

    # seed demonstrations
    demo_oracle = ScriptedOracle(
        cfg.geometry, OracleConfig(seed=cfg.seed + 11), mode="demo"
    )
    n_demo_records = 0
    if cfg.demos > 0 and cfg.structure:
        def demo_sink(ev: TransitionEvent):
            buffers.add_demo(_event_to_transition(ev))
            if dagger is not None:
                dagger.aggregate(ev.obs_features, ev.action)

        demo_env = build_env(cfg, reset_seed=cfg.seed + 13)
        demo_records, _ = collect_demos(
            cfg.demos, net, demo_env, demo_oracle,
            transition_sink=demo_sink,
            reward_kind=cfg.reward_kind,
            reward_classifier=classifiers.reward if classifiers else None,
            stop_classifiers=classifiers.stop_registry() if classifiers else None,
            vision=cfg.vision,
        )
        n_demo_records = len(demo_records)

    gate = (
        ScriptedOracle(cfg.geometry, OracleConfig(seed=cfg.seed + 17), mode="intervene")
        if cfg.interventions
        else None
    )

    actor = ActorPolicy(
        obs_dim, act_dim, tuple(cfg.rl.hidden),
        rng=np.random.default_rng(cfg.seed + 23),
    )
    seq = 0
    if learner is not None:
        actor.apply(snapshot_message(seq, learner.actor))
    elif dagger is not None:
        actor.apply(snapshot_message(seq, dagger.policy))

    metrics_w = JsonlWriter(out / "metrics.jsonl")
    curve_w = JsonlWriter(out / "curve.jsonl")
    episodes_path = out / "episodes.jsonl"
    episodes_path.write_text("")
    window = MetricsWindow()
    updates = 0
    last_curve_log = 0
    intervened_ticks = 0
    tick_counter = 0
    stats_accum: list = []

    def maybe_sync():
        nonlocal seq
        if tick_counter % cfg.sync_interval_ticks == 0:
            seq += 1
            src = learner.actor if learner is not None else dagger.policy
            actor.apply(snapshot_message(seq, src))

    def on_tick(**kw):
        nonlocal tick_counter, intervened_ticks
        tick_counter += 1
        if kw.get("intervened"):
            intervened_ticks += 1
        maybe_sync()

    def sink(ev: TransitionEvent):
        nonlocal updates, last_curve_log
        t = _event_to_transition(ev)
        if dagger is not None:
            if ev.intervened:
                dagger.aggregate(ev.obs_features, ev.action)
            for _ in range(cfg.rl.utd_ratio):
                loss = dagger.update()
                if loss is not None:
                    updates += 1
                    stats_accum.append({"bc_loss": loss})
        elif learner is not None:
            buffers.add(t)
            for _ in range(cfg.rl.utd_ratio):
                st = learner.update(buffers)
                if st is not None:
                    updates += 1
                    stats_accum.append(
                        {
                            "critic_loss": st.critic_loss,
                            "actor_loss": st.actor_loss,
                            "alpha": st.alpha,
                            "entropy": st.entropy_est,
                            "q_mean": st.q_mean,
                        }
                    )
        if stats_accum and updates - last_curve_log >= 200:
            last_curve_log = updates
            mean = {
                k: float(np.mean([s[k] for s in stats_accum]))
                for k in stats_accum[0]
            }
            curve_w.write(
                {
                    "step": updates,
                    **mean,
                    "demo_size": len(buffers.demo),
                    "online_size": len(buffers.online),
                }
            )
            stats_accum.clear()

    ep = 0
    while ep < cfg.train_episodes and cfg.algo != "random":
        if cfg.max_wallclock_s and time.monotonic() - t_start > cfg.max_wallclock_s:
            break
        env.reset(ep)
        if gate is not None:
            gate.begin_episode(ep)
            gate.performance_hint(window.success_rate)
        actor.stochastic = True
        rec = traverse(
            net, env, policy=actor, gate=gate, mode="train", episode=ep,
            reward_kind=cfg.reward_kind,
            reward_classifier=classifiers.reward if classifiers else None,
            stop_classifiers=classifiers.stop_registry() if classifiers else None,
            vision=cfg.vision,
            transition_sink=sink,
            on_tick=on_tick,
        )
        window = update_metrics(window, rec)
        append_episode(episodes_path, rec)
        metrics_w.write(
            {
                "episode": ep,
                "success": rec.outcome,
                "cycle_steps": rec.cycle_steps(),
                "intervention_ratio": rec.intervention_ratio(),
                "success_rate": window.success_rate,
                "cycle_time": window.cycle_time,
                "intervention_rate": window.intervention_rate,
                "updates": updates,
                "actor_version": actor.version,
            }
        )
        if not quiet and (ep + 1) % 20 == 0:
            print(
                f"[{cfg.name}] ep {ep + 1}/{cfg.train_episodes} "
                f"success_rate {window.success_rate:.2f} "
                f"interv {window.intervention_rate:.3f} updates {updates}"
            )
        ep += 1
        if cfg.checkpoint_every_episodes and ep % cfg.checkpoint_every_episodes == 0:
            _write_checkpoint(out / "checkpoint.npz", cfg, learner, dagger,
                              classifiers, obs_dim, act_dim, updates)

    ckpt = out / "checkpoint.npz"
    _write_checkpoint(ckpt, cfg, learner, dagger, classifiers, obs_dim, act_dim,
                      updates)

    # final evaluation: deterministic policy, no gate
    if cfg.algo == "random":
        policy = random_policy(act_dim, seed=cfg.seed + 31)
    elif cfg.algo == "dagger":
        policy = deterministic_policy(dagger.policy)
    else:
        policy = deterministic_policy(learner.actor)
    report = evaluate_policy(policy, cfg, cfg.eval_episodes, classifiers,
                             keep_records=True)
    eval_path = out / "eval_episodes.jsonl"
    eval_path.write_text("")
    for r in report.records:
        append_episode(eval_path, r)
    metrics_w.close()
    curve_w.close()

    result = TrainResult(
        config=cfg,
        checkpoint=ckpt,
        metrics_path=out / "metrics.jsonl",
        curve_path=out / "curve.jsonl",
        episodes_path=episodes_path,
        eval=report,
        final_window=window,
        updates=updates,
        train_episodes=ep,
        wallclock_s=time.monotonic() - t_start,
        intervened_ticks=intervened_ticks,
        classifier_accuracy=classifiers.reward_accuracy if classifiers else 0.0,
    )
    with open(out / "report.json", "w") as f:
        json.dump(
            {
                "config": config_to_dict(cfg),
                "eval_success": report.success_rate,
                "eval_cycle_time": report.cycle_time,
                "final_intervention_rate": window.intervention_rate,
                "updates": updates,
                "train_episodes": ep,
                "wallclock_s": result.wallclock_s,
                # reported, not enforced: how fast the environment actually
                # stepped once learner time is charged against it
                "effective_env_steps_per_s": (
                    tick_counter / result.wallclock_s if result.wallclock_s else None
                ),
                "intervened_ticks": intervened_ticks,
                "demo_records": n_demo_records,
            },
            f,
            indent=2,
        )
    return result


def _event_to_transition(ev: TransitionEvent) -> Transition:
    return Transition(
        obs=ev.obs_features,
        action=ev.action,
        reward=ev.reward,
        next_obs=ev.next_obs_features,
        done=ev.done,
        intervened=ev.intervened,
        primitive=ev.primitive_index,
    )


def _write_checkpoint(path, cfg, learner, dagger, classifiers, obs_dim, act_dim,
                      updates) -> None:
    meta = {
        "algo": cfg.algo,
        "config": config_to_dict(cfg),
        "obs_dim": obs_dim,
        "act_dim": act_dim,
        "updates": updates,
    }
    if learner is not None:
        arrays = learner.state_arrays()
    elif dagger is not None:
        arrays = {
            f"actor.{i}": p for i, p in enumerate(dagger.policy.trunk.params())
        }
        arrays["updates"] = np.array([dagger.updates])
    else:
        arrays = {"updates": np.array([0])}
    if classifiers is not None:
        arrays.update(_classifier_arrays(classifiers))
    save_checkpoint(path, arrays, meta)


# ---------------------------------------------------------------------------
# threaded actor/learner (liveness + console serving)
# ---------------------------------------------------------------------------


class AsyncRunner:
    """Actor and learner as two free-running workers joined by bounded
    queues; the actor blocks when the transition queue is full."""

    def __init__(self, cfg: RunConfig, buffers: ReplayBuffers,
                 learner: SacLearner, net: MPNet, env: InsertionEnv,
                 classifiers: ClassifierBundle | None = None,
                 queue_size: int = 1024):
        self.cfg = cfg
        self.buffers = buffers
        self.learner = learner
        self.net = net
        self.env = env
        self.classifiers = classifiers
        self.transitions: queue.Queue = queue.Queue(maxsize=queue_size)
        self.box = ParameterBox()
        self.stop_event = threading.Event()
        self.actor = ActorPolicy(
            feature_dim(cfg.vision), net.adaptive_node().action_dim,
            tuple(cfg.rl.hidden), rng=np.random.default_rng(cfg.seed + 23),
        )
        self.actor.apply(snapshot_message(0, learner.actor))
        self.episodes_done = 0
        self.updates_done = 0
        self._seq = 0
        self._threads: list[threading.Thread] = []

    def actor_loop(self, max_episodes: int | None = None) -> None:
        ep = 0
        while not self.stop_event.is_set():
            if max_episodes is not None and ep >= max_episodes:
                break
            self.env.reset(ep)

            def sink(ev: TransitionEvent):
                msg = SyncMessage(seq=ep, kind="transitions", payload=ev)
                while not self.stop_event.is_set():
                    try:
                        self.transitions.put(msg, timeout=0.1)
                        return
                    except queue.Full:
                        continue

            def on_tick(**kw):
                msg = self.box.take_if_newer(self.actor.version)
                if msg is not None:
                    self.actor.apply(msg)

            traverse(
                self.net, self.env, policy=self.actor, mode="train", episode=ep,
                reward_kind="dense",
                vision=self.cfg.vision,
                transition_sink=sink, on_tick=on_tick,
            )
            ep += 1
            self.episodes_done = ep

    def learner_loop(self, max_updates: int | None = None,
                     publish_every: int = 50) -> None:
        while not self.stop_event.is_set():
            if max_updates is not None and self.updates_done >= max_updates:
                break
            try:
                msg = self.transitions.get(timeout=0.1)
                self.buffers.add(_event_to_transition(msg.payload))
            except queue.Empty:
                pass
            st = self.learner.update(self.buffers)
            if st is not None:
                self.updates_done += 1
                if self.updates_done % publish_every == 0:
                    self._seq += 1
                    self.box.publish(snapshot_message(self._seq, self.learner.actor))

    def start(self, actor: bool = True, learner: bool = True,
              max_episodes: int | None = None, max_updates: int | None = None):
        if actor:
            t = threading.Thread(
                target=self.actor_loop, args=(max_episodes,), daemon=True
            )
            t.start()
            self._threads.append(t)
        if learner:
            t = threading.Thread(
                target=self.learner_loop, args=(max_updates,), daemon=True
            )
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self.stop_event.set()
        for t in self._threads:
            t.join(timeout=5.0)


# ---------------------------------------------------------------------------
# ablations and analysis
# ---------------------------------------------------------------------------


@dataclass
class AblationRow:
    variant: str
    success: float | None
    cycle_time: float | None
    oracle_effort_s: float | None   # intervened ticks at 10 Hz
    updates: int | None
    error: str | None = None


def run_ablation_suite(
    base: RunConfig, variants: list[str], out_dir: str | Path,
    quiet: bool = False,
) -> list[AblationRow]:
    """Each variant trains with matched seed and budget; one failing
    variant does not sink the table."""
    rows: list[AblationRow] = []
    out = Path(out_dir)
    for v in variants:
        cfg = apply_variant(base, v)
        try:
            res = train(cfg, out / v, quiet=quiet)
            rows.append(
                AblationRow(
                    variant=v,
                    success=res.eval.success_rate,
                    cycle_time=res.eval.cycle_time,
                    oracle_effort_s=res.intervened_ticks / 10.0,
                    updates=res.updates,
                )
            )
        except Exception as exc:  # isolate the failing row
            rows.append(
                AblationRow(
                    variant=v, success=None, cycle_time=None,
                    oracle_effort_s=None, updates=None, error=str(exc),
                )
            )
    return rows


def format_ablation_table(rows: list[AblationRow]) -> str:
    head = f"{'variant':<18}{'success':>9}{'cycle[s]':>10}{'effort[s]':>11}{'updates':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        if r.error:
            lines.append(f"{r.variant:<18}  error: {r.error}")
            continue
        cyc = f"{r.cycle_time:.2f}" if r.cycle_time is not None else "-"
        lines.append(
            f"{r.variant:<18}{r.success:>9.2f}{cyc:>10}"
            f"{r.oracle_effort_s:>11.1f}{r.updates:>9}"
        )
    return "\n".join(lines)


class EmptyAnalysisError(ValueError):
    pass


def occupancy_analysis(
    records: list[EpisodeRecord],
    bins: int = 40,
    bounds: tuple[tuple[float, float], tuple[float, float]] = ((-40.0, 60.0), (-15.0, 15.0)),
    autonomous_only: bool = True,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Normalized 2-D histogram of visited (x, z) tool positions.

    Intervened steps are excluded by default so the picture shows where
    the policy itself spends time.
    """
    if not records:
        raise EmptyAnalysisError("no episode records supplied")
    xs, zs = [], []
    for rec in records:
        for s in rec.steps:
            if autonomous_only and s.intervened:
                continue
            xs.append(s.pose[0])
            zs.append(s.pose[1])
    if not xs:
        raise EmptyAnalysisError("no steps left after the autonomous-only filter")
    hist, xe, ze = np.histogram2d(xs, zs, bins=bins, range=bounds)
    total = hist.sum()
    return hist / total, xe, ze


def occupancy_to_csv(path: str | Path, hist: np.ndarray, xe: np.ndarray,
                     ze: np.ndarray) -> None:
    with open(path, "w") as f:
        f.write("x_center,z_center,weight\n")
        for i in range(hist.shape[0]):
            for j in range(hist.shape[1]):
                if hist[i, j] == 0:
                    continue
                xc = 0.5 * (xe[i] + xe[i + 1])
                zc = 0.5 * (ze[j] + ze[j + 1])
                f.write(f"{xc:.3f},{zc:.3f},{hist[i, j]:.8f}\n")
