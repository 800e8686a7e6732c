"""Off-policy learning core.

A tanh-squashed Gaussian actor, twin critics with entropy temperature,
and symmetric demonstration/online minibatch sampling: each update draws
half its batch from operator-provided (demonstration or intervention)
transitions and half from autonomous experience, which keeps the human
data influential throughout training without offline pretraining.

Also here: the binary success/stop classifiers trained from labeled
observations, and a behavior-cloning learner with dataset aggregation
used as the interactive imitation baseline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nets import Adam, DenseNet, polyak_update

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0
_SQUASH_EPS = 1e-6
_LOG_2PI = math.log(2.0 * math.pi)
# tanh saturates to exactly 1.0 in float64 beyond |u| ~ 19; emitted actions
# are nudged to the nearest representable interior value instead
_INTERIOR = 1.0 - 1e-12


def _squash(u: np.ndarray) -> np.ndarray:
    return np.clip(np.tanh(u), -_INTERIOR, _INTERIOR)


# ---------------------------------------------------------------------------
# tanh-Gaussian policy
# ---------------------------------------------------------------------------


class TanhGaussianPolicy:
    """Actor emitting (mean, log-std) per action dim, squashed with tanh."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(256, 256), rng=None):
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.trunk = DenseNet((obs_dim, *hidden, 2 * act_dim), rng=rng)

    def _heads(self, out: np.ndarray):
        mean = out[:, : self.act_dim]
        log_std_raw = out[:, self.act_dim :]
        log_std = np.clip(log_std_raw, LOG_STD_MIN, LOG_STD_MAX)
        return mean, log_std, log_std_raw

    def sample(self, obs: np.ndarray, rng: np.random.Generator | None = None,
               deterministic: bool = False):
        """Draw actions in (-1, 1)^n with their squash-corrected log-probs."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        out = self.trunk.forward(obs)
        mean, log_std, _ = self._heads(out)
        if deterministic:
            a = _squash(mean)
            lp = self.log_prob(obs, a)
            return a, lp
        if rng is None:
            raise ValueError("stochastic sampling needs an rng")
        std = np.exp(log_std)
        eps = rng.standard_normal(mean.shape)
        u = mean + std * eps
        a = _squash(u)
        lp = self._log_prob_from(u, mean, log_std)
        return a, lp

    @staticmethod
    def _log_prob_from(u, mean, log_std):
        std = np.exp(log_std)
        z = (u - mean) / std
        gauss = -0.5 * (z * z + _LOG_2PI) - log_std
        a = np.tanh(u)
        corr = np.log(1.0 - a * a + _SQUASH_EPS)
        return (gauss - corr).sum(axis=1)

    def log_prob(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """Change-of-variables log-density of given squashed actions."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        out = self.trunk.forward(obs)
        mean, log_std, _ = self._heads(out)
        a = np.clip(actions, -1.0 + 1e-9, 1.0 - 1e-9)
        u = np.arctanh(a)
        return self._log_prob_from(u, mean, log_std)


# ---------------------------------------------------------------------------
# replay buffers
# ---------------------------------------------------------------------------


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    intervened: bool
    primitive: int = 0


class _Store:
    """Flat-array transition store; ring-buffer when capacity is finite.

    Arrays start small and double until they hit capacity, after which
    the write head wraps.  Observations are kept in float32; the nets
    promote to float64 at batch time.
    """

    def __init__(self, capacity: int | None = None):
        self.capacity = capacity
        self._n = 0
        self._head = 0
        self._arrays: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return self._n

    def _alloc(self, t: Transition) -> None:
        cap = 1024 if self.capacity is None else min(self.capacity, 4096)
        self._arrays = {
            "obs": np.zeros((cap, t.obs.size), dtype=np.float32),
            "action": np.zeros((cap, t.action.size)),
            "reward": np.zeros(cap),
            "next_obs": np.zeros((cap, t.next_obs.size), dtype=np.float32),
            "done": np.zeros(cap),
            "intervened": np.zeros(cap, dtype=bool),
            "primitive": np.zeros(cap, dtype=np.int64),
        }

    def _grow(self) -> None:
        assert self._arrays is not None
        old = self._arrays["reward"].shape[0]
        new = 2 * old if self.capacity is None else min(2 * old, self.capacity)
        for k, a in self._arrays.items():
            bigger = np.zeros((new, *a.shape[1:]), dtype=a.dtype)
            bigger[:old] = a
            self._arrays[k] = bigger

    def add(self, t: Transition) -> None:
        if self._arrays is None:
            self._alloc(t)
        assert self._arrays is not None
        size = self._arrays["reward"].shape[0]
        if self._n == size and (self.capacity is None or size < self.capacity):
            self._grow()
        idx = self._head
        self._arrays["obs"][idx] = t.obs
        self._arrays["action"][idx] = t.action
        self._arrays["reward"][idx] = t.reward
        self._arrays["next_obs"][idx] = t.next_obs
        self._arrays["done"][idx] = float(t.done)
        self._arrays["intervened"][idx] = t.intervened
        self._arrays["primitive"][idx] = t.primitive
        self._head = idx + 1
        if self.capacity is not None and self._head == self.capacity:
            self._head = 0
        self._n = self._n + 1 if self.capacity is None else min(self._n + 1, self.capacity)

    def gather(self, idx: np.ndarray) -> dict[str, np.ndarray]:
        assert self._arrays is not None
        return {k: a[idx] for k, a in self._arrays.items()}


class ReplayBuffers:
    """Demonstration-grade store plus an autonomous ring buffer.

    Operator-intervened transitions land in the demo store; everything
    the policy did on its own lands in the online ring.
    """

    def __init__(self, online_capacity: int = 100_000, seed: int = 0):
        self.demo = _Store(capacity=None)
        self.online = _Store(capacity=online_capacity)
        self._rng = np.random.default_rng(seed)

    def add(self, t: Transition) -> None:
        (self.demo if t.intervened else self.online).add(t)

    def add_demo(self, t: Transition) -> None:
        self.demo.add(t)

    def ready(self, batch_size: int) -> bool:
        need_demo = -(-batch_size // 2)  # ceil
        need_online = batch_size // 2
        if len(self.demo) == 0:
            return len(self.online) >= batch_size
        return len(self.demo) >= need_demo and len(self.online) >= need_online

    def sample_symmetric(self, batch_size: int) -> dict[str, np.ndarray]:
        """50/50 demo/online batch; falls back to online-only when the demo
        store is empty (the no-demonstrations ablation)."""
        if not self.ready(batch_size):
            raise ValueError("buffers not ready for the requested batch size")
        n_demo = -(-batch_size // 2)
        if len(self.demo) == 0:
            n_demo = 0
        n_online = batch_size - n_demo
        parts = []
        if n_demo:
            idx = self._rng.integers(0, len(self.demo), size=n_demo)
            parts.append(self.demo.gather(idx))
        if n_online:
            idx = self._rng.integers(0, len(self.online), size=n_online)
            parts.append(self.online.gather(idx))
        return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def shift_image_block(obs: np.ndarray, side: int, rng: np.random.Generator,
                      max_shift: int = 1) -> np.ndarray:
    """Random +/-1-cell translation of the leading image block (train-time
    augmentation standing in for the usual random-shift trick on pixels).

    Images sharing a shift are rolled together; rolled-in edges are
    cleared rather than wrapped.
    """
    out = np.array(obs, copy=True)
    n_img = side * side
    imgs = out[:, :n_img].reshape(-1, side, side)
    shifts = rng.integers(-max_shift, max_shift + 1, size=(imgs.shape[0], 2))
    for dy in range(-max_shift, max_shift + 1):
        for dx in range(-max_shift, max_shift + 1):
            if dy == 0 and dx == 0:
                continue
            mask = (shifts[:, 0] == dy) & (shifts[:, 1] == dx)
            if not mask.any():
                continue
            block = np.roll(np.roll(imgs[mask], dy, axis=1), dx, axis=2)
            if dy > 0:
                block[:, :dy, :] = 0
            elif dy < 0:
                block[:, dy:, :] = 0
            if dx > 0:
                block[:, :, :dx] = 0
            elif dx < 0:
                block[:, :, dx:] = 0
            imgs[mask] = block
    out[:, :n_img] = imgs.reshape(-1, n_img)
    return out


# ---------------------------------------------------------------------------
# SAC-style learner with symmetric prior-data sampling
# ---------------------------------------------------------------------------


@dataclass
class SacConfig:
    obs_dim: int
    act_dim: int
    hidden: tuple[int, ...] = (256, 256)
    lr: float = 3e-4
    actor_lr: float | None = None        # defaults to lr
    batch_size: int = 256
    discount: float = 0.99
    polyak: float = 5e-3
    utd_ratio: int = 4
    init_temperature: float = 0.1
    target_entropy: float | None = None  # default: -act_dim
    learn_temperature: bool = True
    min_temperature: float = 1e-3        # keeps exploration from cliff-diving
    # known return bounds of the task; clipping critic targets to them stops
    # bootstrapped extrapolation spirals (values outside are unreachable)
    target_clip: tuple[float, float] | None = None
    augment_image_side: int = 0  # 0 disables image-shift augmentation
    seed: int = 0


@dataclass
class UpdateStats:
    critic_loss: float
    actor_loss: float
    alpha: float
    entropy_est: float
    q_mean: float
    n_demo: int
    n_online: int


class SacLearner:
    """Twin-critic soft actor-critic over the flat-array nets."""

    def __init__(self, cfg: SacConfig):
        self.cfg = cfg
        root = np.random.default_rng(cfg.seed)
        seeds = root.integers(0, 2**31 - 1, size=8)
        self.rng = np.random.default_rng(int(seeds[0]))
        self.actor = TanhGaussianPolicy(
            cfg.obs_dim, cfg.act_dim, cfg.hidden,
            rng=np.random.default_rng(int(seeds[1])),
        )
        qin = cfg.obs_dim + cfg.act_dim
        self.q1 = DenseNet((qin, *cfg.hidden, 1), rng=np.random.default_rng(int(seeds[2])))
        self.q2 = DenseNet((qin, *cfg.hidden, 1), rng=np.random.default_rng(int(seeds[3])))
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = math.log(cfg.init_temperature)
        self.target_entropy = (
            cfg.target_entropy if cfg.target_entropy is not None else -float(cfg.act_dim)
        )
        self.actor_opt = Adam(self.actor.trunk.params(),
                              lr=cfg.actor_lr if cfg.actor_lr is not None else cfg.lr)
        self.q1_opt = Adam(self.q1.params(), lr=cfg.lr)
        self.q2_opt = Adam(self.q2.params(), lr=cfg.lr)
        self.alpha_opt = Adam([np.zeros(1)], lr=cfg.lr)
        self._log_alpha_arr = [np.array([self.log_alpha])]
        self.updates = 0

    @property
    def alpha(self) -> float:
        return float(np.exp(self._log_alpha_arr[0][0]))

    def act(self, obs: np.ndarray, deterministic: bool = False,
            rng: np.random.Generator | None = None) -> np.ndarray:
        a, _ = self.actor.sample(
            obs, rng=rng if rng is not None else self.rng, deterministic=deterministic
        )
        return a[0]

    # -- update ------------------------------------------------------------

    def update(self, buffers: ReplayBuffers) -> UpdateStats | None:
        """One gradient step on a symmetric batch; None when not ready."""
        cfg = self.cfg
        if not buffers.ready(cfg.batch_size):
            return None
        batch = buffers.sample_symmetric(cfg.batch_size)
        n_demo = -(-cfg.batch_size // 2) if len(buffers.demo) else 0
        obs = batch["obs"]
        next_obs = batch["next_obs"]
        if cfg.augment_image_side:
            obs = shift_image_block(obs, cfg.augment_image_side, self.rng)
            next_obs = shift_image_block(next_obs, cfg.augment_image_side, self.rng)
        act = batch["action"]
        rew = batch["reward"]
        done = batch["done"]
        alpha = self.alpha

        # critic targets from the frozen twins and a fresh next action
        a_next, lp_next = self.actor.sample(next_obs, rng=self.rng)
        qin_next = np.concatenate([next_obs, a_next], axis=1)
        q_next = np.minimum(
            self.q1_target.forward(qin_next)[:, 0],
            self.q2_target.forward(qin_next)[:, 0],
        )
        y = rew + cfg.discount * (1.0 - done) * (q_next - alpha * lp_next)
        if cfg.target_clip is not None:
            y = np.clip(y, cfg.target_clip[0], cfg.target_clip[1])

        qin = np.concatenate([obs, act], axis=1)
        b = qin.shape[0]
        critic_loss = 0.0
        for q, opt in ((self.q1, self.q1_opt), (self.q2, self.q2_opt)):
            cache: list = []
            qv = q.forward(qin, cache)[:, 0]
            err = qv - y
            critic_loss += float(np.mean(err * err))
            grads, _ = q.backward(cache, (2.0 / b) * err[:, None])
            opt.step(q.params(), grads)

        # actor: maximize E[minQ(s, a) - alpha * log pi]
        trunk_cache: list = []
        out = self.actor.trunk.forward(obs, trunk_cache)
        mean, log_std, log_std_raw = self.actor._heads(out)
        std = np.exp(log_std)
        eps = self.rng.standard_normal(mean.shape)
        u = mean + std * eps
        a_pi = np.tanh(u)
        one_m_a2 = 1.0 - a_pi * a_pi
        lp = self.actor._log_prob_from(u, mean, log_std)

        qin_pi = np.concatenate([obs, a_pi], axis=1)
        c1: list = []
        c2: list = []
        q1v = self.q1.forward(qin_pi, c1)[:, 0]
        q2v = self.q2.forward(qin_pi, c2)[:, 0]
        use1 = q1v <= q2v
        q_pi = np.where(use1, q1v, q2v)
        actor_loss = float(np.mean(alpha * lp - q_pi))

        # dQ/da through whichever twin realized the min
        gq = np.zeros((b, 1))
        gq[use1, 0] = -1.0 / b
        _, gin1 = self.q1.backward(c1, gq)
        gq = np.zeros((b, 1))
        gq[~use1, 0] = -1.0 / b
        _, gin2 = self.q2.backward(c2, gq)
        dL_da = (gin1 + gin2)[:, cfg.obs_dim :]

        # d(log pi)/du with eps held fixed (reparameterization)
        dlp_du = 2.0 * a_pi * one_m_a2 / (one_m_a2 + _SQUASH_EPS)
        dL_du = (alpha / b) * dlp_du + dL_da * one_m_a2
        dL_dmean = dL_du
        dL_dlogstd = dL_du * (std * eps) + (alpha / b) * (-1.0)
        clamp_mask = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
        grad_out = np.concatenate([dL_dmean, dL_dlogstd * clamp_mask], axis=1)
        a_grads, _ = self.actor.trunk.backward(trunk_cache, grad_out)
        self.actor_opt.step(self.actor.trunk.params(), a_grads)

        # temperature toward the entropy target: descending this gradient
        # raises alpha while entropy sits below target and vice versa
        if cfg.learn_temperature:
            grad_la = -float(np.mean(lp + self.target_entropy))
            self.alpha_opt.step(self._log_alpha_arr, [np.array([grad_la])])
            floor = math.log(cfg.min_temperature)
            if self._log_alpha_arr[0][0] < floor:
                self._log_alpha_arr[0][0] = floor

        polyak_update(self.q1_target, self.q1, cfg.polyak)
        polyak_update(self.q2_target, self.q2, cfg.polyak)
        self.updates += 1

        return UpdateStats(
            critic_loss=critic_loss,
            actor_loss=actor_loss,
            alpha=self.alpha,
            entropy_est=float(-np.mean(lp)),
            q_mean=float(np.mean(q_pi)),
            n_demo=n_demo,
            n_online=cfg.batch_size - n_demo,
        )

    # -- checkpointing -------------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every tensor needed to resume: nets, targets, optimizers, step."""
        out: dict[str, np.ndarray] = {}

        def put(prefix: str, arrs: list[np.ndarray]) -> None:
            for i, a in enumerate(arrs):
                out[f"{prefix}.{i}"] = a

        put("actor", self.actor.trunk.params())
        put("q1", self.q1.params())
        put("q2", self.q2.params())
        put("q1t", self.q1_target.params())
        put("q2t", self.q2_target.params())
        for name, opt in (
            ("actor_opt", self.actor_opt),
            ("q1_opt", self.q1_opt),
            ("q2_opt", self.q2_opt),
            ("alpha_opt", self.alpha_opt),
        ):
            put(f"{name}.m", opt.m)
            put(f"{name}.v", opt.v)
            out[f"{name}.t"] = np.array([opt.t])
        out["log_alpha"] = self._log_alpha_arr[0].copy()
        out["updates"] = np.array([self.updates])
        return out

    def load_state_arrays(self, arrs: dict[str, np.ndarray]) -> None:
        def take(prefix: str, n: int) -> list[np.ndarray]:
            return [np.asarray(arrs[f"{prefix}.{i}"], dtype=np.float64) for i in range(n)]

        self.actor.trunk.set_params(take("actor", 2 * self.actor.trunk.n_layers))
        self.q1.set_params(take("q1", 2 * self.q1.n_layers))
        self.q2.set_params(take("q2", 2 * self.q2.n_layers))
        self.q1_target.set_params(take("q1t", 2 * self.q1_target.n_layers))
        self.q2_target.set_params(take("q2t", 2 * self.q2_target.n_layers))
        for name, opt, params in (
            ("actor_opt", self.actor_opt, self.actor.trunk.params()),
            ("q1_opt", self.q1_opt, self.q1.params()),
            ("q2_opt", self.q2_opt, self.q2.params()),
            ("alpha_opt", self.alpha_opt, self._log_alpha_arr),
        ):
            opt.m = take(f"{name}.m", len(params))
            opt.v = take(f"{name}.v", len(params))
            opt.t = int(arrs[f"{name}.t"][0])
        self._log_alpha_arr[0][:] = np.asarray(arrs["log_alpha"], dtype=np.float64)
        self.updates = int(arrs["updates"][0])


# ---------------------------------------------------------------------------
# binary classifiers (sparse reward, learned stop conditions)
# ---------------------------------------------------------------------------


@dataclass
class ClassifierReport:
    holdout_accuracy: float
    n_pos: int
    n_neg: int


class BinaryClassifier:
    """Sigmoid-output head over observation features."""

    def __init__(self, in_dim: int, hidden=(64, 64), rng=None):
        self.net = DenseNet((in_dim, *hidden, 1), rng=rng)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.net.forward(x)[:, 0]

    def prob(self, x: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.logits(np.atleast_2d(x))))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.prob(x) >= 0.5


class DegenerateTrainingError(ValueError):
    """Classifier training was asked to fit a single class."""


def train_classifier(
    positives: np.ndarray,
    negatives: np.ndarray,
    hidden=(64, 64),
    epochs: int = 60,
    batch_size: int = 64,
    lr: float = 1e-3,
    holdout: float = 0.2,
    seed: int = 0,
) -> tuple[BinaryClassifier, ClassifierReport]:
    """Logistic-loss fit with a stratified held-out split."""
    positives = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    negatives = np.atleast_2d(np.asarray(negatives, dtype=np.float64))
    if len(positives) == 0 or len(negatives) == 0:
        raise DegenerateTrainingError("need both positive and negative examples")
    rng = np.random.default_rng(seed)

    def split(arr):
        idx = rng.permutation(len(arr))
        k = max(1, int(round(holdout * len(arr))))
        return arr[idx[k:]], arr[idx[:k]]

    pos_tr, pos_ho = split(positives)
    neg_tr, neg_ho = split(negatives)
    x_tr = np.concatenate([pos_tr, neg_tr])
    y_tr = np.concatenate([np.ones(len(pos_tr)), np.zeros(len(neg_tr))])
    x_ho = np.concatenate([pos_ho, neg_ho])
    y_ho = np.concatenate([np.ones(len(pos_ho)), np.zeros(len(neg_ho))])

    clf = BinaryClassifier(x_tr.shape[1], hidden, rng=np.random.default_rng(seed + 1))
    opt = Adam(clf.net.params(), lr=lr)
    n = len(x_tr)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            xb, yb = x_tr[idx], y_tr[idx]
            cache: list = []
            logit = clf.net.forward(xb, cache)[:, 0]
            p = 1.0 / (1.0 + np.exp(-logit))
            grad = ((p - yb) / len(xb))[:, None]
            grads, _ = clf.net.backward(cache, grad)
            opt.step(clf.net.params(), grads)
    acc = float(np.mean(clf.predict(x_ho) == (y_ho > 0.5)))
    return clf, ClassifierReport(
        holdout_accuracy=acc, n_pos=len(positives), n_neg=len(negatives)
    )


# ---------------------------------------------------------------------------
# behavior cloning with dataset aggregation (interactive IL baseline)
# ---------------------------------------------------------------------------


class DaggerLearner:
    """Regression of the tanh-Gaussian policy onto stored operator actions."""

    def __init__(self, obs_dim: int, act_dim: int, hidden=(256, 256),
                 lr: float = 3e-4, batch_size: int = 256, seed: int = 0):
        root = np.random.default_rng(seed)
        self.policy = TanhGaussianPolicy(
            obs_dim, act_dim, hidden, rng=np.random.default_rng(int(root.integers(2**31)))
        )
        self.opt = Adam(self.policy.trunk.params(), lr=lr)
        self.batch_size = batch_size
        self.rng = np.random.default_rng(int(root.integers(2**31)))
        self.obs: list[np.ndarray] = []
        self.act: list[np.ndarray] = []
        self.updates = 0

    def aggregate(self, obs: np.ndarray, action: np.ndarray) -> None:
        self.obs.append(np.asarray(obs, dtype=np.float64))
        self.act.append(np.asarray(action, dtype=np.float64))

    def __len__(self) -> int:
        return len(self.obs)

    def update(self) -> float | None:
        """One NLL step on a random minibatch of the aggregated store."""
        if not self.obs:
            return None
        n = len(self.obs)
        idx = self.rng.integers(0, n, size=min(self.batch_size, n))
        xb = np.stack([self.obs[i] for i in idx])
        ab = np.stack([self.act[i] for i in idx])
        a = np.clip(ab, -1.0 + 1e-6, 1.0 - 1e-6)
        u = np.arctanh(a)

        cache: list = []
        out = self.policy.trunk.forward(xb, cache)
        mean, log_std, log_std_raw = self.policy._heads(out)
        std = np.exp(log_std)
        z = (u - mean) / std
        nll = float(np.mean(np.sum(0.5 * z * z + log_std, axis=1)))
        b = len(xb)
        d_mean = -(z / std) / b
        d_logstd = (1.0 - z * z) / b
        clamp_mask = (log_std_raw > LOG_STD_MIN) & (log_std_raw < LOG_STD_MAX)
        grad_out = np.concatenate([d_mean, d_logstd * clamp_mask], axis=1)
        grads, _ = self.policy.trunk.backward(cache, grad_out)
        self.opt.step(self.policy.trunk.params(), grads)
        self.updates += 1
        return nll
