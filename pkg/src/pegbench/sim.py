"""Planar quasi-static compliant insertion environment.

A 3-DoF rigid peg (lateral x in mm, vertical z in mm, rotation c in
degrees) interacts with a slotted block through penalty contact.  The
body is overdamped: velocity is proportional to the net generalized
force, which keeps contact forces bounded by the applied commands and
avoids stiff-ODE integration headaches.  Axis commands come from a
small per-axis controller (velocity, force, or position-hold mode),
pass through the adaptive force-limit clamp, and act against contact
reactions computed from corner-point penalty springs with regularized
Coulomb friction.

Conventions: z points up, the block's top surface is at z = 0, the slot
bottom is at z = -slot_depth, and the peg pose tracks the center of the
peg tip.  Torques are N*m; forces N; lengths mm; angles degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .compliance import AdaptiveLimitConfig, LowPassFilter, clamp_command

AXES = ("x", "z", "c")
GRID_SIDE = 16
GRID_HALF_EXTENT = 20.0  # mm, local window half-size around the tool point

# observation feature scales (fixed encoding constants)
_Z_SCALE = 20.0      # mm
_V_SCALE = 20.0      # mm/s
_W_SCALE = 40.0      # deg/s
_F_SCALE = 7.0       # N
_M_SCALE = 0.5       # N*m


class EnvFault(RuntimeError):
    """Simulator state went non-finite."""


@dataclass(frozen=True)
class BodyState:
    pose: tuple[float, float, float]       # x mm, z mm, c deg
    velocity: tuple[float, float, float]   # vx mm/s, vz mm/s, wc deg/s
    wrench: tuple[float, float, float]     # Fx N, Fz N, Mc N*m (filtered)
    gripped: bool = True

    @property
    def x(self) -> float:
        return self.pose[0]

    @property
    def z(self) -> float:
        return self.pose[1]

    @property
    def c(self) -> float:
        return self.pose[2]


@dataclass(frozen=True)
class TaskGeometry:
    peg_width: float = 10.0
    peg_length: float = 30.0
    clearance: float = 0.3          # slot width minus peg width
    slot_depth: float = 12.0
    slot_center_x: float = 0.0
    slot_rotation: float = 0.0      # deg
    approach_height: float = 10.0   # peg-tip z at the nominal approach pose
    block_half_extent: float = 80.0

    def __post_init__(self) -> None:
        if self.clearance <= 0:
            raise ValueError("clearance must be positive")
        if not 0.2 <= self.clearance <= 0.4:
            # the task is specified for sub-millimetre tolerance work
            raise ValueError(
                f"clearance {self.clearance} outside the supported 0.2-0.4 mm band"
            )

    @property
    def slot_width(self) -> float:
        return self.peg_width + self.clearance

    @property
    def z_goal(self) -> float:
        return -self.slot_depth

    def success_rotation_bound(self) -> float:
        """Max |c - slot_rotation| (deg) at which a full-depth fit is possible."""
        return math.degrees(math.asin(min(1.0, self.clearance / self.peg_width)))


@dataclass(frozen=True)
class ResetConfig:
    sigma_xy: float = 5.0   # mm
    sigma_c: float = 10.0   # deg
    offset_x: float = 20.0  # mm, systematic calibration-error stand-in
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sigma_xy < 0 or self.sigma_c < 0:
            raise ValueError("spreads must be nonnegative")


@dataclass(frozen=True)
class Observation:
    """Policy input: local occupancy image plus stacked proprio/wrench frames.

    Absolute positions along the learned axes (x, c) are excluded from
    proprio; depth z stays in.  Frames: row 0 = previous, row 1 = current.
    """

    image: np.ndarray    # (16, 16) floats in [0, 1]
    proprio: np.ndarray  # (2, 4): z, vx, vz, wc
    wrench: np.ndarray   # (2, 3): Fx, Fz, Mc

    def features(self, vision: bool = True) -> np.ndarray:
        prop = self.proprio / np.array([_Z_SCALE, _V_SCALE, _V_SCALE, _W_SCALE])
        wr = self.wrench / np.array([_F_SCALE, _F_SCALE, _M_SCALE])
        parts = [prop.ravel(), wr.ravel()]
        if vision:
            parts.insert(0, self.image.ravel())
        return np.concatenate(parts)


def feature_dim(vision: bool = True) -> int:
    return (GRID_SIDE * GRID_SIDE if vision else 0) + 8 + 6


@dataclass(frozen=True)
class AxisTarget:
    mode: str            # velocity | force | hold
    value: float = 0.0   # mm/s or deg/s for velocity; N or N*m for force


@dataclass(frozen=True)
class AxisLimit:
    """Safety clamp on one axis: adaptive scaling or a fixed static bound."""

    kind: str  # adaptive | static
    adaptive: AdaptiveLimitConfig | None = None
    static_bound: float | None = None

    def __post_init__(self) -> None:
        if self.kind == "adaptive" and self.adaptive is None:
            raise ValueError("adaptive limit needs a config")
        if self.kind == "static" and not (self.static_bound and self.static_bound > 0):
            raise ValueError("static limit needs a positive bound")
        if self.kind not in ("adaptive", "static"):
            raise ValueError(f"unknown limit kind {self.kind!r}")

    @property
    def f_max(self) -> float:
        return self.adaptive.f_max if self.kind == "adaptive" else self.static_bound

    def clamp(self, f_cmd: float, f_meas_filtered: float) -> float:
        if self.kind == "adaptive":
            return clamp_command(f_cmd, f_meas_filtered, self.adaptive).f_applied
        b = self.static_bound
        return min(max(f_cmd, -b), b)


@dataclass
class SimParams:
    dt: float = 1.0 / 500.0
    substeps_per_tick: int = 50          # 500 Hz inner loop, 10 Hz commands
    contact_stiffness: float = 50.0      # N/mm
    friction_mu: float = 0.3
    friction_v_reg: float = 2.0          # mm/s, regularized stiction scale
    mobility_lin: float = 5.0            # (mm/s)/N -> 2 N gives 10 mm/s
    mobility_rot: float = 50.0           # (deg/s)/(N*m)
    kp_vel: float = 1.0                  # N/mm on integrated velocity error
    kp_vel_rot: float = 0.05             # N*m/deg
    windup_lin: float = 3.0              # mm
    windup_rot: float = 8.0              # deg
    kp_hold: float = 1.0                 # N/mm
    kp_hold_rot: float = 0.05            # N*m/deg
    noise_sigma_f: float = 0.5           # N per substep, pre-filter
    noise_sigma_m: float = 0.02          # N*m per substep
    filter_tau: float = 0.020            # s


def default_limits(static: bool = False) -> dict[str, AxisLimit]:
    """Production clamp set: 7 N translation ceilings settling at 2 N under
    contact, 2 N*m rotation settling at 0.4 N*m.  The static variant pins
    each axis at its equilibrium value instead."""
    from .compliance import config_for_equilibrium

    if static:
        return {
            "x": AxisLimit(kind="static", static_bound=2.0),
            "z": AxisLimit(kind="static", static_bound=2.0),
            "c": AxisLimit(kind="static", static_bound=0.4),
        }
    return {
        "x": AxisLimit(kind="adaptive",
                       adaptive=config_for_equilibrium(2.0, 7.0, 0.2, "x")),
        "z": AxisLimit(kind="adaptive",
                       adaptive=config_for_equilibrium(2.0, 7.0, 0.2, "z")),
        "c": AxisLimit(kind="adaptive",
                       adaptive=config_for_equilibrium(0.4, 2.0, 0.15, "c")),
    }


# ---------------------------------------------------------------------------
# contact geometry
# ---------------------------------------------------------------------------


def _material_penetration(px: float, pz: float, geom: TaskGeometry):
    """Penetration depth and outward normal for a point inside the block.

    Free space is the upper half-plane plus the open slot cavity; the
    exit direction is toward whichever free region is closest.
    Returns (depth, nx, nz) or None when the point is not in material.
    """
    if pz >= 0.0:
        return None
    dx = px - geom.slot_center_x
    half_w = 0.5 * geom.slot_width
    inside_cavity_x = abs(dx) < half_w
    if inside_cavity_x and pz > -geom.slot_depth:
        return None
    if abs(px) > geom.block_half_extent:
        return None

    d_up = -pz
    # distance to the cavity rectangle
    ddx = max(abs(dx) - half_w, 0.0)
    ddz = max(-geom.slot_depth - pz, 0.0)
    d_cav = math.hypot(ddx, ddz)
    if d_cav < d_up and d_cav > 0.0:
        nx = -math.copysign(ddx, dx) / d_cav
        nz = ddz / d_cav
        return d_cav, nx, nz
    return d_up, 0.0, 1.0


def _peg_corners_body(geom: TaskGeometry):
    w = 0.5 * geom.peg_width
    return ((-w, 0.0), (w, 0.0), (-w, geom.peg_length), (w, geom.peg_length))


def _peg_point_penetration(qx: float, qz: float, geom: TaskGeometry):
    """Penetration of a body-frame point inside the peg rectangle.

    Returns (depth, body-frame outward normal) or None.
    """
    w = 0.5 * geom.peg_width
    if not (-w < qx < w and 0.0 < qz < geom.peg_length):
        return None
    exits = (
        (w - qx, (1.0, 0.0)),
        (w + qx, (-1.0, 0.0)),
        (qz, (0.0, -1.0)),
        (geom.peg_length - qz, (0.0, 1.0)),
    )
    depth, normal = min(exits, key=lambda e: e[0])
    return depth, normal


def contact_wrench(
    pose: tuple[float, float, float],
    velocity: tuple[float, float, float],
    geom: TaskGeometry,
    params: SimParams,
) -> tuple[float, float, float]:
    """Total reaction (Fx N, Fz N, Mc N*m) on the peg at this pose.

    Contact points are the peg corners tested against the block material
    plus the two slot-lip corners tested against the peg rectangle, which
    together cover the generic rectangle-vs-slot contact modes.
    """
    x, z, c = pose
    vx, vz, wc = velocity
    omega = math.radians(wc)  # rad/s for the velocity field
    rot = math.radians(c - geom.slot_rotation)
    # work in the slot frame; with slot_rotation 0 this is the world frame
    cos_r, sin_r = math.cos(math.radians(geom.slot_rotation)), math.sin(
        math.radians(geom.slot_rotation)
    )

    def world_to_slot(wx: float, wz: float):
        return (cos_r * wx + sin_r * wz, -sin_r * wx + cos_r * wz)

    def slot_to_world_vec(sx: float, sz: float):
        return (cos_r * sx - sin_r * sz, sin_r * sx + cos_r * sz)

    px_s, pz_s = world_to_slot(x, z)
    cos_b, sin_b = math.cos(rot), math.sin(rot)

    fx_total = 0.0
    fz_total = 0.0
    m_total = 0.0  # N*mm

    def accumulate(cpx: float, cpz: float, depth: float, nx: float, nz: float):
        """Add normal + friction force acting at slot-frame point (cpx, cpz)."""
        nonlocal fx_total, fz_total, m_total
        fn = params.contact_stiffness * depth
        rx, rz = cpx - px_s, cpz - pz_s
        # peg material velocity at the contact point (slot frame)
        vpx, vpz = world_to_slot(vx, vz)
        vpx += -omega * rz
        vpz += omega * rx
        tx, tz = -nz, nx
        vt = vpx * tx + vpz * tz
        ft = -params.friction_mu * fn * math.tanh(vt / params.friction_v_reg)
        fx = fn * nx + ft * tx
        fz = fn * nz + ft * tz
        fx_total += fx
        fz_total += fz
        m_total += rx * fz - rz * fx

    # peg corners vs block material
    for bx, bz in _peg_corners_body(geom):
        cpx = px_s + cos_b * bx - sin_b * bz
        cpz = pz_s + sin_b * bx + cos_b * bz
        hit = _material_penetration(cpx, cpz, geom)
        if hit is not None:
            depth, nx, nz = hit
            accumulate(cpx, cpz, depth, nx, nz)

    # slot lips vs peg
    half_w = 0.5 * geom.slot_width
    for lip_x in (geom.slot_center_x - half_w, geom.slot_center_x + half_w):
        lx, lz = lip_x - px_s, 0.0 - pz_s
        qx = cos_b * lx + sin_b * lz
        qz = -sin_b * lx + cos_b * lz
        hit = _peg_point_penetration(qx, qz, geom)
        if hit is not None:
            depth, (bnx, bnz) = hit
            # body-frame outward normal to slot frame; force on peg opposes it
            nx = cos_b * bnx - sin_b * bnz
            nz = sin_b * bnx + cos_b * bnz
            accumulate(lip_x, 0.0, depth, -nx, -nz)

    fwx, fwz = slot_to_world_vec(fx_total, fz_total)
    return fwx, fwz, m_total / 1000.0  # N*mm -> N*m


# ---------------------------------------------------------------------------
# environment
# ---------------------------------------------------------------------------


class InsertionEnv:
    """One peg-in-slot scene; single-threaded, deterministic given its seed."""

    def __init__(
        self,
        geom: TaskGeometry | None = None,
        reset_cfg: ResetConfig | None = None,
        limits: dict[str, AxisLimit] | None = None,
        params: SimParams | None = None,
    ):
        self.geom = geom or TaskGeometry()
        self.reset_cfg = reset_cfg or ResetConfig()
        self.limits = limits or default_limits()
        self.params = params or SimParams()
        self._episode_index = 0
        self._rng = np.random.default_rng()
        self.state: BodyState | None = None
        self._raw_wrench = (0.0, 0.0, 0.0)
        self._filters = {a: LowPassFilter(self.params.filter_tau, self.params.dt)
                         for a in AXES}
        self._err_int = {a: 0.0 for a in AXES}
        self._hold_ref = {a: 0.0 for a in AXES}
        self.tick = 0

    # -- lifecycle ----------------------------------------------------------

    def reset(self, episode: int | None = None) -> BodyState:
        """Nominal approach pose plus offset and Gaussian perturbation.

        Each episode index maps to an independent, reproducible stream
        derived from the configured seed.
        """
        if episode is None:
            episode = self._episode_index
        self._episode_index = episode + 1
        seq = np.random.SeedSequence((self.reset_cfg.seed, episode))
        self._rng = np.random.default_rng(seq)
        g, rc = self.geom, self.reset_cfg
        x = g.slot_center_x + rc.offset_x + (
            self._rng.normal(0.0, rc.sigma_xy) if rc.sigma_xy > 0 else 0.0
        )
        c = g.slot_rotation + (
            self._rng.normal(0.0, rc.sigma_c) if rc.sigma_c > 0 else 0.0
        )
        self.state = BodyState(
            pose=(x, g.approach_height, c),
            velocity=(0.0, 0.0, 0.0),
            wrench=(0.0, 0.0, 0.0),
            gripped=True,
        )
        for f in self._filters.values():
            f.reset()
        self._err_int = {a: 0.0 for a in AXES}
        self._raw_wrench = (0.0, 0.0, 0.0)
        self.tick = 0
        self.begin_primitive()
        return self.state

    def begin_primitive(self) -> None:
        """Reset controller integrators and capture hold references."""
        st = self.state
        self._err_int = {a: 0.0 for a in AXES}
        if st is not None:
            self._hold_ref = {"x": st.x, "z": st.z, "c": st.c}

    # -- dynamics -------------------------------------------------------------

    def _command(self, axis: str, target: AxisTarget, pose, vel) -> float:
        p = self.params
        i = AXES.index(axis)
        rot = axis == "c"
        mob = p.mobility_rot if rot else p.mobility_lin
        if target.mode == "force":
            return target.value
        if target.mode == "velocity":
            kp = p.kp_vel_rot if rot else p.kp_vel
            cap = p.windup_rot if rot else p.windup_lin
            err = self._err_int[axis]
            return target.value / mob + kp * min(max(err, -cap), cap)
        if target.mode == "hold":
            kp = p.kp_hold_rot if rot else p.kp_hold
            return kp * (self._hold_ref[axis] - pose[i])
        raise ValueError(f"unknown axis mode {target.mode!r}")

    def step(self, targets: dict[str, AxisTarget]) -> tuple[BodyState, tuple]:
        """Advance one 10 Hz control tick (50 substeps at 500 Hz)."""
        if self.state is None:
            raise RuntimeError("reset() before step()")
        p = self.params
        x, z, c = self.state.pose
        vx, vz, wc = self.state.velocity
        for a in AXES:
            if a not in targets:
                raise ValueError(f"missing target for axis {a}")

        for _ in range(p.substeps_per_tick):
            pose = (x, z, c)
            vel = (vx, vz, wc)
            cfx, cfz, cmc = contact_wrench(pose, vel, self.geom, p)
            raw = (
                cfx + self._rng.normal(0.0, p.noise_sigma_f),
                cfz + self._rng.normal(0.0, p.noise_sigma_f),
                cmc + self._rng.normal(0.0, p.noise_sigma_m),
            )
            filt = tuple(self._filters[a].update(raw[i]) for i, a in enumerate(AXES))

            applied = []
            for i, a in enumerate(AXES):
                f_cmd = self._command(a, targets[a], pose, vel)
                applied.append(self.limits[a].clamp(f_cmd, filt[i]))

            net_x = applied[0] + cfx
            net_z = applied[1] + cfz
            net_c = applied[2] + cmc
            vx = p.mobility_lin * net_x
            vz = p.mobility_lin * net_z
            wc = p.mobility_rot * net_c
            x += vx * p.dt
            z += vz * p.dt
            c += wc * p.dt

            for i, a in enumerate(AXES):
                t = targets[a]
                if t.mode == "velocity":
                    v_now = (vx, vz, wc)[i]
                    cap = p.windup_rot if a == "c" else p.windup_lin
                    e = self._err_int[a] + (t.value - v_now) * p.dt
                    self._err_int[a] = min(max(e, -cap), cap)

            self._raw_wrench = raw

        if not all(map(math.isfinite, (x, z, c, vx, vz, wc))):
            raise EnvFault(f"non-finite state at tick {self.tick}: {(x, z, c)}")
        wrench = tuple(self._filters[a].y for a in AXES)
        self.state = BodyState(
            pose=(x, z, c), velocity=(vx, vz, wc), wrench=wrench, gripped=True
        )
        self.tick += 1
        return self.state, wrench


# ---------------------------------------------------------------------------
# observations, rewards, success
# ---------------------------------------------------------------------------


def render_occupancy(state: BodyState, geom: TaskGeometry) -> np.ndarray:
    """16x16 local occupancy grid centered on the tool point, world-aligned.

    Peg material contributes 0.5, block material 1.0; each cell is
    averaged over a 2x2 supersample so partial coverage shows up as
    fractional occupancy.  Row 0 is the top of the window.
    """
    n = GRID_SIDE
    half = GRID_HALF_EXTENT
    cell = 2.0 * half / n
    offs = np.arange(n) * cell - half + 0.5 * cell
    sub = np.array([-0.25 * cell, 0.25 * cell])
    xs = (offs[None, :, None, None] + sub[None, None, None, :]) + state.x
    zs = (-offs[:, None, None, None] - sub[None, None, :, None]) + state.z
    xs, zs = np.broadcast_arrays(xs, zs)

    # block material mask (slot frame == world frame when slot_rotation == 0)
    rot = math.radians(geom.slot_rotation)
    if rot:
        cos_r, sin_r = math.cos(rot), math.sin(rot)
        sx = cos_r * xs + sin_r * zs
        sz = -sin_r * xs + cos_r * zs
    else:
        sx, sz = xs, zs
    half_w = 0.5 * geom.slot_width
    in_cavity = (np.abs(sx - geom.slot_center_x) < half_w) & (sz > -geom.slot_depth)
    block = (sz < 0) & ~in_cavity & (np.abs(sx) <= geom.block_half_extent)

    # peg mask in the body frame
    b = math.radians(state.c)
    cos_b, sin_b = math.cos(b), math.sin(b)
    dx, dz = xs - state.x, zs - state.z
    qx = cos_b * dx + sin_b * dz
    qz = -sin_b * dx + cos_b * dz
    peg = (np.abs(qx) < 0.5 * geom.peg_width) & (qz > 0) & (qz < geom.peg_length)

    val = np.clip(1.0 * block + 0.5 * peg, 0.0, 1.0)
    return val.mean(axis=(2, 3))


def render_obs(
    state: BodyState, geom: TaskGeometry, prev: Observation | None = None
) -> Observation:
    """Stack the current frame onto the previous one (duplicated at episode
    start); absolute x and c never enter proprio."""
    image = render_occupancy(state, geom)
    frame_p = np.array([state.z, *state.velocity])
    frame_w = np.array(state.wrench)
    if prev is None:
        proprio = np.stack([frame_p, frame_p])
        wrench = np.stack([frame_w, frame_w])
    else:
        proprio = np.stack([prev.proprio[1], frame_p])
        wrench = np.stack([prev.wrench[1], frame_w])
    return Observation(image=image, proprio=proprio, wrench=wrench)


def success_oracle(state: BodyState, geom: TaskGeometry) -> bool:
    """Ground-truth full-insertion predicate (metrics and label plumbing)."""
    if abs(state.z - geom.z_goal) > 0.2:
        return False
    if abs(state.x - geom.slot_center_x) > 0.5 * geom.clearance + 0.05:
        return False
    if abs(state.c - geom.slot_rotation) > geom.success_rotation_bound():
        return False
    return True


class RewardConfigError(ValueError):
    pass


def reward(
    state: BodyState,
    geom: TaskGeometry,
    kind: str = "dense",
    classifier=None,
    obs: Observation | None = None,
    vision: bool = True,
) -> float:
    """Dense: negative vertical distance to the goal depth (mm).
    Sparse: binary success-classifier output on the current observation."""
    if kind == "dense":
        return -abs(state.z - geom.z_goal)
    if kind == "sparse":
        if classifier is None:
            raise RewardConfigError("sparse reward needs a trained classifier")
        if obs is None:
            raise RewardConfigError("sparse reward needs the current observation")
        p = float(classifier.prob(obs.features(vision=vision))[0])
        return 1.0 if p >= 0.5 else 0.0
    raise RewardConfigError(f"unknown reward kind {kind!r}")
