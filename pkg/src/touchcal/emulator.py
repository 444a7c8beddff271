"""Stand-in for the physical arm and touchscreen.

The emulator owns a secretly perturbed copy of the nominal chain. Commands go in
as joint vectors; what comes back is what the real robot would report: a joint
readback and, when the fingertip reaches the glass, a touch coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .kinematics import (
    ContractError,
    IkParams,
    KinematicChain,
    NoConvergence,
    Pose,
    clamp_to_limits,
    forward_kinematics,
    solve_ik,
)

DEFAULT_OVERSHOOT = {1.0: 0.04, 2.0: 0.02, 3.0: 0.018}
CONTACT_EPSILON = 5e-4

# stream tags for np.random.default_rng([seed, tag, ...])
PERTURBATION_STREAM = 0
NOISE_STREAM = 1


class NoContact(RuntimeError):
    """Lowering reached the floor bound without a touch being registered."""


@dataclass(frozen=True)
class Screen:
    width: float = 0.54
    height: float = 0.33
    pixel_width: int = 1920
    pixel_height: int = 1080
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ContractError("screen dimensions must be positive")
        if int(self.pixel_width) != self.pixel_width or self.pixel_width <= 0 \
                or int(self.pixel_height) != self.pixel_height or self.pixel_height <= 0:
            raise ContractError("pixel dimensions must be positive integers")
        R = self.pose.rotation
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-10:
            raise ContractError("screen pose rotation is not orthonormal")

    def to_screen(self, p_world) -> np.ndarray:
        """World point -> screen frame (x, y along the glass, z along its normal)."""
        return self.pose.inverse_apply(p_world)

    def to_world(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return self.pose.apply(np.append(xy, 0.0))

    def contains(self, xy) -> bool:
        x, y = xy
        return 0.0 <= x <= self.width and 0.0 <= y <= self.height

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height,
                "pixel_width": self.pixel_width, "pixel_height": self.pixel_height,
                "pose": self.pose.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Screen":
        return cls(float(d.get("width", 0.54)), float(d.get("height", 0.33)),
                   int(d.get("pixel_width", 1920)), int(d.get("pixel_height", 1080)),
                   Pose.from_dict(d.get("pose")))


def pixel_to_metric(screen: Screen, px) -> np.ndarray:
    u, v = px
    if not (0 <= u <= screen.pixel_width and 0 <= v <= screen.pixel_height):
        raise ContractError(f"pixel {px} outside {screen.pixel_width}x{screen.pixel_height}")
    # divide first so the far corner maps exactly onto (width, height)
    return np.array([u / screen.pixel_width * screen.width,
                     v / screen.pixel_height * screen.height])


def metric_to_pixel(screen: Screen, p) -> tuple[int, int]:
    x, y = p
    if not screen.contains((x, y)):
        raise ContractError(f"point {p} outside the {screen.width}x{screen.height} m screen")
    return (int(round(x / screen.width * screen.pixel_width)),
            int(round(y / screen.height * screen.pixel_height)))


@dataclass(frozen=True)
class PerturbationConfig:
    """Resolved sim-to-real discrepancy for one emulated robot.

    ``link_scale[i]`` scales the rigid segment moved by joint ``i``: the origin
    translation of joint ``i + 1``, or the fingertip offset for the last joint.
    ``overshoot_gain`` maps a movement duration in seconds to the fraction of
    the commanded joint step that is overshot.
    """

    joint_offset: np.ndarray
    joint_gain: np.ndarray
    link_scale: np.ndarray
    overshoot_gain: Mapping[float, float] = field(default_factory=lambda: dict(DEFAULT_OVERSHOOT))
    noise_std: float = 0.002
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("joint_offset", "joint_gain", "link_scale"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = self.joint_offset.shape
        if self.joint_gain.shape != n or self.link_scale.shape != n:
            raise ContractError("offset, gain and link scale must have one entry per joint")
        if np.any(self.joint_gain <= 0.8) or np.any(self.joint_gain >= 1.2):
            raise ContractError("joint_gain must lie in (0.8, 1.2)")
        if np.any(self.link_scale <= 0.8) or np.any(self.link_scale >= 1.2):
            raise ContractError("link_scale must lie in (0.8, 1.2)")
        if self.noise_std < 0:
            raise ContractError("noise_std must be nonnegative")
        object.__setattr__(self, "overshoot_gain",
                           {float(k): float(v) for k, v in self.overshoot_gain.items()})

    @property
    def durations(self) -> list[float]:
        return sorted(self.overshoot_gain)

    @classmethod
    def identity(cls, n_joints: int, durations: Sequence[float] = (1, 2, 3),
                 rng_seed: int = 0) -> "PerturbationConfig":
        return cls(np.zeros(n_joints), np.ones(n_joints), np.ones(n_joints),
                   {float(d): 0.0 for d in durations}, 0.0, rng_seed)

    @classmethod
    def sample(cls, chain: KinematicChain, rng_seed: int, *, offset_std: float = 0.01,
               gain_std: float = 0.005, link_scale_std: float = 0.005,
               shoulder_joints: Sequence[str] = ("shld_z", "shld_x"),
               shoulder_factor: float = 2.0,
               overshoot_gain: Optional[Mapping[float, float]] = None,
               noise_std: float = 0.002) -> "PerturbationConfig":
        """Draw offsets, gains and link scales once from the seeded stream."""
        rng = np.random.default_rng([rng_seed, PERTURBATION_STREAM])
        n = chain.n_joints
        std = np.full(n, offset_std)
        for i, name in enumerate(chain.names):
            if name in shoulder_joints:
                std[i] *= shoulder_factor
        offset = rng.normal(0.0, 1.0, n) * std
        gain = 1.0 + rng.normal(0.0, gain_std, n)
        scale = 1.0 + rng.normal(0.0, link_scale_std, n)
        return cls(offset, gain, scale,
                   dict(DEFAULT_OVERSHOOT if overshoot_gain is None else overshoot_gain),
                   noise_std, rng_seed)

    @classmethod
    def from_dict(cls, d: dict, chain: KinematicChain, rng_seed: int) -> "PerturbationConfig":
        """Scene-file form. Explicit arrays win; missing ones are drawn from the seed."""
        if d.get("identity", False):
            durations = [float(k) for k in d.get("overshoot_gain", DEFAULT_OVERSHOOT)]
            return cls.identity(chain.n_joints, durations, rng_seed)
        overshoot = {float(k): float(v)
                     for k, v in d.get("overshoot_gain", DEFAULT_OVERSHOOT).items()}
        drawn = cls.sample(
            chain, rng_seed,
            offset_std=float(d.get("offset_std", 0.01)),
            gain_std=float(d.get("gain_std", 0.005)),
            link_scale_std=float(d.get("link_scale_std", 0.005)),
            shoulder_joints=tuple(d.get("shoulder_joints", ("shld_z", "shld_x"))),
            shoulder_factor=float(d.get("shoulder_factor", 2.0)),
            overshoot_gain=overshoot,
            noise_std=float(d.get("noise_std", 0.002)),
        )
        return replace(
            drawn,
            joint_offset=np.asarray(d.get("joint_offset", drawn.joint_offset), dtype=float),
            joint_gain=np.asarray(d.get("joint_gain", drawn.joint_gain), dtype=float),
            link_scale=np.asarray(d.get("link_scale", drawn.link_scale), dtype=float),
        )

    def to_dict(self) -> dict:
        return {"joint_offset": self.joint_offset.tolist(),
                "joint_gain": self.joint_gain.tolist(),
                "link_scale": self.link_scale.tolist(),
                "overshoot_gain": {f"{k:g}": v for k, v in self.overshoot_gain.items()},
                "noise_std": self.noise_std, "rng_seed": self.rng_seed}


@dataclass
class TouchResult:
    contact: Optional[np.ndarray]
    joints_readback: np.ndarray
    fingertip_real: np.ndarray


def perturb_chain(chain: KinematicChain, link_scale: np.ndarray) -> KinematicChain:
    joints = list(chain.joints)
    for i in range(1, len(joints)):
        joints[i] = replace(joints[i],
                            origin_translation=joints[i].origin_translation * link_scale[i - 1])
    return replace(chain, joints=tuple(joints),
                   fingertip_offset=chain.fingertip_offset * link_scale[-1])


class RealWorldEmulator:
    """Perturbed arm plus touchscreen, driven one command at a time.

    Not thread-safe: each instance carries the previous command and an RNG
    stream. Use :meth:`fork` for an independent copy with its own stream.
    """

    def __init__(self, nominal: KinematicChain, cfg: PerturbationConfig, screen: Screen,
                 *, home=None, contact_epsilon: float = CONTACT_EPSILON, stream: int = 0):
        if cfg.joint_offset.shape != (nominal.n_joints,):
            raise ContractError("perturbation size does not match the chain")
        self._nominal = nominal
        self._cfg = cfg
        self._chain = perturb_chain(nominal, cfg.link_scale)
        self.screen = screen
        self.contact_epsilon = contact_epsilon
        self.stream = stream
        self.home = np.asarray(nominal.posture("home") if home is None else home, dtype=float)
        self._rng = np.random.default_rng([cfg.rng_seed, NOISE_STREAM, stream])
        self._q_prev = self.home.copy()

    @property
    def durations(self) -> list[float]:
        return self._cfg.durations

    @property
    def q_prev(self) -> np.ndarray:
        return self._q_prev.copy()

    def fork(self, stream: int) -> "RealWorldEmulator":
        """Same robot, fresh state, independent noise stream."""
        return RealWorldEmulator(self._nominal, self._cfg, self.screen, home=self.home,
                                 contact_epsilon=self.contact_epsilon, stream=stream)

    def real_fk(self, q) -> np.ndarray:
        return forward_kinematics(self._chain, q)

    def execute_move(self, q_cmd, duration: float) -> np.ndarray:
        """Command a posture and return the joint readback J_R."""
        cfg = self._cfg
        try:
            kappa = cfg.overshoot_gain[float(duration)]
        except KeyError:
            raise ContractError(f"unknown movement duration {duration!r}; "
                                f"configured: {cfg.durations}") from None
        q_cmd = np.asarray(q_cmd, dtype=float)
        q = cfg.joint_gain * q_cmd + cfg.joint_offset + kappa * (q_cmd - self._q_prev)
        if cfg.noise_std > 0:
            q = q + self._rng.normal(0.0, cfg.noise_std, q.shape)
        self._q_prev = q_cmd.copy()
        return clamp_to_limits(self._chain, q)

    def retract(self, duration: float = 2.0) -> np.ndarray:
        return self.execute_move(self.home, duration)

    def touch_screen(self, q_cmd, duration: float) -> TouchResult:
        q_r = self.execute_move(q_cmd, duration)
        tip = self.real_fk(q_r)
        local = self.screen.to_screen(tip)
        contact = None
        if local[2] <= self.contact_epsilon and self.screen.contains(local[:2]):
            contact = local[:2].copy()
        return TouchResult(contact, q_r, tip)

    def guide_to(self, screen_xy, seed=None) -> np.ndarray:
        """Hand-guide the fingertip onto a screen point and read the joints.

        Emulates an operator placing the finger: the posture is solved on the
        real chain, so the readback is the true joint state.
        """
        target = self.screen.to_world(screen_xy)
        seed = self._nominal.posture("ready") if seed is None else seed
        q = solve_ik(self._chain, target, seed, IkParams(tolerance=1e-6, max_iterations=500))
        self._q_prev = q.copy()
        return q


def build_real_world(nominal: KinematicChain, cfg: PerturbationConfig, screen: Screen,
                     **kwargs) -> RealWorldEmulator:
    return RealWorldEmulator(nominal, cfg, screen, **kwargs)


def lower_until_contact(emu: RealWorldEmulator, sim_chain: KinematicChain, target_xy_sim,
                        z_start: float, z_step: float = 1e-3, *, z_floor: Optional[float] = None,
                        seed=None, ik_params: IkParams = IkParams(),
                        duration: float = 2.0) -> tuple[float, np.ndarray]:
    """Step the commanded sim height down until the screen registers a touch.

    Returns:
        (commanded sim z at first contact, contact point in screen meters).

    Raises:
        NoContact: no touch before ``z_floor`` (default ``z_start - 0.1``).
    """
    if z_step <= 0:
        raise ContractError("z_step must be positive")
    if z_floor is None:
        z_floor = z_start - 0.1
    x, y = map(float, target_xy_sim)
    q = sim_chain.posture("ready") if seed is None else np.asarray(seed, dtype=float)
    k = 0
    while True:
        z = z_start - k * z_step
        if z < z_floor:
            raise NoContact(f"no contact at sim ({x:.4f}, {y:.4f}) down to z={z_floor:.4f}")
        try:
            q = solve_ik(sim_chain, (x, y, z), q, ik_params)
        except NoConvergence as exc:
            raise NoContact(f"IK failed at sim ({x:.4f}, {y:.4f}, {z:.4f}): {exc}") from exc
        res = emu.touch_screen(q, duration)
        if res.contact is not None:
            return z, res.contact
        k += 1
