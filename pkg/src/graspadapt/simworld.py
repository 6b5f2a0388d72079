"""Deterministic toy grasping world.

The world is kinematic: commands translate/rotate the gripper, objects never
move, and the outcome of an attempt is decided by an analytic antipodal
grasp oracle when the gripper descends and closes after the last step.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, replace, asdict
from enum import Enum

import numpy as np
from shapely.geometry import Polygon, box

from . import geometry
from .config import CanonicalDynamics, RandomizationRanges, WorldConfig
from .procgen import ObjectModel
from .rng import make_rng

_FRICTION_REF = 0.6  # object lateral friction that leaves the cone unscaled


class PlacementError(RuntimeError):
    """Rejection sampling could not place all objects in the bin."""


class EpisodeError(RuntimeError):
    """A policy emitted an invalid command; episode aborted."""


@dataclass(frozen=True)
class MotionCommand:
    dx: float  # mm
    dy: float  # mm
    dz: float  # mm
    sin_theta: float
    cos_theta: float

    @property
    def theta(self) -> float:
        return float(np.arctan2(self.sin_theta, self.cos_theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dz, self.sin_theta, self.cos_theta])

    def validate(self, max_step: float) -> None:
        norm = self.sin_theta ** 2 + self.cos_theta ** 2
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(f"sin^2+cos^2 = {norm}, not 1 within 1e-6")
        for name in ("dx", "dy", "dz"):
            if abs(getattr(self, name)) > max_step:
                raise ValueError(f"|{name}| exceeds max step {max_step}")


def encode_command(dx: float, dy: float, dz: float, theta: float,
                   max_step: float = WorldConfig.max_step) -> MotionCommand:
    """Build a command with a sine-cosine rotation encoding."""
    v = MotionCommand(dx=float(dx), dy=float(dy), dz=float(dz),
                      sin_theta=float(np.sin(theta)), cos_theta=float(np.cos(theta)))
    v.validate(max_step)
    return v


@dataclass(frozen=True)
class DynamicsParams:
    mass_scale: float
    friction_scale: float
    noise_sigma: float  # mm
    contact_margin: float  # mm
    friction_cone_half_angle: float  # rad

    def validate(self) -> None:
        for name in ("mass_scale", "friction_scale", "noise_sigma",
                     "contact_margin", "friction_cone_half_angle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.friction_cone_half_angle >= np.pi / 2:
            raise ValueError("friction cone half angle must be < pi/2")


@dataclass(frozen=True)
class AppearanceParams:
    tray_texture_seed: int
    object_texture_seeds: dict[int, int]  # object id -> seed; 0 = flat fill color
    arm_color: tuple[float, float, float]
    light_direction: tuple[float, float]  # unit vector
    light_brightness: float  # in [0.5, 1.5]
    background_index: int  # in [0, 5]
    camera_offset: tuple[float, float]  # mm
    camera_scale: float

    def validate(self) -> None:
        if not 0.5 <= self.light_brightness <= 1.5:
            raise ValueError("brightness outside [0.5, 1.5]")
        if not 0 <= self.background_index <= 5:
            raise ValueError("background_index outside [0, 5]")


class RandomizationRegime(Enum):
    NONE = "none"
    VISUAL = "visual"
    DYNAMICS = "dynamics"
    ALL = "all"


@dataclass(frozen=True)
class GripperState:
    x: float
    y: float
    z: float
    theta: float
    jaw_opening: float
    closed: bool


@dataclass
class SceneState:
    bin_rect: tuple[float, float, float, float]  # (x0, y0, x1, y1) mm
    objects: dict[int, ObjectModel]
    object_poses: list[tuple[int, float, float, float]]  # (id, x, y, theta)
    gripper: GripperState
    step_index: int
    world: WorldConfig
    rng_state: dict | None = None


def canonical_dynamics(c: CanonicalDynamics = CanonicalDynamics()) -> DynamicsParams:
    return DynamicsParams(mass_scale=c.mass_scale, friction_scale=c.friction_scale,
                          noise_sigma=c.noise_sigma, contact_margin=c.contact_margin,
                          friction_cone_half_angle=c.friction_cone_half_angle)


_CANONICAL_ARM_COLOR = (0.75, 0.45, 0.15)
_CANONICAL_LIGHT = (0.0, 1.0)


def canonical_appearance(rng: np.random.Generator,
                         ranges: RandomizationRanges = RandomizationRanges()) -> AppearanceParams:
    """Fixed palette/lighting; only the backdrop and camera pose jitter."""
    return AppearanceParams(
        tray_texture_seed=0,
        object_texture_seeds={},
        arm_color=_CANONICAL_ARM_COLOR,
        light_direction=_CANONICAL_LIGHT,
        light_brightness=1.0,
        background_index=int(rng.integers(6)),
        camera_offset=(float(rng.uniform(-ranges.camera_offset, ranges.camera_offset)),
                       float(rng.uniform(-ranges.camera_offset, ranges.camera_offset))),
        camera_scale=float(rng.uniform(*ranges.camera_scale)),
    )


def sample_randomization(regime: RandomizationRegime, rng: np.random.Generator,
                         object_ids: list[int] = (),
                         ranges: RandomizationRanges = RandomizationRanges(),
                         canon: CanonicalDynamics = CanonicalDynamics(),
                         ) -> tuple[AppearanceParams, DynamicsParams]:
    """Per-episode appearance/dynamics draw for the four randomization regimes."""
    app = canonical_appearance(rng, ranges)
    if regime in (RandomizationRegime.VISUAL, RandomizationRegime.ALL):
        angle = rng.uniform(0, 2 * np.pi)
        app = replace(
            app,
            tray_texture_seed=int(rng.integers(1, 2 ** 31)),
            object_texture_seeds={int(i): int(rng.integers(1, 2 ** 31)) for i in object_ids},
            arm_color=tuple(rng.uniform(0.1, 0.9, size=3).tolist()),
            light_direction=(float(np.cos(angle)), float(np.sin(angle))),
            light_brightness=float(rng.uniform(*ranges.brightness)),
        )
    dyn = canonical_dynamics(canon)
    if regime in (RandomizationRegime.DYNAMICS, RandomizationRegime.ALL):
        dyn = replace(
            dyn,
            mass_scale=float(rng.uniform(*ranges.mass_scale)),
            friction_scale=float(rng.uniform(*ranges.friction_scale)),
            friction_cone_half_angle=float(rng.uniform(*ranges.cone_half_angle)),
        )
    return app, dyn


def _object_polygons(scene: SceneState) -> list[tuple[int, np.ndarray]]:
    out = []
    for oid, x, y, th in scene.object_poses:
        out.append((oid, geometry.transform(scene.objects[oid].vertices, x, y, th)))
    return out


def reset_scene(objects: list[ObjectModel], world_cfg: WorldConfig,
                rng: np.random.Generator,
                bin_half: str | None = None) -> SceneState:
    """Place objects without overlap and home the gripper above the bin.

    bin_half optionally restricts object centroids to the "left" or "right"
    half of the bin (used by the evaluation protocol's re-drop rule).
    """
    if not 1 <= len(objects) <= world_cfg.max_objects:
        raise ValueError(f"need 1..{world_cfg.max_objects} objects, got {len(objects)}")
    w, h = world_cfg.bin_size
    bin_rect = (0.0, 0.0, w, h)
    m = world_cfg.placement_margin
    x_lo, x_hi = m, w - m
    if bin_half == "left":
        x_hi = w / 2
    elif bin_half == "right":
        x_lo = w / 2
    placed: list[Polygon] = []
    poses: list[tuple[int, float, float, float]] = []
    for obj in objects:
        ok = False
        for _ in range(150):
            x = float(rng.uniform(x_lo, x_hi))
            y = float(rng.uniform(m, h - m))
            th = float(rng.uniform(0, 2 * np.pi))
            poly = Polygon(geometry.transform(obj.vertices, x, y, th))
            if any(poly.intersects(p) for p in placed):
                continue
            placed.append(poly)
            poses.append((obj.id, x, y, th))
            ok = True
            break
        if not ok:
            raise PlacementError(f"could not place object {obj.id}; bin too crowded")
    gx = w / 2 + float(rng.uniform(-world_cfg.home_jitter, world_cfg.home_jitter))
    gy = h / 2 + float(rng.uniform(-world_cfg.home_jitter, world_cfg.home_jitter))
    gripper = GripperState(x=gx, y=gy, z=world_cfg.z_max,
                           theta=float(rng.uniform(0, np.pi)),
                           jaw_opening=world_cfg.jaw_opening, closed=False)
    return SceneState(bin_rect=bin_rect, objects={o.id: o for o in objects},
                      object_poses=poses, gripper=gripper, step_index=0,
                      world=world_cfg, rng_state=rng.bit_generator.state)


def apply_command(scene: SceneState, v: MotionCommand, dyn: DynamicsParams,
                  noise_enabled: bool, rng: np.random.Generator) -> SceneState:
    """Kinematic command application with optional horizontal motor noise."""
    if scene.step_index >= scene.world.episode_steps:
        raise ValueError("episode already exhausted its steps")
    v.validate(scene.world.max_step)
    dx, dy = v.dx, v.dy
    if noise_enabled:
        eps = rng.normal(0.0, dyn.noise_sigma, size=2)
        dx, dy = dx + float(eps[0]), dy + float(eps[1])
    x0, y0, x1, y1 = scene.bin_rect
    g = scene.gripper
    gripper = GripperState(
        x=float(np.clip(g.x + dx, x0, x1)),
        y=float(np.clip(g.y + dy, y0, y1)),
        z=float(np.clip(g.z + v.dz, 0.0, scene.world.z_max)),
        theta=g.theta + v.theta,
        jaw_opening=g.jaw_opening,
        closed=g.closed,
    )
    return SceneState(bin_rect=scene.bin_rect, objects=scene.objects,
                      object_poses=scene.object_poses, gripper=gripper,
                      step_index=scene.step_index + 1, world=scene.world,
                      rng_state=rng.bit_generator.state)


def close_gripper(scene: SceneState) -> SceneState:
    """Final descend-and-close motion that precedes the oracle call."""
    g = scene.gripper
    gripper = replace(g, z=0.0, closed=True)
    return SceneState(bin_rect=scene.bin_rect, objects=scene.objects,
                      object_poses=scene.object_poses, gripper=gripper,
                      step_index=scene.step_index, world=scene.world,
                      rng_state=scene.rng_state)


def _cone_ok(angles: list[float], half_angle: float) -> bool:
    """Contact normals admit a force inside the friction cone.

    angles are signed deviations of candidate surface normals from the jaw
    closing direction; a vertex contact bracketing zero also qualifies.
    """
    if not angles:
        return False
    if min(abs(a) for a in angles) <= half_angle:
        return True
    return min(angles) < 0.0 < max(angles)


def _jaw_contacts(poly_verts: np.ndarray, half_len: float):
    """Clip polygon edges to the jaw band |x| <= half_len.

    Returns (y_max, top_angles, y_min, bottom_angles) where angles are the
    signed deviations of the contacted outward edge normals from vertical,
    or None when nothing lies in the band.
    """
    v = poly_verts
    n = len(v)
    y_max, y_min = -np.inf, np.inf
    top: list[tuple[float, float]] = []  # (y at extremum, angle)
    bot: list[tuple[float, float]] = []
    for i in range(n):
        p, q = v[i], v[(i + 1) % n]
        xs = sorted((p[0], q[0]))
        lo, hi = max(xs[0], -half_len), min(xs[1], half_len)
        if lo > hi:
            continue
        if q[0] != p[0]:
            t_lo = (lo - p[0]) / (q[0] - p[0])
            t_hi = (hi - p[0]) / (q[0] - p[0])
            ys = (p[1] + t_lo * (q[1] - p[1]), p[1] + t_hi * (q[1] - p[1]))
        else:
            ys = (p[1], q[1])
        e_ymax, e_ymin = max(ys), min(ys)
        d = q - p
        nrm = np.array([d[1], -d[0]])
        nrm = nrm / np.linalg.norm(nrm)
        # Signed deviation of the outward normal from +y (top) and -y (bottom).
        top_ang = float(np.arctan2(nrm[0], nrm[1]))
        bot_ang = float(np.arctan2(nrm[0], -nrm[1]))
        y_max = max(y_max, e_ymax)
        y_min = min(y_min, e_ymin)
        top.append((e_ymax, top_ang))
        bot.append((e_ymin, bot_ang))
    if not np.isfinite(y_max):
        return None
    tol = 1e-9
    top_angles = [a for y, a in top if y >= y_max - tol]
    bot_angles = [a for y, a in bot if y <= y_min + tol]
    return y_max, top_angles, y_min, bot_angles


def grasp_oracle(scene: SceneState, dyn: DynamicsParams) -> bool:
    """Antipodal pinch-grasp test for the closed gripper at z=0.

    Success iff some object (a) overlaps the open-jaw sweep region, (b) fits
    between the jaws at their closing separation plus the contact margin, and
    (c) presents contact surfaces whose outward normals lie inside the
    friction cone of both jaws; mass scaled by the dynamics must also stay
    under the payload limit.
    """
    g = scene.gripper
    if not g.closed or g.z != 0.0:
        raise ValueError("grasp_oracle requires the gripper closed at z=0")
    w = scene.world
    half_len = w.jaw_length / 2
    sweep = box(-half_len, -g.jaw_opening / 2, half_len, g.jaw_opening / 2)
    for oid, world_verts in _object_polygons(scene):
        obj = scene.objects[oid]
        if obj.mass * dyn.mass_scale > w.payload_max:
            continue
        local = geometry.world_to_frame(world_verts, g.x, g.y, g.theta)
        poly = Polygon(local)
        inter = poly.intersection(sweep)
        if inter.is_empty or inter.area <= 0:
            continue
        contacts = _jaw_contacts(local, half_len)
        if contacts is None:
            continue
        y_max, top_angles, y_min, bot_angles = contacts
        if (y_max - y_min) > g.jaw_opening + dyn.contact_margin:
            continue
        tan_eff = (np.tan(dyn.friction_cone_half_angle) * dyn.friction_scale
                   * obj.lateral_friction / _FRICTION_REF)
        half_angle = float(np.arctan(tan_eff))
        if _cone_ok(top_angles, half_angle) and _cone_ok(bot_angles, half_angle):
            return True
    return False


@dataclass
class Observation:
    """What a policy sees at one step: the image pair plus ground truth."""

    x0: np.ndarray  # float image, [0,1]
    xc: np.ndarray
    mask0: np.ndarray
    maskc: np.ndarray
    scene: SceneState  # scripted collection policies may peek at this


@dataclass
class EpisodeStep:
    image: np.ndarray  # uint8 HxWx3, current-timestep render
    mask: np.ndarray  # uint8 HxW
    command: MotionCommand
    gripper_pose: tuple[float, float, float, float]  # x, y, z, theta
    # Training target: displacement from this step's pose to the episode's
    # final pre-close pose, so every sample asks "does executing v and then
    # closing succeed?" regardless of which step it came from.  Its rotation
    # channels encode the ABSOLUTE final jaw orientation (mod pi) rather than
    # the relative turn: the current orientation is visible in the image, so
    # both encodings carry the same information, but the absolute one lets
    # the predictor judge jaw/object alignment without reading the gripper's
    # heading out of the pixels.
    train_command: MotionCommand | None = None


@dataclass
class Episode:
    x0: np.ndarray  # uint8 HxWx3, scene render before the arm appears
    mask0: np.ndarray
    steps: list[EpisodeStep]
    outcome: bool
    seed: int
    regime: RandomizationRegime
    domain: str  # "sim" | "pseudoreal"
    appearance: AppearanceParams
    dynamics: DynamicsParams

    @property
    def T(self) -> int:
        return len(self.steps)

    def to_bytes(self) -> bytes:
        meta = {
            "outcome": bool(self.outcome),
            "seed": int(self.seed),
            "regime": self.regime.value,
            "domain": self.domain,
            "appearance": _appearance_to_json(self.appearance),
            "dynamics": asdict(self.dynamics),
            "commands": [c.command.as_array().tolist() for c in self.steps],
            "train_commands": [c.train_command.as_array().tolist()
                               for c in self.steps],
            "gripper_poses": [list(c.gripper_pose) for c in self.steps],
        }
        buf = io.BytesIO()
        arrays = {"x0": self.x0, "mask0": self.mask0}
        for t, s in enumerate(self.steps):
            arrays[f"img{t}"] = s.image
            arrays[f"mask{t}"] = s.mask
        arrays["meta"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        np.savez(buf, **arrays)
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Episode":
        with np.load(io.BytesIO(data)) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            steps = []
            for t, (cmd, tcmd, pose) in enumerate(zip(
                    meta["commands"], meta["train_commands"],
                    meta["gripper_poses"])):
                steps.append(EpisodeStep(
                    image=z[f"img{t}"], mask=z[f"mask{t}"],
                    command=MotionCommand(*cmd),
                    gripper_pose=tuple(pose),
                    train_command=MotionCommand(*tcmd)))
            return cls(x0=z["x0"], mask0=z["mask0"], steps=steps,
                       outcome=meta["outcome"], seed=meta["seed"],
                       regime=RandomizationRegime(meta["regime"]),
                       domain=meta["domain"],
                       appearance=_appearance_from_json(meta["appearance"]),
                       dynamics=DynamicsParams(**meta["dynamics"]))


def _appearance_to_json(app: AppearanceParams) -> dict:
    d = asdict(app)
    d["object_texture_seeds"] = {str(k): v for k, v in app.object_texture_seeds.items()}
    return d


def _appearance_from_json(d: dict) -> AppearanceParams:
    return AppearanceParams(
        tray_texture_seed=d["tray_texture_seed"],
        object_texture_seeds={int(k): v for k, v in d["object_texture_seeds"].items()},
        arm_color=tuple(d["arm_color"]),
        light_direction=tuple(d["light_direction"]),
        light_brightness=d["light_brightness"],
        background_index=d["background_index"],
        camera_offset=tuple(d["camera_offset"]),
        camera_scale=d["camera_scale"],
    )


def quantize_image(img: np.ndarray) -> np.ndarray:
    """Snap a float [0,1] image to the 8-bit grid used on disk."""
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def run_episode(objects: list[ObjectModel], world_cfg: WorldConfig, policy,
                T: int, regime: RandomizationRegime, domain_tag: str, seed: int,
                style=None, bin_half: str | None = None) -> Episode:
    """Roll out one grasp attempt and label every step with the final outcome.

    Motor noise is injected for sim-domain collection only.  The policy is a
    callable Observation -> MotionCommand; it may carry its own PRNG state
    but must be deterministic given (seed, observations) for episode-level
    determinism to hold.
    """
    from . import render  # local import; render depends on this module's types

    if T < 1:
        raise ValueError("T must be >= 1")
    rng = make_rng(seed, 0xE915)
    app, dyn = sample_randomization(regime, rng, [o.id for o in objects])
    scene = reset_scene(objects, world_cfg, rng, bin_half=bin_half)
    if style is None:
        style = render.DomainStyle.for_domain(domain_tag)
    noise = domain_tag == "sim"

    x0_f = render.render_scene(scene, app, style, with_gripper=False)
    mask0 = render.render_mask(scene, app, with_gripper=False)
    x0_q = quantize_image(x0_f)
    x0_for_policy = x0_q.astype(np.float64) / 255.0

    steps: list[EpisodeStep] = []
    for _ in range(T):
        xc_f = render.render_scene(scene, app, style, with_gripper=True)
        maskc = render.render_mask(scene, app, with_gripper=True)
        xc_q = quantize_image(xc_f)
        obs = Observation(x0=x0_for_policy, xc=xc_q.astype(np.float64) / 255.0,
                          mask0=mask0, maskc=maskc, scene=scene)
        v = policy(obs)
        try:
            v.validate(world_cfg.max_step)
        except ValueError as exc:
            raise EpisodeError(f"policy emitted invalid command at step "
                               f"{scene.step_index}: {exc}") from exc
        g = scene.gripper
        steps.append(EpisodeStep(image=xc_q, mask=maskc, command=v,
                                 gripper_pose=(g.x, g.y, g.z, g.theta)))
        scene = apply_command(scene, v, dyn, noise_enabled=noise, rng=rng)
    final = close_gripper(scene)
    outcome = grasp_oracle(final, dyn)
    fg = final.gripper
    ftheta = fg.theta % np.pi  # jaw axis is symmetric mod pi
    for s in steps:
        x, y, z, theta = s.gripper_pose
        s.train_command = MotionCommand(
            dx=fg.x - x, dy=fg.y - y, dz=fg.z - z,
            sin_theta=float(np.sin(ftheta)), cos_theta=float(np.cos(ftheta)))
    return Episode(x0=x0_q, mask0=mask0, steps=steps, outcome=outcome, seed=seed,
                   regime=regime, domain=domain_tag, appearance=app, dynamics=dyn)
