"""Policies: a scripted data-collection policy that mixes goal-directed and
random behaviour, and the CEM servoing policy used for evaluation."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import torch

from . import geometry
from .config import WorldConfig
from .nets import GraspNet
from .rng import make_rng
from .simworld import (MotionCommand, Observation, SceneState, close_gripper,
                       canonical_dynamics, encode_command, grasp_oracle)


def _principal_angle(vertices: np.ndarray) -> float:
    """Orientation of the longest axis from the vertex covariance."""
    c = vertices - vertices.mean(axis=0)
    cov = c.T @ c
    evals, evecs = np.linalg.eigh(cov)
    major = evecs[:, int(np.argmax(evals))]
    return float(np.arctan2(major[1], major[0]))


def find_grasp_pose(scene: SceneState, oid: int, rng: np.random.Generator,
                    tries: int = 60) -> tuple[float, float, float] | None:
    """Search for a gripper pose that the grasp oracle accepts on one object.

    Candidates are points inside the object's world polygon paired with
    orientations around the principal axis.  Returns None when the object
    affords no grasp.
    """
    return scored_grasp_pose(scene, oid, rng, tries)[0]


def scored_grasp_pose(scene: SceneState, oid: int, rng: np.random.Generator,
                      tries: int = 60):
    """Like find_grasp_pose but also returns the robustness score."""
    pose = next(p for p in scene.object_poses if p[0] == oid)
    _, x, y, th = pose
    verts = geometry.transform(scene.objects[oid].vertices, x, y, th)
    lo, hi = verts.min(axis=0), verts.max(axis=0)
    base_angle = _principal_angle(scene.objects[oid].vertices) + th
    dyn = canonical_dynamics()

    def accepts(px: float, py: float, angle: float) -> bool:
        test = replace(scene, gripper=replace(
            scene.gripper, x=px, y=py, theta=angle))
        return grasp_oracle(close_gripper(test), dyn)

    # Rank accepted poses by how well they survive motor-noise-sized
    # perturbations; the final command still lands with sigma-scale error.
    r1, r2 = dyn.noise_sigma * 1.2, dyn.noise_sigma * 2.0
    probes = [(np.cos(a) * r, np.sin(a) * r)
              for r in (r1, r2) for a in np.linspace(0, 2 * np.pi, 8, endpoint=False)]
    best, best_score = None, -1
    for k in range(tries):
        pt = rng.uniform(lo, hi)
        if not geometry.points_in_polygon(pt[None], verts)[0]:
            continue
        angle = base_angle if k < tries // 4 else float(rng.uniform(0, np.pi))
        px, py = float(pt[0]), float(pt[1])
        if not accepts(px, py, angle):
            continue
        score = sum(accepts(px + ox, py + oy, angle) for ox, oy in probes)
        if score > best_score:
            best, best_score = (px, py, angle), score
        if score == len(probes):
            break
    return best, best_score


def _descent(obs: Observation) -> float:
    """Scheduled descent so the gripper reaches the tray by the final step."""
    scene = obs.scene
    remaining = scene.world.episode_steps - scene.step_index
    return -scene.gripper.z / max(1, remaining)


class ScriptedPolicy:
    """Collection policy with four per-episode modes.

    "aim" servos to an oracle-verified grasp pose (mostly successes);
    "offset" servos the same way to a deliberately displaced target (mostly
    failures with the SAME command statistics, so command magnitude carries
    no label information); "twist" aims at the right position but a random
    jaw orientation (isolates orientation as the cause of failure, which is
    what teaches the predictor that the rotation channel matters); "random"
    explores uniformly.  The mode is drawn once per episode so labels cover
    both outcomes.
    """

    def __init__(self, seed: int, world_cfg: WorldConfig = WorldConfig(),
                 mode_probs: tuple[float, ...] = (0.40, 0.28, 0.14, 0.18),
                 aim_jitter: float = 8.0,
                 offset_range: tuple[float, float] = (25.0, 80.0)):
        self.world = world_cfg
        self.rng = make_rng(seed, 0x5C21)
        self.mode = ("aim", "offset", "twist", "random")[
            int(self.rng.choice(4, p=np.asarray(mode_probs) / sum(mode_probs)))]
        self.aim_jitter = aim_jitter
        self.offset_range = offset_range
        self.target: tuple[float, float, float] | None = None

    def _pick_target(self, obs: Observation) -> tuple[float, float, float]:
        scene = obs.scene
        order = self.rng.permutation(len(scene.object_poses))
        best, best_score = None, -1
        for idx in order:
            oid = scene.object_poses[int(idx)][0]
            pose, score = scored_grasp_pose(scene, oid, self.rng)
            if pose is not None and score > best_score:
                best, best_score = pose, score
            if best_score == 16:  # fully noise-robust; stop looking
                break
        if best is None:
            # no graspable pose anywhere: fall back to the first centroid
            oid, x, y, th = scene.object_poses[0]
            best = (x, y, _principal_angle(scene.objects[oid].vertices) + th)
        jitter = self.rng.normal(0.0, self.aim_jitter, size=2)
        tx = best[0] + float(jitter[0])
        ty = best[1] + float(jitter[1])
        tth = best[2]
        if self.mode == "offset":
            r = float(self.rng.uniform(*self.offset_range))
            a = float(self.rng.uniform(0, 2 * np.pi))
            tx, ty = tx + r * np.cos(a), ty + r * np.sin(a)
        elif self.mode == "twist":
            tth = float(self.rng.uniform(0, np.pi))
        return (tx, ty, tth)

    def __call__(self, obs: Observation) -> MotionCommand:
        w = self.world
        if self.mode == "random":
            return encode_command(
                dx=float(self.rng.uniform(-w.max_step, w.max_step)),
                dy=float(self.rng.uniform(-w.max_step, w.max_step)),
                dz=_descent(obs),
                theta=float(self.rng.uniform(-np.pi, np.pi)),
                max_step=w.max_step)
        if self.target is None:
            self.target = self._pick_target(obs)
        tx, ty, tth = self.target
        g = obs.scene.gripper
        dx = float(np.clip(tx - g.x, -w.max_step, w.max_step))
        dy = float(np.clip(ty - g.y, -w.max_step, w.max_step))
        dth = (tth - g.theta + np.pi / 2) % np.pi - np.pi / 2
        return encode_command(dx=dx, dy=dy, dz=_descent(obs), theta=float(dth),
                              max_step=w.max_step)


@dataclass(frozen=True)
class CEMConfig:
    samples: int = 128
    elite_frac: float = 0.05
    iterations: int = 4
    pos_std: float = 150.0  # mm, initial proposal spread covers the bin
    theta_std: float = 0.9  # rad
    std_floor: float = 1.0


class ServoPolicy:
    """Closed-loop CEM servoing on top of a trained grasp predictor.

    Each step samples motion candidates from a Gaussian over (dx, dy, theta),
    scores them with the network and refits to the elites.  Candidates are
    to-final displacements (matching the training-sample semantics), so they
    are scored with the full remaining descent and may exceed the per-step
    bound; the chosen mean is then clamped to the per-step bound for
    execution, with descent scheduled rather than optimized since the close
    always happens at the tray surface.  A flat objective leaves the prior
    mean untouched.
    """

    def __init__(self, net: GraspNet, bank: str, seed: int,
                 world_cfg: WorldConfig = WorldConfig(),
                 cem: CEMConfig = CEMConfig(), crop: int = 64):
        self.net = net
        self.bank = bank
        self.world = world_cfg
        self.cem = cem
        self.crop = crop
        self.rng = make_rng(seed, 0xCE3)

    def _crop(self, img: np.ndarray) -> torch.Tensor:
        h, w = img.shape[:2]
        i, j = (h - self.crop) // 2, (w - self.crop) // 2
        patch = img[i:i + self.crop, j:j + self.crop]
        return torch.from_numpy(patch).permute(2, 0, 1).float()

    def __call__(self, obs: Observation) -> MotionCommand:
        cem, w = self.cem, self.world
        x0, xc = self._crop(obs.x0), self._crop(obs.xc)
        dz = _descent(obs)
        dz_full = -obs.scene.gripper.z  # full descent, as in training samples
        reach = w.max_step * w.episode_steps
        # The rotation channel is the ABSOLUTE final jaw orientation, matching
        # the training-sample encoding; the prior mean is "keep the current
        # heading" and the result is converted back to a relative turn.
        theta_now = obs.scene.gripper.theta
        mean = np.array([0.0, 0.0, theta_now])
        std = np.array([cem.pos_std, cem.pos_std, cem.theta_std])
        n_elite = max(1, int(round(cem.elite_frac * cem.samples)))
        for _ in range(cem.iterations):
            cand = self.rng.normal(mean, std, size=(cem.samples, 3))
            cand[:, :2] = np.clip(cand[:, :2], -reach, reach)
            vs = np.stack([cand[:, 0], cand[:, 1],
                           np.full(cem.samples, dz_full),
                           np.sin(cand[:, 2]), np.cos(cand[:, 2])], axis=1)
            scores = self.net.score_commands(
                x0, xc, torch.from_numpy(vs.astype(np.float32)), self.bank).numpy()
            if float(scores.max() - scores.min()) < 1e-9:
                break  # flat objective: keep the prior mean
            elite = cand[np.argsort(-scores, kind="stable")[:n_elite]]
            mean = elite.mean(axis=0)
            std = np.maximum(elite.std(axis=0), cem.std_floor)
        dth = (mean[2] - theta_now + np.pi / 2) % np.pi - np.pi / 2
        return encode_command(
            dx=float(np.clip(mean[0], -w.max_step, w.max_step)),
            dy=float(np.clip(mean[1], -w.max_step, w.max_step)),
            dz=dz, theta=float(dth), max_step=w.max_step)
