"""Rasterize scenes into images and segmentation masks in two domain styles.

The "sim" style is flat fills over one of six fixed backdrop textures.  The
"pseudoreal" style runs the same geometry through a post-process pipeline
(procedural texture field, palette remap, vignette, blur, seeded sensor
noise) and stands in for the physical camera domain; by construction the
semantic pixel layout of the two styles is identical, so target-domain
labels exist for every pseudo-real image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter, zoom

from . import geometry
from .config import RenderConfig, StyleConstants
from .rng import derive_seed, make_rng
from .simworld import AppearanceParams, SceneState

MASK_BACKGROUND = 0
MASK_TRAY = 1
MASK_ARM = 2
MASK_OBJECTS = 3

_JAW_THICKNESS = 16.0  # mm
_CROSSBAR_THICKNESS = 20.0  # mm
_TRAY_BASE = np.array([0.58, 0.54, 0.48])
_BACKDROP_COLORS = [
    (0.35, 0.30, 0.28), (0.20, 0.32, 0.22), (0.30, 0.22, 0.35),
    (0.42, 0.38, 0.20), (0.18, 0.25, 0.38), (0.33, 0.33, 0.33),
]


@dataclass(frozen=True)
class DomainStyle:
    kind: str  # "sim" | "pseudoreal"
    constants: StyleConstants | None = None

    @classmethod
    def sim(cls) -> "DomainStyle":
        return cls(kind="sim")

    @classmethod
    def pseudoreal(cls, constants: StyleConstants = StyleConstants()) -> "DomainStyle":
        return cls(kind="pseudoreal", constants=constants)

    @classmethod
    def for_domain(cls, domain_tag: str) -> "DomainStyle":
        if domain_tag == "sim":
            return cls.sim()
        if domain_tag == "pseudoreal":
            return cls.pseudoreal()
        raise ValueError(f"unknown domain tag {domain_tag!r}")


def value_noise(h: int, w: int, seed: int, octaves: int = 3) -> np.ndarray:
    """Multi-octave value noise in [0, 1]."""
    rng = make_rng(seed, 0x7E47)
    out = np.zeros((h, w))
    amp, total = 1.0, 0.0
    for o in range(octaves):
        cells = 4 * (2 ** o)
        grid = rng.uniform(0, 1, size=(cells, cells))
        layer = zoom(grid, (h / cells, w / cells), order=1, mode="grid-wrap")[:h, :w]
        out += amp * layer
        total += amp
        amp *= 0.5
    return out / total


_BACKDROP_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def backdrop_texture(index: int, h: int, w: int) -> np.ndarray:
    """One of the six fixed backdrop textures, generated once per resolution."""
    key = (index, h, w)
    if key not in _BACKDROP_CACHE:
        base = np.array(_BACKDROP_COLORS[index])
        field = value_noise(h, w, seed=9000 + index, octaves=3)
        img = base[None, None, :] * (0.8 + 0.4 * field[:, :, None])
        _BACKDROP_CACHE[key] = np.clip(img, 0.0, 1.0)
    return _BACKDROP_CACHE[key]


def _pixel_centers(scene: SceneState, app: AppearanceParams,
                   cfg: RenderConfig) -> np.ndarray:
    """World coordinates (mm) of every pixel center, shape (H*W, 2)."""
    x0, y0, x1, y1 = scene.bin_rect
    m = cfg.view_margin
    cx, cy = (x0 + x1) / 2 + app.camera_offset[0], (y0 + y1) / 2 + app.camera_offset[1]
    half_w = ((x1 - x0) / 2 + m) / app.camera_scale
    half_h = ((y1 - y0) / 2 + m) / app.camera_scale
    xs = cx - half_w + (np.arange(cfg.width) + 0.5) * (2 * half_w / cfg.width)
    ys = cy + half_h - (np.arange(cfg.height) + 0.5) * (2 * half_h / cfg.height)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _fill_polygon(target: np.ndarray, pts: np.ndarray, verts: np.ndarray,
                  value) -> None:
    """Paint `value` into target rows whose pixel centers fall in the polygon."""
    lo = verts.min(axis=0)
    hi = verts.max(axis=0)
    cand = np.nonzero((pts[:, 0] >= lo[0]) & (pts[:, 0] <= hi[0])
                      & (pts[:, 1] >= lo[1]) & (pts[:, 1] <= hi[1]))[0]
    if len(cand) == 0:
        return
    inside = geometry.points_in_polygon(pts[cand], verts)
    target[cand[inside]] = value


def _gripper_polygons(scene: SceneState) -> list[np.ndarray]:
    """Two jaws plus a crossbar, in world coordinates.

    The drawn size grows slightly with z as a cheap perspective cue (the
    camera sits above the workspace).
    """
    g = scene.gripper
    s = 1.0 + 0.25 * g.z / scene.world.z_max
    hl = scene.world.jaw_length / 2 * s
    off = g.jaw_opening / 2 * s
    jt = _JAW_THICKNESS / 2 * s
    ct = _CROSSBAR_THICKNESS / 2 * s
    jaw_top = np.array([[-hl, off - jt], [hl, off - jt], [hl, off + jt], [-hl, off + jt]])
    jaw_bot = jaw_top - np.array([0.0, 2 * off])
    bar = np.array([[hl - ct, -off], [hl + ct, -off], [hl + ct, off], [hl - ct, off]])
    return [geometry.transform(p, g.x, g.y, g.theta) for p in (jaw_top, jaw_bot, bar)]


def _seed_color(seed: int) -> np.ndarray:
    rng = make_rng(seed, 0xC0104)
    return rng.uniform(0.08, 0.92, size=3)


def _scene_noise_seed(scene: SceneState, app: AppearanceParams) -> int:
    """Stable per-image seed for pseudo-real sensor noise."""
    g = scene.gripper
    bits = np.array([g.x, g.y, g.z, g.theta], dtype=np.float64).view(np.int64)
    pose_bits = np.asarray([p for _, x, y, t in scene.object_poses for p in (x, y, t)],
                           dtype=np.float64).view(np.int64)
    return derive_seed(app.tray_texture_seed, app.background_index, scene.step_index,
                       *(int(b) & 0xFFFFFFFFFFFFFFFF for b in bits),
                       *(int(b) & 0xFFFFFFFFFFFFFFFF for b in pose_bits))


def _render_base(scene: SceneState, app: AppearanceParams, cfg: RenderConfig,
                 with_gripper: bool) -> np.ndarray:
    """Flat-fill render shared by both styles (sim output, pseudoreal input)."""
    h, w = cfg.height, cfg.width
    pts = _pixel_centers(scene, app, cfg)
    img = backdrop_texture(app.background_index, h, w).reshape(-1, 3).copy()

    x0, y0, x1, y1 = scene.bin_rect
    tray_verts = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    if app.tray_texture_seed == 0:
        tray_color = _TRAY_BASE
    else:
        tray_color = _seed_color(app.tray_texture_seed)
    _fill_polygon(img, pts, tray_verts, tray_color)
    if app.tray_texture_seed != 0:
        # Randomized trays carry a coarse texture so "tray texture" varies.
        tex = value_noise(h, w, app.tray_texture_seed, octaves=2).reshape(-1, 1)
        inside = geometry.points_in_polygon(pts, tray_verts)
        img[inside] = np.clip(img[inside] * (0.75 + 0.5 * tex[inside]), 0, 1)

    for oid, x, y, th in scene.object_poses:
        obj = scene.objects[oid]
        seed = app.object_texture_seeds.get(oid, 0)
        color = np.array(obj.fill_color) if seed == 0 else _seed_color(seed)
        _fill_polygon(img, pts, geometry.transform(obj.vertices, x, y, th), color)

    if with_gripper:
        for poly in _gripper_polygons(scene):
            _fill_polygon(img, pts, poly, np.array(app.arm_color))

    img = img.reshape(h, w, 3)
    # Directional shading: both styles respond to the lighting parameters so
    # visual randomization of lighting is visible in sim-domain data too.
    dx, dy = app.light_direction
    jj, ii = np.meshgrid(np.linspace(-1, 1, w), np.linspace(1, -1, h))
    grad = (jj * dx + ii * dy) * 0.5
    shade = app.light_brightness * (1.0 + 0.15 * grad)
    return np.clip(img * shade[:, :, None], 0.0, 1.0)


def pseudoreal_stages(base: np.ndarray, noise_seed: int,
                      sc: StyleConstants) -> list[np.ndarray]:
    """All intermediate images of the pseudo-real post-process, in order."""
    h, w, _ = base.shape
    out = []
    tex = value_noise(h, w, derive_seed(noise_seed, 0x7E0), octaves=sc.texture_octaves)
    img = np.clip(base * (1.0 + sc.texture_strength * (2 * tex[:, :, None] - 1.0)), 0, 1)
    out.append(img)
    m = np.asarray(sc.palette_remap).reshape(3, 3)
    img = np.clip(img @ m.T, 0.0, 1.0)
    out.append(img)
    jj, ii = np.meshgrid(np.linspace(-1, 1, w), np.linspace(-1, 1, h))
    r2 = (jj ** 2 + ii ** 2) / 2.0
    img = np.clip(img * (1.0 - sc.vignette_strength * r2[:, :, None]), 0.0, 1.0)
    out.append(img)
    img = np.clip(gaussian_filter(img, sigma=(sc.blur_sigma, sc.blur_sigma, 0)), 0, 1)
    out.append(img)
    rng = make_rng(noise_seed, 0x5E25)
    img = np.clip(img + rng.normal(0.0, sc.sensor_noise_sigma, size=img.shape), 0, 1)
    out.append(img)
    return out


def render_scene(scene: SceneState, appearance: AppearanceParams, style: DomainStyle,
                 cfg: RenderConfig = RenderConfig(), with_gripper: bool = True) -> np.ndarray:
    """Deterministic render of a scene in the given domain style."""
    base = _render_base(scene, appearance, cfg, with_gripper)
    if style.kind == "sim":
        return base
    sc = style.constants or StyleConstants()
    return pseudoreal_stages(base, _scene_noise_seed(scene, appearance), sc)[-1]


def render_mask(scene: SceneState, appearance: AppearanceParams,
                cfg: RenderConfig = RenderConfig(), with_gripper: bool = True) -> np.ndarray:
    """Style-independent segmentation mask using the painter's order.

    Appearance enters only through the camera fields, which move the view
    exactly as they do for render_scene.
    """
    pts = _pixel_centers(scene, appearance, cfg)
    mask = np.full(pts.shape[0], MASK_BACKGROUND, dtype=np.uint8)
    x0, y0, x1, y1 = scene.bin_rect
    tray_verts = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    _fill_polygon(mask, pts, tray_verts, MASK_TRAY)
    for oid, x, y, th in scene.object_poses:
        _fill_polygon(mask, pts, geometry.transform(scene.objects[oid].vertices, x, y, th),
                      MASK_OBJECTS)
    if with_gripper:
        for poly in _gripper_polygons(scene):
            _fill_polygon(mask, pts, poly, MASK_ARM)
    return mask.reshape(cfg.height, cfg.width)


def random_crop_pair(img0: np.ndarray, imgc: np.ndarray, mask0: np.ndarray,
                     maskc: np.ndarray, crop: int, rng: np.random.Generator):
    """Crop all four arrays with ONE shared offset; returns arrays + offset."""
    h, w = img0.shape[:2]
    if crop > min(h, w):
        raise ValueError(f"crop {crop} exceeds image size {h}x{w}")
    i = int(rng.integers(h - crop + 1))
    j = int(rng.integers(w - crop + 1))
    return _apply_crop(img0, imgc, mask0, maskc, crop, i, j)


def center_crop_pair(img0: np.ndarray, imgc: np.ndarray, mask0: np.ndarray,
                     maskc: np.ndarray, crop: int):
    """Deterministic center crop used at evaluation time."""
    h, w = img0.shape[:2]
    if crop > min(h, w):
        raise ValueError(f"crop {crop} exceeds image size {h}x{w}")
    return _apply_crop(img0, imgc, mask0, maskc, crop, (h - crop) // 2, (w - crop) // 2)


def _apply_crop(img0, imgc, mask0, maskc, crop, i, j):
    sl = (slice(i, i + crop), slice(j, j + crop))
    out = [img0[sl], imgc[sl]]
    out.append(mask0[sl] if mask0 is not None else None)
    out.append(maskc[sl] if maskc is not None else None)
    return (*out, (i, j))
