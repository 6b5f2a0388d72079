"""Procedural generation of random graspable objects.

Objects are built by unioning k random rectangles (each new rectangle must
overlap the union so far, keeping the shape connected), optionally rounding
the outline with Chaikin corner cutting, then rescaling the whole polygon so
its diameter hits a sampled target extent.  Rectangles are deliberately
elongated so every object keeps at least one cross-section narrow enough for
a parallel-jaw gripper.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon, box

from . import geometry
from .rng import GENERATOR_SCHEME, derive_seed, make_rng

PROCGEN_VERSION = "procgen-v1"

# Pre-rescale rectangle proportions.  Widths stay well under the jaw opening
# after rescale so most generated objects admit an antipodal pinch grasp.
_BASE_LEN = 100.0
_LEN_RANGE = (55.0, 100.0)
_WIDTH_RANGE = (12.0, 20.0)

_MAX_PLACEMENT_TRIES = 60
_MAX_GRASPABLE_WIDTH = 42.0  # mm, after rescale
_MAX_OBJECT_TRIES = 25


class ProcGenError(RuntimeError):
    """Rejection sampling exhausted its retry budget (infeasible config)."""


@dataclass(frozen=True)
class ProcGenConfig:
    prism_count_range: tuple[int, int] = (1, 4)
    extent_range: tuple[float, float] = (120.0, 230.0)  # mm
    smoothing_level_range: tuple[int, int] = (0, 2)
    mass_range: tuple[float, float] = (10.0, 500.0)  # grams
    friction_range: tuple[float, float] = (0.4, 0.8)
    palette: list[tuple[float, float, float]] | str = "random"

    def validate(self) -> None:
        for name in ("prism_count_range", "extent_range", "smoothing_level_range",
                     "mass_range", "friction_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must satisfy min <= max, got {lo} > {hi}")
        if self.prism_count_range[0] < 1:
            raise ValueError("prism_count must be >= 1")
        if self.smoothing_level_range[0] < 0:
            raise ValueError("smoothing level must be >= 0")


@dataclass
class ObjectModel:
    vertices: np.ndarray  # (n, 2) mm, CCW, centered on the area centroid
    fill_color: tuple[float, float, float]
    mass: float  # grams
    lateral_friction: float
    id: int

    @property
    def diameter(self) -> float:
        return geometry.polygon_diameter(self.vertices)

    def to_json_obj(self) -> dict:
        return {
            "id": self.id,
            "vertices": np.asarray(self.vertices, dtype=np.float64).ravel().tolist(),
            "fill_color": list(self.fill_color),
            "mass": self.mass,
            "lateral_friction": self.lateral_friction,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ObjectModel":
        verts = np.asarray(obj["vertices"], dtype=np.float64).reshape(-1, 2)
        return cls(vertices=verts, fill_color=tuple(obj["fill_color"]),
                   mass=obj["mass"], lateral_friction=obj["lateral_friction"],
                   id=obj["id"])


def smooth_polygon(vertices: np.ndarray, level: int) -> np.ndarray:
    """Chaikin corner cutting on a closed polygon.

    Each round replaces every vertex with two points at 1/4 and 3/4 along its
    adjacent edges, doubling the vertex count.  level=0 is the identity.
    """
    if level < 0:
        raise ValueError("smoothing level must be >= 0")
    v = np.asarray(vertices, dtype=np.float64)
    if level == 0:
        return v
    area_in = abs(geometry.shoelace_area(v))
    for _ in range(level):
        nxt = np.roll(v, -1, axis=0)
        cut = np.empty((2 * len(v), 2))
        cut[0::2] = 0.75 * v + 0.25 * nxt
        cut[1::2] = 0.25 * v + 0.75 * nxt
        v = cut
    # Cutting reflex corners can grow the outline slightly; rescale about the
    # centroid so the output area never exceeds the input area.
    area_out = abs(geometry.shoelace_area(v))
    if area_out > area_in > 0:
        c = geometry.centroid(v)
        v = (v - c) * np.sqrt(area_in / area_out) + c
    return v


def _sample_rect(rng: np.random.Generator) -> tuple[Polygon, float]:
    length = rng.uniform(*_LEN_RANGE)
    width = rng.uniform(*_WIDTH_RANGE)
    return box(-length / 2, -width / 2, length / 2, width / 2), width


def _place_rect(rect: Polygon, union: Polygon, rng: np.random.Generator) -> Polygon | None:
    minx, miny, maxx, maxy = union.bounds
    pad = _BASE_LEN / 2
    for _ in range(_MAX_PLACEMENT_TRIES):
        theta = rng.uniform(0, np.pi)
        cx = rng.uniform(minx - pad, maxx + pad)
        cy = rng.uniform(miny - pad, maxy + pad)
        verts = geometry.transform(np.asarray(rect.exterior.coords)[:-1], cx, cy, theta)
        cand = Polygon(verts)
        # Require substantial area overlap so the union stays one connected
        # piece and never hangs together by a sliver.
        if cand.intersection(union).area > 100.0:
            return cand
    return None


def _compose_prisms(k: int, rng: np.random.Generator) -> tuple[Polygon, float] | None:
    base, min_width = _sample_rect(rng)
    theta = rng.uniform(0, np.pi)
    union = Polygon(geometry.rotate(np.asarray(base.exterior.coords)[:-1], theta))
    for _ in range(k - 1):
        rect, width = _sample_rect(rng)
        placed = _place_rect(rect, union, rng)
        if placed is None:
            return None
        min_width = min(min_width, width)
        union = union.union(placed)
        if union.geom_type != "Polygon":
            return None
    # Drop near-collinear union artifacts that would otherwise leave
    # degenerate slit edges in the outline.
    union = union.simplify(0.3)
    if union.geom_type != "Polygon" or union.interiors:
        return None
    return union, min_width


def generate_object(seed: int, cfg: ProcGenConfig, object_id: int = 0) -> ObjectModel:
    """Deterministically generate one object from (seed, cfg)."""
    cfg.validate()
    for attempt in range(_MAX_OBJECT_TRIES):
        rng = make_rng(seed, 0xB0D7, attempt)
        k = int(rng.integers(cfg.prism_count_range[0], cfg.prism_count_range[1] + 1))
        composed = _compose_prisms(k, rng)
        if composed is None:
            continue
        union, min_width = composed
        verts = geometry.ensure_ccw(np.asarray(union.exterior.coords)[:-1])
        level = int(rng.integers(cfg.smoothing_level_range[0],
                                 cfg.smoothing_level_range[1] + 1))
        verts = smooth_polygon(verts, level)
        extent = rng.uniform(*cfg.extent_range)
        scale = extent / geometry.polygon_diameter(verts)
        # Keep at least one bar of the composition pinch-graspable after
        # rescale (narrow enough to fit between default 50 mm jaws).
        if not 8.0 <= min_width * scale <= _MAX_GRASPABLE_WIDTH:
            continue
        verts = verts * scale
        verts = verts - geometry.centroid(verts)
        if not geometry.is_simple_polygon(verts) or abs(geometry.shoelace_area(verts)) <= 0:
            continue
        if isinstance(cfg.palette, str):
            color = tuple(rng.uniform(0.05, 0.95, size=3).tolist())
        else:
            color = tuple(cfg.palette[int(rng.integers(len(cfg.palette)))])
        mass = float(rng.uniform(*cfg.mass_range))
        friction = float(rng.uniform(*cfg.friction_range))
        return ObjectModel(vertices=verts, fill_color=color, mass=mass,
                           lateral_friction=friction, id=object_id)
    raise ProcGenError(f"object generation failed after {_MAX_OBJECT_TRIES} attempts "
                       f"(seed={seed}); config likely infeasible: {cfg}")


def sample_object_set(n: int, cfg: ProcGenConfig, seed: int,
                      id_base: int = 0) -> list[ObjectModel]:
    """Generate n objects with per-index split seeds.

    Object i is produced from derive_seed(seed, i) so it can be regenerated
    alone; ids are id_base + i.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    out = []
    for i in range(n):
        try:
            out.append(generate_object(derive_seed(seed, i), cfg, object_id=id_base + i))
        except ProcGenError as exc:
            raise ProcGenError(f"object index {i}: {exc}") from exc
    return out


def save_object_library(objects: list[ObjectModel], cfg: ProcGenConfig, seed: int,
                        path: str | Path) -> None:
    header = {
        "generator_version": PROCGEN_VERSION,
        "prng_scheme": GENERATOR_SCHEME,
        "seed": seed,
        "config": _cfg_to_json(cfg),
    }
    doc = {"header": header, "objects": [o.to_json_obj() for o in objects]}
    Path(path).write_text(json.dumps(doc))


def load_object_library(path: str | Path) -> tuple[list[ObjectModel], dict]:
    doc = json.loads(Path(path).read_text())
    return [ObjectModel.from_json_obj(o) for o in doc["objects"]], doc["header"]


def _cfg_to_json(cfg: ProcGenConfig) -> dict:
    d = asdict(cfg)
    if not isinstance(d["palette"], str):
        d["palette"] = [list(c) for c in d["palette"]]
    return d
