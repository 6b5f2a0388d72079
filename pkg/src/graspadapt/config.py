"""Shared dataclass configs for the toy grasping world and renderers."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass(frozen=True)
class WorldConfig:
    bin_size: tuple[float, float] = (500.0, 500.0)  # mm, axis-aligned
    max_objects: int = 6
    jaw_opening: float = 50.0  # mm
    jaw_length: float = 40.0  # mm
    z_max: float = 200.0  # mm
    max_step: float = 120.0  # mm, per-axis bound on command components
    episode_steps: int = 4  # T
    payload_max: float = 600.0  # grams, heaviest liftable object
    home_jitter: float = 60.0  # mm, gripper home pose jitter
    placement_margin: float = 20.0  # mm, objects keep centroid this far from walls


@dataclass(frozen=True)
class CanonicalDynamics:
    """Dynamics constants used whenever dynamics are not randomized."""

    mass_scale: float = 1.0
    friction_scale: float = 1.0
    noise_sigma: float = 10.0  # mm, sigma of the horizontal motor noise
    contact_margin: float = 6.0  # mm
    friction_cone_half_angle: float = 0.5  # rad (~28.6 deg)


@dataclass(frozen=True)
class RandomizationRanges:
    """Sampling ranges for the Visual / Dynamics / All regimes."""

    mass_scale: tuple[float, float] = (0.6, 1.5)
    friction_scale: tuple[float, float] = (0.6, 1.4)
    cone_half_angle: tuple[float, float] = (0.3, 0.6)  # rad
    brightness: tuple[float, float] = (0.5, 1.5)
    camera_offset: float = 12.0  # mm, +/- per axis
    camera_scale: tuple[float, float] = (0.95, 1.05)


@dataclass(frozen=True)
class RenderConfig:
    height: int = 80
    width: int = 80
    crop: int = 64
    view_margin: float = 60.0  # mm of world visible beyond the bin walls


@dataclass(frozen=True)
class StyleConstants:
    """Fixed constants of the pseudo-real rendering style.

    Global per dataset; recorded in every dataset manifest.
    """

    texture_octaves: int = 3
    texture_strength: float = 0.25
    vignette_strength: float = 0.35
    sensor_noise_sigma: float = 0.02
    blur_sigma: float = 0.6  # pixels
    # Row-major 3x3 palette remap applied to RGB vectors.
    palette_remap: tuple[float, ...] = (
        0.55, 0.30, 0.15,
        0.10, 0.65, 0.25,
        0.25, 0.15, 0.60,
    )
    shading_strength: float = 0.30
