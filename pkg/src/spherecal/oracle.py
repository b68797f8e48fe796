"""Synthetic ground-truth generator.

Builds a calibration room with targets on its boundary surfaces, places an
inside-out camera rig, and simulates exposures through known projection
models. Every quantity is retained exactly, so downstream estimates can be
scored against truth.

Projection mappings of incidence angle to radial distance:

    pinhole        r = c tan(a)
    equidistant    r = c a
    equisolid      r = 2c sin(a/2)
    stereographic  r = 2c tan(a/2)
    orthographic   r = c sin(a)      (undefined at or beyond 90 degrees)

Optional layers on top of the base mapping: a sinusoidal radial ripple
(smooth, non-polynomial) and a Brown overlay applied so that subtracting the
Brown correction with the true coefficients recovers the ideal position
exactly. An optional survey-noise knob perturbs the copy of the target
coordinates handed to assessment, emulating an imperfect reference survey;
the coordinates used to simulate imaging stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .distortion import BrownParams, brown_correction
from .errors import ConfigError, DegenerateGeometryError
from .geometry import (
    CameraPose,
    ImageObservation,
    InteriorOrientation,
    ObjectPoint,
    ObservationSet,
    incidence_angle,
    quat_from_matrix,
    to_camera_frame,
)

PROJECTION_KINDS = ("pinhole", "equidistant", "equisolid", "stereographic", "orthographic")

# hard physical limits on incidence angle, radians
_HARD_LIMIT = {
    "pinhole": math.pi / 2 - 1e-6,
    "equidistant": math.pi,
    "equisolid": math.pi,
    "stereographic": math.pi - 1e-6,
    "orthographic": math.pi / 2 - 1e-9,
}


@dataclass(frozen=True)
class ProjectionModel:
    """Forward camera model with known truth parameters."""

    kind: str
    c: float
    fov_deg: float
    xp: float = 0.0
    yp: float = 0.0
    brown: BrownParams | None = None
    ripple_amp: float = 0.0
    ripple_wavelength: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in PROJECTION_KINDS:
            raise ConfigError(f"unknown projection kind {self.kind!r}")
        if self.c <= 0:
            raise ConfigError("principal distance must be positive")
        if self.fov_deg <= 0:
            raise ConfigError("field of view must be positive")
        if self.ripple_amp < 0 or self.ripple_wavelength <= 0:
            raise ConfigError("ripple amplitude must be >= 0 with positive wavelength")
        if self.ripple_amp > 0:
            slope = self.ripple_amp * 2 * math.pi / self.ripple_wavelength
            if slope >= 0.999:
                raise ConfigError("ripple too strong to stay invertible")

    @property
    def alpha_limit(self) -> float:
        """Largest visible incidence angle (radians)."""
        return min(math.radians(self.fov_deg) / 2.0, _HARD_LIMIT[self.kind])


def _mapping_forward(kind: str, c: float, alpha):
    alpha = np.asarray(alpha, dtype=float)
    if kind == "pinhole":
        return c * np.tan(alpha)
    if kind == "equidistant":
        return c * alpha
    if kind == "equisolid":
        return 2 * c * np.sin(alpha / 2)
    if kind == "stereographic":
        return 2 * c * np.tan(alpha / 2)
    return c * np.sin(alpha)


def _mapping_inverse(kind: str, c: float, r):
    r = np.asarray(r, dtype=float)
    if kind == "pinhole":
        return np.arctan(r / c)
    if kind == "equidistant":
        return r / c
    if kind == "equisolid":
        return 2 * np.arcsin(np.clip(r / (2 * c), -1.0, 1.0))
    if kind == "stereographic":
        return 2 * np.arctan(r / (2 * c))
    return np.arcsin(np.clip(r / c, -1.0, 1.0))


def _ripple_forward(model: ProjectionModel, r):
    if model.ripple_amp == 0.0:
        return r
    return r + model.ripple_amp * np.sin(2 * math.pi * r / model.ripple_wavelength)


def _ripple_inverse(model: ProjectionModel, r_warp):
    """Newton inversion of the monotone ripple warp."""
    if model.ripple_amp == 0.0:
        return r_warp
    r = np.array(r_warp, dtype=float, copy=True)
    two_pi = 2 * math.pi / model.ripple_wavelength
    for _ in range(60):
        f = r + model.ripple_amp * np.sin(two_pi * r) - r_warp
        fp = 1.0 + model.ripple_amp * two_pi * np.cos(two_pi * r)
        step = f / fp
        r -= step
        if np.max(np.abs(step)) < 1e-15:
            break
    return r


def _brown_overlay_forward(model: ProjectionModel, x_t, y_t):
    """Raw coordinates whose Brown-corrected reduction equals (x_t, y_t).

    Solves x_raw = xp + x_t + dx(x_raw) by fixed-point iteration, so the
    correction with the true coefficients inverts the overlay exactly.
    """
    if model.brown is None:
        return model.xp + x_t, model.yp + y_t
    iop = InteriorOrientation(c=model.c, xp=model.xp, yp=model.yp)
    x = model.xp + np.asarray(x_t, dtype=float)
    y = model.yp + np.asarray(y_t, dtype=float)
    for _ in range(200):
        dx, dy = brown_correction(x, y, iop, model.brown)
        x_new = model.xp + x_t + dx
        y_new = model.yp + y_t + dy
        shift = max(np.max(np.abs(x_new - x)), np.max(np.abs(y_new - y)))
        x, y = x_new, y_new
        if shift < 1e-15:
            break
    return x, y


def _brown_overlay_inverse(model: ProjectionModel, x_raw, y_raw):
    if model.brown is None:
        return x_raw - model.xp, y_raw - model.yp
    iop = InteriorOrientation(c=model.c, xp=model.xp, yp=model.yp)
    dx, dy = brown_correction(x_raw, y_raw, iop, model.brown)
    return x_raw - model.xp - dx, y_raw - model.yp - dy


def project_rays(v: np.ndarray, model: ProjectionModel):
    """Project camera-frame rays (n, 3) through the full forward chain.

    Returns (xy_raw (n, 2), visible (n,), alpha (n,)). Non-visible rows hold
    NaN coordinates.
    """
    v = np.atleast_2d(np.asarray(v, dtype=float))
    norms = np.linalg.norm(v, axis=1)
    if np.any(norms == 0.0):
        raise DegenerateGeometryError("object point coincides with projection centre")
    rho = np.hypot(v[:, 0], v[:, 1])
    alpha = np.arctan2(rho, v[:, 2])
    visible = alpha <= model.alpha_limit
    phi = np.arctan2(v[:, 1], v[:, 0])
    r = _mapping_forward(model.kind, model.c, np.where(visible, alpha, 0.0))
    r = _ripple_forward(model, r)
    x_t = np.where(rho > 0, r * np.cos(phi), 0.0)
    y_t = np.where(rho > 0, r * np.sin(phi), 0.0)
    x_raw, y_raw = _brown_overlay_forward(model, x_t, y_t)
    xy = np.column_stack([x_raw, y_raw])
    xy[~visible] = np.nan
    return xy, visible, alpha


def project(point, pose: CameraPose, model: ProjectionModel):
    """Ideal raw image coordinates of one world point, or None if not visible."""
    coords = point.coords if isinstance(point, ObjectPoint) else np.asarray(point, dtype=float)
    v = to_camera_frame(coords, pose)
    xy, visible, _ = project_rays(v[None, :], model)
    if not visible[0]:
        return None
    return float(xy[0, 0]), float(xy[0, 1])


def back_project(x_raw, y_raw, model: ProjectionModel):
    """Exact inverse of the forward chain: (alpha, phi) from raw coordinates."""
    x_t, y_t = _brown_overlay_inverse(model, np.asarray(x_raw, dtype=float),
                                      np.asarray(y_raw, dtype=float))
    r_warp = np.hypot(x_t, y_t)
    r = _ripple_inverse(model, r_warp)
    alpha = _mapping_inverse(model.kind, model.c, r)
    phi = np.arctan2(y_t, x_t)
    return alpha, phi


def exact_sphere_correction(x_raw, y_raw, model: ProjectionModel):
    """Correction (dx, dy) moving raw coordinates onto the sphere of radius c.

    Subtracting (dx, dy) and (xp, yp) from the raw coordinates lands exactly
    on the spherical image of the generating ray, so the collinearity
    residual vanishes. Also returns the z-branch sign (+1 in front, -1
    behind the projection centre).
    """
    alpha, phi = back_project(x_raw, y_raw, model)
    r_s = model.c * np.sin(alpha)
    x_s = r_s * np.cos(phi)
    y_s = r_s * np.sin(phi)
    sign = np.where(alpha <= math.pi / 2, 1.0, -1.0)
    dx = np.asarray(x_raw, dtype=float) - model.xp - x_s
    dy = np.asarray(y_raw, dtype=float) - model.yp - y_s
    return dx, dy, sign


# -- scene ---------------------------------------------------------------------

@dataclass(frozen=True)
class SceneSpec:
    """Room with targets on its boundary surfaces. Dimensions in metres."""

    room: tuple[float, float, float] = (6.0, 5.0, 3.0)
    ceiling_targets: int = 48
    floor_targets: int = 48
    wall_targets: int = 95
    size_jitter: float = 0.25
    margin: float = 0.15
    seed: int = 101

    def __post_init__(self) -> None:
        if min(self.room) <= 0:
            raise ConfigError("room dimensions must be positive")
        if min(self.ceiling_targets, self.floor_targets, self.wall_targets) < 0:
            raise ConfigError("target counts must be non-negative")


def generate_scene(spec: SceneSpec) -> list[ObjectPoint]:
    """Targets on ceiling, floor, and the four walls, uniform per surface."""
    lx, ly, lz = spec.room
    m = spec.margin
    rng = np.random.default_rng(spec.seed)
    pts: list[np.ndarray] = []

    def uniform2(n, a_lo, a_hi, b_lo, b_hi):
        return rng.uniform(a_lo, a_hi, n), rng.uniform(b_lo, b_hi, n)

    cx, cy = uniform2(spec.ceiling_targets, m, lx - m, m, ly - m)
    pts.extend(np.column_stack([cx, cy, np.full(spec.ceiling_targets, lz)]))
    fx, fy = uniform2(spec.floor_targets, m, lx - m, m, ly - m)
    pts.extend(np.column_stack([fx, fy, np.zeros(spec.floor_targets)]))

    per_wall = [spec.wall_targets // 4] * 4
    for i in range(spec.wall_targets % 4):
        per_wall[i] += 1
    # walls: y=0, y=ly, x=0, x=lx
    wx, wz = uniform2(per_wall[0], m, lx - m, m, lz - m)
    pts.extend(np.column_stack([wx, np.zeros(per_wall[0]), wz]))
    wx, wz = uniform2(per_wall[1], m, lx - m, m, lz - m)
    pts.extend(np.column_stack([wx, np.full(per_wall[1], ly), wz]))
    wy, wz = uniform2(per_wall[2], m, ly - m, m, lz - m)
    pts.extend(np.column_stack([np.zeros(per_wall[2]), wy, wz]))
    wy, wz = uniform2(per_wall[3], m, ly - m, m, lz - m)
    pts.extend(np.column_stack([np.full(per_wall[3], lx), wy, wz]))

    # target sizes are cosmetic (no rendering); drawn to keep the stream
    # layout stable if they are ever used
    rng.uniform(1.0 - spec.size_jitter, 1.0 + spec.size_jitter, len(pts))

    return [ObjectPoint(id=i + 1, coords=p) for i, p in enumerate(pts)]


# -- rig -------------------------------------------------------------------------

@dataclass(frozen=True)
class RigSpec:
    """Inside-out exposure stations on a ring inside the room."""

    n_exposures: int = 44
    ring_radius: float = 1.2
    height_levels: tuple[float, ...] = (1.1, 1.5, 1.9)
    elevation_levels_deg: tuple[float, ...] = (-35.0, 0.0, 35.0)
    include_portrait: bool = True
    look_inward: bool = False
    min_targets: int = 12
    max_retries: int = 25
    seed: int = 202

    def __post_init__(self) -> None:
        if self.n_exposures < 1:
            raise ConfigError("need at least one exposure")
        if self.ring_radius <= 0:
            raise ConfigError("ring radius must be positive")
        if self.min_targets < 0:
            raise ConfigError("minimum target count must be non-negative")


def _look_at_pose(position, direction, roll_rad):
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(d, up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x_cam = np.cross(up, d)
    x_cam /= np.linalg.norm(x_cam)
    y_cam = np.cross(d, x_cam)
    r_wc = np.column_stack([x_cam, y_cam, d])  # camera axes in world coords
    cr, sr = math.cos(roll_rad), math.sin(roll_rad)
    roll = np.array([[cr, -sr, 0.0], [sr, cr, 0.0], [0.0, 0.0, 1.0]])
    return CameraPose(q=quat_from_matrix(roll @ r_wc.T), t=np.asarray(position, dtype=float))


def _station_layout(rig: RigSpec, room):
    lx, ly, lz = room
    centre = np.array([lx / 2, ly / 2, 0.0])
    out = []
    for i in range(rig.n_exposures):
        theta = 2 * math.pi * i / rig.n_exposures
        h = rig.height_levels[i % len(rig.height_levels)]
        pos = centre + np.array([
            rig.ring_radius * math.cos(theta),
            rig.ring_radius * math.sin(theta),
            h,
        ])
        elev = math.radians(rig.elevation_levels_deg[(i // len(rig.height_levels)) % len(rig.elevation_levels_deg)])
        roll = math.pi / 2 if (rig.include_portrait and i % 2 == 1) else 0.0
        # narrow lenses shoot across the room from near the walls;
        # wide lenses shoot outward from the middle
        aim = theta + math.pi if rig.look_inward else theta
        out.append((pos, aim, elev, roll))
    return out


@dataclass(frozen=True)
class TruthRecord:
    """Exact generating state for an observation set."""

    poses: tuple[CameraPose, ...]
    points: tuple[ObjectPoint, ...]
    survey_points: tuple[ObjectPoint, ...]
    model: ProjectionModel
    sigma: float
    ideal_xy: np.ndarray = field(repr=False)
    outlier_flags: np.ndarray = field(repr=False)
    alphas: np.ndarray = field(repr=False)
    signs: np.ndarray = field(repr=False)


def observe(scene: list[ObjectPoint], rig: RigSpec, model: ProjectionModel,
            sigma: float = 0.0, outlier_rate: float = 0.0,
            outlier_magnitude: float = 0.0, seed: int = 303,
            survey_sigma: float = 0.0005) -> tuple[ObservationSet, TruthRecord]:
    """Simulate all exposures; returns observations plus the exact truth.

    Noise is i.i.d. Gaussian per image coordinate. A flagged `outlier_rate`
    fraction is displaced by `outlier_magnitude` in a uniform direction.
    Exposures seeing fewer than `rig.min_targets` targets are re-aimed up to
    `rig.max_retries` times before the whole simulation fails.
    """
    if sigma < 0:
        raise ConfigError("noise level must be non-negative")
    if not 0.0 <= outlier_rate < 1.0:
        raise ConfigError("outlier rate must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    coords = np.array([p.coords for p in scene])
    ids = np.array([p.id for p in scene])
    room_diag = coords.max(axis=0) - coords.min(axis=0)

    poses: list[CameraPose] = []
    rows: list[ImageObservation] = []
    ideal: list[np.ndarray] = []
    alphas: list[np.ndarray] = []
    signs: list[np.ndarray] = []
    obs_sigma = sigma if sigma > 0 else 1.0

    for exp_idx, (pos, theta, elev0, roll) in enumerate(_station_layout(rig, room_diag)):
        ok = False
        for attempt in range(rig.max_retries + 1):
            # re-aims explore progressively wider around the schedule
            widen = 1.0 + 0.5 * attempt
            az = theta + rng.uniform(-0.35, 0.35) * widen
            elev = float(np.clip(elev0 + rng.uniform(-0.2, 0.2) * widen, -1.3, 1.3))
            direction = np.array([
                math.cos(elev) * math.cos(az),
                math.cos(elev) * math.sin(az),
                math.sin(elev),
            ])
            pose = _look_at_pose(pos, direction, roll)
            v = to_camera_frame(coords, pose)
            xy, visible, alpha = project_rays(v, model)
            if visible.sum() >= rig.min_targets:
                ok = True
                break
        if not ok:
            raise ConfigError(
                f"exposure {exp_idx} sees only {int(visible.sum())} targets "
                f"after {rig.max_retries} re-aims (minimum {rig.min_targets})"
            )
        poses.append(pose)
        vis_idx = np.flatnonzero(visible)
        for j in vis_idx:
            rows.append(ImageObservation(
                exposure_id=exp_idx, target_id=int(ids[j]),
                x=float(xy[j, 0]), y=float(xy[j, 1]), sigma=obs_sigma,
            ))
        ideal.append(xy[vis_idx])
        alphas.append(alpha[vis_idx])
        signs.append(np.where(alpha[vis_idx] <= math.pi / 2, 1.0, -1.0))

    ideal_xy = np.vstack(ideal)
    alpha_all = np.concatenate(alphas)
    sign_all = np.concatenate(signs)
    n = len(rows)

    noisy = ideal_xy + rng.normal(0.0, sigma, ideal_xy.shape) if sigma > 0 else ideal_xy.copy()
    flags = np.zeros(n, dtype=bool)
    if outlier_rate > 0:
        flags = rng.random(n) < outlier_rate
        dirs = rng.uniform(0.0, 2 * math.pi, int(flags.sum()))
        noisy[flags, 0] += outlier_magnitude * np.cos(dirs)
        noisy[flags, 1] += outlier_magnitude * np.sin(dirs)

    rows = [
        ImageObservation(exposure_id=o.exposure_id, target_id=o.target_id,
                         x=float(noisy[i, 0]), y=float(noisy[i, 1]), sigma=o.sigma)
        for i, o in enumerate(rows)
    ]
    obs = ObservationSet.from_observations(rows)

    if survey_sigma > 0:
        survey = tuple(
            ObjectPoint(id=p.id, coords=p.coords + rng.normal(0.0, survey_sigma, 3))
            for p in scene
        )
    else:
        survey = tuple(scene)

    record = TruthRecord(
        poses=tuple(poses), points=tuple(scene), survey_points=survey,
        model=model, sigma=sigma, ideal_xy=ideal_xy, outlier_flags=flags,
        alphas=alpha_all, signs=sign_all,
    )
    return obs, record
