"""Rigid-body transform, incidence/refraction angles and the spherical
collinearity constraint.

Conventions used throughout the toolkit:

* Quaternions are [w, x, y, z], unit norm, acting on vectors by q v q*.
  A camera pose stores the world-to-camera quaternion, so
  ``V = R(q) (P - T)`` maps an object point into the camera frame.
* The camera looks along +z of its own frame. A target in front of the
  camera has Z_c > 0; wide-FOV rigs legitimately observe targets with
  Z_c <= 0.
* Image coordinates and the principal distance c share one unit (mm or
  px, declared per dataset); object space is metres.

The collinearity condition is expressed on a spherical image surface of
radius c: the corrected image point (x_true, y_true, z) with
x_true^2 + y_true^2 + z^2 = c^2 must be parallel to the camera-frame
ray V. Writing the condition as a cross-multiplied product keeps it
defined at 90 degrees incidence, where quotient forms divide by zero:

    g = sqrt(Xc^2 + Yc^2) * sgn(Zc) * sqrt(c^2 - r^2) - Zc * r

with r = sqrt(x_true^2 + y_true^2). g vanishes exactly when the
incidence angle equals the refraction angle, and scales linearly with
|V| (moving the target along its ray does not change the zero set).

All functions are pure and broadcast over leading axes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, SphereDomainError


# --------------------------------------------------------------------------
# quaternions
# --------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Return q scaled to unit norm. Raises on a zero quaternion."""
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(n < 1e-300):
        raise DegenerateGeometryError("cannot normalize zero quaternion")
    return q / n


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a * b, broadcasting over leading axes."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix R with R v == q v q*. q must be unit norm."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    R[..., 0, 1] = 2.0 * (x * y - w * z)
    R[..., 0, 2] = 2.0 * (x * z + w * y)
    R[..., 1, 0] = 2.0 * (x * y + w * z)
    R[..., 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    R[..., 1, 2] = 2.0 * (y * z - w * x)
    R[..., 2, 0] = 2.0 * (x * z - w * y)
    R[..., 2, 1] = 2.0 * (y * z + w * x)
    R[..., 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return R


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise DegenerateGeometryError("rotation axis has zero length")
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis / n])


def quat_from_rotvec(w: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) -> unit quaternion.

    Uses the series expansion of sin(t/2)/t near zero so the map is smooth
    through the identity.
    """
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w, axis=-1, keepdims=True)
    half = 0.5 * theta
    small = theta < 1e-8
    # sin(half)/theta with series fallback 0.5 - theta^2/48
    with np.errstate(invalid="ignore", divide="ignore"):
        k = np.where(small, 0.5 - theta * theta / 48.0, np.sin(half) / np.where(theta == 0, 1.0, theta))
    return np.concatenate([np.cos(half), k * w], axis=-1)


def quat_from_matrix(R: np.ndarray) -> np.ndarray:
    """Inverse of quat_to_matrix (Shepperd's method), canonical w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    t = np.trace(R)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(R)))
        if i == 0:
            s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
            )
        elif i == 1:
            s = np.sqrt(1.0 - R[0, 0] + R[1, 1] - R[2, 2]) * 2.0
            q = np.array(
                [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
            )
        else:
            s = np.sqrt(1.0 - R[0, 0] - R[1, 1] + R[2, 2]) * 2.0
            q = np.array(
                [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
            )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def rotate_vectors(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply q v q* to one or many 3-vectors without forming the matrix."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qv = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(qv, v)
    return v + w * t + np.cross(qv, t)


# --------------------------------------------------------------------------
# domain types
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class CameraPose:
    """World-to-camera orientation quaternion plus camera position (m)."""

    q: np.ndarray  # (4,) unit [w,x,y,z]
    t: np.ndarray  # (3,) camera position in world frame, metres

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(np.asarray(self.q, dtype=np.float64)))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)


@dataclass(frozen=True)
class ObjectPoint:
    id: int
    coords: np.ndarray  # (3,) metres

    def __post_init__(self):
        object.__setattr__(self, "coords", np.asarray(self.coords, dtype=np.float64).reshape(3))


@dataclass(frozen=True)
class InteriorOrientation:
    """Principal distance and principal point, in image units (mm or px)."""

    c: float
    xp: float = 0.0
    yp: float = 0.0

    def __post_init__(self):
        if not self.c > 0:
            raise DegenerateGeometryError(f"principal distance must be positive, got {self.c}")


@dataclass(frozen=True)
class ImageObservation:
    exposure_id: int
    target_id: int
    x: float
    y: float
    sigma: float = 1.0  # a-priori std dev per coordinate, image units

    def __post_init__(self):
        if not self.sigma > 0:
            raise DegenerateGeometryError(
                f"a-priori sigma must be positive for ({self.exposure_id},{self.target_id})"
            )


@dataclass
class ObservationSet:
    """Column-array view of an observation list, the solver's working form.

    exposure_ids / target_ids are the raw dataset identifiers; exp_index /
    pt_index map each row onto dense pose / point indices.
    """

    exposure_ids: np.ndarray  # (n,) int
    target_ids: np.ndarray  # (n,) int
    xy: np.ndarray  # (n,2) raw image coordinates
    sigma: np.ndarray  # (n,)
    exposures: list = field(default_factory=list)  # unique ids, dense order
    targets: list = field(default_factory=list)
    exp_index: np.ndarray | None = None
    pt_index: np.ndarray | None = None

    @classmethod
    def from_observations(cls, obs: list[ImageObservation]) -> "ObservationSet":
        if not obs:
            raise DegenerateGeometryError("empty observation list")
        pairs = set()
        for o in obs:
            key = (o.exposure_id, o.target_id)
            if key in pairs:
                raise DegenerateGeometryError(f"duplicate observation for {key}")
            pairs.add(key)
        exposure_ids = np.array([o.exposure_id for o in obs], dtype=np.int64)
        target_ids = np.array([o.target_id for o in obs], dtype=np.int64)
        xy = np.array([[o.x, o.y] for o in obs], dtype=np.float64)
        sigma = np.array([o.sigma for o in obs], dtype=np.float64)
        out = cls(exposure_ids, target_ids, xy, sigma)
        out.reindex()
        return out

    def reindex(self) -> None:
        self.exposures = sorted(set(self.exposure_ids.tolist()))
        self.targets = sorted(set(self.target_ids.tolist()))
        emap = {e: i for i, e in enumerate(self.exposures)}
        tmap = {t: i for i, t in enumerate(self.targets)}
        self.exp_index = np.array([emap[e] for e in self.exposure_ids], dtype=np.int64)
        self.pt_index = np.array([tmap[t] for t in self.target_ids], dtype=np.int64)

    def __len__(self) -> int:
        return self.xy.shape[0]

    def subset(self, mask: np.ndarray) -> "ObservationSet":
        out = ObservationSet(
            self.exposure_ids[mask], self.target_ids[mask], self.xy[mask], self.sigma[mask]
        )
        out.reindex()
        return out


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------

def sign_nonneg(z: np.ndarray) -> np.ndarray:
    """sgn with sgn(0) = +1, so the constraint stays informative at Zc = 0."""
    return np.where(np.asarray(z) < 0.0, -1.0, 1.0)


def to_camera_frame(coords: np.ndarray, pose: CameraPose) -> np.ndarray:
    """q (P - T) q*: object-space point(s) into the camera frame."""
    p = np.asarray(coords, dtype=np.float64)
    return rotate_vectors(pose.q, p - pose.t)


def incidence_angle(v: np.ndarray) -> np.ndarray:
    """Angle between the camera-frame ray and the optical axis, in [0, pi)."""
    v = np.asarray(v, dtype=np.float64)
    rho = np.hypot(v[..., 0], v[..., 1])
    norm = np.sqrt(rho * rho + v[..., 2] ** 2)
    if np.any(norm == 0.0):
        raise DegenerateGeometryError("degenerate ray: zero-length camera-frame vector")
    return np.arctan2(rho, v[..., 2])


def corrected_coords(
    xy: np.ndarray, iop: InteriorOrientation, delta: np.ndarray | tuple = (0.0, 0.0)
) -> np.ndarray:
    """Reduce raw image coordinates by principal point and correction pair."""
    xy = np.asarray(xy, dtype=np.float64)
    if isinstance(delta, tuple):
        dx, dy = (np.asarray(v, dtype=np.float64) for v in delta)
    else:
        d = np.asarray(delta, dtype=np.float64)
        dx, dy = d[..., 0], d[..., 1]
    out = np.empty_like(xy)
    out[..., 0] = xy[..., 0] - iop.xp - dx
    out[..., 1] = xy[..., 1] - iop.yp - dy
    return out


def sphere_z(x_true: np.ndarray, y_true: np.ndarray, c: float, sign: np.ndarray | float) -> np.ndarray:
    """z of the corrected point on the image sphere; sign selects front/behind."""
    x_true = np.asarray(x_true, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    rad = c * c - x_true * x_true - y_true * y_true
    if np.any(rad < 0.0):
        raise SphereDomainError(
            "observation outside spherical image plane: "
            f"max corrected radius {float(np.sqrt(np.max(x_true**2 + y_true**2))):.6g} "
            f"exceeds c={c:.6g}"
        )
    return np.asarray(sign, dtype=np.float64) * np.sqrt(rad)


def refraction_angle(
    x_true: np.ndarray, y_true: np.ndarray, c: float, sign: np.ndarray | float
) -> np.ndarray:
    """Image-side ray angle reconstructed on the sphere, in [0, pi)."""
    z = sphere_z(x_true, y_true, c, sign)
    r = np.hypot(np.asarray(x_true, dtype=np.float64), np.asarray(y_true, dtype=np.float64))
    return np.arctan2(r, z)


def collinearity_residual(
    v: np.ndarray, x_true: np.ndarray, y_true: np.ndarray, c: float
) -> np.ndarray:
    """Product-form spherical collinearity constraint.

    Zero iff the incidence angle of V equals the refraction angle of the
    corrected image point; finite everywhere on the sphere including 90
    degrees incidence. The front/behind branch is taken from sgn(Zc) of
    the supplied V.
    """
    v = np.asarray(v, dtype=np.float64)
    x_true = np.asarray(x_true, dtype=np.float64)
    y_true = np.asarray(y_true, dtype=np.float64)
    norm = np.linalg.norm(v, axis=-1)
    if np.any(norm == 0.0):
        raise DegenerateGeometryError("degenerate ray: zero-length camera-frame vector")
    rad = c * c - x_true * x_true - y_true * y_true
    if np.any(rad < 0.0):
        raise SphereDomainError(
            "observation outside spherical image plane: corrected radius exceeds c"
        )
    rho = np.hypot(v[..., 0], v[..., 1])
    r = np.hypot(x_true, y_true)
    return rho * sign_nonneg(v[..., 2]) * np.sqrt(rad) - v[..., 2] * r
