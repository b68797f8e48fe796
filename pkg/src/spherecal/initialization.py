"""Pose bootstrap: three-point resection and network initialization.

Camera poses are recovered one exposure at a time from approximate
target coordinates. Image observations are back-projected onto the
spherical image surface with the nominal interior orientation and zero
distortion, which keeps the bearing construction valid past 90 degrees
incidence where a planar back-projection has no answer. Each exposure
is resected from its three best-spread targets; the remaining targets
arbitrate between the (up to four) algebraic solutions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .adjustment import NetworkParameters
from .errors import ConfigError, DegenerateGeometryError, InitializationError
from .geometry import (
    CameraPose,
    InteriorOrientation,
    ObjectPoint,
    ObservationSet,
    quat_from_matrix,
)

DEFAULT_ANGULAR_GATE = math.radians(5.0)

# Bearings built from large radial distances carry back-projection
# model error that grows steeply with radius for non-spherical lenses
# (several degrees past half the principal distance); resection tries
# the innermost observations first and widens only when it must.
INNER_RADIUS_TIERS = (0.45, 0.65, 0.85)


@dataclass(frozen=True)
class P3PCandidateSet:
    """Resection solutions with per-candidate reprojection scores.

    ``scores[i]`` is the worst angular residual (rad) between a
    generating bearing and the direction candidate ``i`` predicts for
    the matching object point; it measures numeric quality only, since
    every candidate reproduces the generating triple by construction.
    """

    candidates: tuple[CameraPose, ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.candidates)


def _coords(point) -> np.ndarray:
    if isinstance(point, ObjectPoint):
        return point.coords
    return np.asarray(point, dtype=np.float64).reshape(3)


def _quartic_coefficients(a2, b2, c2, ca, cb, cg) -> np.ndarray:
    """Quartic in v = s3/s1 after eliminating u = s2/s1 from the
    three law-of-cosines range equations (coefficients frozen from a
    symbolic elimination; highest degree first)."""
    A0 = a2**2 - 4*a2*b2*cg**2 + 2*a2*b2 - 2*a2*c2 + b2**2 - 2*b2*c2 + c2**2
    A1 = -4*(a2**2*cb - a2*b2*ca*cg - 2*a2*b2*cb*cg**2 + a2*b2*cb - 2*a2*c2*cb
             + b2**2*ca*cg - b2*c2*ca*cg - b2*c2*cb + c2**2*cb)
    A2 = 2*(2*a2**2*cb**2 + a2**2 - 4*a2*b2*ca*cb*cg - 2*a2*b2*cg**2
            - 4*a2*c2*cb**2 - 2*a2*c2 + 2*b2**2*ca**2 + 2*b2**2*cg**2 - b2**2
            - 2*b2*c2*ca**2 - 4*b2*c2*ca*cb*cg + 2*c2**2*cb**2 + c2**2)
    A3 = -4*(a2**2*cb - a2*b2*ca*cg - a2*b2*cb - 2*a2*c2*cb + b2**2*ca*cg
             - 2*b2*c2*ca**2*cb - b2*c2*ca*cg + b2*c2*cb + c2**2*cb)
    A4 = a2**2 - 2*a2*b2 - 2*a2*c2 + b2**2 - 4*b2*c2*ca**2 + 2*b2*c2 + c2**2
    return np.array([A4, A3, A2, A1, A0])


def _refined_roots(coeffs: np.ndarray) -> np.ndarray:
    """Roots of a (normalized) polynomial: companion-matrix estimates
    sharpened by simultaneous Aberth iteration, which keeps the members
    of a near-multiple cluster separated."""
    roots = np.roots(coeffs)
    if roots.size <= 1:
        return roots
    dcoeffs = np.polyder(coeffs)
    roots = roots.astype(np.complex128) + 1e-30j  # keep pairs off the axis
    for _ in range(40):
        p = np.polyval(coeffs, roots)
        dp = np.polyval(dcoeffs, roots)
        ratio = np.where(np.abs(dp) > 0, p / np.where(dp == 0, 1.0, dp), 0.0)
        diff = roots[:, None] - roots[None, :]
        np.fill_diagonal(diff, np.inf)
        repel = np.sum(1.0 / diff, axis=1)
        step = ratio / (1.0 - ratio * repel)
        roots = roots - step
        if np.abs(step).max() < 1e-15 * max(1.0, np.abs(roots).max()):
            break
    return roots


def _polish_ranges(s: np.ndarray, a2, b2, c2, ca, cb, cg) -> tuple[np.ndarray, float]:
    """Newton refinement of the range triple on the full distance
    system; returns the polished ranges and the residual scale."""
    scale = max(a2, b2, c2)
    for _ in range(30):
        f = np.array([
            s[1]**2 + s[2]**2 - 2*s[1]*s[2]*ca - a2,
            s[0]**2 + s[2]**2 - 2*s[0]*s[2]*cb - b2,
            s[0]**2 + s[1]**2 - 2*s[0]*s[1]*cg - c2,
        ])
        jac = np.array([
            [0.0, 2*(s[1] - s[2]*ca), 2*(s[2] - s[1]*ca)],
            [2*(s[0] - s[2]*cb), 0.0, 2*(s[2] - s[0]*cb)],
            [2*(s[0] - s[1]*cg), 2*(s[1] - s[0]*cg), 0.0],
        ])
        try:
            ds = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            break
        s = s + ds
        if np.abs(ds).max() < 1e-14 * max(1.0, np.abs(s).max()):
            break
    f = np.array([
        s[1]**2 + s[2]**2 - 2*s[1]*s[2]*ca - a2,
        s[0]**2 + s[2]**2 - 2*s[0]*s[2]*cb - b2,
        s[0]**2 + s[1]**2 - 2*s[0]*s[1]*cg - c2,
    ])
    return s, float(np.abs(f).max() / scale)


def _absolute_orientation(world: np.ndarray, camera: np.ndarray) -> CameraPose:
    """Rigid fit camera = R (world - t), world/camera as (k,3) rows."""
    wc = world.mean(axis=0)
    cc = camera.mean(axis=0)
    m = (camera - cc).T @ (world - wc)
    u, _, vt = np.linalg.svd(m)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d if d != 0 else 1.0]) @ vt
    t = wc - rot.T @ cc
    return CameraPose(q=quat_from_matrix(rot), t=t)


def _angle_between(u: np.ndarray, v: np.ndarray) -> float:
    cx = np.cross(u, v)
    return math.atan2(float(np.linalg.norm(cx)), float(np.dot(u, v)))


def p3p_solve(correspondences) -> P3PCandidateSet:
    """Resect a camera from three (object point, bearing) pairs.

    Bearings are unit direction vectors in the camera frame. The range
    system is reduced to a quartic in one range ratio, every real root
    is reconstructed through both branches of the second ratio, and the
    resulting range triples are Newton-polished on the full system, so
    all physically valid solutions (positive ranges) are returned. The
    pose for each range triple comes from a rigid absolute-orientation
    fit.

    Raises DegenerateGeometryError for collinear object points or
    coincident bearings ("degenerate triple"), InitializationError when
    no candidate survives ("no valid pose").
    """
    if len(correspondences) != 3:
        raise ConfigError(f"resection needs exactly 3 correspondences, got {len(correspondences)}")
    pts = np.array([_coords(p) for p, _ in correspondences])
    brg = np.array([np.asarray(b, dtype=np.float64).reshape(3) for _, b in correspondences])
    norms = np.linalg.norm(brg, axis=1)
    if norms.min() < 1e-12:
        raise DegenerateGeometryError("degenerate triple: zero-length bearing")
    brg = brg / norms[:, None]

    span = np.linalg.norm(pts - pts.mean(axis=0), axis=1).max()
    area2 = np.linalg.norm(np.cross(pts[1] - pts[0], pts[2] - pts[0]))
    if span < 1e-12 or area2 < 1e-10 * span**2:
        raise DegenerateGeometryError("degenerate triple: collinear object points")

    # side lengths squared, each opposite the bearing pair it constrains
    a2 = float(np.sum((pts[1] - pts[2]) ** 2))
    b2 = float(np.sum((pts[0] - pts[2]) ** 2))
    c2 = float(np.sum((pts[0] - pts[1]) ** 2))
    ca = float(brg[1] @ brg[2])
    cb = float(brg[0] @ brg[2])
    cg = float(brg[0] @ brg[1])
    if max(ca, cb, cg) > 1.0 - 1e-12:
        raise DegenerateGeometryError("degenerate triple: coincident bearing directions")

    coeffs = _quartic_coefficients(a2, b2, c2, ca, cb, cg)
    top = np.abs(coeffs).max()
    if top == 0.0:
        raise InitializationError("no valid pose: vanishing resection polynomial")
    coeffs = coeffs / top
    lead = np.argmax(np.abs(coeffs) > 1e-14)
    roots = _refined_roots(coeffs[lead:])

    # real parts of all roots seed the range refinement; the polish
    # residual, not the imaginary part, decides what is physical
    ranges: list[tuple[np.ndarray, float]] = []
    for root in roots:
        if abs(root.imag) > 0.1 * max(1.0, abs(root.real)):
            continue
        v = float(root.real)
        if v <= 1e-12:
            continue
        den_s1 = 1.0 + v * v - 2.0 * v * cb
        if den_s1 <= 0.0:
            continue
        s1 = math.sqrt(b2 / den_s1)
        # second ratio: linear elimination when well-posed, plus both
        # quadratic branches to cover the vanishing-denominator case
        u_cands = []
        den_u = 2.0 * b2 * (ca * v - cg)
        if abs(den_u) > 1e-10 * max(a2, b2, c2):
            u_cands.append((2*a2*cb*v - a2*v*v - a2 + b2*v*v - b2
                            - 2*c2*cb*v + c2*v*v + c2) / den_u)
        disc = cg * cg + (c2 * den_s1 - b2) / b2
        if disc >= 0.0:
            rdisc = math.sqrt(disc)
            u_cands.extend([cg + rdisc, cg - rdisc])
        for u in u_cands:
            if u <= 1e-12:
                continue
            s = np.array([s1, u * s1, v * s1])
            s, resid = _polish_ranges(s, a2, b2, c2, ca, cb, cg)
            if resid > 1e-8 or s.min() <= 1e-12 * s.max():
                continue
            # wrong-branch starts can land on another root half-converged;
            # a duplicate keeps whichever copy polished further
            dup = next((i for i, (prev, _) in enumerate(ranges)
                        if np.abs(s - prev).max() <= 1e-9 * (1.0 + s.max())), None)
            if dup is None:
                ranges.append((s, resid))
            elif resid < ranges[dup][1]:
                ranges[dup] = (s, resid)

    if len(ranges) > 4:
        # at most four physical solutions exist; surplus entries are
        # stalled copies of true roots, recognizable by worse residuals
        ranges = sorted(ranges, key=lambda item: item[1])[:4]
    ranges = sorted((s for s, _ in ranges), key=lambda s: (s[0], s[1], s[2]))
    candidates = []
    scores = []
    for s in ranges:
        pose = _absolute_orientation(pts, s[:, None] * brg)
        rot = pose.rotation_matrix()
        worst = 0.0
        for i in range(3):
            pred = rot @ (pts[i] - pose.t)
            npred = np.linalg.norm(pred)
            if npred < 1e-12:
                worst = math.pi
                break
            worst = max(worst, _angle_between(pred / npred, brg[i]))
        candidates.append(pose)
        scores.append(worst)

    if not candidates:
        raise InitializationError("no valid pose: resection polynomial has no physical root")
    return P3PCandidateSet(tuple(candidates), tuple(scores))


def _pairs_to_arrays(pairs) -> tuple[np.ndarray, np.ndarray]:
    coords = np.array([_coords(p) for p, _ in pairs])
    bearings = np.array([np.asarray(b, dtype=np.float64).reshape(3) for _, b in pairs])
    return coords, bearings / np.linalg.norm(bearings, axis=1)[:, None]


def _mean_angular_error(pose: CameraPose, coords: np.ndarray,
                        bearings: np.ndarray) -> float:
    """Mean angle (rad) between predicted directions and unit bearings.
    Points predicted at the camera centre count as pi."""
    pred = (coords - pose.t) @ pose.rotation_matrix().T
    norms = np.linalg.norm(pred, axis=1)
    angles = np.full(len(coords), math.pi)
    ok = norms > 1e-12
    unit = pred[ok] / norms[ok, None]
    cx = np.cross(unit, bearings[ok])
    angles[ok] = np.arctan2(np.linalg.norm(cx, axis=1),
                            np.einsum("ij,ij->i", unit, bearings[ok]))
    return float(angles.mean())


def disambiguate(candidates: P3PCandidateSet, extras,
                 angular_gate: float = DEFAULT_ANGULAR_GATE) -> CameraPose:
    """Pick the resection candidate that best explains extra observations.

    ``extras`` is a sequence of (object point, bearing) pairs beyond the
    generating triple; the winner minimizes the mean angular error
    between predicted directions and bearings, ties resolved toward the
    lower candidate index. Points predicted behind the camera score
    angles near pi and are rejected naturally. If every candidate's
    mean error exceeds ``angular_gate`` the pose is considered
    unresolved and InitializationError is raised.
    """
    if len(candidates) == 0:
        raise InitializationError("no valid pose to disambiguate")
    if len(extras) == 0:
        raise ConfigError("disambiguation needs at least one extra observation")
    coords, bearings = _pairs_to_arrays(extras)
    best_pose = None
    best_err = math.inf
    for pose in candidates.candidates:
        mean_err = _mean_angular_error(pose, coords, bearings)
        if mean_err < best_err:
            best_err = mean_err
            best_pose = pose
    if best_err > angular_gate:
        raise InitializationError(
            f"no candidate within angular gate: best mean error "
            f"{math.degrees(best_err):.2f} deg exceeds {math.degrees(angular_gate):.2f} deg")
    return best_pose


def covering_principal_distance(xy: np.ndarray, iop: InteriorOrientation) -> float:
    """Principal distance inflated just past the worst raw radial distance.

    Raw radii at or past the principal distance have no spherical
    back-projection, and rows flagged out of the sphere domain exert no
    pull on the estimate, so a too-small starting value can never grow to
    reach them.  Covering every observation up front keeps wide-angle rows
    in play; the estimate is free to move back down.
    """
    xy = np.asarray(xy, dtype=float)
    radii = np.linalg.norm(xy - np.array([iop.xp, iop.yp]), axis=1)
    return max(iop.c, 1.05 * float(radii.max()))


def spherical_bearings(xy: np.ndarray, iop: InteriorOrientation,
                       c_override: float | None = None) -> np.ndarray:
    """Back-project raw image coordinates onto the unit sphere.

    Uses the nominal interior orientation and zero distortion:
    (x - xp, y - yp, sqrt(c^2 - r^2)) / c. ``c_override`` substitutes an
    inflated principal distance when raw radii exceed the nominal one
    (wide-angle lenses), keeping every radius on the sphere at the cost
    of compressed incidence angles.
    """
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    c = float(c_override) if c_override is not None else iop.c
    xt = xy[:, 0] - iop.xp
    yt = xy[:, 1] - iop.yp
    r2 = xt * xt + yt * yt
    if r2.size and r2.max() > c * c:
        raise DegenerateGeometryError(
            f"radial distance {math.sqrt(r2.max()):.3f} exceeds principal distance {c:.3f}")
    sz = np.sqrt(np.maximum(c * c - r2, 0.0))
    return np.column_stack([xt, yt, sz]) / c


def _max_area_triple(coords: np.ndarray) -> tuple[int, int, int]:
    """Greedy best-spread triple: farthest from centroid, farthest from
    that, then max triangle area. Rows must be in ascending target-id
    order so argmax ties resolve to the smallest id."""
    centroid = coords.mean(axis=0)
    i = int(np.argmax(np.linalg.norm(coords - centroid, axis=1)))
    j = int(np.argmax(np.linalg.norm(coords - coords[i], axis=1)))
    areas = np.linalg.norm(np.cross(coords - coords[i], coords - coords[j]), axis=1)
    k = int(np.argmax(areas))
    span = np.linalg.norm(coords[j] - coords[i])
    if span < 1e-12 or areas[k] < 1e-10 * span * span:
        raise DegenerateGeometryError("degenerate triple: collinear target layout")
    return i, j, k


@dataclass(frozen=True)
class InitializationResult:
    """Bootstrap output: starting network, the observation rows it
    covers, and what was left out."""

    network: NetworkParameters
    observations: ObservationSet
    excluded: tuple[tuple[int, str], ...]  # (exposure id, reason)
    dropped_targets: tuple[int, ...]  # observed ids without approximate coordinates

    def report(self) -> str:
        lines = []
        for exposure_id, reason in self.excluded:
            lines.append(f"exposure {exposure_id}: {reason}")
        if self.dropped_targets:
            ids = ", ".join(str(t) for t in self.dropped_targets)
            lines.append(f"targets without approximate coordinates: {ids}")
        if not lines:
            lines.append("all exposures initialized")
        return "\n".join(lines)


def initialize_network(approx_points, observations: ObservationSet,
                       iop: InteriorOrientation, *,
                       angular_gate: float = DEFAULT_ANGULAR_GATE) -> InitializationResult:
    """Build a starting NetworkParameters from approximate target coordinates.

    Each exposure is resected from its three best-spread targets with
    approximate coordinates and disambiguated against the rest; object
    points start at the approximate coordinates, the interior
    orientation at its nominal value, polynomial corrections at zero.
    Exposures that cannot be resected (fewer than 4 usable targets,
    degenerate layout, no candidate within the gate) are excluded and
    reported rather than failing the run; their observations are left
    out of the returned set, as are rows for targets without
    approximate coordinates.
    """
    approx: dict[int, np.ndarray] = {}
    for point in approx_points:
        p = point if isinstance(point, ObjectPoint) else ObjectPoint(*point)
        if p.id in approx:
            raise ConfigError(f"duplicate approximate coordinates for target {p.id}")
        approx[p.id] = p.coords
    if observations.exp_index is None:
        observations.reindex()

    xt = observations.xy - np.array([iop.xp, iop.yp])
    radii = np.linalg.norm(xt, axis=1)
    known = np.array([t in approx for t in observations.target_ids.tolist()])
    dropped = tuple(sorted(set(observations.target_ids[~known].tolist())))
    if not known.any():
        raise InitializationError("no observed target has approximate coordinates")
    c_wide = covering_principal_distance(observations.xy[known], iop)

    excluded: list[tuple[int, str]] = []
    poses: dict[int, CameraPose] = {}
    for exposure_id in observations.exposures:
        rows = np.where((observations.exposure_ids == exposure_id) & known)[0]
        if len(rows) < 4:
            excluded.append((exposure_id,
                             f"only {len(rows)} usable targets (4 required)"))
            continue
        tiers = []
        for fraction in INNER_RADIUS_TIERS:
            sel = rows[radii[rows] <= fraction * iop.c]
            if len(sel) >= 4 and (not tiers or len(sel) > len(tiers[-1][0])):
                tiers.append((sel, iop.c))
        if not tiers or len(tiers[-1][0]) < len(rows):
            tiers.append((rows, c_wide))
        # fixed cross-tier evaluation set: moderate radii are trusted for
        # every lens model, so a pose fitted on a narrow central cone
        # cannot validate itself against the same few rows
        ev = rows[radii[rows] <= 0.65 * iop.c]
        ev, ev_c = (ev, iop.c) if len(ev) >= 4 else (rows, c_wide)
        ev_coords = np.array([approx[t] for t in observations.target_ids[ev].tolist()])
        ev_bearings = spherical_bearings(observations.xy[ev], iop, c_override=ev_c)

        pose, best_score, failure = None, math.inf, "fewer than 4 usable targets"
        for use, c_eff in tiers:
            use = use[np.argsort(observations.target_ids[use])]
            coords = np.array([approx[t] for t in observations.target_ids[use].tolist()])
            bearings = spherical_bearings(observations.xy[use], iop, c_override=c_eff)
            try:
                i, j, k = _max_area_triple(coords)
                triple = [(coords[m], bearings[m]) for m in (i, j, k)]
                extras = [(coords[m], bearings[m])
                          for m in range(len(use)) if m not in (i, j, k)]
                tier_pose = disambiguate(p3p_solve(triple), extras, angular_gate=math.pi)
            except (DegenerateGeometryError, InitializationError) as err:
                failure = str(err)
                continue
            score = _mean_angular_error(tier_pose, ev_coords, ev_bearings)
            if score < best_score:
                pose, best_score = tier_pose, score
        if pose is not None and best_score > angular_gate:
            failure = (f"no pose within angular gate: best mean error "
                       f"{math.degrees(best_score):.2f} deg exceeds "
                       f"{math.degrees(angular_gate):.2f} deg")
            pose = None
        if pose is None:
            excluded.append((exposure_id, failure))
            continue
        poses[exposure_id] = pose

    if not poses:
        raise InitializationError("initialization failed for every exposure")
    keep = np.isin(observations.exposure_ids, np.array(sorted(poses), dtype=np.int64))
    used = observations.subset(keep & known)
    network = NetworkParameters(
        poses=[poses[e] for e in used.exposures],
        points=[ObjectPoint(t, approx[t]) for t in used.targets],
        iop=iop,
    )
    return InitializationResult(network, used, tuple(excluded), dropped)
