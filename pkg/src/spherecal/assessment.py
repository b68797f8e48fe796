"""Quality control against surveyed truth.

Aligns an adjusted network onto ground-truth coordinates with a rigid
(optionally similarity) transform, reports per-axis and 3D RMSE in
millimetres, summarizes image residuals as histograms, and fits the
radial trend line that exposes uncorrected distortion. Everything here
is pure computation over finished results; rendering lives elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.stats

from .adjustment import AdjustmentResult
from .errors import ConfigError, DegenerateGeometryError
from .geometry import ObjectPoint, ObservationSet


@dataclass(frozen=True)
class AlignmentTransform:
    """Similarity map estimated -> truth: p |-> scale * R p + t."""

    rotation: np.ndarray  # (3,3)
    translation: np.ndarray  # (3,)
    scale: float
    residual_rms: float  # metres, of the alignment fit itself
    n_common: int

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return self.scale * (pts @ self.rotation.T) + self.translation


@dataclass(frozen=True)
class TrendLine:
    """OLS fit residual = slope * r + intercept."""

    slope: float
    intercept: float


@dataclass(frozen=True)
class HistogramSummary:
    edges: np.ndarray  # (k+1,)
    counts: np.ndarray  # (k,)
    mean: float
    std: float
    skewness: float


@dataclass(frozen=True)
class AssessmentReport:
    rmse_x: float  # mm
    rmse_y: float
    rmse_z: float
    rmse_3d: float
    image_space_cost: float  # robust weighted square sum from the adjustment
    variance_factor: float
    hist_x: HistogramSummary
    hist_y: HistogramSummary
    trend_x: TrendLine
    trend_y: TrendLine
    alignment: AlignmentTransform


def _paired_clouds(estimated, truth) -> tuple[np.ndarray, np.ndarray]:
    """Common-id pairing for ObjectPoint lists, positional for arrays."""
    est_is_points = len(estimated) > 0 and isinstance(next(iter(estimated)), ObjectPoint)
    tru_is_points = len(truth) > 0 and isinstance(next(iter(truth)), ObjectPoint)
    if est_is_points and tru_is_points:
        emap = {p.id: p.coords for p in estimated}
        tmap = {p.id: p.coords for p in truth}
        common = sorted(set(emap) & set(tmap))
        return (np.array([emap[i] for i in common]).reshape(-1, 3),
                np.array([tmap[i] for i in common]).reshape(-1, 3))
    est = np.asarray(estimated, dtype=np.float64).reshape(-1, 3)
    tru = np.asarray(truth, dtype=np.float64).reshape(-1, 3)
    if est.shape != tru.shape:
        raise ConfigError(
            f"point clouds differ in size: {est.shape[0]} vs {tru.shape[0]}")
    return est, tru


def rigid_align(estimated, truth, allow_scale: bool = False) -> AlignmentTransform:
    """Least-squares rigid (or similarity) transform taking the estimated
    cloud onto truth.

    ObjectPoint sequences are paired by id over their common ids; raw
    (n,3) arrays are paired positionally. Raises
    DegenerateGeometryError("alignment underdetermined") for fewer than
    3 common points or a collinear cloud.
    """
    est, tru = _paired_clouds(estimated, truth)
    n = est.shape[0]
    if n < 3:
        raise DegenerateGeometryError(
            f"alignment underdetermined: {n} common points, need at least 3")
    ec = est - est.mean(axis=0)
    tc = tru - tru.mean(axis=0)
    sing_e = np.linalg.svd(ec, compute_uv=False)
    sing_t = np.linalg.svd(tc, compute_uv=False)
    if sing_e[1] < 1e-10 * max(sing_e[0], 1e-300) or \
            sing_t[1] < 1e-10 * max(sing_t[0], 1e-300):
        raise DegenerateGeometryError("alignment underdetermined: collinear points")
    cov = tc.T @ ec / n
    u, sing, vt = np.linalg.svd(cov)
    d = np.sign(np.linalg.det(u @ vt))
    flip = np.array([1.0, 1.0, d if d != 0 else 1.0])
    rot = u @ np.diag(flip) @ vt
    if allow_scale:
        scale = float((sing * flip).sum() / (ec**2).sum() * n)
    else:
        scale = 1.0
    trans = tru.mean(axis=0) - scale * rot @ est.mean(axis=0)
    fit = scale * (est @ rot.T) + trans - tru
    rms = float(np.sqrt((fit**2).sum(axis=1).mean()))
    return AlignmentTransform(rot, trans, scale, rms, n)


def rmse_xyz(aligned, truth) -> tuple[float, float, float, float]:
    """Per-axis and 3D root-mean-square differences in millimetres."""
    est, tru = _paired_clouds(aligned, truth)
    if est.shape[0] == 0:
        raise DegenerateGeometryError("empty correspondence")
    diff_mm = (est - tru) * 1000.0
    per_axis = np.sqrt((diff_mm**2).mean(axis=0))
    overall = float(np.sqrt((diff_mm**2).sum(axis=1).mean()))
    return float(per_axis[0]), float(per_axis[1]), float(per_axis[2]), overall


def radial_trend(residuals: np.ndarray, coords: np.ndarray) -> tuple[TrendLine, ...]:
    """Ordinary least-squares line of residual against radial distance.

    ``coords`` are corrected image coordinates relative to the principal
    point; one TrendLine is returned per residual column.
    """
    res = np.asarray(residuals, dtype=np.float64)
    if res.ndim == 1:
        res = res[:, None]
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if res.shape[0] != coords.shape[0]:
        raise ConfigError("residuals and coordinates differ in length")
    r = np.hypot(coords[:, 0], coords[:, 1])
    if res.shape[0] < 2 or np.ptp(r) < 1e-12:
        raise DegenerateGeometryError(
            "radial trend undefined: need at least two distinct radial distances")
    lines = []
    for col in range(res.shape[1]):
        slope, intercept = np.polyfit(r, res[:, col], 1)
        lines.append(TrendLine(float(slope), float(intercept)))
    return tuple(lines)


def residual_histogram(residuals: np.ndarray, bin_width: float) -> HistogramSummary:
    """Fixed-width histogram with moment summary (mean, std, skewness)."""
    if not bin_width > 0:
        raise ConfigError(f"bin width must be positive, got {bin_width}")
    res = np.asarray(residuals, dtype=np.float64).ravel()
    if res.size == 0:
        raise DegenerateGeometryError("empty residual sample")
    lo = np.floor(res.min() / bin_width) * bin_width
    n_bins = max(1, int(np.ceil((res.max() - lo) / bin_width)))
    if lo + n_bins * bin_width <= res.max():
        n_bins += 1
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts, _ = np.histogram(res, bins=edges)
    skew = float(scipy.stats.skew(res)) if res.size > 2 and res.std() > 0 else 0.0
    return HistogramSummary(edges, counts, float(res.mean()),
                            float(res.std()), skew)


def assess_network(result: AdjustmentResult, observations: ObservationSet,
                   truth_points, corrections: np.ndarray | None = None,
                   allow_scale: bool = False,
                   bin_width: float | None = None) -> AssessmentReport:
    """Full quality report for one adjustment against surveyed truth.

    Residual statistics use only rows that survived the domain guards.
    The radial axis is the corrected image radius (principal-point
    centred, minus the correction field when one was applied).
    """
    alignment = rigid_align(result.network.points, truth_points,
                            allow_scale=allow_scale)
    est_ids = [p.id for p in result.network.points]
    tmap = {p.id: p.coords for p in truth_points}
    aligned = alignment.apply(np.array([p.coords for p in result.network.points]))
    pairs = [(aligned[i], tmap[pid]) for i, pid in enumerate(est_ids) if pid in tmap]
    rx, ry, rz, r3d = rmse_xyz(np.array([a for a, _ in pairs]),
                               np.array([t for _, t in pairs]))

    keep = ~result.excluded
    res = result.residuals[keep]
    iop = result.network.iop
    coords = observations.xy[keep] - np.array([iop.xp, iop.yp])
    if corrections is not None:
        coords = coords - np.asarray(corrections, dtype=np.float64)[keep]
    trend_x, trend_y = radial_trend(res, coords)
    if bin_width is None:
        spread = np.ptp(res) if res.size else 0.0
        bin_width = spread / 40.0 if spread > 0 else 1.0
    hist_x = residual_histogram(res[:, 0], bin_width)
    hist_y = residual_histogram(res[:, 1], bin_width)
    return AssessmentReport(
        rmse_x=rx, rmse_y=ry, rmse_z=rz, rmse_3d=r3d,
        image_space_cost=result.cost_robust,
        variance_factor=result.variance_factor,
        hist_x=hist_x, hist_y=hist_y,
        trend_x=trend_x, trend_y=trend_y,
        alignment=alignment,
    )


def format_ladder_table(rows) -> str:
    """Aligned plain-text table over model-ladder entries.

    ``rows`` is a sequence of (label, image-space error, (rmse_x, rmse_y,
    rmse_z, rmse_3d)) tuples; the layout mirrors the calibration-quality
    tables: model label, image-space error, then RMSE columns in mm.
    """
    header = ("model", "image space error", "RMSE X [mm]",
              "RMSE Y [mm]", "RMSE Z [mm]", "RMSE 3D [mm]")
    table = [header]
    for label, cost, rmse in rows:
        table.append((str(label), f"{cost:.6g}", f"{rmse[0]:.3f}",
                      f"{rmse[1]:.3f}", f"{rmse[2]:.3f}", f"{rmse[3]:.3f}"))
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    lines = []
    for k, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if k == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def format_ladder_delimited(rows, sep: str = ",") -> str:
    """Machine-readable counterpart of format_ladder_table."""
    lines = [sep.join(("model", "image_space_error", "rmse_x_mm",
                       "rmse_y_mm", "rmse_z_mm", "rmse_3d_mm"))]
    for label, cost, rmse in rows:
        lines.append(sep.join([str(label), f"{cost:.17g}"]
                              + [f"{v:.17g}" for v in rmse]))
    return "\n".join(lines)
