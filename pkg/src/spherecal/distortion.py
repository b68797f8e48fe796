"""Image-space correction models.

Two interchangeable correction families live here:

* the parametric Brown polynomial (radial K1..K3, decentering P1/P2,
  affinity/shear A1/A2) used by the conventional baseline, and
* a non-parametric kNN regressor trained on adjustment residuals,
  with inverse-distance weighting and an exact-match short circuit.

Coordinates are principal-point-reduced image units throughout:
x_bar = x - xp, y_bar = y - yp, r = hypot(x_bar, y_bar).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import ConfigError, DataFormatError
from .geometry import InteriorOrientation

BROWN_TERMS = ("k1", "k2", "k3", "p1", "p2", "a1", "a2")

# Fixed shuffle seed for cross-validation folds; documented so runs are
# reproducible bit for bit.
CV_SEED = 1789


@dataclass(frozen=True)
class BrownParams:
    """Polynomial correction coefficients with an active-term mask.

    Inactive terms are pinned at exactly zero and excluded from estimation.
    """

    k1: float = 0.0
    k2: float = 0.0
    k3: float = 0.0
    p1: float = 0.0
    p2: float = 0.0
    a1: float = 0.0
    a2: float = 0.0
    active: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        for name in self.active:
            if name not in BROWN_TERMS:
                raise ConfigError(f"unknown correction term {name!r}")
        if len(set(self.active)) != len(self.active):
            raise ConfigError("duplicate correction term in active mask")
        for name in BROWN_TERMS:
            if name not in self.active and getattr(self, name) != 0.0:
                raise ConfigError(f"inactive term {name!r} must be zero")

    @classmethod
    def with_terms(cls, active: tuple[str, ...], **values: float) -> BrownParams:
        return cls(active=tuple(active), **values)

    def values(self) -> np.ndarray:
        """Active coefficients in mask order."""
        return np.array([getattr(self, name) for name in self.active])

    def updated(self, delta: np.ndarray) -> BrownParams:
        """Add `delta` (length == len(active)) to the active coefficients."""
        delta = np.asarray(delta, dtype=float)
        if delta.shape != (len(self.active),):
            raise ConfigError("update length does not match active mask")
        new = {n: getattr(self, n) + d for n, d in zip(self.active, delta)}
        return replace(self, **new)


def _reduce(x, y, iop: InteriorOrientation):
    xb = np.asarray(x, dtype=float) - iop.xp
    yb = np.asarray(y, dtype=float) - iop.yp
    return xb, yb


def brown_correction(x, y, iop: InteriorOrientation, p: BrownParams):
    """Corrections (dx, dy) at raw image position(s) (x, y)."""
    xb, yb = _reduce(x, y, iop)
    r2 = xb * xb + yb * yb
    s = r2 * (p.k1 + r2 * (p.k2 + r2 * p.k3))
    dx = xb * s + p.p1 * (r2 + 2 * xb * xb) + 2 * p.p2 * xb * yb + p.a1 * xb + p.a2 * yb
    dy = yb * s + p.p2 * (r2 + 2 * yb * yb) + 2 * p.p1 * xb * yb
    return dx, dy


def brown_param_jacobian(x, y, iop: InteriorOrientation, active: tuple[str, ...]):
    """Partials of (dx, dy) with respect to the active coefficients.

    Returns arrays (ddx, ddy), each with shape x.shape + (len(active),).
    """
    xb, yb = _reduce(x, y, iop)
    r2 = xb * xb + yb * yb
    cols = {
        "k1": (xb * r2, yb * r2),
        "k2": (xb * r2 * r2, yb * r2 * r2),
        "k3": (xb * r2 * r2 * r2, yb * r2 * r2 * r2),
        "p1": (r2 + 2 * xb * xb, 2 * xb * yb),
        "p2": (2 * xb * yb, r2 + 2 * yb * yb),
        "a1": (xb, np.zeros_like(xb)),
        "a2": (yb, np.zeros_like(xb)),
    }
    ddx = np.stack([cols[name][0] for name in active], axis=-1) if active else np.zeros(xb.shape + (0,))
    ddy = np.stack([cols[name][1] for name in active], axis=-1) if active else np.zeros(xb.shape + (0,))
    return ddx, ddy


def brown_point_jacobian(x, y, iop: InteriorOrientation, p: BrownParams):
    """Partials of (dx, dy) with respect to the raw image position (x, y).

    Returns (dxx, dxy, dyx, dyy) where dxy = d(dx)/dy and so on.
    """
    xb, yb = _reduce(x, y, iop)
    r2 = xb * xb + yb * yb
    s = r2 * (p.k1 + r2 * (p.k2 + r2 * p.k3))
    sp = p.k1 + r2 * (2 * p.k2 + 3 * p.k3 * r2)
    dxx = s + 2 * xb * xb * sp + 6 * p.p1 * xb + 2 * p.p2 * yb + p.a1
    dxy = 2 * xb * yb * sp + 2 * p.p1 * yb + 2 * p.p2 * xb + p.a2
    dyx = 2 * xb * yb * sp + 2 * p.p1 * yb + 2 * p.p2 * xb
    dyy = s + 2 * yb * yb * sp + 2 * p.p1 * xb + 6 * p.p2 * yb
    return dxx, dxy, dyx, dyy


# -- kNN correction map ------------------------------------------------------

EXACT_MATCH_DIST = 1e-12


@dataclass(frozen=True)
class KnnCorrectionMap:
    """Immutable fitted regressor from image position to (dx, dy).

    `ref_xp`/`ref_yp` record the principal point used to reduce the raw
    coordinates when the training features were formed, so a caller holding
    raw positions can reproduce the feature space exactly.
    """

    features: np.ndarray
    labels: np.ndarray
    k: int
    cv_score: float = float("nan")
    ref_xp: float = 0.0
    ref_yp: float = 0.0
    _tree: cKDTree = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        feats = np.ascontiguousarray(self.features, dtype=float)
        labels = np.ascontiguousarray(self.labels, dtype=float)
        if feats.ndim != 2 or feats.shape[1] != 2:
            raise ConfigError("features must have shape (n, 2)")
        if labels.shape != feats.shape:
            raise ConfigError("labels must match features in shape")
        if len(feats) == 0:
            raise ConfigError("cannot fit a correction map without samples")
        if not 1 <= self.k <= len(feats):
            raise ConfigError(
                f"k={self.k} out of range for {len(feats)} training samples"
            )
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "_tree", cKDTree(feats))

    def __len__(self) -> int:
        return len(self.features)


def knn_fit(features, labels, k: int, *, ref_xp: float = 0.0, ref_yp: float = 0.0,
            cv_score: float = float("nan")) -> KnnCorrectionMap:
    """Index training samples for exact k-nearest-neighbour queries."""
    return KnnCorrectionMap(
        features=np.asarray(features, dtype=float),
        labels=np.asarray(labels, dtype=float),
        k=int(k),
        cv_score=float(cv_score),
        ref_xp=float(ref_xp),
        ref_yp=float(ref_yp),
    )


def knn_predict(cmap: KnnCorrectionMap, x_bar, y_bar):
    """Inverse-distance-weighted mean of the k nearest labels.

    A query closer than EXACT_MATCH_DIST to a training feature returns that
    sample's label directly.
    """
    xb = np.atleast_1d(np.asarray(x_bar, dtype=float))
    yb = np.atleast_1d(np.asarray(y_bar, dtype=float))
    scalar = np.isscalar(x_bar) or (np.asarray(x_bar).ndim == 0)
    queries = np.column_stack([xb, yb])
    dist, idx = cmap._tree.query(queries, k=cmap.k)
    if cmap.k == 1:
        dist = dist[:, None]
        idx = idx[:, None]
    labels = cmap.labels[idx]
    w = 1.0 / np.maximum(dist, EXACT_MATCH_DIST)
    pred = (w[..., None] * labels).sum(axis=1) / w.sum(axis=1)[:, None]
    exact = dist[:, 0] < EXACT_MATCH_DIST
    if np.any(exact):
        pred[exact] = cmap.labels[idx[exact, 0]]
    if scalar:
        return pred[0, 0], pred[0, 1]
    return pred[:, 0], pred[:, 1]


def cv_folds(n_samples: int, n_folds: int = 10, seed: int = CV_SEED) -> list[np.ndarray]:
    """Deterministic shuffled partition; fold sizes differ by at most one."""
    if n_samples < n_folds:
        raise ConfigError(
            f"cross-validation needs at least {n_folds} samples, got {n_samples}"
        )
    order = np.random.default_rng(seed).permutation(n_samples)
    return [np.sort(part) for part in np.array_split(order, n_folds)]


def default_k_ladder(n_train: int) -> tuple[int, ...]:
    """Geometric candidate ladder capped at the training-set size."""
    ladder = [k for k in (1, 2, 4, 8, 16, 32, 64) if k <= n_train]
    return tuple(ladder) if ladder else (1,)


def knn_cross_validate(features, labels, k_candidates=None, *, weights=None,
                       n_folds: int = 10, seed: int = CV_SEED, folds=None):
    """Pick k by 10-fold cross-validation.

    Score per k is the mean squared held-out prediction error (summed over
    the two label components), weighted by each sample's observation weight.
    Ties go to the smallest k. Returns (best_k, {k: score}).
    """
    feats = np.asarray(features, dtype=float)
    labs = np.asarray(labels, dtype=float)
    n = len(feats)
    if folds is None:
        folds = cv_folds(n, n_folds=n_folds, seed=seed)
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=float)
    min_train = min(n - len(f) for f in folds)
    if k_candidates is None:
        k_candidates = default_k_ladder(min_train)
    k_candidates = [int(k) for k in k_candidates if int(k) <= min_train]
    if not k_candidates:
        raise ConfigError("no usable k candidate fits the training folds")

    sqerr = {k: np.zeros(n) for k in k_candidates}
    for fold in folds:
        mask = np.ones(n, dtype=bool)
        mask[fold] = False
        for k in k_candidates:
            sub = knn_fit(feats[mask], labs[mask], k)
            px, py = knn_predict(sub, feats[fold, 0], feats[fold, 1])
            err = (px - labs[fold, 0]) ** 2 + (py - labs[fold, 1]) ** 2
            sqerr[k][fold] = err

    total_w = weights.sum()
    scores = {k: float((weights * sqerr[k]).sum() / total_w) for k in k_candidates}
    best_k = min(scores, key=lambda k: (scores[k], k))
    return best_k, scores


# -- serialization -----------------------------------------------------------

def save_knn_map(cmap: KnnCorrectionMap, path) -> None:
    """Plain-text map: key=value header lines, then x y dx dy rows."""
    lines = [
        "# knn correction map",
        f"# k={cmap.k}",
        "# weighting=inverse_distance",
        f"# count={len(cmap)}",
        f"# ref_xp={cmap.ref_xp:.17g}",
        f"# ref_yp={cmap.ref_yp:.17g}",
        f"# cv_score={cmap.cv_score:.17g}",
        "# columns: x y dx dy",
    ]
    for (x, y), (dx, dy) in zip(cmap.features, cmap.labels):
        lines.append(f"{x:.17g} {y:.17g} {dx:.17g} {dy:.17g}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_knn_map(path) -> KnnCorrectionMap:
    header: dict[str, str] = {}
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, _, value = body.partition("=")
                    header[key.strip()] = value.strip()
                continue
            parts = line.split()
            if len(parts) != 4:
                raise DataFormatError(
                    f"line {lineno}: expected 4 columns (x y dx dy), got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from exc
    if "k" not in header:
        raise DataFormatError("missing k in correction-map header")
    data = np.asarray(rows, dtype=float)
    if len(data) == 0:
        raise DataFormatError("correction map has no samples")
    return knn_fit(
        data[:, :2],
        data[:, 2:],
        int(header["k"]),
        ref_xp=float(header.get("ref_xp", 0.0)),
        ref_yp=float(header.get("ref_yp", 0.0)),
        cv_score=float(header.get("cv_score", "nan")),
    )
