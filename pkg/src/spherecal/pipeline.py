"""End-to-end calibration drivers: the Brown ladder and the alternating kNN loop.

The conventional driver bootstraps a network and runs one self-calibrating
adjustment with a chosen prefix of Brown terms.  The kNN driver alternates
between the adjustment and a nonparametric correction field fitted to the
image residuals, stopping when both the adjustment cost and the field's
cross-validation score are stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .adjustment import AdjustmentConfig, AdjustmentResult, evaluate, solve
from .distortion import (
    BROWN_TERMS,
    BrownParams,
    KnnCorrectionMap,
    knn_cross_validate,
    knn_fit,
    knn_predict,
)
from .errors import ConfigError, SolveError
from .geometry import InteriorOrientation, ObjectPoint, ObservationSet
from .initialization import (
    DEFAULT_ANGULAR_GATE,
    InitializationResult,
    covering_principal_distance,
    initialize_network,
)

__all__ = [
    "CalibrationMode",
    "CalibrationResult",
    "KNN_LABEL",
    "LADDER_MASKS",
    "MIN_CV_INLIERS",
    "OuterLoopConfig",
    "OuterTraceEntry",
    "calibrate",
    "calibrate_conventional",
    "calibrate_knn",
    "ladder_label",
    "run_ladder",
]

# Brown-term prefixes estimable in conventional mode.  P1/P2 and A1 extend
# the ladder as grouped steps, so the length-4 prefix is not a valid rung.
LADDER_MASKS: tuple[tuple[str, ...], ...] = tuple(
    BROWN_TERMS[:n] for n in (0, 1, 2, 3, 5, 6, 7)
)

KNN_LABEL = "XYZ, EOP, IOP, kNN"

# Minimum inlier count before the correction field may be cross-validated.
MIN_CV_INLIERS = 10

# Neighbourhood size for the label smoother.  Chosen independently of the
# cross-validated prediction k: the smoother needs enough rows for a stable
# local quadratic fit, while prediction interpolates between stored labels.
SMOOTH_NEIGHBOURS = 24

# Iteration cap for the inner solves of the alternation.  The field is
# refitted after every pass anyway, so polishing each pass to convergence
# buys nothing; the final solve runs under the caller's full budget.
INNER_MAX_ITERATIONS = 8

_TINY = 1e-300


def ladder_label(mask: tuple[str, ...]) -> str:
    """Report-table row label for a conventional Brown mask."""
    base = "XYZ, EOP, IOP"
    if not mask:
        return base
    return base + ", " + ", ".join(term.upper() for term in mask)


def _validated_mask(mask) -> tuple[str, ...]:
    mask = tuple(mask)
    if mask not in LADDER_MASKS:
        options = " | ".join("+".join(m) if m else "(none)" for m in LADDER_MASKS)
        raise ConfigError(
            f"Brown mask {mask!r} is not a ladder prefix; valid masks: {options}"
        )
    return mask


@dataclass(frozen=True)
class OuterLoopConfig:
    """Stopping rule for the alternating kNN refinement."""

    max_outer: int = 20
    tol: float = 1e-3  # relative stability tolerance on cost and CV score

    def __post_init__(self) -> None:
        if self.max_outer < 1:
            raise ConfigError("max_outer must be >= 1")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")


@dataclass(frozen=True)
class CalibrationMode:
    """Selects one calibration strategy: a Brown-ladder rung or the kNN loop."""

    kind: str  # "conventional" | "knn"
    mask: tuple[str, ...] = ()
    outer: OuterLoopConfig = field(default_factory=OuterLoopConfig)

    def __post_init__(self) -> None:
        if self.kind not in ("conventional", "knn"):
            raise ConfigError(f"unknown calibration kind {self.kind!r}")
        object.__setattr__(self, "mask", tuple(self.mask))
        if self.kind == "conventional":
            _validated_mask(self.mask)
        elif self.mask:
            raise ConfigError("a Brown mask applies only to conventional mode")

    @property
    def label(self) -> str:
        if self.kind == "knn":
            return KNN_LABEL
        return ladder_label(self.mask)


@dataclass(frozen=True)
class OuterTraceEntry:
    """One alternation: inner solve cost plus the candidate field's CV pick."""

    outer: int
    cost: float  # robust image-space cost of the inner solve
    cv_score: float  # cross-validation score of the field fitted to it
    k: int  # chosen neighbour count


@dataclass(frozen=True)
class CalibrationResult:
    """A finished calibration run in either mode.

    `observations` holds the rows the adjustment actually consumed (after
    initialization may have dropped exposures or unknown targets), aligned
    with `adjustment.residuals`.  In kNN mode `corrections` is the frozen
    map's prediction at every row, exactly as used in the final solve.
    """

    adjustment: AdjustmentResult
    observations: ObservationSet
    initialization: InitializationResult
    label: str
    mask: tuple[str, ...] = ()
    correction_map: KnnCorrectionMap | None = None
    corrections: np.ndarray | None = None
    outer_trace: tuple[OuterTraceEntry, ...] = ()
    oscillated: bool = False

    @property
    def cost(self) -> float:
        return self.adjustment.cost_robust

    @property
    def n_outer(self) -> int:
        """Solve passes of the alternation (the bootstrap fit is entry 0)."""
        return sum(1 for t in self.outer_trace if t.outer > 0)


def calibrate_conventional(observations, approx_points: list[ObjectPoint],
                           iop: InteriorOrientation, mask=(),
                           *, config: AdjustmentConfig | None = None,
                           angular_gate: float = DEFAULT_ANGULAR_GATE,
                           ) -> CalibrationResult:
    """Bootstrap a network and self-calibrate with a fixed Brown-term prefix."""
    mask = _validated_mask(mask)
    init = initialize_network(approx_points, observations, iop,
                              angular_gate=angular_gate)
    return _solve_rung(init, mask, config)


def _seeded_network(init: InitializationResult, brown: BrownParams):
    """Bootstrap network with the sphere radius covering every raw radius."""
    iop = init.network.iop
    c0 = covering_principal_distance(init.observations.xy, iop)
    return replace(init.network, iop=replace(iop, c=c0), brown=brown)


def _solve_rung(init: InitializationResult, mask: tuple[str, ...],
                config: AdjustmentConfig | None) -> CalibrationResult:
    net = _seeded_network(init, BrownParams.with_terms(mask))
    result = solve(net, init.observations, config=config)
    return CalibrationResult(
        adjustment=result, observations=init.observations, initialization=init,
        label=ladder_label(mask), mask=mask,
    )


def run_ladder(observations, approx_points: list[ObjectPoint],
               iop: InteriorOrientation, masks=None,
               *, config: AdjustmentConfig | None = None,
               angular_gate: float = DEFAULT_ANGULAR_GATE,
               ) -> list[CalibrationResult]:
    """Solve the ladder rungs in order, each warm-started from the last.

    Every rung begins at the previous rung's converged network with the
    carried Brown coefficients intact and the new terms at zero, so its
    starting cost equals the previous optimum and the trust-region descent
    can only keep or lower it: the reported costs are non-increasing down
    the ladder.  Cold-starting deep masks instead routinely strands them in
    worse basins than their shallow parents on wide-field data.
    """
    masks = LADDER_MASKS if masks is None else [_validated_mask(m) for m in masks]
    init = initialize_network(approx_points, observations, iop,
                              angular_gate=angular_gate)
    results: list[CalibrationResult] = []
    net = None
    for mask in masks:
        if net is None:
            net = _seeded_network(init, BrownParams.with_terms(mask))
        else:
            carried = {t: getattr(net.brown, t)
                       for t in net.brown.active if t in mask}
            net = replace(net, brown=BrownParams.with_terms(mask, **carried))
        result = solve(net, init.observations, config=config)
        results.append(CalibrationResult(
            adjustment=result, observations=init.observations,
            initialization=init, label=ladder_label(mask), mask=mask,
        ))
        net = result.network
    return results


def _smoothed_labels(feats: np.ndarray, raw: np.ndarray, k: int) -> np.ndarray:
    """Leave-self-out local-quadratic fit of the raw per-row field values.

    The map must store smoothed labels for two reasons.  First, a prediction
    at a training feature returns that label verbatim (exact-match rule), and
    raw labels carry the row's own noise and blunder, which the fold would
    then memorize — zeroing the cost without improving the network.  Second,
    the smoother must be polynomial rather than a plain neighbour mean: at
    the image rim every neighbourhood is one-sided, so averaging biases the
    label systematically inward of the true outward-growing field, and the
    alternation converges to that bias instead of the data.  A quadratic
    also tracks the field's curvature between neighbours, which a linear fit
    leaves behind at the same order as the noise floor.
    """
    k_eff = min(k, len(feats) - 1)
    _, idx = cKDTree(feats).query(feats, k=k_eff + 1)
    nbr = idx[:, 1:]
    if k_eff < 7:
        return raw[nbr].mean(axis=1)
    rel = feats[nbr] - feats[:, None, :]
    x, y = rel[..., 0], rel[..., 1]
    basis = np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=2)
    normal = np.einsum("mki,mkj->mij", basis, basis)
    rhs = np.einsum("mki,mkl->mil", basis, raw[nbr])
    # tiny curvature-scaled ridge keeps degenerate neighbourhoods solvable
    scale = np.einsum("mki,mki->m", rel, rel) / k_eff
    for j in range(1, 6):
        normal[:, j, j] += 1e-9 * (scale ** (1 if j < 3 else 2) + 1.0)
    return np.linalg.solve(normal, rhs)[:, 0, :]


def _fit_candidate(obs: ObservationSet, result: AdjustmentResult,
                   corrections: np.ndarray | None):
    """CV-select k and fit the total correction field to the inlier rows.

    Labels are the field values that would zero each row's condition: the
    field in force minus the row's full discrepancy.  The solver reports
    Huber-shrunk residuals (v = hw * delta), so the shrink is undone first;
    otherwise each pass recovers only an hw-sized fraction of the remaining
    systematic error and the alternation crawls.  Every active row trains
    the field — rows the robust loss downweights are usually model
    mismatch, which is exactly the signal to learn; isolated blunders are
    diluted by the neighbour averaging and penalized by cross-validation.
    Rows outside the sphere domain have no residual and are skipped until
    the growing field pulls them inside.
    """
    hw = result.huber_weights
    inliers = ~result.excluded
    n_in = int(inliers.sum())
    if n_in < MIN_CV_INLIERS:
        raise SolveError(
            f"kNN refinement needs at least {MIN_CV_INLIERS} inlier "
            f"observations, got {n_in}"
        )
    iop = result.network.iop
    feats = obs.xy[inliers] - np.array([iop.xp, iop.yp])
    delta = result.residuals[inliers] / hw[inliers, None]
    totals = -delta
    if corrections is not None:
        totals = corrections[inliers] - delta
    weights = 1.0 / obs.sigma[inliers] ** 2
    k, scores = knn_cross_validate(feats, totals, weights=weights)
    labels = _smoothed_labels(feats, totals, max(k, SMOOTH_NEIGHBOURS))
    cmap = knn_fit(feats, labels, k, ref_xp=iop.xp, ref_yp=iop.yp,
                   cv_score=scores[k])
    return cmap, scores[k], k


def _field_values(cmap: KnnCorrectionMap, obs: ObservationSet) -> np.ndarray:
    dx, dy = knn_predict(cmap, obs.xy[:, 0] - cmap.ref_xp,
                         obs.xy[:, 1] - cmap.ref_yp)
    return np.column_stack([dx, dy])


def calibrate_knn(observations, approx_points: list[ObjectPoint],
                  iop: InteriorOrientation,
                  outer: OuterLoopConfig | None = None,
                  *, config: AdjustmentConfig | None = None,
                  angular_gate: float = DEFAULT_ANGULAR_GATE,
                  ) -> CalibrationResult:
    """Alternate the adjustment with a kNN correction field until stable.

    A bootstrap pass first fits the field to the residuals of the network
    exactly as initialized, before the geometry is allowed to move: solved
    even once without a field, the network absorbs most of the model error
    into warped poses and points, and the field then sees only the leftover
    sliver each pass.  Each subsequent pass runs an iteration-capped solve
    with the field held fixed, refits the field to the new residuals, and
    folds it in for the next pass.  The loop stops when both the robust
    cost and the CV score move by less than `outer.tol` relative over one
    pass, or aborts if the cost rises over two consecutive passes.  The
    best pass by cost is then re-solved to full convergence under the
    caller's configuration with its field frozen, so the returned map is
    exactly the one the returned adjustment used and a fresh solve from the
    result reproduces it.
    """
    outer = outer or OuterLoopConfig()
    init = initialize_network(approx_points, observations, iop,
                              angular_gate=angular_gate)
    obs = init.observations
    net = _seeded_network(init, init.network.brown)

    full_cfg = config or AdjustmentConfig()
    inner_cfg = replace(
        full_cfg,
        max_iterations=min(full_cfg.max_iterations, INNER_MAX_ITERATIONS),
        compute_covariance=False,
    )

    seed_eval = evaluate(net, obs, config=inner_cfg)
    cmap, cv0, k0 = _fit_candidate(obs, seed_eval, None)
    corrections = _field_values(cmap, obs)
    trace: list[OuterTraceEntry] = [
        OuterTraceEntry(0, seed_eval.cost_robust, cv0, k0)
    ]
    prev_cost = prev_cv = None
    best = None  # (cost, network, cmap, corrections)
    rises = 0
    oscillated = False

    for outer_i in range(1, outer.max_outer + 1):
        result = solve(net, obs, corrections=corrections, config=inner_cfg)
        cost = result.cost_robust
        if best is None or cost < best[0]:
            best = (cost, result.network, cmap, corrections)
        if prev_cost is not None and cost > prev_cost:
            rises += 1
            if rises >= 2:
                oscillated = True
                break
        else:
            rises = 0

        candidate, cv, k = _fit_candidate(obs, result, corrections)
        trace.append(OuterTraceEntry(outer_i, cost, cv, k))
        if prev_cost is not None:
            dc = abs(cost - prev_cost) / max(abs(prev_cost), _TINY)
            dv = abs(cv - prev_cv) / max(abs(prev_cv), _TINY)
            if dc < outer.tol and dv < outer.tol:
                break
        prev_cost, prev_cv = cost, cv

        cmap = candidate
        corrections = _field_values(cmap, obs)
        net = result.network

    _, net, cmap, corrections = best
    result = solve(net, obs, corrections=corrections, config=config)
    return CalibrationResult(
        adjustment=result, observations=obs, initialization=init,
        label=KNN_LABEL, correction_map=cmap, corrections=corrections,
        outer_trace=tuple(trace), oscillated=oscillated,
    )


def calibrate(mode: CalibrationMode, observations,
              approx_points: list[ObjectPoint], iop: InteriorOrientation,
              *, config: AdjustmentConfig | None = None,
              angular_gate: float = DEFAULT_ANGULAR_GATE) -> CalibrationResult:
    """Run the calibration selected by `mode`."""
    if mode.kind == "conventional":
        return calibrate_conventional(observations, approx_points, iop,
                                      mode.mask, config=config,
                                      angular_gate=angular_gate)
    return calibrate_knn(observations, approx_points, iop, mode.outer,
                         config=config, angular_gate=angular_gate)
