"""Equality-constrained weighted implicit least-squares engine.

The model is implicit (Gauss-Helmert): one scalar condition per observation,
g(parameters, observations) = 0, with the collinearity residual from the
geometry module. Each iteration linearizes, forms equivalent condition
weights w = 1 / (B Sigma_l B^T), applies Huber re-weighting, solves the
reduced KKT system under datum constraints, and takes a dogleg trust-region
step with More-style diagonal scaling.

Parameter vector layout: [6 per exposure (rotation update, translation),
3 per object point, 3 interior (c, xp, yp), active Brown coefficients].
Rotation updates are local rotation vectors composed by left multiplication
onto the exposure quaternion, so the update's z component is a pure roll
about the optical axis. The scalar condition is invariant under that roll
(it only constrains the incidence angle), which makes per-exposure roll a
gauge freedom on top of the usual 7 (translation, rotation, scale); the
datum therefore carries one roll-fixing row per exposure alongside the
free-network inner constraints.

Cost bookkeeping: `cost` is the plain weighted sum of squared conditions
(the a-posteriori variance factor is cost / redundancy); `cost_robust`
applies the Huber weights on top and is the "image space error" used for
model comparisons; the monotone acceptance objective is the Huber M-cost.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .distortion import (
    BrownParams,
    brown_correction,
    brown_param_jacobian,
    brown_point_jacobian,
)
from .errors import ConfigError, SolveError
from .geometry import (
    CameraPose,
    InteriorOrientation,
    ObjectPoint,
    ObservationSet,
    quat_from_rotvec,
    quat_multiply,
    quat_normalize,
    sign_nonneg,
)

_TINY = 1e-12


@dataclass(frozen=True)
class DatumSpec:
    """Free-network inner constraints, or >= 3 fixed control points."""

    kind: str = "inner"
    control_ids: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("inner", "control"):
            raise ConfigError(f"unknown datum kind {self.kind!r}")
        if self.kind == "control" and len(self.control_ids) < 3:
            raise ConfigError("control datum needs at least 3 point ids")


@dataclass
class NetworkParameters:
    """Estimable state: poses (one per exposure), points, interior, Brown."""

    poses: list[CameraPose]
    points: list[ObjectPoint]
    iop: InteriorOrientation
    brown: BrownParams = field(default_factory=BrownParams)
    datum: DatumSpec = field(default_factory=DatumSpec)

    def copy(self) -> "NetworkParameters":
        return NetworkParameters(
            poses=list(self.poses), points=list(self.points),
            iop=self.iop, brown=self.brown, datum=self.datum,
        )


@dataclass(frozen=True)
class AdjustmentConfig:
    max_iterations: int = 200
    cost_tol: float = 1e-10
    step_tol: float = 1e-8
    radius0: float = 1.0
    radius_max: float = 1e4
    radius_min: float = 1e-13
    huber_c: float = 1.345
    use_huber: bool = True
    min_accept_ratio: float = 1e-4
    compute_covariance: bool = True

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError("max_iterations must be >= 1")
        for name in ("cost_tol", "step_tol", "radius0", "radius_max",
                     "radius_min", "huber_c"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")


@dataclass(frozen=True)
class TraceEntry:
    iteration: int
    mcost: float
    cost: float
    cost_robust: float
    radius: float
    max_step: float
    accepted: bool


@dataclass(frozen=True)
class AdjustmentResult:
    network: NetworkParameters
    residuals: np.ndarray          # (n, 2) observation residuals (vx, vy)
    conditions: np.ndarray         # (n,) final condition values g
    cost: float                    # sum w g^2 (a-priori weights only)
    cost_robust: float             # sum h w g^2, image space error
    mcost: float                   # Huber M-cost, the acceptance objective
    variance_factor: float         # cost / redundancy
    huber_weights: np.ndarray      # (n,)
    excluded: np.ndarray           # (n,) bool, dropped rows (domain guards)
    redundancy: int
    trace: tuple[TraceEntry, ...]
    converged: bool
    n_iterations: int
    param_sigma: dict[str, float]  # posterior sigmas for iop and Brown terms


class ParamLayout:
    """Column offsets of the stacked parameter vector."""

    def __init__(self, n_exp: int, n_pts: int, n_brown: int):
        self.n_exp = n_exp
        self.n_pts = n_pts
        self.n_brown = n_brown
        self.iop_off = 6 * n_exp + 3 * n_pts
        self.brown_off = self.iop_off + 3
        self.n_params = self.brown_off + n_brown

    def pose_cols(self, e):
        return 6 * e

    def point_cols(self, i):
        return 6 * self.n_exp + 3 * i


@dataclass
class Linearized:
    g: np.ndarray          # (n,) condition values
    jac: np.ndarray | None  # (n, m) per-row jacobian entries
    cols: np.ndarray | None  # (n, m) their column indices
    b_obs: np.ndarray      # (n, 2) partials w.r.t. the observed coordinates
    flagged: np.ndarray    # (n,) rows violating the sphere domain


def _point_rows(network: NetworkParameters, obs: ObservationSet) -> np.ndarray:
    id_to_row = {p.id: i for i, p in enumerate(network.points)}
    try:
        rows = np.array([id_to_row[t] for t in obs.targets], dtype=np.int64)
    except KeyError as exc:
        raise ConfigError(f"observation references unknown target {exc.args[0]}") from exc
    return rows


def linearize(network: NetworkParameters, obs: ObservationSet,
              corrections: np.ndarray | None = None,
              jacobians: bool = True) -> Linearized:
    """Conditions g plus analytic partials w.r.t. parameters and observations.

    `corrections` holds fixed per-observation (dx, dy) pairs (the external
    correction map in kNN mode), treated as constants. Rows whose corrected
    radial distance reaches the sphere radius are flagged for exclusion, not
    raised.
    """
    n = len(obs)
    if len(network.poses) != len(obs.exposures):
        raise ConfigError(
            f"network has {len(network.poses)} poses for {len(obs.exposures)} exposures"
        )
    pt_rows = _point_rows(network, obs)

    iop = network.iop
    c = iop.c
    rot = np.stack([p.rotation_matrix() for p in network.poses])   # (E,3,3)
    trans = np.stack([p.t for p in network.poses])                 # (E,3)
    coords = np.stack([p.coords for p in network.points])          # (T,3)

    ei = obs.exp_index
    pw = coords[pt_rows[obs.pt_index]]
    re = rot[ei]
    v = np.einsum("nij,nj->ni", re, pw - trans[ei])                # camera frame

    # corrected image coordinates
    if corrections is None:
        fx = fy = 0.0
    else:
        fx, fy = corrections[:, 0], corrections[:, 1]
    bx, by = brown_correction(obs.xy[:, 0], obs.xy[:, 1], iop, network.brown)
    x_t = obs.xy[:, 0] - iop.xp - bx - fx
    y_t = obs.xy[:, 1] - iop.yp - by - fy

    xc, yc, zc = v[:, 0], v[:, 1], v[:, 2]
    rho = np.hypot(xc, yc)
    sz = sign_nonneg(zc)
    r2 = x_t * x_t + y_t * y_t
    r = np.sqrt(r2)
    rad = c * c - r2
    flagged = rad <= _TINY * c * c
    d = np.sqrt(np.where(flagged, 1.0, rad))
    g = np.where(flagged, 0.0, rho * sz * d - zc * r)

    # partials w.r.t. corrected coordinates
    h = rho * sz
    inv_r = np.where(r > _TINY, 1.0 / np.maximum(r, _TINY), 0.0)
    gxt = -x_t * (h / d + zc * inv_r)
    gyt = -y_t * (h / d + zc * inv_r)

    # chain through the Brown terms evaluated at the raw coordinates
    dxx, dxy, dyx, dyy = brown_point_jacobian(obs.xy[:, 0], obs.xy[:, 1], iop, network.brown)
    b_x = gxt * (1.0 - dxx) + gyt * (-dyx)
    b_y = gxt * (-dxy) + gyt * (1.0 - dyy)
    b_obs = np.column_stack([b_x, b_y])
    flagged = flagged | (b_x * b_x + b_y * b_y < _TINY)

    if not jacobians:
        return Linearized(g=g, jac=None, cols=None, b_obs=b_obs, flagged=flagged)

    layout = ParamLayout(len(network.poses), len(network.points), len(network.brown.active))
    m = 12 + layout.n_brown
    jac = np.zeros((n, m))
    cols = np.zeros((n, m), dtype=np.int64)

    # gradient w.r.t. camera-frame vector
    inv_rho = np.where(rho > _TINY, 1.0 / np.maximum(rho, _TINY), 0.0)
    u = np.column_stack([xc * inv_rho * sz * d, yc * inv_rho * sz * d, -r])

    # rotation update (local, left-multiplied): dV/dw = -[V]x, dg/dw = V x u
    jac[:, 0:3] = np.cross(v, u)
    # translation: dV/dt = -R, chain with u
    rtu = np.einsum("nji,nj->ni", re, u)     # R^T u
    jac[:, 3:6] = -rtu
    # object point: dV/dP = R
    jac[:, 6:9] = rtu
    # interior: c, xp, yp
    jac[:, 9] = np.where(flagged, 0.0, h * c / d)
    jac[:, 10] = gxt * (-1.0 + dxx) + gyt * dyx
    jac[:, 11] = gxt * dxy + gyt * (-1.0 + dyy)
    if layout.n_brown:
        pdx, pdy = brown_param_jacobian(obs.xy[:, 0], obs.xy[:, 1], iop, network.brown.active)
        jac[:, 12:12 + layout.n_brown] = -(gxt[:, None] * pdx + gyt[:, None] * pdy)

    base_e = 6 * ei[:, None]
    cols[:, 0:6] = base_e + np.arange(6)
    base_p = 6 * layout.n_exp + 3 * pt_rows[obs.pt_index][:, None]
    cols[:, 6:9] = base_p + np.arange(3)
    cols[:, 9:12] = layout.iop_off + np.arange(3)
    if layout.n_brown:
        cols[:, 12:] = layout.brown_off + np.arange(layout.n_brown)

    jac[flagged] = 0.0
    return Linearized(g=g, jac=jac, cols=cols, b_obs=b_obs, flagged=flagged)


def huber_weight(standardized, c_h: float):
    """Huber IRLS weight: 1 inside the tuning constant, c_h/|r| outside."""
    if c_h <= 0:
        raise ConfigError("Huber tuning constant must be positive")
    a = np.abs(np.asarray(standardized, dtype=float))
    return np.where(a <= c_h, 1.0, c_h / np.maximum(a, _TINY))


def _huber_rho(standardized, c_h: float):
    a = np.abs(np.asarray(standardized, dtype=float))
    quad = 0.5 * a * a
    lin = c_h * a - 0.5 * c_h * c_h
    return np.where(a <= c_h, quad, lin)


def dogleg_step(gradient: np.ndarray, gauss_newton_step: np.ndarray,
                cauchy_step: np.ndarray, trust_radius: float) -> np.ndarray:
    """Classic dogleg: GN inside the region, else blend from the Cauchy point."""
    if trust_radius <= 0:
        raise SolveError("trust radius must be positive")
    for arr in (gradient, gauss_newton_step, cauchy_step):
        if not np.all(np.isfinite(arr)):
            raise SolveError("non-finite quantities in trust-region step")
    gn_norm = np.linalg.norm(gauss_newton_step)
    if gn_norm <= trust_radius:
        return gauss_newton_step
    c_norm = np.linalg.norm(cauchy_step)
    if c_norm >= trust_radius:
        if c_norm < _TINY:
            raise SolveError("degenerate steepest-descent direction")
        return cauchy_step * (trust_radius / c_norm)
    diff = gauss_newton_step - cauchy_step
    a = diff @ diff
    b = 2.0 * (cauchy_step @ diff)
    cc = c_norm * c_norm - trust_radius * trust_radius
    disc = max(b * b - 4 * a * cc, 0.0)
    tau = (-b + np.sqrt(disc)) / (2 * a)
    tau = min(max(tau, 0.0), 1.0)
    return cauchy_step + tau * diff


def _datum_matrix(network: NetworkParameters, layout: ParamLayout) -> np.ndarray:
    """Constraint columns G with G^T dx = 0: datum rows plus roll gauges."""
    cols = []
    coords = np.stack([p.coords for p in network.points])
    if network.datum.kind == "inner":
        centred = coords - coords.mean(axis=0)
        scale = np.sqrt((centred ** 2).sum() / len(coords))
        centred = centred / scale
        # translation (3), rotation (3), scale (1) over point parameters
        for axis in range(3):
            gcol = np.zeros(layout.n_params)
            gcol[layout.point_cols(0) + axis:layout.iop_off:3] = 1.0
            cols.append(gcol)
        for axis in range(3):
            gcol = np.zeros(layout.n_params)
            e = np.zeros(3)
            e[axis] = 1.0
            cr = np.cross(centred, e)
            gcol[layout.point_cols(0):layout.iop_off] = cr.ravel()
            cols.append(gcol)
        gcol = np.zeros(layout.n_params)
        gcol[layout.point_cols(0):layout.iop_off] = centred.ravel()
        cols.append(gcol)
    else:
        rows_by_id = {p.id: i for i, p in enumerate(network.points)}
        for pid in network.datum.control_ids:
            if pid not in rows_by_id:
                raise ConfigError(f"control point {pid} not in network")
            for axis in range(3):
                gcol = np.zeros(layout.n_params)
                gcol[layout.point_cols(rows_by_id[pid]) + axis] = 1.0
                cols.append(gcol)
    # per-exposure roll gauge: the condition is blind to rotation about the
    # optical axis, so pin the local z rotation update of every exposure
    for e in range(layout.n_exp):
        gcol = np.zeros(layout.n_params)
        gcol[layout.pose_cols(e) + 2] = 1.0
        cols.append(gcol)
    return np.column_stack(cols)


def _assemble_normals(lin: Linearized, w_eff: np.ndarray, layout: ParamLayout):
    """Dense N = A^T W A and b = -A^T W g from the per-row entry blocks."""
    jac = lin.jac
    cols = lin.cols
    n, m = jac.shape
    p = layout.n_params
    wj = jac * w_eff[:, None]
    outer = wj[:, :, None] * jac[:, None, :]
    flat = (cols[:, :, None] * p + cols[:, None, :]).ravel()
    normal = np.bincount(flat, weights=outer.ravel(), minlength=p * p).reshape(p, p)
    rhs = -np.bincount(cols.ravel(), weights=(wj * lin.g[:, None]).ravel(), minlength=p)
    return normal, rhs


def _kkt_solve(normal: np.ndarray, gmat: np.ndarray, rhs_list: list[np.ndarray],
               scale: np.ndarray | None = None):
    """Solve the bordered system [[N, G], [G^T, 0]] for several right sides.

    The system is symmetrically equilibrated before factorization: parameter
    columns by `scale` (typically sqrt of the normal diagonal) and constraint
    columns to unit norm, otherwise the metre/millimetre unit mix drives the
    condition number past float range.
    """
    p = normal.shape[0]
    mc = gmat.shape[1]
    if scale is None:
        diag = np.diag(normal)
        floor = max(diag.max(), _TINY) * 1e-14
        scale = np.sqrt(np.where(diag > floor, diag, 1.0))
    ns = (normal / scale[:, None]) / scale[None, :]
    gsc = gmat / scale[:, None]
    gnorm = np.linalg.norm(gsc, axis=0)
    if np.any(gnorm < _TINY):
        raise SolveError("degenerate datum constraint column")
    gsc = gsc / gnorm[None, :]
    kkt = np.zeros((p + mc, p + mc))
    kkt[:p, :p] = ns
    kkt[:p, p:] = gsc
    kkt[p:, :p] = gsc.T
    rhs = np.zeros((p + mc, len(rhs_list)))
    for j, r in enumerate(rhs_list):
        rhs[:p, j] = r / scale
    try:
        with warnings.catch_warnings():
            # accuracy is checked against the residual below, not rcond
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            sol = scipy.linalg.solve(kkt, rhs)
    except scipy.linalg.LinAlgError:
        sol = None
    bad = sol is None or not np.all(np.isfinite(sol))
    if not bad:
        resid = np.abs(kkt @ sol - rhs).max()
        bad = resid > 1e-6 * max(np.abs(rhs).max(), 1.0)
    if bad:
        rank = np.linalg.matrix_rank(kkt)
        if sol is None or rank < p + mc:
            raise SolveError(
                "datum deficiency: constrained normal system is rank deficient "
                f"(rank {rank} of {p + mc}, null space dimension {p + mc - rank})"
            )
    return [sol[:p, j] / scale for j in range(len(rhs_list))]


def _apply_step(network: NetworkParameters, delta: np.ndarray,
                layout: ParamLayout) -> NetworkParameters:
    """Retract the stacked update onto the parameter manifold."""
    poses = []
    for e, pose in enumerate(network.poses):
        off = layout.pose_cols(e)
        w = delta[off:off + 3]
        dt = delta[off + 3:off + 6]
        q = quat_normalize(quat_multiply(quat_from_rotvec(w), pose.q))
        poses.append(CameraPose(q=q, t=pose.t + dt))
    points = []
    for i, pt in enumerate(network.points):
        off = layout.point_cols(i)
        points.append(ObjectPoint(id=pt.id, coords=pt.coords + delta[off:off + 3]))
    di = delta[layout.iop_off:layout.iop_off + 3]
    new_c = network.iop.c + di[0]
    if new_c <= 0:
        raise _StepDomainError()
    iop = InteriorOrientation(c=new_c, xp=network.iop.xp + di[1], yp=network.iop.yp + di[2])
    brown = network.brown
    if layout.n_brown:
        brown = brown.updated(delta[layout.brown_off:])
    return NetworkParameters(poses=poses, points=points, iop=iop,
                             brown=brown, datum=network.datum)


class _StepDomainError(Exception):
    """Trial step left the parameter domain; shrink the region and retry."""


def _costs(lin: Linearized, sigma: np.ndarray, cfg: AdjustmentConfig):
    """Equivalent weights and the three cost flavours for a linearization."""
    bsq = (lin.b_obs ** 2).sum(axis=1)
    active = ~lin.flagged
    w = np.where(active, 1.0 / np.maximum(sigma ** 2 * bsq, _TINY), 0.0)
    u = np.sqrt(w) * lin.g
    hw = huber_weight(u, cfg.huber_c) if cfg.use_huber else np.ones_like(u)
    hw = np.where(active, hw, 0.0)
    cost = float(np.sum(w * lin.g ** 2))
    cost_robust = float(np.sum(hw * w * lin.g ** 2))
    if cfg.use_huber:
        mcost = float(np.sum(np.where(active, _huber_rho(u, cfg.huber_c), 0.0)))
    else:
        mcost = 0.5 * cost
    return w, hw, cost, cost_robust, mcost


def solve(network: NetworkParameters, obs: ObservationSet,
          corrections: np.ndarray | None = None,
          config: AdjustmentConfig | None = None) -> AdjustmentResult:
    """Run the trust-region adjustment to convergence."""
    cfg = config or AdjustmentConfig()
    net = network.copy()
    layout = ParamLayout(len(net.poses), len(net.points), len(net.brown.active))
    sigma = obs.sigma

    lin = linearize(net, obs, corrections)
    w, hw, cost, cost_robust, mcost = _costs(lin, sigma, cfg)

    radius = None  # sized from the first Gauss-Newton step
    trace: list[TraceEntry] = []
    converged = False
    quiet_iters = 0
    n_iter = 0
    scale_d = None

    for it in range(cfg.max_iterations):
        n_iter = it + 1
        w_eff = w * hw
        normal, rhs = _assemble_normals(lin, w_eff, layout)
        gmat = _datum_matrix(net, layout)

        # More scaling: trust region measured in sqrt(diag N) units; gauge
        # directions have exactly zero curvature and keep natural scale
        diag_raw = np.diag(normal)
        floor = diag_raw.max() * 1e-14
        diag = np.sqrt(np.where(diag_raw > floor, diag_raw, 1.0))
        scale_d = diag if scale_d is None else np.maximum(scale_d, diag)

        (gn,) = _kkt_solve(normal, gmat, [rhs], scale_d)

        grad = -rhs
        pred_gn = -(grad @ gn) - 0.5 * gn @ (normal @ gn)
        if pred_gn <= cfg.cost_tol * mcost + 1e-24:
            converged = True
            break
        # least-squares projection tolerates gauge columns that collapse
        # under the scaling; the step is still validated by actual decrease
        gs = gmat / scale_d[:, None]
        grad_s = grad / scale_d
        coef, *_ = scipy.linalg.lstsq(gs, grad_s, lapack_driver="gelsd")
        grad_p = grad_s - gs @ coef

        # Cauchy point along the projected steepest descent, scaled metric
        ns = (normal / scale_d[:, None]) / scale_d[None, :]
        curv = grad_p @ (ns @ grad_p)
        gp_norm2 = grad_p @ grad_p
        if curv > _TINY:
            t_c = gp_norm2 / curv
        else:
            t_c = radius / max(np.sqrt(gp_norm2), _TINY)
        cauchy_s = -t_c * grad_p
        gn_s = gn * scale_d
        if radius is None:
            # size the region so the first Gauss-Newton step is admissible
            radius_unit = max(float(np.linalg.norm(gn_s)), 1.0)
            radius = cfg.radius0 * radius_unit
            radius_max = cfg.radius_max * radius_unit
            radius_min = cfg.radius_min * radius_unit

        accepted = False
        while True:
            step_s = dogleg_step(grad_p, gn_s, cauchy_s, radius)
            step = step_s / scale_d
            pred = -(grad @ step) - 0.5 * step @ (normal @ step)
            try:
                trial = _apply_step(net, step, layout)
                lin_t = linearize(trial, obs, corrections)
                _, _, cost_t, cost_rob_t, mcost_t = _costs(lin_t, sigma, cfg)
                act = mcost - mcost_t
                in_domain = True
            except _StepDomainError:
                act, pred = -1.0, 1.0
                in_domain = False
            ratio = act / pred if pred > 0 else -1.0
            max_step = float(np.abs(step).max())
            if in_domain and max_step < cfg.step_tol and act <= cfg.cost_tol * max(mcost, 1.0):
                # the model still promises a decrease the function cannot
                # deliver (frozen-weight approximation with large residuals);
                # a sub-tolerance step with sub-tolerance yield is convergence
                converged = True
                break
            if pred > 0 and ratio > cfg.min_accept_ratio and act > 0:
                accepted = True
                if ratio < 0.25:
                    radius *= 0.25
                elif ratio > 0.75 and np.linalg.norm(step_s) >= 0.99 * radius:
                    radius = min(2.0 * radius, radius_max)
                rel_drop = act / max(mcost, _TINY)
                net = trial
                lin = lin_t
                w, hw, cost, cost_robust, mcost = _costs(lin_t, sigma, cfg)
                trace.append(TraceEntry(it, mcost, cost, cost_robust, radius, max_step, True))
                if rel_drop < cfg.cost_tol and max_step < cfg.step_tol:
                    quiet_iters += 1
                    if quiet_iters >= 2:
                        converged = True
                else:
                    quiet_iters = 0
                break
            radius *= 0.25
            trace.append(TraceEntry(it, mcost, cost, cost_robust, radius, max_step, False))
            if radius < radius_min:
                raise SolveError(
                    "no progress: trust radius collapsed below the floor",
                    trace=tuple(trace),
                )
        if converged:
            break
        if not accepted:
            break

    # final residuals: v = -Sigma_l B^T w_eff g per observation
    w_eff = w * hw
    scale_v = -(sigma ** 2) * w_eff * lin.g
    residuals = lin.b_obs * scale_v[:, None]

    n_active = int((~lin.flagged).sum())
    n_constraints = 7 if net.datum.kind == "inner" else 3 * len(net.datum.control_ids)
    n_constraints += layout.n_exp
    redundancy = n_active - layout.n_params + n_constraints
    if redundancy <= 0:
        raise SolveError(f"non-positive redundancy {redundancy}: network underdetermined")
    variance_factor = cost / redundancy

    param_sigma: dict[str, float] = {}
    if cfg.compute_covariance:
        normal, _ = _assemble_normals(lin, w_eff, layout)
        gmat = _datum_matrix(net, layout)
        names = ["c", "xp", "yp"] + list(net.brown.active)
        rhs_list = []
        for j in range(3 + layout.n_brown):
            e = np.zeros(layout.n_params)
            e[layout.iop_off + j] = 1.0
            rhs_list.append(e)
        try:
            sols = _kkt_solve(normal, gmat, rhs_list, scale_d)
            for name, j, s in zip(names, range(len(names)), sols):
                var = variance_factor * s[layout.iop_off + j]
                param_sigma[name] = float(np.sqrt(max(var, 0.0)))
        except SolveError:
            param_sigma = {}

    return AdjustmentResult(
        network=net, residuals=residuals, conditions=lin.g.copy(),
        cost=cost, cost_robust=cost_robust, mcost=mcost,
        variance_factor=variance_factor, huber_weights=hw,
        excluded=lin.flagged.copy(), redundancy=redundancy,
        trace=tuple(trace), converged=converged, n_iterations=n_iter,
        param_sigma=param_sigma,
    )


def evaluate(network: NetworkParameters, observations: ObservationSet,
             corrections: np.ndarray | None = None,
             config: AdjustmentConfig | None = None) -> AdjustmentResult:
    """Residuals and costs of a network as it stands, without adjusting it.

    Shares every convention with `solve` — robust weights, domain flags,
    residual back-substitution, redundancy — but performs zero optimization
    steps, so the returned network is the input network.
    """
    cfg = config or AdjustmentConfig()
    net = network
    obs = observations
    layout = ParamLayout(len(net.poses), len(net.points), len(net.brown.active))
    sigma = obs.sigma
    lin = linearize(net, obs, corrections)
    w, hw, cost, cost_robust, mcost = _costs(lin, sigma, cfg)
    w_eff = w * hw
    scale_v = -(sigma ** 2) * w_eff * lin.g
    residuals = lin.b_obs * scale_v[:, None]
    n_active = int((~lin.flagged).sum())
    n_constraints = 7 if net.datum.kind == "inner" else 3 * len(net.datum.control_ids)
    n_constraints += layout.n_exp
    redundancy = n_active - layout.n_params + n_constraints
    if redundancy <= 0:
        raise SolveError(f"non-positive redundancy {redundancy}: network underdetermined")
    return AdjustmentResult(
        network=net, residuals=residuals, conditions=lin.g.copy(),
        cost=cost, cost_robust=cost_robust, mcost=mcost,
        variance_factor=cost / redundancy, huber_weights=hw,
        excluded=lin.flagged.copy(), redundancy=redundancy,
        trace=(), converged=False, n_iterations=0, param_sigma={},
    )
